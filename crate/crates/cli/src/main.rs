//! Command-line front end for fitting, forecasting and planning with the
//! overfitting scaling laws.

mod args;
mod commands;
mod envelope;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sptlaw::{MixtureFraction, TokenCount};

/// Marks an analytic non-result: the command ran, but the quantity asked
/// for does not exist (no onset, no crossing, no convergence).
#[derive(Debug)]
pub struct NonResult(pub String);

impl std::fmt::Display for NonResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonResult {}

#[derive(Parser)]
#[command(name = "sptlaw", version, about = "Overfitting scaling laws for specialized pretraining")]
struct Cli {
    /// Default seed for every seeded command.
    #[arg(long, global = true, env = "SPTLAW_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Staged,
    Joint,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TokenizerArg {
    Auto,
    Ids,
    Bytes,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PlanFormat {
    Jsonl,
    Binary,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate loss curves from a known law.
    Synth {
        /// TOML file with the law coefficients and optional sweep settings.
        #[arg(long)]
        truth: String,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_parser = args::fraction, value_delimiter = ',')]
        deltas: Option<Vec<MixtureFraction>>,
        /// start:end:count, log-spaced; bare numbers are law units.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, default_value = "-")]
        out: String,
        /// Also write a report envelope describing the sweep.
        #[arg(long)]
        report: Option<String>,
    },
    /// Validate loss and finetuning logs and summarize them.
    Ingest {
        #[arg(long, default_value = "-")]
        curves: String,
        #[arg(long)]
        finetune: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Fit the overfitting law to loss curves.
    Fit {
        #[arg(long, default_value = "-")]
        curves: String,
        /// Mixture fractions to fit; all present in the log when omitted.
        #[arg(long, value_parser = args::fraction, value_delimiter = ',')]
        deltas: Option<Vec<MixtureFraction>>,
        #[arg(long, value_enum, default_value = "staged")]
        strategy: StrategyArg,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        emit_csv: Option<String>,
        #[arg(long)]
        emit_svg: Option<String>,
    },
    /// Fit the finetuning-improvement law for one mixture fraction.
    FitDelta {
        #[arg(long)]
        finetune: String,
        #[arg(long, value_parser = args::fraction)]
        delta: MixtureFraction,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Predict a test-loss trajectory for one mixture fraction.
    Forecast {
        /// Fitted law (a fit report or bare coefficients).
        #[arg(long, default_value = "-")]
        law: String,
        #[arg(long, value_parser = args::fraction)]
        delta: MixtureFraction,
        #[arg(long, default_value = "1:200:50")]
        grid: String,
        /// Improvement law for post-finetuning predictions.
        #[arg(long)]
        delta_law: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        emit_csv: Option<String>,
        #[arg(long)]
        emit_svg: Option<String>,
    },
    /// Token count where test loss stops improving.
    Onset {
        #[arg(long, default_value = "-")]
        law: String,
        #[arg(long, value_parser = args::fraction)]
        delta: MixtureFraction,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Choose the mixture fraction for a pretraining budget.
    Plan {
        #[arg(long, default_value = "-")]
        law: String,
        #[arg(long, value_parser = args::tokens)]
        budget: TokenCount,
        #[arg(long, value_parser = args::fraction, value_delimiter = ',', required = true)]
        candidates: Vec<MixtureFraction>,
        /// Improvement laws, one file per candidate.
        #[arg(long = "delta-law")]
        delta_laws: Vec<String>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Where one post-finetuning trajectory drops below another.
    Crossover {
        #[arg(long)]
        law_a: String,
        #[arg(long)]
        delta_law_a: String,
        #[arg(long)]
        law_b: String,
        #[arg(long)]
        delta_law_b: String,
        /// lo:hi; bare numbers are law units.
        #[arg(long, default_value = "1:1000")]
        range: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Epochs and an interleaving plan for a mixture.
    Mix {
        #[arg(long = "T", value_parser = args::tokens)]
        total: TokenCount,
        #[arg(long, value_parser = args::fraction)]
        delta: MixtureFraction,
        #[arg(long, value_parser = args::tokens)]
        domain_size: TokenCount,
        #[arg(long, value_parser = args::tokens)]
        scpt_start: Option<TokenCount>,
        #[arg(long, value_parser = args::tokens)]
        granularity: Option<TokenCount>,
        #[arg(long)]
        plan_out: Option<String>,
        #[arg(long, value_enum, default_value = "jsonl")]
        plan_format: PlanFormat,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Inference volume where the specialized pipeline pays off.
    Breakeven {
        /// TOML cost model; omitted fields take defaults.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        c_train: Option<f64>,
        #[arg(long)]
        c_infer: Option<f64>,
        #[arg(long, value_parser = args::tokens)]
        spt_params: Option<TokenCount>,
        #[arg(long, value_parser = args::tokens)]
        base_params: Option<TokenCount>,
        #[arg(long, value_parser = args::tokens)]
        pretrain_tokens: Option<TokenCount>,
        #[arg(long, value_parser = args::tokens)]
        ft_tokens: Option<TokenCount>,
        /// Inference grid for the cost curves, start:end:count in tokens.
        #[arg(long, default_value = "1B:10T:50")]
        grid: String,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        emit_csv: Option<String>,
        #[arg(long)]
        emit_svg: Option<String>,
    },
    /// Hashed n-gram Jensen–Shannon divergence between two corpora.
    Jsd {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = sptlaw::divergence::DEFAULT_BINS)]
        bins: u64,
        #[arg(long, value_enum, default_value = "auto")]
        tokenizer: TokenizerArg,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Classifier two-sample test on labelled embeddings.
    C2st {
        #[arg(long)]
        embeddings: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Relative gain and gap closure from measured losses.
    Gain {
        #[arg(long)]
        npt: f64,
        #[arg(long)]
        spt: f64,
        /// Loss of the larger general model, for gap closure.
        #[arg(long)]
        large_npt: Option<f64>,
        #[arg(long, default_value = "-")]
        out: String,
    },
}

fn main() -> ExitCode {
    // clap's own usage-error code is 2, which is reserved for non-results
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = if err.downcast_ref::<NonResult>().is_some() { 2 } else { 1 };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

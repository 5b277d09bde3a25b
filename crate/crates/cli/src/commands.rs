//! One adapter per subcommand: read inputs, call the library, write the
//! envelope.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sptlaw::cost::{self, CostModel, Pipeline};
use sptlaw::divergence::{self, Tokenizer};
use sptlaw::fit::{FitOptions, Strategy};
use sptlaw::forecast::{self, TokenRange};
use sptlaw::ingest::{self, LogFormat, RunDataset};
use sptlaw::mixture;
use sptlaw::synth::{generate_synthetic, SyntheticSpec};
use sptlaw::{DeltaTestLaw, MixtureFraction, OverfitLaw, RunConfig, Split, TokenCount};

use crate::envelope::{read_input, write_output, Inputs, ReportEnvelope};
use crate::svg::{line_chart, Series};
use crate::{args, Command, Format, NonResult, PlanFormat, StrategyArg, TokenizerArg};

pub fn run(command: Command, seed: Option<u64>) -> Result<()> {
    let seed_or_zero = seed.unwrap_or(0);
    match command {
        Command::Synth { truth, noise, deltas, grid, format, out, report } => {
            synth(&truth, noise, deltas, grid.as_deref(), format, &out, report.as_deref(), seed)
        }
        Command::Ingest { curves, finetune, out } => ingest_cmd(&curves, finetune.as_deref(), &out),
        Command::Fit { curves, deltas, strategy, restarts, out, emit_csv, emit_svg } => {
            fit(&curves, deltas, strategy, restarts, seed_or_zero, &out, emit_csv.as_deref(), emit_svg.as_deref())
        }
        Command::FitDelta { finetune, delta, out } => fit_delta(&finetune, delta, seed_or_zero, &out),
        Command::Forecast { law, delta, grid, delta_law, out, emit_csv, emit_svg } => {
            forecast_cmd(&law, delta, &grid, delta_law.as_deref(), &out, emit_csv.as_deref(), emit_svg.as_deref())
        }
        Command::Onset { law, delta, out } => onset(&law, delta, &out),
        Command::Plan { law, budget, candidates, delta_laws, out } => {
            plan(&law, budget, &candidates, &delta_laws, &out)
        }
        Command::Crossover { law_a, delta_law_a, law_b, delta_law_b, range, out } => {
            crossover(&law_a, &delta_law_a, &law_b, &delta_law_b, &range, &out)
        }
        Command::Mix { total, delta, domain_size, scpt_start, granularity, plan_out, plan_format, out } => mix(
            total,
            delta,
            domain_size,
            scpt_start,
            granularity,
            plan_out.as_deref(),
            plan_format,
            seed_or_zero,
            &out,
        ),
        Command::Breakeven {
            config,
            c_train,
            c_infer,
            spt_params,
            base_params,
            pretrain_tokens,
            ft_tokens,
            grid,
            out,
            emit_csv,
            emit_svg,
        } => {
            let overrides = CostOverrides { c_train, c_infer, spt_params, base_params, pretrain_tokens, ft_tokens };
            breakeven(config.as_deref(), overrides, &grid, &out, emit_csv.as_deref(), emit_svg.as_deref())
        }
        Command::Jsd { a, b, n, bins, tokenizer, out } => jsd(&a, &b, n, bins, tokenizer, seed_or_zero, &out),
        Command::C2st { embeddings, folds, out } => c2st(&embeddings, folds, seed_or_zero, &out),
        Command::Gain { npt, spt, large_npt, out } => gain(npt, spt, large_npt, &out),
    }
}

fn emit(out: &str, envelope: &ReportEnvelope) -> Result<()> {
    write_output(out, &envelope.to_bytes())
}

fn sniff_format(path: &str, bytes: &[u8]) -> LogFormat {
    if path == "-" {
        match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    } else {
        LogFormat::from_path(path)
    }
}

fn load_dataset(path: &str, inputs: &mut Inputs) -> Result<(RunDataset, Vec<String>)> {
    let bytes = read_input(path, inputs)?;
    let log = ingest::parse_loss_log(&bytes, sniff_format(path, &bytes)).with_context(|| format!("parsing {path}"))?;
    let mut warnings: Vec<String> = log.warnings.iter().map(|w| w.to_string()).collect();
    let (dataset, notes) = RunDataset::from_log(&log).with_context(|| format!("assembling runs from {path}"))?;
    warnings.extend(notes);
    Ok((dataset, warnings))
}

/// The report body of a fit, also accepted as input by downstream commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitPayload {
    law: OverfitLaw,
    report: sptlaw::FitReport,
    deltas: Vec<MixtureFraction>,
    fitted_range: Option<TokenRange>,
}

/// Accepts a report envelope, its payload, or bare coefficients.
fn unwrap_payload(bytes: &[u8], what: &str) -> Result<Value> {
    let v: Value = serde_json::from_slice(bytes).with_context(|| format!("{what} is not valid JSON"))?;
    let v = match v {
        Value::Object(mut m) if m.contains_key("payload") => m.remove("payload").unwrap_or(Value::Null),
        other => other,
    };
    Ok(match v {
        Value::Object(mut m) if m.contains_key("law") => m.remove("law").unwrap_or(Value::Null),
        other => other,
    })
}

fn load_law(path: &str, inputs: &mut Inputs) -> Result<(OverfitLaw, Option<TokenRange>)> {
    let bytes = read_input(path, inputs)?;
    let v: Value = serde_json::from_slice(&bytes).with_context(|| format!("{path} is not valid JSON"))?;
    let range = v
        .get("payload")
        .unwrap_or(&v)
        .get("fitted_range")
        .cloned()
        .and_then(|r| serde_json::from_value::<Option<TokenRange>>(r).ok())
        .flatten();
    let law: OverfitLaw = serde_json::from_value(unwrap_payload(&bytes, path)?)
        .with_context(|| format!("{path} does not hold law coefficients"))?;
    law.validate(&[]).with_context(|| format!("law in {path}"))?;
    Ok((law, range))
}

fn load_delta_law(path: &str, inputs: &mut Inputs) -> Result<DeltaTestLaw> {
    let bytes = read_input(path, inputs)?;
    let law: DeltaTestLaw = serde_json::from_value(unwrap_payload(&bytes, path)?)
        .with_context(|| format!("{path} does not hold an improvement law"))?;
    law.validate().with_context(|| format!("improvement law in {path}"))?;
    Ok(law)
}

#[allow(clippy::too_many_arguments)]
fn synth(
    truth: &str,
    noise: Option<f64>,
    deltas: Option<Vec<MixtureFraction>>,
    grid: Option<&str>,
    format: Format,
    out: &str,
    report: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let text = read_input(truth, &mut inputs)?;
    let text = std::str::from_utf8(&text).with_context(|| format!("{truth} is not UTF-8"))?;
    let mut spec: SyntheticSpec = toml::from_str(text).with_context(|| format!("parsing {truth}"))?;
    if let Some(n) = noise {
        spec.noise_sigma = n;
    }
    if let Some(d) = deltas {
        spec.deltas = d;
    }
    if let Some(g) = grid {
        spec.token_grid = args::grid(g, spec.truth.token_unit)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let dataset = generate_synthetic(&spec)?;
    let run_deltas: BTreeMap<String, MixtureFraction> =
        dataset.runs.iter().map(|(k, r)| (k.clone(), r.delta)).collect();
    let fmt = match format {
        Format::Csv => LogFormat::Csv,
        Format::Jsonl => LogFormat::Jsonl,
    };
    let log = ingest::write_loss_log(&dataset.curves, &run_deltas, fmt)?;
    write_output(out, log.as_bytes())?;
    if let Some(path) = report {
        #[derive(Serialize)]
        struct SynthPayload<'a> {
            spec: &'a SyntheticSpec,
            runs: usize,
            points_per_curve: usize,
        }
        let payload = SynthPayload { spec: &spec, runs: dataset.runs.len(), points_per_curve: spec.grid().len() };
        emit(path, &ReportEnvelope::new("synth", &inputs, Some(spec.seed), &payload, Vec::new())?)?;
    }
    Ok(())
}

fn ingest_cmd(curves: &str, finetune: Option<&str>, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let (dataset, mut warnings) = load_dataset(curves, &mut inputs)?;

    #[derive(Serialize)]
    struct RunSummary {
        run_id: String,
        delta: MixtureFraction,
        train_points: usize,
        test_points: usize,
        gap_points: usize,
        negative_gaps: usize,
    }
    #[derive(Serialize)]
    struct FinetuneSummary {
        outcomes: usize,
        improvements: Vec<(String, MixtureFraction, ingest::DeltaTestPoint)>,
    }
    #[derive(Serialize)]
    struct IngestPayload {
        deltas: Vec<MixtureFraction>,
        runs: Vec<RunSummary>,
        finetune: Option<FinetuneSummary>,
    }
    let runs = dataset
        .runs
        .values()
        .map(|r| {
            let len = |s: Split| dataset.curve(&r.run_id, s).map_or(0, |c| c.len());
            let gap = dataset.gap(&r.run_id);
            RunSummary {
                run_id: r.run_id.clone(),
                delta: r.delta,
                train_points: len(Split::DomainTrain),
                test_points: len(Split::DomainTest),
                gap_points: gap.map_or(0, |g| g.points.len()),
                negative_gaps: gap.map_or(0, |g| g.negative_count()),
            }
        })
        .collect();
    let finetune = match finetune {
        Some(path) => {
            let bytes = read_input(path, &mut inputs)?;
            let log = ingest::parse_finetune_log(&bytes, sniff_format(path, &bytes))
                .with_context(|| format!("parsing {path}"))?;
            warnings.extend(log.warnings.iter().map(|w| w.to_string()));
            let points = ingest::compute_delta_test_points(&log.outcomes)?;
            let improvements = log
                .outcomes
                .iter()
                .zip(points)
                .map(|(o, p)| (o.run_id.clone(), log.run_deltas[&o.run_id], p))
                .collect();
            Some(FinetuneSummary { outcomes: log.outcomes.len(), improvements })
        }
        None => None,
    };
    let payload = IngestPayload { deltas: dataset.deltas(), runs, finetune };
    emit(out, &ReportEnvelope::new("ingest", &inputs, None, &payload, warnings)?)
}

fn fitted_range(dataset: &RunDataset, deltas: &[MixtureFraction]) -> Option<TokenRange> {
    let spans: Vec<(TokenCount, TokenCount)> = dataset
        .curves
        .iter()
        .filter(|c| dataset.runs.get(&c.run_id).is_some_and(|r| deltas.contains(&r.delta)))
        .filter_map(|c| c.token_range())
        .collect();
    let lo = spans.iter().map(|s| s.0).min()?;
    let hi = spans.iter().map(|s| s.1).max()?;
    TokenRange::new(lo, hi).ok()
}

#[allow(clippy::too_many_arguments)]
fn fit(
    curves: &str,
    deltas: Option<Vec<MixtureFraction>>,
    strategy: StrategyArg,
    restarts: Option<usize>,
    seed: u64,
    out: &str,
    emit_csv: Option<&str>,
    emit_svg: Option<&str>,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let (dataset, mut warnings) = load_dataset(curves, &mut inputs)?;
    let deltas = deltas.unwrap_or_else(|| dataset.deltas());
    let mut options = FitOptions {
        seed,
        strategy: match strategy {
            StrategyArg::Staged => Strategy::Staged,
            StrategyArg::Joint => Strategy::Joint,
        },
        ..FitOptions::default()
    };
    if let Some(r) = restarts {
        options.restarts = r;
    }
    let (law, report) = sptlaw::fit_overfitting_law(&dataset, &deltas, &options)?;
    warnings.extend(report.warnings.iter().cloned());
    let converged = report.converged;
    let mut sorted = deltas.clone();
    sorted.sort_by(|a, b| a.value().total_cmp(&b.value()));
    sorted.dedup();
    let payload = FitPayload { law, report, fitted_range: fitted_range(&dataset, &sorted), deltas: sorted.clone() };

    if emit_csv.is_some() || emit_svg.is_some() {
        let mut csv = String::from("delta,tokens,observed_train,fitted_train,observed_test,fitted_test\n");
        let mut series = Vec::new();
        for &d in &sorted {
            for run in dataset.runs_with_delta(d) {
                let (Some(tr), Some(te)) =
                    (dataset.curve(&run.run_id, Split::DomainTrain), dataset.curve(&run.run_id, Split::DomainTest))
                else {
                    continue;
                };
                let test_at: BTreeMap<TokenCount, f64> = te.points().iter().map(|p| (p.tokens, p.loss)).collect();
                let mut fitted_pts = Vec::new();
                for p in tr.points() {
                    let ft = law.train_loss(p.tokens, d)?;
                    let fe = law.test_loss(p.tokens, d)?;
                    let obs = test_at.get(&p.tokens).map_or(String::new(), |v| v.to_string());
                    csv.push_str(&format!("{d},{},{},{ft},{obs},{fe}\n", p.tokens.get(), p.loss));
                    fitted_pts.push((p.tokens.as_f64(), fe));
                }
                series.push(Series {
                    name: format!("observed test δ={d}"),
                    points: te.points().iter().map(|p| (p.tokens.as_f64(), p.loss)).collect(),
                });
                series.push(Series { name: format!("fitted test δ={d}"), points: fitted_pts });
            }
        }
        if let Some(path) = emit_csv {
            write_output(path, csv.as_bytes())?;
        }
        if let Some(path) = emit_svg {
            let svg = line_chart("Domain test loss: observed and fitted", "loss", &series, None);
            write_output(path, svg.as_bytes())?;
        }
    }
    emit(out, &ReportEnvelope::new("fit", &inputs, Some(seed), &payload, warnings)?)?;
    if !converged {
        return Err(NonResult("fit did not converge; report written".into()).into());
    }
    Ok(())
}

fn fit_delta(finetune: &str, delta: MixtureFraction, seed: u64, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let bytes = read_input(finetune, &mut inputs)?;
    let log = ingest::parse_finetune_log(&bytes, sniff_format(finetune, &bytes))
        .with_context(|| format!("parsing {finetune}"))?;
    let mut warnings: Vec<String> = log.warnings.iter().map(|w| w.to_string()).collect();
    let outcomes: Vec<ingest::FinetuneOutcome> =
        log.outcomes.iter().filter(|o| log.run_deltas.get(&o.run_id) == Some(&delta)).cloned().collect();
    if outcomes.is_empty() {
        bail!("no finetuning outcomes for delta {delta} in {finetune}");
    }
    let points = ingest::compute_delta_test_points(&outcomes)?;
    let options = FitOptions { seed, ..FitOptions::default() };
    let (law, report) = sptlaw::fit_delta_test_law(&points, delta, &options)?;
    warnings.extend(report.warnings.iter().cloned());
    let converged = report.converged;

    #[derive(Serialize)]
    struct DeltaFitPayload {
        law: DeltaTestLaw,
        report: sptlaw::FitReport,
    }
    emit(out, &ReportEnvelope::new("fit-delta", &inputs, Some(seed), &DeltaFitPayload { law, report }, warnings)?)?;
    if !converged {
        return Err(NonResult("improvement fit did not converge; report written".into()).into());
    }
    Ok(())
}

fn forecast_cmd(
    law_path: &str,
    delta: MixtureFraction,
    grid: &str,
    delta_law: Option<&str>,
    out: &str,
    emit_csv: Option<&str>,
    emit_svg: Option<&str>,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let (law, range) = load_law(law_path, &mut inputs)?;
    let grid = args::grid(grid, law.token_unit)?;
    let points = match delta_law {
        Some(path) => {
            let dt = load_delta_law(path, &mut inputs)?;
            if dt.delta != delta {
                bail!("improvement law is for delta {}, not {delta}", dt.delta);
            }
            forecast::predict_curve_post_ft(&law, &dt, &grid, range)?
        }
        None => forecast::predict_curve(&law, delta, &grid, range)?,
    };
    let mut warnings = Vec::new();
    if let Some(first) = points.iter().find(|p| p.extrapolated) {
        warnings.push(format!("prediction extrapolates beyond the fitted token range from {}", first.tokens));
    }

    #[derive(Serialize)]
    struct ForecastPayload {
        delta: MixtureFraction,
        onset_tokens: Option<TokenCount>,
        fitted_range: Option<TokenRange>,
        points: Vec<forecast::ForecastPoint>,
    }
    let payload =
        ForecastPayload { delta, onset_tokens: forecast::overfit_onset(&law, delta), fitted_range: range, points };

    if let Some(path) = emit_csv {
        let mut csv = String::from("tokens,pt_test_loss,delta_test,post_ft_loss,extrapolated\n");
        for p in &payload.points {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                p.tokens.get(),
                p.predicted_pt_test_loss,
                opt(p.predicted_delta_test),
                opt(p.predicted_post_ft_loss),
                p.extrapolated
            ));
        }
        write_output(path, csv.as_bytes())?;
    }
    if let Some(path) = emit_svg {
        let mut series = vec![Series {
            name: format!("test δ={delta}"),
            points: payload.points.iter().map(|p| (p.tokens.as_f64(), p.predicted_pt_test_loss)).collect(),
        }];
        if payload.points.iter().any(|p| p.predicted_post_ft_loss.is_some()) {
            series.push(Series {
                name: format!("post-finetune δ={delta}"),
                points: payload
                    .points
                    .iter()
                    .filter_map(|p| Some((p.tokens.as_f64(), p.predicted_post_ft_loss?)))
                    .collect(),
            });
        }
        let svg = line_chart("Forecast domain loss", "loss", &series, range.map(|r| r.hi.as_f64()));
        write_output(path, svg.as_bytes())?;
    }
    emit(out, &ReportEnvelope::new("forecast", &inputs, None, &payload, warnings)?)
}

fn onset(law_path: &str, delta: MixtureFraction, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let (law, _) = load_law(law_path, &mut inputs)?;
    #[derive(Serialize)]
    struct OnsetPayload {
        delta: MixtureFraction,
        onset_tokens: Option<TokenCount>,
        onset_units: Option<f64>,
    }
    let payload = OnsetPayload {
        delta,
        onset_tokens: forecast::overfit_onset(&law, delta),
        onset_units: forecast::overfit_onset_units(&law, delta),
    };
    emit(out, &ReportEnvelope::new("onset", &inputs, None, &payload, Vec::new())?)?;
    if payload.onset_tokens.is_none() {
        return Err(NonResult(format!("test loss never turns upward at delta {delta}")).into());
    }
    Ok(())
}

fn plan(
    law_path: &str,
    budget: TokenCount,
    candidates: &[MixtureFraction],
    delta_laws: &[String],
    out: &str,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let (law, _) = load_law(law_path, &mut inputs)?;
    let dts = delta_laws.iter().map(|p| load_delta_law(p, &mut inputs)).collect::<Result<Vec<_>>>()?;
    let plan = forecast::optimal_delta(&law, &dts, budget, candidates)?;
    let warnings = plan
        .candidates
        .iter()
        .filter(|c| c.degraded)
        .map(|c| format!("no improvement law for delta {}; ranked on pretraining loss", c.delta))
        .collect();
    emit(out, &ReportEnvelope::new("plan", &inputs, None, &plan, warnings)?)
}

fn crossover(law_a: &str, dl_a: &str, law_b: &str, dl_b: &str, range: &str, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let (pa, _) = load_law(law_a, &mut inputs)?;
    let da = load_delta_law(dl_a, &mut inputs)?;
    let (pb, _) = load_law(law_b, &mut inputs)?;
    let db = load_delta_law(dl_b, &mut inputs)?;
    let (lo, hi) = args::range(range, pa.token_unit)?;
    let result = forecast::crossover((&pa, &da), (&pb, &db), TokenRange::new(lo, hi)?)?;
    emit(out, &ReportEnvelope::new("crossover", &inputs, None, &result, Vec::new())?)?;
    if result.tokens.is_none() {
        return Err(NonResult(format!("no crossing in range; dominance {:?}", result.dominance)).into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn mix(
    total: TokenCount,
    delta: MixtureFraction,
    domain_size: TokenCount,
    scpt_start: Option<TokenCount>,
    granularity: Option<TokenCount>,
    plan_out: Option<&str>,
    plan_format: PlanFormat,
    seed: u64,
    out: &str,
) -> Result<()> {
    let config = RunConfig {
        run_id: "mix".into(),
        delta,
        domain_dataset_tokens: Some(domain_size),
        pretrain_budget_tokens: total,
        model_params: None,
        scpt_start_tokens: scpt_start,
    };
    let mixed_tokens = TokenCount(total.get() - config.scpt_start().get().min(total.get()));
    let exact = mixture::epochs_exact(mixed_tokens, delta, domain_size)?;
    let schedule = mixture::build_schedule(&config, granularity.unwrap_or(mixture::DEFAULT_GRANULARITY), seed)?;
    if let Some(path) = plan_out {
        let bytes = match plan_format {
            PlanFormat::Jsonl => mixture::schedule_to_jsonl(&schedule).into_bytes(),
            PlanFormat::Binary => mixture::schedule_to_binary(&schedule),
        };
        write_output(path, &bytes)?;
    }

    #[derive(Serialize)]
    struct MixPayload {
        epochs: f64,
        epochs_exact: String,
        granularity: TokenCount,
        segments: usize,
        epoch_boundaries: usize,
        summary: mixture::ScheduleSummary,
    }
    let payload = MixPayload {
        epochs: sptlaw::units::rational_to_f64(&exact),
        epochs_exact: exact.to_string(),
        granularity: schedule.granularity,
        segments: schedule.segments.len(),
        epoch_boundaries: schedule.epoch_boundaries.len(),
        summary: mixture::schedule_summary(&schedule),
    };
    emit(out, &ReportEnvelope::new("mix", &Inputs::default(), Some(seed), &payload, Vec::new())?)
}

struct CostOverrides {
    c_train: Option<f64>,
    c_infer: Option<f64>,
    spt_params: Option<TokenCount>,
    base_params: Option<TokenCount>,
    pretrain_tokens: Option<TokenCount>,
    ft_tokens: Option<TokenCount>,
}

fn breakeven(
    config: Option<&str>,
    o: CostOverrides,
    grid: &str,
    out: &str,
    emit_csv: Option<&str>,
    emit_svg: Option<&str>,
) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut model = match config {
        Some(path) => {
            let bytes = read_input(path, &mut inputs)?;
            let text = std::str::from_utf8(&bytes).with_context(|| format!("{path} is not UTF-8"))?;
            toml::from_str::<CostModel>(text).with_context(|| format!("parsing {path}"))?
        }
        None => CostModel::default(),
    };
    if let Some(v) = o.c_train {
        model.train_flops_per_param_token = v;
    }
    if let Some(v) = o.c_infer {
        model.infer_flops_per_param_token = v;
    }
    if let Some(v) = o.spt_params {
        model.spt_params = v.get();
    }
    if let Some(v) = o.base_params {
        model.base_params = v.get();
    }
    if let Some(v) = o.pretrain_tokens {
        model.spt_pretrain_tokens = v;
    }
    if let Some(v) = o.ft_tokens {
        model.spt_ft_tokens = v;
        model.base_ft_tokens = v;
    }
    model.validate()?;
    let grid = args::grid(grid, TokenCount(1))?;
    let curves = cost::cumulative_cost_curve(&model, &grid)?;

    #[derive(Serialize)]
    struct BreakevenPayload {
        model: CostModel,
        spt_train_flops: f64,
        baseline_train_flops: f64,
        break_even_tokens: Option<f64>,
    }
    let payload = BreakevenPayload {
        spt_train_flops: cost::pipeline_train_flops(&model, Pipeline::Spt),
        baseline_train_flops: cost::pipeline_train_flops(&model, Pipeline::Baseline),
        break_even_tokens: cost::break_even_tokens_f64(&model),
        model,
    };
    if let Some(path) = emit_csv {
        let mut csv = String::from("inference_tokens,spt_flops,baseline_flops\n");
        for (s, b) in curves.spt.iter().zip(&curves.baseline) {
            csv.push_str(&format!("{},{},{}\n", s.inference_tokens.get(), s.flops, b.flops));
        }
        write_output(path, csv.as_bytes())?;
    }
    if let Some(path) = emit_svg {
        let series = [
            Series {
                name: "specialized".into(),
                points: curves.spt.iter().map(|p| (p.inference_tokens.as_f64(), p.flops)).collect(),
            },
            Series {
                name: "baseline".into(),
                points: curves.baseline.iter().map(|p| (p.inference_tokens.as_f64(), p.flops)).collect(),
            },
        ];
        let svg = line_chart("Cumulative compute", "FLOPs", &series, payload.break_even_tokens);
        write_output(path, svg.as_bytes())?;
    }
    let none = payload.break_even_tokens.is_none();
    emit(out, &ReportEnvelope::new("breakeven", &inputs, None, &payload, Vec::new())?)?;
    if none {
        return Err(NonResult("the specialized model is not smaller than the baseline; no break-even".into()).into());
    }
    Ok(())
}

fn read_tokens(path: &str, choice: TokenizerArg, inputs: &mut Inputs) -> Result<(Vec<u64>, Tokenizer)> {
    let bytes = read_input(path, inputs)?;
    Ok(match choice {
        TokenizerArg::Auto => divergence::tokenize_auto(&bytes),
        TokenizerArg::Bytes => (divergence::byte_tokens(&bytes), Tokenizer::Bytes),
        TokenizerArg::Ids => {
            let text = std::str::from_utf8(&bytes).with_context(|| format!("{path} is not UTF-8"))?;
            (
                divergence::tokenize(text, Tokenizer::WhitespaceIds).with_context(|| format!("tokenizing {path}"))?,
                Tokenizer::WhitespaceIds,
            )
        }
    })
}

fn jsd(a: &str, b: &str, n: usize, bins: u64, tokenizer: TokenizerArg, seed: u64, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let (ta, ka) = read_tokens(a, tokenizer, &mut inputs)?;
    let (tb, kb) = read_tokens(b, tokenizer, &mut inputs)?;
    let mut warnings = Vec::new();
    if ka != kb {
        warnings.push(format!("inputs tokenized differently: {ka:?} vs {kb:?}"));
    }
    let pa = divergence::profile(&ta, n, bins, seed)?;
    let pb = divergence::profile(&tb, n, bins, seed)?;
    let value = divergence::jsd(&pa, &pb).map_err(|e| anyhow!("{e} (need at least {n} tokens per input)"))?;

    #[derive(Serialize)]
    struct JsdPayload {
        jsd_bits: f64,
        n: usize,
        bins: u64,
        hash_seed: u64,
        tokenizer_a: Tokenizer,
        tokenizer_b: Tokenizer,
        byte_tokenizer_version: u32,
        ngrams_a: u64,
        ngrams_b: u64,
    }
    let payload = JsdPayload {
        jsd_bits: value,
        n,
        bins,
        hash_seed: seed,
        tokenizer_a: ka,
        tokenizer_b: kb,
        byte_tokenizer_version: divergence::BYTE_TOKENIZER_VERSION,
        ngrams_a: pa.total(),
        ngrams_b: pb.total(),
    };
    emit(out, &ReportEnvelope::new("jsd", &inputs, Some(seed), &payload, warnings)?)
}

fn c2st(path: &str, folds: usize, seed: u64, out: &str) -> Result<()> {
    let mut inputs = Inputs::default();
    let bytes = read_input(path, &mut inputs)?;
    let (a, b) = divergence::read_embeddings_csv(bytes.as_slice()).with_context(|| format!("reading {path}"))?;
    let auc = divergence::c2st_auc(&a, &b, folds, seed)?;
    #[derive(Serialize)]
    struct C2stPayload {
        auc: f64,
        folds: usize,
        n_a: usize,
        n_b: usize,
        dim: usize,
    }
    let payload = C2stPayload { auc, folds, n_a: a.len(), n_b: b.len(), dim: a.dim() };
    emit(out, &ReportEnvelope::new("c2st", &inputs, Some(seed), &payload, Vec::new())?)
}

fn gain(npt: f64, spt: f64, large_npt: Option<f64>, out: &str) -> Result<()> {
    #[derive(Serialize)]
    struct GainPayload {
        relative_gain_percent: f64,
        gap_closure_percent: Option<f64>,
    }
    let payload = GainPayload {
        relative_gain_percent: forecast::relative_gain(npt, spt)?,
        gap_closure_percent: large_npt.map(|l| forecast::gap_closure(npt, spt, l)).transpose()?,
    };
    emit(out, &ReportEnvelope::new("gain", &Inputs::default(), None, &payload, Vec::new())?)
}

//! Synthetic loss curves drawn from a known law, used as a ground-truth
//! oracle for the fitter.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curve::{LossCurve, LossPoint, RunConfig, Split};
use crate::error::{Error, Result};
use crate::ingest::RunDataset;
use crate::law::OverfitLawParams;
use crate::units::{MixtureFraction, TokenCount};

/// Mixture fractions of the standard pilot sweep.
pub const STANDARD_DELTAS: [f64; 5] = [0.0, 0.001, 0.01, 0.02, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub truth: OverfitLawParams<f64>,
    #[serde(default = "standard_deltas")]
    pub deltas: Vec<MixtureFraction>,
    /// Empty means the standard 20-point grid over 1–200 token units.
    #[serde(default)]
    pub token_grid: Vec<TokenCount>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn standard_deltas() -> Vec<MixtureFraction> {
    STANDARD_DELTAS.iter().map(|&d| MixtureFraction::new(d).expect("valid fraction")).collect()
}

impl SyntheticSpec {
    /// The standard sweep: five mixture fractions, 20 log-spaced points over
    /// 1–200 token units.
    pub fn standard(truth: OverfitLawParams<f64>, noise_sigma: f64, seed: u64) -> Self {
        let token_grid = log_token_grid(1.0, 200.0, 20, truth.token_unit);
        SyntheticSpec { truth, deltas: standard_deltas(), token_grid, noise_sigma, seed }
    }

    pub fn grid(&self) -> Vec<TokenCount> {
        if self.token_grid.is_empty() {
            log_token_grid(1.0, 200.0, 20, self.truth.token_unit)
        } else {
            self.token_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid();
        if grid.first().is_some_and(|t| t.get() == 0) {
            return Err(Error::InvalidConfig("token grid must be positive".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("token grid must be strictly increasing".into()));
        }
        for (i, d) in self.deltas.iter().enumerate() {
            if self.deltas[..i].contains(d) {
                return Err(Error::InvalidConfig(format!("delta {d} listed twice")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be nonnegative".into()));
        }
        self.truth.validate(&[])
    }
}

/// `n` log-spaced token counts from `lo` to `hi` units, rounded to whole
/// tokens.
pub fn log_token_grid(lo_units: f64, hi_units: f64, n: usize, unit: TokenCount) -> Vec<TokenCount> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![TokenCount((lo_units * unit.as_f64()).round() as u64)];
    }
    let (l, h) = (lo_units.ln(), hi_units.ln());
    let mut out: Vec<TokenCount> = (0..n)
        .map(|i| {
            let u = (l + (h - l) * i as f64 / (n - 1) as f64).exp();
            TokenCount((u * unit.as_f64()).round() as u64)
        })
        .collect();
    out.dedup();
    out
}

/// Run identifier used for the synthetic run at mixture fraction `delta`.
pub fn synthetic_run_id(delta: MixtureFraction) -> String {
    format!("spt-{delta}")
}

/// Draws train and test curves from the truth, each point scaled by an
/// independent `exp(ε)`, `ε ~ N(0, σ²)`. Deterministic under the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RunDataset> {
    spec.validate()?;
    let grid = spec.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    let budget = *grid.last().expect("validated grid is nonempty");
    let mut runs = BTreeMap::new();
    let mut curves = Vec::new();
    for &delta in &spec.deltas {
        let run_id = synthetic_run_id(delta);
        let mut train = Vec::with_capacity(grid.len());
        let mut test = Vec::with_capacity(grid.len());
        for &tokens in &grid {
            let tr = spec.truth.train_loss(tokens, delta)?;
            let te = spec.truth.test_loss(tokens, delta)?;
            let (e1, e2) =
                if spec.noise_sigma > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            train.push(LossPoint { tokens, loss: tr * e1.exp() });
            test.push(LossPoint { tokens, loss: te * e2.exp() });
        }
        curves.push(LossCurve::new(run_id.clone(), Split::DomainTrain, train)?);
        curves.push(LossCurve::new(run_id.clone(), Split::DomainTest, test)?);
        runs.insert(
            run_id.clone(),
            RunConfig {
                run_id,
                delta,
                domain_dataset_tokens: None,
                pretrain_budget_tokens: budget,
                model_params: None,
                scpt_start_tokens: None,
            },
        );
    }
    Ok(RunDataset::assemble(runs, curves)?.0)
}

//! Planning outputs derived from fitted laws: trajectories, overfit onset,
//! post-finetuning predictions, crossovers, budget-optimal mixtures, and the
//! comparison metrics used to report gains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{DeltaTestLawParams, Exponent, OverfitLawParams};
use crate::scalar::Scalar;
use crate::units::{MixtureFraction, TokenCount};

/// Inclusive token interval, e.g. the span a law was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRange {
    pub lo: TokenCount,
    pub hi: TokenCount,
}

impl TokenRange {
    pub fn new(lo: TokenCount, hi: TokenCount) -> Result<Self> {
        if lo.get() == 0 || hi < lo {
            return Err(Error::Domain(format!("invalid token range [{lo}, {hi}]")));
        }
        Ok(TokenRange { lo, hi })
    }

    pub fn contains(&self, t: TokenCount) -> bool {
        self.lo <= t && t <= self.hi
    }
}

fn outside(range: Option<TokenRange>, t: TokenCount) -> bool {
    range.is_some_and(|r| !r.contains(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub delta: MixtureFraction,
    pub tokens: TokenCount,
    pub predicted_pt_test_loss: f64,
    pub predicted_delta_test: Option<f64>,
    pub predicted_post_ft_loss: Option<f64>,
    /// The query lies outside the fitted token range.
    pub extrapolated: bool,
}

fn check_grid(grid: &[TokenCount]) -> Result<()> {
    if grid.first().is_some_and(|t| t.get() == 0) {
        return Err(Error::Domain("grid token counts must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Pretraining test-loss trajectory at each grid point.
pub fn predict_curve(
    params: &OverfitLawParams<f64>,
    delta: MixtureFraction,
    grid: &[TokenCount],
    fitted: Option<TokenRange>,
) -> Result<Vec<ForecastPoint>> {
    check_grid(grid)?;
    grid.iter()
        .map(|&tokens| {
            Ok(ForecastPoint {
                delta,
                tokens,
                predicted_pt_test_loss: params.test_loss(tokens, delta)?,
                predicted_delta_test: None,
                predicted_post_ft_loss: None,
                extrapolated: outside(fitted, tokens),
            })
        })
        .collect()
}

/// Like [`predict_curve`] but also applies a finetuning-improvement law.
pub fn predict_curve_post_ft(
    params: &OverfitLawParams<f64>,
    dt: &DeltaTestLawParams<f64>,
    grid: &[TokenCount],
    fitted: Option<TokenRange>,
) -> Result<Vec<ForecastPoint>> {
    check_grid(grid)?;
    grid.iter()
        .map(|&tokens| {
            let p = predict_post_ft(params, dt, tokens, fitted)?;
            Ok(ForecastPoint {
                delta: dt.delta,
                tokens,
                predicted_pt_test_loss: p.pt_test_loss,
                predicted_delta_test: Some(p.delta_test),
                predicted_post_ft_loss: Some(p.post_ft_loss),
                extrapolated: p.extrapolated,
            })
        })
        .collect()
}

/// Token position, in law units, where modeled test loss is minimal.
///
/// Exists only when the gap both has positive amplitude and grows.
pub fn overfit_onset_units<S: Scalar>(params: &OverfitLawParams<S>, delta: MixtureFraction) -> Option<S> {
    let a_gap = params.a_gap(delta);
    let b_gap = params.exponent(delta, Exponent::Gap);
    let b_train = params.exponent(delta, Exponent::Train);
    if !(a_gap > S::zero() && b_gap > S::zero()) {
        return None;
    }
    let ratio = -(params.a_train * b_train) / (a_gap * b_gap);
    let units = ratio.powf(S::one() / (b_gap - b_train));
    (units.is_finite() && units > S::zero()).then_some(units)
}

pub fn overfit_onset<S: Scalar>(params: &OverfitLawParams<S>, delta: MixtureFraction) -> Option<TokenCount> {
    let units = overfit_onset_units(params, delta)?.to_f64()?;
    TokenCount::from_units(units, params.token_unit).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostFtPrediction {
    pub pt_test_loss: f64,
    pub delta_test: f64,
    pub post_ft_loss: f64,
    /// The improvement law went negative and was clamped to zero.
    pub clamped: bool,
    pub extrapolated: bool,
}

/// Pretraining test loss minus the predicted finetuning improvement.
pub fn predict_post_ft(
    params: &OverfitLawParams<f64>,
    dt: &DeltaTestLawParams<f64>,
    tokens: TokenCount,
    fitted: Option<TokenRange>,
) -> Result<PostFtPrediction> {
    let units = params.units(tokens)?;
    predict_post_ft_at(params, dt, units).map(|p| PostFtPrediction { extrapolated: outside(fitted, tokens), ..p })
}

fn predict_post_ft_at(
    params: &OverfitLawParams<f64>,
    dt: &DeltaTestLawParams<f64>,
    units: f64,
) -> Result<PostFtPrediction> {
    let pt = params.test_loss_at(units, dt.delta)?;
    let dt_units = units * params.token_unit.as_f64() / dt.token_unit.as_f64();
    let improvement = dt.eval_at(dt_units)?;
    Ok(PostFtPrediction {
        pt_test_loss: pt,
        delta_test: improvement.value,
        post_ft_loss: pt - improvement.value,
        clamped: improvement.clamped,
        extrapolated: false,
    })
}

/// How two post-finetuning trajectories relate over a search range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    /// A is strictly below B at every scanned point.
    ABelow,
    /// B is at or below A at every scanned point.
    BBelow,
    /// Identical at every scanned point.
    Tied,
    /// The ordering changes inside the range.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Where A first drops strictly below B, in raw tokens.
    pub tokens: Option<f64>,
    pub dominance: Dominance,
}

const CROSSOVER_SCAN: usize = 2048;

/// Scans `range` for the first point where A's post-finetuning loss drops
/// strictly below B's, then bisects (in log tokens) to relative 1e−12.
pub fn crossover(
    a: (&OverfitLawParams<f64>, &DeltaTestLawParams<f64>),
    b: (&OverfitLawParams<f64>, &DeltaTestLawParams<f64>),
    range: TokenRange,
) -> Result<Crossover> {
    let diff = |t: f64| -> Result<f64> {
        let pa = predict_post_ft_at(a.0, a.1, t / a.0.token_unit.as_f64())?;
        let pb = predict_post_ft_at(b.0, b.1, t / b.0.token_unit.as_f64())?;
        Ok(pa.post_ft_loss - pb.post_ft_loss)
    };
    let (lo, hi) = (range.lo.as_f64().ln(), range.hi.as_f64().ln());
    let n = if range.lo == range.hi { 1 } else { CROSSOVER_SCAN };
    let ts: Vec<f64> =
        (0..n).map(|i| if n == 1 { lo.exp() } else { (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp() }).collect();
    let ds = ts.iter().map(|&t| diff(t)).collect::<Result<Vec<f64>>>()?;

    let dominance = if ds.iter().all(|&d| d == 0.0) {
        Dominance::Tied
    } else if ds.iter().all(|&d| d < 0.0) {
        Dominance::ABelow
    } else if ds.iter().all(|&d| d >= 0.0) {
        Dominance::BBelow
    } else {
        Dominance::Mixed
    };

    let Some(i) = (0..ds.len().saturating_sub(1)).find(|&i| ds[i] >= 0.0 && ds[i + 1] < 0.0) else {
        return Ok(Crossover { tokens: None, dominance });
    };
    let (mut l, mut h) = (ts[i].ln(), ts[i + 1].ln());
    while (h - l) > 1e-12 {
        let mid = 0.5 * (l + h);
        if diff(mid.exp())? >= 0.0 {
            l = mid;
        } else {
            h = mid;
        }
    }
    Ok(Crossover { tokens: Some((0.5 * (l + h)).exp()), dominance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrediction {
    pub delta: MixtureFraction,
    pub predicted_loss: f64,
    pub pt_test_loss: f64,
    pub onset_tokens: Option<TokenCount>,
    /// No improvement law was available; the pretraining prediction was used.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub budget_tokens: TokenCount,
    pub candidate_deltas: Vec<MixtureFraction>,
    pub chosen_delta: MixtureFraction,
    pub predicted_loss: f64,
    pub candidates: Vec<CandidatePrediction>,
}

impl MixturePlan {
    pub fn onset_tokens(&self) -> BTreeMap<String, Option<TokenCount>> {
        self.candidates.iter().map(|c| (c.delta.to_string(), c.onset_tokens)).collect()
    }
}

/// Picks the candidate δ with the lowest predicted post-finetuning loss at
/// the budget; ties go to the smaller δ.
pub fn optimal_delta(
    params: &OverfitLawParams<f64>,
    dt_laws: &[DeltaTestLawParams<f64>],
    budget: TokenCount,
    candidates: &[MixtureFraction],
) -> Result<MixturePlan> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate mixture fractions".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.value().total_cmp(&b.value()));
    sorted.dedup();

    let mut preds = Vec::with_capacity(sorted.len());
    for &delta in &sorted {
        let pt = params.test_loss(budget, delta)?;
        let (predicted_loss, degraded) = match dt_laws.iter().find(|d| d.delta == delta) {
            Some(dt) => (predict_post_ft(params, dt, budget, None)?.post_ft_loss, false),
            None => (pt, true),
        };
        preds.push(CandidatePrediction {
            delta,
            predicted_loss,
            pt_test_loss: pt,
            onset_tokens: overfit_onset(params, delta),
            degraded,
        });
    }
    let mut best = 0;
    for (i, p) in preds.iter().enumerate() {
        if p.predicted_loss < preds[best].predicted_loss {
            best = i;
        }
    }
    Ok(MixturePlan {
        budget_tokens: budget,
        candidate_deltas: sorted,
        chosen_delta: preds[best].delta,
        predicted_loss: preds[best].predicted_loss,
        candidates: preds,
    })
}

/// Percent reduction of `loss_spt` relative to `loss_npt`.
pub fn relative_gain(loss_npt: f64, loss_spt: f64) -> Result<f64> {
    if !(loss_npt > 0.0 && loss_npt.is_finite()) {
        return Err(Error::Domain(format!("baseline loss {loss_npt} must be positive")));
    }
    Ok(100.0 * (loss_npt - loss_spt) / loss_npt)
}

/// Percent of the small-vs-large model gap closed by specialized
/// pretraining of the small model. Above 100 means the small model wins.
pub fn gap_closure(l_small_npt: f64, l_small_spt: f64, l_large_npt: f64) -> Result<f64> {
    if !(l_small_npt > l_large_npt) {
        return Err(Error::DegenerateGap { small: l_small_npt, large: l_large_npt });
    }
    Ok(100.0 * (l_small_npt - l_small_spt) / (l_small_npt - l_large_npt))
}

/// First token count where a piecewise log-linear curve reaches `target`.
fn first_reach(curve: &[(TokenCount, f64)], target: f64) -> Option<f64> {
    let first = curve.first()?;
    if first.1 <= target {
        return Some(first.0.as_f64());
    }
    for w in curve.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if y1 <= target {
            if y1 == target {
                return Some(t1.as_f64());
            }
            let frac = (target - y0) / (y1 - y0);
            let (l0, l1) = (t0.as_f64().ln(), t1.as_f64().ln());
            return Some((l0 + frac * (l1 - l0)).exp());
        }
    }
    None
}

fn check_curve(curve: &[(TokenCount, f64)], name: &str) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::InsufficientData(format!("{name} curve is empty")));
    }
    if curve[0].0.get() == 0 || curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvariantViolation(format!("{name} curve tokens must be positive and strictly increasing")));
    }
    Ok(())
}

/// How many times fewer tokens the specialized run needs to match the
/// baseline's best loss.
pub fn compute_multiplier(npt_curve: &[(TokenCount, f64)], spt_curve: &[(TokenCount, f64)]) -> Result<f64> {
    check_curve(npt_curve, "baseline")?;
    check_curve(spt_curve, "specialized")?;
    let (t_best, target) =
        npt_curve
            .iter()
            .copied()
            .fold((TokenCount::ZERO, f64::INFINITY), |acc, (t, y)| if y < acc.1 { (t, y) } else { acc });
    let t_spt = first_reach(spt_curve, target).ok_or(Error::NotReached { target })?;
    Ok(t_best.as_f64() / t_spt)
}

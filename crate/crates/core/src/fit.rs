//! Fitting the overfitting law and the post-finetuning improvement law.
//!
//! Sign constraints are built into the parameterization (positives are
//! `exp(θ)`, negative exponents `−exp(θ)`), so every candidate the optimizer
//! visits is a valid law. Global search is simplex descent from scrambled
//! Halton starts or from staged per-δ fits; both finish with a
//! Levenberg–Marquardt polish.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::Split;
use crate::error::{Error, Result};
use crate::ingest::{DeltaTestPoint, RunDataset};
use crate::law::{curve_key, DeltaTestLawParams, FitReport, OverfitLawParams};
use crate::optim::{levenberg_marquardt, nelder_mead, Halton, Minimum};
use crate::units::{MixtureFraction, TokenCount, DEFAULT_TOKEN_UNIT};

/// Value substituted for negative raw gap observations.
pub const GAP_FLOOR: f64 = 1e-6;
/// Weight applied to gap observations that were floored.
pub const FLOORED_GAP_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Multi-start simplex search directly over the twelve shared coefficients.
    Joint,
    /// Per-δ power fits, then coefficient-shape fits, then a joint polish.
    Staged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every observation counts once.
    PerPoint,
    /// Every curve carries the same total weight regardless of length.
    PerCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub convergence_tol: f64,
    pub loss_space: LossSpace,
    pub strategy: Strategy,
    pub weighting: Weighting,
    pub token_unit: TokenCount,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 20_000,
            restarts: 32,
            seed: 0,
            convergence_tol: 1e-10,
            loss_space: LossSpace::Log,
            strategy: Strategy::Staged,
            weighting: Weighting::PerPoint,
            token_unit: DEFAULT_TOKEN_UNIT,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if self.token_unit.get() == 0 {
            return Err(Error::InvalidConfig("token_unit must be positive".into()));
        }
        Ok(())
    }
}

/// Shape constraints for a single three-parameter power law `a·u^b + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerForm {
    /// `a ≥ 0, b ≤ 0, c ≥ 0`: decay toward a floor.
    DecayToFloor,
    /// `a ≥ 0, b ≥ 0, c = 0`: pure growth.
    Growth,
    /// `a ≥ 0, c = 0`, exponent of either sign.
    FreeExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub token_unit: TokenCount,
}

impl PowerLaw {
    pub fn eval_at(&self, units: f64) -> f64 {
        self.a * units.powf(self.b) + self.c
    }
}

fn residual(space: LossSpace, observed: f64, model: f64) -> f64 {
    match space {
        LossSpace::Linear => observed - model,
        LossSpace::Log => {
            if model > 0.0 {
                observed.ln() - model.ln()
            } else {
                f64::NAN
            }
        }
    }
}

fn weighted_mse(res: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let sse: f64 = res.iter().zip(weights).map(|(r, w)| w * r * r).sum();
    if sse.is_finite() {
        sse / total
    } else {
        f64::INFINITY
    }
}

/// Coefficient of determination in linear space; a constant series that is
/// matched exactly scores 1.
fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Weighted linear least squares `min Σ wᵢ (xᵢ·β − yᵢ)²`.
fn weighted_lstsq(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let n = rows.first()?.len();
    let mut x = DMatrix::<f64>::zeros(m, n);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..m {
        let s = w[i].sqrt();
        for j in 0..n {
            x[(i, j)] = rows[i][j] * s;
        }
        rhs[i] = y[i] * s;
    }
    let sol = x.svd(true, true).solve(&rhs, 1e-14).ok()?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

/// Nonnegative least squares for `y ≈ a·x + c` with both coefficients ≥ 0
/// (`with_floor = false` pins `c = 0`).
fn nnls_two(x: &[f64], y: &[f64], w: &[f64], with_floor: bool) -> (f64, f64) {
    let sse =
        |a: f64, c: f64| -> f64 { x.iter().zip(y).zip(w).map(|((xi, yi), wi)| wi * (a * xi + c - yi).powi(2)).sum() };
    let sw: f64 = w.iter().sum();
    let swx: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    let swy: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum();
    let swxx: f64 = x.iter().zip(w).map(|(a, b)| b * a * a).sum();
    let swxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * a * c).sum();

    let mut candidates = vec![(0.0, 0.0)];
    if swxx > 0.0 {
        candidates.push(((swxy / swxx).max(0.0), 0.0));
    }
    if with_floor {
        candidates.push((0.0, (swy / sw).max(0.0)));
        let det = sw * swxx - swx * swx;
        if det.abs() > 1e-300 {
            let a = (sw * swxy - swx * swy) / det;
            let c = (swxx * swy - swx * swxy) / det;
            if a >= 0.0 && c >= 0.0 {
                candidates.push((a, c));
            }
        }
    }
    candidates.into_iter().min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1))).unwrap_or((0.0, 0.0))
}

struct PowerData<'a> {
    units: &'a [f64],
    values: &'a [f64],
    weights: &'a [f64],
    space: LossSpace,
}

impl PowerData<'_> {
    fn residuals(&self, a: f64, b: f64, c: f64) -> Vec<f64> {
        self.units
            .iter()
            .zip(self.values)
            .zip(self.weights)
            .map(|((u, y), w)| w.sqrt() * residual(self.space, *y, a * u.powf(b) + c))
            .collect()
    }

    fn mse(&self, a: f64, b: f64, c: f64) -> f64 {
        let res: Vec<f64> = self.residuals(a, b, c).iter().zip(self.weights).map(|(r, w)| r / w.sqrt()).collect();
        weighted_mse(&res, self.weights)
    }
}

const EXPONENT_GRID: usize = 161;

/// Maps unconstrained coordinates to `(a, b, c)`.
type Decode = Box<dyn Fn(&[f64]) -> (f64, f64, f64) + Sync>;

/// Fits `a·u^b + c` under the given shape constraints. Returns the
/// coefficients, the achieved MSE, LM iterations, and convergence.
fn fit_power_units(
    data: &PowerData<'_>,
    form: PowerForm,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, f64, f64, usize, bool) {
    let inner_w: Vec<f64> = match data.space {
        LossSpace::Log => data.weights.iter().zip(data.values).map(|(w, y)| w / (y * y)).collect(),
        LossSpace::Linear => data.weights.to_vec(),
    };
    let grid: Vec<f64> = match form {
        PowerForm::DecayToFloor => log_spaced(1e-4, 5.0, EXPONENT_GRID).into_iter().map(|s| -s).collect(),
        PowerForm::Growth => log_spaced(1e-4, 5.0, EXPONENT_GRID),
        PowerForm::FreeExponent => {
            (0..EXPONENT_GRID).map(|i| -5.0 + 10.0 * i as f64 / (EXPONENT_GRID - 1) as f64).collect()
        }
    };
    let with_floor = form == PowerForm::DecayToFloor;

    // Profile: for each exponent the amplitudes solve a small NNLS.
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for &b in &grid {
        let x: Vec<f64> = data.units.iter().map(|u| u.powf(b)).collect();
        let (a, c) = nnls_two(&x, data.values, &inner_w, with_floor);
        let m = data.mse(a, b, c);
        if m < best.0 {
            best = (m, a, b, c);
        }
    }
    let (mut best_mse, mut a, mut b, mut c) = best;

    // A log-space pure power law is exactly a linear regression.
    if data.space == LossSpace::Log && !with_floor {
        let rows: Vec<Vec<f64>> = data.units.iter().map(|u| vec![1.0, u.ln()]).collect();
        let ly: Vec<f64> = data.values.iter().map(|y| y.ln()).collect();
        if let Some(beta) = weighted_lstsq(&rows, &ly, data.weights) {
            let (ca, cb) = (beta[0].exp(), beta[1]);
            let ok = match form {
                PowerForm::Growth => cb >= 0.0,
                _ => true,
            };
            let m = data.mse(ca, cb, 0.0);
            if ok && m <= best_mse {
                best_mse = m;
                a = ca;
                b = cb;
                c = 0.0;
            }
        }
    }

    let scale = data.values.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    let floor = 1e-14 * scale;
    let (theta0, decode): (Vec<f64>, Decode) = match form {
        PowerForm::DecayToFloor => (
            vec![a.max(floor).ln(), (-b).max(1e-8).ln(), c.max(floor).ln()],
            Box::new(|t: &[f64]| (t[0].exp(), -t[1].exp(), t[2].exp())),
        ),
        PowerForm::Growth => {
            (vec![a.max(floor).ln(), b.max(1e-8).ln()], Box::new(|t: &[f64]| (t[0].exp(), t[1].exp(), 0.0)))
        }
        PowerForm::FreeExponent => (vec![a.max(floor).ln(), b], Box::new(|t: &[f64]| (t[0].exp(), t[1], 0.0))),
    };
    let lm = levenberg_marquardt(
        |t| {
            let (a, b, c) = decode(t);
            data.residuals(a, b, c)
        },
        &theta0,
        max_iter,
        tol,
        1e-30 * data.weights.iter().sum::<f64>(),
    );
    let (la, lb, lc) = decode(&lm.x);
    let lm_mse = data.mse(la, lb, lc);
    if lm_mse < best_mse {
        best_mse = lm_mse;
        a = la;
        b = lb;
        c = lc;
    }
    (a, b, c, best_mse, lm.iterations, lm.converged && best_mse.is_finite())
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..n).map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Fits `a·(T/unit)^b + c` to `(tokens, value)` points.
pub fn fit_power_law(
    points: &[(TokenCount, f64)],
    form: PowerForm,
    options: &FitOptions,
) -> Result<(PowerLaw, FitReport)> {
    options.validate()?;
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!("a power-law fit needs at least 4 points, got {}", points.len())));
    }
    if let Some((t, _)) = points.iter().find(|(t, _)| t.get() == 0) {
        return Err(Error::Domain(format!("token count {t} must be positive")));
    }
    if let Some((_, v)) = points.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Domain(format!("value {v} is not finite")));
    }
    let unit = options.token_unit.as_f64();
    let units: Vec<f64> = points.iter().map(|(t, _)| t.as_f64() / unit).collect();
    let values: Vec<f64> = points.iter().map(|(_, v)| *v).collect();
    let weights = vec![1.0; points.len()];

    let mut warnings = Vec::new();
    let mut space = options.loss_space;
    if space == LossSpace::Log && values.iter().any(|v| *v <= 0.0) {
        warnings.push("nonpositive values present; residuals computed in linear space".to_string());
        space = LossSpace::Linear;
    }
    let data = PowerData { units: &units, values: &values, weights: &weights, space };
    let (a, b, c, mse, iterations, converged) =
        fit_power_units(&data, form, options.convergence_tol, options.max_iterations);

    let predicted: Vec<f64> = units.iter().map(|u| a * u.powf(b) + c).collect();
    let mut per_curve_r2 = BTreeMap::new();
    per_curve_r2.insert("series".to_string(), r_squared(&values, &predicted));
    let report = FitReport {
        residual_mse: mse,
        per_curve_r2,
        iterations,
        converged,
        restarts_used: 1,
        seed: options.seed,
        warnings,
    };
    Ok((PowerLaw { a, b, c, token_unit: options.token_unit }, report))
}

/// Fits the improvement-after-finetuning law for one mixture fraction.
pub fn fit_delta_test_law(
    points: &[DeltaTestPoint],
    delta: MixtureFraction,
    options: &FitOptions,
) -> Result<(DeltaTestLawParams<f64>, FitReport)> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!("improvement law needs at least 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.improvement >= 0.0)) {
        return Err(Error::InvariantViolation(format!("improvement {} at {} is negative", p.improvement, p.tokens)));
    }
    let pairs: Vec<(TokenCount, f64)> = points.iter().map(|p| (p.tokens, p.improvement)).collect();
    let (law, report) = fit_power_law(&pairs, PowerForm::DecayToFloor, options)?;
    let params = DeltaTestLawParams { delta, a: law.a, b: law.b, c: law.c, token_unit: law.token_unit };
    params.validate()?;
    Ok((params, report))
}

struct TrainObs {
    delta: MixtureFraction,
    units: f64,
    loss: f64,
    weight: f64,
}

struct GapObs {
    delta: MixtureFraction,
    units: f64,
    gap: f64,
    /// Observed test loss at this point; scales gap residuals in log space.
    level: f64,
    weight: f64,
}

#[derive(Clone, Copy)]
enum Part {
    Train,
    Gap,
}

impl Part {
    /// Coordinates of the unconstrained vector that this part depends on.
    fn coords(self) -> &'static [usize] {
        match self {
            Part::Train => &[0, 1, 2, 8, 9, 10, 11],
            Part::Gap => &[3, 4, 5, 6, 7],
        }
    }
}

struct Observations {
    train: Vec<TrainObs>,
    gap: Vec<GapObs>,
    space: LossSpace,
    unit: TokenCount,
}

impl Observations {
    fn weights(&self) -> Vec<f64> {
        self.train.iter().map(|o| o.weight).chain(self.gap.iter().map(|o| o.weight)).collect()
    }

    fn raw_residuals(&self, p: &OverfitLawParams<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.train.len() + self.gap.len());
        for o in &self.train {
            let model = p.train_loss_at(o.units, o.delta).unwrap_or(f64::NAN);
            out.push(residual(self.space, o.loss, model));
        }
        for o in &self.gap {
            let model = p.gap_at(o.units, o.delta).unwrap_or(f64::NAN);
            out.push(match self.space {
                LossSpace::Linear => o.gap - model,
                LossSpace::Log => (o.gap - model) / o.level,
            });
        }
        out
    }

    fn part_residuals(&self, p: &OverfitLawParams<f64>, part: Part, sqrt_w: &[f64]) -> Vec<f64> {
        let n_train = self.train.len();
        let raw = self.raw_residuals(p);
        let range = match part {
            Part::Train => 0..n_train,
            Part::Gap => n_train..raw.len(),
        };
        raw[range.clone()].iter().zip(&sqrt_w[range]).map(|(r, s)| r * s).collect()
    }

    fn weighted_residuals(&self, p: &OverfitLawParams<f64>, sqrt_w: &[f64]) -> Vec<f64> {
        self.raw_residuals(p).iter().zip(sqrt_w).map(|(r, s)| r * s).collect()
    }

    fn mse(&self, p: &OverfitLawParams<f64>) -> f64 {
        weighted_mse(&self.raw_residuals(p), &self.weights())
    }
}

fn collect_observations(
    dataset: &RunDataset,
    deltas: &[MixtureFraction],
    options: &FitOptions,
) -> Result<Observations> {
    let unit = options.token_unit.as_f64();
    let mut train = Vec::new();
    let mut gap = Vec::new();
    let mut usable = Vec::new();
    for &delta in deltas {
        let mut has_train = false;
        let mut has_gap = false;
        for run in dataset.runs_with_delta(delta) {
            let (Some(tr), Some(te)) =
                (dataset.curve(&run.run_id, Split::DomainTrain), dataset.curve(&run.run_id, Split::DomainTest))
            else {
                continue;
            };
            let tr_w = match options.weighting {
                Weighting::PerPoint => 1.0,
                Weighting::PerCurve => 1.0 / tr.len() as f64,
            };
            for p in tr.points() {
                train.push(TrainObs { delta, units: p.tokens.as_f64() / unit, loss: p.loss, weight: tr_w });
            }
            has_train = true;
            let test_at: BTreeMap<TokenCount, f64> = te.points().iter().map(|p| (p.tokens, p.loss)).collect();
            if let Some(g) = dataset.gap(&run.run_id) {
                let g_w = match options.weighting {
                    Weighting::PerPoint => 1.0,
                    Weighting::PerCurve => 1.0 / g.points.len() as f64,
                };
                for p in &g.points {
                    let (value, weight) =
                        if p.gap < 0.0 { (GAP_FLOOR, g_w * FLOORED_GAP_WEIGHT) } else { (p.gap, g_w) };
                    gap.push(GapObs {
                        delta,
                        units: p.tokens.as_f64() / unit,
                        gap: value,
                        level: test_at[&p.tokens],
                        weight,
                    });
                }
                has_gap = !g.points.is_empty();
            }
        }
        if has_train && has_gap {
            usable.push(delta);
        }
    }
    let nonzero = usable.iter().filter(|d| !d.is_zero()).count();
    if usable.len() < 3 || nonzero == 0 {
        return Err(Error::InsufficientData(format!(
            "need domain train and test curves for at least 3 mixture fractions including a nonzero one; usable: {}",
            usable.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(Observations { train, gap, space: options.loss_space, unit: options.token_unit })
}

/// Unconstrained coordinates for the twelve coefficients.
mod coords {
    use super::*;

    pub const DIM: usize = 12;

    /// Log-coordinates are clamped so decoded magnitudes stay strictly inside
    /// the sign constraints.
    const LN_LIMIT: f64 = 40.0;

    fn pos(t: f64) -> f64 {
        t.clamp(-LN_LIMIT, LN_LIMIT).exp()
    }

    pub fn decode(t: &[f64], unit: TokenCount) -> OverfitLawParams<f64> {
        let b_train_g = -pos(t[1]);
        OverfitLawParams {
            a_train: pos(t[0]),
            b_train_g,
            b_train_s: b_train_g - pos(t[2]),
            b_gap_g: -pos(t[3]),
            b_gap_s: pos(t[4]),
            alpha1: pos(t[5]),
            alpha2: pos(t[6]),
            alpha3: t[7],
            kappa0: t[8],
            kappa1: t[9],
            kappa2: pos(t[10]),
            kappa3: t[11],
            token_unit: unit,
        }
    }

    /// Inverse of [`decode`], nudging boundary values into the interior.
    pub fn encode(p: &OverfitLawParams<f64>) -> Vec<f64> {
        let pos = |v: f64| v.max(1e-12).ln();
        let g = (-p.b_train_g).max(1e-6);
        let extra = (-p.b_train_s - g).max(1e-6);
        vec![
            pos(p.a_train),
            g.ln(),
            extra.ln(),
            pos(-p.b_gap_g),
            pos(p.b_gap_s),
            pos(p.alpha1),
            pos(p.alpha2),
            p.alpha3,
            p.kappa0,
            p.kappa1,
            pos(p.kappa2),
            p.kappa3,
        ]
    }

    /// Search box for multi-start, in unconstrained coordinates.
    pub fn search_box(min_loss: f64, max_loss: f64) -> [(f64, f64); DIM] {
        let ln = f64::ln;
        [
            (ln(0.05), ln(20.0)),
            (ln(0.01), ln(1.0)),
            (ln(0.01), ln(5.0)),
            (ln(0.001), ln(0.5)),
            (ln(0.1), ln(30.0)),
            (ln(1e-3), ln(10.0)),
            (ln(0.2), ln(3.0)),
            (-20.0, 20.0),
            (min_loss - 2.0, max_loss),
            (-1.0, 1.0),
            (ln(1e-4), ln(1.0)),
            (-20.0, 20.0),
        ]
    }
}

/// Per-δ power fits followed by shape fits of the per-δ coefficients.
fn staged_start(obs: &Observations, deltas: &[MixtureFraction], options: &FitOptions) -> OverfitLawParams<f64> {
    let mut train_fits = Vec::new(); // (δ, A, b, C)
    for &delta in deltas {
        let pts: Vec<&TrainObs> = obs.train.iter().filter(|o| o.delta == delta).collect();
        if pts.len() >= 4 {
            let units: Vec<f64> = pts.iter().map(|o| o.units).collect();
            let values: Vec<f64> = pts.iter().map(|o| o.loss).collect();
            let weights: Vec<f64> = pts.iter().map(|o| o.weight).collect();
            let data = PowerData { units: &units, values: &values, weights: &weights, space: obs.space };
            let (a, b, c, mse, _, _) = fit_power_units(&data, PowerForm::DecayToFloor, options.convergence_tol, 500);
            if mse.is_finite() && a > 0.0 {
                train_fits.push((delta.value(), a, b, c));
            }
        }
    }
    let mut p = OverfitLawParams {
        a_train: 1.0,
        b_train_g: -0.1,
        b_train_s: -0.5,
        b_gap_g: -0.05,
        b_gap_s: 5.0,
        alpha1: 0.1,
        alpha2: 1.0,
        alpha3: 0.0,
        kappa0: obs.train.iter().map(|o| o.loss).fold(f64::INFINITY, f64::min),
        kappa1: 0.0,
        kappa2: 0.01,
        kappa3: 0.0,
        token_unit: obs.unit,
    };

    if !train_fits.is_empty() {
        let n = train_fits.len() as f64;
        p.a_train = (train_fits.iter().map(|f| f.1.ln()).sum::<f64>() / n).exp();
        if train_fits.len() >= 2 {
            let rows: Vec<Vec<f64>> = train_fits.iter().map(|f| vec![1.0, f.0]).collect();
            let ys: Vec<f64> = train_fits.iter().map(|f| f.2).collect();
            if let Some(beta) = weighted_lstsq(&rows, &ys, &vec![1.0; rows.len()]) {
                let g = beta[0].min(-1e-3);
                p.b_train_g = g;
                p.b_train_s = (g + beta[1]).min(g - 1e-3);
            }
        }
        let cs: Vec<(f64, f64)> = train_fits.iter().map(|f| (f.0, f.3)).collect();
        fit_log_linear_floor(&cs, &mut p);
    }

    fit_train_profiled(obs, &mut p);
    fit_gap_log_linear(obs, &mut p);
    p
}

/// Train-law coefficients that enter linearly once the exponents and `κ₂`
/// are fixed: `(A, κ₀, κ₁, κ₃)`.
fn train_linear_solve(obs: &Observations, b_g: f64, b_s: f64, k2: f64) -> Option<[f64; 4]> {
    let rows: Vec<Vec<f64>> = obs
        .train
        .iter()
        .map(|o| {
            let d = o.delta.value();
            let b = d * b_s + (1.0 - d) * b_g;
            vec![o.units.powf(b), 1.0, -(d + k2).ln(), -d]
        })
        .collect();
    let ys: Vec<f64> = obs.train.iter().map(|o| o.loss).collect();
    let w: Vec<f64> = obs
        .train
        .iter()
        .map(|o| match obs.space {
            LossSpace::Log => o.weight / (o.loss * o.loss),
            LossSpace::Linear => o.weight,
        })
        .collect();
    let beta = weighted_lstsq(&rows, &ys, &w)?;
    (beta[0] > 0.0).then(|| [beta[0], beta[1], beta[2], beta[3]])
}

/// Profiles the train law over `(b_g, b_s, κ₂)` by grid then simplex search,
/// solving the linear coefficients exactly at each point.
fn fit_train_profiled(obs: &Observations, p: &mut OverfitLawParams<f64>) {
    let distinct = {
        let mut d: Vec<f64> = obs.train.iter().map(|o| o.delta.value()).collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d.len()
    };
    if distinct < 4 {
        return;
    }
    // z = (ln −b_g, ln(b_g − b_s), ln κ₂)
    let assemble = |z: &[f64]| -> Option<OverfitLawParams<f64>> {
        let b_g = -z[0].exp();
        let b_s = b_g - z[1].exp();
        let k2 = z[2].exp();
        let [a, k0, k1, k3] = train_linear_solve(obs, b_g, b_s, k2)?;
        Some(OverfitLawParams {
            a_train: a,
            b_train_g: b_g,
            b_train_s: b_s,
            kappa0: k0,
            kappa1: k1,
            kappa2: k2,
            kappa3: k3,
            ..*p
        })
    };
    let sqrt_w: Vec<f64> = obs.weights().iter().map(|w| w.sqrt()).collect();
    let total_w: f64 = obs.train.iter().map(|o| o.weight).sum();
    let objective = |z: &[f64]| -> f64 {
        match assemble(z) {
            Some(q) => {
                let r = obs.part_residuals(&q, Part::Train, &sqrt_w);
                let v = r.iter().map(|x| x * x).sum::<f64>() / total_w;
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        }
    };
    let mut starts =
        vec![vec![(-p.b_train_g).max(1e-6).ln(), (p.b_train_g - p.b_train_s).max(1e-6).ln(), p.kappa2.ln()]];
    for bg in log_spaced(0.01, 2.0, 10) {
        for extra in log_spaced(0.01, 10.0, 10) {
            for k2 in log_spaced(1e-4, 1.0, 9) {
                starts.push(vec![bg.ln(), extra.ln(), k2.ln()]);
            }
        }
    }
    let scored: Vec<(f64, &Vec<f64>)> = starts.iter().map(|z| (objective(z), z)).collect();
    let Some(&(best_value, best_z)) = scored.iter().min_by(|a, b| a.0.total_cmp(&b.0)) else { return };
    if !best_value.is_finite() {
        return;
    }
    let refined = nelder_mead(objective, best_z, &[0.2, 0.3, 0.5], 3_000, 1e-14);
    let z = if refined.value <= best_value { refined.x } else { best_z.clone() };
    if let Some(q) = assemble(&z) {
        *p = q;
    }
}

/// Weighted regression of `ln gap` on `(1, ln δ, δ, ln u, δ·ln u)`, which is
/// exact for the gap law. Weights `(gap/level)²` match the gap residual scale.
fn fit_gap_log_linear(obs: &Observations, p: &mut OverfitLawParams<f64>) {
    let pts: Vec<&GapObs> = obs.gap.iter().filter(|o| !o.delta.is_zero() && o.gap > GAP_FLOOR).collect();
    let mut distinct: Vec<f64> = pts.iter().map(|o| o.delta.value()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.is_empty() || pts.len() < 4 {
        return;
    }
    let with_alpha3 = distinct.len() >= 3;
    let with_delta_slope = distinct.len() >= 2;
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|o| {
            let d = o.delta.value();
            let lu = o.units.ln();
            let mut r = vec![1.0, lu];
            if with_delta_slope {
                r.push(d.ln());
                r.push(d * lu);
            }
            if with_alpha3 {
                r.push(d);
            }
            r
        })
        .collect();
    let ly: Vec<f64> = pts.iter().map(|o| o.gap.ln()).collect();
    let w: Vec<f64> = pts.iter().map(|o| o.weight * (o.gap / o.level).powi(2)).collect();
    let Some(beta) = weighted_lstsq(&rows, &ly, &w) else { return };
    let b_g = beta[1];
    let (alpha2, slope) = if with_delta_slope { (beta[2], beta[3]) } else { (1.0, 0.0) };
    let alpha3 = if with_alpha3 { beta[4] } else { 0.0 };
    if ![beta[0], b_g, alpha2, slope, alpha3].iter().all(|v| v.is_finite()) {
        return;
    }
    p.alpha1 = beta[0].exp();
    p.alpha2 = alpha2.max(1e-2);
    p.alpha3 = alpha3;
    p.b_gap_g = b_g.min(-1e-3);
    p.b_gap_s = (b_g + slope).max(1e-3);
}

/// Fits `C(δ) = κ₀ − κ₁·ln(δ+κ₂) − κ₃·δ` to per-δ floors by profiling κ₂.
fn fit_log_linear_floor(cs: &[(f64, f64)], p: &mut OverfitLawParams<f64>) {
    let w = vec![1.0; cs.len()];
    let ys: Vec<f64> = cs.iter().map(|c| c.1).collect();
    if cs.len() < 3 {
        p.kappa0 = ys.iter().sum::<f64>() / ys.len() as f64;
        return;
    }
    let mut best = (f64::INFINITY, None);
    for k2 in log_spaced(1e-4, 10.0, 121) {
        let rows: Vec<Vec<f64>> = cs.iter().map(|c| vec![1.0, -(c.0 + k2).ln(), -c.0]).collect();
        let Some(beta) = weighted_lstsq(&rows, &ys, &w) else { continue };
        let sse: f64 =
            rows.iter().zip(&ys).map(|(r, y)| (r[0] * beta[0] + r[1] * beta[1] + r[2] * beta[2] - y).powi(2)).sum();
        if sse < best.0 {
            best = (sse, Some((beta, k2)));
        }
    }
    if let (_, Some((beta, k2))) = best {
        p.kappa0 = beta[0];
        p.kappa1 = beta[1];
        p.kappa2 = k2;
        p.kappa3 = beta[2];
    }
}

/// Best simplex results carried into the least-squares polish.
const POLISHED_STARTS: usize = 4;

struct Candidate {
    index: usize,
    minimum: Minimum,
}

fn polish(obs: &Observations, sqrt_w: &[f64], theta0: &[f64], options: &FitOptions) -> Minimum {
    let total_w: f64 = sqrt_w.iter().map(|s| s * s).sum();
    let lm = levenberg_marquardt(
        |t| obs.weighted_residuals(&coords::decode(t, obs.unit), sqrt_w),
        theta0,
        options.max_iterations.min(5_000),
        options.convergence_tol,
        1e-30 * total_w,
    );
    Minimum { value: lm.value / total_w, ..lm }
}

/// Least-squares polish of one part's coordinates with the rest held fixed.
/// Returns the updated coordinates and the iterations spent.
fn polish_part(
    obs: &Observations,
    sqrt_w: &[f64],
    theta: &[f64],
    part: Part,
    options: &FitOptions,
) -> (Vec<f64>, usize) {
    let idx = part.coords();
    let embed = |sub: &[f64]| {
        let mut full = theta.to_vec();
        for (&i, &v) in idx.iter().zip(sub) {
            full[i] = v;
        }
        full
    };
    let x0: Vec<f64> = idx.iter().map(|&i| theta[i]).collect();
    let lm = levenberg_marquardt(
        |sub| obs.part_residuals(&coords::decode(&embed(sub), obs.unit), part, sqrt_w),
        &x0,
        options.max_iterations.min(5_000),
        options.convergence_tol,
        0.0,
    );
    if lm.value.is_finite() {
        (embed(&lm.x), lm.iterations)
    } else {
        (theta.to_vec(), lm.iterations)
    }
}

/// Fits the twelve shared coefficients to the train and gap curves of the
/// selected mixture fractions.
pub fn fit_overfitting_law(
    dataset: &RunDataset,
    deltas: &[MixtureFraction],
    options: &FitOptions,
) -> Result<(OverfitLawParams<f64>, FitReport)> {
    options.validate()?;
    let mut deltas = deltas.to_vec();
    deltas.sort_by(|a, b| a.value().total_cmp(&b.value()));
    deltas.dedup();
    let obs = collect_observations(dataset, &deltas, options)?;
    let weights = obs.weights();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let objective = |t: &[f64]| obs.mse(&coords::decode(t, obs.unit));

    let candidates: Vec<Candidate> = match options.strategy {
        Strategy::Staged => {
            let start = coords::encode(&staged_start(&obs, &deltas, options));
            let (theta, gap_iters) = polish_part(&obs, &sqrt_w, &start, Part::Gap, options);
            let (theta, train_iters) = polish_part(&obs, &sqrt_w, &theta, Part::Train, options);
            let minimum = polish(&obs, &sqrt_w, &theta, options);
            let iterations = minimum.iterations + gap_iters + train_iters;
            vec![Candidate { index: 0, minimum: Minimum { iterations, ..minimum } }]
        }
        Strategy::Joint => {
            let min_loss = obs.train.iter().map(|o| o.loss).fold(f64::INFINITY, f64::min);
            let max_loss = obs.train.iter().map(|o| o.loss).fold(f64::NEG_INFINITY, f64::max);
            let bounds = coords::search_box(min_loss, max_loss);
            let mut halton = Halton::new(coords::DIM, options.seed);
            let starts: Vec<Vec<f64>> = (0..options.restarts)
                .map(|_| halton.next_point().iter().zip(&bounds).map(|(q, (lo, hi))| lo + q * (hi - lo)).collect())
                .collect();
            let steps: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.1 * (hi - lo)).collect();
            let simplex_budget = options.max_iterations.min(400 * coords::DIM);
            let mut coarse: Vec<Candidate> = starts
                .par_iter()
                .enumerate()
                .map(|(index, x0)| Candidate {
                    index,
                    minimum: nelder_mead(objective, x0, &steps, simplex_budget, 1e-8),
                })
                .collect();
            coarse.sort_by(|a, b| a.minimum.value.total_cmp(&b.minimum.value).then(a.index.cmp(&b.index)));
            coarse.truncate(POLISHED_STARTS);
            coarse
                .into_par_iter()
                .map(|Candidate { index, minimum: coarse }| {
                    let fine = polish(&obs, &sqrt_w, &coarse.x, options);
                    let minimum = if fine.value <= coarse.value {
                        Minimum { iterations: coarse.iterations + fine.iterations, ..fine }
                    } else {
                        coarse
                    };
                    Candidate { index, minimum }
                })
                .collect()
        }
    };

    let restarts_used = match options.strategy {
        Strategy::Staged => 1,
        Strategy::Joint => options.restarts,
    };
    let best = candidates
        .into_iter()
        .filter(|c| c.minimum.value.is_finite())
        .min_by(|a, b| a.minimum.value.total_cmp(&b.minimum.value).then(a.index.cmp(&b.index)))
        .ok_or_else(|| Error::InvariantViolation("no restart produced a finite objective".into()))?;

    let params = coords::decode(&best.minimum.x, obs.unit);
    params.validate(&[]).map_err(|e| Error::InvariantViolation(format!("fitted law: {e}")))?;
    let residual_mse = obs.mse(&params);

    let mut warnings = Vec::new();
    if let Some(&d) = deltas.iter().find(|&&d| params.exponent(d, crate::law::Exponent::Gap) >= 1.0) {
        warnings.push(format!("fitted gap exponent reaches 1 at delta = {d}"));
    }
    let floored = obs.gap.iter().filter(|o| o.gap == GAP_FLOOR).count();
    if floored > 0 {
        warnings.push(format!("{floored} negative gap observation(s) floored and down-weighted"));
    }

    let report = FitReport {
        residual_mse,
        per_curve_r2: per_curve_r2(&obs, &params, &deltas),
        iterations: best.minimum.iterations,
        converged: best.minimum.converged && residual_mse.is_finite(),
        restarts_used,
        seed: options.seed,
        warnings,
    };
    Ok((params, report))
}

fn per_curve_r2(obs: &Observations, p: &OverfitLawParams<f64>, deltas: &[MixtureFraction]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for &d in deltas {
        let (y, m): (Vec<f64>, Vec<f64>) = obs
            .train
            .iter()
            .filter(|o| o.delta == d)
            .map(|o| (o.loss, p.train_loss_at(o.units, d).unwrap_or(f64::NAN)))
            .unzip();
        if !y.is_empty() {
            out.insert(curve_key(d, Split::DomainTrain.as_str()), r_squared(&y, &m));
        }
        let (y, m): (Vec<f64>, Vec<f64>) =
            obs.gap.iter().filter(|o| o.delta == d).map(|o| (o.gap, p.gap_at(o.units, d).unwrap_or(f64::NAN))).unzip();
        if !y.is_empty() {
            out.insert(curve_key(d, "gap"), r_squared(&y, &m));
        }
    }
    out
}

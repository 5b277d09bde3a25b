//! Closed-form evaluation of the overfitting law and the post-finetuning
//! improvement law.
//!
//! Domain training loss follows `A·u^{b_train(δ)} + C(δ)`, the train–test gap
//! follows `A_gap(δ)·u^{b_gap(δ)}`, and test loss is their sum, where
//! `u = T / token_unit`. Exponents interpolate linearly in δ between a
//! general-data and a specialized-data value; `A_gap` is a Gamma kernel in δ
//! and `C` is log-linear in δ.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::units::{MixtureFraction, TokenCount, DEFAULT_TOKEN_UNIT};

/// Which of the two δ-interpolated exponents to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Train,
    Gap,
}

/// Coefficients of the overfitting law, shared across all mixture fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct OverfitLawParams<S> {
    pub a_train: S,
    pub b_train_g: S,
    pub b_train_s: S,
    pub b_gap_g: S,
    pub b_gap_s: S,
    pub alpha1: S,
    pub alpha2: S,
    pub alpha3: S,
    pub kappa0: S,
    pub kappa1: S,
    pub kappa2: S,
    pub kappa3: S,
    #[serde(default = "default_unit")]
    pub token_unit: TokenCount,
}

fn default_unit() -> TokenCount {
    DEFAULT_TOKEN_UNIT
}

/// Names of the twelve fitted coefficients, in storage order.
pub const PARAM_NAMES: [&str; 12] = [
    "a_train",
    "b_train_g",
    "b_train_s",
    "b_gap_g",
    "b_gap_s",
    "alpha1",
    "alpha2",
    "alpha3",
    "kappa0",
    "kappa1",
    "kappa2",
    "kappa3",
];

impl<S: Scalar> OverfitLawParams<S> {
    pub fn to_array(&self) -> [S; 12] {
        [
            self.a_train,
            self.b_train_g,
            self.b_train_s,
            self.b_gap_g,
            self.b_gap_s,
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.kappa0,
            self.kappa1,
            self.kappa2,
            self.kappa3,
        ]
    }

    pub fn from_array(v: [S; 12], token_unit: TokenCount) -> Self {
        OverfitLawParams {
            a_train: v[0],
            b_train_g: v[1],
            b_train_s: v[2],
            b_gap_g: v[3],
            b_gap_s: v[4],
            alpha1: v[5],
            alpha2: v[6],
            alpha3: v[7],
            kappa0: v[8],
            kappa1: v[9],
            kappa2: v[10],
            kappa3: v[11],
            token_unit,
        }
    }

    /// Checks the sign constraints, and `b_gap(δ) < 1` at every supplied δ.
    pub fn validate(&self, deltas: &[MixtureFraction]) -> Result<()> {
        let zero = S::zero();
        let fail = |msg: &str| Err(Error::InvariantViolation(msg.to_string()));
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return fail("non-finite coefficient");
        }
        if self.token_unit.get() == 0 {
            return fail("token_unit must be positive");
        }
        if !(self.a_train > zero) {
            return fail("a_train must be positive");
        }
        if !(self.alpha1 >= zero) {
            return fail("alpha1 must be nonnegative");
        }
        if !(self.alpha2 > zero) {
            return fail("alpha2 must be positive");
        }
        if !(self.kappa2 > zero) {
            return fail("kappa2 must be positive");
        }
        if !(self.b_train_g < zero && self.b_train_s < zero) {
            return fail("train exponents must both be negative");
        }
        if self.b_train_s.abs() < self.b_train_g.abs() {
            return fail("specialized train exponent must be at least as steep as the general one");
        }
        if !(self.b_gap_g < zero && self.b_gap_s > zero) {
            return fail("gap exponents must satisfy b_gap_g < 0 < b_gap_s");
        }
        for &d in deltas {
            if self.exponent(d, Exponent::Gap) >= S::one() {
                return Err(Error::InvariantViolation(format!("gap exponent reaches 1 at delta = {d}")));
            }
        }
        Ok(())
    }

    /// `δ·b_s + (1−δ)·b_g` for the chosen exponent.
    pub fn exponent(&self, delta: MixtureFraction, which: Exponent) -> S {
        let d = S::of(delta.value());
        let (g, s) = match which {
            Exponent::Train => (self.b_train_g, self.b_train_s),
            Exponent::Gap => (self.b_gap_g, self.b_gap_s),
        };
        d * s + (S::one() - d) * g
    }

    /// Gamma-kernel gap amplitude `α₁·δ^{α₂}·exp(α₃·δ)`; exactly zero at δ = 0.
    pub fn a_gap(&self, delta: MixtureFraction) -> S {
        if delta.is_zero() {
            return S::zero();
        }
        let d = S::of(delta.value());
        self.alpha1 * d.powf(self.alpha2) * (self.alpha3 * d).exp()
    }

    /// Log-linear training-loss floor `κ₀ − κ₁·ln(δ+κ₂) − κ₃·δ`.
    pub fn c_train(&self, delta: MixtureFraction) -> Result<S> {
        let d = S::of(delta.value());
        let arg = d + self.kappa2;
        if !(arg > S::zero()) {
            return Err(Error::Domain(format!("log argument delta + kappa2 = {arg} is not positive")));
        }
        Ok(self.kappa0 - self.kappa1 * arg.ln() - self.kappa3 * d)
    }

    /// Converts a raw token count into law units.
    pub fn units(&self, tokens: TokenCount) -> Result<S> {
        if tokens.get() == 0 {
            return Err(Error::Domain("token count must be positive".into()));
        }
        Ok(S::of_u64(tokens.get()) / S::of_u64(self.token_unit.get()))
    }

    pub fn train_loss(&self, tokens: TokenCount, delta: MixtureFraction) -> Result<S> {
        self.train_loss_at(self.units(tokens)?, delta)
    }

    pub fn gap(&self, tokens: TokenCount, delta: MixtureFraction) -> Result<S> {
        self.gap_at(self.units(tokens)?, delta)
    }

    pub fn test_loss(&self, tokens: TokenCount, delta: MixtureFraction) -> Result<S> {
        self.test_loss_at(self.units(tokens)?, delta)
    }

    /// Training loss at `units` multiples of `token_unit`.
    pub fn train_loss_at(&self, units: S, delta: MixtureFraction) -> Result<S> {
        check_units(units)?;
        let b = self.exponent(delta, Exponent::Train);
        Ok(self.a_train * units.powf(b) + self.c_train(delta)?)
    }

    pub fn gap_at(&self, units: S, delta: MixtureFraction) -> Result<S> {
        check_units(units)?;
        let amp = self.a_gap(delta);
        if amp == S::zero() {
            return Ok(S::zero());
        }
        Ok(amp * units.powf(self.exponent(delta, Exponent::Gap)))
    }

    /// Always exactly `train_loss_at + gap_at`.
    pub fn test_loss_at(&self, units: S, delta: MixtureFraction) -> Result<S> {
        Ok(self.train_loss_at(units, delta)? + self.gap_at(units, delta)?)
    }

    /// Converts coefficients to another float width.
    pub fn cast<T: Scalar>(&self) -> OverfitLawParams<T> {
        let v = self.to_array().map(|x| T::of(x.to_f64().unwrap_or(f64::NAN)));
        OverfitLawParams::from_array(v, self.token_unit)
    }
}

fn check_units<S: Scalar>(units: S) -> Result<()> {
    if units > S::zero() && units.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("token position {units} must be positive and finite")))
    }
}

/// `Δℓ = a·u^b + c` for one mixture fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct DeltaTestLawParams<S> {
    pub delta: MixtureFraction,
    pub a: S,
    pub b: S,
    pub c: S,
    #[serde(default = "default_unit")]
    pub token_unit: TokenCount,
}

/// A law value that may have been clamped to stay physical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped<S> {
    pub value: S,
    pub raw: S,
    pub clamped: bool,
}

impl<S: Scalar> DeltaTestLawParams<S> {
    /// The identically-zero improvement law.
    pub fn zero(delta: MixtureFraction, token_unit: TokenCount) -> Self {
        DeltaTestLawParams { delta, a: S::zero(), b: S::zero(), c: S::zero(), token_unit }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = S::zero();
        if !(self.a >= zero && self.b <= zero && self.c >= zero) {
            return Err(Error::InvariantViolation("improvement law needs a >= 0, b <= 0, c >= 0".into()));
        }
        Ok(())
    }

    pub fn eval(&self, tokens: TokenCount) -> Result<Clamped<S>> {
        if tokens.get() == 0 {
            return Err(Error::Domain("token count must be positive".into()));
        }
        self.eval_at(S::of_u64(tokens.get()) / S::of_u64(self.token_unit.get()))
    }

    /// Evaluates at `units` multiples of `token_unit`. Negative extrapolations
    /// are clamped to zero and flagged.
    pub fn eval_at(&self, units: S) -> Result<Clamped<S>> {
        check_units(units)?;
        let raw = self.a * units.powf(self.b) + self.c;
        let clamped = raw < S::zero();
        Ok(Clamped { value: if clamped { S::zero() } else { raw }, raw, clamped })
    }
}

/// Outcome of a fit, independent of which law was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub residual_mse: f64,
    /// Keyed by `"<delta>/<split>"`.
    pub per_curve_r2: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn curve_key(delta: MixtureFraction, split: &str) -> String {
    format!("{delta}/{split}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frac(v: f64) -> MixtureFraction {
        MixtureFraction::new(v).unwrap()
    }

    fn base() -> OverfitLawParams<f64> {
        OverfitLawParams {
            a_train: 5.0,
            b_train_g: -0.1,
            b_train_s: -0.5,
            b_gap_g: -0.05,
            b_gap_s: 0.9,
            alpha1: 0.02,
            alpha2: 0.8,
            alpha3: 5.0,
            kappa0: 2.0,
            kappa1: 0.5,
            kappa2: 0.01,
            kappa3: 1.0,
            token_unit: DEFAULT_TOKEN_UNIT,
        }
    }

    /// Parameters whose δ = 1 values are exactly the given train/gap pieces.
    fn at_one(a_train: f64, b_train: f64, c: f64, a_gap: f64, b_gap: f64) -> OverfitLawParams<f64> {
        OverfitLawParams {
            a_train,
            b_train_g: b_train.max(-0.05),
            b_train_s: b_train,
            b_gap_g: -0.05,
            b_gap_s: b_gap,
            alpha1: a_gap,
            alpha2: 1.0,
            alpha3: 0.0,
            kappa0: c,
            kappa1: 0.0,
            kappa2: 1.0,
            kappa3: 0.0,
            token_unit: DEFAULT_TOKEN_UNIT,
        }
    }

    #[test]
    fn exponent_examples() {
        let p = base();
        let p = OverfitLawParams { b_train_g: -0.10, b_train_s: -0.50, ..p };
        assert_eq!(p.exponent(frac(0.0), Exponent::Train), -0.10);
        assert_relative_eq!(p.exponent(frac(0.02), Exponent::Train), -0.108, max_relative = 1e-12);
        let q = OverfitLawParams { b_gap_g: -0.05, b_gap_s: 0.90, ..p };
        // 0.05·0.9 + 0.95·(−0.05) = 0.045 − 0.0475
        assert_relative_eq!(q.exponent(frac(0.05), Exponent::Gap), -0.0025, max_relative = 1e-12);
        assert_eq!(q.exponent(frac(1.0), Exponent::Gap), 0.90);
    }

    #[test]
    fn a_gap_examples() {
        let p = OverfitLawParams { alpha1: 0.02, alpha2: 0.8, alpha3: 5.0, ..base() };
        assert_eq!(p.a_gap(frac(0.0)), 0.0);
        let expected = 0.02 * 0.05f64.powf(0.8) * 0.25f64.exp();
        assert_relative_eq!(p.a_gap(frac(0.05)), expected, max_relative = 1e-14);
        assert_relative_eq!(p.a_gap(frac(0.05)), 0.00234, max_relative = 2e-3);
        let lin = OverfitLawParams { alpha1: 0.02, alpha2: 1.0, alpha3: 0.0, ..base() };
        assert_relative_eq!(lin.a_gap(frac(0.10)), 0.002, max_relative = 1e-14);
    }

    #[test]
    fn c_train_examples() {
        let flat = OverfitLawParams { kappa0: 2.0, kappa1: 0.0, kappa2: 0.01, kappa3: 0.0, ..base() };
        assert_eq!(flat.c_train(frac(0.5)).unwrap(), 2.0);
        let p = OverfitLawParams { kappa0: 2.0, kappa1: 0.5, kappa2: 0.01, kappa3: 1.0, ..base() };
        let expected = 2.0 - 0.5 * 0.06f64.ln() - 0.05;
        assert_relative_eq!(p.c_train(frac(0.05)).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(p.c_train(frac(0.05)).unwrap(), 3.3567, max_relative = 1e-4);
        let unit = OverfitLawParams { kappa0: 1.0, kappa1: 1.0, kappa2: 1.0, kappa3: 0.0, ..base() };
        assert_eq!(unit.c_train(frac(0.0)).unwrap(), 1.0);
        let bad = OverfitLawParams { kappa2: -0.5, ..base() };
        assert!(matches!(bad.c_train(frac(0.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn train_gap_test_examples() {
        let p = at_one(5.0, -0.3, 1.0, 0.01, 0.5);
        let one = frac(1.0);
        let u = DEFAULT_TOKEN_UNIT.get();
        assert_relative_eq!(p.train_loss(TokenCount(u), one).unwrap(), 6.0, max_relative = 1e-14);
        let t8 = 5.0 * 8f64.powf(-0.3) + 1.0;
        assert_relative_eq!(p.train_loss(TokenCount(8 * u), one).unwrap(), t8, max_relative = 1e-14);
        assert_relative_eq!(t8, 3.676, max_relative = 1e-3);
        assert_relative_eq!(p.gap(TokenCount(4 * u), one).unwrap(), 0.02, max_relative = 1e-14);
        let g16 = p.gap(TokenCount(16 * u), one).unwrap();
        assert_relative_eq!(g16, 2.0 * p.gap(TokenCount(4 * u), one).unwrap(), max_relative = 1e-14);
        let t4 = p.test_loss(TokenCount(4 * u), one).unwrap();
        assert_relative_eq!(t4, 5.0 * 4f64.powf(-0.3) + 1.0 + 0.02, max_relative = 1e-14);
        assert_relative_eq!(t4, 4.3188, max_relative = 1e-4);
    }

    #[test]
    fn zero_tokens_is_a_domain_error() {
        let p = base();
        assert!(p.train_loss(TokenCount(0), frac(0.01)).is_err());
        assert!(p.gap(TokenCount(0), frac(0.01)).is_err());
        assert!(p.test_loss(TokenCount(0), frac(0.01)).is_err());
        let dt = DeltaTestLawParams { delta: frac(0.01), a: 1.0, b: -0.5, c: 0.0, token_unit: DEFAULT_TOKEN_UNIT };
        assert!(dt.eval(TokenCount(0)).is_err());
    }

    #[test]
    fn delta_test_examples() {
        let u = DEFAULT_TOKEN_UNIT;
        let flat = DeltaTestLawParams { delta: frac(0.02), a: 0.0, b: -1.0, c: 0.05, token_unit: u };
        assert_eq!(flat.eval(TokenCount(123)).unwrap().value, 0.05);
        let p = DeltaTestLawParams { delta: frac(0.02), a: 0.4, b: -0.5, c: 0.01, token_unit: u };
        let v = p.eval(TokenCount(16 * u.get())).unwrap();
        assert_relative_eq!(v.value, 0.11, max_relative = 1e-14);
        assert!(!v.clamped);
        let lo = p.eval(TokenCount(10 * u.get())).unwrap().value;
        let hi = p.eval(TokenCount(20 * u.get())).unwrap().value;
        assert!(hi < lo);
    }

    #[test]
    fn negative_extrapolation_is_flagged() {
        // Violates the fitted invariant: c < 0 only shows up far out.
        let p = DeltaTestLawParams { delta: frac(0.02), a: 0.4, b: -0.5, c: -0.05, token_unit: DEFAULT_TOKEN_UNIT };
        let v = p.eval_at(1000.0).unwrap();
        assert!(v.clamped);
        assert_eq!(v.value, 0.0);
        assert!(v.raw < 0.0);
    }

    #[test]
    fn validate_catches_sign_errors() {
        assert!(base().validate(&[frac(0.05)]).is_ok());
        assert!(OverfitLawParams { b_train_s: -0.05, ..base() }.validate(&[]).is_err());
        assert!(OverfitLawParams { b_gap_s: -0.1, ..base() }.validate(&[]).is_err());
        assert!(OverfitLawParams { alpha2: 0.0, ..base() }.validate(&[]).is_err());
        let steep = OverfitLawParams { b_gap_s: 30.0, ..base() };
        assert!(steep.validate(&[frac(0.01)]).is_ok());
        assert!(steep.validate(&[frac(0.05)]).is_err());
    }

    #[test]
    fn f32_evaluation_tracks_f64() {
        let p = base();
        let q: OverfitLawParams<f32> = p.cast();
        for &d in &[0.0, 0.01, 0.05] {
            let a = p.test_loss_at(37.0, frac(d)).unwrap();
            let b = q.test_loss_at(37.0f32, frac(d)).unwrap();
            assert_relative_eq!(a, b as f64, max_relative = 1e-5);
        }
    }
}

//! Scaling laws for overfitting under specialized pretraining, where a small
//! fraction of a domain corpus is repeated inside a general pretraining mix.
//!
//! The crate fits the laws to observed loss curves, forecasts losses and the
//! onset of overfitting, plans the domain fraction for a token budget, builds
//! deterministic interleaving schedules, compares pipeline compute costs and
//! measures corpus divergence.
//!
//! Law evaluation is generic over [`Scalar`]; fitting runs in `f64`.

// `!(x > 0.0)` is deliberate throughout: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod curve;
pub mod divergence;
pub mod error;
pub mod fit;
pub mod forecast;
pub mod ingest;
pub mod law;
pub mod mixture;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod units;

pub use curve::{LossCurve, LossPoint, RunConfig, Split};
pub use error::{Error, Result};
pub use fit::{fit_delta_test_law, fit_overfitting_law, fit_power_law, FitOptions};
pub use law::{DeltaTestLawParams, FitReport, OverfitLawParams};
pub use scalar::Scalar;
pub use units::{MixtureFraction, TokenCount, DEFAULT_TOKEN_UNIT};

pub type OverfitLaw = OverfitLawParams<f64>;
pub type OverfitLawF32 = OverfitLawParams<f32>;
pub type DeltaTestLaw = DeltaTestLawParams<f64>;
pub type DeltaTestLawF32 = DeltaTestLawParams<f32>;

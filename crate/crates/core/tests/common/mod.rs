#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sptlaw::{MixtureFraction, OverfitLaw, DEFAULT_TOKEN_UNIT};

pub fn frac(v: f64) -> MixtureFraction {
    MixtureFraction::new(v).unwrap()
}

pub fn rel(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

/// A random law inside the constrained family, with every coefficient
/// bounded away from zero so relative recovery is meaningful.
pub fn random_truth(rng: &mut ChaCha8Rng) -> OverfitLaw {
    let b_train_g = -rng.random_range(0.1..0.6);
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    OverfitLaw {
        a_train: rng.random_range(1.0..5.0),
        b_train_g,
        b_train_s: b_train_g - rng.random_range(0.5..3.0),
        b_gap_g: -rng.random_range(0.02..0.3),
        b_gap_s: rng.random_range(2.0..10.0),
        alpha1: rng.random_range(0.5..5.0),
        alpha2: rng.random_range(0.5..1.5),
        alpha3: sign(rng) * rng.random_range(1.0..10.0),
        kappa0: rng.random_range(1.5..3.0),
        kappa1: rng.random_range(0.05..0.3),
        kappa2: rng.random_range(0.002..0.05),
        kappa3: sign(rng) * rng.random_range(0.5..3.0),
        token_unit: DEFAULT_TOKEN_UNIT,
    }
}

pub fn truths(n: usize, seed: u64) -> Vec<OverfitLaw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_truth(&mut rng)).collect()
}

/// Valid laws for property tests, seeded through the same sampler.
pub fn any_truth() -> impl proptest::strategy::Strategy<Value = OverfitLaw> {
    use proptest::prelude::*;
    any::<u64>().prop_map(|seed| random_truth(&mut ChaCha8Rng::seed_from_u64(seed)))
}

pub fn any_fraction() -> impl proptest::strategy::Strategy<Value = MixtureFraction> {
    use proptest::prelude::*;
    (0u32..=10_000).prop_map(|k| MixtureFraction::new(k as f64 / 10_000.0).unwrap())
}

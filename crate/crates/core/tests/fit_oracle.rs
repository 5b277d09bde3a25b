mod common;

use common::*;
use sptlaw::fit::{Strategy, GAP_FLOOR};
use sptlaw::ingest::RunDataset;
use sptlaw::law::PARAM_NAMES;
use sptlaw::synth::{generate_synthetic, SyntheticSpec, STANDARD_DELTAS};
use sptlaw::{fit_overfitting_law, FitOptions, MixtureFraction, OverfitLaw, Split};

fn deltas() -> Vec<MixtureFraction> {
    STANDARD_DELTAS.iter().map(|&d| frac(d)).collect()
}

fn worst_param_error(got: &OverfitLaw, want: &OverfitLaw) -> (f64, &'static str) {
    PARAM_NAMES
        .iter()
        .zip(got.to_array())
        .zip(want.to_array())
        .map(|((name, g), w)| (rel(g, w), *name))
        .fold((0.0, ""), |acc, x| if x.0 > acc.0 { x } else { acc })
}

#[test]
fn noiseless_truths_are_recovered() {
    for (i, truth) in truths(20, 99).into_iter().enumerate() {
        let data = generate_synthetic(&SyntheticSpec::standard(truth, 0.0, i as u64)).unwrap();
        let (law, report) = fit_overfitting_law(&data, &deltas(), &FitOptions::default()).unwrap();
        let (err, name) = worst_param_error(&law, &truth);
        assert!(err <= 1e-3, "truth {i}: {name} off by {err:e}");
        assert!(report.converged);
    }
}

#[test]
fn staged_and_joint_agree_on_noiseless_data() {
    for (i, truth) in truths(3, 5).into_iter().enumerate() {
        let data = generate_synthetic(&SyntheticSpec::standard(truth, 0.0, 0)).unwrap();
        let staged = fit_overfitting_law(&data, &deltas(), &FitOptions::default()).unwrap().0;
        let joint_options = FitOptions { strategy: Strategy::Joint, ..FitOptions::default() };
        let joint = fit_overfitting_law(&data, &deltas(), &joint_options).unwrap().0;
        let (err, name) = worst_param_error(&joint, &staged);
        assert!(err <= 1e-3, "truth {i}: {name} differs by {err:e}");
    }
}

#[test]
fn fits_are_bit_identical_across_runs() {
    let truth = truths(1, 17).remove(0);
    let data = generate_synthetic(&SyntheticSpec::standard(truth, 0.01, 3)).unwrap();
    for strategy in [Strategy::Staged, Strategy::Joint] {
        let options = FitOptions { strategy, restarts: 8, ..FitOptions::default() };
        let a = fit_overfitting_law(&data, &deltas(), &options).unwrap();
        let b = fit_overfitting_law(&data, &deltas(), &options).unwrap();
        assert_eq!(a.0.to_array().map(f64::to_bits), b.0.to_array().map(f64::to_bits));
        assert_eq!(a.1, b.1);
    }
}

/// Log-space train residuals, and gap residuals scaled by the observed test
/// loss with negative gaps floored at half weight.
fn recomputed_mse(data: &RunDataset, law: &OverfitLaw, deltas: &[MixtureFraction]) -> f64 {
    let (mut sse, mut total_w) = (0.0, 0.0);
    for &d in deltas {
        for run in data.runs_with_delta(d) {
            let train = data.curve(&run.run_id, Split::DomainTrain).unwrap();
            let test = data.curve(&run.run_id, Split::DomainTest).unwrap();
            for p in train.points() {
                let r = p.loss.ln() - law.train_loss(p.tokens, d).unwrap().ln();
                sse += r * r;
                total_w += 1.0;
            }
            for p in test.points() {
                let Some(tr) = train.points().iter().find(|q| q.tokens == p.tokens) else { continue };
                let raw = p.loss - tr.loss;
                let (g, w) = if raw < 0.0 { (GAP_FLOOR, 0.5) } else { (raw, 1.0) };
                let r = (g - law.gap(p.tokens, d).unwrap()) / p.loss;
                sse += w * r * r;
                total_w += w;
            }
        }
    }
    sse / total_w
}

#[test]
fn reported_residual_matches_recomputation() {
    let truth = truths(1, 23).remove(0);
    let data = generate_synthetic(&SyntheticSpec::standard(truth, 0.01, 4)).unwrap();
    let (law, report) = fit_overfitting_law(&data, &deltas(), &FitOptions::default()).unwrap();
    let want = recomputed_mse(&data, &law, &deltas());
    assert!(rel(report.residual_mse, want) <= 1e-12, "{} vs {want}", report.residual_mse);
    assert!(report.warnings.iter().any(|w| w.contains("floored")));
}

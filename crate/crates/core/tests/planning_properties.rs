mod common;

use common::*;
use proptest::prelude::*;
use sptlaw::cost::{break_even_tokens_f64, cumulative_cost_curve, cumulative_flops, CostModel, Pipeline};
use sptlaw::forecast::{compute_multiplier, crossover, optimal_delta, overfit_onset_units, relative_gain, TokenRange};
use sptlaw::law::Exponent;
use sptlaw::mixture::{build_schedule, epochs_exact, schedule_summary, schedule_to_binary, Source};
use sptlaw::{DeltaTestLaw, RunConfig, TokenCount, DEFAULT_TOKEN_UNIT};

const B: u64 = 1_000_000_000;

proptest! {
    #[test]
    fn onset_is_a_local_minimum(p in any_truth(), d in any_fraction()) {
        prop_assume!(p.exponent(d, Exponent::Gap) > 0.0 && p.a_gap(d) > 0.0);
        let u = overfit_onset_units(&p, d).unwrap();
        prop_assume!((1e-6..1e9).contains(&u));
        let at = p.test_loss_at(u, d).unwrap();
        prop_assert!(p.test_loss_at(u * (1.0 - 1e-3), d).unwrap() > at);
        prop_assert!(p.test_loss_at(u * (1.0 + 1e-3), d).unwrap() > at);
    }

    #[test]
    fn crossover_brackets_a_sign_change(
        p in any_truth(), k in 0u32..=100, b in -2.0f64..-0.1, c_b in 0.0f64..0.5, gap in 0.01f64..0.5, root in 2.0f64..500.0,
    ) {
        // large δ makes the pretraining loss so big that the difference cancels
        let d = frac(k as f64 / 1000.0);
        let improvement = |a, b, c| DeltaTestLaw { delta: d, a, b, c, token_unit: DEFAULT_TOKEN_UNIT };
        let law_a = improvement(0.0, 0.0, c_b + gap);
        let law_b = improvement(gap * root.powf(-b), b, c_b);
        let range = TokenRange::new(TokenCount(B), TokenCount(1000 * B)).unwrap();
        let got = crossover((&p, &law_a), (&p, &law_b), range).unwrap();
        let t = got.tokens.unwrap();
        let post = |law: &DeltaTestLaw, t: f64| {
            p.test_loss_at(t / B as f64, d).unwrap() - law.eval_at(t / B as f64).unwrap().value
        };
        let diff = |t: f64| post(&law_a, t) - post(&law_b, t);
        prop_assert!(diff(t * (1.0 - 1e-4)) > 0.0);
        prop_assert!(diff(t * (1.0 + 1e-4)) < 0.0);
    }

    #[test]
    fn chosen_delta_has_the_lowest_prediction(p in any_truth(), ds in prop::collection::vec(any_fraction(), 1..8), t in 1u64..500) {
        let plan = optimal_delta(&p, &[], TokenCount(t * B), &ds).unwrap();
        prop_assert!(plan.candidates.iter().all(|c| c.predicted_loss >= plan.predicted_loss));
        prop_assert!(plan.candidates.iter().any(|c| c.delta == plan.chosen_delta));
    }

    #[test]
    fn multiplier_of_a_curve_with_itself_is_one(losses in prop::collection::vec(0.1f64..10.0, 1..20)) {
        let curve: Vec<(TokenCount, f64)> =
            losses.iter().enumerate().map(|(i, &l)| (TokenCount((i as u64 + 1) * B), l)).collect();
        prop_assert_eq!(compute_multiplier(&curve, &curve).unwrap(), 1.0);
    }

    #[test]
    fn relative_gain_ignores_scale(l1 in 0.1f64..10.0, l2 in 0.1f64..10.0, k in 0.01f64..100.0) {
        let (a, b) = (relative_gain(l1, l2).unwrap(), relative_gain(k * l1, k * l2).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn schedules_partition_the_budget(
        total in 1u64..3_000_000, g in 1u64..40_000, k in 0u32..=1000, start in 0.0f64..1.0, scpt in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut config = RunConfig::spt("r", frac(k as f64 / 1000.0), TokenCount(1_000), TokenCount(total));
        let offset = (start * total as f64) as u64;
        if scpt {
            config = config.with_scpt_start(TokenCount(offset));
        }
        let s = build_schedule(&config, TokenCount(g), seed).unwrap();
        prop_assert_eq!(s.segments.first().unwrap().start, 0);
        prop_assert_eq!(s.segments.last().unwrap().end, total);
        prop_assert!(s.segments.windows(2).all(|w| w[0].end == w[1].start && w[0].source != w[1].source));
        if scpt {
            prop_assert!(s.segments.iter().all(|x| x.source == Source::General || x.start >= offset));
        }
        prop_assert!(schedule_summary(&s).max_prefix_deviation <= 1.0);
        prop_assert_eq!(schedule_to_binary(&s), schedule_to_binary(&build_schedule(&config, TokenCount(g), seed).unwrap()));
    }

    #[test]
    fn epochs_times_corpus_is_mixed_tokens(t in 0u64..1_000_000_000_000_000, k in 0u32..=100_000, size in 1u64..1_000_000_000_000) {
        let d = frac(k as f64 / 100_000.0);
        let e = epochs_exact(TokenCount(t), d, TokenCount(size)).unwrap();
        prop_assert_eq!(e * TokenCount(size).to_rational(), d.to_rational() * TokenCount(t).to_rational());
    }

    #[test]
    fn cost_curves_cross_at_break_even(
        spt in 1u64..10, extra in 1u64..20, pre in 1u64..500, ft in 1u64..10, c_infer in 0.1f64..10.0, k in 0.1f64..10.0,
    ) {
        let m = CostModel {
            infer_flops_per_param_token: c_infer,
            spt_params: spt * B,
            base_params: (spt + extra) * B,
            spt_pretrain_tokens: TokenCount(pre * B),
            spt_ft_tokens: TokenCount(ft * B),
            base_ft_tokens: TokenCount(ft * B),
            ..CostModel::default()
        };
        let be = break_even_tokens_f64(&m).unwrap();
        prop_assume!(be > 0.0);
        let (a, b) = (cumulative_flops(&m, Pipeline::Spt, be), cumulative_flops(&m, Pipeline::Baseline, be));
        prop_assert!(((a - b) / a).abs() <= 1e-9);
        let scaled = CostModel { infer_flops_per_param_token: k * c_infer, ..m.clone() };
        prop_assert!((break_even_tokens_f64(&scaled).unwrap() * k / be - 1.0).abs() <= 1e-12);
        let grid: Vec<TokenCount> = (0..20).map(|i| TokenCount(i * 50 * B)).collect();
        let curves = cumulative_cost_curve(&m, &grid).unwrap();
        for series in [&curves.spt, &curves.baseline] {
            prop_assert!(series.windows(2).all(|w| w[1].flops >= w[0].flops));
        }
    }
}

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sptlaw::divergence::{c2st_auc, jsd, profile, roc_auc, EmbeddingSet, SetLabel};

fn tokens() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..40, 3..200)
}

proptest! {
    #[test]
    fn jsd_is_symmetric_and_bounded(a in tokens(), b in tokens(), n in 1usize..=3, bins in 1u64..5000, seed in any::<u64>()) {
        let (p, q) = (profile(&a, n, bins, seed).unwrap(), profile(&b, n, bins, seed).unwrap());
        let (pq, qp) = (jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
        prop_assert_eq!(pq.to_bits(), qp.to_bits());
        prop_assert!((0.0..=1.0).contains(&pq));
    }

    #[test]
    fn flipped_labels_flip_the_auc(scores in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
        let s: Vec<f64> = scores.iter().map(|x| x.0 as f64).collect();
        let labels: Vec<bool> = scores.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (a, b) = (roc_auc(&s, &labels).unwrap(), roc_auc(&s, &flipped).unwrap());
        prop_assert!((a + b - 1.0).abs() <= 1e-15);
    }
}

#[test]
fn shuffled_pool_of_identical_data_is_indistinguishable() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut pool: Vec<Vec<f64>> = (0..4000).map(|_| (0..4).map(|_| normal.sample(&mut rng)).collect()).collect();
    for round in 0..3 {
        pool.shuffle(&mut rng);
        let a = EmbeddingSet::new(pool[..2000].to_vec(), SetLabel::A).unwrap();
        let b = EmbeddingSet::new(pool[2000..].to_vec(), SetLabel::B).unwrap();
        let auc = c2st_auc(&a, &b, 5, round).unwrap();
        assert!((0.45..=0.55).contains(&auc), "round {round}: {auc}");
    }
}

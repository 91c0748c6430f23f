mod common;

use common::oracles::{metrics_oracle, random_session};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routedk::decode::normalize;
use routedk::eval::{match_hits, session_metrics};

#[test]
fn metrics_match_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..100 {
        let (pred, truth) = random_session(&mut rng);
        let r = session_metrics(n, &pred, &truth).unwrap();
        let (p, rec, cov) = metrics_oracle(pred.bundles(), &truth);
        assert_eq!((r.precision, r.recall, r.coverage), (p, rec, cov), "session {n}");
        for v in [r.precision, r.recall, r.coverage.unwrap_or(0.0)] {
            assert!((0.0..=1.0).contains(&v));
        }
        let hits = r.precision * pred.bundles().len() as f64;
        assert_eq!(hits, hits.round());
        let found = r.recall * truth.len() as f64;
        assert!((found - found.round()).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn adding_a_truth_item_never_lowers_coverage(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pred, truth) = random_session(&mut rng);
        let hits = match_hits(&pred, &truth);
        for h in hits.into_iter().flatten() {
            let b = &pred.bundles()[h.predicted];
            let g = &truth[h.truth];
            if let Some(&extra) = g.iter().find(|i| !b.contains(i)) {
                let mut grown = b.clone();
                grown.push(extra);
                let grown = normalize(&[grown]);
                let after = match_hits(&grown, &[g.clone()])[0].unwrap();
                prop_assert!(after.ratio >= h.ratio);
            }
        }
    }

    #[test]
    fn metrics_ignore_prediction_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pred, truth) = random_session(&mut rng);
        let mut raw: Vec<Vec<usize>> = pred.bundles().to_vec();
        for b in raw.iter_mut() {
            b.shuffle(&mut rng);
        }
        raw.shuffle(&mut rng);
        let a = session_metrics(0, &pred, &truth).unwrap();
        let b = session_metrics(0, &normalize(&raw), &truth).unwrap();
        prop_assert_eq!((a.precision, a.recall, a.coverage), (b.precision, b.recall, b.coverage));
    }
}

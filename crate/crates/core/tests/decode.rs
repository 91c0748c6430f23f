mod common;

use common::oracles::{random_voters, vote_oracle};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routedk::backbone::{serialize_session, InputVariant};
use routedk::decode::{
    decode, majority_vote, normalize, read_predictions, tts_generate, write_predictions, DecodeConfig, FusedModel,
    Prediction,
};
use routedk::fusion::{Fusion, RouterParams};

#[test]
fn vote_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let voters = random_voters(&mut rng);
        assert_eq!(majority_vote(&voters).unwrap().winner, vote_oracle(&voters));
    }
}

fn bundles() -> impl Strategy<Value = Vec<Vec<usize>>> {
    proptest::collection::vec(proptest::collection::vec(0usize..12, 0..5), 0..5)
}

proptest! {
    #[test]
    fn normalize_is_idempotent(b in bundles()) {
        let n = normalize(&b);
        prop_assert_eq!(normalize(&n.0), n.clone());
        prop_assert!(n.0.iter().all(|x| x.len() >= 2 && x.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn normalize_ignores_order(b in bundles(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = b.clone();
        for x in shuffled.iter_mut() {
            x.shuffle(&mut rng);
        }
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(normalize(&shuffled).key(), normalize(&b).key());
    }
}

#[test]
fn tts_degenerate_cases_and_determinism() {
    let fx = common::fixture(12);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 70);
    let fusion = Fusion::Dynamic(RouterParams::random(cfg.layers, cfg.width, 3, 0.5, 2));
    let model = FusedModel { backbone: &fx.backbone, experts: &experts, fusion: &fusion };
    for s in fx.splits.test.iter().take(3) {
        let input = serialize_session(s, InputVariant::Raw, None, &fx.vocab).unwrap();
        let greedy = decode(&model, &input, 0.0, 20, 0, 0).unwrap();
        let (gb, _) = routedk::decode::parse_bundles(&greedy.tokens, s, &fx.vocab);

        let one = DecodeConfig { samples: 1, max_len: 20, ..DecodeConfig::default() };
        let r1 = tts_generate(&model, s, &input, &one, &fx.vocab).unwrap();
        assert_eq!(r1.bundles, normalize(&gb));

        let cold = DecodeConfig { samples: 8, tts_temperature: 0.0, max_len: 20, ..DecodeConfig::default() };
        let r8 = tts_generate(&model, s, &input, &cold, &fx.vocab).unwrap();
        assert_eq!(r8.bundles, r1.bundles);
        assert_eq!(r8.report.vote_count, 8);

        let warm = DecodeConfig { samples: 8, max_len: 20, seed: 4, ..DecodeConfig::default() };
        let a = tts_generate(&model, s, &input, &warm, &fx.vocab).unwrap();
        let b = tts_generate(&model, s, &input, &warm, &fx.vocab).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report.tally.iter().map(|(_, c)| c).sum::<usize>(), 8);
    }
}

#[test]
fn predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictions.jsonl");
    let preds = vec![
        Prediction { session_id: 3, bundles: vec![vec![1, 4]], n_candidates: 8, vote_count: 5, truncated: false },
        Prediction { session_id: 4, bundles: vec![], n_candidates: 1, vote_count: 1, truncated: true },
    ];
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(r#"{"session_id":3,"bundles":[[1,4]],"n_candidates":8,"vote_count":5,"truncated":false}"#));
}

#![allow(dead_code)]

pub mod oracles;

use routedk::backbone::{build_vocab, BackboneWeights, ModelConfig, Vocab};
use routedk::worldgen::{
    generate_sessions, generate_world, oracle_distill_fine_grained, oracle_distill_high_level, split_chronological,
    KnowledgeStore, Splits, WorldConfig,
};

pub struct Fixture {
    pub vocab: Vocab,
    pub splits: Splits,
    pub knowledge: KnowledgeStore,
    pub backbone: BackboneWeights<f32>,
}

pub fn small_world() -> WorldConfig {
    WorldConfig { items: 40, categories: 4, intents: 8, sessions: 60, pool_size: 6, ..WorldConfig::default() }
}

pub fn tiny_model(vocab_size: usize) -> ModelConfig {
    ModelConfig { layers: 2, width: 16, heads: 2, ffn: 32, max_context: 128, vocab_size }
}

/// Small seeded world with an untrained, frozen backbone.
pub fn fixture(seed: u64) -> Fixture {
    let config = small_world();
    let world = generate_world(&config, seed).unwrap();
    let sessions = generate_sessions(&world, &config, seed).unwrap();
    let splits = split_chronological(&sessions).unwrap();
    let mut records = oracle_distill_high_level(&world);
    records.extend(sessions.iter().map(oracle_distill_fine_grained));
    let knowledge = KnowledgeStore::from_records(&records);
    let vocab = build_vocab(&config.vocab_spec(), 10_000).unwrap();
    let mut backbone = BackboneWeights::init(&tiny_model(vocab.len()), seed).unwrap();
    backbone.freeze();
    Fixture { vocab, splits, knowledge, backbone }
}

/// Adapter with random `B`, so its update is non-zero.
pub fn noisy_adapter(
    model: &routedk::backbone::ModelConfig,
    rank: usize,
    seed: u64,
) -> routedk::lora::LoraAdapter<f32> {
    use rand::SeedableRng;
    let cfg = routedk::lora::LoraConfig { rank, scale: rank as f64, init_std: 0.3 };
    let mut a = routedk::lora::LoraAdapter::init(model, &cfg, seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xB);
    for layer in a.layers.iter_mut() {
        for pair in layer.iter_mut() {
            pair.b = routedk::numerics::Tensor::randn(pair.b.shape(), 0.3, &mut rng);
        }
    }
    a
}

pub fn noisy_experts(model: &routedk::backbone::ModelConfig, seed: u64) -> routedk::lora::ExpertSet<f32> {
    use routedk::lora::ExpertKind;
    routedk::lora::ExpertSet::new(
        ExpertKind::FUSED.iter().enumerate().map(|(i, &k)| (k, noisy_adapter(model, 4, seed + i as u64))).collect(),
    )
    .unwrap()
}

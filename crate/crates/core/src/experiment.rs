//! End-to-end run on a generated world: pretrain, train the experts, fit the
//! fusion strategies, decode the test split and score every strategy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{
    build_vocab, pretrain_backbone, pretrain_corpus, serialize_session, PretrainCorpus, BackboneWeights, InputVariant, ModelConfig, Vocab,
};
use crate::decode::{tts_generate, DecodeConfig, FusedModel, Prediction};
use crate::eval::{aggregate, session_metrics, split_fingerprint, MetricsReport, RunReport};
use crate::fusion::{
    fusion_eval_loss, merge_ties, select_lr, train_router, train_static, Fusion, FusionTrainConfig, TiesConfig,
};
use crate::lora::{train_expert, ExpertKind, ExpertSet, ExpertTrainConfig, LoraAdapter};
use crate::training::{TrainConfig, TrainReport};
use crate::worldgen::{
    generate_sessions, generate_world, oracle_distill_fine_grained, oracle_distill_high_level, split_chronological,
    KnowledgeStore, Session, Splits, WorldConfig,
};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub pretrain_corpus: PretrainCorpus,
    pub expert: ExpertTrainConfig,
    pub fusion: FusionTrainConfig,
    pub ties: TiesConfig,
    pub decode: DecodeConfig,
    /// Candidates for the test-time-scaling run of the dynamic strategy.
    pub tts_samples: usize,
    pub vocab_ceiling: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig { epochs: 2, lr: 1e-3, batch_size: 8 },
            pretrain_corpus: PretrainCorpus::default(),
            expert: ExpertTrainConfig::default(),
            fusion: FusionTrainConfig::default(),
            ties: TiesConfig::default(),
            decode: DecodeConfig::default(),
            tts_samples: 8,
            vocab_ceiling: 4096,
        }
    }
}

impl ExperimentConfig {
    /// Smaller model that keeps a full run within a few CPU-minutes.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            world: WorldConfig { seed, ..WorldConfig::default() },
            model: ModelConfig { layers: 2, width: 64, heads: 4, ffn: 128, max_context: 128, vocab_size: 0 },
            pretrain: TrainConfig { epochs: 3, lr: 2e-3, batch_size: 8 },
            expert: ExpertTrainConfig { train: TrainConfig { epochs: 6, lr: 3e-3, batch_size: 8 }, ..Default::default() },
            fusion: FusionTrainConfig { train: TrainConfig { epochs: 3, ..TrainConfig::default() }, ..Default::default() },
            ..Self::default()
        }
    }
}

/// Everything the pipeline derives from a world config and seed.
pub struct Dataset {
    pub splits: Splits,
    pub knowledge: KnowledgeStore,
    pub vocab: Vocab,
}

pub fn build_dataset(world: &WorldConfig, seed: u64, vocab_ceiling: usize) -> Result<Dataset, Error> {
    let w = generate_world(world, seed)?;
    let sessions = generate_sessions(&w, world, seed)?;
    let splits = split_chronological(&sessions)?;
    let mut records = oracle_distill_high_level(&w);
    records.extend(sessions.iter().map(oracle_distill_fine_grained));
    let knowledge = KnowledgeStore::from_records(&records);
    let vocab = build_vocab(&world.vocab_spec(), vocab_ceiling)?;
    Ok(Dataset { splits, knowledge, vocab })
}

/// Decodes every session and returns the predictions in session order.
pub fn predict(
    model: &FusedModel,
    sessions: &[Session],
    variant: InputVariant,
    knowledge: Option<&KnowledgeStore>,
    config: &DecodeConfig,
    vocab: &Vocab,
) -> Result<Vec<Prediction>, Error> {
    let run = |s: &Session| -> Result<Prediction, Error> {
        let k = (variant != InputVariant::Raw).then_some(knowledge).flatten();
        let input = serialize_session(s, variant, k, vocab)?;
        let result = tts_generate(model, s, &input, config, vocab)?;
        Ok(Prediction::from_result(s.session_id, &result))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        sessions.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sessions.iter().map(run).collect()
    }
}

/// Scores predictions against the sessions they were made for.
pub fn evaluate(predictions: &[Prediction], sessions: &[Session]) -> Result<MetricsReport, Error> {
    let by_id: std::collections::HashMap<u64, &Prediction> = predictions.iter().map(|p| (p.session_id, p)).collect();
    let results = sessions
        .iter()
        .map(|s| {
            let predicted = by_id
                .get(&s.session_id)
                .map(|p| crate::decode::normalize(&p.bundles))
                .unwrap_or_default();
            session_metrics(s.session_id, &predicted, &s.bundles)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(results)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenAudit {
    pub backbone: String,
    pub experts: Vec<(ExpertKind, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub split_fingerprint: String,
    pub runs: Vec<RunReport>,
    pub pretrain: TrainReport,
    pub experts: Vec<(ExpertKind, TrainReport)>,
    /// `(lr, validation loss)` grids of the dynamic and static fits.
    pub router_grid: Vec<(f64, f64)>,
    pub static_grid: Vec<(f64, f64)>,
    pub router_lr: f64,
    pub static_lr: f64,
    pub average_val_loss: f64,
    pub before_fusion: FrozenAudit,
    pub after_fusion: FrozenAudit,
    pub seconds: f64,
}

impl ExperimentReport {
    pub fn run(&self, name: &str) -> Option<&MetricsReport> {
        self.runs.iter().find(|r| r.name == name).map(|r| &r.metrics)
    }
}

fn audit(backbone: &BackboneWeights<f32>, experts: &ExpertSet<f32>) -> FrozenAudit {
    FrozenAudit { backbone: backbone.content_hash(), experts: experts.hashes() }
}

/// Trained artifacts of one run.
pub struct Trained {
    pub backbone: BackboneWeights<f32>,
    pub experts: ExpertSet<f32>,
    pub merged_baseline: LoraAdapter<f32>,
    pub strategies: Vec<Fusion<f32>>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, Trained), Error> {
    let start = Instant::now();
    let seed = config.seed;
    let data = build_dataset(&config.world, seed, config.vocab_ceiling)?;
    let (train, val, test) = (&data.splits.train, &data.splits.val, &data.splits.test);
    let vocab = &data.vocab;
    let k = Some(&data.knowledge);

    let model = ModelConfig { vocab_size: vocab.len(), ..config.model.clone() };
    let corpus = pretrain_corpus(train, &data.knowledge, vocab, config.pretrain_corpus)?;
    let (backbone, pretrain) = pretrain_backbone(&corpus, &model, &config.pretrain, seed)?;
    log::info!("pretrained backbone in {:.1}s", start.elapsed().as_secs_f64());

    let mut adapters = Vec::new();
    let mut expert_reports = Vec::new();
    for kind in [ExpertKind::Base, ExpertKind::HighLevel, ExpertKind::FineGrained, ExpertKind::MergedBaseline] {
        let knowledge = (kind != ExpertKind::Base).then_some(&data.knowledge);
        let (adapter, report) = train_expert(kind, train, knowledge, &backbone, vocab, &config.expert, seed)?;
        adapters.push((kind, adapter));
        expert_reports.push((kind, report));
    }
    log::info!("trained experts at {:.1}s", start.elapsed().as_secs_f64());
    let (_, merged_baseline) = adapters.pop().expect("four experts");
    let experts = ExpertSet::new(adapters)?;

    let before = audit(&backbone, &experts);
    let average_val_loss = fusion_eval_loss(&Fusion::Average, val, &backbone, &experts, vocab)?;
    let router = select_lr(&config.fusion.lr_grid, |lr| {
        let (r, _) = train_router(train, &backbone, &experts, vocab, &config.fusion, lr, seed)?;
        let f = Fusion::Dynamic(r);
        let loss = fusion_eval_loss(&f, val, &backbone, &experts, vocab)?;
        Ok((f, loss))
    })?;
    let stat = select_lr(&config.fusion.lr_grid, |lr| {
        let (s, _) = train_static(train, &backbone, &experts, vocab, &config.fusion, lr, seed)?;
        let f = Fusion::Static(s);
        let loss = fusion_eval_loss(&f, val, &backbone, &experts, vocab)?;
        Ok((f, loss))
    })?;
    let after = audit(&backbone, &experts);
    log::info!("fitted fusion at {:.1}s", start.elapsed().as_secs_f64());

    let ties = Fusion::Merged(merge_ties(&experts, &config.ties)?);
    let fp = split_fingerprint(test);
    let greedy = DecodeConfig { samples: 1, seed, ..config.decode.clone() };
    let tts = DecodeConfig { samples: config.tts_samples, seed, ..config.decode.clone() };
    let mut runs = Vec::new();
    let mut score = |name: String, model: FusedModel, variant: InputVariant, decode: &DecodeConfig| -> Result<(), Error> {
        let preds = predict(&model, test, variant, k, decode, vocab)?;
        let metrics = evaluate(&preds, test)?;
        log::info!("{name}: P {:.4} R {:.4} at {:.1}s", metrics.precision, metrics.recall, start.elapsed().as_secs_f64());
        runs.push(RunReport { name, split_fingerprint: fp.clone(), metrics });
        Ok(())
    };
    for kind in ExpertKind::FUSED {
        let f = Fusion::Single(kind);
        score(kind.name().into(), FusedModel { backbone: &backbone, experts: &experts, fusion: &f }, kind.variant(), &greedy)?;
    }
    let merged_set = ExpertSet::single(ExpertKind::MergedBaseline, merged_baseline.clone());
    let single_merged = Fusion::Single(ExpertKind::MergedBaseline);
    score(
        "merged".into(),
        FusedModel { backbone: &backbone, experts: &merged_set, fusion: &single_merged },
        InputVariant::Merged,
        &greedy,
    )?;
    let strategies = vec![Fusion::Average, ties, stat.value, router.value];
    for f in &strategies {
        score(f.name(), FusedModel { backbone: &backbone, experts: &experts, fusion: f }, InputVariant::Raw, &greedy)?;
    }
    if config.tts_samples > 1 {
        let dynamic = strategies.last().expect("dynamic strategy");
        score(
            format!("dynamic-tts{}", config.tts_samples),
            FusedModel { backbone: &backbone, experts: &experts, fusion: dynamic },
            InputVariant::Raw,
            &tts,
        )?;
    }

    let report = ExperimentReport {
        seed,
        split_fingerprint: fp,
        runs,
        pretrain,
        experts: expert_reports,
        router_grid: router.losses,
        static_grid: stat.losses,
        router_lr: router.lr,
        static_lr: stat.lr,
        average_val_loss,
        before_fusion: before,
        after_fusion: after,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, Trained { backbone, experts, merged_baseline, strategies }))
}

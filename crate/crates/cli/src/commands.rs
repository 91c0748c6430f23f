use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use routedk::backbone::{build_vocab, pretrain_backbone, pretrain_corpus, BackboneWeights, InputVariant, ModelConfig, Vocab};
use routedk::checkpoint;
use routedk::decode::{read_predictions, write_predictions, FusedModel};
use routedk::eval::{compare_strategies, split_fingerprint, RunReport};
use routedk::experiment::{evaluate, predict, ExperimentConfig};
use routedk::fusion::{
    fusion_eval_loss, merge_average, merge_ties, route_trace, select_lr, train_router, train_static, Fusion,
    TiesConfig,
};
use routedk::lora::{train_expert, ExpertKind, ExpertSet};
use routedk::manifest::{load_config, RunManifest, SEED_ENV};
use routedk::worldgen::{
    emit_prompt_templates, generate_sessions, generate_world, load_knowledge_jsonl, oracle_distill_fine_grained,
    oracle_distill_high_level, read_sessions_jsonl, split_chronological, write_knowledge_jsonl,
    write_sessions_jsonl, KnowledgeStore, Session, Splits, TokenAliases,
};

use crate::{ExpertArg, Failure, FusionArg, MergeArg, ModeArg, SplitArg, Teacher};

type CmdResult = Result<(), Failure>;

const SESSIONS: &str = "sessions.jsonl";
const VOCAB: &str = "vocab.json";
const CONFIG: &str = "config.json";
const KNOWLEDGE: &str = "knowledge.jsonl";
const BACKBONE: &str = "backbone.rdk";
const ROUTER: &str = "router.rdk";
const STATIC: &str = "static.rdk";

fn expert_kind(e: ExpertArg) -> ExpertKind {
    match e {
        ExpertArg::Base => ExpertKind::Base,
        ExpertArg::High => ExpertKind::HighLevel,
        ExpertArg::Fine => ExpertKind::FineGrained,
        ExpertArg::Merged => ExpertKind::MergedBaseline,
    }
}

fn expert_file(kind: ExpertKind) -> String {
    format!("expert-{}.rdk", kind.name())
}

fn merge_file(strategy: MergeArg) -> &'static str {
    match strategy {
        MergeArg::Ties => "merge-ties.rdk",
        MergeArg::Average => "merge-average.rdk",
    }
}

pub struct Context {
    dir: PathBuf,
    config: ExperimentConfig,
    manifest: RunManifest,
    name: String,
}

impl Context {
    pub fn open(dir: &Path, config: Option<&Path>, argv: Vec<String>) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let stored = dir.join(CONFIG);
        let path = config.map(Path::to_path_buf).or_else(|| stored.exists().then_some(stored));
        let seed = std::env::var(SEED_ENV).ok();
        let config = load_config(path.as_deref(), seed.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
        let manifest = RunManifest::new(argv, &config);
        Ok(Self { dir: dir.to_path_buf(), config, manifest, name: "run".into() })
    }

    pub fn finish(self) -> CmdResult {
        let path = self.dir.join("manifests").join(format!("{}.json", self.name));
        self.manifest.write(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read_input(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        self.manifest.input(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(p)
    }

    fn sessions(&mut self) -> anyhow::Result<Vec<Session>> {
        let p = self.read_input(SESSIONS)?;
        Ok(read_sessions_jsonl(&p)?)
    }

    fn splits(&mut self) -> anyhow::Result<Splits> {
        Ok(split_chronological(&self.sessions()?)?)
    }

    fn split(&mut self, which: SplitArg) -> anyhow::Result<Vec<Session>> {
        let s = self.splits()?;
        Ok(match which {
            SplitArg::Train => s.train,
            SplitArg::Val => s.val,
            SplitArg::Test => s.test,
        })
    }

    fn vocab(&mut self) -> anyhow::Result<Vocab> {
        let p = self.read_input(VOCAB)?;
        Ok(Vocab::from_json(&std::fs::read_to_string(&p)?)?)
    }

    fn knowledge(&mut self, path: Option<PathBuf>, vocab: &Vocab) -> anyhow::Result<KnowledgeStore> {
        let p = path.unwrap_or_else(|| self.path(KNOWLEDGE));
        self.manifest.input(&p).with_context(|| format!("reading {}", p.display()))?;
        let records = load_knowledge_jsonl(&p, vocab, &TokenAliases::new())?;
        Ok(KnowledgeStore::from_records(&records))
    }

    fn backbone(&mut self) -> anyhow::Result<BackboneWeights<f32>> {
        let p = self.read_input(BACKBONE)?;
        Ok(checkpoint::load_backbone(&p)?)
    }

    fn expert(&mut self, path: &Path) -> anyhow::Result<(ExpertKind, routedk::lora::LoraAdapter<f32>)> {
        self.manifest.input(path).with_context(|| format!("reading {}", path.display()))?;
        let (_, kind, adapter) = checkpoint::load_adapter(path)?;
        Ok((kind, adapter))
    }

    fn fused_experts(&mut self) -> anyhow::Result<ExpertSet<f32>> {
        let mut experts = Vec::new();
        for kind in ExpertKind::FUSED {
            let p = self.path(&expert_file(kind));
            experts.push(self.expert(&p)?);
        }
        Ok(ExpertSet::new(experts)?)
    }

    fn model_config(&self, vocab: &Vocab) -> ModelConfig {
        ModelConfig { vocab_size: vocab.len(), ..self.config.model.clone() }
    }

    fn print_hashes(stage: &str, backbone: &BackboneWeights<f32>, experts: &ExpertSet<f32>) -> Vec<String> {
        let mut hashes = vec![backbone.content_hash()];
        println!("{stage}: backbone {}", backbone.content_hash());
        for (kind, h) in experts.hashes() {
            println!("{stage}: expert {:<6} {h}", kind.name());
            hashes.push(h);
        }
        hashes
    }

    pub fn worldgen(&mut self) -> CmdResult {
        self.name = "worldgen".into();
        let c = &self.config;
        let world = generate_world(&c.world, c.seed)?;
        let sessions = generate_sessions(&world, &c.world, c.seed)?;
        let vocab = build_vocab(&c.world.vocab_spec(), c.vocab_ceiling)?;
        write_sessions_jsonl(&self.path(SESSIONS), &sessions)?;
        std::fs::write(self.path(VOCAB), vocab.to_json())?;
        std::fs::write(self.path(CONFIG), serde_json::to_string_pretty(&self.config)?)?;
        let splits = split_chronological(&sessions)?;
        for name in [SESSIONS, VOCAB, CONFIG] {
            let h = routedk::manifest::file_hash(&self.path(name))?;
            self.manifest.artifact(name, h);
        }
        println!(
            "{} sessions ({} train, {} val, {} test), vocabulary of {} tokens",
            sessions.len(),
            splits.train.len(),
            splits.val.len(),
            splits.test.len(),
            vocab.len()
        );
        Ok(())
    }

    pub fn distill(&mut self, teacher: Teacher, file: Option<PathBuf>, aliases: Option<PathBuf>) -> CmdResult {
        self.name = "distill".into();
        let records = match teacher {
            Teacher::Oracle => {
                if file.is_some() || aliases.is_some() {
                    return Err(Failure::Usage("--file and --aliases require --teacher file".into()));
                }
                let world = generate_world(&self.config.world, self.config.seed)?;
                let sessions = self.sessions()?;
                let mut records = oracle_distill_high_level(&world);
                records.extend(sessions.iter().map(oracle_distill_fine_grained));
                records
            }
            Teacher::File => {
                let file = file.ok_or_else(|| Failure::Usage("--teacher file requires --file".into()))?;
                let vocab = self.vocab()?;
                let aliases: TokenAliases = match aliases {
                    Some(p) => {
                        self.manifest.input(&p)?;
                        serde_json::from_str(&std::fs::read_to_string(&p)?)
                            .with_context(|| format!("parsing {}", p.display()))?
                    }
                    None => TokenAliases::new(),
                };
                self.manifest.input(&file)?;
                load_knowledge_jsonl(&file, &vocab, &aliases)?
            }
        };
        let out = self.path(KNOWLEDGE);
        write_knowledge_jsonl(&out, &records)?;
        self.manifest.artifact(KNOWLEDGE, routedk::manifest::file_hash(&out)?);
        let prompts = emit_prompt_templates(&self.path("prompts"))?;
        println!("{} knowledge records, {} prompt templates", records.len(), prompts.len());
        Ok(())
    }

    pub fn pretrain(&mut self) -> CmdResult {
        self.name = "pretrain".into();
        let vocab = self.vocab()?;
        let knowledge = self.knowledge(None, &vocab)?;
        let train = self.splits()?.train;
        let model = self.model_config(&vocab);
        let corpus = pretrain_corpus(&train, &knowledge, &vocab, self.config.pretrain_corpus)?;
        let (backbone, report) = pretrain_backbone(&corpus, &model, &self.config.pretrain, self.config.seed)?;
        let hash = checkpoint::save_backbone(&self.path(BACKBONE), &backbone)?;
        self.manifest.artifact(BACKBONE, hash.clone());
        println!("epoch losses {:?}", report.epoch_losses);
        println!("frozen backbone {hash}");
        Ok(())
    }

    pub fn train_expert(&mut self, expert: ExpertArg, knowledge: Option<PathBuf>) -> CmdResult {
        let kind = expert_kind(expert);
        self.name = format!("train-expert-{}", kind.name());
        if kind == ExpertKind::Base && knowledge.is_some() {
            return Err(Failure::Usage("the base expert trains on raw input and takes no --knowledge".into()));
        }
        let vocab = self.vocab()?;
        let store = match kind {
            ExpertKind::Base => None,
            _ => Some(self.knowledge(knowledge, &vocab)?),
        };
        let backbone = self.backbone()?;
        let train = self.splits()?.train;
        let (adapter, report) =
            train_expert(kind, &train, store.as_ref(), &backbone, &vocab, &self.config.expert, self.config.seed)?;
        let file = expert_file(kind);
        let hash = checkpoint::save_adapter(&self.path(&file), &backbone.config, kind, &adapter)?;
        self.manifest.artifact(&file, hash.clone());
        println!("epoch losses {:?}", report.epoch_losses);
        println!("{} expert {hash}", kind.name());
        Ok(())
    }

    pub fn merge(&mut self, strategy: MergeArg, density: Option<f64>, experts: Vec<PathBuf>) -> CmdResult {
        self.name = merge_file(strategy).trim_end_matches(".rdk").into();
        let paths: Vec<PathBuf> = if experts.is_empty() {
            ExpertKind::FUSED.iter().map(|&k| self.path(&expert_file(k))).collect()
        } else {
            experts
        };
        if strategy == MergeArg::Ties && paths.len() != 3 {
            return Err(anyhow!("ties merging needs exactly 3 experts, got {}", paths.len()).into());
        }
        let mut loaded = Vec::new();
        for p in &paths {
            loaded.push(self.expert(p)?);
        }
        let model = checkpoint::load_adapter(&paths[0])?.0;
        let set = ExpertSet::new(loaded)?;
        let merged = match strategy {
            MergeArg::Ties => {
                let ties = TiesConfig { density: density.unwrap_or(self.config.ties.density) };
                merge_ties(&set, &ties)?
            }
            MergeArg::Average => {
                if density.is_some() {
                    return Err(Failure::Usage("--density applies to ties merging only".into()));
                }
                merge_average(&set)?
            }
        };
        let file = merge_file(strategy);
        let hash = checkpoint::save_merged(&self.path(file), &model, &merged)?;
        self.manifest.artifact(file, hash.clone());
        println!("merged update {hash}");
        Ok(())
    }

    pub fn train_fusion(&mut self, mode: ModeArg, lr_grid: Option<Vec<f64>>) -> CmdResult {
        self.name = match mode {
            ModeArg::Dynamic => "train-fusion-dynamic".into(),
            ModeArg::Static => "train-fusion-static".into(),
        };
        let grid = lr_grid.unwrap_or_else(|| self.config.fusion.lr_grid.clone());
        if grid.is_empty() || grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Failure::Usage("--lr-grid needs positive learning rates".into()));
        }
        let vocab = self.vocab()?;
        let backbone = self.backbone()?;
        let experts = self.fused_experts()?;
        let splits = self.splits()?;
        let before = Self::print_hashes("before", &backbone, &experts);
        let (cfg, seed) = (&self.config.fusion, self.config.seed);
        let fit = |lr: f64| -> Result<(Fusion<f32>, f64), routedk::Error> {
            let f = match mode {
                ModeArg::Dynamic => Fusion::Dynamic(train_router(&splits.train, &backbone, &experts, &vocab, cfg, lr, seed)?.0),
                ModeArg::Static => Fusion::Static(train_static(&splits.train, &backbone, &experts, &vocab, cfg, lr, seed)?.0),
            };
            let loss = fusion_eval_loss(&f, &splits.val, &backbone, &experts, &vocab)?;
            Ok((f, loss))
        };
        let best = select_lr(&grid, fit)?;
        let after = Self::print_hashes("after", &backbone, &experts);
        if before != after {
            return Err(anyhow!("frozen parameters changed during fusion training").into());
        }
        for (lr, loss) in &best.losses {
            println!("lr {lr:e}: validation loss {loss:.5}");
        }
        println!("selected lr {:e}", best.lr);
        let meta = serde_json::json!({ "lr": best.lr, "grid": best.losses });
        let (file, hash) = match &best.value {
            Fusion::Dynamic(r) => (ROUTER, checkpoint::save_router(&self.path(ROUTER), &backbone.config, r, meta)?),
            Fusion::Static(s) => (STATIC, checkpoint::save_static(&self.path(STATIC), &backbone.config, s, meta)?),
            _ => unreachable!("fusion training returns static or dynamic"),
        };
        self.manifest.artifact(file, hash);
        Ok(())
    }

    fn strategy(&mut self, fusion: FusionArg) -> anyhow::Result<(ExpertSet<f32>, Fusion<f32>, InputVariant)> {
        let single = |k: ExpertKind| (Fusion::Single(k), k.variant());
        Ok(match fusion {
            FusionArg::Merged => {
                let p = self.path(&expert_file(ExpertKind::MergedBaseline));
                let (kind, a) = self.expert(&p)?;
                let (f, v) = single(kind);
                (ExpertSet::single(kind, a), f, v)
            }
            FusionArg::Base | FusionArg::High | FusionArg::Fine => {
                let kind = match fusion {
                    FusionArg::Base => ExpertKind::Base,
                    FusionArg::High => ExpertKind::HighLevel,
                    _ => ExpertKind::FineGrained,
                };
                let (f, v) = single(kind);
                (self.fused_experts()?, f, v)
            }
            FusionArg::Average => (self.fused_experts()?, Fusion::Average, InputVariant::Raw),
            FusionArg::Ties => {
                let p = self.read_input(merge_file(MergeArg::Ties))?;
                (self.fused_experts()?, Fusion::Merged(checkpoint::load_merged(&p)?), InputVariant::Raw)
            }
            FusionArg::Static => {
                let p = self.read_input(STATIC)?;
                (self.fused_experts()?, Fusion::Static(checkpoint::load_static(&p)?.1), InputVariant::Raw)
            }
            FusionArg::Dynamic => {
                let p = self.read_input(ROUTER)?;
                (self.fused_experts()?, Fusion::Dynamic(checkpoint::load_router(&p)?.1), InputVariant::Raw)
            }
        })
    }

    pub fn generate(
        &mut self,
        fusion: FusionArg,
        tts: Option<usize>,
        temperature: Option<f64>,
        split: SplitArg,
    ) -> CmdResult {
        let samples = tts.unwrap_or(1);
        if samples == 0 {
            return Err(Failure::Usage("--tts needs at least one sample".into()));
        }
        let label = fusion_name(fusion);
        let run = if samples > 1 { format!("{label}-tts{samples}") } else { label.to_string() };
        self.name = format!("generate-{run}");
        let mut decode = self.config.decode.clone();
        decode.samples = samples;
        decode.seed = self.config.seed;
        if let Some(t) = temperature {
            if samples > 1 {
                decode.tts_temperature = t;
            } else {
                decode.temperature = t;
            }
        }
        decode.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let vocab = self.vocab()?;
        let sessions = self.split(split)?;
        let backbone = self.backbone()?;
        let (experts, f, variant) = self.strategy(fusion)?;
        let knowledge = match variant {
            InputVariant::Raw => None,
            _ => Some(self.knowledge(None, &vocab)?),
        };
        let model = FusedModel { backbone: &backbone, experts: &experts, fusion: &f };
        let preds = predict(&model, &sessions, variant, knowledge.as_ref(), &decode, &vocab)?;
        let file = format!("predictions-{run}.jsonl");
        let out = self.path(&file);
        write_predictions(&out, &preds)?;
        self.manifest.artifact(&file, routedk::manifest::file_hash(&out)?);
        let truncated = preds.iter().filter(|p| p.truncated).count();
        println!("{} predictions written to {} ({truncated} truncated)", preds.len(), out.display());
        Ok(())
    }

    pub fn eval(&mut self, predictions: &Path, name: Option<String>, split: SplitArg) -> CmdResult {
        let name = name.unwrap_or_else(|| {
            let stem = predictions.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            stem.trim_start_matches("predictions-").to_string()
        });
        self.name = format!("eval-{name}");
        self.manifest.input(predictions).with_context(|| format!("reading {}", predictions.display()))?;
        let preds = read_predictions(predictions)?;
        let sessions = self.split(split)?;
        let metrics = evaluate(&preds, &sessions)?;
        println!(
            "{name}: precision {:.4} recall {:.4} coverage {} over {} sessions",
            metrics.precision,
            metrics.recall,
            metrics.coverage.map_or("n/a".into(), |c| format!("{c:.4}")),
            metrics.n_sessions
        );
        let report = RunReport { name: name.clone(), split_fingerprint: split_fingerprint(&sessions), metrics };
        let file = format!("report-{name}.json");
        let out = self.path(&file);
        std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
        self.manifest.artifact(&file, routedk::manifest::file_hash(&out)?);
        Ok(())
    }

    pub fn compare(&mut self, reports: &[PathBuf], baseline: Option<String>) -> CmdResult {
        self.name = "compare".into();
        let mut runs = Vec::with_capacity(reports.len());
        for p in reports {
            self.manifest.input(p).with_context(|| format!("reading {}", p.display()))?;
            let text = std::fs::read_to_string(p)?;
            let run: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            runs.push(run);
        }
        let cmp = compare_strategies(&runs, baseline.as_deref())?;
        print!("{}", cmp.to_text());
        let out = self.path("comparison.json");
        std::fs::write(&out, serde_json::to_string_pretty(&cmp)?)?;
        self.manifest.artifact("comparison.json", routedk::manifest::file_hash(&out)?);
        Ok(())
    }

    pub fn trace(&mut self, session: u64) -> CmdResult {
        self.name = format!("trace-{session}");
        let vocab = self.vocab()?;
        let sessions = self.sessions()?;
        let s = sessions.iter().find(|s| s.session_id == session).ok_or_else(|| anyhow!("no session {session}"))?;
        let backbone = self.backbone()?;
        let (experts, fusion, _) = self.strategy(FusionArg::Dynamic)?;
        let trace = route_trace(s, &backbone, &experts, &fusion, &vocab)?;
        let file = format!("trace-{session}.csv");
        let out = self.path(&file);
        trace.write_csv(BufWriter::new(File::create(&out)?))?;
        self.manifest.artifact(&file, routedk::manifest::file_hash(&out)?);
        for l in &trace.layers {
            let alpha: Vec<String> = l.alpha.iter().map(|a| format!("{a:.4}")).collect();
            println!("layer {}: {}", l.layer, alpha.join(" "));
        }
        Ok(())
    }
}

fn fusion_name(f: FusionArg) -> &'static str {
    match f {
        FusionArg::Base => "base",
        FusionArg::High => "high",
        FusionArg::Fine => "fine",
        FusionArg::Merged => "merged",
        FusionArg::Average => "average",
        FusionArg::Ties => "ties",
        FusionArg::Static => "static",
        FusionArg::Dynamic => "dynamic",
    }
}

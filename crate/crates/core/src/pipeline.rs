//! Declarative runs: a TOML [`RunConfig`] names one pipeline variant, its
//! inputs and settings; [`run`] executes it and persists the run file, the
//! probability sidecar, logs, model artifacts and (with gold labels) metrics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::{
    balance, provenance_jsonl, AugmentError, AugmentedExample, BalanceMethod, CannedGenerator, EdaParams,
    GenerationControls, GeneratorClient, NlaSchedule, SynonymLexicon,
};
use crate::baseline::{
    build_priority_table, embed_concat, map_priority, BaselineError, EmbeddingProvider, GaussianNb, HashEmbedding,
    PriorityTable,
};
use crate::corpus::{binarize, load_corpus, split_train_dev, CorpusError, Taxonomy, TweetRecord};
use crate::ensemble::{ensemble, postprocess_irrelevant, EnsembleError, IrrelevantScope, Prediction};
use crate::metrics::{aggregate_leaderboard, evaluate, Leaderboard, MetricReport, MetricsError, PriorityLevels};
use crate::mtl::{log_to_jsonl, train, Checkpoint, DeskEncoder, DeskEncoderSpec, MultiTaskModel, TrainConfig, TrainError};
use crate::synthetic::desk_generator;

pub const RUN_FILE: &str = "run.tsv";
pub const PROBS_FILE: &str = "probs.tsv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const GNB_FILE: &str = "gnb.txt";
pub const PRIORITY_TABLE_FILE: &str = "priority_table.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    RunFile { path: PathBuf, line: usize, message: String },
    #[error("ensemble member `{name}` has no run at {path}")]
    MissingMember { name: String, path: PathBuf },
    #[error("runs do not cover the gold tweets: {}", format_gaps(.0))]
    Coverage(Vec<(String, Vec<String>)>),
    #[error("no trained model in {0}; run `train` first")]
    NoModel(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn format_gaps(gaps: &[(String, Vec<String>)]) -> String {
    gaps.iter()
        .map(|(run, ids)| format!("{run} is missing {}", ids.join(",")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl PipelineError {
    /// Bad inputs or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_)
                | Self::RunFile { .. }
                | Self::MissingMember { .. }
                | Self::Coverage(_)
                | Self::NoModel(_)
                | Self::Corpus(_)
                | Self::Train(TrainError::Config(_))
                | Self::Augment(AugmentError::Schedule(_))
        )
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "mtl")]
    Mtl,
    #[serde(rename = "mtl+eda")]
    MtlEda,
    #[serde(rename = "mtl+dga")]
    MtlDga,
    #[serde(rename = "mtl+dga+nla")]
    MtlDgaNla,
    #[serde(rename = "ensemble")]
    Ensemble,
    #[serde(rename = "ensemble+post")]
    EnsemblePost,
}

impl PipelineKind {
    pub fn is_ensemble(self) -> bool {
        matches!(self, Self::Ensemble | Self::EnsemblePost)
    }

    pub fn is_mtl(self) -> bool {
        matches!(self, Self::Mtl | Self::MtlEda | Self::MtlDga | Self::MtlDgaNla)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderSize {
    #[default]
    Base,
    Large,
}

impl EncoderSize {
    pub fn spec(self) -> DeskEncoderSpec {
        match self {
            Self::Base => DeskEncoderSpec::base(),
            Self::Large => DeskEncoderSpec::large(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSettings {
    /// Phrase-bank stub over the desk corpus vocabulary.
    DeskStub { seed: u64 },
    Canned { responses: Vec<String> },
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self::DeskStub { seed: 0 }
    }
}

impl GeneratorSettings {
    pub fn client(&self) -> Box<dyn GeneratorClient> {
        match self {
            Self::DeskStub { seed } => Box::new(desk_generator(*seed)),
            Self::Canned { responses } => Box::new(CannedGenerator::new(responses.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    /// Minimum examples per IT; defaults to 500 for EDA and 1000 for DGA.
    pub target_min: Option<usize>,
    pub eda: EdaParams,
    /// Synonym file; the packaged lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub generator: GeneratorSettings,
    pub controls: GenerationControls,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let nla = NlaSchedule::new(1);
        Self {
            target_min: None,
            eda: EdaParams::default(),
            lexicon: None,
            generator: GeneratorSettings::default(),
            controls: GenerationControls::default(),
            tau_start: nla.tau_start,
            tau_end: nla.tau_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub providers: Vec<HashEmbedding>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self { providers: vec![HashEmbedding::new("stub-a", 16, 1), HashEmbedding::new("stub-b", 16, 2)] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    /// Run names of the members; each is read from the sibling directory of
    /// this run's output directory.
    pub members: Vec<String>,
    pub scope: IrrelevantScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub seed: u64,
    /// The packaged 25-type taxonomy when absent.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    /// Training corpus; unused by ensembles.
    #[serde(default)]
    pub train: Option<PathBuf>,
    pub test: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub encoder: EncoderSize,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub augmentation: AugmentSettings,
    #[serde(default)]
    pub baseline: BaselineSettings,
    #[serde(default)]
    pub ensemble: EnsembleSettings,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_filesystem_safe(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&read(path)?, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Training settings with the run seed and the NLA schedule applied.
    pub fn effective_training(&self) -> TrainConfig {
        let mut t = self.training.clone();
        t.seed = self.seed;
        if self.pipeline == PipelineKind::MtlDgaNla {
            t.nla = Some(NlaSchedule {
                tau_start: self.augmentation.tau_start,
                tau_end: self.augmentation.tau_end,
                epochs: t.epochs,
            });
        }
        t
    }

    pub fn target_min(&self) -> usize {
        self.augmentation.target_min.unwrap_or(match self.pipeline {
            PipelineKind::MtlDga | PipelineKind::MtlDgaNla => 1000,
            _ => 500,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if !is_filesystem_safe(&self.run_name) {
            return fail(format!("run_name `{}` must be non-empty and use only [A-Za-z0-9._-]", self.run_name));
        }
        if self.training.nla.is_some() {
            return fail("set the NLA thresholds under [augmentation]; training.nla is derived".into());
        }
        let mut paths: Vec<(&str, &Path)> = vec![("test", &self.test)];
        if let Some(t) = &self.taxonomy {
            paths.push(("taxonomy", t));
        }
        if let Some(l) = &self.augmentation.lexicon {
            paths.push(("lexicon", l));
        }
        match (&self.train, self.pipeline.is_ensemble()) {
            (Some(t), false) => paths.push(("train", t)),
            (None, false) => return fail(format!("pipeline {:?} needs a train path", self.pipeline)),
            _ => {}
        }
        for (what, p) in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return fail(format!("{what} path {} does not exist", full.display()));
            }
        }
        if self.pipeline.is_ensemble() {
            if self.ensemble.members.is_empty() {
                return fail("ensemble needs at least one member".into());
            }
            if let Some(bad) = self.ensemble.members.iter().find(|m| !is_filesystem_safe(m)) {
                return fail(format!("member name `{bad}` is not a run name"));
            }
        }
        if self.pipeline == PipelineKind::Baseline && self.baseline.providers.is_empty() {
            return fail("baseline needs at least one embedding provider".into());
        }
        if self.pipeline.is_mtl() && self.target_min() == 0 {
            return fail("augmentation.target_min must be at least 1".into());
        }
        self.effective_training().validate()?;
        Ok(())
    }

    /// Hash of every setting except the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy> {
        Ok(match &self.taxonomy {
            Some(p) => Taxonomy::load(self.resolve(p))?,
            None => Taxonomy::trec_is(),
        })
    }
}

/// Seconds since the epoch from `SOURCE_DATE_EPOCH`, else 0, so run files
/// stay reproducible.
pub fn run_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0)
}

/// Rounds to the 4 decimals written to run files.
pub fn round_priority(p: f64) -> f64 {
    ((p.clamp(0.0, 1.0) * 1e4).round() / 1e4).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub event_id: String,
    pub tweet_id: String,
    pub its: Vec<String>,
    pub priority: f64,
}

/// Submission-style output: `#`-prefixed header lines, then one row per
/// tweet `event_id<TAB>tweet_id<TAB>IT1,IT2<TAB>0.7500`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub run_name: String,
    pub config_hash: String,
    pub taxonomy_hash: String,
    pub timestamp: u64,
    pub rows: Vec<RunRow>,
}

impl RunFile {
    pub fn from_predictions(
        run_name: &str,
        config_hash: &str,
        taxonomy: &Taxonomy,
        preds: &[Prediction],
        timestamp: u64,
    ) -> Self {
        let rows = preds
            .iter()
            .map(|p| RunRow {
                event_id: p.event_id.clone(),
                tweet_id: p.tweet_id.clone(),
                its: p.its.iter().map(|&i| taxonomy.name(i).to_string()).collect(),
                priority: round_priority(p.priority),
            })
            .collect();
        Self {
            run_name: run_name.to_string(),
            config_hash: config_hash.to_string(),
            taxonomy_hash: taxonomy.hash(),
            timestamp,
            rows,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# run_name: {}", self.run_name);
        let _ = writeln!(out, "# config_hash: {}", self.config_hash);
        let _ = writeln!(out, "# taxonomy_hash: {}", self.taxonomy_hash);
        let _ = writeln!(out, "# timestamp: {}", self.timestamp);
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.4}", r.event_id, r.tweet_id, r.its.join(","), r.priority);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| PipelineError::RunFile { path: path.to_path_buf(), line, message };
        let mut header: HashMap<&str, &str> = HashMap::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(h) = line.strip_prefix('#') {
                let (k, v) = h.split_once(':').ok_or_else(|| err(n, "header line without `key: value`".into()))?;
                header.insert(k.trim(), v.trim());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [event_id, tweet_id, its, priority] = fields[..] else {
                return Err(err(n, format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let its: Vec<String> = its.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
            if its.is_empty() {
                return Err(err(n, "empty IT list".into()));
            }
            let (_, decimals) = priority.split_once('.').unwrap_or((priority, ""));
            let value: f64 = priority.parse().map_err(|_| err(n, format!("bad priority `{priority}`")))?;
            if decimals.len() != 4 || !(0.0..=1.0).contains(&value) {
                return Err(err(n, format!("priority `{priority}` must lie in [0, 1] with 4 decimals")));
            }
            rows.push(RunRow { event_id: event_id.into(), tweet_id: tweet_id.into(), its, priority: value });
        }
        let get = |k: &str| header.get(k).map(|s| s.to_string()).ok_or_else(|| err(0, format!("missing header `{k}`")));
        let timestamp = get("timestamp")?.parse().map_err(|_| err(0, "bad timestamp".into()))?;
        Ok(Self {
            run_name: get("run_name")?,
            config_hash: get("config_hash")?,
            taxonomy_hash: get("taxonomy_hash")?,
            timestamp,
            rows,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    /// Checks the header hashes and that every IT belongs to `taxonomy`.
    pub fn validate(&self, config_hash: Option<&str>, taxonomy: &Taxonomy) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Config(format!("run `{}`: {m}", self.run_name)));
        if let Some(h) = config_hash {
            if h != self.config_hash {
                return fail(format!("config hash {} does not match {h}", self.config_hash));
            }
        }
        if self.taxonomy_hash != taxonomy.hash() {
            return fail(format!("taxonomy hash {} does not match {}", self.taxonomy_hash, taxonomy.hash()));
        }
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.tweet_id.as_str()) {
                return fail(format!("duplicate tweet {}", r.tweet_id));
            }
            if let Some(bad) = r.its.iter().find(|n| taxonomy.index_of(n).is_none()) {
                return fail(format!("tweet {}: unknown IT `{bad}`", r.tweet_id));
            }
        }
        Ok(())
    }

    /// Predictions with probabilities from `probs` (empty when `None`).
    pub fn to_predictions(&self, taxonomy: &Taxonomy, probs: Option<&ProbFile>) -> Result<Vec<Prediction>> {
        let lookup: HashMap<&str, &Vec<f64>> =
            probs.map(|p| p.rows.iter().map(|(id, v)| (id.as_str(), v)).collect()).unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                let mut its: Vec<usize> = r
                    .its
                    .iter()
                    .map(|n| {
                        taxonomy.index_of(n).ok_or_else(|| PipelineError::Config(format!("unknown IT `{n}`")))
                    })
                    .collect::<Result<_>>()?;
                its.sort_unstable();
                its.dedup();
                let p = match probs {
                    None => Vec::new(),
                    Some(_) => lookup
                        .get(r.tweet_id.as_str())
                        .map(|v| v.to_vec())
                        .ok_or_else(|| {
                            PipelineError::Config(format!("probability file has no row for {}", r.tweet_id))
                        })?,
                };
                Ok(Prediction {
                    tweet_id: r.tweet_id.clone(),
                    event_id: r.event_id.clone(),
                    its,
                    probs: p,
                    priority: r.priority,
                })
            })
            .collect()
    }
}

/// Probability sidecar: `tweet_id` then one probability per IT, in taxonomy
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbFile {
    pub taxonomy_hash: String,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ProbFile {
    pub fn from_predictions(taxonomy: &Taxonomy, preds: &[Prediction]) -> Self {
        Self {
            taxonomy_hash: taxonomy.hash(),
            rows: preds
                .iter()
                .map(|p| (p.tweet_id.clone(), p.probs.iter().map(|&x| round_prob(x)).collect()))
                .collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# taxonomy_hash: {}\n", self.taxonomy_hash);
        for (id, probs) in &self.rows {
            out.push_str(id);
            for p in probs {
                let _ = write!(out, "\t{p:.8}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path, taxonomy: &Taxonomy) -> Result<Self> {
        let err = |line: usize, message: String| PipelineError::RunFile { path: path.to_path_buf(), line, message };
        let mut taxonomy_hash = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix("# taxonomy_hash:") {
                taxonomy_hash = Some(h.trim().to_string());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let probs: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| err(i + 1, format!("bad probability `{f}`"))))
                .collect::<Result<_>>()?;
            if probs.len() != taxonomy.len() {
                return Err(err(i + 1, format!("{} probabilities for {} types", probs.len(), taxonomy.len())));
            }
            rows.push((id, probs));
        }
        let taxonomy_hash = taxonomy_hash.ok_or_else(|| err(0, "missing taxonomy_hash header".into()))?;
        if taxonomy_hash != taxonomy.hash() {
            return Err(err(0, format!("taxonomy hash {taxonomy_hash} does not match {}", taxonomy.hash())));
        }
        Ok(Self { taxonomy_hash, rows })
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path, taxonomy)
    }
}

fn round_prob(p: f64) -> f64 {
    (p * 1e8).round() / 1e8
}

/// Loaded inputs for one run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub taxonomy: Taxonomy,
    pub train: Vec<TweetRecord>,
    pub test: Vec<TweetRecord>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let taxonomy = cfg.load_taxonomy()?;
    let train = match &cfg.train {
        Some(p) if !cfg.pipeline.is_ensemble() => load_corpus(cfg.resolve(p), &taxonomy)?,
        _ => Vec::new(),
    };
    let test = load_corpus(cfg.resolve(&cfg.test), &taxonomy)?;
    Ok(Inputs { taxonomy, train, test })
}

/// Train/dev split plus the augmented examples of an MTL run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<TweetRecord>,
    pub dev: Vec<TweetRecord>,
    pub augmented: Vec<AugmentedExample>,
}

/// Splits off the dev set and, for augmenting pipelines, balances the
/// training part. The dev set is never augmented.
pub fn prepare_mtl(cfg: &RunConfig, inputs: &Inputs) -> Result<Prepared> {
    let (train, dev) = split_train_dev(&inputs.train, cfg.training.dev_fraction, cfg.seed)?;
    let augmented = match cfg.pipeline {
        PipelineKind::MtlEda => {
            let lexicon = match &cfg.augmentation.lexicon {
                Some(p) => SynonymLexicon::load(cfg.resolve(p))?,
                None => SynonymLexicon::packaged(),
            };
            let method = BalanceMethod::Eda { lexicon: &lexicon, params: cfg.augmentation.eda };
            balance(&train, cfg.target_min(), &method, &inputs.taxonomy, cfg.seed)?
        }
        PipelineKind::MtlDga | PipelineKind::MtlDgaNla => {
            let client = cfg.augmentation.generator.client();
            let priorities = build_priority_table(&train, &inputs.taxonomy);
            let method = BalanceMethod::Dga {
                client: client.as_ref(),
                controls: cfg.augmentation.controls.clone(),
                priorities: &priorities,
            };
            balance(&train, cfg.target_min(), &method, &inputs.taxonomy, cfg.seed)?
        }
        _ => Vec::new(),
    };
    Ok(Prepared { train, dev, augmented })
}

pub fn augmented_jsonl(examples: &[AugmentedExample]) -> String {
    examples.iter().map(|e| e.record.to_json_line() + "\n").collect()
}

/// A trained model of either family.
#[derive(Debug, Clone)]
pub enum Model {
    Baseline { gnb: GaussianNb, table: PriorityTable },
    Mtl(Box<Checkpoint<DeskEncoder>>),
}

fn providers(cfg: &RunConfig) -> Vec<&dyn EmbeddingProvider> {
    cfg.baseline.providers.iter().map(|p| p as &dyn EmbeddingProvider).collect()
}

/// Trains the configured model and writes its artifacts (model, logs,
/// provenance) to the output directory.
pub fn train_stage(cfg: &RunConfig, inputs: &Inputs) -> Result<Model> {
    let out = cfg.output_path();
    fs::create_dir_all(&out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
    match cfg.pipeline {
        PipelineKind::Baseline => {
            let providers = providers(cfg);
            let mut features = Vec::with_capacity(inputs.train.len());
            let mut labels = Vec::with_capacity(inputs.train.len());
            for r in &inputs.train {
                let its = r.gold_its.as_ref().ok_or_else(|| TrainError::Unlabeled(r.tweet_id.clone()))?;
                features.push(embed_concat(&r.text, &providers)?);
                labels.push(binarize(its, &inputs.taxonomy)?);
            }
            let gnb = GaussianNb::fit(&features, &labels, &inputs.taxonomy)?;
            let table = build_priority_table(&inputs.train, &inputs.taxonomy);
            write(&out.join(GNB_FILE), &gnb.to_text())?;
            write(
                &out.join(PRIORITY_TABLE_FILE),
                &(serde_json::to_string_pretty(&table).expect("table serializes") + "\n"),
            )?;
            Ok(Model::Baseline { gnb, table })
        }
        kind if kind.is_mtl() => {
            let prepared = prepare_mtl(cfg, inputs)?;
            let tc = cfg.effective_training();
            let model = MultiTaskModel::desk(cfg.encoder.spec(), inputs.taxonomy.len(), cfg.seed);
            let outcome = train(model, &prepared.train, prepared.augmented, &prepared.dev, &inputs.taxonomy, &tc)?;
            write(&out.join(CHECKPOINT_FILE), &outcome.checkpoint.to_json())?;
            write(&out.join(TRAIN_LOG_FILE), &log_to_jsonl(&outcome.checkpoint.log))?;
            if !outcome.augmented.is_empty() {
                write(&out.join(AUGMENTED_FILE), &augmented_jsonl(&outcome.augmented))?;
                write(&out.join(PROVENANCE_FILE), &provenance_jsonl(&outcome.augmented))?;
            }
            Ok(Model::Mtl(Box::new(outcome.checkpoint)))
        }
        _ => Err(PipelineError::Config("ensemble pipelines have no model to train".into())),
    }
}

/// Reads back the artifacts written by [`train_stage`].
pub fn load_model(cfg: &RunConfig, taxonomy: &Taxonomy) -> Result<Model> {
    let out = cfg.output_path();
    let model = match cfg.pipeline {
        PipelineKind::Baseline => {
            let path = out.join(GNB_FILE);
            if !path.exists() {
                return Err(PipelineError::NoModel(out));
            }
            let gnb = GaussianNb::from_text(&read(&path)?)?;
            let table_path = out.join(PRIORITY_TABLE_FILE);
            let table: PriorityTable = serde_json::from_str(&read(&table_path)?)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", table_path.display())))?;
            if gnb.taxonomy_hash != taxonomy.hash() {
                return Err(PipelineError::Config("model was trained under a different taxonomy".into()));
            }
            Model::Baseline { gnb, table }
        }
        kind if kind.is_mtl() => {
            let path = out.join(CHECKPOINT_FILE);
            if !path.exists() {
                return Err(PipelineError::NoModel(out));
            }
            let ckpt = Checkpoint::from_json(&read(&path)?)?;
            if ckpt.taxonomy_hash != taxonomy.hash() {
                return Err(PipelineError::Config("checkpoint was trained under a different taxonomy".into()));
            }
            Model::Mtl(Box::new(ckpt))
        }
        _ => return Err(PipelineError::Config("ensemble pipelines have no model".into())),
    };
    Ok(model)
}

/// Predictions with priorities rounded to the run-file precision.
pub fn predict(cfg: &RunConfig, model: &Model, tweets: &[TweetRecord]) -> Result<Vec<Prediction>> {
    let mut preds = match model {
        Model::Baseline { gnb, table } => {
            let providers = providers(cfg);
            tweets
                .iter()
                .map(|t| {
                    let out = gnb.predict(&embed_concat(&t.text, &providers)?)?;
                    Ok(Prediction {
                        tweet_id: t.tweet_id.clone(),
                        event_id: t.event_id.clone(),
                        priority: map_priority(&out.its, table)?,
                        its: out.its,
                        probs: out.probs,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Model::Mtl(ckpt) => ckpt.predict(tweets),
    };
    for p in &mut preds {
        p.priority = round_priority(p.priority);
    }
    Ok(preds)
}

/// Reads an ensemble member's run file and probability sidecar.
pub fn load_member(dir: &Path, name: &str, taxonomy: &Taxonomy) -> Result<Vec<Prediction>> {
    let run_path = dir.join(RUN_FILE);
    if !run_path.exists() {
        return Err(PipelineError::MissingMember { name: name.to_string(), path: run_path });
    }
    let run = RunFile::load(&run_path)?;
    run.validate(None, taxonomy)?;
    let probs = ProbFile::load(dir.join(PROBS_FILE), taxonomy)?;
    run.to_predictions(taxonomy, Some(&probs))
}

pub fn member_dir(cfg: &RunConfig, member: &str) -> PathBuf {
    let out = cfg.output_path();
    out.parent().map(|p| p.join(member)).unwrap_or_else(|| PathBuf::from(member))
}

fn ensemble_predictions(cfg: &RunConfig, taxonomy: &Taxonomy) -> Result<Vec<Prediction>> {
    let members = cfg
        .ensemble
        .members
        .iter()
        .map(|m| load_member(&member_dir(cfg, m), m, taxonomy))
        .collect::<Result<Vec<_>>>()?;
    let mut preds = ensemble(&members)?;
    if cfg.pipeline == PipelineKind::EnsemblePost {
        let irr = taxonomy.irrelevant();
        preds = preds.iter().map(|p| postprocess_irrelevant(p, irr, cfg.ensemble.scope)).collect();
    }
    Ok(preds)
}

/// Test records carrying both gold fields.
pub fn judged(tweets: &[TweetRecord]) -> Vec<TweetRecord> {
    tweets
        .iter()
        .filter(|t| t.gold_its.is_some() && t.gold_priority.is_some())
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_file: RunFile,
    pub probs: ProbFile,
    pub metrics: Option<MetricReport>,
}

/// Writes run file, sidecar and (with gold labels) metrics for `preds`.
pub fn write_outputs(cfg: &RunConfig, inputs: &Inputs, preds: &[Prediction]) -> Result<RunOutcome> {
    let out = cfg.output_path();
    fs::create_dir_all(&out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
    let run_file = RunFile::from_predictions(&cfg.run_name, &cfg.hash(), &inputs.taxonomy, preds, run_timestamp());
    let probs = ProbFile::from_predictions(&inputs.taxonomy, preds);
    write(&out.join(RUN_FILE), &run_file.to_tsv())?;
    write(&out.join(PROBS_FILE), &probs.to_tsv())?;
    let gold = judged(&inputs.test);
    let metrics = if gold.is_empty() {
        log::info!("{}: test set has no gold labels; skipping evaluation", cfg.run_name);
        None
    } else {
        let scored = run_file.to_predictions(&inputs.taxonomy, None)?;
        let report = evaluate(&gold, &scored, &inputs.taxonomy, &PriorityLevels::default())?;
        write(&out.join(METRICS_FILE), &report.to_json())?;
        Some(report)
    };
    Ok(RunOutcome { run_file, probs, metrics })
}

/// Executes the configured pipeline end to end.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let preds = if cfg.pipeline.is_ensemble() {
        ensemble_predictions(cfg, &inputs.taxonomy)?
    } else {
        let model = train_stage(cfg, &inputs)?;
        predict(cfg, &model, &inputs.test)?
    };
    let covered: HashSet<&str> = preds.iter().map(|p| p.tweet_id.as_str()).collect();
    let missing: Vec<String> =
        inputs.test.iter().filter(|t| !covered.contains(t.tweet_id.as_str())).map(|t| t.tweet_id.clone()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::Coverage(vec![(cfg.run_name.clone(), missing)]));
    }
    let outcome = write_outputs(cfg, &inputs, &preds)?;
    log::info!("{}: wrote {} rows to {}", cfg.run_name, outcome.run_file.rows.len(), cfg.output_path().display());
    Ok(outcome)
}

/// Scores run files against gold and aggregates them into a leaderboard.
/// Every run must cover every judged tweet.
pub fn compare(runs: &[RunFile], gold: &[TweetRecord], taxonomy: &Taxonomy) -> Result<Leaderboard> {
    let gold = judged(gold);
    let mut gaps = Vec::new();
    for r in runs {
        let ids: HashSet<&str> = r.rows.iter().map(|row| row.tweet_id.as_str()).collect();
        let missing: Vec<String> =
            gold.iter().filter(|g| !ids.contains(g.tweet_id.as_str())).map(|g| g.tweet_id.clone()).collect();
        if !missing.is_empty() {
            gaps.push((r.run_name.clone(), missing));
        }
    }
    if !gaps.is_empty() {
        return Err(PipelineError::Coverage(gaps));
    }
    let mut reports = Vec::with_capacity(runs.len());
    for r in runs {
        r.validate(None, taxonomy)?;
        let preds = r.to_predictions(taxonomy, None)?;
        reports.push((r.run_name.clone(), evaluate(&gold, &preds, taxonomy, &PriorityLevels::default())?));
    }
    aggregate_leaderboard(&reports).ok_or_else(|| PipelineError::Config("no runs to compare".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> Taxonomy {
        Taxonomy::new(&["A", "B", "Irr"], &["A"], "Irr").unwrap()
    }

    fn pred(id: &str, its: &[usize], priority: f64) -> Prediction {
        Prediction { tweet_id: id.into(), event_id: "e1".into(), its: its.to_vec(), probs: vec![0.25, 0.5, 0.125], priority }
    }

    #[test]
    fn run_file_round_trip() {
        let tax = taxonomy();
        let rf = RunFile::from_predictions("r", "abc", &tax, &[pred("t1", &[0, 1], 0.75), pred("t2", &[2], 0.123456)], 9);
        let text = rf.to_tsv();
        assert!(text.contains("e1\tt1\tA,B\t0.7500\n"));
        assert!(text.contains("e1\tt2\tIrr\t0.1235\n"));
        let back = RunFile::parse(&text, Path::new("x")).unwrap();
        assert_eq!(back, rf);
        back.validate(Some("abc"), &tax).unwrap();
        assert!(back.validate(Some("other"), &tax).is_err());
        assert!(back.validate(None, &Taxonomy::trec_is()).is_err());
    }

    #[test]
    fn run_file_rejects_bad_rows() {
        let head = "# run_name: r\n# config_hash: h\n# taxonomy_hash: t\n# timestamp: 0\n";
        for row in ["e\tt\t\t0.5000", "e\tt\tA\t0.5", "e\tt\tA\t1.5000", "e\tt\tA"] {
            let err = RunFile::parse(&format!("{head}{row}\n"), Path::new("x")).unwrap_err();
            assert!(matches!(err, PipelineError::RunFile { line: 5, .. }), "{row}: {err}");
        }
    }

    #[test]
    fn prob_file_round_trip() {
        let tax = taxonomy();
        let pf = ProbFile::from_predictions(&tax, &[pred("t1", &[0], 0.5)]);
        let back = ProbFile::parse(&pf.to_tsv(), Path::new("p"), &tax).unwrap();
        assert_eq!(back, pf);
        assert!(ProbFile::parse(&pf.to_tsv(), Path::new("p"), &Taxonomy::trec_is()).is_err());
    }

    #[test]
    fn config_hash_ignores_output_dir() {
        let text = "run_name = \"r\"\npipeline = \"mtl\"\ntrain = \"a\"\ntest = \"b\"\noutput_dir = \"out1\"\n";
        let a = RunConfig::from_toml_str(text, ".").unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn config_validation() {
        let bad = RunConfig::from_toml_str("run_name = \"r\"\npipeline = \"nope\"\ntest = \"b\"\noutput_dir = \"o\"\n", ".");
        assert!(matches!(bad, Err(PipelineError::Config(_))));
        let cfg = RunConfig::from_toml_str(
            "run_name = \"a/b\"\npipeline = \"mtl\"\ntrain = \"x\"\ntest = \"y\"\noutput_dir = \"o\"\n",
            ".",
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("run_name"));
    }
}

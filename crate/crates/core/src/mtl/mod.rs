//! Multi-task model: one encoder pass feeds a multi-label IT classifier and a
//! priority regressor, trained jointly.

mod adam;
mod loss;
mod model;
mod schedule;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use loss::{joint_loss, joint_loss_grad, LossParts, LossWeights};
pub use model::{sigmoid, DeskCache, DeskEncoder, DeskEncoderSpec, Encoder, MultiTaskHead};
pub use schedule::{lr_at, lr_at_position};

use crate::augmentation::{nla_filter, AugmentError, AugmentedExample, NlaSchedule};
use crate::corpus::{binarize, CorpusError, LabelVector, Taxonomy, TweetRecord};
use crate::ensemble::{select_its, Prediction};
use crate::metrics::{it_f1, MetricsError, Subset};
use crate::rng;
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in loss inputs")]
    NonFinite,
    #[error("training diverged (non-finite loss) at step {step}")]
    Divergence { step: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("tweet {0} lacks gold labels or gold priority")]
    Unlabeled(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub dev_fraction: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub nla: Option<NlaSchedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            peak_lr: 5e-5,
            warmup_fraction: 0.1,
            dev_fraction: 0.1,
            loss_weights: LossWeights::default(),
            seed: 0,
            nla: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail("peak_lr must be positive");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail("warmup_fraction must lie in (0, 1)");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return fail("dev_fraction must lie in (0, 1)");
        }
        let w = self.loss_weights;
        if !(w.cls >= 0.0 && w.reg >= 0.0 && w.cls + w.reg > 0.0) {
            return fail("loss weights must be non-negative and not both zero");
        }
        if let Some(nla) = &self.nla {
            nla.validate()?;
            if nla.epochs != self.epochs {
                return fail("nla.epochs must equal epochs");
            }
        }
        Ok(())
    }
}

/// Encoder plus heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel<E> {
    pub encoder: E,
    pub head: MultiTaskHead,
}

/// Gradient buffers matching [`MultiTaskModel`]'s parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<f64>,
    pub head: Vec<f64>,
}

/// Forward output for one example.
#[derive(Debug, Clone)]
pub struct Forward<C> {
    pub logits: Vec<f64>,
    pub priority: f64,
    hidden: Vec<f64>,
    cache: C,
}

impl MultiTaskModel<DeskEncoder> {
    /// Desk encoder with randomly initialized heads, drawn from the `init`
    /// substream of `seed`.
    pub fn desk(spec: DeskEncoderSpec, labels: usize, seed: u64) -> Self {
        let mut rng = rng::substream(seed, "init");
        let encoder = DeskEncoder::new(spec, &mut rng);
        let head = MultiTaskHead::new(spec.hidden_dim, labels, &mut rng);
        Self { encoder, head }
    }
}

impl<E: Encoder> MultiTaskModel<E> {
    pub fn labels(&self) -> usize {
        self.head.labels
    }

    /// One encoder pass; both heads read the same pooled vector.
    pub fn forward_one(&self, tokens: &[String]) -> Forward<E::Cache> {
        let (hidden, cache) = self.encoder.encode(tokens);
        let (logits, r) = self.head.forward(&hidden);
        Forward { logits, priority: sigmoid(r), hidden, cache }
    }

    /// Batch forward: `batch x labels` logits and squashed priorities.
    pub fn forward(&self, batch: &[Vec<String>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        batch
            .iter()
            .map(|t| {
                let f = self.forward_one(t);
                (f.logits, f.priority)
            })
            .unzip()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients { encoder: vec![0.0; self.encoder.params().len()], head: vec![0.0; self.head.params().len()] }
    }

    /// Joint loss of a batch and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &[Vec<String>],
        targets: &[LabelVector],
        gold: &[f64],
        weights: LossWeights,
    ) -> Result<(LossParts, Gradients), TrainError> {
        let fwd: Vec<Forward<E::Cache>> = batch.iter().map(|t| self.forward_one(t)).collect();
        let logits: Vec<Vec<f64>> = fwd.iter().map(|f| f.logits.clone()).collect();
        let pri: Vec<f64> = fwd.iter().map(|f| f.priority).collect();
        let parts = joint_loss(&logits, &pri, targets, gold, weights)?;
        let (g_logits, g_reg) = joint_loss_grad(&logits, &pri, targets, gold, weights)?;
        let mut grads = self.zero_grads();
        for (i, f) in fwd.iter().enumerate() {
            let g_hidden = self.head.backward(&f.hidden, &g_logits[i], g_reg[i], &mut grads.head);
            self.encoder.backward(&f.cache, &g_hidden, &mut grads.encoder);
        }
        Ok((parts, grads))
    }

    pub fn probabilities(&self, tokens: &[String]) -> (Vec<f64>, f64) {
        let f = self.forward_one(tokens);
        (f.logits.into_iter().map(sigmoid).collect(), f.priority)
    }

    /// Per-IT probability `sigmoid(logit)`, IT set by threshold 0.5 with
    /// argmax fallback, and the squashed priority.
    pub fn predict(&self, tweets: &[TweetRecord]) -> Vec<Prediction> {
        tweets
            .iter()
            .map(|t| {
                let (probs, priority) = self.probabilities(&tokenize(&t.text));
                Prediction {
                    tweet_id: t.tweet_id.clone(),
                    event_id: t.event_id.clone(),
                    its: select_its(&probs),
                    probs,
                    priority,
                }
            })
            .collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_macro_f1: f64,
    pub lr_end: f64,
    pub nla_removed: usize,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<E> {
    pub model: MultiTaskModel<E>,
    /// 0 for the untrained model.
    pub epoch: usize,
    pub dev_macro_f1: f64,
    pub config: TrainConfig,
    pub taxonomy_hash: String,
    pub log: Vec<EpochLog>,
}

impl<E: Encoder> Checkpoint<E> {
    pub fn predict(&self, tweets: &[TweetRecord]) -> Vec<Prediction> {
        self.model.predict(tweets)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<E> {
    pub checkpoint: Checkpoint<E>,
    /// Augmented examples with their final NLA state.
    pub augmented: Vec<AugmentedExample>,
}

struct Example {
    tokens: Vec<String>,
    labels: LabelVector,
    priority: f64,
    augmented: Option<usize>,
}

fn to_example(r: &TweetRecord, taxonomy: &Taxonomy, augmented: Option<usize>) -> Result<Example, TrainError> {
    let (Some(its), Some(priority)) = (&r.gold_its, r.gold_priority) else {
        return Err(TrainError::Unlabeled(r.tweet_id.clone()));
    };
    Ok(Example { tokens: tokenize(&r.text), labels: binarize(its, taxonomy)?, priority, augmented })
}

fn dev_macro_f1<E: Encoder>(model: &MultiTaskModel<E>, dev: &[TweetRecord], taxonomy: &Taxonomy) -> Result<f64, TrainError> {
    Ok(it_f1(dev, &model.predict(dev), taxonomy, Subset::All)?)
}

/// Trains with Adam under the warmup/decay schedule, evaluating dev macro-F1
/// after every epoch and keeping the best epoch (earliest on ties). When
/// `cfg.nla` is set, augmented examples are filtered at the end of each epoch
/// and removed ones are skipped from then on.
pub fn train<E: Encoder + Clone>(
    model: MultiTaskModel<E>,
    train_set: &[TweetRecord],
    augmented: Vec<AugmentedExample>,
    dev: &[TweetRecord],
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E>, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptySet("dev"));
    }
    if model.labels() != taxonomy.len() {
        return Err(TrainError::Shape(format!(
            "model has {} labels, taxonomy {}",
            model.labels(),
            taxonomy.len()
        )));
    }

    let mut examples = Vec::with_capacity(train_set.len() + augmented.len());
    for r in train_set {
        examples.push(to_example(r, taxonomy, None)?);
    }
    for (i, a) in augmented.iter().enumerate() {
        examples.push(to_example(&a.record, taxonomy, Some(i))?);
    }
    let mut augmented = augmented;
    let mut model = model;

    let initial_f1 = dev_macro_f1(&model, dev, taxonomy)?;
    let mut best = Checkpoint {
        model: model.clone(),
        epoch: 0,
        dev_macro_f1: initial_f1,
        config: cfg.clone(),
        taxonomy_hash: taxonomy.hash(),
        log: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { checkpoint: best, augmented });
    }

    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut enc_opt = Adam::new(model.encoder.params().len());
    let mut head_opt = Adam::new(model.head.params().len());
    let mut rng = rng::substream(cfg.seed, "shuffle");
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_f1 = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len())
            .filter(|&i| examples[i].augmented.is_none_or(|a| augmented[a].alive))
            .collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<String>> = chunk.iter().map(|&i| examples[i].tokens.clone()).collect();
            let targets: Vec<LabelVector> = chunk.iter().map(|&i| examples[i].labels.clone()).collect();
            let gold: Vec<f64> = chunk.iter().map(|&i| examples[i].priority).collect();
            let (parts, grads) = model
                .loss_and_grad(&batch, &targets, &gold, cfg.loss_weights)
                .map_err(|e| match e {
                    TrainError::NonFinite => TrainError::Divergence { step },
                    other => other,
                })?;
            if !parts.total.is_finite() {
                return Err(TrainError::Divergence { step });
            }
            lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
            enc_opt.step(model.encoder.params_mut(), &grads.encoder, lr);
            head_opt.step(model.head.params_mut(), &grads.head, lr);
            loss_sum += parts.total * chunk.len() as f64;
            step += 1;
        }
        let mean_loss = loss_sum / order.len().max(1) as f64;

        let mut nla_removed = 0;
        if let Some(schedule) = &cfg.nla {
            let probs: Vec<Vec<f64>> = augmented
                .iter()
                .enumerate()
                .map(|(i, _)| model.probabilities(&examples[train_set.len() + i].tokens).0)
                .collect();
            let alive_before = augmented.iter().filter(|a| a.alive).count();
            augmented = nla_filter(augmented, &probs, epoch, schedule, taxonomy)?;
            nla_removed = alive_before - augmented.iter().filter(|a| a.alive).count();
        }

        let f1 = dev_macro_f1(&model, dev, taxonomy)?;
        log::info!("epoch {epoch}: loss {mean_loss:.5} dev macro-F1 {f1:.4} removed {nla_removed}");
        log.push(EpochLog { epoch, mean_loss, dev_macro_f1: f1, lr_end: lr, nla_removed });
        if f1 > best_f1 {
            best_f1 = f1;
            best.model = model.clone();
            best.epoch = epoch;
            best.dev_macro_f1 = f1;
        }
    }
    best.log = log;
    Ok(TrainOutcome { checkpoint: best, augmented })
}

const CHECKPOINT_FORMAT: &str = "crisis-triage-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    taxonomy_hash: String,
    config: TrainConfig,
    encoder: DeskEncoderSpec,
    labels: usize,
    epoch: usize,
    dev_macro_f1: f64,
    /// Little-endian f64s, base64.
    encoder_params: String,
    head_params: String,
    log: Vec<EpochLog>,
}

fn encode_params(p: &[f64]) -> String {
    let bytes: Vec<u8> = p.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_params(s: &str) -> Result<Vec<f64>, TrainError> {
    let bytes = B64.decode(s).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(TrainError::Checkpoint("parameter blob length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint<DeskEncoder> {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            taxonomy_hash: self.taxonomy_hash.clone(),
            config: self.config.clone(),
            encoder: self.model.encoder.spec,
            labels: self.model.labels(),
            epoch: self.epoch,
            dev_macro_f1: self.dev_macro_f1,
            encoder_params: encode_params(self.model.encoder.params()),
            head_params: encode_params(self.model.head.params()),
            log: self.log.clone(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(json: &str) -> Result<Self, TrainError> {
        let f: CheckpointFile = serde_json::from_str(json).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if f.format != CHECKPOINT_FORMAT || f.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported format {} v{}", f.format, f.version)));
        }
        let encoder = DeskEncoder::from_params(f.encoder, decode_params(&f.encoder_params)?)
            .ok_or_else(|| TrainError::Checkpoint("encoder parameter count mismatch".into()))?;
        let head = MultiTaskHead::from_params(f.encoder.hidden_dim, f.labels, decode_params(&f.head_params)?)
            .ok_or_else(|| TrainError::Checkpoint("head parameter count mismatch".into()))?;
        Ok(Self {
            model: MultiTaskModel { encoder, head },
            epoch: f.epoch,
            dev_macro_f1: f.dev_macro_f1,
            config: f.config,
            taxonomy_hash: f.taxonomy_hash,
            log: f.log,
        })
    }
}

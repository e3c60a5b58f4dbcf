//! Training-data augmentation: EDA perturbations, prompt-based direct
//! generation (DGA), class balancing, and noisy-label annealing (NLA) of the
//! generated examples during training.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::PriorityTable;
use crate::corpus::{it_counts, Taxonomy, TweetRecord};
use crate::rng;

const PACKAGED_LEXICON: &str = include_str!("../data/synonyms.tsv");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {0}: expected `word<TAB>synonyms`")]
    Lexicon(usize),
    #[error("unknown information type `{0}`")]
    UnknownIt(String),
    #[error("exemplar is labeled with the target type `{0}`")]
    ExemplarHasTarget(String),
    #[error("empty exemplar")]
    EmptyExemplar,
    #[error("need at least 2 exemplars outside `{it}`, found {available}")]
    NotEnoughExemplars { it: String, available: usize },
    #[error("generator failed for `{it}` after {attempts} attempts: {message}")]
    Generator { it: String, attempts: usize, message: String },
    #[error("NLA inputs misaligned: {0}")]
    Misaligned(String),
    #[error("epoch {epoch} outside 1..={epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("invalid NLA schedule: {0}")]
    Schedule(String),
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

/// Case-insensitive synonym lookup used by EDA.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymLexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Parses `word<TAB>syn1,syn2,...` lines. `#` starts a comment line.
    pub fn from_tsv_str(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or(AugmentError::Lexicon(i + 1))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(AugmentError::Lexicon(i + 1));
            }
            let entry = map.entry(word.clone()).or_default();
            for s in syns.split(',') {
                let s = s.trim().to_lowercase();
                if !s.is_empty() && s != word && !entry.contains(&s) {
                    entry.push(s);
                }
            }
        }
        map.retain(|_, v| !v.is_empty());
        Ok(Self { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AugmentError::Io { path: path.to_path_buf(), source })?;
        Self::from_tsv_str(&text)
    }

    /// The small crisis-domain lexicon bundled with the crate.
    pub fn packaged() -> Self {
        Self::from_tsv_str(PACKAGED_LEXICON).expect("packaged lexicon parses")
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        let key: String = word
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        self.map.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Eda,
    Dga,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Tweet(String),
    PromptHash(String),
}

/// A synthetic training example. Original records are never wrapped in
/// this type, so NLA cannot remove them.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub record: TweetRecord,
    pub origin: Origin,
    /// The IT whose count this example was created to raise.
    pub target_it: String,
    pub source: Source,
    pub alive: bool,
    pub removed_at_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaParams {
    /// Fraction of tokens touched by an operation (at least one).
    pub alpha: f64,
    /// Operations applied per generated example.
    pub n_ops: usize,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self { alpha: 0.1, n_ops: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
}

const EDA_OPS: [EdaOp; 4] = [
    EdaOp::SynonymReplacement,
    EdaOp::RandomInsertion,
    EdaOp::RandomSwap,
    EdaOp::RandomDeletion,
];

fn synonym_replacement(tokens: &mut [String], n: usize, rng: &mut impl Rng, lexicon: &SynonymLexicon) {
    let mut candidates: Vec<usize> = (0..tokens.len()).filter(|&i| !lexicon.synonyms(&tokens[i]).is_empty()).collect();
    candidates.shuffle(rng);
    for &i in candidates.iter().take(n) {
        let syn = lexicon.synonyms(&tokens[i]).choose(rng).expect("non-empty").clone();
        tokens[i] = syn;
    }
}

/// Applies one EDA operation touching `max(1, round(alpha * len))` tokens.
/// One-token inputs are never emptied: deletion falls back to synonym
/// replacement, and swap is the identity.
pub fn apply_eda_op(
    tokens: &[String],
    op: EdaOp,
    alpha: f64,
    rng: &mut impl Rng,
    lexicon: &SynonymLexicon,
) -> Vec<String> {
    let mut out = tokens.to_vec();
    if out.is_empty() {
        return out;
    }
    let n = ((alpha * out.len() as f64).round() as usize).max(1);
    match op {
        EdaOp::SynonymReplacement => synonym_replacement(&mut out, n, rng, lexicon),
        EdaOp::RandomInsertion => {
            for _ in 0..n {
                let candidates: Vec<usize> =
                    (0..out.len()).filter(|&i| !lexicon.synonyms(&out[i]).is_empty()).collect();
                let Some(&i) = candidates.choose(rng) else { break };
                let syn = lexicon.synonyms(&out[i]).choose(rng).expect("non-empty").clone();
                let at = rng.gen_range(0..=out.len());
                out.insert(at, syn);
            }
        }
        EdaOp::RandomSwap => {
            if out.len() >= 2 {
                for _ in 0..n {
                    let pair = index::sample(rng, out.len(), 2);
                    out.swap(pair.index(0), pair.index(1));
                }
            }
        }
        EdaOp::RandomDeletion => {
            if out.len() == 1 {
                synonym_replacement(&mut out, n, rng, lexicon);
            } else {
                let k = n.min(out.len() - 1);
                let mut drop: Vec<usize> = index::sample(rng, out.len(), k).into_vec();
                drop.sort_unstable_by(|a, b| b.cmp(a));
                for i in drop {
                    out.remove(i);
                }
            }
        }
    }
    out
}

/// Perturbs `record` with `params.n_ops` randomly chosen EDA operations.
/// Labels and priority are copied unchanged.
pub fn eda_augment(record: &TweetRecord, seed: u64, params: &EdaParams, lexicon: &SynonymLexicon) -> AugmentedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<String> = record.text.split_whitespace().map(str::to_string).collect();
    for _ in 0..params.n_ops.max(1) {
        let op = EDA_OPS[rng.gen_range(0..EDA_OPS.len())];
        tokens = apply_eda_op(&tokens, op, params.alpha, &mut rng, lexicon);
    }
    let text = if tokens.is_empty() { record.text.clone() } else { tokens.join(" ") };
    AugmentedExample {
        record: TweetRecord {
            tweet_id: format!("{}~eda{:016x}", record.tweet_id, seed),
            text,
            ..record.clone()
        },
        origin: Origin::Eda,
        target_it: record.gold_its.as_ref().and_then(|v| v.first()).cloned().unwrap_or_default(),
        source: Source::Tweet(record.tweet_id.clone()),
        alive: true,
        removed_at_epoch: None,
    }
}

/// Generation settings passed to a [`GeneratorClient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationControls {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: String,
}

impl Default for GenerationControls {
    fn default() -> Self {
        Self { max_tokens: 40, temperature: 0.9, stop: "Title:".into() }
    }
}

/// A text-completion model, reached through an adapter. The returned
/// continuation must not repeat the prompt.
pub trait GeneratorClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, controls: &GenerationControls) -> Result<String, String>;
}

/// Returns canned responses in order, cycling.
#[derive(Debug, Default)]
pub struct CannedGenerator {
    responses: Vec<Result<String, String>>,
    cursor: AtomicUsize,
}

impl CannedGenerator {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self { responses: responses.into_iter().map(|s| Ok(s.into())).collect(), cursor: AtomicUsize::new(0) }
    }

    /// A stub that fails every call.
    pub fn failing(message: &str) -> Self {
        Self { responses: vec![Err(message.to_string())], cursor: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl GeneratorClient for CannedGenerator {
    fn name(&self) -> &str {
        "canned"
    }

    fn complete(&self, _prompt: &str, _controls: &GenerationControls) -> Result<String, String> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        if self.responses.is_empty() {
            return Ok(String::new());
        }
        self.responses[i % self.responses.len()].clone()
    }
}

/// Deterministic stub that writes a tweet for the prompt's final `Title:`
/// from a per-IT phrase bank, padded with filler words. Output depends only
/// on the prompt and the stub's seed.
#[derive(Debug, Clone)]
pub struct PhraseBankGenerator {
    pub phrases: BTreeMap<String, Vec<String>>,
    pub filler: Vec<String>,
    pub seed: u64,
}

impl GeneratorClient for PhraseBankGenerator {
    fn name(&self) -> &str {
        "phrase-bank"
    }

    fn complete(&self, prompt: &str, controls: &GenerationControls) -> Result<String, String> {
        let target = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Title:"))
            .map(str::trim)
            .ok_or("prompt has no Title line")?;
        let Some(bank) = self.phrases.get(target).filter(|b| !b.is_empty()) else {
            return Ok(String::new());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ rng::fnv1a64(prompt.as_bytes()));
        let mut words: Vec<String> = bank.choose(&mut rng).expect("non-empty").split_whitespace().map(str::to_string).collect();
        for _ in 0..rng.gen_range(1..=4) {
            if let Some(f) = self.filler.choose(&mut rng) {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, f.clone());
            }
        }
        words.truncate(controls.max_tokens);
        Ok(format!(" {}\n\nTitle:", words.join(" ")))
    }
}

/// One `(IT, text)` pair shown to the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DgaExemplar {
    pub it: String,
    pub text: String,
}

pub const DGA_TASK_DESCRIPTION: &str = "Tweet for help in disaster";

/// Few-shot prompt with the target's content left open:
///
/// ```text
/// Tweet for help in disaster
///
/// Title: {IT of exemplar 1}
///
/// Content: {text of exemplar 1}
///
/// Title: {IT of exemplar 2}
///
/// Content: {text of exemplar 2}
///
/// Title: {target IT}
///
/// Content:
/// ```
pub fn build_dga_prompt(target_it: &str, exemplars: &[DgaExemplar; 2]) -> Result<String> {
    let mut lines = vec![DGA_TASK_DESCRIPTION.to_string(), String::new()];
    for ex in exemplars {
        if ex.it == target_it {
            return Err(AugmentError::ExemplarHasTarget(target_it.to_string()));
        }
        let text = ex.text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(AugmentError::EmptyExemplar);
        }
        lines.push(format!("Title: {}", ex.it));
        lines.push(String::new());
        lines.push(format!("Content: {text}"));
        lines.push(String::new());
    }
    lines.push(format!("Title: {target_it}"));
    lines.push(String::new());
    lines.push("Content:".to_string());
    Ok(lines.join("\n"))
}

/// Cuts a continuation at the first blank line or stop string and flattens
/// whitespace.
pub fn truncate_continuation(raw: &str, stop: &str) -> String {
    let mut end = raw.len();
    if !stop.is_empty() {
        if let Some(i) = raw.find(stop) {
            end = end.min(i);
        }
    }
    let mut offset = 0;
    for line in raw[..end].split_inclusive('\n') {
        if offset > 0 && line.trim().is_empty() {
            end = offset;
            break;
        }
        offset += line.len();
    }
    // a leading blank line is also a terminator once content has started
    let head = &raw[..end];
    let cut = head.trim_start();
    let cut = match cut.find("\n\n") {
        Some(i) => &cut[..i],
        None => cut,
    };
    cut.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(&Sha256::digest(prompt.as_bytes())[..8])
}

/// Attempts per DGA example before giving up.
pub const DGA_ATTEMPTS: usize = 5;

/// Generates `count` examples for `target_it`, each from a freshly sampled
/// pair of non-target exemplars. Examples carry `{target_it}` as their only
/// label and the IT's mean training priority.
pub fn generate_dga(
    target_it: &str,
    train: &[TweetRecord],
    client: &dyn GeneratorClient,
    controls: &GenerationControls,
    priorities: &PriorityTable,
    count: usize,
    seed: u64,
) -> Result<Vec<AugmentedExample>> {
    let priority = priorities.by_name(target_it).ok_or_else(|| AugmentError::UnknownIt(target_it.to_string()))?;
    let pool: Vec<&TweetRecord> = train
        .iter()
        .filter(|r| r.gold_its.as_ref().is_some_and(|its| !its.is_empty()) && !r.has_it(target_it))
        .filter(|r| !r.text.trim().is_empty())
        .collect();
    if pool.len() < 2 {
        return Err(AugmentError::NotEnoughExemplars { it: target_it.to_string(), available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let pair = index::sample(&mut rng, pool.len(), 2);
        let mut exemplars = [0, 1].map(|k| {
            let r = pool[pair.index(k)];
            let its = r.gold_its.as_ref().expect("filtered");
            DgaExemplar { it: its[rng.gen_range(0..its.len())].clone(), text: r.text.clone() }
        });
        exemplars.iter_mut().for_each(|e| e.text = e.text.trim().to_string());
        let prompt = build_dga_prompt(target_it, &exemplars)?;

        let mut text = None;
        let mut last_error = None;
        for _ in 0..DGA_ATTEMPTS {
            match client.complete(&prompt, controls) {
                Ok(raw) => {
                    let t = truncate_continuation(&raw, &controls.stop);
                    if !t.is_empty() {
                        text = Some(t);
                        break;
                    }
                    last_error = None;
                }
                Err(e) => last_error = Some(e),
            }
        }
        match (text, last_error) {
            (Some(text), _) => out.push(AugmentedExample {
                record: TweetRecord {
                    tweet_id: format!("dga~{target_it}~{j}"),
                    event_id: "dga".into(),
                    text,
                    gold_its: Some(vec![target_it.to_string()]),
                    gold_priority: Some(priority),
                },
                origin: Origin::Dga,
                target_it: target_it.to_string(),
                source: Source::PromptHash(prompt_hash(&prompt)),
                alive: true,
                removed_at_epoch: None,
            }),
            (None, Some(message)) => {
                return Err(AugmentError::Generator { it: target_it.to_string(), attempts: DGA_ATTEMPTS, message });
            }
            (None, None) => {
                log::warn!("`{}`: {DGA_ATTEMPTS} empty generations; skipping example {j}", target_it);
            }
        }
    }
    Ok(out)
}

/// How missing examples are produced by [`balance`].
pub enum BalanceMethod<'a> {
    Eda {
        lexicon: &'a SynonymLexicon,
        params: EdaParams,
    },
    Dga {
        client: &'a dyn GeneratorClient,
        controls: GenerationControls,
        priorities: &'a PriorityTable,
    },
}

/// Tops up every IT with fewer than `target_min` examples. ITs are visited
/// in taxonomy order and counts include examples added for earlier ITs, so a
/// multi-label EDA copy can satisfy part of a later IT's deficit. Originals
/// are never modified; only the new examples are returned.
pub fn balance(
    train: &[TweetRecord],
    target_min: usize,
    method: &BalanceMethod<'_>,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<Vec<AugmentedExample>> {
    let mut counts = it_counts(train, taxonomy);
    let mut rng = rng::substream(seed, "augment");
    let mut out = Vec::new();
    for k in 0..taxonomy.len() {
        let name = taxonomy.name(k);
        let deficit = target_min.saturating_sub(counts[k]);
        if deficit == 0 {
            continue;
        }
        match method {
            BalanceMethod::Eda { lexicon, params } => {
                let pool: Vec<&TweetRecord> = train.iter().filter(|r| r.has_it(name)).collect();
                if pool.is_empty() {
                    log::warn!("EDA: no examples of `{name}` to perturb; skipping");
                    continue;
                }
                for _ in 0..deficit {
                    let src = pool[rng.gen_range(0..pool.len())];
                    let mut ex = eda_augment(src, rng.gen(), params, lexicon);
                    ex.target_it = name.to_string();
                    for label in ex.record.gold_its.iter().flatten() {
                        if let Some(i) = taxonomy.index_of(label) {
                            counts[i] += 1;
                        }
                    }
                    out.push(ex);
                }
            }
            BalanceMethod::Dga { client, controls, priorities } => {
                let made = generate_dga(name, train, *client, controls, priorities, deficit, rng.gen())?;
                counts[k] += made.len();
                out.extend(made);
            }
        }
    }
    Ok(out)
}

/// Linear threshold anneal for NLA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlaSchedule {
    #[serde(default = "default_tau_start")]
    pub tau_start: f64,
    #[serde(default = "default_tau_end")]
    pub tau_end: f64,
    pub epochs: usize,
}

fn default_tau_start() -> f64 {
    0.9
}

fn default_tau_end() -> f64 {
    0.7
}

impl NlaSchedule {
    pub fn new(epochs: usize) -> Self {
        Self { tau_start: default_tau_start(), tau_end: default_tau_end(), epochs }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5 < self.tau_end && self.tau_end <= self.tau_start && self.tau_start < 1.0) {
            return Err(AugmentError::Schedule(format!(
                "need 0.5 < tau_end <= tau_start < 1, got {} and {}",
                self.tau_end, self.tau_start
            )));
        }
        if self.epochs == 0 {
            return Err(AugmentError::Schedule("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Threshold at 1-based `epoch`: `tau_start` at epoch 1, `tau_end` at the
    /// last epoch.
    pub fn threshold(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        self.tau_start - (self.tau_start - self.tau_end) * (epoch.saturating_sub(1) as f64) / span
    }
}

/// Marks an augmented example dead when the model rejects its label with
/// confidence above the epoch's threshold: `1 - p(y) > tau`, where `p(y)` is
/// the lowest probability among the example's labels. Dead examples stay dead.
pub fn nla_filter(
    mut examples: Vec<AugmentedExample>,
    probabilities: &[Vec<f64>],
    epoch: usize,
    schedule: &NlaSchedule,
    taxonomy: &Taxonomy,
) -> Result<Vec<AugmentedExample>> {
    if examples.len() != probabilities.len() {
        return Err(AugmentError::Misaligned(format!(
            "{} examples, {} probability rows",
            examples.len(),
            probabilities.len()
        )));
    }
    if epoch == 0 || epoch > schedule.epochs {
        return Err(AugmentError::EpochOutOfRange { epoch, epochs: schedule.epochs });
    }
    let tau = schedule.threshold(epoch);
    for (ex, probs) in examples.iter_mut().zip(probabilities) {
        if probs.len() != taxonomy.len() {
            return Err(AugmentError::Misaligned(format!(
                "{}: {} probabilities for {} types",
                ex.record.tweet_id,
                probs.len(),
                taxonomy.len()
            )));
        }
        if !ex.alive {
            continue;
        }
        let mut p_label = f64::INFINITY;
        for name in ex.record.gold_its.iter().flatten() {
            let i = taxonomy.index_of(name).ok_or_else(|| AugmentError::UnknownIt(name.clone()))?;
            p_label = p_label.min(probs[i]);
        }
        if p_label.is_finite() && 1.0 - p_label > tau {
            ex.alive = false;
            ex.removed_at_epoch = Some(epoch);
        }
    }
    Ok(examples)
}

/// One JSON line per augmented example.
pub fn provenance_jsonl(examples: &[AugmentedExample]) -> String {
    examples
        .iter()
        .map(|ex| {
            let mut v = json!({
                "id": ex.record.tweet_id,
                "origin": ex.origin,
                "target_it": ex.target_it,
                "epoch_removed": ex.removed_at_epoch.map_or(-1, |e| e as i64),
            });
            match &ex.source {
                Source::Tweet(id) => v["source_tweet_id"] = json!(id),
                Source::PromptHash(h) => v["prompt_hash"] = json!(h),
            }
            serde_json::to_string(&v).expect("provenance serializes") + "\n"
        })
        .collect()
}

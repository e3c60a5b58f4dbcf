//! The embedding + Gaussian Naive Bayes baseline.
//!
//! Tweets are embedded by one or more [`EmbeddingProvider`]s whose outputs are
//! concatenated. A binary-relevance Gaussian NB (one present/absent model per
//! IT) predicts the IT set, and the priority is looked up from the mean gold
//! priority of each predicted IT in the training data.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelVector, Taxonomy, TweetRecord};
use crate::ensemble::select_its;
use crate::rng::{fnv1a64, splitmix64};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no embedding providers configured")]
    NoProviders,
    #[error("embedding provider `{name}` failed: {message}")]
    Provider { name: String, message: String },
    #[error("feature/label count mismatch: {features} feature rows, {labels} label rows")]
    RowMismatch { features: usize, labels: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("row {row} has {got} features, expected {expected}")]
    Dimension { row: usize, expected: usize, got: usize },
    #[error("row {row} has {got} labels, expected {expected}")]
    LabelWidth { row: usize, expected: usize, got: usize },
    #[error("cannot map priority for an empty IT set")]
    EmptyPrediction,
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// A sentence-embedding model, reached through an adapter.
pub trait EmbeddingProvider {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic stand-in for a sentence encoder: each token is hashed into a
/// pseudo-random vector in `[-1, 1]^dim` and the tweet vector is the mean over
/// its tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashEmbedding {
    pub name: String,
    pub dimension: usize,
    pub seed: u64,
}

impl HashEmbedding {
    pub fn new(name: impl Into<String>, dimension: usize, seed: u64) -> Self {
        Self { name: name.into(), dimension, seed }
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        let mut out = vec![0.0; self.dimension];
        if tokens.is_empty() {
            return Ok(out);
        }
        let salt = splitmix64(self.seed);
        for token in &tokens {
            let base = fnv1a64(token.as_bytes()) ^ salt;
            for (j, slot) in out.iter_mut().enumerate() {
                let h = splitmix64(base.wrapping_add(j as u64));
                *slot += (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }
}

/// Concatenates the embeddings of every provider, in order.
pub fn embed_concat(text: &str, providers: &[&dyn EmbeddingProvider]) -> Result<Vec<f64>> {
    if providers.is_empty() {
        return Err(BaselineError::NoProviders);
    }
    let mut out = Vec::with_capacity(providers.iter().map(|p| p.dimension()).sum());
    for p in providers {
        let v = p.embed(text).map_err(|e| match e {
            BaselineError::Provider { .. } => e,
            other => BaselineError::Provider { name: p.name().to_string(), message: other.to_string() },
        })?;
        if v.len() != p.dimension() {
            return Err(BaselineError::Provider {
                name: p.name().to_string(),
                message: format!("returned {} values, declared dimension {}", v.len(), p.dimension()),
            });
        }
        out.extend(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    /// Unsmoothed (population) variances.
    pub var: Vec<f64>,
}

/// Per-IT present/absent model.
#[derive(Debug, Clone, PartialEq)]
pub enum ItModel {
    /// No positive training example: always predicted absent.
    AlwaysAbsent,
    /// No negative training example: always predicted present.
    AlwaysPresent,
    Fitted {
        prior_present: f64,
        prior_absent: f64,
        present: ClassStats,
        absent: ClassStats,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub taxonomy_hash: String,
    pub dim: usize,
    /// Added to every class variance at prediction time.
    pub smoothing: f64,
    pub its: Vec<ItModel>,
}

/// Relative variance smoothing, as a fraction of the largest feature variance.
pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GnbOutput {
    /// Posterior probability of presence, per IT.
    pub probs: Vec<f64>,
    /// Predicted IT indices, ascending. Never empty.
    pub its: Vec<usize>,
}

fn mean_var(rows: &[&[f64]], dim: usize) -> ClassStats {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    ClassStats { mean, var }
}

impl GaussianNb {
    pub fn fit(features: &[Vec<f64>], labels: &[LabelVector], taxonomy: &Taxonomy) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(BaselineError::RowMismatch { features: features.len(), labels: labels.len() });
        }
        if features.len() < 2 {
            return Err(BaselineError::TooFewRows(features.len()));
        }
        let dim = features[0].len();
        for (row, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(BaselineError::Dimension { row, expected: dim, got: f.len() });
            }
        }
        for (row, l) in labels.iter().enumerate() {
            if l.len() != taxonomy.len() {
                return Err(BaselineError::LabelWidth { row, expected: taxonomy.len(), got: l.len() });
            }
        }

        let all: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let max_var = mean_var(&all, dim).var.into_iter().fold(0.0, f64::max);
        let smoothing = if max_var > 0.0 { VAR_SMOOTHING * max_var } else { VAR_SMOOTHING };

        let n = features.len() as f64;
        let its = (0..taxonomy.len())
            .map(|k| {
                let (pos, neg): (Vec<usize>, Vec<usize>) = (0..features.len()).partition(|&r| labels[r].get(k));
                if pos.is_empty() {
                    log::warn!("IT `{}` has no positive examples; always predicted absent", taxonomy.name(k));
                    return ItModel::AlwaysAbsent;
                }
                if neg.is_empty() {
                    log::warn!("IT `{}` has no negative examples; always predicted present", taxonomy.name(k));
                    return ItModel::AlwaysPresent;
                }
                let rows = |idx: &[usize]| idx.iter().map(|&r| features[r].as_slice()).collect::<Vec<_>>();
                ItModel::Fitted {
                    prior_present: pos.len() as f64 / n,
                    prior_absent: neg.len() as f64 / n,
                    present: mean_var(&rows(&pos), dim),
                    absent: mean_var(&rows(&neg), dim),
                }
            })
            .collect();

        Ok(Self { taxonomy_hash: taxonomy.hash(), dim, smoothing, its })
    }

    fn log_joint(&self, prior: f64, stats: &ClassStats, x: &[f64]) -> f64 {
        let mut lp = prior.ln();
        for ((xi, m), v) in x.iter().zip(&stats.mean).zip(&stats.var) {
            let v = v + self.smoothing;
            lp += -0.5 * (2.0 * PI * v).ln() - (xi - m) * (xi - m) / (2.0 * v);
        }
        lp
    }

    /// Posterior of presence for every IT.
    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(BaselineError::Dimension { row: 0, expected: self.dim, got: x.len() });
        }
        Ok(self
            .its
            .iter()
            .map(|m| match m {
                ItModel::AlwaysAbsent => 0.0,
                ItModel::AlwaysPresent => 1.0,
                ItModel::Fitted { prior_present, prior_absent, present, absent } => {
                    let d = self.log_joint(*prior_absent, absent, x) - self.log_joint(*prior_present, present, x);
                    logistic_of_neg(d)
                }
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<GnbOutput> {
        let probs = self.posteriors(x)?;
        let its = select_its(&probs);
        Ok(GnbOutput { probs, its })
    }

    /// Flat text serialization. Floats use Rust's shortest round-trip form.
    pub fn to_text(&self) -> String {
        fn row(out: &mut String, key: &str, v: &[f64]) {
            out.push_str(key);
            for x in v {
                let _ = write!(out, " {x:?}");
            }
            out.push('\n');
        }
        let mut out = String::new();
        let _ = writeln!(out, "crisis-triage-gnb v1");
        let _ = writeln!(out, "taxonomy {}", self.taxonomy_hash);
        let _ = writeln!(out, "labels {}", self.its.len());
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "smoothing {:?}", self.smoothing);
        for (k, m) in self.its.iter().enumerate() {
            match m {
                ItModel::AlwaysAbsent => {
                    let _ = writeln!(out, "it {k} always_absent");
                }
                ItModel::AlwaysPresent => {
                    let _ = writeln!(out, "it {k} always_present");
                }
                ItModel::Fitted { prior_present, prior_absent, present, absent } => {
                    let _ = writeln!(out, "it {k} fitted");
                    let _ = writeln!(out, "prior {prior_present:?} {prior_absent:?}");
                    row(&mut out, "present_mean", &present.mean);
                    row(&mut out, "present_var", &present.var);
                    row(&mut out, "absent_mean", &absent.mean);
                    row(&mut out, "absent_var", &absent.var);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cur = Cursor { lines: text.lines().enumerate() };
        let (n, header) = cur.expect("crisis-triage-gnb")?;
        if header.first().map(String::as_str) != Some("v1") {
            return Err(BaselineError::Parse { line: n, message: "unsupported version".into() });
        }
        let (n, tax) = cur.expect("taxonomy")?;
        let taxonomy_hash = tax
            .first()
            .cloned()
            .ok_or(BaselineError::Parse { line: n, message: "missing hash".into() })?;
        let labels = cur.scalar::<usize>("labels")?;
        let dim = cur.scalar::<usize>("dim")?;
        let smoothing = cur.scalar::<f64>("smoothing")?;

        let mut its = Vec::with_capacity(labels);
        for k in 0..labels {
            let (n, parts) = cur.expect("it")?;
            if parts.first().and_then(|s| s.parse::<usize>().ok()) != Some(k) {
                return Err(BaselineError::Parse { line: n, message: format!("expected it {k}") });
            }
            let model = match parts.get(1).map(String::as_str) {
                Some("always_absent") => ItModel::AlwaysAbsent,
                Some("always_present") => ItModel::AlwaysPresent,
                Some("fitted") => {
                    let prior = cur.floats("prior", Some(2))?;
                    let pm = cur.floats("present_mean", Some(dim))?;
                    let pv = cur.floats("present_var", Some(dim))?;
                    let am = cur.floats("absent_mean", Some(dim))?;
                    let av = cur.floats("absent_var", Some(dim))?;
                    ItModel::Fitted {
                        prior_present: prior[0],
                        prior_absent: prior[1],
                        present: ClassStats { mean: pm, var: pv },
                        absent: ClassStats { mean: am, var: av },
                    }
                }
                _ => return Err(BaselineError::Parse { line: n, message: "bad it kind".into() }),
            };
            its.push(model);
        }
        Ok(Self { taxonomy_hash, dim, smoothing, its })
    }
}

struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl Cursor<'_> {
    fn expect(&mut self, key: &str) -> Result<(usize, Vec<String>)> {
        let (i, l) = self.lines.next().ok_or_else(|| BaselineError::Parse {
            line: 0,
            message: format!("unexpected end of file, wanted `{key}`"),
        })?;
        let mut parts = l.split_whitespace().map(str::to_string);
        if parts.next().as_deref() != Some(key) {
            return Err(BaselineError::Parse { line: i + 1, message: format!("expected `{key}`") });
        }
        Ok((i + 1, parts.collect()))
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, parts) = self.expect(key)?;
        parts
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| BaselineError::Parse { line: n, message: format!("bad value for `{key}`") })
    }

    fn floats(&mut self, key: &str, len: Option<usize>) -> Result<Vec<f64>> {
        let (n, parts) = self.expect(key)?;
        let v = parts
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| BaselineError::Parse { line: n, message: format!("bad number in `{key}`") })?;
        if len.is_some_and(|l| l != v.len()) {
            return Err(BaselineError::Parse { line: n, message: format!("wrong length for `{key}`") });
        }
        Ok(v)
    }
}

/// `1 / (1 + e^d)`, evaluated without overflow.
fn logistic_of_neg(d: f64) -> f64 {
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Mean training priority per IT, aligned to taxonomy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityTable {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl PriorityTable {
    pub fn get(&self, it: usize) -> f64 {
        self.values[it]
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Records without both gold ITs and a gold priority are ignored. ITs without
/// any training tweet map to 0.0.
pub fn build_priority_table(train: &[TweetRecord], taxonomy: &Taxonomy) -> PriorityTable {
    let mut sums = vec![0.0; taxonomy.len()];
    let mut counts = vec![0usize; taxonomy.len()];
    for r in train {
        let (Some(its), Some(p)) = (&r.gold_its, r.gold_priority) else {
            continue;
        };
        for name in its {
            if let Some(i) = taxonomy.index_of(name) {
                sums[i] += p;
                counts[i] += 1;
            }
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (&s, &c))| {
            if c == 0 {
                log::info!("IT `{}` has no training tweets; priority defaults to 0", taxonomy.name(i));
                0.0
            } else {
                s / c as f64
            }
        })
        .collect();
    PriorityTable { names: taxonomy.names().to_vec(), values }
}

/// Priority of a predicted IT set: the largest mapped value.
pub fn map_priority(predicted_its: &[usize], table: &PriorityTable) -> Result<f64> {
    predicted_its
        .iter()
        .map(|&i| table.get(i))
        .reduce(f64::max)
        .ok_or(BaselineError::EmptyPrediction)
}

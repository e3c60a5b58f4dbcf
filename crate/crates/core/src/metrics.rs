//! Evaluation: IT F1 / accuracy, priority F1 / recall, per-event nDCG@100,
//! and leaderboard aggregation.
//!
//! Gold labels come from [`TweetRecord`]s, predictions from [`Prediction`]s,
//! joined on `tweet_id`. Predictions for tweets without a judgment are ignored;
//! a judged tweet without a prediction is an error.
//!
//! Conventions:
//!
//! * an IT (or priority level) with neither gold nor predicted positives has
//!   F1 = 0 and recall = 0;
//! * IT accuracy is the mean per-label binary accuracy over tweets × ITs;
//! * priorities are bucketed into four levels by [`PriorityLevels`];
//! * nDCG uses gold priority as gain, `1 / log2(rank + 1)` discount, ties in
//!   predicted priority broken by ascending `tweet_id`, and an event whose
//!   ideal DCG is zero scores 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Taxonomy, TweetRecord};
use crate::ensemble::Prediction;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction for judged tweets: {0:?}")]
    MissingPredictions(Vec<String>),
    #[error("tweet {0} has no gold information types")]
    Unlabeled(String),
    #[error("tweet {0} has no gold priority")]
    NoGoldPriority(String),
    #[error("tweet {0} has no event id")]
    MissingEvent(String),
    #[error("tweet {tweet_id}: {got} predicted probabilities/labels do not fit a taxonomy of {expected}")]
    Width { tweet_id: String, expected: usize, got: usize },
    #[error("priority levels must be strictly increasing inside (0, 1): {0:?}")]
    BadLevels([f64; 3]),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Actionable,
    All,
}

/// Thresholds splitting `[0, 1]` into Low / Medium / High / Critical.
/// A priority `p` falls into level `#{t : t <= p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityLevels {
    pub thresholds: [f64; 3],
}

impl Default for PriorityLevels {
    fn default() -> Self {
        Self { thresholds: [0.25, 0.5, 0.75] }
    }
}

impl PriorityLevels {
    pub fn new(thresholds: [f64; 3]) -> Result<Self> {
        let ok = thresholds.iter().all(|&t| t > 0.0 && t < 1.0)
            && thresholds.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(MetricsError::BadLevels(thresholds));
        }
        Ok(Self { thresholds })
    }

    pub const COUNT: usize = 4;

    pub fn level(&self, p: f64) -> usize {
        self.thresholds.iter().filter(|&&t| t <= p).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub ndcg: f64,
    pub it_f1_a: f64,
    pub it_f1_all: f64,
    pub it_acc: f64,
    pub pri_f1_a: f64,
    pub pri_f1_all: f64,
    pub pri_r_a: f64,
    pub pri_r_all: f64,
}

/// Column headers, in table order.
pub const METRIC_NAMES: [&str; 8] = [
    "nDCG",
    "IT F1 [A]",
    "IT F1 [All]",
    "IT Acc.",
    "Pri F1 [A]",
    "Pri F1 [All]",
    "Pri R [A]",
    "Pri R [All]",
];

impl MetricReport {
    pub fn values(&self) -> [f64; 8] {
        [
            self.ndcg,
            self.it_f1_a,
            self.it_f1_all,
            self.it_acc,
            self.pri_f1_a,
            self.pri_f1_all,
            self.pri_r_a,
            self.pri_r_all,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            ndcg: v[0],
            it_f1_a: v[1],
            it_f1_all: v[2],
            it_acc: v[3],
            pri_f1_a: v[4],
            pri_f1_all: v[5],
            pri_r_a: v[6],
            pri_r_all: v[7],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

struct Joined<'a> {
    gold: &'a TweetRecord,
    gold_its: Vec<usize>,
    pred: &'a Prediction,
}

fn join<'a>(gold: &'a [TweetRecord], pred: &'a [Prediction], taxonomy: &Taxonomy) -> Result<Vec<Joined<'a>>> {
    let by_id: HashMap<&str, &Prediction> = pred.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
    let missing: Vec<String> = gold
        .iter()
        .filter(|g| !by_id.contains_key(g.tweet_id.as_str()))
        .map(|g| g.tweet_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    gold.iter()
        .map(|g| {
            let names = g.gold_its.as_ref().ok_or_else(|| MetricsError::Unlabeled(g.tweet_id.clone()))?;
            let gold_its = names
                .iter()
                .filter_map(|n| taxonomy.index_of(n))
                .collect::<Vec<_>>();
            let p = by_id[g.tweet_id.as_str()];
            if p.its.iter().any(|&i| i >= taxonomy.len()) {
                return Err(MetricsError::Width {
                    tweet_id: g.tweet_id.clone(),
                    expected: taxonomy.len(),
                    got: p.its.iter().max().map_or(0, |m| m + 1),
                });
            }
            Ok(Joined { gold: g, gold_its, pred: p })
        })
        .collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Macro-averaged per-IT F1 over the actionable ITs or all ITs.
pub fn it_f1(gold: &[TweetRecord], pred: &[Prediction], taxonomy: &Taxonomy, subset: Subset) -> Result<f64> {
    let rows = join(gold, pred, taxonomy)?;
    let its: Vec<usize> = match subset {
        Subset::Actionable => taxonomy.actionable().to_vec(),
        Subset::All => (0..taxonomy.len()).collect(),
    };
    let scores: Vec<f64> = its
        .iter()
        .map(|&k| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for r in &rows {
                match (r.gold_its.contains(&k), r.pred.its.contains(&k)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            if tp + fp + fn_ == 0 {
                log::debug!("IT `{}` has no gold or predicted positives; F1 = 0", taxonomy.name(k));
            }
            f1(tp, fp, fn_)
        })
        .collect();
    Ok(mean(&scores))
}

/// Mean per-label binary accuracy over all tweets and all ITs.
pub fn it_accuracy(gold: &[TweetRecord], pred: &[Prediction], taxonomy: &Taxonomy) -> Result<f64> {
    let rows = join(gold, pred, taxonomy)?;
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for r in &rows {
        for k in 0..taxonomy.len() {
            if r.gold_its.contains(&k) == r.pred.its.contains(&k) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (rows.len() * taxonomy.len()) as f64)
}

/// Macro F1 and macro recall over the four priority levels. With
/// `Subset::Actionable`, only tweets with at least one actionable gold IT
/// count; if there are none the result is `(0, 0)`.
pub fn priority_f1_recall(
    gold: &[TweetRecord],
    pred: &[Prediction],
    taxonomy: &Taxonomy,
    levels: &PriorityLevels,
    subset: Subset,
) -> Result<(f64, f64)> {
    let rows = join(gold, pred, taxonomy)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for r in &rows {
        if subset == Subset::Actionable && !r.gold_its.iter().any(|&i| taxonomy.is_actionable(i)) {
            continue;
        }
        let g = r.gold.gold_priority.ok_or_else(|| MetricsError::NoGoldPriority(r.gold.tweet_id.clone()))?;
        pairs.push((levels.level(g), levels.level(r.pred.priority)));
    }
    if pairs.is_empty() {
        log::warn!("no tweets in the {subset:?} subset; priority F1/recall reported as 0");
        return Ok((0.0, 0.0));
    }
    let mut f1s = Vec::with_capacity(PriorityLevels::COUNT);
    let mut recalls = Vec::with_capacity(PriorityLevels::COUNT);
    for level in 0..PriorityLevels::COUNT {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &(g, p) in &pairs {
            match (g == level, p == level) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        f1s.push(f1(tp, fp, fn_));
        recalls.push(if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 });
    }
    Ok((mean(&f1s), mean(&recalls)))
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// Mean per-event nDCG over the top `k` tweets ranked by predicted priority.
pub fn ndcg_at(gold: &[TweetRecord], pred: &[Prediction], k: usize) -> Result<f64> {
    let by_id: HashMap<&str, &Prediction> = pred.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
    let mut events: BTreeMap<&str, Vec<(&str, f64, f64)>> = BTreeMap::new();
    let mut missing = Vec::new();
    for g in gold {
        if g.event_id.is_empty() {
            return Err(MetricsError::MissingEvent(g.tweet_id.clone()));
        }
        let gain = g.gold_priority.ok_or_else(|| MetricsError::NoGoldPriority(g.tweet_id.clone()))?;
        match by_id.get(g.tweet_id.as_str()) {
            Some(p) => events.entry(&g.event_id).or_default().push((&g.tweet_id, gain, p.priority)),
            None => missing.push(g.tweet_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    if events.is_empty() {
        return Ok(0.0);
    }
    let mut per_event = Vec::with_capacity(events.len());
    for (event, mut tweets) in events {
        let n = k.min(tweets.len());
        let mut ideal: Vec<f64> = tweets.iter().map(|t| t.1).collect();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(ideal.into_iter().take(n));
        if idcg == 0.0 {
            log::info!("event {event}: all gold priorities are zero; nDCG = 1");
            per_event.push(1.0);
            continue;
        }
        tweets.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(b.0)));
        per_event.push(dcg(tweets.iter().take(n).map(|t| t.1)) / idcg);
    }
    Ok(mean(&per_event))
}

pub fn ndcg_top100(gold: &[TweetRecord], pred: &[Prediction]) -> Result<f64> {
    ndcg_at(gold, pred, 100)
}

/// All eight metrics for one run.
pub fn evaluate(
    gold: &[TweetRecord],
    pred: &[Prediction],
    taxonomy: &Taxonomy,
    levels: &PriorityLevels,
) -> Result<MetricReport> {
    let (pri_f1_a, pri_r_a) = priority_f1_recall(gold, pred, taxonomy, levels, Subset::Actionable)?;
    let (pri_f1_all, pri_r_all) = priority_f1_recall(gold, pred, taxonomy, levels, Subset::All)?;
    Ok(MetricReport {
        ndcg: ndcg_top100(gold, pred)?,
        it_f1_a: it_f1(gold, pred, taxonomy, Subset::Actionable)?,
        it_f1_all: it_f1(gold, pred, taxonomy, Subset::All)?,
        it_acc: it_accuracy(gold, pred, taxonomy)?,
        pri_f1_a,
        pri_f1_all,
        pri_r_a,
        pri_r_all,
    })
}

/// Per-run reports plus per-metric median and maximum rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub runs: Vec<(String, MetricReport)>,
    pub med: MetricReport,
    pub max: MetricReport,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Returns `None` for an empty run list.
pub fn aggregate_leaderboard(reports: &[(String, MetricReport)]) -> Option<Leaderboard> {
    if reports.is_empty() {
        return None;
    }
    let mut med = [0.0; 8];
    let mut max = [0.0; 8];
    for c in 0..8 {
        let column: Vec<f64> = reports.iter().map(|(_, r)| r.values()[c]).collect();
        max[c] = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        med[c] = median(column);
    }
    Some(Leaderboard {
        runs: reports.to_vec(),
        med: MetricReport::from_values(med),
        max: MetricReport::from_values(max),
    })
}

impl Leaderboard {
    /// Fixed-width text table: one row per run, then `med` and `max`.
    pub fn render(&self) -> String {
        let name_w = self
            .runs
            .iter()
            .map(|(n, _)| n.chars().count())
            .chain([4])
            .max()
            .unwrap_or(4);
        let col_w = METRIC_NAMES.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
        let rule = "-".repeat(name_w + (col_w + 2) * METRIC_NAMES.len());
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "");
        for h in METRIC_NAMES {
            let _ = write!(out, "  {h:>col_w$}");
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        let row = |out: &mut String, name: &str, r: &MetricReport| {
            let _ = write!(out, "{name:<name_w$}");
            for v in r.values() {
                let _ = write!(out, "  {v:>col_w$.4}");
            }
            out.push('\n');
        };
        for (name, r) in &self.runs {
            row(&mut out, name, r);
        }
        out.push_str(&rule);
        out.push('\n');
        row(&mut out, "med", &self.med);
        row(&mut out, "max", &self.max);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("leaderboard serializes") + "\n"
    }
}

//! Brute-force oracles and random fixtures shared by the integration tests.
//! Nothing here calls into the library's metric, baseline or ensemble code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use crisis_triage::corpus::{Taxonomy, TweetRecord};
use crisis_triage::ensemble::Prediction;
use rand::seq::SliceRandom;
use rand::Rng;

/// `n` types named `it0..`; `it0` is actionable when there are at least two
/// types, and the last type is the irrelevant one.
pub fn small_taxonomy(n: usize) -> Taxonomy {
    let names: Vec<String> = (0..n).map(|i| format!("it{i}")).collect();
    let actionable: Vec<String> = if n >= 2 { vec![names[0].clone()] } else { vec![] };
    Taxonomy::new(&names, &actionable, &names[n - 1]).unwrap()
}

pub fn record(id: &str, event: &str, its: &[&str], priority: f64) -> TweetRecord {
    TweetRecord {
        tweet_id: id.into(),
        event_id: event.into(),
        text: String::new(),
        gold_its: Some(its.iter().map(|s| s.to_string()).collect()),
        gold_priority: Some(priority),
    }
}

pub fn prediction(id: &str, event: &str, its: &[usize], probs: &[f64], priority: f64) -> Prediction {
    Prediction {
        tweet_id: id.into(),
        event_id: event.into(),
        its: its.to_vec(),
        probs: probs.to_vec(),
        priority,
    }
}

const PRIORITY_GRID: [f64; 9] = [0.0, 0.1, 0.25, 0.3, 0.5, 0.6, 0.75, 0.9, 1.0];

fn random_priority(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.5) {
        *PRIORITY_GRID.choose(rng).unwrap()
    } else {
        rng.gen()
    }
}

fn random_subset(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mask = rng.gen_range(1..(1u32 << n));
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

pub struct MetricFixture {
    pub taxonomy: Taxonomy,
    pub gold: Vec<TweetRecord>,
    pub pred: Vec<Prediction>,
}

/// At most 10 tweets, 4 ITs and 2 events. Priorities mix grid values (ties,
/// level boundaries) with uniform draws; predictions come in shuffled order.
pub fn random_metric_fixture(rng: &mut impl Rng) -> MetricFixture {
    let n_its = rng.gen_range(1..=4);
    let taxonomy = small_taxonomy(n_its);
    let n_tweets = rng.gen_range(1..=10);
    let n_events = rng.gen_range(1..=2);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for t in 0..n_tweets {
        let id = format!("t{t}");
        let event = format!("e{}", rng.gen_range(0..n_events));
        let its: Vec<String> = random_subset(rng, n_its).iter().map(|&i| taxonomy.name(i).to_string()).collect();
        gold.push(TweetRecord {
            tweet_id: id.clone(),
            event_id: event.clone(),
            text: String::new(),
            gold_its: Some(its),
            gold_priority: Some(random_priority(rng)),
        });
        let probs: Vec<f64> = (0..n_its).map(|_| rng.gen()).collect();
        pred.push(Prediction {
            tweet_id: id,
            event_id: event,
            its: random_subset(rng, n_its),
            probs,
            priority: random_priority(rng),
        });
    }
    pred.shuffle(rng);
    MetricFixture { taxonomy, gold, pred }
}

fn gold_set(r: &TweetRecord, tax: &Taxonomy) -> BTreeSet<usize> {
    r.gold_its.iter().flatten().map(|n| tax.index_of(n).unwrap()).collect()
}

fn pred_for<'a>(f: &'a MetricFixture, id: &str) -> &'a Prediction {
    f.pred.iter().find(|p| p.tweet_id == id).unwrap()
}

/// F1 through precision and recall; 0 when undefined.
fn f1_from_counts(tp: f64, fp: f64, fn_: f64) -> f64 {
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn oracle_it_f1(f: &MetricFixture, its: &[usize]) -> f64 {
    if its.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &k in its {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for g in &f.gold {
            let in_gold = gold_set(g, &f.taxonomy).contains(&k);
            let in_pred = pred_for(f, &g.tweet_id).its.contains(&k);
            if in_gold && in_pred {
                tp += 1.0;
            } else if in_pred {
                fp += 1.0;
            } else if in_gold {
                fn_ += 1.0;
            }
        }
        total += f1_from_counts(tp, fp, fn_);
    }
    total / its.len() as f64
}

pub fn oracle_it_accuracy(f: &MetricFixture) -> f64 {
    let mut hits = 0usize;
    let mut cells = 0usize;
    for g in &f.gold {
        let gs = gold_set(g, &f.taxonomy);
        let p = pred_for(f, &g.tweet_id);
        for k in 0..f.taxonomy.len() {
            cells += 1;
            if gs.contains(&k) == p.its.contains(&k) {
                hits += 1;
            }
        }
    }
    hits as f64 / cells as f64
}

fn level(p: f64) -> usize {
    if p < 0.25 {
        0
    } else if p < 0.5 {
        1
    } else if p < 0.75 {
        2
    } else {
        3
    }
}

/// Macro F1 and macro recall from a 4x4 confusion matrix at thresholds
/// 0.25 / 0.5 / 0.75. A level nobody holds in gold contributes recall 0.
pub fn oracle_priority(f: &MetricFixture, actionable_only: bool) -> (f64, f64) {
    let mut m = [[0.0f64; 4]; 4];
    let mut any = false;
    for g in &f.gold {
        let gs = gold_set(g, &f.taxonomy);
        if actionable_only && !gs.iter().any(|&i| f.taxonomy.is_actionable(i)) {
            continue;
        }
        any = true;
        m[level(g.gold_priority.unwrap())][level(pred_for(f, &g.tweet_id).priority)] += 1.0;
    }
    if !any {
        return (0.0, 0.0);
    }
    let (mut f1, mut rec) = (0.0, 0.0);
    for l in 0..4 {
        let tp = m[l][l];
        let row: f64 = m[l].iter().sum();
        let col: f64 = (0..4).map(|g| m[g][l]).sum();
        f1 += f1_from_counts(tp, col - tp, row - tp);
        rec += if row > 0.0 { tp / row } else { 0.0 };
    }
    (f1 / 4.0, rec / 4.0)
}

/// Rank of each item under "higher key first, then smaller id": the number
/// of items that come before it.
fn ranks(items: &[(String, f64)]) -> Vec<usize> {
    items
        .iter()
        .map(|(id, key)| {
            items
                .iter()
                .filter(|(other, k)| k > key || (k == key && other < id))
                .count()
        })
        .collect()
}

/// Mean over events of DCG@k / IDCG@k with discount `1 / log2(rank + 2)`
/// for zero-based ranks; an event with IDCG 0 scores 1.
pub fn oracle_ndcg(gold: &[TweetRecord], pred: &[Prediction], k: usize) -> f64 {
    let mut events: BTreeMap<&str, Vec<&TweetRecord>> = BTreeMap::new();
    for g in gold {
        events.entry(&g.event_id).or_default().push(g);
    }
    let mut total = 0.0;
    for tweets in events.values() {
        let gains: Vec<f64> = tweets.iter().map(|t| t.gold_priority.unwrap()).collect();
        let by_pred: Vec<(String, f64)> = tweets
            .iter()
            .map(|t| (t.tweet_id.clone(), pred.iter().find(|p| p.tweet_id == t.tweet_id).unwrap().priority))
            .collect();
        let by_gain: Vec<(String, f64)> = tweets.iter().map(|t| (t.tweet_id.clone(), t.gold_priority.unwrap())).collect();
        let discounted = |r: &[usize]| -> f64 {
            r.iter()
                .zip(&gains)
                .filter(|(&rank, _)| rank < k)
                .map(|(&rank, &g)| g / ((rank + 2) as f64).log2())
                .sum()
        };
        let idcg = discounted(&ranks(&by_gain));
        total += if idcg == 0.0 { 1.0 } else { discounted(&ranks(&by_pred)) / idcg };
    }
    if events.is_empty() {
        0.0
    } else {
        total / events.len() as f64
    }
}

pub struct GnbFixture {
    pub features: Vec<Vec<f64>>,
    /// `labels[row][it]`.
    pub labels: Vec<Vec<bool>>,
    pub queries: Vec<Vec<f64>>,
}

/// At most 10 points, 3 features and 3 ITs. Every IT is either degenerate
/// (all present or all absent) or has at least two points in each class.
pub fn random_gnb_fixture(rng: &mut impl Rng) -> GnbFixture {
    let n = rng.gen_range(4..=10);
    let dim = rng.gen_range(1..=3);
    let its = rng.gen_range(1..=3);
    let features: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let mut labels = vec![vec![false; its]; n];
    for k in 0..its {
        let column: Vec<bool> = match rng.gen_range(0..10) {
            0 => vec![false; n],
            1 => vec![true; n],
            _ => loop {
                let c: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
                let pos = c.iter().filter(|&&b| b).count();
                if pos >= 2 && n - pos >= 2 {
                    break c;
                }
            },
        };
        for (row, b) in labels.iter_mut().zip(column) {
            row[k] = b;
        }
    }
    let mut queries = features.clone();
    queries.extend((0..3).map(|_| (0..dim).map(|_| rng.gen_range(-2.5..2.5)).collect::<Vec<_>>()));
    GnbFixture { features, labels, queries }
}

fn population_stats(rows: &[&Vec<f64>], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Posterior of presence per IT, `1 / (1 + (P(absent) / P(present)) * prod_j
/// N(x_j; absent) / N(x_j; present))`, with the density ratios written out
/// and their exponents summed before a single `exp`. Smoothing is 1e-9 times
/// the largest population variance over all rows (1e-9 if every feature is
/// constant).
pub fn oracle_gnb_posteriors(f: &GnbFixture, x: &[f64]) -> Vec<f64> {
    let dim = f.features[0].len();
    let all: Vec<&Vec<f64>> = f.features.iter().collect();
    let max_var = (0..dim).map(|j| population_stats(&all, j).1).fold(0.0, f64::max);
    let eps = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
    let its = f.labels[0].len();
    (0..its)
        .map(|k| {
            let pos: Vec<&Vec<f64>> = f.features.iter().zip(&f.labels).filter(|(_, l)| l[k]).map(|(r, _)| r).collect();
            let neg: Vec<&Vec<f64>> = f.features.iter().zip(&f.labels).filter(|(_, l)| !l[k]).map(|(r, _)| r).collect();
            if pos.is_empty() {
                return 0.0;
            }
            if neg.is_empty() {
                return 1.0;
            }
            let mut scale = neg.len() as f64 / pos.len() as f64;
            let mut exponent = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let (mp, vp) = population_stats(&pos, j);
                let (ma, va) = population_stats(&neg, j);
                let (vp, va) = (vp + eps, va + eps);
                scale *= (vp / va).sqrt();
                exponent += (xj - mp).powi(2) / (2.0 * vp) - (xj - ma).powi(2) / (2.0 * va);
            }
            1.0 / (1.0 + scale * exponent.exp())
        })
        .collect()
}

/// Per tweet of the first member: union of IT sets, max of priorities and
/// elementwise max of probabilities over every member.
pub fn oracle_ensemble(members: &[Vec<Prediction>]) -> Vec<Prediction> {
    members[0]
        .iter()
        .map(|base| {
            let same: Vec<&Prediction> = members
                .iter()
                .map(|m| m.iter().find(|p| p.tweet_id == base.tweet_id).unwrap())
                .collect();
            let its: BTreeSet<usize> = same.iter().flat_map(|p| p.its.iter().copied()).collect();
            let priority = same.iter().map(|p| p.priority).fold(f64::NEG_INFINITY, f64::max);
            let probs = (0..base.probs.len())
                .map(|i| same.iter().map(|p| p.probs[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Prediction { its: its.into_iter().collect(), priority, probs, ..base.clone() }
        })
        .collect()
}

/// `members` independent predictions over the same `tweets` tweets, each
/// member in its own random order.
pub fn random_members(rng: &mut impl Rng, members: usize, tweets: usize, width: usize) -> Vec<Vec<Prediction>> {
    (0..members)
        .map(|_| {
            let mut preds: Vec<Prediction> = (0..tweets)
                .map(|t| {
                    let probs: Vec<f64> = (0..width).map(|_| rng.gen()).collect();
                    Prediction {
                        tweet_id: format!("t{t}"),
                        event_id: "e".into(),
                        its: random_subset(rng, width),
                        probs,
                        priority: rng.gen(),
                    }
                })
                .collect();
            preds.shuffle(rng);
            preds
        })
        .collect()
}

/// Relative difference, with an absolute floor for values that both
/// underflow.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale < 1e-300 || (a - b).abs() <= tol * scale
}

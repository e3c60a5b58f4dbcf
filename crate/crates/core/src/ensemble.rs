//! Union/max ensembling and the `Irrelevant` post-processing rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member {member} does not cover the same tweets: missing {missing:?}, unexpected {unexpected:?}")]
    TweetMismatch {
        member: usize,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("member {member}, tweet {tweet_id}: {got} probabilities, expected {expected}")]
    ProbWidth {
        member: usize,
        tweet_id: String,
        expected: usize,
        got: usize,
    },
}

/// Prediction for one tweet.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tweet_id: String,
    pub event_id: String,
    /// Predicted IT indices, ascending, non-empty.
    pub its: Vec<usize>,
    /// Probability per IT, aligned to taxonomy order.
    pub probs: Vec<f64>,
    pub priority: f64,
}

/// Decision threshold on per-IT probabilities.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// ITs whose probability exceeds [`DECISION_THRESHOLD`]; if there are none,
/// the single most probable IT (lowest index on ties).
pub fn select_its(probs: &[f64]) -> Vec<usize> {
    let its: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > DECISION_THRESHOLD).collect();
    if !its.is_empty() || probs.is_empty() {
        return its;
    }
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    vec![best]
}

/// Which probabilities `Irrelevant` has to beat in [`postprocess_irrelevant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrrelevantScope {
    /// Only the other ITs in the predicted set.
    #[default]
    CoPredicted,
    /// Every other IT in the taxonomy.
    AllOthers,
}

/// Per tweet: union of member IT sets, max of member priorities and
/// elementwise max of member probabilities. Output follows the first member's
/// tweet order.
pub fn ensemble(members: &[Vec<Prediction>]) -> Result<Vec<Prediction>, EnsembleError> {
    let (first, rest) = members.split_first().ok_or(EnsembleError::NoMembers)?;
    let width = first.first().map_or(0, |p| p.probs.len());

    let mut lookups = Vec::with_capacity(rest.len());
    for (m, preds) in rest.iter().enumerate() {
        let map: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.tweet_id.as_str(), p)).collect();
        let mut missing: Vec<String> = first
            .iter()
            .filter(|p| !map.contains_key(p.tweet_id.as_str()))
            .map(|p| p.tweet_id.clone())
            .collect();
        let expected: std::collections::HashSet<&str> = first.iter().map(|p| p.tweet_id.as_str()).collect();
        let mut unexpected: Vec<String> = preds
            .iter()
            .filter(|p| !expected.contains(p.tweet_id.as_str()))
            .map(|p| p.tweet_id.clone())
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() || map.len() != preds.len() {
            missing.sort();
            unexpected.sort();
            return Err(EnsembleError::TweetMismatch { member: m + 1, missing, unexpected });
        }
        lookups.push(map);
    }

    let mut out = Vec::with_capacity(first.len());
    for base in first {
        check_width(0, base, width)?;
        let mut merged = base.clone();
        for (m, map) in lookups.iter().enumerate() {
            let other = map[base.tweet_id.as_str()];
            check_width(m + 1, other, width)?;
            merged.its.extend_from_slice(&other.its);
            merged.priority = merged.priority.max(other.priority);
            for (p, q) in merged.probs.iter_mut().zip(&other.probs) {
                *p = p.max(*q);
            }
        }
        merged.its.sort_unstable();
        merged.its.dedup();
        out.push(merged);
    }
    Ok(out)
}

fn check_width(member: usize, p: &Prediction, expected: usize) -> Result<(), EnsembleError> {
    if p.probs.len() != expected {
        return Err(EnsembleError::ProbWidth {
            member,
            tweet_id: p.tweet_id.clone(),
            expected,
            got: p.probs.len(),
        });
    }
    Ok(())
}

/// Resolves predictions that mix `Irrelevant` with other ITs. `Irrelevant`
/// wins only if its probability is strictly greater than every compared
/// probability; the tweet then becomes `{Irrelevant}` with priority 0.
/// Otherwise `Irrelevant` is dropped and the priority kept.
pub fn postprocess_irrelevant(pred: &Prediction, irrelevant: usize, scope: IrrelevantScope) -> Prediction {
    if pred.its.len() < 2 || !pred.its.contains(&irrelevant) {
        return pred.clone();
    }
    let p_irr = pred.probs[irrelevant];
    let wins = match scope {
        IrrelevantScope::CoPredicted => pred
            .its
            .iter()
            .filter(|&&i| i != irrelevant)
            .all(|&i| p_irr > pred.probs[i]),
        IrrelevantScope::AllOthers => pred
            .probs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != irrelevant)
            .all(|(_, &p)| p_irr > p),
    };
    let mut out = pred.clone();
    if wins {
        out.its = vec![irrelevant];
        out.priority = 0.0;
    } else {
        out.its.retain(|&i| i != irrelevant);
    }
    out
}

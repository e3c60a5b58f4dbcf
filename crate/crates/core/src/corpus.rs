//! Taxonomy, tweet ingestion, label vectors and train/dev splitting.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;

const PACKAGED_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` has the wrong type")]
    WrongType { line: usize, field: &'static str },
    #[error("line {line}: unexpected field `{field}`")]
    UnexpectedField { line: usize, field: String },
    #[error("line {line}: unknown information type `{name}`")]
    UnknownItOnLine { line: usize, name: String },
    #[error("unknown information type `{0}`")]
    UnknownIt(String),
    #[error("line {line}: priority out of range: {value}")]
    PriorityOutOfRange { line: usize, value: f64 },
    #[error("line {line}: gold_its is empty")]
    EmptyGoldOnLine { line: usize },
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("dev fraction must lie strictly between 0 and 1, got {0}")]
    DevFraction(f64),
    #[error("cannot split an empty record set")]
    NothingToSplit,
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// The information-type taxonomy.
///
/// Type order is significant: label vectors, probability vectors and the
/// probability sidecar files are all aligned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    types: Vec<String>,
    actionable: Vec<usize>,
    irrelevant: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    types: Vec<String>,
    actionable: Vec<String>,
    irrelevant: String,
}

impl Taxonomy {
    /// Builds a taxonomy from type names, an actionable subset and the name of
    /// the `Irrelevant` type. Sizes are not fixed so that reduced taxonomies
    /// can be used for testing; see [`Taxonomy::is_full_size`].
    pub fn new<S: AsRef<str>>(types: &[S], actionable: &[S], irrelevant: &str) -> Result<Self> {
        let types: Vec<String> = types.iter().map(|s| s.as_ref().to_string()).collect();
        if types.is_empty() {
            return Err(CorpusError::InvalidTaxonomy("no types".into()));
        }
        let mut index = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if t.trim().is_empty() || t.contains([',', '\t', '\n']) {
                return Err(CorpusError::InvalidTaxonomy(format!("bad type name {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidTaxonomy(format!("duplicate type `{t}`")));
            }
        }
        let irrelevant = *index.get(irrelevant).ok_or_else(|| {
            CorpusError::InvalidTaxonomy(format!("irrelevant type `{irrelevant}` not in types"))
        })?;
        let mut act = Vec::with_capacity(actionable.len());
        for a in actionable {
            let a = a.as_ref();
            let i = *index.get(a).ok_or_else(|| {
                CorpusError::InvalidTaxonomy(format!("actionable type `{a}` not in types"))
            })?;
            if i == irrelevant {
                return Err(CorpusError::InvalidTaxonomy(
                    "the irrelevant type cannot be actionable".into(),
                ));
            }
            if act.contains(&i) {
                return Err(CorpusError::InvalidTaxonomy(format!("duplicate actionable `{a}`")));
            }
            act.push(i);
        }
        act.sort_unstable();
        Ok(Self { types, actionable: act, irrelevant, index })
    }

    /// The 25-type TREC-IS taxonomy shipped with the crate.
    pub fn trec_is() -> Self {
        Self::from_json_str(PACKAGED_TAXONOMY).expect("packaged taxonomy is valid")
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: TaxonomyFile = serde_json::from_str(json)
            .map_err(|e| CorpusError::InvalidTaxonomy(e.to_string()))?;
        Self::new(&file.types, &file.actionable, &file.irrelevant)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&json)
    }

    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            types: self.types.clone(),
            actionable: self.actionable.iter().map(|&i| self.types[i].clone()).collect(),
            irrelevant: self.types[self.irrelevant].clone(),
        };
        serde_json::to_string(&file).expect("taxonomy serializes")
    }

    /// Short content hash, written into model files and run-file headers.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..8])
    }

    /// True for the 25-type / 6-actionable shape of the track taxonomy.
    pub fn is_full_size(&self) -> bool {
        self.types.len() == 25 && self.actionable.len() == 6
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.types
    }

    pub fn name(&self, i: usize) -> &str {
        &self.types[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn actionable(&self) -> &[usize] {
        &self.actionable
    }

    pub fn is_actionable(&self, i: usize) -> bool {
        self.actionable.binary_search(&i).is_ok()
    }

    pub fn irrelevant(&self) -> usize {
        self.irrelevant
    }

    pub fn irrelevant_name(&self) -> &str {
        &self.types[self.irrelevant]
    }
}

/// One tweet. `gold_its`, when present, is non-empty and in taxonomy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub event_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_its: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_priority: Option<f64>,
}

impl TweetRecord {
    pub fn has_it(&self, name: &str) -> bool {
        self.gold_its.as_ref().is_some_and(|its| its.iter().any(|t| t == name))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Multi-label target aligned to taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in indices {
            v.bits[i] = true;
        }
        v
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

pub fn binarize<S: AsRef<str>>(gold_its: &[S], taxonomy: &Taxonomy) -> Result<LabelVector> {
    if gold_its.is_empty() {
        return Err(CorpusError::EmptyLabelSet);
    }
    let mut v = LabelVector::zeros(taxonomy.len());
    for name in gold_its {
        let name = name.as_ref();
        let i = taxonomy.index_of(name).ok_or_else(|| CorpusError::UnknownIt(name.to_string()))?;
        v.set(i, true);
    }
    Ok(v)
}

/// Inverse of [`binarize`]; names come back in taxonomy order.
pub fn unbinarize(labels: &LabelVector, taxonomy: &Taxonomy) -> Vec<String> {
    labels.indices().map(|i| taxonomy.name(i).to_string()).collect()
}

pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Vec<TweetRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&content, taxonomy)
}

/// Parses line-delimited JSON records. Blank lines are skipped; any invalid
/// line fails the whole parse. Line numbers in errors are 1-based.
pub fn parse_corpus(content: &str, taxonomy: &Taxonomy) -> Result<Vec<TweetRecord>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1, taxonomy))
        .collect()
}

const FIELDS: [&str; 5] = ["tweet_id", "event_id", "text", "gold_its", "gold_priority"];

fn parse_record(line_text: &str, line: usize, taxonomy: &Taxonomy) -> Result<TweetRecord> {
    let value: Value = serde_json::from_str(line_text)
        .map_err(|e| CorpusError::Malformed { line, message: e.to_string() })?;
    let Value::Object(obj) = value else {
        return Err(CorpusError::Malformed { line, message: "expected a JSON object".into() });
    };
    if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(CorpusError::UnexpectedField { line, field: extra.clone() });
    }

    let tweet_id = required_str(&obj, "tweet_id", line)?;
    let event_id = required_str(&obj, "event_id", line)?;
    let text = required_str(&obj, "text", line)?;

    let gold_its = match obj.get("gold_its") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut idx = Vec::with_capacity(items.len());
            for item in items {
                let name = item
                    .as_str()
                    .ok_or(CorpusError::WrongType { line, field: "gold_its" })?;
                let i = taxonomy
                    .index_of(name)
                    .ok_or_else(|| CorpusError::UnknownItOnLine { line, name: name.to_string() })?;
                idx.push(i);
            }
            if idx.is_empty() {
                return Err(CorpusError::EmptyGoldOnLine { line });
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.len() > 1 && idx.contains(&taxonomy.irrelevant()) {
                log::warn!(
                    "line {line}: tweet {tweet_id} combines `{}` with other types; dropping it",
                    taxonomy.irrelevant_name()
                );
                idx.retain(|&i| i != taxonomy.irrelevant());
            }
            Some(idx.into_iter().map(|i| taxonomy.name(i).to_string()).collect())
        }
        Some(_) => return Err(CorpusError::WrongType { line, field: "gold_its" }),
    };

    let gold_priority = match obj.get("gold_priority") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let p = v.as_f64().ok_or(CorpusError::WrongType { line, field: "gold_priority" })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::PriorityOutOfRange { line, value: p });
            }
            Some(p)
        }
    };

    Ok(TweetRecord { tweet_id, event_id, text, gold_its, gold_priority })
}

fn required_str(obj: &Map<String, Value>, field: &'static str, line: usize) -> Result<String> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(CorpusError::MissingField { line, field }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(CorpusError::WrongType { line, field }),
    }
}

/// Uniform random train/dev partition. `|dev| = round(dev_fraction * n)`;
/// both halves keep the input order.
pub fn split_train_dev<T: Clone>(
    records: &[T],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::DevFraction(dev_fraction));
    }
    if records.is_empty() {
        return Err(CorpusError::NothingToSplit);
    }
    let n = records.len();
    let n_dev = (dev_fraction * n as f64).round() as usize;
    let mut rng = rng::substream(seed, "split");
    let mut in_dev = vec![false; n];
    for i in index::sample(&mut rng, n, n_dev) {
        in_dev[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_dev);
    let mut dev = Vec::with_capacity(n_dev);
    for (r, &d) in records.iter().zip(&in_dev) {
        if d {
            dev.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, dev))
}

/// Per-IT gold counts, aligned to taxonomy order.
pub fn it_counts<'a>(records: impl IntoIterator<Item = &'a TweetRecord>, taxonomy: &Taxonomy) -> Vec<usize> {
    let mut counts = vec![0; taxonomy.len()];
    for r in records {
        for name in r.gold_its.iter().flatten() {
            if let Some(i) = taxonomy.index_of(name) {
                counts[i] += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Taxonomy {
        Taxonomy::new(&["A", "B", "C", "Irrelevant"], &["A"], "Irrelevant").unwrap()
    }

    #[test]
    fn packaged_taxonomy_has_track_shape() {
        let t = Taxonomy::trec_is();
        assert!(t.is_full_size());
        assert_eq!(t.irrelevant_name(), "Other-Irrelevant");
        assert!(!t.is_actionable(t.irrelevant()));
        assert!(t.is_actionable(t.index_of("Request-SearchAndRescue").unwrap()));
    }

    #[test]
    fn taxonomy_validation() {
        assert!(Taxonomy::new(&["A", "A"], &[], "A").is_err());
        assert!(Taxonomy::new(&["A", "B"], &["B"], "B").is_err());
        assert!(Taxonomy::new(&["A", "B"], &["C"], "B").is_err());
        assert!(Taxonomy::new(&["A", "B"], &["A"], "Z").is_err());
        let t = small();
        assert_eq!(Taxonomy::from_json_str(&t.to_json()).unwrap(), t);
        assert_eq!(t.hash().len(), 16);
    }

    #[test]
    fn loads_a_valid_line() {
        let t = Taxonomy::trec_is();
        let line = r#"{"tweet_id":"t1","event_id":"e1","text":"flooding on main st","gold_its":["Request-SearchAndRescue"],"gold_priority":0.75}"#;
        let recs = parse_corpus(line, &t).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].gold_its.as_deref(), Some(&["Request-SearchAndRescue".to_string()][..]));
        assert_eq!(recs[0].gold_priority, Some(0.75));
    }

    #[test]
    fn priority_out_of_range() {
        let line = r#"{"tweet_id":"t1","event_id":"e1","text":"x","gold_its":["A"],"gold_priority":1.5}"#;
        let err = parse_corpus(line, &small()).unwrap_err();
        assert!(err.to_string().contains("priority out of range"), "{err}");
    }

    #[test]
    fn malformed_line_fails_whole_file() {
        let content = concat!(
            r#"{"tweet_id":"t1","event_id":"e1","text":"a"}"#, "\n",
            r#"{"tweet_id":"t2","event_id":"e1","text":"#, "\n",
            r#"{"tweet_id":"t3","event_id":"e1","text":"c"}"#, "\n",
        );
        match parse_corpus(content, &small()) {
            Err(CorpusError::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_errors_name_the_field_or_type() {
        let t = small();
        let missing = r#"{"tweet_id":"t1","text":"a"}"#;
        assert!(matches!(
            parse_corpus(missing, &t),
            Err(CorpusError::MissingField { line: 1, field: "event_id" })
        ));
        let unknown = r#"{"tweet_id":"t1","event_id":"e","text":"a","gold_its":["Nope"]}"#;
        let err = parse_corpus(unknown, &t).unwrap_err();
        assert!(err.to_string().contains("`Nope`"));
        let extra = r#"{"tweet_id":"t1","event_id":"e","text":"a","lang":"en"}"#;
        assert!(matches!(parse_corpus(extra, &t), Err(CorpusError::UnexpectedField { .. })));
        let empty = r#"{"tweet_id":"t1","event_id":"e","text":"a","gold_its":[]}"#;
        assert!(matches!(parse_corpus(empty, &t), Err(CorpusError::EmptyGoldOnLine { line: 1 })));
    }

    #[test]
    fn irrelevant_combined_with_others_is_dropped() {
        let line = r#"{"tweet_id":"t1","event_id":"e","text":"a","gold_its":["Irrelevant","B"]}"#;
        let recs = parse_corpus(line, &small()).unwrap();
        assert_eq!(recs[0].gold_its.as_deref(), Some(&["B".to_string()][..]));
        let alone = r#"{"tweet_id":"t1","event_id":"e","text":"a","gold_its":["Irrelevant"]}"#;
        let recs = parse_corpus(alone, &small()).unwrap();
        assert_eq!(recs[0].gold_its.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn split_sizes() {
        let recs: Vec<u32> = (0..100).collect();
        let (train, dev) = split_train_dev(&recs, 0.1, 7).unwrap();
        assert_eq!((train.len(), dev.len()), (90, 10));
        assert!(dev.iter().all(|d| !train.contains(d)));
        let mut all: Vec<u32> = train.iter().chain(&dev).copied().collect();
        all.sort_unstable();
        assert_eq!(all, recs);

        let ten: Vec<u32> = (0..10).collect();
        let (train, dev) = split_train_dev(&ten, 0.1, 1).unwrap();
        assert_eq!((train.len(), dev.len()), (9, 1));

        assert_eq!(split_train_dev(&recs, 0.1, 7).unwrap(), split_train_dev(&recs, 0.1, 7).unwrap());
        assert!(split_train_dev(&recs, 0.0, 7).is_err());
        assert!(split_train_dev(&recs, 1.0, 7).is_err());
        assert!(split_train_dev::<u32>(&[], 0.5, 7).is_err());
    }

    #[test]
    fn split_varies_with_seed() {
        let recs: Vec<u32> = (0..20).collect();
        let (_, base) = split_train_dev(&recs, 0.1, 0).unwrap();
        let differing = (1..=100u64)
            .filter(|&s| split_train_dev(&recs, 0.1, s).unwrap().1 != base)
            .count();
        assert!(differing > 95, "{differing}");
    }

    #[test]
    fn binarize_examples() {
        let t = Taxonomy::trec_is();
        let v = binarize(&[t.name(0)], &t).unwrap();
        assert_eq!(v.indices().collect::<Vec<_>>(), vec![0]);
        let all = binarize(t.names(), &t).unwrap();
        assert_eq!(all.count_ones(), 25);
        let irr = binarize(&[t.irrelevant_name()], &t).unwrap();
        assert_eq!(irr.indices().collect::<Vec<_>>(), vec![t.irrelevant()]);
        assert!(binarize::<&str>(&[], &t).is_err());
        assert!(binarize(&["Nope"], &t).is_err());
    }

    proptest! {
        #[test]
        fn binarize_round_trips(mask in 1u32..(1 << 25)) {
            let t = Taxonomy::trec_is();
            let set: Vec<String> = (0..25).filter(|i| mask & (1 << i) != 0).map(|i| t.name(i).to_string()).collect();
            let v = binarize(&set, &t).unwrap();
            prop_assert_eq!(unbinarize(&v, &t), set);
        }
    }
}

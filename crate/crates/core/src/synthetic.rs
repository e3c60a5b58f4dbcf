//! Desk-scale synthetic corpus whose text deterministically encodes its
//! labels: each IT contributes one of its keywords, a level word fixes the
//! priority, and the rest is filler drawn from a small shared pool.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augmentation::PhraseBankGenerator;
use crate::corpus::{Taxonomy, TweetRecord};
use crate::rng;

/// `(IT, keywords)`; the last entry is the irrelevant type.
pub const DESK_TYPES: [(&str, [&str; 3]); 6] = [
    ("Request-SearchAndRescue", ["sos", "rooftop", "lifeboat"]),
    ("Request-GoodsServices", ["diapers", "insulin", "canned"]),
    ("Report-Weather", ["hail", "forecast", "humidity"]),
    ("Report-Location", ["downtown", "riverside", "intersection"]),
    ("Report-News", ["headline", "press", "broadcast"]),
    ("Other-Irrelevant", ["movie", "concert", "lol"]),
];

pub const DESK_ACTIONABLE: [&str; 2] = ["Request-SearchAndRescue", "Request-GoodsServices"];

/// Level word and the priority it encodes.
pub const LEVELS: [(&str, f64); 5] = [
    ("minor", 0.1),
    ("moderate", 0.3),
    ("serious", 0.5),
    ("severe", 0.7),
    ("critical", 0.9),
];

pub const FILLER: [&str; 20] = [
    "people", "near", "now", "please", "city", "area", "road", "house", "family", "officials", "power", "bridge",
    "quickly", "volunteers", "the", "we", "here", "today", "still", "all",
];

pub fn desk_taxonomy() -> Taxonomy {
    let types: Vec<&str> = DESK_TYPES.iter().map(|t| t.0).collect();
    Taxonomy::new(&types, &DESK_ACTIONABLE, DESK_TYPES[5].0).expect("desk taxonomy is valid")
}

/// Generated train/test split of the desk corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskCorpus {
    pub taxonomy: Taxonomy,
    pub train: Vec<TweetRecord>,
    pub test: Vec<TweetRecord>,
}

pub const DESK_TRAIN_SIZE: usize = 200;
pub const DESK_TEST_SIZE: usize = 120;
const TRAIN_EVENTS: [&str; 2] = ["flood-a", "quake-b"];
const TEST_EVENTS: [&str; 3] = ["flood-c", "storm-d", "fire-e"];

impl DeskCorpus {
    pub fn generate(seed: u64) -> Self {
        let mut rng = rng::substream(seed, "synthetic");
        let train = (0..DESK_TRAIN_SIZE)
            .map(|i| desk_tweet(&mut rng, format!("tr{i:04}"), TRAIN_EVENTS[i % TRAIN_EVENTS.len()]))
            .collect();
        let test = (0..DESK_TEST_SIZE)
            .map(|i| desk_tweet(&mut rng, format!("te{i:04}"), TEST_EVENTS[i % TEST_EVENTS.len()]))
            .collect();
        Self { taxonomy: desk_taxonomy(), train, test }
    }
}

/// One tweet: 1 irrelevant label in six, otherwise one or two of the other
/// five ITs.
pub fn desk_tweet(rng: &mut impl Rng, tweet_id: String, event_id: &str) -> TweetRecord {
    let mut its: Vec<usize> = if rng.gen_range(0..6) == 0 {
        vec![5]
    } else {
        let first = rng.gen_range(0..5);
        let mut v = vec![first];
        if rng.gen_bool(0.4) {
            let second = (first + rng.gen_range(1..5)) % 5;
            v.push(second);
        }
        v
    };
    its.sort_unstable();
    let level = if its == [5] { rng.gen_range(0..2) } else { rng.gen_range(0..LEVELS.len()) };
    desk_record(rng, tweet_id, event_id, &its, level)
}

/// A tweet with the given desk IT indices and level. Text is shuffled.
pub fn desk_record(rng: &mut impl Rng, tweet_id: String, event_id: &str, its: &[usize], level: usize) -> TweetRecord {
    let mut words: Vec<&str> = its.iter().map(|&k| *DESK_TYPES[k].1.choose(rng).expect("keywords")).collect();
    words.push(LEVELS[level].0);
    for _ in 0..rng.gen_range(2..=4) {
        words.push(FILLER.choose(rng).expect("filler"));
    }
    words.shuffle(rng);
    TweetRecord {
        tweet_id,
        event_id: event_id.to_string(),
        text: words.join(" "),
        gold_its: Some(its.iter().map(|&k| DESK_TYPES[k].0.to_string()).collect()),
        gold_priority: Some(LEVELS[level].1),
    }
}

/// Generator stub that writes desk-style tweets for any desk IT.
pub fn desk_generator(seed: u64) -> PhraseBankGenerator {
    let phrases: BTreeMap<String, Vec<String>> = DESK_TYPES
        .iter()
        .map(|(name, keywords)| {
            let bank = keywords
                .iter()
                .flat_map(|k| LEVELS.iter().map(move |(l, _)| format!("{k} {l}")))
                .collect();
            (name.to_string(), bank)
        })
        .collect();
    PhraseBankGenerator { phrases, filler: FILLER.iter().map(|s| s.to_string()).collect(), seed }
}

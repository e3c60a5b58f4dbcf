use std::collections::HashSet;

use crisis_triage::augmentation::{
    apply_eda_op, balance, build_dga_prompt, eda_augment, generate_dga, nla_filter, provenance_jsonl, prompt_hash,
    truncate_continuation, AugmentError, AugmentedExample, BalanceMethod, CannedGenerator, DgaExemplar, EdaOp,
    EdaParams, GenerationControls, NlaSchedule, Origin, Source, SynonymLexicon, DGA_ATTEMPTS,
};
use crisis_triage::baseline::build_priority_table;
use crisis_triage::corpus::{it_counts, Taxonomy, TweetRecord};
use crisis_triage::synthetic::{desk_generator, desk_taxonomy, DeskCorpus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tweet(id: &str, its: &[&str], text: &str, priority: f64) -> TweetRecord {
    TweetRecord {
        tweet_id: id.into(),
        event_id: "e".into(),
        text: text.into(),
        gold_its: Some(its.iter().map(|s| s.to_string()).collect()),
        gold_priority: Some(priority),
    }
}

fn fixture_lexicon() -> SynonymLexicon {
    SynonymLexicon::from_tsv_str("water\tagua,h2o\nhelp\tassist,aid\nflood\tdeluge\n").unwrap()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn eda_golden_output() {
    let r = tweet(
        "t1",
        &["Request-GoodsServices"],
        "we need water and help after the flood near the old bridge",
        0.5,
    );
    let out = eda_augment(&r, 42, &EdaParams { alpha: 0.1, n_ops: 1 }, &fixture_lexicon());
    assert_eq!(out.record.text, "we need water and help after the flood agua near the old bridge");
    assert_eq!(out.record.gold_its, r.gold_its);
    assert_eq!(out.record.gold_priority, r.gold_priority);
    assert_eq!(out.origin, Origin::Eda);
    assert_eq!(out.source, Source::Tweet("t1".into()));
    assert!(out.alive);
}

#[test]
fn swap_permutes_tokens() {
    let lex = SynonymLexicon::from_tsv_str("fire\tblaze\n").unwrap();
    let tokens = words("fire spreading fast");
    for seed in 0..20 {
        let mut out = apply_eda_op(&tokens, EdaOp::RandomSwap, 0.1, &mut ChaCha8Rng::seed_from_u64(seed), &lex);
        out.sort();
        let mut sorted = tokens.clone();
        sorted.sort();
        assert_eq!(out, sorted);
    }
}

#[test]
fn one_token_without_synonyms_is_unchanged() {
    let lex = SynonymLexicon::from_tsv_str("").unwrap();
    let tokens = words("help");
    for op in [EdaOp::SynonymReplacement, EdaOp::RandomInsertion, EdaOp::RandomSwap, EdaOp::RandomDeletion] {
        assert_eq!(apply_eda_op(&tokens, op, 0.1, &mut ChaCha8Rng::seed_from_u64(1), &lex), tokens);
    }
    // with a synonym, deletion replaces instead of emptying
    let out = apply_eda_op(&tokens, EdaOp::RandomDeletion, 0.1, &mut ChaCha8Rng::seed_from_u64(1), &fixture_lexicon());
    assert_eq!(out.len(), 1);
    assert!(["assist", "aid"].contains(&out[0].as_str()));
}

#[test]
fn lexicon_parsing() {
    let lex = SynonymLexicon::from_tsv_str("# comment\nFire\tBlaze, flames\n\n").unwrap();
    assert_eq!(lex.synonyms("fire!"), ["blaze", "flames"]);
    assert!(lex.synonyms("water").is_empty());
    assert!(matches!(SynonymLexicon::from_tsv_str("no tab here"), Err(AugmentError::Lexicon(1))));
    assert!(!SynonymLexicon::packaged().is_empty());
}

#[test]
fn dga_prompt_template() {
    let exemplars = [
        DgaExemplar { it: "Report-Weather".into(), text: "storm incoming".into() },
        DgaExemplar { it: "Other-Irrelevant".into(), text: "good morning all".into() },
    ];
    let prompt = build_dga_prompt("Request-GoodsServices", &exemplars).unwrap();
    let expected = "Tweet for help in disaster\n\
                    \n\
                    Title: Report-Weather\n\
                    \n\
                    Content: storm incoming\n\
                    \n\
                    Title: Other-Irrelevant\n\
                    \n\
                    Content: good morning all\n\
                    \n\
                    Title: Request-GoodsServices\n\
                    \n\
                    Content:";
    assert_eq!(prompt, expected);
    assert_eq!(prompt.lines().count(), 13);
}

#[test]
fn dga_prompt_validation() {
    let same = [
        DgaExemplar { it: "Report-Weather".into(), text: "storm".into() },
        DgaExemplar { it: "Report-Weather".into(), text: "rain".into() },
    ];
    assert!(build_dga_prompt("Report-News", &same).is_ok());
    assert!(matches!(build_dga_prompt("Report-Weather", &same), Err(AugmentError::ExemplarHasTarget(_))));
    let empty = [
        DgaExemplar { it: "Report-Weather".into(), text: "  ".into() },
        DgaExemplar { it: "Report-News".into(), text: "x".into() },
    ];
    let err = build_dga_prompt("Report-Location", &empty).unwrap_err();
    assert_eq!(err.to_string(), "empty exemplar");
}

#[test]
fn continuation_truncation() {
    assert_eq!(truncate_continuation(" need water\n\nTitle: x", "Title:"), "need water");
    assert_eq!(truncate_continuation(" a b\nc Title: more", "Title:"), "a b c");
    assert_eq!(truncate_continuation("\n\n  ", "Title:"), "");
}

fn desk_train() -> (Taxonomy, Vec<TweetRecord>) {
    let c = DeskCorpus::generate(1);
    (c.taxonomy, c.train)
}

#[test]
fn dga_passes_stub_text_through() {
    let (tax, train) = desk_train();
    let table = build_priority_table(&train, &tax);
    let client = CannedGenerator::new(["need water and blankets near the shelter"]);
    let out =
        generate_dga("Request-GoodsServices", &train, &client, &GenerationControls::default(), &table, 1, 5).unwrap();
    assert_eq!(out.len(), 1);
    let ex = &out[0];
    assert_eq!(ex.record.text, "need water and blankets near the shelter");
    assert_eq!(ex.record.gold_its, Some(vec!["Request-GoodsServices".to_string()]));
    assert_eq!(ex.record.gold_priority, table.by_name("Request-GoodsServices"));
    assert_eq!(ex.origin, Origin::Dga);
}

#[test]
fn dga_skips_after_empty_retries() {
    let (tax, train) = desk_train();
    let table = build_priority_table(&train, &tax);
    let client = CannedGenerator::new([""]);
    let out = generate_dga("Report-News", &train, &client, &GenerationControls::default(), &table, 1, 5).unwrap();
    assert!(out.is_empty());
    assert_eq!(client.calls(), DGA_ATTEMPTS);
}

#[test]
fn dga_client_failure_is_an_error() {
    let (tax, train) = desk_train();
    let table = build_priority_table(&train, &tax);
    let client = CannedGenerator::failing("offline");
    let err = generate_dga("Report-News", &train, &client, &GenerationControls::default(), &table, 1, 5).unwrap_err();
    assert!(matches!(err, AugmentError::Generator { ref it, attempts: DGA_ATTEMPTS, .. } if it == "Report-News"));
}

#[test]
fn dga_prompts_are_distinct_and_logged() {
    let (tax, train) = desk_train();
    let table = build_priority_table(&train, &tax);
    let client = desk_generator(0);
    let out = generate_dga("Report-Weather", &train, &client, &GenerationControls::default(), &table, 3, 9).unwrap();
    assert_eq!(out.len(), 3);
    let hashes: HashSet<String> = out
        .iter()
        .map(|e| match &e.source {
            Source::PromptHash(h) => h.clone(),
            Source::Tweet(_) => panic!("DGA example with tweet source"),
        })
        .collect();
    assert_eq!(hashes.len(), 3);
    let log = provenance_jsonl(&out);
    for h in &hashes {
        assert!(log.contains(h.as_str()));
    }
    assert_eq!(prompt_hash("x").len(), 16);
}

fn single_label_corpus(counts: &[(&str, usize)]) -> Vec<TweetRecord> {
    counts
        .iter()
        .flat_map(|&(it, n)| (0..n).map(move |i| tweet(&format!("{it}-{i}"), &[it], "water rising near the old bridge", 0.5)))
        .collect()
}

#[test]
fn eda_balance_adds_exactly_the_deficit() {
    let tax = Taxonomy::new(&["x", "y", "irr"], &["x"], "irr").unwrap();
    let train = single_label_corpus(&[("x", 120), ("y", 700), ("irr", 500)]);
    let lex = SynonymLexicon::packaged();
    let method = BalanceMethod::Eda { lexicon: &lex, params: EdaParams::default() };
    let added = balance(&train, 500, &method, &tax, 0).unwrap();
    assert_eq!(added.len(), 380);
    assert!(added.iter().all(|a| a.target_it == "x" && a.record.gold_its == Some(vec!["x".into()])));
}

#[test]
fn balance_tops_up_small_types_only() {
    let tax = Taxonomy::new(&["a", "b", "c"], &["a"], "c").unwrap();
    let train = single_label_corpus(&[("a", 2), ("b", 5), ("c", 9)]);
    let lex = SynonymLexicon::packaged();
    let before = train.clone();
    let added = balance(&train, 5, &BalanceMethod::Eda { lexicon: &lex, params: EdaParams::default() }, &tax, 3).unwrap();
    let counts = it_counts(train.iter().chain(added.iter().map(|a| &a.record)), &tax);
    assert_eq!(counts, [5, 5, 9]);
    assert_eq!(train, before);
}

#[test]
fn eda_skips_types_without_examples() {
    let tax = Taxonomy::new(&["a", "b", "c"], &["a"], "c").unwrap();
    let train = single_label_corpus(&[("a", 1), ("c", 3)]);
    let lex = SynonymLexicon::packaged();
    let added = balance(&train, 3, &BalanceMethod::Eda { lexicon: &lex, params: EdaParams::default() }, &tax, 3).unwrap();
    assert!(added.iter().all(|a| a.target_it == "a"));
    assert_eq!(added.len(), 2);
}

#[test]
fn dga_balance_reaches_target_with_single_labels() {
    let tax = desk_taxonomy();
    let (_, train) = desk_train();
    let table = build_priority_table(&train, &tax);
    let client = desk_generator(4);
    let method = BalanceMethod::Dga { client: &client, controls: GenerationControls::default(), priorities: &table };
    let added = balance(&train, 60, &method, &tax, 4).unwrap();
    let counts = it_counts(train.iter().chain(added.iter().map(|a| &a.record)), &tax);
    assert!(counts.iter().all(|&c| c >= 60), "{counts:?}");
    assert!(added.iter().all(|a| a.record.gold_its.as_ref().unwrap().len() == 1));
}

fn dga_example(it: &str) -> AugmentedExample {
    AugmentedExample {
        record: tweet("g", &[it], "text", 0.5),
        origin: Origin::Dga,
        target_it: it.into(),
        source: Source::PromptHash("h".into()),
        alive: true,
        removed_at_epoch: None,
    }
}

#[test]
fn nla_threshold_examples() {
    let tax = Taxonomy::new(&["x", "irr"], &["x"], "irr").unwrap();
    let s = NlaSchedule::new(10);
    assert_eq!(s.threshold(1), 0.9);
    assert!((s.threshold(10) - 0.7).abs() < 1e-15);

    let run = |p: f64, epoch: usize| nla_filter(vec![dga_example("x")], &[vec![p, 0.0]], epoch, &s, &tax).unwrap();
    for epoch in 1..=10 {
        assert!(run(0.95, epoch)[0].alive);
    }
    let removed = run(0.02, 1);
    assert!(!removed[0].alive);
    assert_eq!(removed[0].removed_at_epoch, Some(1));
    assert!(run(0.25, 1)[0].alive);
    assert!(!run(0.25, 10)[0].alive);
}

#[test]
fn nla_removals_are_permanent_and_checked() {
    let tax = Taxonomy::new(&["x", "irr"], &["x"], "irr").unwrap();
    let s = NlaSchedule::new(3);
    let dead = nla_filter(vec![dga_example("x")], &[vec![0.0, 0.0]], 1, &s, &tax).unwrap();
    let still = nla_filter(dead, &[vec![1.0, 0.0]], 2, &s, &tax).unwrap();
    assert!(!still[0].alive);
    assert_eq!(still[0].removed_at_epoch, Some(1));
    assert!(matches!(nla_filter(vec![dga_example("x")], &[], 1, &s, &tax), Err(AugmentError::Misaligned(_))));
    assert!(matches!(
        nla_filter(vec![dga_example("x")], &[vec![0.5, 0.5]], 4, &s, &tax),
        Err(AugmentError::EpochOutOfRange { .. })
    ));
}

proptest! {
    #[test]
    fn eda_keeps_labels_and_never_empties(seed in any::<u64>(), text in "[a-z]{1,8}( [a-z]{1,8}){0,12}", alpha in 0.05f64..0.5) {
        let r = tweet("t", &["x", "y"], &text, 0.3);
        let out = eda_augment(&r, seed, &EdaParams { alpha, n_ops: 2 }, &SynonymLexicon::packaged());
        prop_assert_eq!(&out.record.gold_its, &r.gold_its);
        prop_assert_eq!(out.record.gold_priority, r.gold_priority);
        prop_assert!(!out.record.text.trim().is_empty());
    }

    #[test]
    fn deletion_keeps_at_least_one_token(seed in any::<u64>(), n in 1usize..15, alpha in 0.0f64..1.0) {
        let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let out = apply_eda_op(&tokens, EdaOp::RandomDeletion, alpha, &mut ChaCha8Rng::seed_from_u64(seed), &SynonymLexicon::packaged());
        prop_assert!(!out.is_empty());
        prop_assert!(out.len() <= n);
    }

    #[test]
    fn nla_is_monotone(probs in prop::collection::vec(0.0f64..1.0, 10)) {
        let tax = Taxonomy::new(&["x", "irr"], &["x"], "irr").unwrap();
        let s = NlaSchedule::new(10);
        let mut ex = vec![dga_example("x")];
        let mut was_dead = false;
        for (e, p) in probs.iter().enumerate() {
            ex = nla_filter(ex, &[vec![*p, 0.0]], e + 1, &s, &tax).unwrap();
            prop_assert!(!(was_dead && ex[0].alive));
            was_dead = !ex[0].alive;
        }
    }
}

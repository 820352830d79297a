use std::collections::{BTreeSet, HashMap};

use codemix::corpus::{generate_synthetic, parse_conll_str, read_conll_file, write_conll_file, write_conll_string};
use codemix::preprocess::preprocess_text;
use codemix::{Error, LangTag, Sentiment, SyntheticSpec};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{FIXTURES}/{name}")).unwrap()
}

#[test]
fn hundred_record_file_round_trip() {
    let records = generate_synthetic(&SyntheticSpec::with_default_lexicons(5, 100)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.conll");
    write_conll_file(&records, &path).unwrap();
    let back = read_conll_file(&path).unwrap();
    assert_eq!(back, records);
    let bytes = std::fs::read_to_string(&path).unwrap();
    assert_eq!(write_conll_string(&back).unwrap(), bytes);
}

#[test]
fn malformed_fixtures_report_lines() {
    for (name, line, needle) in [
        ("malformed_tag.conll", 7, "fr"),
        ("malformed_meta.conll", 5, "meta"),
        ("malformed_arity.conll", 6, "3 fields"),
    ] {
        match parse_conll_str(&fixture(name)) {
            Err(Error::Parse { line: got, message }) => {
                assert_eq!(got, line, "{name}");
                assert!(message.contains(needle), "{name}: {message}");
            }
            other => panic!("{name}: expected a parse error, got {other:?}"),
        }
    }
}

#[test]
fn preprocess_golden_file() {
    let raw = fixture("tweets_raw.txt");
    let golden = fixture("tweets_golden.txt");
    assert_eq!(raw.lines().count(), 20);
    let out: String = raw.lines().map(|l| preprocess_text(l) + "\n").collect();
    assert_eq!(out, golden);
    let again: String = golden.lines().map(|l| preprocess_text(l) + "\n").collect();
    assert_eq!(again, golden);
}

/// Predicts the sentiment whose lexicon words occur most often.
#[test]
fn synthetic_corpus_is_lexicon_separable() {
    let spec = SyntheticSpec::with_default_lexicons(9, 500);
    let mut owner: HashMap<&str, Sentiment> = HashMap::new();
    for (&(_, s), words) in &spec.lexicons {
        for w in words {
            owner.insert(w, s);
        }
    }
    let records = generate_synthetic(&spec).unwrap();
    for r in &records {
        let mut votes = [0usize; 3];
        for t in &r.tokens {
            votes[owner[t.as_str()].id()] += 1;
        }
        let best = (0..3).max_by_key(|&i| votes[i]).unwrap();
        assert_eq!(Sentiment::from_id(best), r.sentiment, "record {}", r.id);
    }
    let sentiments: BTreeSet<_> = records.iter().filter_map(|r| r.sentiment).collect();
    assert_eq!(sentiments.len(), 3);
    let langs: BTreeSet<LangTag> = records.iter().flat_map(|r| r.tags.iter().copied()).collect();
    assert_eq!(langs.len(), 5);
}

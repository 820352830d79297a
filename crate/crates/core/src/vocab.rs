//! Word-level vocabulary with TF-IDF pruning, and sequence encoding with
//! `[CLS] ... [SEP]` framing.
//!
//! Pruning ranks every corpus token by its best TF-IDF score over all
//! documents, where `tf = count / |doc|` and `idf = ln(N / df)`. A token that
//! occurs in every document scores zero, so any positive floor maps it to
//! `[UNK]`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corpus::{LangTag, TweetRecord};
use crate::error::{Error, Result};
use crate::tensor::IGNORE_INDEX;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Corpus-level counts needed for TF-IDF.
#[derive(Clone, Debug, Default)]
pub struct TfidfStats {
    num_docs: usize,
    doc_freq: BTreeMap<String, usize>,
    total_freq: BTreeMap<String, usize>,
    max_score: BTreeMap<String, f64>,
}

impl TfidfStats {
    pub fn from_docs<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let docs: Vec<&[String]> = docs.into_iter().collect();
        let mut stats = Self {
            num_docs: docs.len(),
            ..Self::default()
        };
        for doc in &docs {
            for (tok, count) in term_counts(doc) {
                *stats.doc_freq.entry(tok.to_string()).or_default() += 1;
                *stats.total_freq.entry(tok.to_string()).or_default() += count;
            }
        }
        for doc in &docs {
            let len = doc.len() as f64;
            for (tok, count) in term_counts(doc) {
                let score = count as f64 / len * stats.idf_unchecked(tok);
                let best = stats.max_score.entry(tok.to_string()).or_insert(0.0);
                *best = best.max(score);
            }
        }
        stats
    }

    pub fn from_records(records: &[TweetRecord]) -> Self {
        Self::from_docs(records.iter().map(|r| r.tokens.as_slice()))
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.doc_freq.get(token).copied()
    }

    pub fn total_freq(&self, token: &str) -> usize {
        self.total_freq.get(token).copied().unwrap_or(0)
    }

    /// Highest score of `token` over all documents.
    pub fn max_score(&self, token: &str) -> Option<f64> {
        self.max_score.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Result<f64> {
        if !self.doc_freq.contains_key(token) {
            return Err(Error::Contract(format!("token {token:?} does not occur in the corpus")));
        }
        Ok(self.idf_unchecked(token))
    }

    fn idf_unchecked(&self, token: &str) -> f64 {
        (self.num_docs as f64 / self.doc_freq[token] as f64).ln()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.doc_freq.keys().map(String::as_str)
    }
}

fn term_counts(doc: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for tok in doc {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    counts
}

/// `tf(token, doc) * idf(token)`.
pub fn tfidf_score(token: &str, doc: &[String], stats: &TfidfStats) -> Result<f64> {
    if doc.is_empty() {
        return Err(Error::Contract("tf-idf of an empty document".into()));
    }
    let idf = stats.idf(token)?;
    let count = doc.iter().filter(|t| *t == token).count();
    Ok(count as f64 / doc.len() as f64 * idf)
}

/// Token/id bijection. Ids `0..5` are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by `words` in order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Contract(format!("bad vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for tok in &self.tokens {
            writeln!(out, "{tok}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r').to_string();
            if idx < NUM_SPECIALS && line != SPECIAL_TOKENS[idx] {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {}, found {line:?}", SPECIAL_TOKENS[idx]),
                });
            }
            lines.push(line);
        }
        if lines.len() < NUM_SPECIALS {
            return Err(Error::Parse {
                line: lines.len() + 1,
                message: "vocabulary is missing special tokens".into(),
            });
        }
        Self::from_words(lines.into_iter().skip(NUM_SPECIALS))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Keeps the `max_size - 5` tokens with the highest max TF-IDF score
/// (ties: higher raw frequency, then lexicographic), dropping any token
/// scoring below `tfidf_floor`.
pub fn build_vocabulary(corpus: &[TweetRecord], max_size: usize, tfidf_floor: f64) -> Result<Vocabulary> {
    if max_size <= NUM_SPECIALS {
        return Err(Error::Config(format!(
            "max vocabulary size {max_size} leaves no room after {NUM_SPECIALS} specials"
        )));
    }
    let stats = TfidfStats::from_records(corpus);
    let mut ranked: Vec<(&str, f64, usize)> = stats
        .tokens()
        .filter(|t| !SPECIAL_TOKENS.contains(t))
        .map(|t| (t, stats.max_score(t).unwrap_or(0.0), stats.total_freq(t)))
        .filter(|&(_, score, _)| score >= tfidf_floor)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(b.0))
    });
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocabulary::from_words(ranked.into_iter().map(|(t, _, _)| t))
}

/// Model input for one sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl Encoded {
    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

fn content_capacity(max_len: usize) -> usize {
    assert!(max_len >= 3, "max_len must be at least 3, got {max_len}");
    max_len - 2
}

/// `[CLS] tokens... [SEP]`, truncated to `max_len` and right-padded.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Encoded {
    let keep = tokens.len().min(content_capacity(max_len));
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(tokens[..keep].iter().map(|t| vocab.id(t.as_ref())));
    ids.push(SEP);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let attention_mask = (0..max_len).map(|i| u8::from(i < real)).collect();
    Encoded { ids, attention_mask }
}

/// Language-tag targets aligned with [`encode`]: `IGNORE_INDEX` on
/// `[CLS]`, `[SEP]` and padding.
pub fn align_tags(tags: &[LangTag], num_tokens: usize, max_len: usize) -> Result<Vec<usize>> {
    if tags.len() != num_tokens {
        return Err(Error::Contract(format!(
            "{} tags for {num_tokens} tokens",
            tags.len()
        )));
    }
    let keep = tags.len().min(content_capacity(max_len));
    let mut out = vec![IGNORE_INDEX; max_len];
    for (slot, tag) in out[1..=keep].iter_mut().zip(tags) {
        *slot = tag.id();
    }
    Ok(out)
}

/// Content tokens of an encoded sequence (specials and padding removed).
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .filter(|&&id| !matches!(id, PAD | CLS | SEP))
        .map(|&id| vocab.token(id).unwrap_or(SPECIAL_TOKENS[UNK]).to_string())
        .collect()
}

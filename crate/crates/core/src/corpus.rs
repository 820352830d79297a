//! Code-mixed tweet records, the two-column dataset format, and a seeded
//! synthetic corpus generator.
//!
//! Dataset layout (UTF-8), one block per tweet, blocks separated by a blank
//! line:
//!
//! ```text
//! meta	17	positive
//! i	en
//! love	en
//! yaar	hi
//! ```
//!
//! The sentiment column is optional (unlabeled test data).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token language label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LangTag {
    En,
    Spa,
    Hi,
    Mixed,
    Univ,
}

impl LangTag {
    pub const ALL: [LangTag; 5] = [Self::En, Self::Spa, Self::Hi, Self::Mixed, Self::Univ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::En => "en",
            Self::Spa => "spa",
            Self::Hi => "hi",
            Self::Mixed => "mixed",
            Self::Univ => "univ",
        }
    }
}

impl fmt::Display for LangTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LangTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown language tag {s:?}"))
    }
}

/// Sentence-level polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Self::Positive, Self::Negative, Self::Neutral];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    /// `pertinent` is accepted as a spelling of `neutral`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Self::Positive),
            "negative" => Ok(Self::Negative),
            "neutral" | "pertinent" => Ok(Self::Neutral),
            other => Err(format!("unknown sentiment {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<LangTag>,
    pub sentiment: Option<Sentiment>,
}

impl TweetRecord {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        tags: Vec<LangTag>,
        sentiment: Option<Sentiment>,
    ) -> Result<Self> {
        let record = Self {
            id: id.into(),
            tokens,
            tags,
            sentiment,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!("record id {:?} is empty or has whitespace", self.id)));
        }
        if self.tokens.is_empty() {
            return Err(Error::Contract(format!("record {} has no tokens", self.id)));
        }
        if self.tokens.len() != self.tags.len() {
            return Err(Error::Contract(format!(
                "record {}: {} tokens but {} tags",
                self.id,
                self.tokens.len(),
                self.tags.len()
            )));
        }
        if let Some(bad) = self
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Contract(format!("record {}: bad token {bad:?}", self.id)));
        }
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct OpenBlock {
    meta_line: usize,
    id: String,
    sentiment: Option<Sentiment>,
    tokens: Vec<String>,
    tags: Vec<LangTag>,
}

impl OpenBlock {
    fn finish(self) -> Result<TweetRecord> {
        if self.tokens.is_empty() {
            return Err(parse_err(self.meta_line, format!("block {} has no tokens", self.id)));
        }
        Ok(TweetRecord {
            id: self.id,
            tokens: self.tokens,
            tags: self.tags,
            sentiment: self.sentiment,
        })
    }
}

/// Reads every block of a dataset stream.
pub fn parse_conll<R: BufRead>(reader: R) -> Result<Vec<TweetRecord>> {
    let mut records = Vec::new();
    let mut block: Option<OpenBlock> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                records.push(b.finish()?);
            }
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        match block.as_mut() {
            None => {
                if fields[0] != "meta" {
                    return Err(parse_err(line_no, "expected a meta line to open the block"));
                }
                let (id, sentiment) = match fields[..] {
                    [_, id] => (id, None),
                    [_, id, s] => (
                        id,
                        Some(s.parse::<Sentiment>().map_err(|e| parse_err(line_no, e))?),
                    ),
                    _ => return Err(parse_err(line_no, "meta line needs an id and optional sentiment")),
                };
                if id.is_empty() {
                    return Err(parse_err(line_no, "empty record id"));
                }
                block = Some(OpenBlock {
                    meta_line: line_no,
                    id: id.to_string(),
                    sentiment,
                    tokens: Vec::new(),
                    tags: Vec::new(),
                });
            }
            Some(b) => {
                let [token, tag] = fields[..] else {
                    return Err(parse_err(
                        line_no,
                        format!("expected <token>\\t<langtag>, got {} fields", fields.len()),
                    ));
                };
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(parse_err(line_no, format!("bad token {token:?}")));
                }
                let tag = tag.parse::<LangTag>().map_err(|e| parse_err(line_no, e))?;
                b.tokens.push(token.to_string());
                b.tags.push(tag);
            }
        }
    }
    if let Some(b) = block.take() {
        records.push(b.finish()?);
    }
    Ok(records)
}

pub fn parse_conll_str(text: &str) -> Result<Vec<TweetRecord>> {
    parse_conll(text.as_bytes())
}

pub fn read_conll_file(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let file = std::fs::File::open(path)?;
    parse_conll(std::io::BufReader::new(file))
}

/// Writes records in normalized form: tab separators, one blank line between
/// blocks, `neutral` for the third class.
pub fn write_conll<W: Write>(records: &[TweetRecord], mut out: W) -> Result<()> {
    for (i, rec) in records.iter().enumerate() {
        rec.validate()?;
        if i > 0 {
            out.write_all(b"\n")?;
        }
        match rec.sentiment {
            Some(s) => writeln!(out, "meta\t{}\t{}", rec.id, s)?,
            None => writeln!(out, "meta\t{}", rec.id)?,
        }
        for (tok, tag) in rec.tokens.iter().zip(&rec.tags) {
            writeln!(out, "{tok}\t{tag}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_conll_string(records: &[TweetRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_conll(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("records are valid utf-8"))
}

pub fn write_conll_file(records: &[TweetRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_conll(records, std::io::BufWriter::new(file))
}

/// Share of non-English draws that come from the `mixed` lexicon.
const MIXED_SHARE: f64 = 0.15;

/// Parameters of a label-separable synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_records: usize,
    /// Words per (language, sentiment). Disjoint across sentiments.
    pub lexicons: BTreeMap<(LangTag, Sentiment), Vec<String>>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a non-`univ` token comes from a non-English lexicon.
    pub code_mix_ratio: f64,
    /// Probability that a token comes from the `univ` lexicon.
    pub univ_rate: f64,
}

impl SyntheticSpec {
    /// A 59-word Hinglish/Spanglish lexicon. English is kept small so most of
    /// the vocabulary sits in the partner languages.
    pub fn with_default_lexicons(seed: u64, num_records: usize) -> Self {
        use LangTag::*;
        use Sentiment::*;
        let table: [(LangTag, Sentiment, &[&str]); 15] = [
            (En, Positive, &["love", "great", "happy"]),
            (Spa, Positive, &["feliz", "bueno", "genial", "alegria", "bonito", "amor", "fiesta"]),
            (Hi, Positive, &["accha", "khush", "badhiya", "pyaar", "mast", "shandaar", "khushi"]),
            (Mixed, Positive, &["enjoyando", "partywala"]),
            (Univ, Positive, &["#win"]),
            (En, Negative, &["hate", "terrible", "sad"]),
            (Spa, Negative, &["triste", "malo", "odio", "feo", "horrible", "peor", "llorar"]),
            (Hi, Negative, &["bura", "gussa", "dukhi", "bekaar", "ghatiya", "rona", "nafrat"]),
            (Mixed, Negative, &["boringwala", "tensionado"]),
            (Univ, Negative, &["#fail"]),
            (En, Neutral, &["today", "meeting", "report"]),
            (Spa, Neutral, &["hoy", "reunion", "clima", "manana", "semana", "noticia", "oficina"]),
            (Hi, Neutral, &["aaj", "khabar", "mausam", "kal", "daftar", "samay", "baat"]),
            (Mixed, Neutral, &["officeko"]),
            (Univ, Neutral, &["#news"]),
        ];
        let lexicons = table
            .into_iter()
            .map(|(l, s, words)| ((l, s), words.iter().map(|w| w.to_string()).collect()))
            .collect();
        Self {
            seed,
            num_records,
            lexicons,
            min_len: 4,
            max_len: 12,
            code_mix_ratio: 0.3,
            univ_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.code_mix_ratio) || !(0.0..=1.0).contains(&self.univ_rate) {
            return Err(Error::Config("code_mix_ratio and univ_rate must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length bounds {}..={} are invalid",
                self.min_len, self.max_len
            )));
        }
        if let Some(((l, s), _)) = self.lexicons.iter().find(|(_, words)| words.is_empty()) {
            return Err(Error::Config(format!("lexicon ({l}, {s}) is empty")));
        }
        let sentiments: BTreeSet<Sentiment> = self.lexicons.keys().map(|&(_, s)| s).collect();
        if sentiments.is_empty() {
            return Err(Error::Config("no lexicons given".into()));
        }
        for s in &sentiments {
            if !self.lexicons.contains_key(&(LangTag::En, *s)) {
                return Err(Error::Config(format!("sentiment {s} has no English lexicon")));
            }
        }
        let mut owner: HashMap<&str, (LangTag, Sentiment)> = HashMap::new();
        for (&(l, s), words) in &self.lexicons {
            for w in words {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(Error::Config(format!("bad lexicon word {w:?}")));
                }
                if let Some(prev) = owner.insert(w, (l, s)) {
                    if prev != (l, s) {
                        return Err(Error::Config(format!("word {w:?} appears in two lexicons")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates `spec.num_records` records. Every word of a record comes from
/// that record's sentiment lexicons, so labels are recoverable from words.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TweetRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sentiments: Vec<Sentiment> = spec
        .lexicons
        .keys()
        .map(|&(_, s)| s)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let lex = |l: LangTag, s: Sentiment| spec.lexicons.get(&(l, s));

    let mut records = Vec::with_capacity(spec.num_records);
    for i in 0..spec.num_records {
        let sentiment = *sentiments.choose(&mut rng).expect("validated non-empty");
        let partners: Vec<LangTag> = [LangTag::Spa, LangTag::Hi]
            .into_iter()
            .filter(|&l| lex(l, sentiment).is_some())
            .collect();
        let partner = partners.choose(&mut rng).copied();
        let has_mixed = lex(LangTag::Mixed, sentiment).is_some();
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            let univ = lex(LangTag::Univ, sentiment).is_some() && rng.random_bool(spec.univ_rate);
            let tag = if univ {
                LangTag::Univ
            } else if (partner.is_some() || has_mixed) && rng.random_bool(spec.code_mix_ratio) {
                match partner {
                    Some(p) if !(has_mixed && rng.random_bool(MIXED_SHARE)) => p,
                    _ => LangTag::Mixed,
                }
            } else {
                LangTag::En
            };
            let words = lex(tag, sentiment).expect("tag chosen from present lexicons");
            tokens.push(words.choose(&mut rng).expect("non-empty lexicon").clone());
            tags.push(tag);
        }
        records.push(TweetRecord {
            id: (i + 1).to_string(),
            tokens,
            tags,
            sentiment: Some(sentiment),
        });
    }
    Ok(records)
}

/// Seeded shuffle, then a (train, dev, test) partition by fractions.
pub fn split(
    records: &[TweetRecord],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<TweetRecord>, Vec<TweetRecord>, Vec<TweetRecord>)> {
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = records.len();
    if n < 3 {
        return Err(Error::Config(format!("cannot split {n} records three ways")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut train = ((n as f64 * fractions[0]).round() as usize).max(1);
    let dev = ((n as f64 * fractions[1]).round() as usize).clamp(1, n - 2);
    train = train.min(n - dev - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..train]),
        pick(&order[train..train + dev]),
        pick(&order[train + dev..]),
    ))
}

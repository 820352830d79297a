//! Tweet normalization: emoji-to-phrase substitution followed by character
//! filtering. The order matters; filtering first would delete every emoji
//! before it could be mapped.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const BUILTIN_TABLE: &str = include_str!("../data/emoji.tsv");

/// Emoji sequence to lowercase English phrase.
#[derive(Clone, Debug)]
pub struct EmojiTable {
    phrases: HashMap<String, String>,
    longest_key: usize,
    // Non-ASCII code points that occur in some key. Leftovers are deleted.
    components: HashSet<char>,
    version: Option<String>,
}

impl EmojiTable {
    /// Parses the `<emoji>\t<phrase>` resource format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut phrases = HashMap::new();
        let mut version = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if let Some(comment) = line.strip_prefix('#') {
                // A keycap line starts with '#' too; comments never contain a tab.
                if !comment.contains('\t') {
                    if version.is_none() {
                        version = Some(comment.trim().to_string());
                    }
                    continue;
                }
            }
            if line.is_empty() {
                continue;
            }
            let (key, phrase) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected <emoji>\\t<phrase>".into(),
            })?;
            if key.is_empty() || phrase.trim().is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty emoji or phrase".into(),
                });
            }
            if !phrase.chars().all(|c| c.is_ascii_lowercase() || c == ' ') {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("phrase {phrase:?} must be [a-z ]"),
                });
            }
            phrases.insert(key.to_string(), phrase.to_string());
        }
        let longest_key = phrases.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        let components = phrases
            .keys()
            .flat_map(|k| k.chars())
            .filter(|c| !c.is_ascii())
            .collect();
        Ok(Self {
            phrases,
            longest_key,
            components,
            version,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The table shipped with the crate (CLDR short names).
    pub fn builtin() -> &'static EmojiTable {
        static TABLE: OnceLock<EmojiTable> = OnceLock::new();
        TABLE.get_or_init(|| EmojiTable::parse(BUILTIN_TABLE).expect("builtin emoji table is valid"))
    }

    pub fn lookup(&self, emoji: &str) -> Option<&str> {
        self.phrases.get(emoji).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// First header comment of the resource file.
    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    fn is_deletable(&self, c: char) -> bool {
        !c.is_ascii() && (self.components.contains(&c) || is_pictographic(c))
    }
}

fn is_pictographic(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B00..=0x2BFF | 0xFE00..=0xFE0F | 0x200D | 0xE0020..=0xE007F)
}

/// Replaces each known emoji sequence (longest match first) with
/// `" " + phrase + " "` and deletes unknown emoji.
pub fn substitute_emoji(text: &str, table: &EmojiTable) -> String {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    'outer: while pos < chars {
        let max_len = table.longest_key.min(chars - pos);
        for len in (1..=max_len).rev() {
            if let Some(phrase) = table.lookup(&text[bounds[pos]..bounds[pos + len]]) {
                out.push(' ');
                out.push_str(phrase);
                out.push(' ');
                pos += len;
                continue 'outer;
            }
        }
        let c = text[bounds[pos]..].chars().next().expect("in bounds");
        if !table.is_deletable(c) {
            out.push(c);
        }
        pos += 1;
    }
    out
}

/// Character-level cleanup rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterPolicy {
    pub lowercase: bool,
    pub url_token_replacement: String,
    pub delete_tokens: BTreeSet<String>,
    pub delete_chars: BTreeSet<char>,
    /// Punctuation kept in addition to letters and ASCII digits.
    pub allowed_punctuation: BTreeSet<char>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            url_token_replacement: "http".into(),
            delete_tokens: ["https".to_string()].into(),
            delete_chars: ['@'].into(),
            allowed_punctuation: ['.', ',', '!', '?', '\'', '#'].into(),
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        let r = &self.url_token_replacement;
        if r.is_empty() || !r.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
            return Err(Error::Config(format!(
                "url replacement {r:?} must be non-empty lowercase ascii"
            )));
        }
        if r == "url" || self.delete_tokens.contains(r) {
            return Err(Error::Config(format!("url replacement {r:?} would be rewritten again")));
        }
        Ok(())
    }

    pub fn allows(&self, c: char) -> bool {
        !self.delete_chars.contains(&c)
            && (c.is_alphabetic() || c.is_ascii_digit() || self.allowed_punctuation.contains(&c))
    }
}

/// Lowercases, strips disallowed characters per token, then rewrites `url`
/// tokens and drops deleted tokens. Whitespace is collapsed and trimmed.
pub fn filter_characters(text: &str, policy: &FilterPolicy) -> String {
    let mut kept: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let lowered;
        let token = if policy.lowercase {
            lowered = raw.to_lowercase();
            lowered.as_str()
        } else {
            raw
        };
        let cleaned: String = token.chars().filter(|&c| policy.allows(c)).collect();
        if cleaned.is_empty() {
            continue;
        }
        if cleaned.to_lowercase() == "url" {
            kept.push(policy.url_token_replacement.clone());
        } else if !policy.delete_tokens.contains(&cleaned) {
            kept.push(cleaned);
        }
    }
    kept.join(" ")
}

/// Emoji table plus filter policy.
#[derive(Clone, Debug)]
pub struct Preprocessor<'a> {
    pub table: &'a EmojiTable,
    pub policy: FilterPolicy,
}

impl Default for Preprocessor<'static> {
    fn default() -> Self {
        Self {
            table: EmojiTable::builtin(),
            policy: FilterPolicy::default(),
        }
    }
}

impl<'a> Preprocessor<'a> {
    pub fn new(table: &'a EmojiTable, policy: FilterPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self { table, policy })
    }

    pub fn apply(&self, text: &str) -> String {
        filter_characters(&substitute_emoji(text, self.table), &self.policy)
    }

    /// Preprocesses one token into zero or more words.
    pub fn apply_token(&self, token: &str) -> Vec<String> {
        self.apply(token).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
    }
}

/// Full pipeline with the builtin table and default policy.
pub fn preprocess_text(text: &str) -> String {
    Preprocessor::default().apply(text)
}

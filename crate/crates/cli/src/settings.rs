//! Flat `key = value` config files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Values read from a config file. Every key must be consumed by the
/// running command, otherwise [`Settings::finish`] fails.
#[derive(Debug, Default)]
pub struct Settings {
    source: String,
    values: BTreeMap<String, (String, usize)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{source}:{}: expected `key = value`", idx + 1);
            };
            let key = normalize(key);
            if key.is_empty() {
                bail!("{source}:{}: empty key", idx + 1);
            }
            if values.insert(key.clone(), (value.trim().to_string(), idx + 1)).is_some() {
                bail!("{source}:{}: duplicate key {key}", idx + 1);
            }
        }
        Ok(Self {
            source: source.to_string(),
            values,
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// The flag value if given, else the file value, else `None`. The key
    /// is consumed either way.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.values.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None => Ok(None),
            Some((raw, line)) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("{}:{line}: bad value for {key}: {e}", self.source)),
        }
    }

    pub fn pick_or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(key, flag)?.unwrap_or(default))
    }

    /// A switch is on if the flag was passed or the file says `true`.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        Ok(self.pick(key, flag.then_some(true))?.unwrap_or(false))
    }

    pub fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.values.into_iter().next() {
            bail!("{}:{line}: unknown key {key}", self.source);
        }
        Ok(())
    }
}

//! `key = value` text files used for profiles and scenarios.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored, keys are
//! unique. Values are trimmed; there is no quoting.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Invalid { key: String, value: String },
    #[error("unknown key `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(KvError::Syntax { line: idx + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line: idx + 1 });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line: idx + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| KvError::Invalid {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    /// `none` (or absence) maps to `None`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.raw(key) {
            None | Some("none") => Ok(None),
            Some(_) => self.get(key),
        }
    }

    /// A `lo..hi` range, or `none`.
    pub fn range(&self, key: &str) -> Result<Option<(f64, f64)>, KvError> {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        if raw == "none" {
            return Ok(None);
        }
        let invalid = || KvError::Invalid {
            key: key.to_string(),
            value: raw.to_string(),
        };
        let (lo, hi) = raw.split_once("..").ok_or_else(invalid)?;
        let lo: f64 = lo.trim().parse().map_err(|_| invalid())?;
        let hi: f64 = hi.trim().parse().map_err(|_| invalid())?;
        Ok(Some((lo, hi)))
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), KvError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(KvError::Unknown(k.clone())),
            None => Ok(()),
        }
    }
}

/// Writes pairs in the given order.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pair(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn optional<T: Display>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        match value {
            Some(v) => self.pair(key, v),
            None => self.pair(key, "none"),
        }
    }

    pub fn range(&mut self, key: &str, value: Option<(f64, f64)>) -> &mut Self {
        match value {
            Some((lo, hi)) => self.pair(key, format!("{lo}..{hi}")),
            None => self.pair(key, "none"),
        }
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}

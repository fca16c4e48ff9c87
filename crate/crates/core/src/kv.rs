//! `key=value` text files: configs, dataset metadata, synthetic specs and
//! report summaries all use this format.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{FastError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; later keys override earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = KvMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                FastError::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            map.set(k.trim(), v.trim());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FastError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get_str(key).is_some()
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<V>()
                .map(Some)
                .map_err(|_| FastError::Config(format!("bad value for {key}: {raw:?}"))),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?
            .ok_or_else(|| FastError::Config(format!("missing key {key}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &KvMap) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Entries under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvMap {
        let head = format!("{prefix}.");
        KvMap {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&head).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| FastError::io(path, e))
    }
}

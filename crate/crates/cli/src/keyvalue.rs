use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{config_error, CliResult};

/// Flat `key=value` text with `#` comment lines. Every value remembers its
/// line so that errors can point at it.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, allowed: &[&str]) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(format!("line {n}: expected key=value, got {line:?}")));
            };
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(config_error(format!("line {n}: unknown key {key:?}")));
            }
            if entries
                .insert(key.to_string(), (n, value.trim().to_string()))
                .is_some()
            {
                return Err(config_error(format!("line {n}: duplicate key {key:?}")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn invalid(&self, key: &str, why: &str) -> crate::error::CliError {
        let (n, v) = &self.entries[key];
        config_error(format!("line {n}: invalid value {v:?} for {key:?}{why}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|_| self.invalid(key, "")),
        }
    }

    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> CliResult<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Inclusive `lo,hi` range.
    pub fn range(&self, key: &str, slot: &mut (usize, usize)) -> CliResult<()> {
        let Some(v) = self.raw(key) else {
            return Ok(());
        };
        let parsed = v
            .split_once(',')
            .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
        match parsed {
            Some(r) => {
                *slot = r;
                Ok(())
            }
            None => Err(self.invalid(key, ", expected lo,hi")),
        }
    }

    /// Comma-separated list; empty items are dropped.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    /// Error naming the line of `key`, for values that parse but are
    /// rejected later.
    pub fn reject(&self, key: &str, why: &str) -> crate::error::CliError {
        match self.entries.get(key) {
            Some(_) => self.invalid(key, &format!(": {why}")),
            None => config_error(format!("{key}: {why}")),
        }
    }
}

//! Flat `key = value` configuration files with `#` comments.
//!
//! The format is deliberately trivial: one assignment per line, later keys
//! override earlier ones, anything after `#` is ignored. CLI flags override
//! file values at a higher layer.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Insert or override a value (used for CLI flag overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "number")
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, "integer")
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "integer")
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("true") | Some("1") | Some("yes") | Some("on") => Ok(Some(true)),
            Some("false") | Some("0") | Some("no") | Some("off") => Ok(Some(false)),
            Some(other) => Err(Error::Config(format!("{key}: expected bool, got `{other}`"))),
        }
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: expected {kind}, got `{raw}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_overrides() {
        let cfg = Config::parse("a = 1\n# comment\nb = hello # trailing\na = 2\n\n").unwrap();
        assert_eq!(cfg.usize("a").unwrap(), Some(2));
        assert_eq!(cfg.get("b"), Some("hello"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("just a line").is_err());
        assert!(Config::parse("= 3").is_err());
        assert!(Config::parse("x = abc").unwrap().f64("x").is_err());
    }

    #[test]
    fn bool_forms() {
        let cfg = Config::parse("a = true\nb = off\nc = 1").unwrap();
        assert_eq!(cfg.bool("a").unwrap(), Some(true));
        assert_eq!(cfg.bool("b").unwrap(), Some(false));
        assert_eq!(cfg.bool("c").unwrap(), Some(true));
    }
}

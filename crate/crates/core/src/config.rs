//! Plain `key = value` text configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! (`mixup.alpha`), values are raw strings parsed on access.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Result, SedError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set_assignment(line)
                .map_err(|_| SedError::parse(i + 1, format!("expected `key = value`, got {raw:?}")))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` assignment, overriding any earlier value.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| SedError::Config(format!("expected key=value, got {assignment:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(SedError::Config(format!("empty key in {assignment:?}")));
        }
        self.set(k, v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| SedError::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get_str(key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(SedError::Config(format!("cannot parse {key} = {v:?} as a flag"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sorted, canonical rendering; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let c = KvConfig::parse("# comment\nseed = 7\n\nmixup.alpha=0.2\nflag = off\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(c.get_or("mixup.alpha", 1.0).unwrap(), 0.2);
        assert!(!c.get_bool_or("flag", true).unwrap());
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        assert_eq!(KvConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn errors() {
        assert!(KvConfig::parse("novalue\n").is_err());
        let c = KvConfig::parse("seed = x").unwrap();
        assert!(c.get::<u64>("seed").is_err());
        let mut c = KvConfig::default();
        assert!(c.set_assignment("=3").is_err());
        c.set_assignment("a.b = 4").unwrap();
        assert_eq!(c.get_str("a.b"), Some("4"));
    }
}

//! Flat `key = value` config files. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i as u64 + 1, msg: format!("expected key=value, got {line:?}") });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Parse { line: i as u64 + 1, msg: "empty key".into() });
            }
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in key order, one `key = value` per line.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let c = KvConfig::parse("# header\ntask = predator_prey\n n_agents=3 # inline\n\nvision = 1.5\n").unwrap();
        assert_eq!(c.raw("task"), Some("predator_prey"));
        assert_eq!(c.get::<usize>("n_agents").unwrap(), Some(3));
        assert_eq!(c.get_or("vision", 0.0).unwrap(), 1.5);
        assert_eq!(c.get_or("missing", 7u32).unwrap(), 7);
        assert!(c.get::<usize>("vision").is_err());
    }

    #[test]
    fn reports_line_numbers() {
        match KvConfig::parse("a = 1\nbogus\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_round_trips() {
        let mut c = KvConfig::new();
        c.set("b", 2);
        c.set("a", "x");
        assert_eq!(KvConfig::parse(&c.render()).unwrap(), c);
    }
}

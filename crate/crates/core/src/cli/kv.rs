//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. List
//! values are comma separated and `v*k` repeats `v` k times, so the plan row
//! `iteration = 2000*2` reads as `[2000, 2000]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KvConfig {
            entries,
            ..Default::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned()?;
        self.used.insert(key.to_string());
        Some(v)
    }

    fn note(&mut self, key: &str, shown: String) {
        self.resolved.push((key.to_string(), shown));
    }

    fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{}`", s.trim())))
    }

    /// First of `keys` present in the file, marking every alias as read.
    fn raw_any(&mut self, keys: &[&str]) -> Option<String> {
        let mut found = None;
        for k in keys {
            if let Some(v) = self.raw(k) {
                found.get_or_insert(v);
            }
        }
        found
    }

    pub fn require<T: FromStr + ToString>(&mut self, key: &str) -> Result<T> {
        let s = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        let v: T = Self::parse_one(key, &s)?;
        self.note(key, v.to_string());
        Ok(v)
    }

    pub fn get<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        self.get_any(&[key], default)
    }

    /// Like [`KvConfig::get`] with alternative spellings of one key.
    pub fn get_any<T: FromStr + ToString>(&mut self, keys: &[&str], default: T) -> Result<T> {
        let v = match self.raw_any(keys) {
            Some(s) => Self::parse_one(keys[0], &s)?,
            None => default,
        };
        self.note(keys[0], v.to_string());
        Ok(v)
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = match self.raw(key) {
            None => default,
            Some(s) => match s.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                _ => return Err(Error::Config(format!("key `{key}`: expected a boolean, got `{s}`"))),
            },
        };
        self.note(key, v.to_string());
        Ok(v)
    }

    /// Raw list, `None` when absent.
    pub fn list_any<T: FromStr + ToString>(&mut self, keys: &[&str]) -> Result<Option<Vec<T>>> {
        let Some(s) = self.raw_any(keys) else {
            return Ok(None);
        };
        let v = parse_list::<T>(keys[0], &s)?;
        let shown = v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.note(keys[0], shown);
        Ok(Some(v))
    }

    pub fn list<T: FromStr + ToString + Clone>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.list_any(&[key])? {
            Some(v) => Ok(v),
            None => {
                let shown = default.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
                self.note(key, shown);
                Ok(default.to_vec())
            }
        }
    }

    /// Errors on the first key that no getter asked for.
    pub fn finish(&self) -> Result<()> {
        match self.entries.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Every value read so far, defaults included, as `key = value` lines.
    pub fn effective(&self) -> String {
        self.resolved
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Comma separated values with `v*k` repetition.
pub fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(Error::Config(format!("key `{key}`: empty list item")));
        }
        let (v, reps) = match item.rsplit_once('*') {
            Some((v, k)) => (
                v,
                k.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("key `{key}`: bad repeat count in `{item}`")))?,
            ),
            None => (item, 1),
        };
        if reps == 0 {
            return Err(Error::Config(format!("key `{key}`: zero repeat count")));
        }
        let x: T = KvConfig::parse_one(key, v)?;
        out.push(x);
        for _ in 1..reps {
            out.push(KvConfig::parse_one(key, v)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_lists_and_repeats() {
        let mut c = KvConfig::parse("# plan\nseed = 3\niteration = 2000*2, 500 # tail\n\nlr_lr=1e-2\n").unwrap();
        assert_eq!(c.require::<u64>("seed").unwrap(), 3);
        assert_eq!(c.list::<usize>("iteration", &[]).unwrap(), vec![2000, 2000, 500]);
        assert_eq!(c.get("lr_lr", 0.0).unwrap(), 0.01);
        assert_eq!(c.get("missing", 7usize).unwrap(), 7);
        c.finish().unwrap();
        assert!(c.effective().contains("iteration = 2000,2000,500"));
    }

    #[test]
    fn unknown_missing_and_duplicate_keys() {
        let mut c = KvConfig::parse("seed = 1\nbogus = 2\n").unwrap();
        c.require::<u64>("seed").unwrap();
        let e = c.finish().unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        let mut c = KvConfig::parse("m = 4\n").unwrap();
        assert!(c.require::<u64>("seed").unwrap_err().to_string().contains("seed"));
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
        assert!(KvConfig::parse("novalue\n").is_err());
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = KvConfig::parse("m = ten\n").unwrap();
        let e = c.get("m", 1usize).unwrap_err().to_string();
        assert!(e.contains("`m`"), "{e}");
        assert!(parse_list::<usize>("k", "1*0").is_err());
        assert!(parse_list::<usize>("k", "1,,2").is_err());
    }
}

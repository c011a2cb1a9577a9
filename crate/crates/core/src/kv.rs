//! `key = value` text files (`#` starts a comment).

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
    }
    Ok(out)
}

pub fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

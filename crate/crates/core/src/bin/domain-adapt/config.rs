//! Config files: either a flat JSON object or `key = value` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use domain_adapt::{Error, Result};

#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(text)?;
            let obj = value
                .as_object()
                .ok_or_else(|| Error::InvalidArgument("config JSON must be an object".into()))?;
            for (k, v) in obj {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| i.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                entries.insert(normalize(k), s);
            }
        } else {
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    row: i + 1,
                    col: 1,
                    msg: format!("expected key=value, got {line:?}"),
                })?;
                entries.insert(normalize(k.trim()), v.trim().to_owned());
            }
        }
        Ok(Self { entries })
    }

    pub fn get<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.entries
            .get(key)
            .map(|raw| {
                raw.parse().map_err(|_| {
                    Error::InvalidArgument(format!("config entry {key} = {raw:?} is not valid"))
                })
            })
            .transpose()
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.entries.get(key).map(|raw| parse_list(raw)).transpose()
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

pub fn parse_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{raw:?} is not a comma-separated list of counts"))
            })
        })
        .collect()
}

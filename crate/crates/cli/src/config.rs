//! `key = value` config files. Blank lines and `#` comments are ignored;
//! keys are the snake_case names of training and optimizer settings plus
//! `seed`, `jobs`, `level`, `max_nodes` and `hidden_slots`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use recur_nas_core::lm_trainer::TrainConfig;
use recur_nas_core::optimizers::OptimizerParams;

use crate::{CliResult, Failure};

const EXTRA_KEYS: [&str; 5] = ["seed", "jobs", "level", "max_nodes", "hidden_slots"];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    origin: String,
}

fn field_names<T: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::from(format!("{}: {e}", path.display())))?;
        ConfigFile::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<ConfigFile> {
        let known: BTreeSet<String> = field_names::<TrainConfig>()
            .into_iter()
            .chain(field_names::<OptimizerParams>())
            .chain(EXTRA_KEYS.iter().map(|s| s.to_string()))
            .collect();
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::usage(format!("{origin}:{}: expected `key = value`", i + 1)));
            };
            let key = k.trim().replace('-', "_");
            if !known.contains(&key) {
                return Err(Failure::usage(format!("{origin}:{}: unknown key `{key}`", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile {
            values,
            origin: origin.to_string(),
        })
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Failure::usage(format!("{}: bad value `{v}` for `{key}`", self.origin))),
        }
    }

    /// Overrides the fields of `base` named in the file.
    pub fn apply_to<T: Serialize + DeserializeOwned>(&self, base: T) -> CliResult<T> {
        let Value::Object(mut obj) = serde_json::to_value(&base).expect("config serializes") else {
            return Ok(base);
        };
        for (k, raw) in &self.values {
            let Some(slot) = obj.get_mut(k) else { continue };
            let parsed = match slot {
                Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
                Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw).ok().map(Value::Number),
                _ => Some(Value::String(raw.clone())),
            };
            *slot = parsed.ok_or_else(|| Failure::usage(format!("{}: bad value `{raw}` for `{k}`", self.origin)))?;
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| Failure::usage(format!("{}: {e}", self.origin)))
    }
}

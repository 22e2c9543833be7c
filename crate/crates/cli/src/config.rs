//! Run configuration. Every setting resolves as flag, then config file, then
//! built-in default. A config file is TOML: top-level keys apply to every
//! command that knows them, a `[command]` table applies to that command only.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct ConfigFile {
    root: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let root = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        Ok(Self { root })
    }

    /// Fills the unset fields of `args` from the file.
    pub fn apply<T>(&self, section: &str, args: T) -> CliResult<T>
    where
        T: Serialize + DeserializeOwned + Default,
    {
        let known = object(serde_json::to_value(T::default())?);
        let mut from_file = Map::new();
        for (k, v) in &self.root {
            if !v.is_table() && known.contains_key(k) {
                from_file.insert(k.clone(), serde_json::to_value(v)?);
            }
        }
        if let Some(table) = self.root.get(section) {
            let table = table
                .as_table()
                .ok_or_else(|| CliError::config(format!("config key `{section}` must be a table")))?;
            for (k, v) in table {
                if !known.contains_key(k) {
                    return Err(CliError::config(format!("unknown key `{k}` in [{section}]")));
                }
                from_file.insert(k.clone(), serde_json::to_value(v)?);
            }
        }
        let mut merged = object(serde_json::to_value(args)?);
        for (k, v) in from_file {
            if merged.get(&k).map_or(true, Value::is_null) {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::config(format!("invalid value in [{section}]: {e}")))
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

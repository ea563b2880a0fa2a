use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad invocation or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A flat JSON object of configuration keys with command-line overrides applied on top.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    map: Map<String, Value>,
}

impl RawConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => Ok(Self { map }),
            Ok(_) => Err(usage(format!("{}: expected a JSON object", path.display()))),
            Err(e) => Err(usage(format!("{}: {e}", path.display()))),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.map.insert(key.to_string(), serde_json::to_value(value).expect("serializable override"));
    }

    pub fn set_opt<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Applies `key=value` pairs; values are JSON when they parse as JSON and strings otherwise.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> anyhow::Result<()> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| usage(format!("override `{p}` is not key=value")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            self.map.insert(k.trim().to_string(), value);
        }
        Ok(())
    }

    /// Removes a path-valued key.
    pub fn take_path(&mut self, key: &str) -> anyhow::Result<Option<PathBuf>> {
        match self.map.remove(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(usage(format!("`{key}` must be a path string, got {other}"))),
        }
    }

    /// Deserializes the remaining keys; unknown keys are rejected by the target type.
    pub fn parse<T: DeserializeOwned>(self, what: &str) -> anyhow::Result<T> {
        serde_json::from_value(Value::Object(self.map)).map_err(|e| usage(format!("{what} configuration: {e}")))
    }
}

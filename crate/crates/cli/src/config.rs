//! Layered configuration: built-in defaults, then a JSON config file, then
//! explicit command-line flags. The effective configuration is echoed to
//! stdout (`config.<key>=<value>`, sorted by key) before a stage runs, so
//! every run records exactly what it used.

use crate::CliError;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

/// Values loaded from `--config <file.json>`; an absent file is an empty
/// overlay.
pub struct Overlay {
    map: serde_json::Map<String, Value>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self { map: serde_json::Map::new() });
        };
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| CliError::Validation(format!("bad JSON in {}: {e}", path.display())))?;
        match value {
            Value::Object(map) => Ok(Self { map }),
            _ => Err(CliError::Validation(format!(
                "config {} must be a JSON object",
                path.display()
            ))),
        }
    }

    /// Reject keys that no flag of the active subcommand would accept.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Validation(format!(
                    "unknown config key {key:?}; allowed: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn fetch<T>(
        &self,
        key: &str,
        kind: &str,
        convert: impl Fn(&Value) -> Option<T>,
    ) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => convert(v).map(Some).ok_or_else(|| {
                CliError::Validation(format!("config key {key:?} must be a {kind}, got {v}"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.fetch(key, "non-negative integer", |v| v.as_u64().map(|u| u as usize))
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.fetch(key, "non-negative integer", Value::as_u64)
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>, CliError> {
        self.fetch(key, "non-negative integer", |v| v.as_u64().map(|u| u as u32))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.fetch(key, "number", Value::as_f64)
    }

    pub fn get_string(&self, key: &str) -> Result<Option<String>, CliError> {
        self.fetch(key, "string", |v| v.as_str().map(str::to_string))
    }
}

/// CLI flag beats config file beats default.
pub fn resolve<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// Sorted `config.<key>=<value>` lines.
pub struct Echo {
    entries: BTreeMap<String, String>,
}

impl Echo {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn print(&self) {
        for (k, v) in &self.entries {
            println!("config.{k}={v}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_reads_typed_values_and_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 3, "lr": 0.01, "gating": "static"}"#).unwrap();
        let o = Overlay::load(Some(&path)).unwrap();
        assert_eq!(o.get_usize("epochs").unwrap(), Some(3));
        assert_eq!(o.get_f64("lr").unwrap(), Some(0.01));
        assert_eq!(o.get_string("gating").unwrap(), Some("static".to_string()));
        assert_eq!(o.get_usize("missing").unwrap(), None);
        assert!(o.get_usize("gating").is_err());
        assert!(o.check_keys(&["epochs", "lr", "gating"]).is_ok());
        assert!(o.check_keys(&["epochs"]).is_err());
    }

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        assert_eq!(resolve(Some(1), Some(2), 3), 1);
        assert_eq!(resolve(None, Some(2), 3), 2);
        assert_eq!(resolve::<i32>(None, None, 3), 3);
    }
}

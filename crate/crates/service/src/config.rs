//! `key=value` service configuration.

use std::fs;
use std::path::{Path, PathBuf};

use crate::ServiceError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub workspace_dir: PathBuf,
    pub bind: String,
    /// Origin allowed by CORS; `*` allows any. No CORS headers when unset.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(workspace_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            workspace_dir: workspace_dir.into(),
            bind: DEFAULT_BIND.to_owned(),
            cors_origin: None,
        }
    }

    /// Blank lines and `#` comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let mut workspace_dir = None;
        let mut bind = DEFAULT_BIND.to_owned();
        let mut cors_origin = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ServiceError::Config(format!("line {}: expected key=value", i + 1)))?;
            let value = value.trim().to_owned();
            match key.trim() {
                "workspace_dir" => workspace_dir = Some(PathBuf::from(value)),
                "bind" => bind = value,
                "cors_origin" => cors_origin = (!value.is_empty()).then_some(value),
                other => return Err(ServiceError::Config(format!("line {}: unknown key '{other}'", i + 1))),
            }
        }
        Ok(ServiceConfig {
            workspace_dir: workspace_dir.ok_or_else(|| ServiceError::Config("workspace_dir is required".into()))?,
            bind,
            cors_origin,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_defaults() {
        let c = ServiceConfig::parse("# ws\nworkspace_dir = /tmp/ws\ncors_origin=http://localhost:5173\n").unwrap();
        assert_eq!(c.workspace_dir, PathBuf::from("/tmp/ws"));
        assert_eq!(c.bind, DEFAULT_BIND);
        assert_eq!(c.cors_origin.as_deref(), Some("http://localhost:5173"));
        assert!(ServiceConfig::parse("bind=0.0.0.0:1\n").is_err());
        assert!(ServiceConfig::parse("workspace_dir=x\nport=3\n").is_err());
        assert!(ServiceConfig::parse("workspace_dir\n").is_err());
    }
}

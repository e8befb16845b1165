//! Flat `key = value` service configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not pass silently.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::emotion::DEFAULT_MOOD_THRESHOLD;
use crate::recommender::{Weights, DEFAULT_BLEND};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub mood_threshold: f64,
    pub weights: Weights,
    pub blend: f64,
    pub chain_path: Option<PathBuf>,
    pub catalog_path: PathBuf,
    /// Lyric classifier used to fill in predicted tags for the catalog.
    pub checkpoint_path: Option<PathBuf>,
    /// Mood-image classifier; trained on synthetic glyphs when absent.
    pub image_checkpoint_path: Option<PathBuf>,
    pub interactions_path: Option<PathBuf>,
    pub seed: u64,
    pub session_ttl_secs: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            mood_threshold: DEFAULT_MOOD_THRESHOLD,
            weights: Weights::default(),
            blend: DEFAULT_BLEND,
            chain_path: None,
            catalog_path: PathBuf::from("catalog.jsonl"),
            checkpoint_path: None,
            image_checkpoint_path: None,
            interactions_path: None,
            seed: 0,
            session_ttl_secs: 60 * 60,
        }
    }
}

impl ServiceConfig {
    /// Relative paths resolve against `base` (normally the config file's
    /// directory).
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let (mut alpha, mut beta, mut gamma) = (cfg.weights.alpha, cfg.weights.beta, cfg.weights.gamma);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let invalid = |message: String| ConfigError::Invalid {
                key: key.to_string(),
                message,
            };
            let num = |v: &str| v.parse::<f64>().map_err(|e| invalid(e.to_string()));
            let path = |v: &str| {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            match key {
                "host" => cfg.host = value.to_string(),
                "port" => cfg.port = value.parse().map_err(|e| invalid(format!("{e}")))?,
                "mood_threshold" => cfg.mood_threshold = num(value)?,
                "alpha" => alpha = num(value)?,
                "beta" => beta = num(value)?,
                "gamma" => gamma = num(value)?,
                "blend" => cfg.blend = num(value)?,
                "chain_path" => cfg.chain_path = Some(path(value)),
                "catalog_path" => cfg.catalog_path = path(value),
                "checkpoint_path" => cfg.checkpoint_path = Some(path(value)),
                "image_checkpoint_path" => cfg.image_checkpoint_path = Some(path(value)),
                "interactions_path" => cfg.interactions_path = Some(path(value)),
                "seed" => cfg.seed = value.parse().map_err(|e| invalid(format!("{e}")))?,
                "session_ttl_minutes" => {
                    let m: i64 = value.parse().map_err(|e| invalid(format!("{e}")))?;
                    cfg.session_ttl_secs = m * 60;
                }
                _ => {
                    return Err(ConfigError::Syntax {
                        line: n + 1,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.weights = Weights { alpha, beta, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.into(),
            message,
        };
        if !(self.mood_threshold > 0.0 && self.mood_threshold < 1.0) {
            return Err(invalid("mood_threshold", "must lie strictly between 0 and 1".into()));
        }
        self.weights
            .validate()
            .map_err(|e| invalid("alpha/beta/gamma", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(invalid("blend", "must lie in [0, 1]".into()));
        }
        if self.session_ttl_secs <= 0 {
            return Err(invalid("session_ttl_minutes", "must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let text = "# demo\nport = 9000\nalpha=1\nbeta=0\ngamma=0\ncatalog_path = songs.jsonl\nchain_path=/tmp/c.jsonl\nsession_ttl_minutes = 5\n";
        let cfg = ServiceConfig::parse(text, Path::new("/etc/moodtune")).unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.weights, Weights::new(1.0, 0.0, 0.0).unwrap());
        assert_eq!(cfg.catalog_path, PathBuf::from("/etc/moodtune/songs.jsonl"));
        assert_eq!(cfg.chain_path, Some(PathBuf::from("/tmp/c.jsonl")));
        assert_eq!(cfg.session_ttl_secs, 300);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(ServiceConfig::parse("alpha = 0.9", base).is_err());
        assert!(ServiceConfig::parse("mood_threshold = 1", base).is_err());
        assert!(ServiceConfig::parse("colour = red", base).is_err());
        assert!(ServiceConfig::parse("port", base).is_err());
        assert!(ServiceConfig::parse("port = -1", base).is_err());
    }
}

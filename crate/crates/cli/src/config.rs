//! Service configuration: TOML file with environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const ENV_PORT: &str = "VSDF_PORT";
pub const ENV_DATA_DIR: &str = "VSDF_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Content-addressed artifact store.
    pub data_dir: PathBuf,
    /// Checkpoint holding decoder and estimator; the service answers 503
    /// until one is loaded.
    pub checkpoint: Option<PathBuf>,
    /// Container with a drag model, if the checkpoint lacks one.
    pub drag_model: Option<PathBuf>,
    /// Corpus manifest used for parameter bounds.
    pub manifest: Option<PathBuf>,
    /// Concurrent optimization jobs.
    pub workers: usize,
    /// Lattice resolution for decoding optimized latents.
    pub decode_resolution: usize,
    pub default_max_iters: usize,
    pub default_tolerance: f64,
    /// Base seed for requests that do not carry one.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("vsdf-data"),
            checkpoint: None,
            drag_model: None,
            manifest: None,
            workers: 2,
            decode_resolution: 64,
            default_max_iters: 5000,
            default_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Defaults, then the file if given, then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(p) = var(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}={p:?} is not a port")))?;
        }
        if let Some(d) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.workers == 0 {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        if self.decode_resolution < 8 {
            return Err(ServiceError::Config(
                "decode_resolution must be at least 8".into(),
            ));
        }
        if !(self.default_tolerance >= 0.0) {
            return Err(ServiceError::Config(
                "default_tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ServiceConfig::from_toml("port = 9000\nworkers = 4\n").unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.workers, 4);
        assert_eq!(c.decode_resolution, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::from_toml("prot = 1").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut c = ServiceConfig::from_toml("port = 9000").unwrap();
        c.apply_env(|k| match k {
            ENV_PORT => Some("7001".into()),
            ENV_DATA_DIR => Some("/srv/vsdf".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 7001);
        assert_eq!(c.data_dir, PathBuf::from("/srv/vsdf"));
        assert!(c.apply_env(|_| Some("not-a-port".into())).is_err());
    }
}

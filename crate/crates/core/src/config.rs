//! TOML pipeline configuration: feed sources, reference data paths,
//! provider selection, store locations, and the serve address. Relative
//! paths resolve against the config file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config at {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub snapshot: PathBuf,
    pub overrides: Option<PathBuf>,
    pub junk_words: Option<PathBuf>,
    pub refresh_url: Option<String>,
}

fn default_max_hops() -> usize {
    10
}

fn default_per_host_delay_ms() -> u64 {
    2000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// Feed sources: http(s) or file URLs, or paths relative to the
    /// config file.
    pub feeds: Vec<String>,
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
    #[serde(default = "default_per_host_delay_ms")]
    pub per_host_delay_ms: u64,
}

fn default_rate_limit_rpm() -> u32 {
    0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// Use the deterministic built-in provider instead of a remote one.
    #[serde(default)]
    pub mock: bool,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    #[serde(default = "default_rate_limit_rpm")]
    pub rate_limit_rpm: u32,
    pub audit_log: Option<PathBuf>,
}

fn default_body_char_cap() -> usize {
    24_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    #[serde(default = "default_body_char_cap")]
    pub body_char_cap: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            body_char_cap: default_body_char_cap(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    pub path: PathBuf,
    pub queue_dir: PathBuf,
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: default_bind(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub reference: ReferenceConfig,
    pub ingest: IngestConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    pub store: StoreConfig,
    #[serde(default)]
    pub serve: ServeConfig,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl PipelineConfig {
    /// Read, resolve, and validate a config file.
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.reference.snapshot);
        if let Some(p) = &mut self.reference.overrides {
            resolve(base, p);
        }
        if let Some(p) = &mut self.reference.junk_words {
            resolve(base, p);
        }
        if let Some(p) = &mut self.provider.audit_log {
            resolve(base, p);
        }
        resolve(base, &mut self.store.path);
        resolve(base, &mut self.store.queue_dir);
        for feed in &mut self.ingest.feeds {
            if Url::parse(feed).is_err() {
                let mut as_path = PathBuf::from(&*feed);
                resolve(base, &mut as_path);
                if let Ok(abs) = std::path::absolute(&as_path) {
                    if let Ok(url) = Url::from_file_path(&abs) {
                        *feed = url.to_string();
                    }
                }
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !self.reference.snapshot.exists() {
            return Err(invalid(
                "reference.snapshot",
                format!("file not found: {}", self.reference.snapshot.display()),
            ));
        }
        for (field, path) in [
            ("reference.overrides", &self.reference.overrides),
            ("reference.junk_words", &self.reference.junk_words),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(invalid(field, format!("file not found: {}", path.display())));
                }
            }
        }
        if self.ingest.feeds.is_empty() {
            return Err(invalid("ingest.feeds", "at least one feed is required"));
        }
        for feed in &self.ingest.feeds {
            let url = Url::parse(feed)
                .map_err(|e| invalid("ingest.feeds", format!("{feed:?}: {e}")))?;
            if !matches!(url.scheme(), "http" | "https" | "file") {
                return Err(invalid(
                    "ingest.feeds",
                    format!("{feed:?}: unsupported scheme {}", url.scheme()),
                ));
            }
        }
        match (self.provider.mock, &self.provider.endpoint) {
            (true, Some(_)) => {
                return Err(invalid(
                    "provider",
                    "mock = true and endpoint are mutually exclusive",
                ));
            }
            (false, None) => {
                return Err(invalid(
                    "provider",
                    "set either mock = true or an endpoint",
                ));
            }
            (false, Some(endpoint)) => {
                Url::parse(endpoint)
                    .map_err(|e| invalid("provider.endpoint", e.to_string()))?;
                if self.provider.model.as_deref().unwrap_or("").is_empty() {
                    return Err(invalid(
                        "provider.model",
                        "required when an endpoint is set",
                    ));
                }
            }
            (true, None) => {}
        }
        self.serve
            .bind
            .parse::<SocketAddr>()
            .map_err(|e| invalid("serve.bind", e.to_string()))?;
        if self.extract.body_char_cap == 0 {
            return Err(invalid("extract.body_char_cap", "must be positive"));
        }
        Ok(())
    }

    /// Feed sources as URLs; config loading guarantees they parse.
    pub fn feed_urls(&self) -> Vec<Url> {
        self.ingest
            .feeds
            .iter()
            .map(|f| Url::parse(f).expect("validated at load"))
            .collect()
    }
}

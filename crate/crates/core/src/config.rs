//! Hub and client configuration: a TOML or JSON file plus `GENERICHUB_*`
//! environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{HubError, Result};
use crate::kernel::{DEFAULT_IDLE_EXPIRY, DEFAULT_MAX_SUBSCRIPTIONS, DEFAULT_QUEUE_CAPACITY};
use crate::model::DescriptorDraft;

pub const CONFIG_ENV: &str = "GENERICHUB_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Fs,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case", deny_unknown_fields)]
pub struct HubConfig {
    pub listen: String,
    pub auth_token: String,
    /// Base for every path below that is left unset.
    pub data_dir: PathBuf,
    pub outbox_dir: Option<PathBuf>,
    pub blob_root: Option<PathBuf>,
    pub stream_root: Option<PathBuf>,
    pub rules_file: Option<PathBuf>,
    pub registry_file: Option<PathBuf>,
    /// Directory of static assets served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
    /// Effect adapters: mail outbox, blob store, data streams.
    pub backend: BackendKind,
    /// Keep rules and the device registry on disk across restarts.
    pub persist: bool,
    pub queue_capacity: usize,
    pub max_subscriptions: usize,
    pub idle_expiry_secs: u64,
    pub sim_seed: u64,
    pub devices: Vec<DescriptorDraft>,
    pub client: ClientConfig,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8787".into(),
            auth_token: String::new(),
            data_dir: PathBuf::from("hub-data"),
            outbox_dir: None,
            blob_root: None,
            stream_root: None,
            rules_file: None,
            registry_file: None,
            ui_dir: None,
            backend: BackendKind::Fs,
            persist: true,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            max_subscriptions: DEFAULT_MAX_SUBSCRIPTIONS,
            idle_expiry_secs: DEFAULT_IDLE_EXPIRY.as_secs(),
            sim_seed: 0,
            devices: Vec::new(),
            client: ClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case", deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    pub auth_token: String,
    pub default_timeout_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8787".into(),
            auth_token: String::new(),
            default_timeout_ms: 25_000,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let url = self.base_url.trim_end_matches('/');
        let rest = url
            .strip_prefix("http://")
            .or_else(|| url.strip_prefix("https://"))
            .ok_or_else(|| {
                HubError::ConfigInvalid(format!("base url `{}` must be http(s)", self.base_url))
            })?;
        if rest.is_empty() || rest.contains(char::is_whitespace) {
            return Err(HubError::ConfigInvalid(format!(
                "base url `{}` has no host",
                self.base_url
            )));
        }
        if self.auth_token.is_empty() {
            return Err(HubError::ConfigInvalid("client auth token is empty".into()));
        }
        Ok(())
    }
}

impl HubConfig {
    /// Reads a `.json` or TOML file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HubError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| HubError::ConfigInvalid(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| HubError::ConfigInvalid(format!("{}: {e}", path.display())))
        }
    }

    /// Explicit path, else `$GENERICHUB_CONFIG`, else defaults; then env overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        let parse_num = |key: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| HubError::ConfigInvalid(format!("{key}: `{v}` is not a number")))
        };
        if let Some(v) = get("GENERICHUB_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("GENERICHUB_TOKEN") {
            self.client.auth_token = v.clone();
            self.auth_token = v;
        }
        if let Some(v) = get("GENERICHUB_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("GENERICHUB_OUTBOX") {
            self.outbox_dir = Some(v.into());
        }
        if let Some(v) = get("GENERICHUB_BLOB_ROOT") {
            self.blob_root = Some(v.into());
        }
        if let Some(v) = get("GENERICHUB_STREAM_ROOT") {
            self.stream_root = Some(v.into());
        }
        if let Some(v) = get("GENERICHUB_QUEUE_CAPACITY") {
            self.queue_capacity = parse_num("GENERICHUB_QUEUE_CAPACITY", v)?;
        }
        if let Some(v) = get("GENERICHUB_URL") {
            self.client.base_url = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.auth_token.is_empty() {
            return Err(HubError::ConfigInvalid("auth_token must be set".into()));
        }
        if self.queue_capacity == 0 {
            return Err(HubError::ConfigInvalid(
                "queue_capacity must be positive".into(),
            ));
        }
        if self.max_subscriptions == 0 {
            return Err(HubError::ConfigInvalid(
                "max_subscriptions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn outbox_dir(&self) -> PathBuf {
        self.outbox_dir
            .clone()
            .unwrap_or_else(|| self.data_dir.join("outbox"))
    }

    pub fn blob_root(&self) -> PathBuf {
        self.blob_root
            .clone()
            .unwrap_or_else(|| self.data_dir.join("blobs"))
    }

    pub fn stream_root(&self) -> PathBuf {
        self.stream_root
            .clone()
            .unwrap_or_else(|| self.data_dir.join("streams"))
    }

    pub fn rules_file(&self) -> PathBuf {
        self.rules_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("rules.json"))
    }

    pub fn registry_file(&self) -> PathBuf {
        self.registry_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("registry.json"))
    }

    pub fn idle_expiry(&self) -> Duration {
        Duration::from_secs(self.idle_expiry_secs)
    }

    /// A config with every path under `dir`, handy for tests and demos.
    pub fn in_dir(dir: impl Into<PathBuf>, token: &str) -> Self {
        Self {
            data_dir: dir.into(),
            auth_token: token.into(),
            client: ClientConfig {
                auth_token: token.into(),
                ..ClientConfig::default()
            },
            ..Self::default()
        }
    }
}

//! Operator configuration file (TOML) with environment overrides.
//!
//! ```toml
//! operator_id = "operator-a"
//! listen = "127.0.0.1:7000"
//! key_path = "operator-a.keys.json"
//! persistence_path = "operator-a.store.json"
//! introspection_ttl_secs = 30
//! token_ttl_secs = 3600
//! jurisdiction = "EU"
//! # browser origins allowed to call the API (none by default)
//! allowed_origins = ["http://localhost:5173"]
//!
//! [[trusted_peers]]
//! operator_id = "operator-b"
//! verification_key = "<base64url ed25519 key>"
//! ```
//!
//! Overrides: `PRIAAS_OPERATOR_ID`, `PRIAAS_LISTEN`, `PRIAAS_KEY_PATH`,
//! `PRIAAS_PERSISTENCE_PATH`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::consent::{VerificationKey, DEFAULT_TOKEN_TTL_SECS};
use crate::error::{Error, Result};
use crate::ids::OperatorId;

pub const DEFAULT_INTROSPECTION_TTL_SECS: u64 = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustedPeer {
    pub operator_id: OperatorId,
    pub verification_key: VerificationKey,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub operator_id: OperatorId,
    #[serde(default = "default_listen")]
    pub listen: String,
    pub key_path: PathBuf,
    /// In-memory store when absent.
    #[serde(default)]
    pub persistence_path: Option<PathBuf>,
    #[serde(default = "default_introspection_ttl")]
    pub introspection_ttl_secs: u64,
    #[serde(default = "default_token_ttl")]
    pub token_ttl_secs: i64,
    #[serde(default = "default_jurisdiction")]
    pub jurisdiction: String,
    #[serde(default)]
    pub allowed_origins: Vec<String>,
    #[serde(default)]
    pub trusted_peers: Vec<TrustedPeer>,
}

fn default_listen() -> String {
    "127.0.0.1:7000".into()
}

fn default_introspection_ttl() -> u64 {
    DEFAULT_INTROSPECTION_TTL_SECS
}

fn default_token_ttl() -> i64 {
    DEFAULT_TOKEN_TTL_SECS
}

fn default_jurisdiction() -> String {
    "EU".into()
}

impl OperatorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("operator config: {e}")))
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var("PRIAAS_OPERATOR_ID") {
            self.operator_id = OperatorId(v);
        }
        if let Some(v) = var("PRIAAS_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("PRIAAS_KEY_PATH") {
            self.key_path = v.into();
        }
        if let Some(v) = var("PRIAAS_PERSISTENCE_PATH") {
            self.persistence_path = Some(v.into());
        }
    }

    pub fn settings(&self) -> OperatorSettings {
        OperatorSettings {
            operator_id: self.operator_id.clone(),
            token_ttl: Duration::seconds(self.token_ttl_secs),
            introspection_ttl_secs: self.introspection_ttl_secs,
            jurisdiction: self.jurisdiction.clone(),
            trusted_peers: self
                .trusted_peers
                .iter()
                .map(|p| (p.operator_id.clone(), p.verification_key))
                .collect(),
        }
    }
}

/// The part of the configuration the broker logic needs at runtime.
#[derive(Debug, Clone)]
pub struct OperatorSettings {
    pub operator_id: OperatorId,
    pub token_ttl: Duration,
    pub introspection_ttl_secs: u64,
    pub jurisdiction: String,
    pub trusted_peers: BTreeMap<OperatorId, VerificationKey>,
}

impl OperatorSettings {
    pub fn new(operator_id: impl Into<String>) -> Self {
        Self {
            operator_id: OperatorId(operator_id.into()),
            token_ttl: Duration::seconds(DEFAULT_TOKEN_TTL_SECS),
            introspection_ttl_secs: DEFAULT_INTROSPECTION_TTL_SECS,
            jurisdiction: default_jurisdiction(),
            trusted_peers: BTreeMap::new(),
        }
    }
}

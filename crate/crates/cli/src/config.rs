//! Client-side settings and the credentials file.
//!
//! ```toml
//! operator = "http://127.0.0.1:7000"
//! credentials = "/home/me/.config/priaas/credentials.json"
//! output = "json"
//! ```

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use priaas::ids::AccountId;
use priaas::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_OPERATOR: &str = "http://127.0.0.1:7000";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    #[default]
    Human,
    Json,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    operator: Option<String>,
    credentials: Option<PathBuf>,
    output: Option<Output>,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub operator: String,
    /// Whether the operator came from a flag, the environment or the file
    /// rather than the default.
    pub operator_set: bool,
    pub credentials: PathBuf,
    pub output: Output,
}

impl CliConfig {
    /// Flags win over the environment, which wins over the file.
    pub fn resolve(
        operator: Option<String>,
        config: Option<&Path>,
        json: bool,
        credentials: Option<PathBuf>,
    ) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let operator = operator
            .or_else(|| std::env::var("PRIAAS_OPERATOR").ok())
            .or(file.operator);
        let operator_set = operator.is_some();
        let operator = operator.unwrap_or_else(|| DEFAULT_OPERATOR.into());
        let credentials = credentials
            .or_else(|| std::env::var_os("PRIAAS_CREDENTIALS").map(PathBuf::from))
            .or(file.credentials)
            .unwrap_or_else(default_credentials_path);
        let output = if json {
            Output::Json
        } else {
            file.output.unwrap_or_default()
        };
        Ok(Self {
            operator: check_url(&operator)?,
            operator_set,
            credentials,
            output,
        })
    }

    pub fn json(&self) -> bool {
        self.output == Output::Json
    }
}

fn default_credentials_path() -> PathBuf {
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".config/priaas/credentials.json"),
        None => PathBuf::from("priaas-credentials.json"),
    }
}

/// Normalizes an http(s) base URL without a trailing slash.
pub fn check_url(text: &str) -> Result<String> {
    let url = url::Url::parse(text)
        .map_err(|e| Error::InvalidArgument(format!("bad URL {text:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
        return Err(Error::InvalidArgument(format!(
            "not an http(s) URL: {text:?}"
        )));
    }
    Ok(url.as_str().trim_end_matches('/').to_string())
}

#[derive(Clone, Serialize, Deserialize)]
pub struct Credentials {
    pub operator: String,
    pub account_id: AccountId,
    pub credential: String,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Credentials")
            .field("operator", &self.operator)
            .field("account_id", &self.account_id)
            .finish_non_exhaustive()
    }
}

impl Credentials {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!(
                "no credentials at {} ({e}); run `priaas account create` first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Owner-only permissions on unix.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::Storage(format!("{}: {e}", dir.display())))?;
        }
        let text = serde_json::to_string_pretty(self).expect("credentials serialize");
        write_private(path, text.as_bytes())
    }
}

pub fn write_private(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options
        .open(path)
        .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
    file.write_all(bytes)
        .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))
}

/// PRIAAS_CREDENTIAL, or the first line of stdin.
pub fn read_credential() -> Result<String> {
    if let Ok(value) = std::env::var("PRIAAS_CREDENTIAL") {
        return Ok(value);
    }
    let mut line = String::new();
    std::io::stdin()
        .lock()
        .read_line(&mut line)
        .map_err(|e| Error::InvalidArgument(format!("reading credential from stdin: {e}")))?;
    let line = line.trim_end_matches(['\r', '\n']).to_string();
    if line.is_empty() {
        return Err(Error::InvalidArgument(
            "no credential: set PRIAAS_CREDENTIAL or pipe it on stdin".into(),
        ));
    }
    Ok(line)
}

pub fn admin_token() -> Option<String> {
    std::env::var("PRIAAS_ADMIN_TOKEN")
        .ok()
        .filter(|t| !t.is_empty())
}

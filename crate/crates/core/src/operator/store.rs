//! Operator persistence behind a narrow transactional interface.
//!
//! Every write runs against a private copy of the tables and is swapped in
//! only when the closure succeeds (and, for [`FileStore`], once the new state
//! is durably on disk). There is intentionally no column that could hold an
//! observation payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::consent::{ConsentReceipt, ConsentRecord, ServiceDescriptor, ServiceLink};
use crate::error::{Error, Result};
use crate::ids::{AccountId, ConsentId, LinkId, ReceiptId, ServiceId};
use crate::operator::events::NotificationEvent;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account_id: AccountId,
    pub display_name: String,
    /// `sha256$<salt>$<hex digest>`; the plain credential is never stored.
    pub credential_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustStatus {
    Trusted,
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub descriptor: ServiceDescriptor,
    pub trust_status: TrustStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredReceipt {
    /// Local consent id; may differ from `receipt.consent_id` after an import.
    pub consent_id: ConsentId,
    pub receipt: ConsentReceipt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutboxItem {
    pub seq: u64,
    pub target: ServiceId,
    pub event: NotificationEvent,
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Tables {
    pub accounts: BTreeMap<AccountId, AccountRecord>,
    pub services: BTreeMap<ServiceId, RegistryEntry>,
    pub service_secrets: BTreeMap<ServiceId, String>,
    pub links: BTreeMap<LinkId, ServiceLink>,
    pub consents: BTreeMap<ConsentId, ConsentRecord>,
    pub receipts: BTreeMap<ReceiptId, StoredReceipt>,
    pub outbox: Vec<OutboxItem>,
    pub next_outbox_seq: u64,
}

impl Tables {
    pub fn enqueue(&mut self, target: ServiceId, event: NotificationEvent) {
        let seq = self.next_outbox_seq;
        self.next_outbox_seq += 1;
        self.outbox.push(OutboxItem {
            seq,
            target,
            event,
            attempts: 0,
        });
    }
}

pub trait Store: Send + Sync {
    fn read(&self, f: &mut dyn FnMut(&Tables));
    fn write(&self, f: &mut dyn FnMut(&mut Tables) -> Result<()>) -> Result<()>;
}

impl<'a> dyn Store + 'a {
    pub fn view<R>(&self, f: impl FnOnce(&Tables) -> R) -> R {
        let mut f = Some(f);
        let mut out = None;
        self.read(&mut |tables| out = f.take().map(|f| f(tables)));
        out.expect("read closure runs exactly once")
    }

    pub fn update<R>(&self, f: impl FnOnce(&mut Tables) -> Result<R>) -> Result<R> {
        let mut f = Some(f);
        let mut out = None;
        self.write(&mut |tables| {
            let f = f.take().expect("write closure runs once");
            out = Some(f(tables)?);
            Ok(())
        })?;
        Ok(out.expect("write closure produced a value"))
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: RwLock<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn read(&self, f: &mut dyn FnMut(&Tables)) {
        f(&self.tables.read().expect("store poisoned"));
    }

    fn write(&self, f: &mut dyn FnMut(&mut Tables) -> Result<()>) -> Result<()> {
        let mut guard = self.tables.write().expect("store poisoned");
        let mut draft = guard.clone();
        f(&mut draft)?;
        *guard = draft;
        Ok(())
    }
}

/// JSON snapshot on disk, replaced atomically on every committed write.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    tables: RwLock<Tables>,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let tables = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Tables::default(),
            Err(e) => return Err(Error::Storage(format!("{}: {e}", path.display()))),
        };
        Ok(Self {
            path,
            tables: RwLock::new(tables),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn persist(&self, tables: &Tables) -> Result<()> {
        let storage = |e: std::io::Error| Error::Storage(format!("{}: {e}", self.path.display()));
        let bytes = serde_json::to_vec_pretty(tables).map_err(|e| Error::Storage(e.to_string()))?;
        let dir = self
            .path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(storage)?;
        let tmp = self.path.with_extension("tmp");
        let mut file = fs::File::create(&tmp).map_err(storage)?;
        file.write_all(&bytes).map_err(storage)?;
        file.sync_all().map_err(storage)?;
        fs::rename(&tmp, &self.path).map_err(storage)
    }
}

impl Store for FileStore {
    fn read(&self, f: &mut dyn FnMut(&Tables)) {
        f(&self.tables.read().expect("store poisoned"));
    }

    fn write(&self, f: &mut dyn FnMut(&mut Tables) -> Result<()>) -> Result<()> {
        let mut guard = self.tables.write().expect("store poisoned");
        let mut draft = guard.clone();
        f(&mut draft)?;
        self.persist(&draft)?;
        *guard = draft;
        Ok(())
    }
}

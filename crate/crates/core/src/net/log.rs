//! Request log of protocol messages seen by one deployment.
//!
//! Uses the simulator's message kinds and phases so a live run can be laid
//! next to its transcript.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::flowsim::Phase;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub phase: Phase,
    pub from: String,
    pub to: String,
    pub kind: String,
}

#[derive(Debug)]
struct Inner {
    phase: Phase,
    messages: Vec<LoggedMessage>,
    aliases: BTreeMap<String, String>,
}

/// Cheap to clone; all clones share one log.
#[derive(Debug, Clone)]
pub struct RequestLog(Arc<Mutex<Inner>>);

impl Default for RequestLog {
    fn default() -> Self {
        Self(Arc::new(Mutex::new(Inner {
            phase: Phase::Registration,
            messages: Vec::new(),
            aliases: BTreeMap::new(),
        })))
    }
}

impl RequestLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_phase(&self, phase: Phase) {
        self.0.lock().unwrap().phase = phase;
    }

    /// Makes `key` (a service id or endpoint) appear as `label`.
    pub fn alias(&self, key: impl Into<String>, label: impl Into<String>) {
        self.0
            .lock()
            .unwrap()
            .aliases
            .insert(key.into(), label.into());
    }

    pub fn label(&self, key: &str) -> String {
        let inner = self.0.lock().unwrap();
        inner
            .aliases
            .get(key)
            .cloned()
            .unwrap_or_else(|| key.to_string())
    }

    pub fn record(&self, from: &str, to: &str, kind: &str) {
        let mut inner = self.0.lock().unwrap();
        let resolve = |k: &str| {
            inner
                .aliases
                .get(k)
                .cloned()
                .unwrap_or_else(|| k.to_string())
        };
        let message = LoggedMessage {
            phase: inner.phase,
            from: resolve(from),
            to: resolve(to),
            kind: kind.to_string(),
        };
        inner.messages.push(message);
    }

    pub fn messages(&self) -> Vec<LoggedMessage> {
        self.0.lock().unwrap().messages.clone()
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().messages.clear();
    }
}

//! Opaque identifiers and the sources that mint them.

use std::fmt;
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($($(#[$meta:meta])* $name:ident),* $(,)?) => {$(
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }
    )*};
}

string_id!(
    AccountId,
    ServiceId,
    LinkId,
    ConsentId,
    ReceiptId,
    EventId,
    OperatorId,
    /// Per-(account, service) surrogate identifier.
    Pseudonym,
);

/// Mints fresh identifiers. Operators take one of these so simulations can be
/// replayed with identical ids.
pub trait IdSource: Send + Sync {
    fn next_id(&self, prefix: &str) -> String;
}

#[derive(Debug, Default)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
    }
}

/// Deterministic ids drawn from a seeded ChaCha stream.
#[derive(Debug)]
pub struct SeededIds {
    rng: Mutex<ChaCha20Rng>,
}

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }
}

impl IdSource for SeededIds {
    fn next_id(&self, prefix: &str) -> String {
        let mut bytes = [0u8; 8];
        self.rng
            .lock()
            .expect("id rng poisoned")
            .fill_bytes(&mut bytes);
        format!("{prefix}-{}", hex::encode(bytes))
    }
}

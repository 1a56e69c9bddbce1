//! Consent brokering between personal-data sources and sinks.
//!
//! * [`consent`] is the pure domain: consent records, pseudonyms, signed
//!   tokens and receipts.
//! * [`operator`] is the broker that owns accounts, the service registry and
//!   consent state but never personal data.
//! * [`datakit`] holds the reference source, sink and aggregator proxy.
//! * [`reasoner`] evaluates the health rule table over observations.
//! * [`flowsim`] replays scripted flows over an in-memory bus and counts messages.
//! * [`net`] puts all of the above behind HTTP.

pub mod clock;
pub mod consent;
pub mod datakit;
pub mod error;
pub mod fixtures;
pub mod flowsim;
pub mod ids;
pub mod net;
pub mod operator;
pub mod reasoner;

pub use consent::{
    AuthorizationToken, ConsentAction, ConsentReceipt, ConsentRecord, ConsentStatus, KeyMaterial,
    ResourceSet, ServiceLink, TimeRange, TokenClaims, VerificationKey,
};
pub use datakit::{Measurement, Observation, ResourceType};
pub use error::{Error, Result};
pub use ids::{AccountId, ConsentId, LinkId, OperatorId, Pseudonym, ReceiptId, ServiceId};

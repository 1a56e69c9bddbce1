//! Reference source and sink services and the aggregator proxy.
//!
//! Everything here is transport-agnostic; [`crate::net`] exposes it over HTTP
//! and [`crate::flowsim`] drives it over an in-memory bus.

pub mod guard;
pub mod observation;
pub mod proxy;
pub mod sink;
pub mod source;

pub use guard::{
    AccessGuard, Authorization, CacheEntry, ConsentCache, Inbox, OperatorKeys, SourceNotice,
};
pub use observation::{Intensity, Measurement, Observation, ResourceType};
pub use proxy::{proxy_sync, IngestReport, VendorCounts, VendorFixture, VendorFormat};
pub use sink::{parse_data_page, DataSink, HeldToken, PurgeReport, SinkNotice};
pub use source::{DataPage, DataRequest, DataSource, NoticeAck, ObservationStore, PAGE_SIZE};

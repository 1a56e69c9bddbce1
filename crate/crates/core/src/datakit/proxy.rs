//! The aggregator proxy: normalizes records from vendor backends that do not
//! speak the consent protocol into observations under operator pseudonyms.
//!
//! Fixture file format:
//!
//! ```json
//! {"vendor": "activity-tracker", "format": "activity_tracker", "records": [ ... ]}
//! ```
//!
//! Record shapes per format:
//!
//! * `activity_tracker`: `{"user", "kind": "workout", "start", "minutes", "effort": "low"|"mid"|"high"}`,
//!   `{"user", "kind": "body", "at", "weight_kg", "height_cm"}`,
//!   `{"user", "kind": "glucose", "at", "mg_dl"}`,
//!   `{"user", "kind": "profile", "at", "age", "family_history_diabetes"}`
//! * `sleep_tracker`: `{"user", "kind": "night", "ended_at", "efficiency"}` with efficiency in 0..1,
//!   `{"user", "kind": "bp", "at", "sys", "dia"}`
//! * `grocery_loyalty`: `{"member", "purchased_at", "category", "qty"}`

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::observation::{
    height_from_centimetres, weight_from_kilograms, Intensity, Measurement, Observation,
    CENTIMETRES_PER_INCH, POUNDS_PER_KILOGRAM,
};
use super::source::ObservationStore;
use crate::ids::Pseudonym;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VendorFormat {
    ActivityTracker,
    SleepTracker,
    GroceryLoyalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VendorFixture {
    pub vendor: String,
    pub format: VendorFormat,
    #[serde(default)]
    pub records: Vec<Value>,
}

/// One normalized reading before it is bound to a pseudonym.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapped {
    pub user: String,
    pub timestamp: DateTime<Utc>,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorCounts {
    pub records: usize,
    pub ingested: usize,
    /// Records that failed mapping or the observation invariants.
    pub skipped: usize,
    /// Records for a vendor user with no pseudonym.
    pub unknown_user: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub vendors: BTreeMap<String, VendorCounts>,
}

impl IngestReport {
    pub fn total_ingested(&self) -> usize {
        self.vendors.values().map(|c| c.ingested).sum()
    }

    pub fn total_skipped(&self) -> usize {
        self.vendors.values().map(|c| c.skipped).sum()
    }
}

fn text<'a>(record: &'a Value, key: &str) -> Option<&'a str> {
    record.get(key)?.as_str()
}

fn number(record: &Value, key: &str) -> Option<f64> {
    record.get(key)?.as_f64()
}

fn time(record: &Value, key: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text(record, key)?)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn effort(level: &str) -> Option<Intensity> {
    match level {
        "low" => Some(Intensity::Light),
        "mid" => Some(Intensity::Moderate),
        "high" => Some(Intensity::Intense),
        _ => None,
    }
}

fn effort_name(intensity: Intensity) -> &'static str {
    match intensity {
        Intensity::Light => "low",
        Intensity::Moderate => "mid",
        Intensity::Intense => "high",
    }
}

/// Maps one vendor record. `None` means the record is unmappable.
pub fn map_record(format: VendorFormat, record: &Value) -> Option<Vec<Mapped>> {
    let one = |user: &str, timestamp, measurement| {
        Some(vec![Mapped {
            user: user.to_string(),
            timestamp,
            measurement,
        }])
    };
    match format {
        VendorFormat::ActivityTracker => {
            let user = text(record, "user")?;
            match text(record, "kind")? {
                "workout" => one(
                    user,
                    time(record, "start")?,
                    Measurement::Exercise {
                        duration_min: number(record, "minutes")?,
                        intensity: effort(text(record, "effort")?)?,
                    },
                ),
                "body" => {
                    let at = time(record, "at")?;
                    let mut out = Vec::new();
                    if let Some(kg) = number(record, "weight_kg") {
                        out.push(Mapped {
                            user: user.into(),
                            timestamp: at,
                            measurement: weight_from_kilograms(kg),
                        });
                    }
                    if let Some(cm) = number(record, "height_cm") {
                        out.push(Mapped {
                            user: user.into(),
                            timestamp: at,
                            measurement: height_from_centimetres(cm),
                        });
                    }
                    (!out.is_empty()).then_some(out)
                }
                "glucose" => one(
                    user,
                    time(record, "at")?,
                    Measurement::BloodGlucose {
                        mg_per_dl: number(record, "mg_dl")?,
                    },
                ),
                "profile" => {
                    let age = record.get("age")?.as_u64()?;
                    one(
                        user,
                        time(record, "at")?,
                        Measurement::Profile {
                            age_years: u32::try_from(age).ok()?,
                            family_diabetes: record.get("family_history_diabetes")?.as_bool()?,
                        },
                    )
                }
                _ => None,
            }
        }
        VendorFormat::SleepTracker => {
            let user = text(record, "user")?;
            match text(record, "kind")? {
                "night" => one(
                    user,
                    time(record, "ended_at")?,
                    Measurement::Sleep {
                        efficiency_percent: number(record, "efficiency")? * 100.0,
                    },
                ),
                "bp" => one(
                    user,
                    time(record, "at")?,
                    Measurement::BloodPressure {
                        systolic_mmhg: number(record, "sys")?,
                        diastolic_mmhg: number(record, "dia")?,
                    },
                ),
                _ => None,
            }
        }
        VendorFormat::GroceryLoyalty => {
            let qty = record.get("qty")?.as_u64()?;
            one(
                text(record, "member")?,
                time(record, "purchased_at")?,
                Measurement::Purchase {
                    category: text(record, "category")?.to_string(),
                    item_count: u32::try_from(qty).ok()?,
                },
            )
        }
    }
}

/// Inverse of [`map_record`] for the mapped subset of fields. Records that
/// map to several observations come back as one vendor record per observation.
pub fn denormalize(format: VendorFormat, mapped: &Mapped) -> Option<Value> {
    let at = mapped
        .timestamp
        .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true);
    let user = &mapped.user;
    Some(match (format, &mapped.measurement) {
        (
            VendorFormat::ActivityTracker,
            Measurement::Exercise {
                duration_min,
                intensity,
            },
        ) => json!({
            "user": user, "kind": "workout", "start": at,
            "minutes": duration_min, "effort": effort_name(*intensity),
        }),
        (VendorFormat::ActivityTracker, Measurement::Weight { pounds }) => json!({
            "user": user, "kind": "body", "at": at, "weight_kg": pounds / POUNDS_PER_KILOGRAM,
        }),
        (VendorFormat::ActivityTracker, Measurement::Height { inches }) => json!({
            "user": user, "kind": "body", "at": at, "height_cm": inches * CENTIMETRES_PER_INCH,
        }),
        (VendorFormat::ActivityTracker, Measurement::BloodGlucose { mg_per_dl }) => json!({
            "user": user, "kind": "glucose", "at": at, "mg_dl": mg_per_dl,
        }),
        (
            VendorFormat::ActivityTracker,
            Measurement::Profile {
                age_years,
                family_diabetes,
            },
        ) => json!({
            "user": user, "kind": "profile", "at": at,
            "age": age_years, "family_history_diabetes": family_diabetes,
        }),
        (VendorFormat::SleepTracker, Measurement::Sleep { efficiency_percent }) => json!({
            "user": user, "kind": "night", "ended_at": at, "efficiency": efficiency_percent / 100.0,
        }),
        (
            VendorFormat::SleepTracker,
            Measurement::BloodPressure {
                systolic_mmhg,
                diastolic_mmhg,
            },
        ) => json!({
            "user": user, "kind": "bp", "at": at, "sys": systolic_mmhg, "dia": diastolic_mmhg,
        }),
        (
            VendorFormat::GroceryLoyalty,
            Measurement::Purchase {
                category,
                item_count,
            },
        ) => json!({
            "member": user, "purchased_at": at, "category": category, "qty": item_count,
        }),
        _ => return None,
    })
}

/// Stable id derived from the vendor, the record's position and its content,
/// so re-running a sync does not duplicate observations.
fn observation_id(vendor: &str, index: usize, part: usize, record: &Value) -> String {
    let mut h = Sha256::new();
    h.update(vendor.as_bytes());
    h.update([0]);
    h.update(index.to_le_bytes());
    h.update(part.to_le_bytes());
    h.update(record.to_string().as_bytes());
    format!("obs-{}", &hex::encode(h.finalize())[..20])
}

/// Normalizes every fixture, binds vendor users to pseudonyms and stores the
/// result. Bad records are counted and skipped.
pub fn proxy_sync(
    store: &ObservationStore,
    fixtures: &[VendorFixture],
    pseudonyms: &BTreeMap<String, Pseudonym>,
) -> IngestReport {
    let mut report = IngestReport::default();
    for fixture in fixtures {
        let counts = report.vendors.entry(fixture.vendor.clone()).or_default();
        let mut batch = Vec::new();
        for (index, record) in fixture.records.iter().enumerate() {
            counts.records += 1;
            let Some(mapped) = map_record(fixture.format, record) else {
                counts.skipped += 1;
                continue;
            };
            let Some(pseudonym) = pseudonyms.get(&mapped[0].user) else {
                counts.unknown_user += 1;
                continue;
            };
            let observations: Vec<Observation> = mapped
                .into_iter()
                .enumerate()
                .map(|(part, m)| Observation {
                    id: observation_id(&fixture.vendor, index, part, record),
                    pseudonym: pseudonym.clone(),
                    timestamp: m.timestamp,
                    measurement: m.measurement,
                })
                .collect();
            if observations.iter().any(|o| o.validate().is_err()) {
                counts.skipped += 1;
                continue;
            }
            counts.ingested += observations.len();
            batch.extend(observations);
        }
        store.upsert(batch);
    }
    report
}

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::Pseudonym;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceType {
    Exercise,
    Sleep,
    BloodPressure,
    Weight,
    Height,
    Purchase,
    BloodGlucose,
    Profile,
}

impl ResourceType {
    pub const ALL: [ResourceType; 8] = [
        ResourceType::Exercise,
        ResourceType::Sleep,
        ResourceType::BloodPressure,
        ResourceType::Weight,
        ResourceType::Height,
        ResourceType::Purchase,
        ResourceType::BloodGlucose,
        ResourceType::Profile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceType::Exercise => "exercise",
            ResourceType::Sleep => "sleep",
            ResourceType::BloodPressure => "blood_pressure",
            ResourceType::Weight => "weight",
            ResourceType::Height => "height",
            ResourceType::Purchase => "purchase",
            ResourceType::BloodGlucose => "blood_glucose",
            ResourceType::Profile => "profile",
        }
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResourceType::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown resource type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Light,
    Moderate,
    Intense,
}

/// Typed payload; serialized as `"resource_type": ..., "payload": {...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "resource_type",
    content = "payload",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Measurement {
    Exercise {
        duration_min: f64,
        intensity: Intensity,
    },
    Sleep {
        efficiency_percent: f64,
    },
    BloodPressure {
        #[serde(rename = "systolic_mmHg")]
        systolic_mmhg: f64,
        #[serde(rename = "diastolic_mmHg")]
        diastolic_mmhg: f64,
    },
    Weight {
        pounds: f64,
    },
    Height {
        inches: f64,
    },
    Purchase {
        category: String,
        item_count: u32,
    },
    BloodGlucose {
        mg_per_dl: f64,
    },
    Profile {
        age_years: u32,
        family_diabetes: bool,
    },
}

impl Measurement {
    pub fn resource_type(&self) -> ResourceType {
        match self {
            Measurement::Exercise { .. } => ResourceType::Exercise,
            Measurement::Sleep { .. } => ResourceType::Sleep,
            Measurement::BloodPressure { .. } => ResourceType::BloodPressure,
            Measurement::Weight { .. } => ResourceType::Weight,
            Measurement::Height { .. } => ResourceType::Height,
            Measurement::Purchase { .. } => ResourceType::Purchase,
            Measurement::BloodGlucose { .. } => ResourceType::BloodGlucose,
            Measurement::Profile { .. } => ResourceType::Profile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{name} must be a non-negative number, got {v}"
                )))
            }
        };
        match self {
            Measurement::Exercise { duration_min, .. } => check("duration_min", *duration_min),
            Measurement::Sleep { efficiency_percent } => {
                check("efficiency_percent", *efficiency_percent)?;
                if *efficiency_percent > 100.0 {
                    return Err(Error::Validation("efficiency_percent exceeds 100".into()));
                }
                Ok(())
            }
            Measurement::BloodPressure {
                systolic_mmhg,
                diastolic_mmhg,
            } => {
                check("systolic_mmHg", *systolic_mmhg)?;
                check("diastolic_mmHg", *diastolic_mmhg)
            }
            Measurement::Weight { pounds } => check("pounds", *pounds),
            Measurement::Height { inches } => check("inches", *inches),
            Measurement::Purchase { category, .. } => {
                if category.trim().is_empty() {
                    Err(Error::Validation("purchase category is empty".into()))
                } else {
                    Ok(())
                }
            }
            Measurement::BloodGlucose { mg_per_dl } => check("mg_per_dl", *mg_per_dl),
            Measurement::Profile { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub pseudonym: Pseudonym,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub measurement: Measurement,
}

impl Observation {
    pub fn resource_type(&self) -> ResourceType {
        self.measurement.resource_type()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Validation("observation id is empty".into()));
        }
        if self.pseudonym.as_str().is_empty() {
            return Err(Error::Validation("observation pseudonym is empty".into()));
        }
        self.measurement.validate()
    }
}

pub const POUNDS_PER_KILOGRAM: f64 = 2.204_622_621_848_776;
pub const CENTIMETRES_PER_INCH: f64 = 2.54;

/// Metric weight in kilograms to the imperial payload used by the BMI rule.
pub fn weight_from_kilograms(kg: f64) -> Measurement {
    Measurement::Weight {
        pounds: kg * POUNDS_PER_KILOGRAM,
    }
}

pub fn height_from_centimetres(cm: f64) -> Measurement {
    Measurement::Height {
        inches: cm / CENTIMETRES_PER_INCH,
    }
}

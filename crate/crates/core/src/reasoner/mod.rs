//! Health inference over pseudonymized observations.
//!
//! [`evaluate`] is a pure function of a [`Timeline`], a [`RuleWindow`] and a
//! [`HealthProfile`]. The rules live in one table in [`rules`]; their
//! thresholds live in [`constants`].

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::datakit::{Intensity, Measurement, Observation, ResourceType};
use crate::error::{Error, Result};
use crate::ids::Pseudonym;

pub mod constants;
pub mod rules;
pub mod service;

pub use rules::{evaluate, rules_document, Evaluation, RULES};
pub use service::ReasonerService;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl RuleWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidArgument(
                "window end must be after start".into(),
            ));
        }
        Ok(Self { start, end })
    }

    pub fn measurement_duration_min(&self) -> f64 {
        (self.end - self.start).num_milliseconds() as f64 / 60_000.0
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        at >= self.start && at < self.end
    }
}

/// Observations for one pseudonym, per resource type, sorted by timestamp.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub pseudonym: Option<Pseudonym>,
    pub series: BTreeMap<ResourceType, Vec<Observation>>,
}

impl Timeline {
    /// Builds a timeline. Later entries win when two share a resource type
    /// and timestamp.
    pub fn ingest(observations: impl IntoIterator<Item = Observation>) -> Result<Self> {
        let mut pseudonym: Option<Pseudonym> = None;
        let mut keyed: BTreeMap<(ResourceType, DateTime<Utc>), Observation> = BTreeMap::new();
        for o in observations {
            o.validate()?;
            match &pseudonym {
                None => pseudonym = Some(o.pseudonym.clone()),
                Some(p) if p != &o.pseudonym => {
                    return Err(Error::InvalidArgument(
                        "observations belong to more than one pseudonym".into(),
                    ))
                }
                Some(_) => {}
            }
            keyed.insert((o.resource_type(), o.timestamp), o);
        }
        let mut series: BTreeMap<ResourceType, Vec<Observation>> = BTreeMap::new();
        for ((rt, _), o) in keyed {
            series.entry(rt).or_default().push(o);
        }
        Ok(Self { pseudonym, series })
    }

    /// A new timeline with `more` ingested after the current contents.
    pub fn merged(&self, more: impl IntoIterator<Item = Observation>) -> Result<Self> {
        Self::ingest(self.all().cloned().chain(more))
    }

    pub fn series(&self, rt: ResourceType) -> &[Observation] {
        self.series.get(&rt).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_window<'a>(
        &'a self,
        rt: ResourceType,
        window: &'a RuleWindow,
    ) -> impl Iterator<Item = &'a Observation> + 'a {
        self.series(rt)
            .iter()
            .filter(move |o| window.contains(o.timestamp))
    }

    pub fn all(&self) -> impl Iterator<Item = &Observation> {
        self.series.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Latest body and profile readings at the end of a window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HealthProfile {
    pub age_years: Option<u32>,
    pub family_diabetes: Option<bool>,
    pub weight_lb: Option<f64>,
    pub height_in: Option<f64>,
    /// Ids of the observations the fields above came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_source: Option<String>,
}

impl HealthProfile {
    /// Uses the most recent reading of each kind strictly before `window.end`.
    pub fn derive(timeline: &Timeline, window: &RuleWindow) -> Self {
        let latest = |rt| {
            timeline
                .series(rt)
                .iter()
                .filter(|o| o.timestamp < window.end)
                .last()
        };
        let mut profile = HealthProfile::default();
        if let Some(o) = latest(ResourceType::Profile) {
            if let Measurement::Profile {
                age_years,
                family_diabetes,
            } = o.measurement
            {
                profile.age_years = Some(age_years);
                profile.family_diabetes = Some(family_diabetes);
                profile.profile_source = Some(o.id.clone());
            }
        }
        if let Some(o) = latest(ResourceType::Weight) {
            if let Measurement::Weight { pounds } = o.measurement {
                profile.weight_lb = Some(pounds);
                profile.weight_source = Some(o.id.clone());
            }
        }
        if let Some(o) = latest(ResourceType::Height) {
            if let Measurement::Height { inches } = o.measurement {
                profile.height_in = Some(inches);
                profile.height_source = Some(o.id.clone());
            }
        }
        profile
    }
}

pub fn compute_bmi(weight_lb: f64, height_in: f64) -> Result<f64> {
    if !(height_in > 0.0) {
        return Err(Error::InvalidArgument("height must be positive".into()));
    }
    if !(weight_lb >= 0.0) || !weight_lb.is_finite() {
        return Err(Error::InvalidArgument(
            "weight must be a non-negative number".into(),
        ));
    }
    Ok(weight_lb / (height_in * height_in) * constants::BMI_FACTOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BpCategory {
    OptimalBP,
    NormalBP,
    HypertensionDeg1,
    HypertensionDeg2,
    HypertensionDeg3,
}

impl BpCategory {
    pub fn is_hypertensive(self) -> bool {
        matches!(
            self,
            BpCategory::HypertensionDeg1
                | BpCategory::HypertensionDeg2
                | BpCategory::HypertensionDeg3
        )
    }
}

/// Classifies one reading. Checked top-down, so a reading outside the
/// published bands lands in the highest band whose systolic or diastolic
/// bound it exceeds.
pub fn classify_bp(systolic: f64, diastolic: f64) -> Result<BpCategory> {
    use constants::*;
    if !(systolic > 0.0 && diastolic > 0.0) {
        return Err(Error::InvalidArgument(
            "blood pressure values must be positive".into(),
        ));
    }
    Ok(
        if systolic < OPTIMAL_SYS_BELOW && diastolic < OPTIMAL_DIA_BELOW {
            BpCategory::OptimalBP
        } else if systolic >= DEG3_SYS_FROM || diastolic >= DEG3_DIA_FROM {
            BpCategory::HypertensionDeg3
        } else if systolic >= DEG2_SYS_FROM || diastolic >= DEG2_DIA_FROM {
            BpCategory::HypertensionDeg2
        } else if systolic > DEG1_SYS_ABOVE || diastolic > DEG1_DIA_ABOVE {
            BpCategory::HypertensionDeg1
        } else {
            BpCategory::NormalBP
        },
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExerciseMetrics {
    pub sessions: usize,
    pub total_duration_min: f64,
    pub duration_ratio: f64,
    pub intense_count: usize,
    pub intense_ratio: f64,
    pub moderate_count: usize,
    pub moderate_ratio: f64,
}

pub fn exercise_metrics(timeline: &Timeline, window: &RuleWindow) -> ExerciseMetrics {
    let md = window.measurement_duration_min();
    let mut m = ExerciseMetrics::default();
    let mut intense_min = 0.0;
    let mut moderate_min = 0.0;
    for o in timeline.in_window(ResourceType::Exercise, window) {
        if let Measurement::Exercise {
            duration_min,
            intensity,
        } = o.measurement
        {
            m.sessions += 1;
            m.total_duration_min += duration_min;
            match intensity {
                Intensity::Intense => {
                    m.intense_count += 1;
                    intense_min += duration_min;
                }
                Intensity::Moderate => {
                    m.moderate_count += 1;
                    moderate_min += duration_min;
                }
                Intensity::Light => {}
            }
        }
    }
    m.duration_ratio = m.total_duration_min / md;
    m.intense_ratio = intense_min / md;
    m.moderate_ratio = moderate_min / md;
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactName {
    TotalExercise,
    LowExerciseAmount,
    HighExerciseAmount,
    EnoughIntenseExercise,
    EnoughModerateExercise,
    BMIIndex,
    Underweight,
    Normalweight,
    Overweight,
    Obesity,
    EfficientSleep,
    InefficientSleep,
    OptimalBP,
    NormalBP,
    HypertensionDeg1,
    HypertensionDeg2,
    HypertensionDeg3,
    DiagnosedHypertension,
    HighBloodGlucose,
    UnhealthyDiet,
    VeryHighType2DiabetesRisk,
    OptimalHealth,
    Stressed,
}

impl From<BpCategory> for FactName {
    fn from(c: BpCategory) -> Self {
        match c {
            BpCategory::OptimalBP => FactName::OptimalBP,
            BpCategory::NormalBP => FactName::NormalBP,
            BpCategory::HypertensionDeg1 => FactName::HypertensionDeg1,
            BpCategory::HypertensionDeg2 => FactName::HypertensionDeg2,
            BpCategory::HypertensionDeg3 => FactName::HypertensionDeg3,
        }
    }
}

impl fmt::Display for FactName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecommendationName {
    Relax,
    ReduceTraining,
    HealthyDiet,
    MoreTraining,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub facts: Vec<FactName>,
}

impl Provenance {
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty() && self.facts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub name: FactName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub window: RuleWindow,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub name: RecommendationName,
    pub rationale: Vec<FactName>,
    pub window: RuleWindow,
}

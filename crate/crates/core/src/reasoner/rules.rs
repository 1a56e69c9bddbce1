//! The rule table. Each row names the fact it emits, the facts it reads and
//! its clause in normalized form; rows are listed in dependency order and
//! [`evaluate`] runs them top to bottom.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::constants::*;
use super::{
    classify_bp, compute_bmi, exercise_metrics, BpCategory, ExerciseMetrics, Fact, FactName,
    HealthProfile, Provenance, Recommendation, RecommendationName, RuleWindow, Timeline,
};
use crate::datakit::{Intensity, Measurement, Observation, ResourceType};
use crate::error::Result;

use FactName::*;

struct Context<'a> {
    timeline: &'a Timeline,
    window: &'a RuleWindow,
    profile: &'a HealthProfile,
    exercise: ExerciseMetrics,
    facts: BTreeMap<FactName, Fact>,
}

impl Context<'_> {
    fn has(&self, name: FactName) -> bool {
        self.facts.contains_key(&name)
    }

    fn value(&self, name: FactName) -> Option<f64> {
        self.facts.get(&name).and_then(|f| f.value)
    }

    fn in_window(&self, rt: ResourceType) -> Vec<&Observation> {
        self.timeline.in_window(rt, self.window).collect()
    }

    fn bp_readings(&self) -> Vec<(&Observation, f64, f64)> {
        self.in_window(ResourceType::BloodPressure)
            .into_iter()
            .filter_map(|o| match o.measurement {
                Measurement::BloodPressure {
                    systolic_mmhg,
                    diastolic_mmhg,
                } => Some((o, systolic_mmhg, diastolic_mmhg)),
                _ => None,
            })
            .collect()
    }

    fn sleep_mean(&self) -> Option<(f64, Vec<String>)> {
        let values: Vec<(f64, String)> = self
            .in_window(ResourceType::Sleep)
            .into_iter()
            .filter_map(|o| match o.measurement {
                Measurement::Sleep { efficiency_percent } => {
                    Some((efficiency_percent, o.id.clone()))
                }
                _ => None,
            })
            .collect();
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().map(|v| v.0).sum::<f64>() / values.len() as f64;
        Some((mean, values.into_iter().map(|v| v.1).collect()))
    }
}

/// What a rule produced when it fired.
struct Derived {
    value: Option<f64>,
    observations: Vec<String>,
    facts: Vec<FactName>,
}

impl Derived {
    fn from_observations(value: Option<f64>, observations: Vec<String>) -> Option<Self> {
        Some(Self {
            value,
            observations,
            facts: Vec::new(),
        })
    }

    fn from_facts(value: Option<f64>, facts: Vec<FactName>) -> Option<Self> {
        Some(Self {
            value,
            observations: Vec::new(),
            facts,
        })
    }
}

pub struct Rule {
    pub fact: FactName,
    pub depends_on: &'static [FactName],
    pub clause: &'static str,
    eval: fn(&Context) -> Option<Derived>,
}

fn ids<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Vec<String> {
    obs.into_iter().map(|o| o.id.clone()).collect()
}

fn exercise_ids(c: &Context, level: Option<Intensity>) -> Vec<String> {
    ids(c
        .in_window(ResourceType::Exercise)
        .into_iter()
        .filter(|o| match (level, &o.measurement) {
            (None, _) => true,
            (Some(l), Measurement::Exercise { intensity, .. }) => *intensity == l,
            _ => false,
        }))
}

fn bp_class_rule(c: &Context, class: BpCategory) -> Option<Derived> {
    let matching: Vec<String> = c
        .bp_readings()
        .into_iter()
        .filter(|(_, s, d)| classify_bp(*s, *d).ok() == Some(class))
        .map(|(o, _, _)| o.id.clone())
        .collect();
    (!matching.is_empty()).then(|| Derived {
        value: Some(matching.len() as f64),
        observations: matching,
        facts: Vec::new(),
    })
}

fn weight_class(c: &Context, fits: fn(f64) -> bool) -> Option<Derived> {
    let bmi = c.value(BMIIndex)?;
    if fits(bmi) {
        Derived::from_facts(Some(bmi), vec![BMIIndex])
    } else {
        None
    }
}

pub static RULES: &[Rule] = &[
    Rule {
        fact: TotalExercise,
        depends_on: &[],
        clause: "exercise sessions in [start, end) exist; value = sum(duration_min)",
        eval: |c| {
            (c.exercise.sessions > 0).then_some(())?;
            Derived::from_observations(Some(c.exercise.total_duration_min), exercise_ids(c, None))
        },
    },
    Rule {
        fact: LowExerciseAmount,
        depends_on: &[TotalExercise],
        clause: "TotalExercise and total_duration / measurement_duration < 0.04",
        eval: |c| {
            (c.has(TotalExercise) && c.exercise.duration_ratio < LOW_EXERCISE_RATIO_BELOW).then_some(())?;
            Derived::from_facts(Some(c.exercise.duration_ratio), vec![TotalExercise])
        },
    },
    Rule {
        fact: HighExerciseAmount,
        depends_on: &[TotalExercise],
        clause: "TotalExercise and total_duration / measurement_duration > 0.12",
        eval: |c| {
            (c.has(TotalExercise) && c.exercise.duration_ratio > HIGH_EXERCISE_RATIO_ABOVE).then_some(())?;
            Derived::from_facts(Some(c.exercise.duration_ratio), vec![TotalExercise])
        },
    },
    Rule {
        fact: EnoughIntenseExercise,
        depends_on: &[],
        clause: "count(intense) > 3 and sum(intense duration) / measurement_duration > 0.0074",
        eval: |c| {
            (c.exercise.intense_count > ENOUGH_SESSIONS_ABOVE
                && c.exercise.intense_ratio > ENOUGH_INTENSE_RATIO_ABOVE)
                .then_some(())?;
            Derived::from_observations(Some(c.exercise.intense_ratio), exercise_ids(c, Some(Intensity::Intense)))
        },
    },
    Rule {
        fact: EnoughModerateExercise,
        depends_on: &[],
        clause: "count(moderate) > 3 and sum(moderate duration) / measurement_duration > 0.0148",
        eval: |c| {
            (c.exercise.moderate_count > ENOUGH_SESSIONS_ABOVE
                && c.exercise.moderate_ratio > ENOUGH_MODERATE_RATIO_ABOVE)
                .then_some(())?;
            Derived::from_observations(Some(c.exercise.moderate_ratio), exercise_ids(c, Some(Intensity::Moderate)))
        },
    },
    Rule {
        fact: BMIIndex,
        depends_on: &[],
        clause: "latest weight and height before end; value = weight_lb / height_in^2 * 703",
        eval: |c| {
            let bmi = compute_bmi(c.profile.weight_lb?, c.profile.height_in?).ok()?;
            let sources = [&c.profile.weight_source, &c.profile.height_source]
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            Derived::from_observations(Some(bmi), sources)
        },
    },
    Rule {
        fact: Underweight,
        depends_on: &[BMIIndex],
        clause: "BMIIndex < 18.5",
        eval: |c| weight_class(c, |b| b < UNDERWEIGHT_BELOW),
    },
    Rule {
        fact: Normalweight,
        depends_on: &[BMIIndex],
        clause: "18.5 <= BMIIndex < 25",
        eval: |c| weight_class(c, |b| (UNDERWEIGHT_BELOW..NORMALWEIGHT_BELOW).contains(&b)),
    },
    Rule {
        fact: Overweight,
        depends_on: &[BMIIndex],
        clause: "25 <= BMIIndex <= 29.9",
        eval: |c| weight_class(c, |b| (NORMALWEIGHT_BELOW..=OBESITY_ABOVE).contains(&b)),
    },
    Rule {
        fact: Obesity,
        depends_on: &[BMIIndex],
        clause: "BMIIndex > 29.9",
        eval: |c| weight_class(c, |b| b > OBESITY_ABOVE),
    },
    Rule {
        fact: EfficientSleep,
        depends_on: &[],
        clause: "sleep data in window and mean(efficiency_percent) > 84",
        eval: |c| {
            let (mean, ids) = c.sleep_mean()?;
            (mean > EFFICIENT_SLEEP_ABOVE).then_some(())?;
            Derived::from_observations(Some(mean), ids)
        },
    },
    Rule {
        fact: InefficientSleep,
        depends_on: &[],
        clause: "sleep data in window and mean(efficiency_percent) <= 84",
        eval: |c| {
            let (mean, ids) = c.sleep_mean()?;
            (mean <= EFFICIENT_SLEEP_ABOVE).then_some(())?;
            Derived::from_observations(Some(mean), ids)
        },
    },
    Rule {
        fact: OptimalBP,
        depends_on: &[],
        clause: "some reading with systolic < 120 and diastolic < 80",
        eval: |c| bp_class_rule(c, BpCategory::OptimalBP),
    },
    Rule {
        fact: NormalBP,
        depends_on: &[],
        clause: "some reading that is neither optimal nor hypertensive",
        eval: |c| bp_class_rule(c, BpCategory::NormalBP),
    },
    Rule {
        fact: HypertensionDeg1,
        depends_on: &[],
        clause: "some reading with 140 < systolic < 159 and 90 < diastolic < 99, or above 140/90 and below the grade 2 bounds",
        eval: |c| bp_class_rule(c, BpCategory::HypertensionDeg1),
    },
    Rule {
        fact: HypertensionDeg2,
        depends_on: &[],
        clause: "some reading with systolic >= 160 or diastolic >= 100, below the grade 3 bounds",
        eval: |c| bp_class_rule(c, BpCategory::HypertensionDeg2),
    },
    Rule {
        fact: HypertensionDeg3,
        depends_on: &[],
        clause: "some reading with systolic >= 180 or diastolic >= 110",
        eval: |c| bp_class_rule(c, BpCategory::HypertensionDeg3),
    },
    Rule {
        fact: DiagnosedHypertension,
        depends_on: &[HypertensionDeg1, HypertensionDeg2, HypertensionDeg3],
        clause: "(HypertensionDeg1 or HypertensionDeg2 or HypertensionDeg3) and mean(systolic) > 140 and mean(diastolic) > 90",
        eval: |c| {
            let grades: Vec<FactName> = [HypertensionDeg1, HypertensionDeg2, HypertensionDeg3]
                .into_iter()
                .filter(|f| c.has(*f))
                .collect();
            (!grades.is_empty()).then_some(())?;
            let readings = c.bp_readings();
            let n = readings.len() as f64;
            let sys = readings.iter().map(|r| r.1).sum::<f64>() / n;
            let dia = readings.iter().map(|r| r.2).sum::<f64>() / n;
            (sys > DIAGNOSED_MEAN_SYS_ABOVE && dia > DIAGNOSED_MEAN_DIA_ABOVE).then_some(())?;
            Some(Derived {
                value: Some(sys),
                observations: readings.iter().map(|r| r.0.id.clone()).collect(),
                facts: grades,
            })
        },
    },
    Rule {
        fact: HighBloodGlucose,
        depends_on: &[],
        clause: "some glucose reading > 125 mg/dL",
        eval: |c| {
            let high: Vec<(&Observation, f64)> = c
                .in_window(ResourceType::BloodGlucose)
                .into_iter()
                .filter_map(|o| match o.measurement {
                    Measurement::BloodGlucose { mg_per_dl } if mg_per_dl > HIGH_GLUCOSE_ABOVE_MG_DL => {
                        Some((o, mg_per_dl))
                    }
                    _ => None,
                })
                .collect();
            let max = high.iter().map(|h| h.1).fold(f64::NAN, f64::max);
            (!high.is_empty()).then_some(())?;
            Derived::from_observations(Some(max), ids(high.into_iter().map(|h| h.0)))
        },
    },
    Rule {
        fact: UnhealthyDiet,
        depends_on: &[],
        clause: "purchase data in window and produce purchase events per week < 2",
        eval: |c| {
            let purchases = c.in_window(ResourceType::Purchase);
            (!purchases.is_empty()).then_some(())?;
            let produce = purchases
                .iter()
                .filter(|o| matches!(&o.measurement, Measurement::Purchase { category, .. } if is_produce(category)))
                .count();
            let weeks = c.window.measurement_duration_min() / MINUTES_PER_WEEK;
            let per_week = produce as f64 / weeks;
            (per_week < PRODUCE_EVENTS_PER_WEEK_BELOW).then_some(())?;
            Derived::from_observations(Some(per_week), ids(purchases))
        },
    },
    Rule {
        fact: VeryHighType2DiabetesRisk,
        depends_on: &[
            Obesity,
            DiagnosedHypertension,
            EnoughIntenseExercise,
            EnoughModerateExercise,
            HighBloodGlucose,
            UnhealthyDiet,
        ],
        clause: "age > 64 and Obesity and DiagnosedHypertension and not EnoughIntenseExercise and not EnoughModerateExercise and family_diabetes and HighBloodGlucose and UnhealthyDiet",
        eval: |c| {
            let age = c.profile.age_years?;
            (age > RISK_AGE_ABOVE
                && c.profile.family_diabetes == Some(true)
                && c.has(Obesity)
                && c.has(DiagnosedHypertension)
                && !c.has(EnoughIntenseExercise)
                && !c.has(EnoughModerateExercise)
                && c.has(HighBloodGlucose)
                && c.has(UnhealthyDiet))
                .then_some(())?;
            Some(Derived {
                value: None,
                observations: c.profile.profile_source.iter().cloned().collect(),
                facts: vec![Obesity, DiagnosedHypertension, HighBloodGlucose, UnhealthyDiet],
            })
        },
    },
    Rule {
        fact: OptimalHealth,
        depends_on: &[Normalweight, EnoughIntenseExercise, EnoughModerateExercise, EfficientSleep],
        clause: "Normalweight and (EnoughIntenseExercise or EnoughModerateExercise) and (window-mean reading is NormalBP or OptimalBP) and EfficientSleep",
        eval: |c| {
            let exercise = [EnoughIntenseExercise, EnoughModerateExercise]
                .into_iter()
                .find(|f| c.has(*f))?;
            (c.has(Normalweight) && c.has(EfficientSleep)).then_some(())?;
            let readings = c.bp_readings();
            (!readings.is_empty()).then_some(())?;
            let n = readings.len() as f64;
            let sys = readings.iter().map(|r| r.1).sum::<f64>() / n;
            let dia = readings.iter().map(|r| r.2).sum::<f64>() / n;
            let mean_class = classify_bp(sys, dia).ok()?;
            matches!(mean_class, BpCategory::NormalBP | BpCategory::OptimalBP).then_some(())?;
            Some(Derived {
                value: None,
                observations: readings.iter().map(|r| r.0.id.clone()).collect(),
                facts: vec![Normalweight, exercise, EfficientSleep],
            })
        },
    },
    Rule {
        fact: Stressed,
        depends_on: &[HypertensionDeg1, HypertensionDeg2, InefficientSleep],
        clause: "(HypertensionDeg1 or HypertensionDeg2) and InefficientSleep",
        eval: |c| {
            let grade = [HypertensionDeg1, HypertensionDeg2].into_iter().find(|f| c.has(*f))?;
            c.has(InefficientSleep).then_some(())?;
            Derived::from_facts(None, vec![grade, InefficientSleep])
        },
    },
];

pub struct RecommendationRule {
    pub name: RecommendationName,
    pub requires: &'static [FactName],
}

pub static RECOMMENDATION_RULES: &[RecommendationRule] = &[
    RecommendationRule {
        name: RecommendationName::Relax,
        requires: &[Stressed],
    },
    RecommendationRule {
        name: RecommendationName::ReduceTraining,
        requires: &[Underweight, HighExerciseAmount, Stressed],
    },
    RecommendationRule {
        name: RecommendationName::HealthyDiet,
        requires: &[Overweight, LowExerciseAmount],
    },
    RecommendationRule {
        name: RecommendationName::MoreTraining,
        requires: &[Overweight, LowExerciseAmount],
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub window: RuleWindow,
    pub facts: Vec<Fact>,
    pub recommendations: Vec<Recommendation>,
}

impl Evaluation {
    pub fn has(&self, name: FactName) -> bool {
        self.facts.iter().any(|f| f.name == name)
    }

    pub fn fact(&self, name: FactName) -> Option<&Fact> {
        self.facts.iter().find(|f| f.name == name)
    }

    pub fn recommends(&self, name: RecommendationName) -> bool {
        self.recommendations.iter().any(|r| r.name == name)
    }
}

pub fn evaluate(
    timeline: &Timeline,
    window: &RuleWindow,
    profile: &HealthProfile,
) -> Result<Evaluation> {
    RuleWindow::new(window.start, window.end)?;
    let mut ctx = Context {
        timeline,
        window,
        profile,
        exercise: exercise_metrics(timeline, window),
        facts: BTreeMap::new(),
    };
    let mut facts = Vec::new();
    for rule in RULES {
        if let Some(d) = (rule.eval)(&ctx) {
            let fact = Fact {
                name: rule.fact,
                value: d.value,
                window: *window,
                provenance: Provenance {
                    observations: d.observations,
                    facts: d.facts,
                },
            };
            ctx.facts.insert(rule.fact, fact.clone());
            facts.push(fact);
        }
    }
    let recommendations = RECOMMENDATION_RULES
        .iter()
        .filter(|r| r.requires.iter().all(|f| ctx.has(*f)))
        .map(|r| Recommendation {
            name: r.name,
            rationale: r.requires.to_vec(),
            window: *window,
        })
        .collect();
    Ok(Evaluation {
        window: *window,
        facts,
        recommendations,
    })
}

/// The rule table and its thresholds as a JSON document.
pub fn rules_document() -> Value {
    json!({
        "constants": {
            "bmi_factor": BMI_FACTOR,
            "low_exercise_ratio_below": LOW_EXERCISE_RATIO_BELOW,
            "high_exercise_ratio_above": HIGH_EXERCISE_RATIO_ABOVE,
            "enough_sessions_above": ENOUGH_SESSIONS_ABOVE,
            "enough_intense_ratio_above": ENOUGH_INTENSE_RATIO_ABOVE,
            "enough_moderate_ratio_above": ENOUGH_MODERATE_RATIO_ABOVE,
            "underweight_below": UNDERWEIGHT_BELOW,
            "normalweight_below": NORMALWEIGHT_BELOW,
            "obesity_above": OBESITY_ABOVE,
            "efficient_sleep_above": EFFICIENT_SLEEP_ABOVE,
            "optimal_bp_below": [OPTIMAL_SYS_BELOW, OPTIMAL_DIA_BELOW],
            "deg1_bp_above": [DEG1_SYS_ABOVE, DEG1_DIA_ABOVE],
            "deg1_bp_below": [DEG1_SYS_BELOW, DEG1_DIA_BELOW],
            "deg2_bp_from": [DEG2_SYS_FROM, DEG2_DIA_FROM],
            "deg3_bp_from": [DEG3_SYS_FROM, DEG3_DIA_FROM],
            "diagnosed_mean_bp_above": [DIAGNOSED_MEAN_SYS_ABOVE, DIAGNOSED_MEAN_DIA_ABOVE],
            "high_glucose_above_mg_dl": HIGH_GLUCOSE_ABOVE_MG_DL,
            "produce_events_per_week_below": PRODUCE_EVENTS_PER_WEEK_BELOW,
            "produce_categories": PRODUCE_CATEGORIES,
            "risk_age_above": RISK_AGE_ABOVE,
        },
        "rules": RULES.iter().map(|r| json!({
            "fact": r.fact,
            "depends_on": r.depends_on,
            "clause": r.clause,
        })).collect::<Vec<_>>(),
        "recommendations": RECOMMENDATION_RULES.iter().map(|r| json!({
            "recommendation": r.name,
            "requires": r.requires,
        })).collect::<Vec<_>>(),
    })
}

//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use chrono::{DateTime, Duration, TimeZone, Utc};
use priaas::clock::{Clock, ManualClock, SystemClock};
use priaas::consent::{
    transition_consent, verify_token, ConsentAction, ConsentStatus, KeyMaterial, ServiceLink,
    TimeRange,
};
use priaas::datakit::{Intensity, Measurement, Observation};
use priaas::fixtures::{self, run_fig5_on, DEMO_CREDENTIAL, DEMO_VENDOR_USER};
use priaas::flowsim::{flow_report, run_priaas, run_uma, Scenario, Verdict};
use priaas::ids::{AccountId, Pseudonym, SeededIds};
use priaas::net::services::{PullRequest, SyncRequest};
use priaas::net::{LiveRunner, OperatorClient, OperatorServer, ServiceClient};
use priaas::operator::{FileStore, GrantRequest, MemoryStore, Operator, OperatorSettings, Tables};
use priaas::reasoner::{compute_bmi, evaluate, FactName, HealthProfile, RuleWindow, Timeline};
use priaas::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

mod common;

use common::{operator_with, services, Services, ADMIN};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn report(name: &str, outcome: Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name}: {why}");
            false
        }
    }
}

/// Runs a check, turning a panic into a FAIL line.
fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("demo end-to-end", Box::new(fig5_end_to_end)),
        (
            "zero personal data",
            Box::new(|| rt.block_on(zero_personal_data())),
        ),
        ("consent state machine", Box::new(state_machine)),
        ("token integrity", Box::new(token_integrity)),
        (
            "rule table oracle equivalence",
            Box::new(oracle_equivalence),
        ),
        ("message efficiency", Box::new(message_efficiency)),
        (
            "revocation propagation",
            Box::new(|| rt.block_on(revocation_propagation())),
        ),
        (
            "portability round-trip",
            Box::new(|| rt.block_on(portability())),
        ),
        (
            "right to be forgotten",
            Box::new(|| rt.block_on(right_to_be_forgotten())),
        ),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !report(name, guarded(check)) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---- demo ----

fn fig5_end_to_end() -> Outcome {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_priaas"))
        .args(["demo", "fig5", "--json"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(
        out.status.code() == Some(0),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let run: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let steps: Vec<&str> = run["steps"]
        .as_array()
        .ok_or("no steps")?
        .iter()
        .filter_map(|s| s["name"].as_str())
        .collect();
    let count = |n: &str| steps.iter().filter(|s| **s == n).count();
    ensure!(
        count("register") == 3,
        "{} register steps",
        count("register")
    );
    ensure!(count("link") == 3, "{} link steps", count("link"));
    ensure!(count("grant") == 2, "{} grant steps", count("grant"));
    ensure!(count("sync") >= 1, "no sync step");
    let recs = run["recommendations"]
        .as_array()
        .ok_or("no recommendations")?;
    ensure!(!recs.is_empty(), "no recommendation received");
    ensure!(elapsed < StdDuration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "exit 0 in {:.2} s, recommendations {}",
        elapsed.as_secs_f64(),
        Value::Array(recs.clone())
    ))
}

// ---- zero personal data ----

/// Payload keys of every measurement kind, read off their serialized form.
fn observation_keys() -> BTreeSet<String> {
    let samples = [
        Measurement::Exercise {
            duration_min: 1.0,
            intensity: Intensity::Light,
        },
        Measurement::Sleep {
            efficiency_percent: 1.0,
        },
        Measurement::BloodPressure {
            systolic_mmhg: 1.0,
            diastolic_mmhg: 1.0,
        },
        Measurement::Weight { pounds: 1.0 },
        Measurement::Height { inches: 1.0 },
        Measurement::Purchase {
            category: "x".into(),
            item_count: 1,
        },
        Measurement::BloodGlucose { mg_per_dl: 1.0 },
        Measurement::Profile {
            age_years: 1,
            family_diabetes: false,
        },
    ];
    let mut keys: BTreeSet<String> = ["payload".to_string()].into();
    for m in samples {
        let v = serde_json::to_value(&m).unwrap();
        keys.extend(v["payload"].as_object().unwrap().keys().cloned());
    }
    keys
}

/// Vendor record fields that carry a health value (numbers and flags).
fn vendor_value_keys() -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    for f in fixtures::vendor_fixtures() {
        for r in &f.records {
            for (k, v) in r.as_object().unwrap() {
                if v.is_number() || v.is_boolean() {
                    keys.insert(k.clone());
                }
            }
        }
    }
    keys
}

fn all_keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                out.insert(k.clone());
                all_keys(v, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| all_keys(v, out)),
        _ => {}
    }
}

fn secret_forms(secret: &[u8]) -> Vec<String> {
    vec![
        hex::encode(secret),
        hex::encode_upper(secret),
        STANDARD.encode(secret),
        URL_SAFE_NO_PAD.encode(secret),
    ]
}

fn leaks(text: &str, forms: &[String]) -> bool {
    forms.iter().any(|f| text.contains(f.as_str()))
}

async fn zero_personal_data() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("operator.json");
    let store = Arc::new(FileStore::open(&path).map_err(|e| e.to_string())?);
    let scenario = Scenario::fig5();
    let runner = LiveRunner::start_with_store(scenario.clone(), store)
        .await
        .map_err(|e| e.to_string())?;
    let run = runner.finish().await.map_err(|e| e.to_string())?;
    ensure!(
        !run.recommendations.is_empty(),
        "the demo produced no recommendation"
    );

    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let persisted: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut keys = BTreeSet::new();
    all_keys(&persisted, &mut keys);
    let forbidden: BTreeSet<String> = observation_keys()
        .union(&vendor_value_keys())
        .cloned()
        .collect();
    let hits: Vec<_> = keys.intersection(&forbidden).collect();
    ensure!(
        hits.is_empty(),
        "operator persistence holds health fields {hits:?}"
    );
    // schema-level: no persisted object parses as an observation
    let mut objects = Vec::new();
    collect_objects(&persisted, &mut objects);
    let parsed = objects
        .iter()
        .filter(|o| serde_json::from_value::<Observation>((**o).clone()).is_ok())
        .count();
    ensure!(parsed == 0, "{parsed} persisted objects are observations");

    // the live operator derives pseudonyms from this seed's secret
    let forms = secret_forms(KeyMaterial::from_seed(scenario.seed).derivation_secret());
    ensure!(
        !leaks(&text, &forms),
        "derivation secret in operator persistence"
    );
    let receipts = serde_json::to_string(&run.receipts).unwrap();
    ensure!(!leaks(&receipts, &forms), "derivation secret in a receipt");

    // export, receipts and tokens from a direct run
    let keys_a = KeyMaterial::from_seed(41);
    let op = Operator::in_memory(OperatorSettings::new("op-scan"), KeyMaterial::from_seed(41));
    let ids = run_fig5_on(&op, &KeyMaterial::from_seed(42)).map_err(|e| e.to_string())?;
    let forms = secret_forms(keys_a.derivation_secret());
    let export =
        serde_json::to_string(&op.export_account(&ids.account).map_err(|e| e.to_string())?)
            .unwrap();
    ensure!(!leaks(&export, &forms), "derivation secret in the export");
    ensure!(
        !leaks(&serde_json::to_string(&ids.receipts).unwrap(), &forms),
        "derivation secret in a receipt"
    );
    for token in &ids.tokens {
        let (claims, _) = token.split_once('.').ok_or("token without separator")?;
        let decoded =
            String::from_utf8(URL_SAFE_NO_PAD.decode(claims).map_err(|e| e.to_string())?).unwrap();
        ensure!(
            !leaks(token, &forms) && !leaks(&decoded, &forms),
            "derivation secret in a token"
        );
    }
    Ok(format!(
        "{} persisted keys, none of {} health fields, no observation objects; secret absent from store, {} receipts, export and {} tokens",
        keys.len(),
        forbidden.len(),
        run.receipts.len() + ids.receipts.len(),
        ids.tokens.len()
    ))
}

fn collect_objects<'a>(v: &'a Value, out: &mut Vec<&'a Value>) {
    match v {
        Value::Object(map) => {
            out.push(v);
            map.values().for_each(|v| collect_objects(v, out));
        }
        Value::Array(items) => items.iter().for_each(|v| collect_objects(v, out)),
        _ => {}
    }
}

// ---- consent state machine ----

fn expected(status: ConsentStatus, action: ConsentAction) -> Option<ConsentStatus> {
    match (status, action) {
        (ConsentStatus::Active, ConsentAction::Pause) => Some(ConsentStatus::Paused),
        (ConsentStatus::Paused, ConsentAction::Resume) => Some(ConsentStatus::Active),
        (ConsentStatus::Active, ConsentAction::Revoke) => Some(ConsentStatus::Revoked),
        (ConsentStatus::Paused, ConsentAction::Revoke) => Some(ConsentStatus::Revoked),
        _ => None,
    }
}

fn fig5_operator(seed: u64) -> (Operator, priaas::fixtures::Fig5Ids) {
    let op = Operator::new(
        OperatorSettings::new("op-fsm"),
        KeyMaterial::from_seed(seed),
        Arc::new(MemoryStore::new()),
        Arc::new(SystemClock),
        Arc::new(SeededIds::new(seed)),
    );
    let ids = run_fig5_on(&op, &KeyMaterial::from_seed(seed + 1)).unwrap();
    (op, ids)
}

fn state_machine() -> Outcome {
    let mut cells = 0;
    for status in ConsentStatus::ALL {
        for action in ConsentAction::ALL {
            // pure transition
            let (op, ids) = fig5_operator(3);
            let mut record = op.list_consents(&ids.account).unwrap()[0].record.clone();
            record.status = status;
            let got = transition_consent(&record, action, Utc::now());
            match (expected(status, action), &got) {
                (Some(to), Ok(r)) => ensure!(
                    r.status == to && r.version == record.version + 1,
                    "{status:?} x {action:?}"
                ),
                (None, Err(Error::InvalidTransition(_))) => {}
                (want, got) => {
                    return Err(format!(
                        "{status:?} x {action:?}: want {want:?}, got {got:?}"
                    ))
                }
            }
            // through the operator, from a consent driven into `status`
            let consent = &ids.inference_consent;
            match status {
                ConsentStatus::Active => {}
                ConsentStatus::Paused => {
                    op.set_consent_status(&ids.account, consent, ConsentAction::Pause)
                        .unwrap();
                }
                ConsentStatus::Revoked => {
                    op.set_consent_status(&ids.account, consent, ConsentAction::Revoke)
                        .unwrap();
                }
            }
            let got = op.set_consent_status(&ids.account, consent, action);
            match (expected(status, action), got) {
                (Some(to), Ok(r)) => ensure!(r.status == to, "operator {status:?} x {action:?}"),
                (None, Err(Error::InvalidTransition(_))) => {}
                (want, got) => {
                    return Err(format!(
                        "operator {status:?} x {action:?}: want {want:?}, got {got:?}"
                    ))
                }
            }
            cells += 1;
        }
    }

    let (op, ids) = fig5_operator(5);
    let op = Arc::new(op);
    let start = op.list_consents(&ids.account).unwrap()[0].record.version;
    let barrier = Arc::new(std::sync::Barrier::new(100));
    let threads: Vec<_> = (0..100)
        .map(|i| {
            let (op, ids, barrier) = (op.clone(), ids.clone(), barrier.clone());
            std::thread::spawn(move || {
                let action = match i % 3 {
                    0 => ConsentAction::Pause,
                    1 => ConsentAction::Resume,
                    _ if i == 98 => ConsentAction::Revoke,
                    _ => ConsentAction::Pause,
                };
                barrier.wait();
                op.set_consent_status(&ids.account, &ids.inference_consent, action)
                    .ok()
                    .map(|r| r.version)
            })
        })
        .collect();
    let mut versions: Vec<u64> = threads
        .into_iter()
        .filter_map(|t| t.join().unwrap())
        .collect();
    versions.sort();
    let want: Vec<u64> = (start + 1..=start + versions.len() as u64).collect();
    ensure!(
        versions == want,
        "applied versions {versions:?}, expected {want:?}"
    );
    let final_version = op
        .list_consents(&ids.account)
        .unwrap()
        .into_iter()
        .find(|v| v.record.consent_id == ids.inference_consent)
        .unwrap()
        .record
        .version;
    ensure!(
        final_version == start + versions.len() as u64,
        "final version {final_version}"
    );
    Ok(format!(
        "{cells}/9 cells match; 100 concurrent attempts applied {} with contiguous versions",
        versions.len()
    ))
}

// ---- token integrity ----

fn token_integrity() -> Outcome {
    let clock = Arc::new(ManualClock::new(
        Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap(),
    ));
    let op = Operator::new(
        OperatorSettings::new("op-token"),
        KeyMaterial::from_seed(9),
        Arc::new(MemoryStore::new()),
        clock.clone(),
        Arc::new(SeededIds::new(9)),
    );
    let ids = run_fig5_on(&op, &KeyMaterial::from_seed(10)).map_err(|e| e.to_string())?;
    let key = op.verification_key();
    let now = clock.now();
    let token = ids.tokens[0].as_bytes().to_vec();
    let claims =
        verify_token(&token, &key, now).map_err(|e| format!("honest token rejected: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x7011);
    let mut rejected = 0;
    for _ in 0..1000 {
        let mut bytes = token.clone();
        let i = rng.gen_range(0..bytes.len());
        let old = bytes[i];
        while bytes[i] == old {
            bytes[i] = rng.gen();
        }
        if verify_token(&bytes, &key, now).is_err() {
            rejected += 1;
        }
    }
    ensure!(
        rejected == 1000,
        "{} of 1000 mutations accepted",
        1000 - rejected
    );

    let at_expiry = verify_token(&token, &key, claims.expires_at);
    ensure!(
        matches!(at_expiry, Err(Error::TokenExpired)),
        "now == expires_at gave {at_expiry:?}"
    );
    ensure!(
        verify_token(&token, &key, claims.expires_at - Duration::seconds(1)).is_ok(),
        "one second before expiry rejected"
    );
    Ok("1000/1000 mutations rejected; honest token accepted; rejected at now == expires_at".into())
}

// ---- rule table oracle ----

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap()
}

/// Blood pressure bands read literally from the table, with unbanded readings
/// placed in the highest band one of whose bounds they exceed.
fn oracle_band(s: f64, d: f64) -> &'static str {
    if s < 120.0 && d < 80.0 {
        "OptimalBP"
    } else if s >= 180.0 || d >= 110.0 {
        "HypertensionDeg3"
    } else if (160.0..=179.0).contains(&s) && (100.0..=109.0).contains(&d) {
        "HypertensionDeg2"
    } else if s > 140.0 && s < 159.0 && d > 90.0 && d < 99.0 {
        "HypertensionDeg1"
    } else if s < 140.0 && d < 90.0 {
        "NormalBP"
    } else if s >= 160.0 || d >= 100.0 {
        "HypertensionDeg2"
    } else if s > 140.0 || d > 90.0 {
        "HypertensionDeg1"
    } else {
        "NormalBP"
    }
}

struct OracleOut {
    facts: BTreeSet<String>,
    recommendations: BTreeSet<String>,
    bmi: Option<f64>,
    total_exercise: Option<f64>,
}

/// Brute-force evaluation of the rule table, one row at a time.
fn oracle(obs: &[Observation], start: DateTime<Utc>, end: DateTime<Utc>) -> OracleOut {
    let minutes = (end - start).num_seconds() as f64 / 60.0;
    let inside: Vec<&Observation> = obs
        .iter()
        .filter(|o| o.timestamp >= start && o.timestamp < end)
        .collect();
    let mut f: BTreeSet<String> = BTreeSet::new();

    let exercise: Vec<(f64, Intensity)> = inside
        .iter()
        .filter_map(|o| match &o.measurement {
            Measurement::Exercise {
                duration_min,
                intensity,
            } => Some((*duration_min, *intensity)),
            _ => None,
        })
        .collect();
    let total: f64 = exercise.iter().map(|e| e.0).sum();
    let sessions = |kind: Intensity| {
        exercise
            .iter()
            .filter(|e| e.1 == kind)
            .map(|e| e.0)
            .collect::<Vec<_>>()
    };
    let (intense, moderate) = (sessions(Intensity::Intense), sessions(Intensity::Moderate));
    let mut total_exercise = None;
    if !exercise.is_empty() {
        f.insert("TotalExercise".into());
        total_exercise = Some(total);
        if total / minutes < 0.04 {
            f.insert("LowExerciseAmount".into());
        }
        if total / minutes > 0.12 {
            f.insert("HighExerciseAmount".into());
        }
    }
    if intense.len() > 3 && intense.iter().sum::<f64>() / minutes > 0.0074 {
        f.insert("EnoughIntenseExercise".into());
    }
    if moderate.len() > 3 && moderate.iter().sum::<f64>() / minutes > 0.0148 {
        f.insert("EnoughModerateExercise".into());
    }

    let latest = |pick: &dyn Fn(&Measurement) -> Option<(f64, f64)>| {
        obs.iter()
            .filter(|o| o.timestamp < end)
            .filter_map(|o| pick(&o.measurement).map(|v| (o.timestamp, v)))
            .max_by_key(|(t, _)| *t)
            .map(|(_, v)| v)
    };
    let weight = latest(&|m| match m {
        Measurement::Weight { pounds } => Some((*pounds, 0.0)),
        _ => None,
    });
    let height = latest(&|m| match m {
        Measurement::Height { inches } => Some((*inches, 0.0)),
        _ => None,
    });
    let profile = latest(&|m| match m {
        Measurement::Profile {
            age_years,
            family_diabetes,
        } => Some((*age_years as f64, if *family_diabetes { 1.0 } else { 0.0 })),
        _ => None,
    });
    let mut bmi = None;
    if let (Some((w, _)), Some((h, _))) = (weight, height) {
        if h > 0.0 {
            let b = w / (h * h) * 703.0;
            bmi = Some(b);
            f.insert("BMIIndex".into());
            let class = if b < 18.5 {
                "Underweight"
            } else if b < 25.0 {
                "Normalweight"
            } else if b <= 29.9 {
                "Overweight"
            } else {
                "Obesity"
            };
            f.insert(class.into());
        }
    }

    let sleep: Vec<f64> = inside
        .iter()
        .filter_map(|o| match &o.measurement {
            Measurement::Sleep { efficiency_percent } => Some(*efficiency_percent),
            _ => None,
        })
        .collect();
    if !sleep.is_empty() {
        let mean = sleep.iter().sum::<f64>() / sleep.len() as f64;
        f.insert(
            if mean > 84.0 {
                "EfficientSleep"
            } else {
                "InefficientSleep"
            }
            .into(),
        );
    }

    let bps: Vec<(f64, f64)> = inside
        .iter()
        .filter_map(|o| match &o.measurement {
            Measurement::BloodPressure {
                systolic_mmhg,
                diastolic_mmhg,
            } => Some((*systolic_mmhg, *diastolic_mmhg)),
            _ => None,
        })
        .collect();
    for (s, d) in &bps {
        f.insert(oracle_band(*s, *d).into());
    }
    let mean_bp = (!bps.is_empty()).then(|| {
        let n = bps.len() as f64;
        (
            bps.iter().map(|b| b.0).sum::<f64>() / n,
            bps.iter().map(|b| b.1).sum::<f64>() / n,
        )
    });
    let any_hypertensive = bps
        .iter()
        .any(|(s, d)| oracle_band(*s, *d).starts_with("Hypertension"));
    if let Some((ms, md)) = mean_bp {
        if any_hypertensive && ms > 140.0 && md > 90.0 {
            f.insert("DiagnosedHypertension".into());
        }
    }

    if inside.iter().any(
        |o| matches!(o.measurement, Measurement::BloodGlucose { mg_per_dl } if mg_per_dl > 125.0),
    ) {
        f.insert("HighBloodGlucose".into());
    }

    let produce = [
        "fruits_berries_vegetables",
        "fruit",
        "fruits",
        "berries",
        "vegetable",
        "vegetables",
    ];
    let purchases: Vec<&str> = inside
        .iter()
        .filter_map(|o| match &o.measurement {
            Measurement::Purchase { category, .. } => Some(category.as_str()),
            _ => None,
        })
        .collect();
    let produce_events = purchases
        .iter()
        .filter(|c| produce.contains(&c.to_lowercase().as_str()))
        .count();
    if !purchases.is_empty() && produce_events as f64 / (minutes / 10_080.0) < 2.0 {
        f.insert("UnhealthyDiet".into());
    }

    let has = |n: &str| f.contains(n);
    let mut derived = Vec::new();
    if let Some((age, family)) = profile {
        if age > 64.0
            && has("Obesity")
            && has("DiagnosedHypertension")
            && !has("EnoughIntenseExercise")
            && !has("EnoughModerateExercise")
            && family == 1.0
            && has("HighBloodGlucose")
            && has("UnhealthyDiet")
        {
            derived.push("VeryHighType2DiabetesRisk");
        }
    }
    if has("Normalweight")
        && (has("EnoughIntenseExercise") || has("EnoughModerateExercise"))
        && mean_bp.is_some_and(|(s, d)| matches!(oracle_band(s, d), "NormalBP" | "OptimalBP"))
        && has("EfficientSleep")
    {
        derived.push("OptimalHealth");
    }
    if (has("HypertensionDeg1") || has("HypertensionDeg2")) && has("InefficientSleep") {
        derived.push("Stressed");
    }
    f.extend(derived.into_iter().map(String::from));

    let has = |n: &str| f.contains(n);
    let mut recs = BTreeSet::new();
    if has("Stressed") {
        recs.insert("Relax".to_string());
    }
    if has("Underweight") && has("HighExerciseAmount") && has("Stressed") {
        recs.insert("ReduceTraining".to_string());
    }
    if has("Overweight") && has("LowExerciseAmount") {
        recs.insert("HealthyDiet".to_string());
        recs.insert("MoreTraining".to_string());
    }
    OracleOut {
        facts: f,
        recommendations: recs,
        bmi,
        total_exercise,
    }
}

fn random_measurement(rng: &mut ChaCha8Rng) -> Measurement {
    match rng.gen_range(0..14) {
        0..=3 => Measurement::Exercise {
            duration_min: rng.gen_range(5..120) as f64,
            intensity: [Intensity::Light, Intensity::Moderate, Intensity::Intense]
                [rng.gen_range(0..3)],
        },
        4..=5 => Measurement::Sleep {
            efficiency_percent: if rng.gen_bool(0.2) {
                84.0
            } else {
                rng.gen_range(70..=95) as f64
            },
        },
        6..=7 => Measurement::BloodPressure {
            systolic_mmhg: rng.gen_range(95..200) as f64,
            diastolic_mmhg: rng.gen_range(60..120) as f64,
        },
        8 => Measurement::Weight {
            pounds: rng.gen_range(90..280) as f64,
        },
        9 => Measurement::Height {
            inches: rng.gen_range(58..78) as f64,
        },
        10 => Measurement::BloodGlucose {
            mg_per_dl: rng.gen_range(70..160) as f64,
        },
        11..=12 => Measurement::Purchase {
            category: ["vegetables", "fruit", "Berries", "dairy", "snacks"][rng.gen_range(0..5)]
                .into(),
            item_count: 1,
        },
        _ => Measurement::Profile {
            age_years: rng.gen_range(55..80),
            family_diabetes: rng.gen_bool(0.5),
        },
    }
}

fn random_profile(rng: &mut ChaCha8Rng) -> Vec<Observation> {
    let n = rng.gen_range(0..60);
    (0..n)
        .map(|i| Observation {
            id: format!("o{i}"),
            pseudonym: Pseudonym::from("ps_subject"),
            // reaches a day either side of a week-long window
            timestamp: t0()
                + Duration::minutes(rng.gen_range(-1440..11_520))
                + Duration::seconds(i as i64),
            measurement: random_measurement(rng),
        })
        .collect()
}

fn evaluated(
    obs: &[Observation],
    window: &RuleWindow,
) -> Result<(BTreeSet<String>, BTreeSet<String>, Option<f64>, Option<f64>), String> {
    let timeline = Timeline::ingest(obs.to_vec()).map_err(|e| e.to_string())?;
    let profile = HealthProfile::derive(&timeline, window);
    let e = evaluate(&timeline, window, &profile).map_err(|e| e.to_string())?;
    Ok((
        e.facts.iter().map(|f| f.name.to_string()).collect(),
        e.recommendations
            .iter()
            .map(|r| format!("{:?}", r.name))
            .collect(),
        e.fact(FactName::BMIIndex).and_then(|f| f.value),
        e.fact(FactName::TotalExercise).and_then(|f| f.value),
    ))
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn obs_at(minute: i64, i: usize, m: Measurement) -> Observation {
    Observation {
        id: format!("b{i}"),
        pseudonym: Pseudonym::from("ps_subject"),
        timestamp: t0() + Duration::minutes(minute) + Duration::seconds(i as i64),
        measurement: m,
    }
}

fn boundary_facts(obs: Vec<Measurement>, window_min: i64) -> BTreeSet<String> {
    let obs: Vec<Observation> = obs
        .into_iter()
        .enumerate()
        .map(|(i, m)| obs_at(i as i64 * 60, i, m))
        .collect();
    let w = RuleWindow::new(t0(), t0() + Duration::minutes(window_min)).unwrap();
    evaluated(&obs, &w).unwrap().0
}

fn weight_for_bmi(target: f64, h: f64) -> f64 {
    let mut w = target * h * h / 703.0;
    for _ in 0..64 {
        let b = compute_bmi(w, h).unwrap();
        if b == target {
            break;
        }
        let bits = w.to_bits();
        w = f64::from_bits(if b < target { bits + 1 } else { bits - 1 });
    }
    w
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7AB1E);
    let profiles = 300;
    let mut fired = BTreeSet::new();
    for n in 0..profiles {
        let obs = random_profile(&mut rng);
        let days = rng.gen_range(1..15);
        let w = RuleWindow::new(t0(), t0() + Duration::days(days)).unwrap();
        let (facts, recs, bmi, total) = evaluated(&obs, &w)?;
        let want = oracle(&obs, w.start, w.end);
        ensure!(
            facts == want.facts,
            "profile {n}: facts {facts:?}, oracle {:?}",
            want.facts
        );
        ensure!(
            recs == want.recommendations,
            "profile {n}: {recs:?} vs {:?}",
            want.recommendations
        );
        ensure!(
            close(bmi, want.bmi) && close(total, want.total_exercise),
            "profile {n}: values differ"
        );
        fired.extend(facts);
    }

    use Measurement as M;
    let ex = |d: f64, i: Intensity| M::Exercise {
        duration_min: d,
        intensity: i,
    };
    // 40 min over 1000 is exactly 0.04
    let f = boundary_facts(vec![ex(40.0, Intensity::Light)], 1000);
    ensure!(
        !f.contains("LowExerciseAmount"),
        "LowExerciseAmount fired at 0.04"
    );
    // 4 x 18.5 over 10000 is exactly 0.0074
    let f = boundary_facts(vec![ex(18.5, Intensity::Intense); 4], 10_000);
    ensure!(
        !f.contains("EnoughIntenseExercise"),
        "EnoughIntenseExercise fired at 0.0074"
    );
    // 4 x 37 over 10000 is exactly 0.0148
    let f = boundary_facts(vec![ex(37.0, Intensity::Moderate); 4], 10_000);
    ensure!(
        !f.contains("EnoughModerateExercise"),
        "EnoughModerateExercise fired at 0.0148"
    );
    let w = weight_for_bmi(29.9, 70.0);
    let f = boundary_facts(
        vec![M::Weight { pounds: w }, M::Height { inches: 70.0 }],
        10_080,
    );
    ensure!(
        f.contains("Overweight") && !f.contains("Obesity"),
        "BMI 29.9 gave {f:?}"
    );
    let f = boundary_facts(
        vec![M::Sleep {
            efficiency_percent: 84.0,
        }],
        10_080,
    );
    ensure!(!f.contains("EfficientSleep"), "EfficientSleep fired at 84");
    let f = boundary_facts(
        vec![M::BloodPressure {
            systolic_mmhg: 120.0,
            diastolic_mmhg: 80.0,
        }],
        10_080,
    );
    ensure!(!f.contains("OptimalBP"), "OptimalBP fired at 120/80");
    let f = boundary_facts(
        vec![M::BloodPressure {
            systolic_mmhg: 140.0,
            diastolic_mmhg: 90.0,
        }],
        10_080,
    );
    ensure!(
        !f.contains("HypertensionDeg1") && !f.contains("DiagnosedHypertension"),
        "140/90 gave {f:?}"
    );
    // every other diabetes-risk condition holds; age 64 is not over 64
    let risk = |age| {
        let obese = weight_for_bmi(35.0, 65.0);
        boundary_facts(
            vec![
                M::Profile {
                    age_years: age,
                    family_diabetes: true,
                },
                M::Weight { pounds: obese },
                M::Height { inches: 65.0 },
                M::BloodPressure {
                    systolic_mmhg: 150.0,
                    diastolic_mmhg: 95.0,
                },
                M::BloodGlucose { mg_per_dl: 140.0 },
                M::Purchase {
                    category: "snacks".into(),
                    item_count: 1,
                },
            ],
            10_080,
        )
    };
    ensure!(
        !risk(64).contains("VeryHighType2DiabetesRisk"),
        "risk fired at age 64"
    );
    ensure!(
        risk(65).contains("VeryHighType2DiabetesRisk"),
        "risk did not fire at 65 (fixture is wrong)"
    );

    let bmi = compute_bmi(150.0, 65.0).map_err(|e| e.to_string())?;
    ensure!((bmi - 24.96).abs() <= 0.01, "BMI(150 lb, 65 in) = {bmi}");
    Ok(format!(
        "{profiles} random profiles match fact-for-fact ({} distinct facts seen); 8 strict boundaries hold; BMI(150, 65) = {bmi:.4}",
        fired.len()
    ))
}

// ---- message efficiency ----

fn message_efficiency() -> Outcome {
    let scenario = Scenario::fig5();
    let (_, _, report) = flow_report(&scenario).map_err(|e| e.to_string())?;
    ensure!(
        report.verdict == Verdict::Pass,
        "verdict {:?}",
        report.verdict
    );
    ensure!(
        report.priaas_total < report.baseline_total,
        "{} vs {}",
        report.priaas_total,
        report.baseline_total
    );
    let golden =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden");
    for (name, run) in [
        (
            "fig5_priaas.json",
            run_priaas as fn(&Scenario) -> priaas::Result<_>,
        ),
        ("fig5_uma.json", run_uma),
    ] {
        let first = run(&scenario).map_err(|e| e.to_string())?.to_json();
        let second = run(&scenario).map_err(|e| e.to_string())?.to_json();
        ensure!(first == second, "{name} differs between two runs");
        let stored =
            std::fs::read_to_string(golden.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(stored == first, "{name} drifted from the golden transcript");
    }
    Ok(format!(
        "PASS verdict, consent + first access {} < {}; both transcripts byte-stable and equal to the goldens",
        report.priaas_total, report.baseline_total
    ))
}

// ---- shared HTTP setup ----

struct Subject {
    client: OperatorClient,
    account: AccountId,
    links: Vec<ServiceLink>,
}

async fn subject(op: &OperatorServer, s: &Services) -> Result<Subject, String> {
    let client = OperatorClient::new(op.url());
    let account = client
        .create_account("alice", DEMO_CREDENTIAL)
        .await
        .map_err(|e| e.to_string())?;
    let mut links = Vec::new();
    for id in [
        s.source.source.service_id(),
        s.reasoner.reasoner.service_id(),
        s.app.sink.service_id(),
    ] {
        links.push(
            client
                .link(&account, DEMO_CREDENTIAL, id)
                .await
                .map_err(|e| e.to_string())?,
        );
    }
    admin(&s.urls[0])
        .sync(&SyncRequest {
            pseudonyms: [(DEMO_VENDOR_USER.to_string(), links[0].pseudonym.clone())].into(),
            fixtures: None,
        })
        .await
        .map_err(|e| e.to_string())?;
    Ok(Subject {
        client,
        account,
        links,
    })
}

fn admin(url: &str) -> ServiceClient {
    ServiceClient::new(url).with_admin_token(Some(ADMIN.into()))
}

impl Subject {
    async fn grant(
        &self,
        op: &OperatorServer,
        from: usize,
        to: usize,
        types: Vec<String>,
        purpose: &str,
    ) -> Result<priaas::operator::Grant, String> {
        let grant = self
            .client
            .grant(
                &self.account,
                DEMO_CREDENTIAL,
                &GrantRequest {
                    source_link_id: self.links[from].link_id.clone(),
                    sink_link_id: self.links[to].link_id.clone(),
                    resource_set: priaas::consent::ResourceSet::new(
                        types.iter().map(String::as_str),
                    ),
                    purposes: [purpose.to_string()].into(),
                    expires_at: None,
                },
            )
            .await
            .map_err(|e| e.to_string())?;
        op.dispatcher.flush().await;
        Ok(grant)
    }

    async fn inference(&self, op: &OperatorServer) -> Result<priaas::operator::Grant, String> {
        self.grant(
            op,
            0,
            1,
            fixtures::all_resource_types().into_iter().collect(),
            fixtures::HEALTH_INFERENCE,
        )
        .await
    }
}

fn window() -> TimeRange {
    TimeRange::new(fixtures::demo_window_start(), fixtures::demo_window_end()).unwrap()
}

fn pull(consent: &priaas::ids::ConsentId) -> PullRequest {
    PullRequest {
        consent_id: consent.clone(),
        resource_types: Vec::new(),
        window: Some(window()),
    }
}

// ---- revocation ----

async fn revocation_propagation() -> Outcome {
    let clock = Arc::new(ManualClock::new(
        fixtures::demo_window_end() + Duration::days(1),
    ));
    let op = operator_with(
        "op-revoke",
        21,
        &[],
        Arc::new(MemoryStore::new()),
        clock.clone(),
    )
    .await;
    let s = services(&op.url(), clock.clone()).await;
    let who = subject(&op, &s).await?;
    let grant = who.inference(&op).await?;
    let consent = grant.record.consent_id.clone();
    let first = admin(&s.urls[1])
        .pull(&pull(&consent))
        .await
        .map_err(|e| e.to_string())?;
    ensure!(
        first.fetched > 0 && first.failures.is_empty(),
        "initial pull: {first:?}"
    );

    // revoke, but hold the notices back so only the TTL can end access
    who.client
        .set_status(
            &who.account,
            DEMO_CREDENTIAL,
            &consent,
            ConsentAction::Revoke,
        )
        .await
        .map_err(|e| e.to_string())?;
    let ttl = op.operator.settings().introspection_ttl_secs as i64;
    clock.advance(Duration::seconds(ttl + 1));
    let after = admin(&s.urls[1])
        .pull(&pull(&consent))
        .await
        .map_err(|e| e.to_string())?;
    ensure!(
        after.fetched == 0,
        "fetched {} after revocation",
        after.fetched
    );
    ensure!(
        !after.failures.is_empty()
            && after
                .failures
                .iter()
                .all(|f| f.error_code == "consent-inactive"),
        "sink fetch failures {:?}",
        after.failures
    );
    let direct = ServiceClient::new(&s.urls[0])
        .fetch_all(&grant.token, "weight", Some(&window()))
        .await;
    ensure!(
        direct == Err(Error::ConsentInactive),
        "direct fetch gave {direct:?}"
    );

    // now deliver: the sink purges, and a replay purges nothing more
    let held =
        admin(&s.urls[1]).state().await.map_err(|e| e.to_string())?["stored_observations"].as_u64();
    let revoke_notice = op
        .operator
        .pending_deliveries()
        .into_iter()
        .find(|d| {
            &d.target == s.reasoner.reasoner.service_id()
                && d.event.consent_id.as_ref() == Some(&consent)
        })
        .ok_or("no pending notice for the sink")?;
    op.dispatcher.flush().await;
    let left =
        admin(&s.urls[1]).state().await.map_err(|e| e.to_string())?["stored_observations"].as_u64();
    ensure!(
        left == Some(0),
        "{left:?} observations left after purge (had {held:?})"
    );
    let replay = admin(&s.urls[1])
        .notice(&revoke_notice.event)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(
        replay["purged"] == 0,
        "replayed notice purged {}",
        replay["purged"]
    );
    let left =
        admin(&s.urls[1]).state().await.map_err(|e| e.to_string())?["stored_observations"].as_u64();
    ensure!(left == Some(0), "replay changed the store");
    op.shutdown().await;
    Ok(format!(
        "fetch {} s after revocation failed with consent-inactive; purge removed {} observations, replay removed 0",
        ttl + 1,
        held.unwrap_or(0)
    ))
}

// ---- portability ----

type Semantic = Vec<(String, String, Vec<String>, Vec<String>, ConsentStatus)>;

async fn semantic(
    client: &OperatorClient,
    account: &AccountId,
    credential: &str,
) -> Result<Semantic, String> {
    let mut out: Semantic = client
        .list_consents(account, credential)
        .await
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|v| {
            (
                v.source.name,
                v.sink.name,
                v.record.resource_set.resource_types.into_iter().collect(),
                v.record.purposes.into_iter().collect(),
                v.record.status,
            )
        })
        .collect();
    out.sort();
    Ok(out)
}

async fn portability() -> Outcome {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let op_a = operator_with("op-a", 31, &[], Arc::new(MemoryStore::new()), clock.clone()).await;
    let a_key = op_a.operator.verification_key();
    let peers = [(op_a.operator.operator_id().clone(), a_key)];
    let op_b = operator_with(
        "op-b",
        32,
        &peers,
        Arc::new(MemoryStore::new()),
        clock.clone(),
    )
    .await;
    let s = services(&op_a.url(), clock).await;
    let who = subject(&op_a, &s).await?;
    let inference = who.inference(&op_a).await?;
    let guidance = who
        .grant(
            &op_a,
            1,
            2,
            vec![fixtures::RECOMMENDATIONS.into()],
            fixtures::GUIDANCE,
        )
        .await?;
    who.client
        .set_status(
            &who.account,
            DEMO_CREDENTIAL,
            &guidance.record.consent_id,
            ConsentAction::Pause,
        )
        .await
        .map_err(|e| e.to_string())?;
    op_a.dispatcher.flush().await;

    let b = op_b.url();
    s.source
        .join(&b, &fixtures::w2e_registration(&s.urls[0], &s.keys))
        .await
        .map_err(|e| e.to_string())?;
    s.reasoner
        .join(&b, &fixtures::reasoner_registration(&s.urls[1], &s.keys))
        .await
        .map_err(|e| e.to_string())?;
    s.app
        .join(&b, &fixtures::health_app_registration(&s.urls[2], &s.keys))
        .await
        .map_err(|e| e.to_string())?;

    let doc = who
        .client
        .export(&who.account, DEMO_CREDENTIAL)
        .await
        .map_err(|e| e.to_string())?;
    let client_b = OperatorClient::new(&b);

    let mut tampered = doc.clone();
    tampered.consents[0]
        .record
        .purposes
        .insert("research".into());
    let refused = client_b.import(&tampered, "another credential").await;
    ensure!(
        matches!(refused, Err(Error::InvalidDocument(_))),
        "tampered import gave {refused:?}"
    );
    let mut resigned = doc.clone();
    resigned.exporting_operator_id = "op-unknown".into();
    let refused = client_b.import(&resigned, "another credential").await;
    ensure!(
        refused.is_err(),
        "document with a foreign exporter accepted"
    );

    let imported = client_b
        .import(&doc, "another credential")
        .await
        .map_err(|e| e.to_string())?;
    op_b.dispatcher.flush().await;
    let before = semantic(&who.client, &who.account, DEMO_CREDENTIAL).await?;
    let after = semantic(&client_b, &imported.account_id, "another credential").await?;
    ensure!(
        before == after,
        "consent sets differ:\n{before:?}\n{after:?}"
    );

    let old = ServiceClient::new(&s.urls[0])
        .fetch_all(&inference.token, "weight", Some(&window()))
        .await;
    ensure!(
        old == Err(Error::OperatorMigrated),
        "pre-migration token gave {old:?}"
    );
    let new_consent = imported.consent_map[&inference.record.consent_id].clone();
    let report = admin(&s.urls[1])
        .pull(&pull(&new_consent))
        .await
        .map_err(|e| e.to_string())?;
    ensure!(
        report.fetched > 0 && report.failures.is_empty(),
        "post-migration pull {report:?}"
    );
    op_a.shutdown().await;
    op_b.shutdown().await;
    Ok(format!(
        "{} consents equal after import; old token operator-migrated; tampered document invalid-document",
        after.len()
    ))
}

// ---- right to be forgotten ----

async fn right_to_be_forgotten() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("operator.json");
    let store = Arc::new(FileStore::open(&path).map_err(|e| e.to_string())?);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let op = operator_with("op-erase", 51, &[], store, clock.clone()).await;
    let s = services(&op.url(), clock).await;
    let who = subject(&op, &s).await?;
    let inference = who.inference(&op).await?;
    who.grant(
        &op,
        1,
        2,
        vec![fixtures::RECOMMENDATIONS.into()],
        fixtures::GUIDANCE,
    )
    .await?;
    admin(&s.urls[1])
        .pull(&pull(&inference.record.consent_id))
        .await
        .map_err(|e| e.to_string())?;

    let report = who
        .client
        .delete_account(&who.account, DEMO_CREDENTIAL)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(
        report.revoked_consents.len() == 2,
        "{} consents revoked",
        report.revoked_consents.len()
    );
    let notified: BTreeSet<_> = report
        .notifications
        .iter()
        .filter(|n| n.delivered)
        .map(|n| n.service_id.clone())
        .collect();
    let linked: BTreeSet<_> = who.links.iter().map(|l| l.service_id.clone()).collect();
    ensure!(
        notified == linked,
        "notified {notified:?} of linked {linked:?}"
    );
    let reasoner = admin(&s.urls[1]).state().await.map_err(|e| e.to_string())?;
    ensure!(
        reasoner["stored_observations"] == 0,
        "reasoner still holds {}",
        reasoner["stored_observations"]
    );

    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let tables: Tables = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let rows =
        tables.accounts.len() + tables.links.len() + tables.consents.len() + tables.receipts.len();
    ensure!(rows == 0, "{rows} account rows left");
    let mut identifiers = vec![who.account.to_string()];
    identifiers.extend(
        who.links
            .iter()
            .flat_map(|l| [l.link_id.to_string(), l.pseudonym.to_string()]),
    );
    identifiers.extend(report.revoked_consents.iter().map(|c| c.to_string()));
    let left: Vec<_> = identifiers
        .iter()
        .filter(|id| text.contains(id.as_str()))
        .collect();
    ensure!(left.is_empty(), "persistence still mentions {left:?}");
    op.shutdown().await;
    Ok(format!(
        "2 consents revoked, {}/{} linked services notified, 0 account rows and no identifiers left",
        notified.len(),
        linked.len()
    ))
}

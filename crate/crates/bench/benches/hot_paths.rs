use chrono::{Duration, TimeZone, Utc};
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use priaas::consent::{verify_token, KeyMaterial};
use priaas::datakit::{Intensity, Measurement, Observation};
use priaas::fixtures::run_fig5_on;
use priaas::flowsim::{run_priaas, Scenario};
use priaas::ids::Pseudonym;
use priaas::operator::{Operator, OperatorSettings};
use priaas::reasoner::{evaluate, HealthProfile, RuleWindow, Timeline};

fn token_verify(c: &mut Criterion) {
    let op = Operator::in_memory(OperatorSettings::new("op-bench"), KeyMaterial::from_seed(1));
    let ids = run_fig5_on(&op, &KeyMaterial::from_seed(2)).unwrap();
    let token = ids.tokens[0].clone();
    let key = op.verification_key();
    let now = Utc::now();
    c.bench_function("verify_token", |b| {
        b.iter(|| verify_token(black_box(token.as_bytes()), &key, now).unwrap())
    });
}

fn week(n: usize) -> Vec<Observation> {
    let start = Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap();
    (0..n)
        .map(|i| {
            let measurement = match i % 5 {
                0 => Measurement::Exercise {
                    duration_min: 30.0,
                    intensity: Intensity::Moderate,
                },
                1 => Measurement::Sleep {
                    efficiency_percent: 80.0 + (i % 15) as f64,
                },
                2 => Measurement::BloodPressure {
                    systolic_mmhg: 125.0 + (i % 30) as f64,
                    diastolic_mmhg: 85.0,
                },
                3 => Measurement::Weight { pounds: 180.0 },
                _ => Measurement::Height { inches: 68.0 },
            };
            Observation {
                id: format!("o{i}"),
                pseudonym: Pseudonym::from("ps_bench"),
                timestamp: start + Duration::minutes(i as i64 * 7),
                measurement,
            }
        })
        .collect()
}

fn rule_evaluation(c: &mut Criterion) {
    let timeline = Timeline::ingest(week(1000)).unwrap();
    let start = Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap();
    let window = RuleWindow::new(start, start + Duration::days(7)).unwrap();
    c.bench_function("evaluate 1000 observations", |b| {
        b.iter(|| {
            let profile = HealthProfile::derive(&timeline, &window);
            evaluate(black_box(&timeline), &window, &profile).unwrap()
        })
    });
}

fn flow_simulation(c: &mut Criterion) {
    let scenario = Scenario::fig5();
    c.bench_function("simulate fig5 flow", |b| {
        b.iter(|| run_priaas(black_box(&scenario)).unwrap())
    });
}

criterion_group!(benches, token_verify, rule_evaluation, flow_simulation);
criterion_main!(benches);

use std::fmt::Write as _;
use std::time::Instant;

use priaas::flowsim::Scenario;
use priaas::net::{LiveFailure, LiveRunner, StepRecord};
use priaas::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::exit;
use crate::output::emit;

#[derive(Serialize)]
struct ReceiptSummary {
    receipt_id: String,
    consent_id: String,
    source: String,
    sink: String,
    resource_types: Vec<String>,
    purposes: Vec<String>,
}

fn failed(json: bool, steps: &[StepRecord], failure: &LiveFailure) -> u8 {
    let body = json!({
        "ok": false,
        "failed_step": failure.name,
        "step": failure.step,
        "error_code": failure.error.code(),
        "message": failure.error.to_string(),
        "steps": steps,
    });
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&body).expect("output serializes")
        );
    } else {
        eprintln!(
            "demo failed at step {} \"{}\": [{}] {}",
            failure.step,
            failure.name,
            failure.error.code(),
            failure.error
        );
    }
    exit::for_error(&failure.error)
}

/// Runs the bundled health-app flow on loopback ports and prints steps, receipts and the
/// recommendations the health app received.
pub async fn fig5(json: bool, fail_operator_at: Option<&str>) -> Result<u8> {
    let started = Instant::now();
    let mut runner = LiveRunner::start(Scenario::fig5()).await?;
    let mut steps = Vec::new();
    loop {
        if fail_operator_at.is_some() && runner.next_step() == fail_operator_at {
            runner.stop_operator().await;
        }
        match runner.step().await {
            Ok(Some(step)) => {
                if !json {
                    println!(
                        "[{:>2}] {:<14}{:>8.1} ms",
                        step.index, step.name, step.elapsed_ms
                    );
                }
                steps.push(step);
            }
            Ok(None) => break,
            Err(failure) => {
                let code = failed(json, &steps, &failure);
                runner.shutdown().await;
                return Ok(code);
            }
        }
    }
    let run = match runner.finish().await {
        Ok(run) => run,
        Err(failure) => return Ok(failed(json, &steps, &failure)),
    };
    if run.recommendations.is_empty() {
        return Err(Error::Validation(
            "the health app received no recommendation".into(),
        ));
    }
    let receipts: Vec<ReceiptSummary> = run
        .receipts
        .iter()
        .map(|r| ReceiptSummary {
            receipt_id: r.receipt_id.to_string(),
            consent_id: r.consent_id.to_string(),
            source: r.data_source_name.clone(),
            sink: r.data_sink_name.clone(),
            resource_types: r.resource_types.clone(),
            purposes: r.purposes.iter().map(|p| p.purpose.clone()).collect(),
        })
        .collect();
    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    let body = json!({
        "ok": true,
        "scenario": run.scenario,
        "steps": run.steps,
        "messages": run.log.len(),
        "receipts": receipts,
        "recommendations": run.recommendations,
        "elapsed_ms": elapsed_ms,
    });
    emit(json, &body, || {
        let mut out = String::from("\nreceipts\n");
        for r in &receipts {
            let _ = writeln!(
                out,
                "  {}  {} -> {}  [{}]  for {}",
                r.receipt_id,
                r.source,
                r.sink,
                r.resource_types.join(", "),
                r.purposes.join(", ")
            );
        }
        out.push_str("recommendations\n");
        for rec in &run.recommendations {
            let _ = writeln!(out, "  {rec}");
        }
        let _ = write!(out, "{} messages, {elapsed_ms:.0} ms", run.log.len());
        out
    });
    Ok(exit::OK)
}

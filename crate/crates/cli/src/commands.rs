//! Thin clients over the operator and service APIs: parse, call, print.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use priaas::consent::{
    ConsentAction, ConsentReceipt, ConsentRecord, ResourceSet, TimeRange, VerificationKey,
};
use priaas::flowsim::{flow_report, Phase, Scenario, Verdict};
use priaas::ids::{ConsentId, Pseudonym, ServiceId};
use priaas::net::services::{AppFetch, PullRequest, SyncRequest};
use priaas::net::{OperatorClient, ServiceClient};
use priaas::operator::{ConsentView, GrantRequest, PortableAccountDocument};
use priaas::{Error, Result};
use serde_json::json;

use crate::args::{AccountCmd, Command, ConsentCmd, GrantArgs, ProxyCmd, ServiceCmd, Window};
use crate::config::{admin_token, check_url, read_credential, CliConfig, Credentials};
use crate::output::emit;
use crate::{demo, exit, serve};

pub async fn run(command: Command, cfg: &CliConfig) -> Result<u8> {
    match command {
        Command::Operator(cmd) => serve::operator(cmd, cfg).await,
        Command::Service(ServiceCmd::Serve {
            kind,
            listen,
            name,
            public_url,
            key_file,
        }) => serve::service(cfg, kind, &listen, name, public_url, key_file).await,
        Command::Service(ServiceCmd::Register {
            kind,
            endpoint,
            name,
            verification_key,
            key_out,
        }) => serve::register(cfg, kind, &endpoint, name, verification_key, key_out).await,
        Command::Service(ServiceCmd::List) => list_services(cfg).await,
        Command::Service(ServiceCmd::Pull {
            reasoner,
            consent,
            resources,
            window,
        }) => pull(cfg, &reasoner, consent, resources, window_range(&window)?).await,
        Command::Service(ServiceCmd::Fetch {
            app,
            consent,
            resource,
            window,
        }) => fetch(cfg, &app, consent, resource, window_range(&window)?).await,
        Command::Account(cmd) => account(cmd, cfg).await,
        Command::Link { service } => link(cfg, &service).await,
        Command::Links => links(cfg).await,
        Command::Consent(cmd) => consent(cmd, cfg).await,
        Command::Proxy(ProxyCmd::Sync {
            source,
            pseudonym,
            vendor_user,
            fixtures,
        }) => proxy_sync(cfg, &source, pseudonym, vendor_user, &fixtures).await,
        Command::Demo(crate::args::DemoCmd::Fig5 { fail_operator_at }) => {
            demo::fig5(cfg.json(), fail_operator_at.as_deref()).await
        }
        Command::FlowReport {
            scenario,
            transcripts,
        } => report(cfg.json(), scenario.as_deref(), transcripts.as_deref()),
        Command::ExitCodes => {
            let rows: Vec<_> = exit::KINDS
                .iter()
                .map(|k| json!({ "code": exit::for_code(k), "error_code": k }))
                .collect();
            emit(cfg.json(), &rows, exit::table);
            Ok(exit::OK)
        }
    }
}

fn client(cfg: &CliConfig) -> OperatorClient {
    OperatorClient::new(&cfg.operator)
}

/// The saved session, talking to the operator it was created at unless
/// --operator says otherwise.
fn session(cfg: &CliConfig) -> Result<(OperatorClient, Credentials)> {
    let creds = Credentials::load(&cfg.credentials)?;
    let base = if cfg.operator_set {
        cfg.operator.clone()
    } else {
        creds.operator.clone()
    };
    Ok((OperatorClient::new(base), creds))
}

async fn list_services(cfg: &CliConfig) -> Result<u8> {
    let entries = client(cfg).list_services().await?;
    emit(cfg.json(), &entries, || {
        let mut out = String::new();
        for e in &entries {
            let d = &e.descriptor;
            let _ = writeln!(
                out,
                "{}  {:<20} {:?}  {}",
                d.service_id, d.name, d.role, d.callback_endpoint
            );
        }
        out
    });
    Ok(exit::OK)
}

async fn account(cmd: AccountCmd, cfg: &CliConfig) -> Result<u8> {
    match cmd {
        AccountCmd::Create { name } => {
            let credential = read_credential()?;
            let account_id = client(cfg).create_account(&name, &credential).await?;
            Credentials {
                operator: cfg.operator.clone(),
                account_id: account_id.clone(),
                credential,
            }
            .save(&cfg.credentials)?;
            emit(
                cfg.json(),
                &json!({ "account_id": account_id, "credentials": cfg.credentials }),
                || {
                    format!(
                        "account {account_id}\ncredentials saved to {}",
                        cfg.credentials.display()
                    )
                },
            );
        }
        AccountCmd::Export { out } => {
            let (client, creds) = session(cfg)?;
            let doc = client.export(&creds.account_id, &creds.credential).await?;
            let text = serde_json::to_string_pretty(&doc).expect("document serializes");
            std::fs::write(&out, text)
                .map_err(|e| Error::Storage(format!("{}: {e}", out.display())))?;
            emit(
                cfg.json(),
                &json!({ "file": out, "exporting_operator_id": doc.exporting_operator_id, "consents": doc.consents.len() }),
                || {
                    format!(
                        "exported {} consents and {} links to {}",
                        doc.consents.len(),
                        doc.links.len(),
                        out.display()
                    )
                },
            );
        }
        AccountCmd::Import { file } => {
            let doc = read_document(&file)?;
            let credential = read_credential()?;
            let result = client(cfg).import(&doc, &credential).await?;
            Credentials {
                operator: cfg.operator.clone(),
                account_id: result.account_id.clone(),
                credential,
            }
            .save(&cfg.credentials)?;
            emit(cfg.json(), &result, || {
                let mut out = format!("account {}\n", result.account_id);
                for (old, new) in &result.consent_map {
                    let _ = writeln!(out, "consent {old} -> {new}");
                }
                let _ = write!(out, "credentials saved to {}", cfg.credentials.display());
                out
            });
        }
        AccountCmd::Delete => {
            let (client, creds) = session(cfg)?;
            let report = client
                .delete_account(&creds.account_id, &creds.credential)
                .await?;
            let _ = std::fs::remove_file(&cfg.credentials);
            emit(cfg.json(), &report, || {
                let mut out = format!(
                    "deleted {}: {} consents revoked, {} links and {} receipts purged\n",
                    report.account_id,
                    report.revoked_consents.len(),
                    report.purged.links,
                    report.purged.receipts
                );
                for n in &report.notifications {
                    let state = if n.delivered { "notified" } else { "pending" };
                    let _ = writeln!(out, "  {state:<9} {} ({})", n.service_name, n.service_id);
                }
                out
            });
        }
        AccountCmd::Verify { file, key } => {
            let doc = read_document(&file)?;
            let key = match key {
                Some(text) => VerificationKey::from_base64(&text)?,
                None => {
                    let info = client(cfg).info().await?;
                    if info.operator_id != doc.exporting_operator_id {
                        return Err(Error::InvalidArgument(format!(
                            "{} is {}, not the exporting operator {}; pass --key",
                            cfg.operator, info.operator_id, doc.exporting_operator_id
                        )));
                    }
                    info.verification_key
                }
            };
            doc.verify(&key)?;
            emit(
                cfg.json(),
                &json!({ "valid": true, "exporting_operator_id": doc.exporting_operator_id }),
                || {
                    format!(
                        "signature valid (exported by {})",
                        doc.exporting_operator_id
                    )
                },
            );
        }
    }
    Ok(exit::OK)
}

fn read_document(path: &Path) -> Result<PortableAccountDocument> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    PortableAccountDocument::from_json(&bytes)
}

async fn link(cfg: &CliConfig, service: &str) -> Result<u8> {
    let (client, creds) = session(cfg)?;
    let link = client
        .link(
            &creds.account_id,
            &creds.credential,
            &ServiceId::new(service),
        )
        .await?;
    emit(cfg.json(), &link, || {
        format!(
            "link {} to {} (pseudonym {})",
            link.link_id, link.service_id, link.pseudonym
        )
    });
    Ok(exit::OK)
}

async fn links(cfg: &CliConfig) -> Result<u8> {
    let (client, creds) = session(cfg)?;
    let links = client.links(&creds.account_id, &creds.credential).await?;
    emit(cfg.json(), &links, || {
        let mut out = String::new();
        for l in &links {
            let _ = writeln!(
                out,
                "{}  {}  {:?}  {}",
                l.link_id, l.service_id, l.status, l.pseudonym
            );
        }
        out
    });
    Ok(exit::OK)
}

fn timestamp(text: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidArgument(format!("bad timestamp {text:?}: {e}")))
}

async fn consent(cmd: ConsentCmd, cfg: &CliConfig) -> Result<u8> {
    let (client, creds) = session(cfg)?;
    let (account, credential) = (&creds.account_id, creds.credential.as_str());
    match cmd {
        ConsentCmd::Grant(args) => {
            let request = grant_request(&client, &creds, args).await?;
            let grant = client.grant(account, credential, &request).await?;
            // the token is for the sink, not the account holder
            let shown = json!({ "record": grant.record, "receipt": grant.receipt });
            emit(cfg.json(), &shown, || {
                format!(
                    "consent {}\nreceipt {}\n{}",
                    grant.record.consent_id,
                    grant.receipt.receipt_id,
                    record_line(&grant.record)
                )
            });
        }
        ConsentCmd::Pause { consent } => {
            return status(cfg, &client, &creds, consent, ConsentAction::Pause).await
        }
        ConsentCmd::Resume { consent } => {
            return status(cfg, &client, &creds, consent, ConsentAction::Resume).await
        }
        ConsentCmd::Revoke { consent } => {
            return status(cfg, &client, &creds, consent, ConsentAction::Revoke).await
        }
        ConsentCmd::List => {
            let views = client.list_consents(account, credential).await?;
            emit(cfg.json(), &views, || views.iter().map(view_line).collect());
        }
        ConsentCmd::Receipt { consent } => {
            let receipt = client
                .receipt(account, credential, &ConsentId::new(consent))
                .await?;
            emit(cfg.json(), &receipt, || receipt_text(&receipt));
        }
    }
    Ok(exit::OK)
}

/// Resolves service ids to the account's links; the operator does the checking.
async fn grant_request(
    client: &OperatorClient,
    creds: &Credentials,
    args: GrantArgs,
) -> Result<GrantRequest> {
    let links = client.links(&creds.account_id, &creds.credential).await?;
    let link_for = |service: &str| {
        links
            .iter()
            .find(|l| l.service_id.as_str() == service)
            .map(|l| l.link_id.clone())
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "no link to service {service}; run `priaas link` first"
                ))
            })
    };
    let mut resource_set = ResourceSet::new(args.resources.iter().map(String::as_str));
    if let (Some(from), Some(to)) = (&args.from, &args.to) {
        resource_set = resource_set.with_range(TimeRange::new(timestamp(from)?, timestamp(to)?)?);
    }
    Ok(GrantRequest {
        source_link_id: link_for(&args.source)?,
        sink_link_id: link_for(&args.sink)?,
        resource_set,
        purposes: args.purposes.into_iter().collect::<BTreeSet<_>>(),
        expires_at: args.expires_at.as_deref().map(timestamp).transpose()?,
    })
}

async fn status(
    cfg: &CliConfig,
    client: &OperatorClient,
    creds: &Credentials,
    consent: String,
    action: ConsentAction,
) -> Result<u8> {
    let record = client
        .set_status(
            &creds.account_id,
            &creds.credential,
            &ConsentId::new(consent),
            action,
        )
        .await?;
    emit(cfg.json(), &record, || record_line(&record));
    Ok(exit::OK)
}

fn record_line(r: &ConsentRecord) -> String {
    format!(
        "{}  {:?}  v{}  {}",
        r.consent_id,
        r.status,
        r.version,
        r.resource_set
            .resource_types
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    )
}

fn view_line(v: &ConsentView) -> String {
    format!(
        "{}  {} -> {}  purposes {}\n",
        record_line(&v.record),
        v.source.name,
        v.sink.name,
        v.record
            .purposes
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(",")
    )
}

pub fn receipt_text(r: &ConsentReceipt) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "receipt      {}", r.receipt_id);
    let _ = writeln!(out, "consent      {}", r.consent_id);
    let _ = writeln!(out, "issued       {}", r.timestamp.to_rfc3339());
    let _ = writeln!(out, "operator     {} ({})", r.operator_id, r.jurisdiction);
    let _ = writeln!(out, "source       {}", r.data_source_name);
    let _ = writeln!(out, "sink         {}", r.data_sink_name);
    let _ = writeln!(out, "resources    {}", r.resource_types.join(", "));
    for p in &r.purposes {
        let _ = writeln!(out, "purpose      {}: {}", p.purpose, p.description);
    }
    let _ = writeln!(out, "collection   {}", r.collection_method);
    let _ = writeln!(out, "signed       {}", r.signature.is_some());
    out
}

fn admin_client(url: &str) -> Result<ServiceClient> {
    Ok(ServiceClient::new(check_url(url)?).with_admin_token(admin_token()))
}

fn window_range(w: &Window) -> Result<Option<TimeRange>> {
    match (&w.from, &w.to) {
        (Some(from), Some(to)) => Ok(Some(TimeRange::new(timestamp(from)?, timestamp(to)?)?)),
        _ => Ok(None),
    }
}

async fn pull(
    cfg: &CliConfig,
    reasoner: &str,
    consent: String,
    resources: Vec<String>,
    window: Option<TimeRange>,
) -> Result<u8> {
    let report = admin_client(reasoner)?
        .pull(&PullRequest {
            consent_id: ConsentId::new(consent),
            resource_types: resources,
            window,
        })
        .await?;
    emit(cfg.json(), &report, || {
        let mut out = format!(
            "pulled {} observations under {}\n",
            report.fetched, report.consent_id
        );
        for f in &report.failures {
            let _ = writeln!(
                out,
                "  {}: {} ({})",
                f.resource_type, f.error_code, f.message
            );
        }
        out
    });
    Ok(exit::OK)
}

async fn fetch(
    cfg: &CliConfig,
    app: &str,
    consent: String,
    resource: String,
    window: Option<TimeRange>,
) -> Result<u8> {
    let response = admin_client(app)?
        .app_fetch(&AppFetch {
            consent_id: ConsentId::new(consent),
            resource_type: resource,
            window,
        })
        .await?;
    emit(cfg.json(), &response, || {
        let mut out = String::new();
        for f in &response.facts {
            let _ = writeln!(out, "fact            {:?}", f.name);
        }
        for r in response.recommendations.iter().flatten() {
            let _ = writeln!(out, "recommendation  {:?}", r.name);
        }
        out
    });
    Ok(exit::OK)
}

async fn proxy_sync(
    cfg: &CliConfig,
    source: &str,
    pseudonym: String,
    vendor_user: String,
    fixtures: &[std::path::PathBuf],
) -> Result<u8> {
    let fixtures = if fixtures.is_empty() {
        None
    } else {
        let mut loaded = Vec::new();
        for path in fixtures {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
            loaded.push(
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
            );
        }
        Some(loaded)
    };
    let report = admin_client(source)?
        .sync(&SyncRequest {
            pseudonyms: [(vendor_user, Pseudonym::new(pseudonym))].into(),
            fixtures,
        })
        .await?;
    emit(cfg.json(), &report, || {
        let mut out = String::new();
        for (vendor, c) in &report.vendors {
            let _ = writeln!(
                out,
                "{vendor:<20} records {:>5}  ingested {:>5}  skipped {:>4}  unknown user {:>4}",
                c.records, c.ingested, c.skipped, c.unknown_user
            );
        }
        out
    });
    Ok(exit::OK)
}

fn report(json: bool, scenario: Option<&Path>, transcripts: Option<&Path>) -> Result<u8> {
    let scenario = match scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::fig5(),
    };
    let (priaas, baseline, report) = flow_report(&scenario)?;
    if let Some(dir) = transcripts {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Storage(format!("{}: {e}", dir.display())))?;
        for (name, t) in [("priaas.json", &priaas), ("baseline.json", &baseline)] {
            let path = dir.join(name);
            std::fs::write(&path, t.to_json())
                .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
        }
    }
    emit(json, &report, || {
        let mut out = format!(
            "scenario {}\n{:<14}{:>8}{:>10}\n",
            report.scenario, "phase", "priaas", "baseline"
        );
        for phase in Phase::ALL {
            let name = serde_json::to_value(phase)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{name:<14}{:>8}{:>10}",
                report.priaas.get(&phase).copied().unwrap_or(0),
                report.baseline.get(&phase).copied().unwrap_or(0)
            );
        }
        let _ = writeln!(
            out,
            "consent + first access: {} vs {} (delta {})",
            report.priaas_total, report.baseline_total, report.delta
        );
        let _ = write!(out, "verdict {:?}", report.verdict);
        out.replace("Pass", "PASS").replace("Fail", "FAIL")
    });
    Ok(match report.verdict {
        Verdict::Pass => exit::OK,
        Verdict::Fail => exit::FLOW_FAIL,
    })
}

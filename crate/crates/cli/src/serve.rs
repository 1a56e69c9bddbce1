//! Long-running processes: the operator and the three reference services.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use priaas::clock::SystemClock;
use priaas::consent::keys::KeyFile;
use priaas::consent::KeyMaterial;
use priaas::fixtures;
use priaas::ids::RandomIds;
use priaas::net::{
    bind, local_url, AppService, OperatorClient, OperatorServer, ReasonerHttp, ServiceContext,
    SourceService,
};
use priaas::operator::{
    FileStore, MemoryStore, Operator, OperatorConfig, ServiceRegistration, Store,
};
use priaas::{Error, Result};
use serde_json::json;

use crate::args::{OperatorCmd, ServiceKind};
use crate::config::{admin_token, check_url, write_private, CliConfig};
use crate::exit;
use crate::output::emit;

/// Reads the key file, or creates one readable by the owner only.
pub fn load_or_create_keys(path: &Path) -> Result<KeyMaterial> {
    match std::fs::read(path) {
        Ok(bytes) => {
            let file: KeyFile = serde_json::from_slice(&bytes)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
            KeyMaterial::from_key_file(&file)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let keys = KeyMaterial::generate(&mut rand::rngs::OsRng);
            let text = serde_json::to_vec_pretty(&keys.to_key_file()).expect("key file serializes");
            write_private(path, &text)?;
            tracing::info!(path = %path.display(), "generated key file");
            Ok(keys)
        }
        Err(e) => Err(Error::Storage(format!("{}: {e}", path.display()))),
    }
}

async fn interrupted() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!("waiting for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}

pub async fn operator(cmd: OperatorCmd, cli: &CliConfig) -> Result<u8> {
    let OperatorCmd::Serve {
        operator_config,
        retry_secs,
    } = cmd;
    let mut cfg = OperatorConfig::load(&operator_config)?;
    cfg.apply_env(|k| std::env::var(k).ok());
    let keys = load_or_create_keys(&cfg.key_path)?;
    let store: Arc<dyn Store> = match &cfg.persistence_path {
        Some(path) => Arc::new(FileStore::open(path)?),
        None => Arc::new(MemoryStore::new()),
    };
    let op = Arc::new(Operator::new(
        cfg.settings(),
        keys,
        store,
        Arc::new(SystemClock),
        Arc::new(RandomIds),
    ));
    let info = op.info();
    let server =
        OperatorServer::start_with(op, bind(&cfg.listen).await?, None, &cfg.allowed_origins)?
            .with_background_delivery(Duration::from_secs(retry_secs.max(1)));
    let url = server.url();
    emit(
        cli.json(),
        &json!({ "operator_id": info.operator_id, "url": url, "verification_key": info.verification_key }),
        || {
            format!(
                "operator {} listening on {url}\nverification key {}",
                info.operator_id,
                info.verification_key.to_base64()
            )
        },
    );
    interrupted().await;
    server.shutdown().await;
    Ok(exit::OK)
}

fn registration(
    kind: ServiceKind,
    endpoint: &str,
    keys: &KeyMaterial,
    name: Option<String>,
) -> ServiceRegistration {
    let mut reg = match kind {
        ServiceKind::Source => fixtures::w2e_registration(endpoint, keys),
        ServiceKind::Reasoner => fixtures::reasoner_registration(endpoint, keys),
        ServiceKind::App => fixtures::health_app_registration(endpoint, keys),
    };
    if let Some(name) = name {
        reg.name = name;
    }
    reg
}

pub async fn service(
    cli: &CliConfig,
    kind: ServiceKind,
    listen: &str,
    name: Option<String>,
    public_url: Option<String>,
    key_file: Option<PathBuf>,
) -> Result<u8> {
    let keys = match key_file {
        Some(path) => load_or_create_keys(&path)?,
        None => KeyMaterial::generate(&mut rand::rngs::OsRng),
    };
    let endpoint = public_url
        .as_deref()
        .map(check_url)
        .transpose()?
        .unwrap_or_default();
    let reg = registration(kind, &endpoint, &keys, name);
    let label = reg.name.clone();
    // an unset token locks the admin routes behind a random one nobody knows
    let token = admin_token().unwrap_or_else(|| {
        tracing::warn!("PRIAAS_ADMIN_TOKEN is not set; admin routes are closed");
        hex_token()
    });
    let ctx = ServiceContext::new(&label, Arc::new(SystemClock)).with_admin_token(Some(&token));
    let listener = bind(listen).await?;
    let url = local_url(&listener)?;
    let (service_id, server) = match kind {
        ServiceKind::Source => {
            let (s, server) = SourceService::launch(ctx, listener, &cli.operator, &reg).await?;
            (s.source.service_id().clone(), server)
        }
        ServiceKind::Reasoner => {
            let (s, server) = ReasonerHttp::launch(ctx, listener, &cli.operator, &reg).await?;
            (s.reasoner.service_id().clone(), server)
        }
        ServiceKind::App => {
            let (s, server) = AppService::launch(ctx, listener, &cli.operator, &reg).await?;
            (s.sink.service_id().clone(), server)
        }
    };
    emit(
        cli.json(),
        &json!({ "service_id": service_id, "name": label, "url": url, "operator": cli.operator }),
        || {
            format!(
                "{label} ({service_id}) listening on {url}, registered at {}",
                cli.operator
            )
        },
    );
    interrupted().await;
    server.shutdown().await;
    Ok(exit::OK)
}

pub async fn register(
    cli: &CliConfig,
    kind: ServiceKind,
    endpoint: &str,
    name: Option<String>,
    verification_key: Option<String>,
    key_out: Option<PathBuf>,
) -> Result<u8> {
    let endpoint = check_url(endpoint)?;
    let keys = KeyMaterial::generate(&mut rand::rngs::OsRng);
    let mut reg = registration(kind, &endpoint, &keys, name);
    match (verification_key, key_out) {
        (Some(key), _) => reg.verification_key = key,
        (None, Some(path)) => {
            let text = serde_json::to_vec_pretty(&keys.to_key_file()).expect("key file serializes");
            write_private(&path, &text)?;
        }
        (None, None) => {
            tracing::warn!("no --key-out given; the generated service key is discarded")
        }
    }
    let registered = OperatorClient::new(&cli.operator)
        .register_service(&reg)
        .await?;
    let d = &registered.entry.descriptor;
    emit(cli.json(), &registered, || {
        format!(
            "service {} ({})\nsecret {}\nthe secret is shown only once",
            d.service_id, d.name, registered.service_secret
        )
    });
    Ok(exit::OK)
}

fn hex_token() -> String {
    use rand::RngCore;
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#![allow(dead_code)]

use std::sync::Arc;

use priaas::clock::{Clock, SystemClock};
use priaas::consent::{KeyMaterial, VerificationKey};
use priaas::fixtures;
use priaas::ids::{OperatorId, RandomIds};
use priaas::net::{
    bind, local_url, AppService, OperatorServer, ReasonerHttp, Server, ServiceContext,
    SourceService,
};
use priaas::operator::{MemoryStore, Operator, OperatorSettings, Store};

pub const ADMIN: &str = "cli-test-admin-token";

pub async fn operator(
    id: &str,
    seed: u64,
    peers: &[(OperatorId, VerificationKey)],
) -> OperatorServer {
    operator_with(
        id,
        seed,
        peers,
        Arc::new(MemoryStore::new()),
        Arc::new(SystemClock),
    )
    .await
}

/// No background delivery: notices go out when a test flushes.
pub async fn operator_with(
    id: &str,
    seed: u64,
    peers: &[(OperatorId, VerificationKey)],
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
) -> OperatorServer {
    let mut settings = OperatorSettings::new(id);
    settings.trusted_peers = peers.iter().cloned().collect();
    let op = Arc::new(Operator::new(
        settings,
        KeyMaterial::from_seed(seed),
        store,
        clock,
        Arc::new(RandomIds),
    ));
    OperatorServer::start(op, bind("127.0.0.1:0").await.unwrap(), None).unwrap()
}

pub struct Services {
    pub source: SourceService,
    pub reasoner: ReasonerHttp,
    pub app: AppService,
    /// Source, reasoner, app.
    pub urls: [String; 3],
    pub keys: KeyMaterial,
    pub servers: Vec<Server>,
}

pub async fn services(operator_url: &str, clock: Arc<dyn Clock>) -> Services {
    let keys = KeyMaterial::from_seed(7);
    let ctx = |label: &str| ServiceContext::new(label, clock.clone()).with_admin_token(Some(ADMIN));
    let l1 = bind("127.0.0.1:0").await.unwrap();
    let l2 = bind("127.0.0.1:0").await.unwrap();
    let l3 = bind("127.0.0.1:0").await.unwrap();
    let urls = [
        local_url(&l1).unwrap(),
        local_url(&l2).unwrap(),
        local_url(&l3).unwrap(),
    ];
    let (source, s1) = SourceService::launch(
        ctx("w2e"),
        l1,
        operator_url,
        &fixtures::w2e_registration("", &keys),
    )
    .await
    .unwrap();
    let (reasoner, s2) = ReasonerHttp::launch(
        ctx("reasoner"),
        l2,
        operator_url,
        &fixtures::reasoner_registration("", &keys),
    )
    .await
    .unwrap();
    let (app, s3) = AppService::launch(
        ctx("app"),
        l3,
        operator_url,
        &fixtures::health_app_registration("", &keys),
    )
    .await
    .unwrap();
    Services {
        source,
        reasoner,
        app,
        urls,
        keys,
        servers: vec![s1, s2, s3],
    }
}

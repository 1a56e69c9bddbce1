#![allow(dead_code)]

use std::sync::Arc;

use priaas::clock::SystemClock;
use priaas::consent::{KeyMaterial, ResourceSet, ServiceLink, VerificationKey};
use priaas::fixtures::{self, DEMO_CREDENTIAL, DEMO_VENDOR_USER, HEALTH_INFERENCE};
use priaas::ids::{AccountId, OperatorId};
use priaas::net::services::SyncRequest;
use priaas::net::{
    bind, AppService, OperatorClient, OperatorServer, ReasonerHttp, Server, ServiceClient,
    ServiceContext, SourceService,
};
use priaas::operator::{Grant, GrantRequest, Operator, OperatorSettings};

pub const ADMIN: &str = "admin-token-for-tests";

pub async fn operator(
    id: &str,
    seed: u64,
    peers: &[(OperatorId, VerificationKey)],
) -> OperatorServer {
    let mut settings = OperatorSettings::new(id);
    settings.trusted_peers = peers.iter().cloned().collect();
    let op = Arc::new(Operator::in_memory(settings, KeyMaterial::from_seed(seed)));
    OperatorServer::start(op, bind("127.0.0.1:0").await.unwrap(), None).unwrap()
}

fn ctx(label: &str) -> ServiceContext {
    ServiceContext::new(label, Arc::new(SystemClock)).with_admin_token(Some(ADMIN))
}

pub fn admin(url: &str) -> ServiceClient {
    ServiceClient::new(url).with_admin_token(Some(ADMIN.into()))
}

/// A source, a reasoner and an app registered with one operator, and a
/// subject linked to all three with vendor data loaded at the source.
pub struct Stack {
    pub client: OperatorClient,
    pub source: SourceService,
    pub reasoner: ReasonerHttp,
    pub app: AppService,
    pub source_url: String,
    pub reasoner_url: String,
    pub app_url: String,
    pub account: AccountId,
    pub links: [ServiceLink; 3],
    pub servers: Vec<Server>,
    pub keys: KeyMaterial,
}

pub async fn stack(op: &OperatorServer) -> Stack {
    let keys = KeyMaterial::from_seed(99);
    let url = op.url();

    let l = bind("127.0.0.1:0").await.unwrap();
    let source_url = priaas::net::local_url(&l).unwrap();
    let (source, s1) =
        SourceService::launch(ctx("w2e"), l, &url, &fixtures::w2e_registration("", &keys))
            .await
            .unwrap();
    let l = bind("127.0.0.1:0").await.unwrap();
    let reasoner_url = priaas::net::local_url(&l).unwrap();
    let (reasoner, s2) = ReasonerHttp::launch(
        ctx("reasoner"),
        l,
        &url,
        &fixtures::reasoner_registration("", &keys),
    )
    .await
    .unwrap();
    let l = bind("127.0.0.1:0").await.unwrap();
    let app_url = priaas::net::local_url(&l).unwrap();
    let (app, s3) = AppService::launch(
        ctx("health-app"),
        l,
        &url,
        &fixtures::health_app_registration("", &keys),
    )
    .await
    .unwrap();

    let client = OperatorClient::new(&url);
    let account = client
        .create_account("alice", DEMO_CREDENTIAL)
        .await
        .unwrap();
    let mut links = Vec::new();
    for id in [
        source.source.service_id(),
        reasoner.reasoner.service_id(),
        app.sink.service_id(),
    ] {
        links.push(client.link(&account, DEMO_CREDENTIAL, id).await.unwrap());
    }
    let links: [ServiceLink; 3] = links.try_into().unwrap();
    admin(&source_url)
        .sync(&SyncRequest {
            pseudonyms: [(DEMO_VENDOR_USER.to_string(), links[0].pseudonym.clone())].into(),
            fixtures: None,
        })
        .await
        .unwrap();
    Stack {
        client,
        source,
        reasoner,
        app,
        source_url,
        reasoner_url,
        app_url,
        account,
        links,
        servers: vec![s1, s2, s3],
        keys,
    }
}

impl Stack {
    pub async fn grant(
        &self,
        op: &OperatorServer,
        from: usize,
        to: usize,
        types: &[&str],
        purpose: &str,
    ) -> Grant {
        let grant = self
            .client
            .grant(
                &self.account,
                DEMO_CREDENTIAL,
                &GrantRequest {
                    source_link_id: self.links[from].link_id.clone(),
                    sink_link_id: self.links[to].link_id.clone(),
                    resource_set: ResourceSet::new(types.iter().copied()),
                    purposes: [purpose.to_string()].into(),
                    expires_at: None,
                },
            )
            .await
            .unwrap();
        op.dispatcher.flush().await;
        grant
    }

    /// Source to reasoner for every resource type.
    pub async fn inference_grant(&self, op: &OperatorServer) -> Grant {
        let all: Vec<String> = fixtures::all_resource_types().into_iter().collect();
        let all: Vec<&str> = all.iter().map(String::as_str).collect();
        self.grant(op, 0, 1, &all, HEALTH_INFERENCE).await
    }

    /// Reasoner to app for recommendations.
    pub async fn guidance_grant(&self, op: &OperatorServer) -> Grant {
        self.grant(op, 1, 2, &[fixtures::RECOMMENDATIONS], fixtures::GUIDANCE)
            .await
    }
}

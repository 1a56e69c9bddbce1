//! The reasoner as a networked party: a sink toward data sources and a
//! source of facts and recommendations toward applications.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::rules::{evaluate, Evaluation};
use super::{Fact, HealthProfile, Recommendation, RuleWindow, Timeline};
use crate::consent::token::decode_unverified;
use crate::consent::TokenClaims;
use crate::datakit::sink::fetch_all;
use crate::datakit::{
    AccessGuard, Authorization, DataRequest, DataSink, HeldToken, Inbox, Observation, OperatorKeys,
    SinkNotice, SourceNotice,
};
use crate::error::{Error, Result};
use crate::fixtures::{FACTS, HEALTH_INFERENCE, RECOMMENDATIONS};
use crate::ids::{ConsentId, EventId, Pseudonym, ServiceId};
use crate::operator::{Introspection, NotificationEvent};

/// Window used when a request names none.
pub const DEFAULT_WINDOW_DAYS: i64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestBatch {
    pub consent_id: ConsentId,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub consent_id: ConsentId,
    pub pseudonym: Pseudonym,
    pub stored: usize,
    pub timeline_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerNoticeAck {
    pub event_id: EventId,
    pub applied: bool,
    pub purged: usize,
}

/// Body of `GET /recommendations` and `GET /facts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub resource_type: String,
    pub pseudonym: Pseudonym,
    pub window: RuleWindow,
    pub facts: Vec<Fact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendations: Option<Vec<Recommendation>>,
}

#[derive(Debug)]
pub struct ReasonerService {
    pub sink: DataSink,
    pub guard: AccessGuard,
    pub keys: Arc<OperatorKeys>,
    inbox: Inbox,
    /// Own pseudonym of the subject behind each inbound consent.
    subjects: RwLock<BTreeMap<ConsentId, Pseudonym>>,
    timelines: RwLock<BTreeMap<Pseudonym, Arc<Timeline>>>,
}

impl ReasonerService {
    pub fn new(service_id: ServiceId, keys: Arc<OperatorKeys>, cache_ttl: Duration) -> Self {
        Self {
            sink: DataSink::new(service_id.clone(), keys.clone()),
            guard: AccessGuard::new(service_id, cache_ttl),
            keys,
            inbox: Inbox::new(),
            subjects: RwLock::new(BTreeMap::new()),
            timelines: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn service_id(&self) -> &ServiceId {
        self.sink.service_id()
    }

    pub fn add_identity(&self, id: ServiceId) {
        self.sink.add_identity(id.clone());
        self.guard.add_identity(id);
    }

    /// A held token usable for inference.
    fn inference_token(&self, consent_id: &ConsentId) -> Result<HeldToken> {
        let Some(held) = self.sink.token(consent_id) else {
            return Err(match self.sink.status(consent_id) {
                Some(_) => Error::ConsentInactive,
                None => Error::Forbidden(format!("no token held for consent {consent_id}")),
            });
        };
        let (claims, _, _) = decode_unverified(held.token.as_bytes())?;
        if !claims.purposes.contains(HEALTH_INFERENCE) {
            return Err(Error::Forbidden(format!(
                "consent {consent_id} does not cover {HEALTH_INFERENCE}"
            )));
        }
        Ok(held)
    }

    /// Stores observations fetched under `consent_id`, re-keyed to this
    /// service's own pseudonym, and rebuilds the subject's timeline.
    pub fn ingest(&self, batch: IngestBatch) -> Result<IngestReceipt> {
        let held = self.inference_token(&batch.consent_id)?;
        let (claims, _, _) = decode_unverified(held.token.as_bytes())?;
        let mut origin: Option<&Pseudonym> = None;
        for o in &batch.observations {
            o.validate()?;
            if !held
                .resource_types
                .iter()
                .any(|r| r == o.resource_type().as_str())
            {
                return Err(Error::OutOfScope);
            }
            match origin {
                Some(p) if p != &o.pseudonym => {
                    return Err(Error::InvalidArgument(
                        "observations belong to more than one pseudonym".into(),
                    ))
                }
                _ => origin = Some(&o.pseudonym),
            }
        }
        // only data about the consenting subject, as the source knows them
        if origin.is_some_and(|p| p != &claims.pseudonym) {
            return Err(Error::Validation(
                "observations are for another subject".into(),
            ));
        }
        let rekeyed: Vec<Observation> = batch
            .observations
            .into_iter()
            .map(|mut o| {
                o.pseudonym = held.own_pseudonym.clone();
                o
            })
            .collect();
        let stored = self.sink.store(&batch.consent_id, rekeyed)?;
        self.subjects
            .write()
            .unwrap()
            .insert(batch.consent_id.clone(), held.own_pseudonym.clone());
        self.rebuild(&held.own_pseudonym)?;
        Ok(IngestReceipt {
            consent_id: batch.consent_id,
            pseudonym: held.own_pseudonym.clone(),
            stored,
            timeline_len: self.timeline(&held.own_pseudonym).len(),
        })
    }

    /// Fetches every resource type the consent covers through `load` and
    /// ingests the result. `load` gets the held token, the resource type and
    /// the page cursor and returns a raw data page body.
    pub fn pull(
        &self,
        consent_id: &ConsentId,
        load: &mut dyn FnMut(&HeldToken, &str, Option<&str>) -> Result<Vec<u8>>,
    ) -> Result<IngestReceipt> {
        let held = self.inference_token(consent_id)?;
        let mut observations = Vec::new();
        for rt in &held.resource_types {
            observations.extend(fetch_all(rt, |cursor| load(&held, rt, cursor), None)?);
        }
        self.ingest(IngestBatch {
            consent_id: consent_id.clone(),
            observations,
        })
    }

    /// Replaces the timeline for `pseudonym` with one built from all data
    /// currently held for it.
    fn rebuild(&self, pseudonym: &Pseudonym) -> Result<()> {
        let consents: Vec<ConsentId> = self
            .subjects
            .read()
            .unwrap()
            .iter()
            .filter(|(_, p)| *p == pseudonym)
            .map(|(c, _)| c.clone())
            .collect();
        let timeline = Timeline::ingest(consents.iter().flat_map(|c| self.sink.query(c)))?;
        let mut timelines = self.timelines.write().unwrap();
        if timeline.is_empty() {
            timelines.remove(pseudonym);
        } else {
            timelines.insert(pseudonym.clone(), Arc::new(timeline));
        }
        Ok(())
    }

    pub fn timeline(&self, pseudonym: &Pseudonym) -> Arc<Timeline> {
        self.timelines
            .read()
            .unwrap()
            .get(pseudonym)
            .cloned()
            .unwrap_or_default()
    }

    pub fn pseudonyms(&self) -> Vec<Pseudonym> {
        self.timelines.read().unwrap().keys().cloned().collect()
    }

    pub fn evaluate_for(&self, pseudonym: &Pseudonym, window: &RuleWindow) -> Result<Evaluation> {
        let timeline = self.timeline(pseudonym);
        let profile = HealthProfile::derive(&timeline, window);
        evaluate(&timeline, window, &profile)
    }

    /// Applies an operator notice to both roles.
    pub fn apply_notice(
        &self,
        event: &NotificationEvent,
        now: DateTime<Utc>,
    ) -> Result<ReasonerNoticeAck> {
        let applied = self.inbox.accept(&self.keys, event)?;
        let mut ack = ReasonerNoticeAck {
            event_id: event.event_id.clone(),
            applied,
            purged: 0,
        };
        if !applied {
            return Ok(ack);
        }
        let mut touched: BTreeSet<Pseudonym> = BTreeSet::new();
        if let SourceNotice::Erased(p) = self.guard.apply_notice(event, now) {
            touched.insert(p);
        }
        match self.sink.apply_verified(event) {
            SinkNotice::Purged {
                consent_ids,
                deleted,
                ..
            } => {
                ack.purged = deleted;
                let mut subjects = self.subjects.write().unwrap();
                for c in &consent_ids {
                    touched.extend(subjects.remove(c));
                }
            }
            SinkNotice::Migrated {
                old,
                new,
                consent_map,
            } => {
                let mut subjects = self.subjects.write().unwrap();
                for (from, to) in &consent_map {
                    if subjects.remove(from).is_some() {
                        subjects.insert(to.clone(), new.clone());
                    }
                }
                touched.insert(old);
                touched.insert(new);
            }
            _ => {}
        }
        for p in &touched {
            self.rebuild(p)?;
        }
        Ok(ack)
    }

    pub fn authorize(&self, request: &DataRequest, now: DateTime<Utc>) -> Result<Authorization> {
        self.guard.authorize(
            &self.keys,
            &request.token,
            &request.resource_type,
            request.time_range.as_ref(),
            now,
        )
    }

    pub fn complete(
        &self,
        claims: TokenClaims,
        request: &DataRequest,
        introspection: Result<Introspection>,
        now: DateTime<Utc>,
    ) -> Result<TokenClaims> {
        self.guard.complete(
            claims,
            &request.resource_type,
            request.time_range.as_ref(),
            introspection,
            now,
        )
    }

    /// Answers a request whose claims already passed both checks.
    pub fn serve(
        &self,
        claims: &TokenClaims,
        request: &DataRequest,
        now: DateTime<Utc>,
    ) -> Result<InferenceResponse> {
        let window = match request.time_range.as_ref().or(claims.time_range.as_ref()) {
            Some(r) => RuleWindow::new(r.start, r.end)?,
            None => RuleWindow::new(now - Duration::days(DEFAULT_WINDOW_DAYS), now)?,
        };
        let evaluation = self.evaluate_for(&claims.pseudonym, &window)?;
        let recommendations = match request.resource_type.as_str() {
            RECOMMENDATIONS => Some(evaluation.recommendations),
            FACTS => None,
            _ => return Err(Error::OutOfScope),
        };
        Ok(InferenceResponse {
            resource_type: request.resource_type.clone(),
            pseudonym: claims.pseudonym.clone(),
            window,
            facts: evaluation.facts,
            recommendations,
        })
    }

    /// The whole source-side request with a synchronous introspection callback.
    pub fn handle_request(
        &self,
        request: &DataRequest,
        now: DateTime<Utc>,
        introspect: &mut dyn FnMut(&TokenClaims) -> Result<Introspection>,
    ) -> Result<InferenceResponse> {
        if let Some(range) = &request.time_range {
            range.validate()?;
        }
        let claims = self.guard.authorize_with(
            &self.keys,
            &request.token,
            &request.resource_type,
            request.time_range.as_ref(),
            now,
            introspect,
        )?;
        self.serve(&claims, request, now)
    }
}

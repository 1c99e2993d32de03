//! HTTP surface over the engine: session listing, escalation hand-off,
//! principal decisions and feedback, and audit reads.
//!
//! Mutations on one session are serialized behind its write lock; reads take
//! the read lock and run concurrently.

mod error;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parley_core::domain::{DomainConfig, FieldId};
use parley_core::engine::{init_session, Action, AuditEvent, Decision, Engine, Event, FeedbackInput, ProtocolState, Session, SessionSettings};
use parley_core::safety::{EscalationPayload, Trigger};
use parley_core::Fraction;
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorCode};

/// Compact view of a pending escalation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationSummary {
    pub trigger: Trigger,
    pub escalation_seq: u64,
    pub boundary_at_risk: String,
    pub option_ids: Vec<String>,
}

/// Read-only projection of a session. Every value here is also in the trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub domain_id: String,
    pub state: ProtocolState,
    pub terminal: bool,
    pub tci: Fraction,
    pub tci_weighted: Fraction,
    pub missing: Vec<FieldId>,
    pub round: u32,
    pub pending_escalation: Option<EscalationSummary>,
    pub last_seq: u64,
    pub last_updated: Option<DateTime<Utc>>,
}

impl ApiSession {
    pub fn of(s: &Session) -> Self {
        let last = s.audit.events().last();
        ApiSession {
            session_id: s.session_id.clone(),
            domain_id: s.config.domain_id.clone(),
            state: s.state,
            terminal: s.state.is_closed(),
            tci: s.ledger.tci,
            tci_weighted: s.ledger.tci_weighted,
            missing: s.ledger.missing.clone(),
            round: s.round,
            pending_escalation: s.pending_escalation.as_ref().map(|p| EscalationSummary {
                trigger: p.payload.trigger,
                escalation_seq: p.escalation_seq,
                boundary_at_risk: p.payload.boundary_at_risk.clone(),
                option_ids: p.payload.options.iter().map(|o| o.option_id.clone()).collect(),
            }),
            last_seq: last.map_or(0, |e| e.seq),
            last_updated: last.map(|e| e.timestamp),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Domain id of a loaded config.
    pub domain_id: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub settings: SessionSettings,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A session together with the actions its last call produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResponse {
    pub session: ApiSession,
    pub actions: Vec<Action>,
}

/// Principal decision. `escalation_seq`, when given, pins the payload the
/// principal was looking at; a stale or repeated submit is refused.
#[derive(Debug, Clone, Deserialize)]
pub struct DecisionRequest {
    #[serde(default)]
    pub escalation_seq: Option<u64>,
    #[serde(flatten)]
    pub decision: Decision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub session_id: String,
    pub item_id: String,
    pub seq: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AuditQuery {
    #[serde(default = "first_seq")]
    pub from: u64,
}

fn first_seq() -> u64 {
    1
}

type Shared = Arc<RwLock<Session>>;

pub struct Gateway {
    engine: Engine,
    configs: BTreeMap<String, Arc<DomainConfig>>,
    sessions: RwLock<BTreeMap<String, Shared>>,
}

impl Gateway {
    pub fn new(engine: Engine, configs: impl IntoIterator<Item = DomainConfig>) -> Self {
        let configs = configs.into_iter().map(|c| (c.domain_id.clone(), Arc::new(c))).collect();
        Gateway { engine, configs, sessions: RwLock::new(BTreeMap::new()) }
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.configs.keys().map(String::as_str)
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions.read().expect("session index lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn list(&self) -> Vec<ApiSession> {
        let all: Vec<Shared> = self.sessions.read().expect("session index lock").values().cloned().collect();
        all.iter().map(|s| ApiSession::of(&s.read().expect("session lock"))).collect()
    }

    pub fn create(&self, req: CreateSession) -> Result<StepResponse, ApiError> {
        let config = self
            .configs
            .get(&req.domain_id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::Invalid, format!("unknown domain `{}`", req.domain_id)))?;
        let mut index = self.sessions.write().expect("session index lock");
        let id = match req.session_id {
            Some(id) if id.trim().is_empty() => return Err(ApiError::new(ErrorCode::Invalid, "session_id is empty")),
            Some(id) => id,
            None => format!("s-{}", index.len() + 1),
        };
        if index.contains_key(&id) {
            return Err(ApiError::new(ErrorCode::Conflict, format!("session `{id}` already exists")));
        }
        let mut s = init_session(config, &id, req.metadata, req.settings);
        let actions = self.engine.open(&mut s)?;
        let session = ApiSession::of(&s);
        index.insert(id, Arc::new(RwLock::new(s)));
        Ok(StepResponse { session, actions })
    }

    pub fn get(&self, id: &str) -> Result<ApiSession, ApiError> {
        Ok(ApiSession::of(&self.session(id)?.read().expect("session lock")))
    }

    pub fn escalation(&self, id: &str) -> Result<EscalationPayload, ApiError> {
        let shared = self.session(id)?;
        let s = shared.read().expect("session lock");
        if s.state.is_closed() {
            return Err(ApiError::new(ErrorCode::Terminal, format!("session is in terminal state {}", s.state)));
        }
        match (&s.pending_escalation, s.state) {
            (Some(p), ProtocolState::Escalate) => Ok(p.payload.clone()),
            _ => Err(ApiError::new(ErrorCode::NotFound, "no escalation is pending")),
        }
    }

    pub fn decide(&self, id: &str, req: DecisionRequest) -> Result<StepResponse, ApiError> {
        let shared = self.session(id)?;
        let mut s = shared.write().expect("session lock");
        if s.state.is_closed() {
            return Err(ApiError::new(ErrorCode::Terminal, format!("session is in terminal state {}", s.state)));
        }
        let pending = s.pending_escalation.as_ref().map(|p| p.escalation_seq);
        match (pending, req.escalation_seq) {
            (None, _) => return Err(ApiError::new(ErrorCode::Conflict, "no escalation is pending")),
            (Some(p), Some(asked)) if p != asked => {
                return Err(ApiError::new(ErrorCode::Conflict, format!("escalation {asked} is no longer pending (current {p})")))
            }
            _ => {}
        }
        let actions = self.engine.step(&mut s, Event::PrincipalDecision(req.decision))?;
        Ok(StepResponse { session: ApiSession::of(&s), actions })
    }

    pub fn feedback(&self, id: &str, input: FeedbackInput) -> Result<FeedbackAck, ApiError> {
        let shared = self.session(id)?;
        let mut s = shared.write().expect("session lock");
        let item_id = self.engine.add_feedback(&mut s, input)?;
        Ok(FeedbackAck { session_id: s.session_id.clone(), item_id, seq: s.audit.last_seq() })
    }

    /// Counterparty-side events: messages, silent rounds and timeouts.
    pub fn event(&self, id: &str, event: Event) -> Result<StepResponse, ApiError> {
        if matches!(event, Event::PrincipalDecision(_) | Event::PrincipalFeedback(_)) {
            return Err(ApiError::new(ErrorCode::Invalid, "principal input goes through /decision or /feedback"));
        }
        let shared = self.session(id)?;
        let mut s = shared.write().expect("session lock");
        let actions = self.engine.step(&mut s, event)?;
        Ok(StepResponse { session: ApiSession::of(&s), actions })
    }

    pub fn audit(&self, id: &str, from: u64) -> Result<Vec<AuditEvent>, ApiError> {
        let shared = self.session(id)?;
        let s = shared.read().expect("session lock");
        Ok(s.audit.events().iter().filter(|e| e.seq >= from).cloned().collect())
    }
}

type Result<T, E = ApiError> = std::result::Result<T, E>;
type St = State<Arc<Gateway>>;

fn body<T>(b: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    b.map(|Json(v)| v).map_err(|e| ApiError::new(ErrorCode::Invalid, e.body_text()))
}

async fn list_sessions(State(g): St) -> Json<Vec<ApiSession>> {
    Json(g.list())
}

async fn create_session(State(g): St, b: std::result::Result<Json<CreateSession>, JsonRejection>) -> Result<Json<StepResponse>> {
    Ok(Json(g.create(body(b)?)?))
}

async fn get_session(State(g): St, Path(id): Path<String>) -> Result<Json<ApiSession>> {
    Ok(Json(g.get(&id)?))
}

async fn get_escalation(State(g): St, Path(id): Path<String>) -> Result<Json<EscalationPayload>> {
    Ok(Json(g.escalation(&id)?))
}

async fn post_decision(
    State(g): St,
    Path(id): Path<String>,
    b: std::result::Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Json<StepResponse>> {
    Ok(Json(g.decide(&id, body(b)?)?))
}

async fn post_feedback(
    State(g): St,
    Path(id): Path<String>,
    b: std::result::Result<Json<FeedbackInput>, JsonRejection>,
) -> Result<Json<FeedbackAck>> {
    Ok(Json(g.feedback(&id, body(b)?)?))
}

async fn post_event(State(g): St, Path(id): Path<String>, b: std::result::Result<Json<Event>, JsonRejection>) -> Result<Json<StepResponse>> {
    Ok(Json(g.event(&id, body(b)?)?))
}

async fn get_audit(
    State(g): St,
    Path(id): Path<String>,
    q: std::result::Result<Query<AuditQuery>, QueryRejection>,
) -> Result<Json<Vec<AuditEvent>>> {
    let Query(q) = q.map_err(|e| ApiError::new(ErrorCode::Invalid, e.body_text()))?;
    Ok(Json(g.audit(&id, q.from)?))
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/escalation", get(get_escalation))
        .route("/sessions/{id}/decision", post(post_decision))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/audit", get(get_audit))
        .with_state(gateway)
}

/// Bind and serve until the process is stopped.
pub async fn serve(gateway: Arc<Gateway>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(gateway)).await
}

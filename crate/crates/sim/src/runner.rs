//! Drives one session between a persona and a principal policy.

use std::collections::BTreeMap;
use std::sync::Arc;

use parley_core::domain::DomainConfig;
use parley_core::engine::{init_session, AuditEvent, Engine, ProtocolState, SessionSettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::persona::{Persona, PersonaRun};
use crate::policy::{Policy, PrincipalRun};
use crate::SimError;

#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub session_id: String,
    pub config: Arc<DomainConfig>,
    pub persona: &'a Persona,
    pub policy: Policy,
    pub settings: SessionSettings,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub session_id: String,
    pub outcome: ProtocolState,
    pub trace: Vec<AuditEvent>,
}

/// Per-session RNG stream. Arms share it for a given scenario and seed, so
/// persona variants line up when comparing arms.
pub fn session_rng(seed: u64, scenario_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scenario_index);
    rng
}

/// Upper bound on engine calls per session; the engine's own round limit
/// normally closes far earlier.
pub fn step_cap(config: &DomainConfig) -> u32 {
    config.thresholds.max_rounds * 4 + 16
}

pub fn run_session(engine: &Engine, job: RunSpec<'_>, rng: &mut ChaCha8Rng) -> Result<RunResult, SimError> {
    job.persona.validate(&job.config)?;
    let mut persona = PersonaRun::new(job.persona, &job.config);
    let mut principal = PrincipalRun::new(job.policy.clone());
    let mut meta = job.metadata.clone();
    meta.insert("persona_id".into(), job.persona.persona_id.clone());
    meta.insert("policy".into(), job.policy.to_string());
    meta.insert("seed".into(), job.seed.to_string());
    let mut s = init_session(job.config.clone(), &job.session_id, meta, job.settings.clone());
    let mut actions = engine.open(&mut s)?;
    for _ in 0..step_cap(&job.config) {
        if s.state.is_closed() {
            break;
        }
        let event = match &s.pending_escalation {
            Some(p) if s.state == ProtocolState::Escalate => principal.decide(p),
            _ => persona.respond(&actions, rng)?,
        };
        actions = engine.step(&mut s, event)?;
    }
    s.finalize_pending();
    Ok(RunResult { session_id: s.session_id.clone(), outcome: s.state, trace: s.audit.events().to_vec() })
}

//! Randomized sessions built by remixing the rules of existing personas.

use std::collections::BTreeMap;
use std::sync::Arc;

use parley_core::domain::DomainConfig;
use parley_core::engine::{Engine, SessionSettings};
use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::persona::{Persona, PersonaKind, Replies, Tactic};
use crate::policy::Policy;
use crate::runner::{run_session, RunResult, RunSpec};
use crate::suite::Suite;
use crate::SimError;

#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub index: u64,
    pub config: Arc<DomainConfig>,
    pub persona: Persona,
    pub policy: Policy,
    pub settings: SessionSettings,
}

const KINDS: [PersonaKind; 4] = [PersonaKind::Cooperative, PersonaKind::Adversarial, PersonaKind::Stalling, PersonaKind::Slow];
const POLICIES: [&str; 6] = ["responsive", "extend", "counter", "decline", "unresponsive", "scripted:A,A"];
const GENERIC_WITHHOLD: &str = "I'd rather not get into that yet.";

fn mix(pool: &[&Persona], config: &DomainConfig, index: u64, rng: &mut ChaCha8Rng) -> Persona {
    let base = *pool.choose(rng).expect("non-empty pool");
    let mut p = base.clone();
    p.persona_id = format!("fuzz-{index}");
    p.kind = *KINDS.choose(rng).expect("kinds");
    p.replies = BTreeMap::new();
    p.withhold = BTreeMap::new();
    p.default_withhold = Some(Replies::One(GENERIC_WITHHOLD.into()));
    let withhold_p = match p.kind {
        PersonaKind::Cooperative => 0.0,
        PersonaKind::Stalling => 0.6,
        PersonaKind::Adversarial | PersonaKind::Slow => 0.15,
    };
    for f in &config.fields {
        if rng.random_bool(withhold_p) {
            let text = pool.iter().filter_map(|q| q.withhold.get(&f.field_id)).choose(rng).cloned();
            p.withhold.insert(f.field_id.clone(), text.unwrap_or(Replies::One(GENERIC_WITHHOLD.into())));
            continue;
        }
        let candidates: Vec<&Replies> = pool.iter().filter_map(|q| q.replies.get(&f.field_id)).collect();
        if let Some(r) = candidates.choose(rng) {
            p.replies.insert(f.field_id.clone(), (*r).clone());
        }
    }
    let band = config.numeric_bands().find(|b| b.field_id == p.negotiation.field_id);
    if let Some(b) = band {
        let opening = rng.random_range(b.min_value * 0.8..b.max_value * 1.4);
        p.negotiation.opening = (opening / 100.0).round().max(1.0) * 100.0;
        if b.max_value < 1000.0 {
            p.negotiation.opening = opening.round();
        }
        p.negotiation.reservation = (p.negotiation.opening * rng.random_range(0.85..=1.0)).round();
    }
    let tactics: Vec<&Tactic> = pool.iter().flat_map(|q| q.tactics.iter()).collect();
    p.tactics = Vec::new();
    if p.kind != PersonaKind::Adversarial {
        return p;
    }
    for t in tactics {
        if rng.random_bool(0.3) {
            p.tactics.push(Tactic { turn: rng.random_range(1..=6), ..t.clone() });
        }
    }
    p
}

/// Deterministic case list: case `i` depends only on `seed` and `i`.
pub fn fuzz_cases(suite: &Suite, seed: u64, count: u64) -> Vec<FuzzCase> {
    let configs: Vec<&Arc<DomainConfig>> = suite.configs.values().collect();
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index + 1);
            let config = (*configs.choose(&mut rng).expect("suite has configs")).clone();
            let pool: Vec<&Persona> = suite.personas.values().filter(|p| p.domain_id == config.domain_id).collect();
            let persona = mix(&pool, &config, index, &mut rng);
            let policy: Policy = POLICIES.choose(&mut rng).expect("policies").parse().expect("known policy");
            let settings = SessionSettings { stcc_enabled: rng.random_bool(0.8), ..SessionSettings::default() };
            FuzzCase { index, config, persona, policy, settings }
        })
        .collect()
}

pub fn run_fuzz(suite: &Suite, seed: u64, count: u64, engine: &Engine) -> Result<Vec<(FuzzCase, RunResult)>, SimError> {
    fuzz_cases(suite, seed, count)
        .into_par_iter()
        .map(|case| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ case.index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let job = RunSpec {
                session_id: format!("fuzz-{seed}-{}", case.index),
                config: case.config.clone(),
                persona: &case.persona,
                policy: case.policy.clone(),
                settings: case.settings.clone(),
                seed,
                metadata: BTreeMap::new(),
            };
            let run = run_session(engine, job, &mut rng)?;
            Ok((case, run))
        })
        .collect()
}

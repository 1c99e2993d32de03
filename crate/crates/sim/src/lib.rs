//! Scenario harness: scripted personas and principals driven through the
//! engine, with metrics derived from audit traces.

pub mod corpus;
pub mod fuzz;
pub mod metrics;
pub mod persona;
pub mod policy;
pub mod runner;
pub mod stats;
pub mod suite;

use parley_core::engine::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io: {0}")]
    Io(String),
    #[error("persona: {0}")]
    Persona(String),
    #[error("persona has no reply or withhold rule for field `{0}`")]
    MissingRule(String),
    #[error("unknown principal policy `{0}`")]
    Policy(String),
    #[error("suite: {0}")]
    Suite(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("trace of session `{0}` has no outcome event")]
    IncompleteTrace(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("scenario `{scenario}`: {source}")]
    Scenario { scenario: String, #[source] source: Box<SimError> },
}

//! Governance engine for delegated screening-and-negotiation dialogues.

pub mod dialogue;
pub mod domain;
pub mod engine;
pub mod feedback;
pub mod safety;
pub mod scalar;
pub mod stcc;
pub mod tci;
pub mod text;

/// Information quantities in bits.
pub type Bits = f64;
/// Fractions and probabilities in `[0, 1]`.
pub type Fraction = f64;

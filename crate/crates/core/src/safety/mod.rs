//! Outgoing-draft preflight, conversational risk classification and
//! escalation payloads.

mod binding;
mod escalation;
mod moderator;
mod preflight;

pub use binding::{contains_binding_language, rewrite_non_binding, BindingHit, RewriteError, APPROVAL_SUFFIX};
pub use escalation::{
    build_escalation_payload, EscalationContext, EscalationError, EscalationOption, EscalationPayload, LedgerSummary,
    OptionEffect, StateSnapshot, Trigger,
};
pub use moderator::{moderator_classify, Classification, LexiconModerator, Moderator, CLARIFY, CORE_LABELS};
pub use preflight::{preflight, scan_amounts, BoundaryHit, DraftMessage, SafetyVerdict};

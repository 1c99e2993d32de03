//! Simulated principals answering escalations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use parley_core::engine::{Decision, Event, PendingEscalation};
use parley_core::safety::{OptionEffect, Trigger};
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Policy {
    /// Counter once on a boundary hit, approve final terms, end on repeats.
    Responsive,
    /// Widen the band whenever that option is offered.
    Extend,
    /// Always counter at the clamp when offered.
    Counter,
    Decline,
    /// Never answers; every escalation times out.
    Unresponsive,
    /// Fixed sequence of option ids, then declines.
    Scripted(Vec<String>),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Responsive => f.write_str("responsive"),
            Policy::Extend => f.write_str("extend"),
            Policy::Counter => f.write_str("counter"),
            Policy::Decline => f.write_str("decline"),
            Policy::Unresponsive => f.write_str("unresponsive"),
            Policy::Scripted(ids) => write!(f, "scripted:{}", ids.join(",")),
        }
    }
}

impl FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Ok(match s.trim() {
            "responsive" => Policy::Responsive,
            "extend" => Policy::Extend,
            "counter" => Policy::Counter,
            "decline" => Policy::Decline,
            "unresponsive" => Policy::Unresponsive,
            other => match other.strip_prefix("scripted:") {
                Some(list) if !list.trim().is_empty() => {
                    Policy::Scripted(list.split(',').map(|x| x.trim().to_string()).collect())
                }
                _ => return Err(SimError::Policy(other.to_string())),
            },
        })
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Policy {
    type Error = SimError;
    fn try_from(s: String) -> Result<Self, SimError> {
        s.parse()
    }
}

#[derive(Debug, Clone)]
pub struct PrincipalRun {
    pub policy: Policy,
    seen: BTreeMap<Trigger, u32>,
    script_pos: usize,
}

fn pick(p: &PendingEscalation, want: impl Fn(&OptionEffect) -> bool) -> Option<String> {
    p.payload.options.iter().find(|o| want(&o.effect)).map(|o| o.option_id.clone())
}

fn approve(id: Option<String>) -> Event {
    match id {
        Some(option_id) => Event::PrincipalDecision(Decision::Approve { option_id }),
        None => Event::PrincipalDecision(Decision::Decline),
    }
}

impl PrincipalRun {
    pub fn new(policy: Policy) -> Self {
        PrincipalRun { policy, seen: BTreeMap::new(), script_pos: 0 }
    }

    pub fn decide(&mut self, p: &PendingEscalation) -> Event {
        let trigger = p.payload.trigger;
        let n = self.seen.entry(trigger).or_default();
        *n += 1;
        let first = *n == 1;
        let end = |p: &PendingEscalation| approve(pick(p, |e| matches!(e, OptionEffect::EndSession)));
        match &self.policy {
            Policy::Unresponsive => Event::Timeout,
            Policy::Decline => Event::PrincipalDecision(Decision::Decline),
            Policy::Scripted(ids) => {
                let id = ids.get(self.script_pos).cloned();
                self.script_pos += 1;
                approve(id)
            }
            Policy::Extend | Policy::Counter | Policy::Responsive => {
                if trigger == Trigger::FinalApproval {
                    return approve(pick(p, |e| matches!(e, OptionEffect::ApproveTerms)));
                }
                let preferred = match (&self.policy, trigger) {
                    (Policy::Extend, Trigger::BoundaryViolation) => {
                        pick(p, |e| matches!(e, OptionEffect::ExtendBoundary { .. }))
                    }
                    (Policy::Counter, Trigger::BoundaryViolation) => {
                        pick(p, |e| matches!(e, OptionEffect::CounterAt { .. }))
                    }
                    _ => None,
                };
                if preferred.is_some() {
                    return approve(preferred);
                }
                if !first {
                    return end(p);
                }
                let resume = pick(p, |e| matches!(e, OptionEffect::CounterAt { .. }))
                    .or_else(|| pick(p, |e| matches!(e, OptionEffect::ResumeScreen)))
                    .or_else(|| pick(p, |e| matches!(e, OptionEffect::Continue)));
                match resume {
                    Some(id) => approve(Some(id)),
                    None => end(p),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for s in ["responsive", "extend", "counter", "decline", "unresponsive", "scripted:B,A"] {
            assert_eq!(s.parse::<Policy>().unwrap().to_string(), s);
        }
        assert!("scripted:".parse::<Policy>().is_err());
        assert!("whatever".parse::<Policy>().is_err());
    }
}

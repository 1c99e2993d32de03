use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolState {
    Start,
    Stcc,
    Screen,
    Negotiate,
    Summarize,
    Agree,
    NoDeal,
    Escalate,
    Stall,
}

use ProtocolState::*;

impl ProtocolState {
    pub const ALL: [ProtocolState; 9] = [Start, Stcc, Screen, Negotiate, Summarize, Agree, NoDeal, Escalate, Stall];

    /// The four states the automaton halts in. ESCALATE halts only until the
    /// principal decides.
    pub fn is_terminal(self) -> bool {
        matches!(self, Agree | NoDeal | Escalate | Stall)
    }

    /// Terminal with no way out.
    pub fn is_closed(self) -> bool {
        matches!(self, Agree | NoDeal | Stall)
    }

    /// States the dialogue is actively progressing in.
    pub fn is_active(self) -> bool {
        matches!(self, Stcc | Screen | Negotiate | Summarize)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Start => "START",
            Stcc => "STCC",
            Screen => "SCREEN",
            Negotiate => "NEGOTIATE",
            Summarize => "SUMMARIZE",
            Agree => "AGREE",
            NoDeal => "NO_DEAL",
            Escalate => "ESCALATE",
            Stall => "STALL",
        }
    }
}

impl fmt::Display for ProtocolState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Edges of the transition table, ignoring guards. Leaving ESCALATE is
/// further restricted to the state the session paused in, SCREEN, or a
/// terminal outcome; see [`Session::request_transition`](super::Session::request_transition).
pub fn edge_exists(from: ProtocolState, to: ProtocolState) -> bool {
    match (from, to) {
        (Start, Stcc) | (Start, Stall) => true,
        (Stcc, Screen) => true,
        (Screen, Negotiate) => true,
        (Negotiate, Screen) | (Negotiate, Summarize) => true,
        (Summarize, Agree) => true,
        (s, Escalate | Stall | NoDeal) if s.is_active() => true,
        (Escalate, t) => t.is_active() || matches!(t, Agree | NoDeal | Stall),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_states_have_no_exits() {
        for from in [Agree, NoDeal, Stall] {
            for to in ProtocolState::ALL {
                assert!(!edge_exists(from, to), "{from} -> {to}");
            }
        }
    }

    #[test]
    fn happy_path_is_connected() {
        let path = [Start, Stcc, Screen, Negotiate, Summarize, Agree];
        assert!(path.windows(2).all(|w| edge_exists(w[0], w[1])));
        assert!(!edge_exists(Stcc, Negotiate));
        assert!(!edge_exists(Start, Negotiate));
        assert!(edge_exists(Escalate, Negotiate));
    }

    #[test]
    fn serializes_upper_case() {
        assert_eq!(serde_json::to_string(&NoDeal).unwrap(), "\"NO_DEAL\"");
    }
}

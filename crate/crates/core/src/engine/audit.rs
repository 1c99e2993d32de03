use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Transition,
    TciUpdate,
    CriticSuggestion,
    HumanOverride,
    SafetyEvent,
    Escalation,
    PrincipalDecision,
    Outcome,
    /// A message entering the transcript, from either side.
    Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    pub kind: AuditKind,
    pub payload: Value,
    pub rationale: String,
}

/// Deterministic clock: a fixed epoch plus one second per audit event, so
/// identical runs produce identical logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalClock {
    pub epoch: DateTime<Utc>,
}

impl Default for LogicalClock {
    fn default() -> Self {
        LogicalClock { epoch: Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).single().expect("valid epoch") }
    }
}

impl LogicalClock {
    pub fn at(&self, seq: u64) -> DateTime<Utc> {
        self.epoch + Duration::seconds(seq as i64)
    }
}

/// Append-only, gapless event list for one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn append(&mut self, session_id: &str, clock: &LogicalClock, kind: AuditKind, payload: Value, rationale: impl Into<String>) -> u64 {
        let seq = self.events.len() as u64 + 1;
        self.events.push(AuditEvent {
            seq,
            timestamp: clock.at(seq),
            session_id: session_id.to_string(),
            kind,
            payload,
            rationale: rationale.into(),
        });
        seq
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn since(&self, from_seq: u64) -> &[AuditEvent] {
        let start = (from_seq.max(1) - 1) as usize;
        self.events.get(start..).unwrap_or(&[])
    }
}

/// One event as a single JSON line.
pub fn to_jsonl_line(e: &AuditEvent) -> String {
    serde_json::to_string(e).expect("audit events serialize")
}

pub fn parse_jsonl(text: &str) -> Result<Vec<AuditEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Destination for audit events shared by concurrently running sessions.
pub trait AuditSink: Send + Sync {
    fn append(&self, events: &[AuditEvent]) -> std::io::Result<()>;
}

/// Line-delimited JSON file. Each call writes its batch under one lock, so
/// a session's events stay in order even with many writers.
pub struct JsonlSink {
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(JsonlSink { out: Mutex::new(BufWriter::new(File::create(path)?)) })
    }

    pub fn flush(&self) -> std::io::Result<()> {
        self.out.lock().expect("sink lock").flush()
    }
}

impl AuditSink for JsonlSink {
    fn append(&self, events: &[AuditEvent]) -> std::io::Result<()> {
        let mut out = self.out.lock().expect("sink lock");
        for e in events {
            writeln!(out, "{}", to_jsonl_line(e))?;
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    pub events: Mutex<Vec<AuditEvent>>,
}

impl AuditSink for MemorySink {
    fn append(&self, events: &[AuditEvent]) -> std::io::Result<()> {
        self.events.lock().expect("sink lock").extend_from_slice(events);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_is_gapless_and_time_is_logical() {
        let mut log = AuditLog::default();
        let c = LogicalClock::default();
        for i in 0..5 {
            assert_eq!(log.append("s", &c, AuditKind::Transition, json!({"i": i}), "x"), i + 1);
        }
        let seqs: Vec<u64> = log.events().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [1, 2, 3, 4, 5]);
        assert_eq!(log.events()[1].timestamp - log.events()[0].timestamp, Duration::seconds(1));
        assert_eq!(log.since(4).len(), 2);
        assert!(log.since(99).is_empty());
        assert_eq!(log.since(0).len(), 5);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = AuditLog::default();
        log.append("s", &LogicalClock::default(), AuditKind::SafetyEvent, json!({"a": [1, 2]}), "why");
        let text: String = log.events().iter().map(|e| to_jsonl_line(e) + "\n").collect();
        assert_eq!(parse_jsonl(&text).unwrap(), log.events());
        assert!(text.contains("\"kind\":\"safety_event\""));
    }
}

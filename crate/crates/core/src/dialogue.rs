//! Transcript messages exchanged during a session.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{FieldId, FieldValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Delegate,
    Counterparty,
    Principal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub turn: u32,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_values: Option<BTreeMap<FieldId, FieldValue>>,
}

impl Message {
    pub fn new(turn: u32, speaker: Speaker, text: impl Into<String>) -> Self {
        Message { turn, speaker, text: text.into(), structured_values: None }
    }

    pub fn counterparty(turn: u32, text: impl Into<String>) -> Self {
        Message::new(turn, Speaker::Counterparty, text)
    }

    pub fn with_values(mut self, values: BTreeMap<FieldId, FieldValue>) -> Self {
        self.structured_values = Some(values);
        self
    }

    pub fn value(&self, field: &str) -> Option<&FieldValue> {
        self.structured_values.as_ref().and_then(|v| v.get(field))
    }
}

//! Checksummed session snapshots.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Session;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot is not valid JSON: {0}")]
    Malformed(String),
    #[error("snapshot version {0} is not supported")]
    Version(u32),
    #[error("snapshot checksum mismatch (expected {expected}, found {found})")]
    Integrity { expected: String, found: String },
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    checksum: String,
    session: serde_json::Value,
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn snapshot(s: &Session) -> String {
    let session = serde_json::to_value(s).expect("session serializes");
    let checksum = digest(&session.to_string());
    serde_json::to_string(&Envelope { version: SNAPSHOT_VERSION, checksum, session }).expect("envelope serializes")
}

pub fn restore(text: &str) -> Result<Session, SnapshotError> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
    if env.version != SNAPSHOT_VERSION {
        return Err(SnapshotError::Version(env.version));
    }
    let found = digest(&env.session.to_string());
    if found != env.checksum {
        return Err(SnapshotError::Integrity { expected: env.checksum, found });
    }
    serde_json::from_value(env.session).map_err(|e| SnapshotError::Malformed(e.to_string()))
}

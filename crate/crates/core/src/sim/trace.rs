use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Hash256};

/// One line of the JSONL trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sim_time: u64,
    pub actor: String,
    pub event_kind: String,
    pub payload_digest: Hash256,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, sim_time: u64, actor: &str, event_kind: impl Into<String>, payload: &[u8]) {
        self.records.push(TraceRecord {
            sim_time,
            actor: actor.to_string(),
            event_kind: event_kind.into(),
            payload_digest: hash(payload),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Digest over the whole trace, for cheap determinism checks.
    pub fn digest(&self) -> Hash256 {
        hash(self.to_jsonl().as_bytes())
    }
}

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::payload::Payload;
use crate::policy::Decision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationSource {
    Assertion {
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
    },
    Cn {
        cn_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Publish {
        seq: u64,
        node: String,
        /// Topic actually written to, after remapping.
        topic: String,
        /// Topic the node believes it publishes on.
        logical_topic: String,
        payload: Payload,
    },
    Deliver {
        /// Sequence number of the publication being delivered.
        seq: u64,
        node: String,
        topic: String,
        payload: Payload,
    },
    CnDecision {
        cn_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flow: Option<String>,
        decision: Decision,
    },
    Violation {
        source: ViolationSource,
        rule: String,
        cause: String,
        details: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSummary {
    pub publishes: usize,
    pub deliveries: usize,
    pub cn_decisions: usize,
    pub violations: usize,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn summary(&self) -> TraceSummary {
        let mut s = TraceSummary::default();
        for e in &self.events {
            match e.kind {
                EventKind::Publish { .. } => s.publishes += 1,
                EventKind::Deliver { .. } => s.deliveries += 1,
                EventKind::CnDecision { .. } => s.cn_decisions += 1,
                EventKind::Violation { .. } => s.violations += 1,
            }
            s.end_time = s.end_time.max(e.time);
        }
        s
    }

    pub fn violations(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Violation { .. }))
    }

    /// Deliveries of `topic`, optionally restricted to one subscriber.
    pub fn deliveries<'a>(
        &'a self,
        topic: &'a str,
        to: Option<&'a str>,
    ) -> impl Iterator<Item = (f64, &'a str, &'a Payload)> + 'a {
        self.events.iter().filter_map(move |e| match &e.kind {
            EventKind::Deliver {
                node,
                topic: t,
                payload,
                ..
            } if t == topic && to.is_none_or(|n| n == node) => Some((e.time, node.as_str(), payload)),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(Self { events })
    }
}

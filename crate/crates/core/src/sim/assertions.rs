use serde::{Deserialize, Serialize};

use super::trace::{EventKind, Trace, TraceEvent, ViolationSource};
use crate::instrument::CN_PREFIX;
use crate::payload::{Payload, Predicate};

fn always() -> Predicate {
    Predicate::Always
}

/// Trace predicate over deliveries of one topic. Without `to`, every
/// delivery to a function node (not a CN) counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// No delivery satisfies `predicate`.
    NeverDelivered {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        topic: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<String>,
        #[serde(default = "always")]
        predicate: Predicate,
    },
    /// Every delivery satisfies `predicate`.
    Always {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        topic: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<String>,
        predicate: Predicate,
    },
    /// Some delivery satisfies `predicate`, no later than `by` if given.
    Eventually {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        topic: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<String>,
        #[serde(default = "always")]
        predicate: Predicate,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<f64>,
    },
}

impl Assertion {
    pub fn id(&self) -> Option<&str> {
        match self {
            Assertion::NeverDelivered { id, .. } | Assertion::Always { id, .. } | Assertion::Eventually { id, .. } => {
                id.as_deref()
            }
        }
    }

    pub fn topic(&self) -> &str {
        match self {
            Assertion::NeverDelivered { topic, .. }
            | Assertion::Always { topic, .. }
            | Assertion::Eventually { topic, .. } => topic,
        }
    }

    pub fn target_node(&self) -> Option<&str> {
        match self {
            Assertion::NeverDelivered { to, .. } | Assertion::Always { to, .. } | Assertion::Eventually { to, .. } => {
                to.as_deref()
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Assertion::NeverDelivered { .. } => "never_delivered",
            Assertion::Always { .. } => "always",
            Assertion::Eventually { .. } => "eventually",
        }
    }

    fn label(&self, index: usize) -> String {
        self.id()
            .map(str::to_string)
            .unwrap_or_else(|| format!("assertion#{index}"))
    }

    fn applies(&self, node: &str, topic: &str) -> bool {
        if crate::graph::normalize_topic(self.topic()) != topic {
            return false;
        }
        match self.target_node() {
            Some(to) => to == node,
            None => !node.starts_with(CN_PREFIX),
        }
    }

    /// `Some(cause)` when this delivery breaks the assertion.
    fn offends(&self, payload: &Payload) -> Option<&'static str> {
        match self {
            Assertion::NeverDelivered { predicate, .. } if predicate.eval(payload) => {
                Some("forbidden message delivered")
            }
            Assertion::Always { predicate, .. } if !predicate.eval(payload) => Some("bound violated"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offending {
    pub time: f64,
    pub node: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub index: usize,
    pub label: String,
    pub kind: String,
    pub passed: bool,
    /// Number of offending deliveries (0 or 1 for `eventually`).
    pub violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_offending: Option<Offending>,
}

/// Incremental checker used by the simulator; emits a violation event per
/// offending delivery and one per unmet `eventually` at the end.
#[derive(Debug, Clone)]
pub struct OnlineChecker {
    assertions: Vec<Assertion>,
    satisfied: Vec<bool>,
}

impl OnlineChecker {
    pub fn new(assertions: Vec<Assertion>) -> Self {
        let n = assertions.len();
        Self {
            assertions,
            satisfied: vec![false; n],
        }
    }

    pub fn on_deliver(&mut self, time: f64, node: &str, topic: &str, payload: &Payload) -> Vec<TraceEvent> {
        let mut out = Vec::new();
        for (i, a) in self.assertions.iter().enumerate() {
            if !a.applies(node, topic) {
                continue;
            }
            if let Assertion::Eventually { predicate, by, .. } = a {
                if predicate.eval(payload) && by.is_none_or(|b| time <= b + crate::policy::TIME_EPS) {
                    self.satisfied[i] = true;
                }
                continue;
            }
            if let Some(cause) = a.offends(payload) {
                out.push(TraceEvent {
                    time,
                    kind: EventKind::Violation {
                        source: ViolationSource::Assertion {
                            index: i,
                            id: a.id().map(str::to_string),
                        },
                        rule: a.label(i),
                        cause: cause.to_string(),
                        details: format!("{} -> {} on {}", payload.summary(), node, topic),
                    },
                });
            }
        }
        out
    }

    pub fn finish(&self, time: f64) -> Vec<TraceEvent> {
        self.assertions
            .iter()
            .enumerate()
            .filter(|(i, a)| matches!(a, Assertion::Eventually { .. }) && !self.satisfied[*i])
            .map(|(i, a)| TraceEvent {
                time,
                kind: EventKind::Violation {
                    source: ViolationSource::Assertion {
                        index: i,
                        id: a.id().map(str::to_string),
                    },
                    rule: a.label(i),
                    cause: "expected delivery never happened".into(),
                    details: format!("no qualifying delivery on {}", a.topic()),
                },
            })
            .collect()
    }
}

/// Evaluates assertions over the deliveries of a finished trace.
pub fn check_assertions(trace: &Trace, assertions: &[Assertion]) -> Vec<AssertionResult> {
    assertions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut violations = 0;
            let mut first = None;
            let mut seen = false;
            for e in &trace.events {
                let EventKind::Deliver {
                    node, topic, payload, ..
                } = &e.kind
                else {
                    continue;
                };
                if !a.applies(node, topic) {
                    continue;
                }
                if let Assertion::Eventually { predicate, by, .. } = a {
                    if predicate.eval(payload) && by.is_none_or(|b| e.time <= b + crate::policy::TIME_EPS) {
                        seen = true;
                    }
                } else if a.offends(payload).is_some() {
                    violations += 1;
                    if first.is_none() {
                        first = Some(Offending {
                            time: e.time,
                            node: node.clone(),
                            payload: payload.clone(),
                        });
                    }
                }
            }
            if matches!(a, Assertion::Eventually { .. }) && !seen {
                violations = 1;
            }
            AssertionResult {
                index: i,
                label: a.label(i),
                kind: a.kind_name().to_string(),
                passed: violations == 0,
                violations,
                first_offending: first,
            }
        })
        .collect()
}

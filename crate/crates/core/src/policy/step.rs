//! Step semantics of every policy.
//!
//! A step consumes a batch of inbound messages that arrive at the same
//! instant and returns the resulting [`Decision`]. Within one step at most
//! one message is emitted per output topic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::state::LogAction;
use super::{CnState, CnType, Condition, FlowAction, FlowRole, PolicyConfig, PolicyKind, TIME_EPS};
use crate::payload::Payload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inbound {
    /// Flow id or alias.
    pub flow: String,
    pub payload: Payload,
}

impl Inbound {
    pub fn new(flow: &str, payload: Payload) -> Self {
        Self {
            flow: flow.to_string(),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub topic: String,
    pub flow: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Blocked,
    Expired {
        age: f64,
    },
    Preempted {
        by: String,
    },
    /// Another message won the same output topic in this step.
    Superseded {
        by: String,
    },
    UnknownFlow,
    RuleBlocked {
        rule: String,
    },
    DefaultDeny,
    /// The flow is read-only on this CN.
    NoOutput,
    PolicyMismatch,
}

impl DropReason {
    pub fn describe(&self) -> String {
        match self {
            DropReason::Blocked => "blocked by flow bit".into(),
            DropReason::Expired { age } => format!("expired after {age:.3}s in queue"),
            DropReason::Preempted { by } => format!("preempted by {by}"),
            DropReason::Superseded { by } => format!("superseded by {by}"),
            DropReason::UnknownFlow => "unknown flow".into(),
            DropReason::RuleBlocked { rule } => format!("blocked by rule {rule}"),
            DropReason::DefaultDeny => "no rule permits the action".into(),
            DropReason::NoOutput => "flow has no output".into(),
            DropReason::PolicyMismatch => "policy not valid for this node".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub flow: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Note {
    /// A velocity was reduced to `limit`.
    Clamped {
        flow: String,
        from: f64,
        to: f64,
        limit: f64,
        policy: PolicyKind,
    },
    /// Safe policy ran without a fresh fps sample on these inputs.
    StaleFps { flows: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Decision {
    pub emitted: Vec<Emission>,
    pub dropped: Vec<Dropped>,
    pub notes: Vec<Note>,
}

impl Decision {
    pub fn is_empty(&self) -> bool {
        self.emitted.is_empty() && self.dropped.is_empty() && self.notes.is_empty()
    }

    fn drop(&mut self, state: &mut CnState, now: f64, flow: &str, reason: DropReason, payload: &Payload) {
        let rule = match &reason {
            DropReason::RuleBlocked { rule } => Some(rule.clone()),
            _ => None,
        };
        state.record(
            now,
            flow,
            LogAction::Drop,
            reason.describe(),
            rule.as_deref(),
            Some(payload),
        );
        self.dropped.push(Dropped {
            flow: flow.to_string(),
            reason,
        });
    }

    fn emit(&mut self, state: &mut CnState, now: f64, flow: &str, topic: &str, payload: Payload) {
        state.record(
            now,
            flow,
            LogAction::Emit,
            format!("forwarded to {topic}"),
            None,
            Some(&payload),
        );
        self.emitted.push(Emission {
            topic: topic.to_string(),
            flow: flow.to_string(),
            payload,
        });
    }
}

/// Dispatches on the CN type.
pub fn step(state: &mut CnState, cfg: &PolicyConfig, inbound: &[Inbound], now: f64) -> Decision {
    match state.cn_type() {
        CnType::Grcn => grcn_step(state, cfg, inbound, now),
        CnType::Rsrcn => rsrcn_step(state, cfg, inbound, now),
        CnType::Msrcn => msrcn_step(state, cfg, inbound, now),
        CnType::FpsMonitor => {
            let mut d = Decision::default();
            for m in inbound {
                d.drop(state, now, &m.flow, DropReason::PolicyMismatch, &m.payload);
            }
            d
        }
    }
}

fn resolve(state: &mut CnState, inbound: &[Inbound], now: f64, d: &mut Decision) -> Vec<(String, Payload)> {
    let mut out = Vec::with_capacity(inbound.len());
    for m in inbound {
        match state.resolve_flow(&m.flow) {
            Some(id) => out.push((id.to_string(), m.payload.clone())),
            None => d.drop(state, now, &m.flow, DropReason::UnknownFlow, &m.payload),
        }
    }
    out
}

fn flow_bit(state: &CnState, cfg: &PolicyConfig, flow: &str) -> FlowAction {
    cfg.params
        .block_bits
        .iter()
        .find(|(k, _)| state.resolve_flow(k) == Some(flow))
        .map(|(_, v)| *v)
        .unwrap_or(FlowAction::Allow)
}

/// Configured priority of a flow; unlisted flows rank last.
pub fn flow_priority(state: &CnState, cfg: &PolicyConfig, flow: &str) -> i64 {
    cfg.params
        .priority
        .iter()
        .find(|(k, _)| state.resolve_flow(k) == Some(flow))
        .map(|(_, v)| *v)
        .unwrap_or(i64::MAX)
}

fn output_of(state: &CnState, flow: &str) -> Option<String> {
    state.slot(flow).and_then(|s| s.output_topic.clone())
}

fn mismatch(state: &mut CnState, msgs: Vec<(String, Payload)>, now: f64, mut d: Decision) -> Decision {
    for (f, p) in msgs {
        d.drop(state, now, &f, DropReason::PolicyMismatch, &p);
    }
    d
}

pub fn grcn_step(state: &mut CnState, cfg: &PolicyConfig, inbound: &[Inbound], now: f64) -> Decision {
    let mut d = Decision::default();
    let msgs = resolve(state, inbound, now, &mut d);
    for (f, p) in &msgs {
        state.latest.insert(f.clone(), (now, p.clone()));
    }
    match cfg.policy {
        PolicyKind::Block => {
            let mut used: Vec<(String, String)> = Vec::new();
            for (f, p) in msgs {
                let Some(topic) = output_of(state, &f) else {
                    d.drop(state, now, &f, DropReason::NoOutput, &p);
                    continue;
                };
                if flow_bit(state, cfg, &f) == FlowAction::Block {
                    d.drop(state, now, &f, DropReason::Blocked, &p);
                } else if let Some((_, by)) = used.iter().find(|(t, _)| *t == topic) {
                    let by = by.clone();
                    d.drop(state, now, &f, DropReason::Superseded { by }, &p);
                } else {
                    used.push((topic.clone(), f.clone()));
                    d.emit(state, now, &f, &topic, p);
                }
            }
        }
        PolicyKind::FifoQueue | PolicyKind::PriorityQueue => {
            for (f, p) in msgs {
                if output_of(state, &f).is_none() {
                    d.drop(state, now, &f, DropReason::NoOutput, &p);
                    continue;
                }
                let seq = state.next_seq;
                state.next_seq += 1;
                state.queue.push_back(super::QueueEntry {
                    seq,
                    flow: f,
                    payload: p,
                    enqueued: now,
                });
            }
            if cfg.params.output_tick.is_none() {
                drain(state, cfg, now, &mut d);
            }
        }
        PolicyKind::Preemption => {
            let window = cfg.params.activity_window();
            let mut decided: BTreeSet<String> = BTreeSet::new();
            for (f, p) in msgs {
                let Some(topic) = output_of(state, &f) else {
                    d.drop(state, now, &f, DropReason::NoOutput, &p);
                    continue;
                };
                let top = active_leader(state, cfg, &topic, now, window).expect("sender is active");
                if top != f {
                    d.drop(state, now, &f, DropReason::Preempted { by: top }, &p);
                } else if !decided.insert(topic.clone()) {
                    d.drop(state, now, &f, DropReason::Superseded { by: top }, &p);
                } else {
                    d.emit(state, now, &f, &topic, p);
                }
            }
        }
        _ => return mismatch(state, msgs, now, d),
    }
    d
}

/// Highest-priority flow on `topic` that published within `window`.
pub fn active_leader(state: &CnState, cfg: &PolicyConfig, topic: &str, now: f64, window: f64) -> Option<String> {
    state
        .slots()
        .filter(|s| s.output_topic.as_deref() == Some(topic))
        .filter(|s| {
            state
                .latest(&s.flow_id)
                .is_some_and(|(t, _)| now - t <= window + TIME_EPS)
        })
        .min_by_key(|s| (flow_priority(state, cfg, &s.flow_id), s.flow_id.clone()))
        .map(|s| s.flow_id.clone())
}

/// Drops expired entries, then emits one entry per output topic.
fn drain(state: &mut CnState, cfg: &PolicyConfig, now: f64, d: &mut Decision) {
    let timeout = cfg.params.timeout.unwrap_or(f64::INFINITY);
    let mut kept = std::collections::VecDeque::with_capacity(state.queue.len());
    let entries: Vec<_> = state.queue.drain(..).collect();
    for e in entries {
        let age = now - e.enqueued;
        if age > timeout + TIME_EPS {
            d.drop(state, now, &e.flow, DropReason::Expired { age }, &e.payload);
        } else {
            kept.push_back(e);
        }
    }
    state.queue = kept;
    let mut topics: Vec<String> = Vec::new();
    for e in &state.queue {
        let t = output_of(state, &e.flow).expect("queued flows have outputs");
        if !topics.contains(&t) {
            topics.push(t);
        }
    }
    for topic in topics {
        let candidates = state
            .queue
            .iter()
            .enumerate()
            .filter(|(_, e)| output_of(state, &e.flow).as_deref() == Some(topic.as_str()));
        let idx = match cfg.policy {
            PolicyKind::PriorityQueue => candidates
                .min_by(|(_, a), (_, b)| {
                    let ka = (flow_priority(state, cfg, &a.flow), a.enqueued, a.seq);
                    let kb = (flow_priority(state, cfg, &b.flow), b.enqueued, b.seq);
                    ka.partial_cmp(&kb).expect("finite times")
                })
                .map(|(i, _)| i),
            _ => candidates.map(|(i, _)| i).next(),
        };
        if let Some(i) = idx {
            let e = state.queue.remove(i).expect("index from iteration");
            d.emit(state, now, &e.flow, &topic, e.payload);
        }
    }
}

/// Periodic drain for queue policies running with `output_tick`.
pub fn tick(state: &mut CnState, cfg: &PolicyConfig, now: f64) -> Decision {
    let mut d = Decision::default();
    if state.cn_type() == CnType::Grcn && matches!(cfg.policy, PolicyKind::FifoQueue | PolicyKind::PriorityQueue) {
        drain(state, cfg, now, &mut d);
    }
    d
}

pub fn rsrcn_step(state: &mut CnState, cfg: &PolicyConfig, inbound: &[Inbound], now: f64) -> Decision {
    let mut d = Decision::default();
    let msgs = resolve(state, inbound, now, &mut d);
    if !matches!(cfg.policy, PolicyKind::Block | PolicyKind::Safe | PolicyKind::Constrain) {
        return mismatch(state, msgs, now, d);
    }
    let mut velocity = Vec::new();
    for (f, p) in msgs {
        let role = state.slot(&f).map(|s| s.role);
        state.latest.insert(f.clone(), (now, p.clone()));
        match role {
            Some(FlowRole::Fps) => {
                state.record(now, &f, LogAction::Fps, "fps sample", None, Some(&p));
            }
            _ => match output_of(state, &f) {
                Some(topic) => velocity.push((f, topic, p)),
                None => d.drop(state, now, &f, DropReason::NoOutput, &p),
            },
        }
    }
    if cfg.policy == PolicyKind::Block {
        let mut admitted = Vec::new();
        for (f, topic, p) in velocity {
            if flow_bit(state, cfg, &f) == FlowAction::Block {
                d.drop(state, now, &f, DropReason::Blocked, &p);
            } else {
                admitted.push((f, topic, p));
            }
        }
        velocity = admitted;
    }
    // Winner per output topic: lowest priority value, then arrival order.
    velocity.sort_by_key(|(f, _, _)| flow_priority(state, cfg, f));
    let mut used: Vec<(String, String)> = Vec::new();
    for (f, topic, p) in velocity {
        if let Some((_, by)) = used.iter().find(|(t, _)| *t == topic) {
            let by = by.clone();
            d.drop(state, now, &f, DropReason::Superseded { by }, &p);
            continue;
        }
        used.push((topic.clone(), f.clone()));
        let cap = match cfg.policy {
            PolicyKind::Safe => {
                let (fps_min, stale) = state.fps_min(now, cfg.params.fps_freshness());
                if !stale.is_empty() {
                    state.record(
                        now,
                        &f,
                        LogAction::Clamp,
                        format!("stale fps on {}", stale.join(", ")),
                        None,
                        None,
                    );
                    d.notes.push(Note::StaleFps { flows: stale });
                }
                Some(cfg.params.threshold.unwrap_or(0.0) * fps_min)
            }
            PolicyKind::Constrain => cfg.params.max_vel_limit,
            _ => None,
        };
        let out = match cap {
            Some(limit) => {
                let capped = p.with_speed_cap(limit);
                if capped != p {
                    let from = p.speed().unwrap_or(f64::NAN);
                    let to = capped.speed().unwrap_or(f64::NAN);
                    state.record(
                        now,
                        &f,
                        LogAction::Clamp,
                        format!("max_vel exceeds limit: {from} -> {to}"),
                        None,
                        Some(&p),
                    );
                    d.notes.push(Note::Clamped {
                        flow: f.clone(),
                        from,
                        to,
                        limit,
                        policy: cfg.policy,
                    });
                }
                capped
            }
            None => p,
        };
        d.emit(state, now, &f, &topic, out);
    }
    d
}

/// Evaluates an MSR condition against the current trigger bits and the
/// action under decision.
pub fn eval_condition(state: &CnState, cfg: &PolicyConfig, cond: &Condition, action: &Payload, now: f64) -> bool {
    match cond {
        Condition::Always => true,
        Condition::Event(flow) => state.trigger_bit(flow, now, &cfg.params),
        Condition::Action(pred) => pred.eval(action),
        Condition::And(items) => items.iter().all(|c| eval_condition(state, cfg, c, action, now)),
        Condition::Or(items) => items.iter().any(|c| eval_condition(state, cfg, c, action, now)),
        Condition::Not(inner) => !eval_condition(state, cfg, inner, action, now),
    }
}

/// Event messages in the batch update trigger bits before any action in
/// the same batch is judged.
pub fn msrcn_step(state: &mut CnState, cfg: &PolicyConfig, inbound: &[Inbound], now: f64) -> Decision {
    let mut d = Decision::default();
    let msgs = resolve(state, inbound, now, &mut d);
    if cfg.policy != PolicyKind::MsrBlock {
        return mismatch(state, msgs, now, d);
    }
    let mut actions = Vec::new();
    for (f, p) in msgs {
        state.latest.insert(f.clone(), (now, p.clone()));
        match state.slot(&f).map(|s| s.role) {
            Some(FlowRole::Eflow) => {
                state.record(now, &f, LogAction::Event, "event", None, Some(&p));
            }
            _ => actions.push((f, p)),
        }
    }
    let mut used: Vec<(String, String)> = Vec::new();
    for (f, p) in actions {
        let Some(topic) = output_of(state, &f) else {
            d.drop(state, now, &f, DropReason::NoOutput, &p);
            continue;
        };
        if flow_bit(state, cfg, &f) == FlowAction::Block {
            d.drop(state, now, &f, DropReason::Blocked, &p);
            continue;
        }
        let matched = cfg.params.msr_rules.iter().find(|r| {
            state.resolve_flow(&r.target_aflow) == Some(f.as_str()) && eval_condition(state, cfg, &r.condition, &p, now)
        });
        match matched {
            Some(rule) if rule.effect == FlowAction::Block => {
                let rule = rule.id.clone();
                d.drop(state, now, &f, DropReason::RuleBlocked { rule }, &p);
                continue;
            }
            None if cfg.params.default_deny => {
                d.drop(state, now, &f, DropReason::DefaultDeny, &p);
                continue;
            }
            _ => {}
        }
        if let Some((_, by)) = used.iter().find(|(t, _)| *t == topic) {
            let by = by.clone();
            d.drop(state, now, &f, DropReason::Superseded { by }, &p);
        } else {
            used.push((topic.clone(), f.clone()));
            d.emit(state, now, &f, &topic, p);
        }
    }
    d
}

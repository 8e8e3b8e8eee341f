use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assertions::OnlineChecker;
use super::scenario::{PreparedScenario, ScenarioError};
use super::trace::{EventKind, Trace, TraceEvent, ViolationSource};
use crate::behavior::BehaviorSpec;
use crate::instrument::{default_policy, InstrumentedGraph, DEFAULT_FPS_PERIOD, DEFAULT_FPS_WINDOW};
use crate::payload::Payload;
use crate::policy::{
    Ack, CnState, CnType, ConfigError, Decision, DropReason, FpsMonitorState, Inbound, Note, PolicyConfig,
    PolicyEngine, Role, TIME_EPS,
};

const NS: f64 = 1e9;

fn to_ns(t: f64) -> u64 {
    (t * NS).round().max(0.0) as u64
}

fn to_secs(ns: u64) -> f64 {
    ns as f64 / NS
}

#[derive(Debug, Clone)]
enum Action {
    Periodic {
        node: String,
        behavior: usize,
        k: u64,
    },
    Script {
        node: String,
        behavior: usize,
        action: usize,
        rep: u64,
    },
    Publish {
        node: String,
        topic: String,
        payload: Payload,
    },
    Deliver {
        node: String,
        topic: String,
        payload: Payload,
        seq: u64,
    },
    MonitorTick {
        cn_id: String,
    },
    CnTick {
        cn_id: String,
    },
}

impl Action {
    fn node(&self) -> &str {
        match self {
            Action::Periodic { node, .. }
            | Action::Script { node, .. }
            | Action::Publish { node, .. }
            | Action::Deliver { node, .. } => node,
            Action::MonitorTick { cn_id } | Action::CnTick { cn_id } => cn_id,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: u64,
    seq: u64,
    action: Action,
}

impl Scheduled {
    fn key(&self) -> (u64, u64, &str) {
        (self.time, self.seq, self.action.node())
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Deterministic discrete-event run of one prepared scenario.
///
/// Events are ordered by (virtual time, scheduling sequence). Deliveries
/// that reach the same CN at the same instant are stepped as one batch.
#[derive(Debug)]
pub struct Simulation {
    prepared: PreparedScenario,
    routes: BTreeMap<(String, String), String>,
    cn_by_node: BTreeMap<String, usize>,
    engine: PolicyEngine,
    monitors: BTreeMap<String, FpsMonitorState>,
    ticking: BTreeSet<String>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    rng: ChaCha8Rng,
    trace: Trace,
    checker: OnlineChecker,
    flags: BTreeSet<String>,
    now: u64,
    end: u64,
    next_seq: u64,
    next_pub: u64,
    finished: bool,
}

impl Simulation {
    pub fn new(prepared: PreparedScenario, enforce_roles: bool) -> Result<Self, ScenarioError> {
        let ig = &prepared.graph;
        let mut engine = PolicyEngine::new(enforce_roles);
        let mut monitors = BTreeMap::new();
        let mut cn_by_node = BTreeMap::new();
        for (i, cn) in ig.cns.iter().enumerate() {
            cn_by_node.insert(cn.node_name.clone(), i);
            if cn.cn_type == CnType::FpsMonitor {
                let m = cn.monitor.clone();
                monitors.insert(
                    cn.id.clone(),
                    FpsMonitorState::new(
                        m.as_ref().map_or(DEFAULT_FPS_WINDOW, |m| m.window),
                        m.as_ref().map_or(DEFAULT_FPS_PERIOD, |m| m.period),
                    ),
                );
                continue;
            }
            let cfg = cn
                .default_policy
                .clone()
                .or_else(|| default_policy(cn.cn_type))
                .expect("policy-bearing CN has a default");
            engine.register(CnState::new(&cn.id, cn.cn_type, cn.flow_slots()), cfg);
        }
        for (cn_id, cfg) in &prepared.policies {
            engine
                .configure(cn_id, cfg.clone(), Role::Developer)
                .map_err(|source| ScenarioError::Config {
                    cn_id: cn_id.clone(),
                    source,
                })?;
        }

        let mut sim = Self {
            routes: ig.route_map(),
            cn_by_node,
            engine,
            monitors,
            ticking: BTreeSet::new(),
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(prepared.seed),
            trace: Trace::default(),
            checker: OnlineChecker::new(prepared.assertions.clone()),
            flags: prepared.flags.clone(),
            now: 0,
            end: to_ns(prepared.duration),
            next_seq: 0,
            next_pub: 0,
            finished: false,
            prepared,
        };
        sim.seed_schedule();
        Ok(sim)
    }

    fn seed_schedule(&mut self) {
        let mut initial = Vec::new();
        for (node, specs) in &self.prepared.behaviors {
            for (bi, b) in specs.iter().enumerate() {
                match b {
                    BehaviorSpec::PeriodicPublisher { .. } => initial.push(Action::Periodic {
                        node: node.clone(),
                        behavior: bi,
                        k: 0,
                    }),
                    BehaviorSpec::Script { actions } => {
                        for ai in 0..actions.len() {
                            initial.push(Action::Script {
                                node: node.clone(),
                                behavior: bi,
                                action: ai,
                                rep: 0,
                            });
                        }
                    }
                    BehaviorSpec::ReactiveTransform { .. } => {}
                }
            }
        }
        for a in initial {
            self.schedule_action(a);
        }
        let monitors: Vec<(String, f64)> = self.monitors.iter().map(|(id, m)| (id.clone(), m.period())).collect();
        for (cn_id, period) in monitors {
            self.schedule(to_ns(period), Action::MonitorTick { cn_id });
        }
        let tick_ids: Vec<String> = self.engine.ids().map(str::to_string).collect();
        for id in tick_ids {
            self.start_tick(&id);
        }
    }

    /// Computes the first firing time of a behaviour action and queues it.
    fn schedule_action(&mut self, action: Action) {
        let time = match &action {
            Action::Periodic { node, behavior, k } => {
                let BehaviorSpec::PeriodicPublisher {
                    rate_hz,
                    start,
                    stop,
                    jitter,
                    ..
                } = &self.prepared.behaviors[node][*behavior]
                else {
                    unreachable!("periodic action on a periodic behaviour")
                };
                let base = start + *k as f64 / rate_hz;
                if stop.is_some_and(|s| base > s + TIME_EPS) {
                    return;
                }
                let j = if *jitter > 0.0 {
                    self.rng.gen_range(0.0..*jitter)
                } else {
                    0.0
                };
                base + j
            }
            Action::Script {
                node,
                behavior,
                action,
                rep,
            } => {
                let BehaviorSpec::Script { actions } = &self.prepared.behaviors[node][*behavior] else {
                    unreachable!("script action on a script behaviour")
                };
                let a = &actions[*action];
                let t = a.at + a.repeat_every.unwrap_or(0.0) * *rep as f64;
                if *rep > 0 && a.until.is_some_and(|u| t > u + TIME_EPS) {
                    return;
                }
                t
            }
            _ => unreachable!("only behaviour actions are scheduled here"),
        };
        self.schedule(to_ns(time), action);
    }

    fn schedule(&mut self, time: u64, action: Action) {
        if time > self.end {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, action }));
    }

    fn start_tick(&mut self, cn_id: &str) {
        let period = self.engine.config(cn_id).and_then(|c| c.params.output_tick);
        if let Some(p) = period.filter(|p| *p > 0.0) {
            if self.ticking.insert(cn_id.to_string()) {
                self.schedule(
                    self.now + to_ns(p),
                    Action::CnTick {
                        cn_id: cn_id.to_string(),
                    },
                );
            }
        }
    }

    pub fn now(&self) -> f64 {
        to_secs(self.now)
    }

    pub fn duration(&self) -> f64 {
        to_secs(self.end)
    }

    pub fn is_done(&self) -> bool {
        self.finished
    }

    pub fn graph(&self) -> &InstrumentedGraph {
        &self.prepared.graph
    }

    pub fn prepared(&self) -> &PreparedScenario {
        &self.prepared
    }

    pub fn engine(&self) -> &PolicyEngine {
        &self.engine
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn flags(&self) -> &BTreeSet<String> {
        &self.flags
    }

    pub fn set_flag(&mut self, flag: &str, on: bool) {
        if on {
            self.flags.insert(flag.to_string());
        } else {
            self.flags.remove(flag);
        }
    }

    /// Applies a policy between steps.
    pub fn configure(&mut self, cn_id: &str, cfg: PolicyConfig, role: Role) -> Result<Ack, ConfigError> {
        let ack = self.engine.configure(cn_id, cfg, role)?;
        self.start_tick(cn_id);
        Ok(ack)
    }

    /// Processes every event at the next instant. Returns `false` when
    /// nothing is left before the end of the run.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(head)) = self.queue.peek() else {
            return false;
        };
        let t = head.time;
        self.now = t;
        let mut bucket = Vec::new();
        while self.queue.peek().is_some_and(|Reverse(s)| s.time == t) {
            bucket.push(self.queue.pop().expect("peeked").0);
        }
        let mut batches: Vec<(String, Vec<Inbound>)> = Vec::new();
        for s in bucket {
            match s.action {
                Action::Deliver {
                    node,
                    topic,
                    payload,
                    seq,
                } => {
                    if let Some((cn_id, inbound)) = self.deliver(&node, &topic, payload, seq) {
                        match batches.iter_mut().find(|(id, _)| *id == cn_id) {
                            Some((_, v)) => v.push(inbound),
                            None => batches.push((cn_id, vec![inbound])),
                        }
                    }
                }
                Action::Periodic { node, behavior, k } => {
                    let BehaviorSpec::PeriodicPublisher { topic, payload, .. } =
                        self.prepared.behaviors[&node][behavior].clone()
                    else {
                        unreachable!("periodic action on a periodic behaviour")
                    };
                    for out in self.outputs(&node, topic.as_deref()) {
                        self.publish(&node, &out, payload.clone());
                    }
                    self.schedule_action(Action::Periodic {
                        node,
                        behavior,
                        k: k + 1,
                    });
                }
                Action::Script {
                    node,
                    behavior,
                    action,
                    rep,
                } => {
                    let BehaviorSpec::Script { actions } = &self.prepared.behaviors[&node][behavior] else {
                        unreachable!("script action on a script behaviour")
                    };
                    let a = actions[action].clone();
                    if a.gate.as_ref().is_none_or(|g| self.flags.contains(g)) {
                        self.publish(&node, &a.topic, a.payload.clone());
                    }
                    if a.repeat_every.is_some() {
                        self.schedule_action(Action::Script {
                            node,
                            behavior,
                            action,
                            rep: rep + 1,
                        });
                    }
                }
                Action::Publish { node, topic, payload } => self.publish(&node, &topic, payload),
                Action::MonitorTick { cn_id } => {
                    let m = self.monitors.get_mut(&cn_id).expect("monitor registered");
                    let fps = m.fps(to_secs(t));
                    let period = m.period();
                    let cn = &self.prepared.graph.cns[self.cn_by_node[&self.cn_node(&cn_id)]];
                    let (node, outputs) = (cn.node_name.clone(), cn.output_topics.clone());
                    for out in outputs {
                        self.publish(&node, &out, Payload::Scalar(fps));
                    }
                    self.schedule(t + to_ns(period), Action::MonitorTick { cn_id });
                }
                Action::CnTick { cn_id } => {
                    let period = self.engine.config(&cn_id).and_then(|c| c.params.output_tick);
                    match period.filter(|p| *p > 0.0) {
                        Some(p) => {
                            let d = self.engine.tick(&cn_id, to_secs(t)).expect("registered CN");
                            self.apply_decision(&cn_id, None, d);
                            self.schedule(t + to_ns(p), Action::CnTick { cn_id });
                        }
                        None => {
                            self.ticking.remove(&cn_id);
                        }
                    }
                }
            }
        }
        for (cn_id, inbound) in batches {
            let flow = match inbound.as_slice() {
                [one] => Some(one.flow.clone()),
                _ => None,
            };
            let d = self.engine.step(&cn_id, &inbound, to_secs(t)).expect("registered CN");
            self.apply_decision(&cn_id, flow, d);
        }
        true
    }

    fn cn_node(&self, cn_id: &str) -> String {
        self.prepared.graph.cn(cn_id).expect("known CN").node_name.clone()
    }

    /// Runs every instant up to and including `t` (clamped to the end).
    pub fn advance_to(&mut self, t: f64) {
        let limit = to_ns(t).min(self.end);
        while self.queue.peek().is_some_and(|Reverse(s)| s.time <= limit) {
            self.step();
        }
        self.now = self.now.max(limit);
    }

    /// Finishes the run and closes open `eventually` assertions.
    pub fn run_to_end(&mut self) -> &Trace {
        if !self.finished {
            self.advance_to(to_secs(self.end));
            let end = to_secs(self.end);
            self.trace.events.extend(self.checker.finish(end));
            self.finished = true;
        }
        &self.trace
    }

    pub fn into_trace(mut self) -> Trace {
        self.run_to_end();
        self.trace
    }

    /// Logical topics a behaviour writes: the explicit one or every
    /// publication the node declares in the original graph.
    fn outputs(&self, node: &str, topic: Option<&str>) -> Vec<String> {
        match topic {
            Some(t) => vec![t.to_string()],
            None => self
                .prepared
                .original
                .node(node)
                .map(|n| n.publishes.iter().cloned().collect())
                .unwrap_or_default(),
        }
    }

    fn publish(&mut self, node: &str, logical: &str, payload: Payload) {
        let actual = self
            .routes
            .get(&(node.to_string(), logical.to_string()))
            .cloned()
            .unwrap_or_else(|| logical.to_string());
        let seq = self.next_pub;
        self.next_pub += 1;
        self.trace.events.push(TraceEvent {
            time: to_secs(self.now),
            kind: EventKind::Publish {
                seq,
                node: node.to_string(),
                topic: actual.clone(),
                logical_topic: logical.to_string(),
                payload: payload.clone(),
            },
        });
        let at = self.now + to_ns(self.prepared.link_latency);
        let subs: Vec<String> = self
            .prepared
            .graph
            .graph
            .subscribers_of(&actual)
            .iter()
            .cloned()
            .collect();
        for sub in subs {
            self.schedule(
                at,
                Action::Deliver {
                    node: sub,
                    topic: actual.clone(),
                    payload: payload.clone(),
                    seq,
                },
            );
        }
    }

    /// Records a delivery and reacts to it. CN inputs are returned for
    /// batching instead of being stepped immediately.
    fn deliver(&mut self, node: &str, topic: &str, payload: Payload, seq: u64) -> Option<(String, Inbound)> {
        let time = to_secs(self.now);
        self.trace.events.push(TraceEvent {
            time,
            kind: EventKind::Deliver {
                seq,
                node: node.to_string(),
                topic: topic.to_string(),
                payload: payload.clone(),
            },
        });
        let violations = self.checker.on_deliver(time, node, topic, &payload);
        self.trace.events.extend(violations);

        if let Some(&i) = self.cn_by_node.get(node) {
            let cn = &self.prepared.graph.cns[i];
            if cn.cn_type == CnType::FpsMonitor {
                if let Some(m) = self.monitors.get_mut(&cn.id) {
                    m.on_detection(time);
                }
                return None;
            }
            let flow = cn
                .flow_for_topic(topic)
                .map_or_else(|| topic.to_string(), |b| b.flow_id.clone());
            return Some((cn.id.clone(), Inbound::new(&flow, payload)));
        }

        let reactions: Vec<(f64, Option<String>, Option<Payload>)> = self
            .prepared
            .behaviors
            .get(node)
            .into_iter()
            .flatten()
            .filter_map(|b| match b {
                BehaviorSpec::ReactiveTransform {
                    input,
                    output,
                    latency,
                    payload,
                } if input.as_deref().is_none_or(|i| i == topic) => Some((*latency, output.clone(), payload.clone())),
                _ => None,
            })
            .collect();
        for (latency, output, fixed) in reactions {
            let body = fixed.unwrap_or_else(|| payload.clone());
            for out in self.outputs(node, output.as_deref()) {
                self.schedule(
                    self.now + to_ns(latency),
                    Action::Publish {
                        node: node.to_string(),
                        topic: out,
                        payload: body.clone(),
                    },
                );
            }
        }
        None
    }

    fn apply_decision(&mut self, cn_id: &str, flow: Option<String>, d: Decision) {
        if d.is_empty() {
            return;
        }
        let time = to_secs(self.now);
        let policy = self
            .engine
            .config(cn_id)
            .map(|c| c.policy.to_string())
            .unwrap_or_default();
        let node = self.cn_node(cn_id);
        let emitted = d.emitted.clone();
        let violations = cn_violations(cn_id, &policy, &d);
        self.trace.events.push(TraceEvent {
            time,
            kind: EventKind::CnDecision {
                cn_id: cn_id.to_string(),
                flow,
                decision: d,
            },
        });
        for v in violations {
            self.trace.events.push(TraceEvent { time, kind: v });
        }
        for e in emitted {
            self.publish(&node, &e.topic, e.payload);
        }
    }
}

/// Violation events a CN decision implies.
fn cn_violations(cn_id: &str, policy: &str, d: &Decision) -> Vec<EventKind> {
    let mk = |rule: &str, cause: &str, details: String| EventKind::Violation {
        source: ViolationSource::Cn {
            cn_id: cn_id.to_string(),
        },
        rule: rule.to_string(),
        cause: cause.to_string(),
        details,
    };
    let mut out = Vec::new();
    for n in &d.notes {
        match n {
            Note::Clamped {
                flow, from, to, limit, ..
            } => out.push(mk(
                policy,
                "max_vel exceeds limit",
                format!("{flow}: {from} clamped to {to} (limit {limit})"),
            )),
            Note::StaleFps { flows } => out.push(mk(policy, "stale fps", flows.join(", "))),
        }
    }
    for dr in &d.dropped {
        let flow = &dr.flow;
        let v = match &dr.reason {
            DropReason::Blocked => mk(policy, "flow blocked", format!("{flow} blocked")),
            DropReason::Preempted { by } => mk(policy, "flow preempted", format!("{flow} preempted by {by}")),
            DropReason::Expired { age } => mk(policy, "queued message expired", format!("{flow} after {age:.3}s")),
            DropReason::RuleBlocked { rule } => mk(rule, "action blocked by rule", format!("{flow} blocked")),
            DropReason::DefaultDeny => mk(policy, "action not permitted", format!("{flow} denied")),
            DropReason::UnknownFlow => mk(policy, "unknown flow", flow.clone()),
            DropReason::Superseded { .. } | DropReason::NoOutput | DropReason::PolicyMismatch => continue,
        };
        out.push(v);
    }
    out
}

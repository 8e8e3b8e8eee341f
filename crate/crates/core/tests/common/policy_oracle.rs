//! Reference interpreter for the CN policies and the randomized property
//! suite that compares it with the engine. The interpreter keeps time in
//! integer milliseconds and full arrival histories, so it shares no
//! arithmetic with the step functions under test.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roboguard_core::payload::{CmpOp, Payload, Predicate};
use roboguard_core::policy::step::{step, tick};
use roboguard_core::policy::{
    CnState, CnType, Condition, Decision, DropReason, FlowAction, FlowRole, FlowSlot, Inbound, LogAction, MsrRule,
    PolicyConfig, PolicyKind,
};

#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub steps: usize,
    pub counterexamples: Vec<String>,
}

impl PropertyOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            steps: 0,
            counterexamples: Vec::new(),
        }
    }

    fn fail(&mut self, msg: String) {
        if self.counterexamples.len() < 20 {
            self.counterexamples.push(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

const EPISODE: usize = 50;
const DT_MS: &[i64] = &[1, 10, 50, 100, 150, 200, 250, 300, 500, 700, 1000];

fn secs(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

fn next_tick(rng: &mut ChaCha8Rng, now: i64) -> i64 {
    now + DT_MS[rng.gen_range(0..DT_MS.len())]
}

fn distinct_priorities(rng: &mut ChaCha8Rng, flows: &[&str]) -> Vec<(String, i64)> {
    let mut ranks: Vec<i64> = (0..flows.len() as i64).collect();
    for i in (1..ranks.len()).rev() {
        ranks.swap(i, rng.gen_range(0..=i));
    }
    flows.iter().zip(ranks).map(|(f, r)| (f.to_string(), r * 10)).collect()
}

fn prio_of(prios: &[(String, i64)], flow: &str) -> i64 {
    prios.iter().find(|(f, _)| f == flow).map(|p| p.1).unwrap_or(i64::MAX)
}

/// Steps a clone alongside the real state and reports any divergence.
fn step_checked(
    state: &mut CnState,
    cfg: &PolicyConfig,
    inbound: &[Inbound],
    now: f64,
    out: &mut PropertyOutcome,
) -> Decision {
    let mut twin = state.clone();
    let d = step(state, cfg, inbound, now);
    let d2 = step(&mut twin, cfg, inbound, now);
    if d != d2 || *state != twin {
        out.fail(format!("non-deterministic step at t={now}"));
    }
    d
}

fn speed_of(p: &Payload) -> f64 {
    p.speed().unwrap_or(f64::NAN)
}

fn random_velocity(rng: &mut ChaCha8Rng) -> Payload {
    if rng.gen_bool(0.5) {
        Payload::Scalar(rng.gen_range(-0.5..3.0))
    } else {
        Payload::twist(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0))
    }
}

// ---------------------------------------------------------------------------
// Constrain

pub fn constrain_clamp(seed: u64, steps: usize) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("constrain clamp bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flows = ["v1", "v2", "v3"];
    let topics = ["/max_vel", "/max_vel", "/cmd_vel"];
    while out.steps < steps {
        let limit = rng.gen_range(0.05..1.5);
        let prios = distinct_priorities(&mut rng, &flows);
        let mut cfg = PolicyConfig::constrain(limit);
        cfg.params.priority = prios.iter().cloned().collect();
        let slots = flows
            .iter()
            .zip(topics)
            .map(|(f, t)| FlowSlot::new(f, FlowRole::Vflow, Some(t)))
            .collect();
        let mut state = CnState::new("rsrcn_1", CnType::Rsrcn, slots);
        let mut now = 0;
        for _ in 0..EPISODE {
            now = next_tick(&mut rng, now);
            let mut inbound = Vec::new();
            for f in flows {
                if rng.gen_bool(0.6) {
                    inbound.push(Inbound::new(f, random_velocity(&mut rng)));
                }
            }
            let d = step_checked(&mut state, &cfg, &inbound, secs(now), &mut out);
            out.steps += 1;

            // Reference: per topic the lowest priority value wins, and its
            // speed is min(v, limit).
            let mut want: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
            for m in &inbound {
                let i = flows.iter().position(|f| *f == m.flow).unwrap();
                let cand = (flows[i], speed_of(&m.payload).min(limit));
                match want.get(topics[i]) {
                    Some((w, _)) if prio_of(&prios, w) <= prio_of(&prios, flows[i]) => {}
                    _ => {
                        want.insert(topics[i], cand);
                    }
                }
            }
            let got: BTreeMap<&str, (&str, f64)> = d
                .emitted
                .iter()
                .map(|e| (e.topic.as_str(), (e.flow.as_str(), speed_of(&e.payload))))
                .collect();
            for e in &d.emitted {
                if speed_of(&e.payload) > limit + 1e-12 {
                    out.fail(format!(
                        "t={now}ms {} emitted {} above limit {limit}",
                        e.flow,
                        speed_of(&e.payload)
                    ));
                }
            }
            let same = want.len() == got.len()
                && want
                    .iter()
                    .all(|(t, (f, v))| got.get(t).is_some_and(|(gf, gv)| gf == f && (gv - v).abs() < 1e-9));
            if !same {
                out.fail(format!("t={now}ms want {want:?} got {got:?}"));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Safe

pub fn safe_clamp(seed: u64, steps: usize) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("safe clamp bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.steps < steps {
        let n_fps = rng.gen_range(1..=3);
        let fps_flows: Vec<String> = (1..=n_fps).map(|i| format!("fps_{i}")).collect();
        let threshold = rng.gen_range(0.005..0.05);
        let freshness_ms: i64 = [300, 1000][rng.gen_range(0..2)];
        let mut cfg = PolicyConfig::safe(threshold);
        cfg.params.fps_freshness = Some(secs(freshness_ms));
        let mut slots = vec![FlowSlot::new("vflow_1", FlowRole::Vflow, Some("/max_vel"))];
        slots.extend(fps_flows.iter().map(|f| FlowSlot::new(f, FlowRole::Fps, None)));
        let mut state = CnState::new("rsrcn_1", CnType::Rsrcn, slots);
        let mut history: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
        let mut now = 0;
        for _ in 0..EPISODE {
            now = next_tick(&mut rng, now);
            let mut inbound = Vec::new();
            for f in &fps_flows {
                if rng.gen_bool(0.5) {
                    let fps = rng.gen_range(0.0..30.0);
                    history.entry(f.clone()).or_default().push((now, fps));
                    inbound.push(Inbound::new(f, Payload::Scalar(fps)));
                }
            }
            let v = rng.gen_bool(0.7).then(|| rng.gen_range(0.0..2.0));
            if let Some(v) = v {
                inbound.push(Inbound::new("vflow_1", Payload::Scalar(v)));
            }
            let d = step_checked(&mut state, &cfg, &inbound, secs(now), &mut out);
            out.steps += 1;

            let fps_min = fps_flows
                .iter()
                .map(|f| match history.get(f).and_then(|h| h.last()) {
                    Some((t, fps)) if now - t <= freshness_ms => *fps,
                    _ => 0.0,
                })
                .fold(f64::INFINITY, f64::min);
            let bound = threshold * fps_min;
            match (v, d.emitted.as_slice()) {
                (None, []) => {}
                (Some(v), [e]) => {
                    let got = speed_of(&e.payload);
                    if got > bound + 1e-12 {
                        out.fail(format!("t={now}ms emitted {got} above {bound}"));
                    }
                    if (got - v.min(bound)).abs() > 1e-9 {
                        out.fail(format!("t={now}ms emitted {got}, reference {}", v.min(bound)));
                    }
                }
                (v, e) => out.fail(format!("t={now}ms velocity {v:?} but {} emissions", e.len())),
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Preemption

pub fn preemption_dominance(seed: u64, steps: usize) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("preemption dominance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = ["flow_1", "flow_2", "flow_3", "flow_4"];
    while out.steps < steps {
        let flows = &all[..rng.gen_range(2..=4)];
        let prios = distinct_priorities(&mut rng, flows);
        let window_ms: i64 = [200, 500, 1000][rng.gen_range(0..3)];
        let pairs: Vec<(&str, i64)> = prios.iter().map(|(f, p)| (f.as_str(), *p)).collect();
        let mut cfg = PolicyConfig::preemption(&pairs);
        cfg.params.activity_window = Some(secs(window_ms));
        let rates: Vec<f64> = flows.iter().map(|_| rng.gen_range(0.1..0.9)).collect();
        let slots = flows
            .iter()
            .map(|f| FlowSlot::new(f, FlowRole::Generic, Some("/cmd_vel")))
            .collect();
        let mut state = CnState::new("grcn_1", CnType::Grcn, slots);
        let mut arrivals: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
        let mut now = 0;
        for _ in 0..EPISODE {
            now = next_tick(&mut rng, now);
            let senders: Vec<&str> = flows
                .iter()
                .zip(&rates)
                .filter(|(_, r)| rng.gen_bool(**r))
                .map(|(f, _)| *f)
                .collect();
            for f in &senders {
                arrivals.entry(f).or_default().push(now);
            }
            let inbound: Vec<Inbound> = senders
                .iter()
                .map(|f| Inbound::new(f, Payload::twist(0.1, 0.0)))
                .collect();
            let d = step_checked(&mut state, &cfg, &inbound, secs(now), &mut out);
            out.steps += 1;

            let active = |f: &str| {
                arrivals
                    .get(f)
                    .is_some_and(|ts| ts.iter().any(|t| now - t <= window_ms && *t <= now))
            };
            let want: Vec<&str> = senders
                .iter()
                .copied()
                .filter(|f| {
                    !flows
                        .iter()
                        .any(|g| prio_of(&prios, g) < prio_of(&prios, f) && active(g))
                })
                .collect();
            let got: Vec<&str> = d.emitted.iter().map(|e| e.flow.as_str()).collect();
            for e in &d.emitted {
                if let Some(g) = flows
                    .iter()
                    .find(|g| prio_of(&prios, g) < prio_of(&prios, &e.flow) && active(g))
                {
                    out.fail(format!("t={now}ms {} emitted while {g} active", e.flow));
                }
            }
            if want != got {
                out.fail(format!("t={now}ms want {want:?} got {got:?}"));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Queues

struct RefEntry {
    id: i64,
    flow: &'static str,
    enq: i64,
    seq: usize,
}

fn queue_property(name: &'static str, kind: PolicyKind, seed: u64, steps: usize) -> PropertyOutcome {
    let mut out = PropertyOutcome::new(name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flows: [&'static str; 3] = ["flow_1", "flow_2", "flow_3"];
    let mut next_id = 0i64;
    let mut enqueued: BTreeMap<i64, i64> = BTreeMap::new();
    while out.steps < steps {
        let timeout_ms: i64 = [50, 200, 500][rng.gen_range(0..3)];
        let prios = distinct_priorities(&mut rng, &flows);
        let pairs: Vec<(&str, i64)> = prios.iter().map(|(f, p)| (f.as_str(), *p)).collect();
        let mut cfg = match kind {
            PolicyKind::FifoQueue => PolicyConfig::fifo(secs(timeout_ms)),
            _ => PolicyConfig::priority_queue(secs(timeout_ms), &pairs),
        };
        let ticked = rng.gen_bool(0.5);
        if ticked {
            cfg.params.output_tick = Some(0.1);
        }
        let slots = flows
            .iter()
            .map(|f| FlowSlot::new(f, FlowRole::Generic, Some("/out")))
            .collect();
        let mut state = CnState::new("grcn_1", CnType::Grcn, slots);
        let mut queue: VecDeque<RefEntry> = VecDeque::new();
        let mut seq = 0usize;
        let mut now = 0;
        for _ in 0..EPISODE {
            now = next_tick(&mut rng, now);
            let mut inbound = Vec::new();
            for f in flows {
                if rng.gen_bool(0.4) {
                    next_id += 1;
                    queue.push_back(RefEntry {
                        id: next_id,
                        flow: f,
                        enq: now,
                        seq,
                    });
                    enqueued.insert(next_id, now);
                    seq += 1;
                    inbound.push(Inbound::new(f, Payload::Scalar(next_id as f64)));
                }
            }
            let mut d = step_checked(&mut state, &cfg, &inbound, secs(now), &mut out);
            let drains = !ticked || rng.gen_bool(0.5);
            if ticked && drains {
                d = tick(&mut state, &cfg, secs(now));
            }
            out.steps += 1;

            let mut want = Vec::new();
            if drains {
                queue.retain(|e| now - e.enq <= timeout_ms);
                let pick = match kind {
                    PolicyKind::FifoQueue => (!queue.is_empty()).then_some(0),
                    _ => (0..queue.len()).min_by_key(|&i| (prio_of(&prios, queue[i].flow), queue[i].enq, queue[i].seq)),
                };
                if let Some(i) = pick {
                    want.push(queue.remove(i).unwrap().id);
                }
            }
            let got: Vec<i64> = d
                .emitted
                .iter()
                .map(|e| match e.payload {
                    Payload::Scalar(v) => v as i64,
                    _ => -1,
                })
                .collect();
            for id in &got {
                match enqueued.get(id) {
                    Some(enq) if now - enq > timeout_ms => {
                        out.fail(format!("t={now}ms entry {id} emitted at age {}ms", now - enq))
                    }
                    Some(_) => {}
                    None => out.fail(format!("t={now}ms emitted unknown entry {id}")),
                }
            }
            if got != want {
                out.fail(format!("t={now}ms want {want:?} got {got:?}"));
            }
        }
    }
    out
}

pub fn fifo_timeout(seed: u64, steps: usize) -> PropertyOutcome {
    queue_property("fifo timeout bound", PolicyKind::FifoQueue, seed, steps)
}

pub fn priority_queue_timeout(seed: u64, steps: usize) -> PropertyOutcome {
    queue_property("priority queue timeout bound", PolicyKind::PriorityQueue, seed, steps)
}

// ---------------------------------------------------------------------------
// MSR blocking

const EFLOWS: [&str; 3] = ["eflow_1", "eflow_2", "eflow_3"];
const AFLOWS: [&str; 2] = ["aflow_1", "aflow_2"];

fn random_condition(rng: &mut ChaCha8Rng, depth: u32) -> Condition {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return match rng.gen_range(0..5) {
            0 => Condition::Always,
            1 => Condition::Action(Predicate::compare("data", CmpOp::Gt, rng.gen_range(0.0..1.0))),
            _ => Condition::Event(EFLOWS[rng.gen_range(0..EFLOWS.len())].to_string()),
        };
    }
    match rng.gen_range(0..3) {
        0 => Condition::Not(Box::new(random_condition(rng, depth - 1))),
        1 => Condition::And((0..2).map(|_| random_condition(rng, depth - 1)).collect()),
        _ => Condition::Or((0..2).map(|_| random_condition(rng, depth - 1)).collect()),
    }
}

/// Trigger bits rebuilt from event records, evaluated as the rules define.
struct EventView<'a> {
    latest: BTreeMap<&'a str, (i64, f64)>,
    now: i64,
    freshness_ms: i64,
    floor: Option<(&'a str, f64)>,
}

impl EventView<'_> {
    fn bit(&self, flow: &str) -> bool {
        match self.latest.get(flow) {
            Some((t, v)) if self.now - t <= self.freshness_ms => match self.floor {
                Some((f, min)) if f == flow => *v > min,
                _ => true,
            },
            _ => false,
        }
    }

    fn eval(&self, c: &Condition, action: f64) -> bool {
        match c {
            Condition::Always => true,
            Condition::Event(f) => self.bit(f),
            Condition::Action(Predicate::Compare { value, .. }) => action > *value,
            Condition::Action(_) => unreachable!("generator emits comparisons only"),
            Condition::And(cs) => cs.iter().all(|c| self.eval(c, action)),
            Condition::Or(cs) => cs.iter().any(|c| self.eval(c, action)),
            Condition::Not(c) => !self.eval(c, action),
        }
    }
}

fn ms(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

pub fn msr_block_soundness(seed: u64, steps: usize) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("msr block soundness");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.steps < steps {
        let rules: Vec<MsrRule> = (0..rng.gen_range(1..=4))
            .map(|i| MsrRule {
                id: format!("rule_{i}"),
                condition: random_condition(&mut rng, 2),
                target_aflow: AFLOWS[rng.gen_range(0..AFLOWS.len())].to_string(),
                effect: if rng.gen_bool(0.7) {
                    FlowAction::Block
                } else {
                    FlowAction::Allow
                },
            })
            .collect();
        let freshness_ms: i64 = [200, 500, 1000][rng.gen_range(0..3)];
        let mut cfg = PolicyConfig::msr_block(rules.clone());
        cfg.params.event_freshness = Some(secs(freshness_ms));
        cfg.params.default_deny = rng.gen_bool(0.3);
        let floor = rng.gen_bool(0.5).then(|| ("eflow_1", rng.gen_range(0.0..1.0)));
        if let Some((f, min)) = floor {
            cfg.params
                .event_predicates
                .insert(f.to_string(), Predicate::compare("data", CmpOp::Gt, min));
        }
        let mut slots: Vec<FlowSlot> = EFLOWS.iter().map(|f| FlowSlot::new(f, FlowRole::Eflow, None)).collect();
        slots.push(FlowSlot::new("aflow_1", FlowRole::Aflow, Some("/goal")));
        slots.push(FlowSlot::new("aflow_2", FlowRole::Aflow, Some("/cmd")));
        let mut state = CnState::new("msrcn_1", CnType::Msrcn, slots);
        let mut view = EventView {
            latest: BTreeMap::new(),
            now: 0,
            freshness_ms,
            floor,
        };
        let mut now = 0;
        for _ in 0..EPISODE {
            now = next_tick(&mut rng, now);
            view.now = now;
            let mut inbound = Vec::new();
            for f in EFLOWS {
                if rng.gen_bool(0.3) {
                    let v = rng.gen_range(0.0..1.0);
                    view.latest.insert(f, (now, v));
                    inbound.push(Inbound::new(f, Payload::Scalar(v)));
                }
            }
            let mut actions = Vec::new();
            for f in AFLOWS {
                if rng.gen_bool(0.6) {
                    let v = rng.gen_range(0.0..1.0);
                    actions.push((f, v));
                    inbound.push(Inbound::new(f, Payload::Scalar(v)));
                }
            }
            let d = step_checked(&mut state, &cfg, &inbound, secs(now), &mut out);
            out.steps += 1;

            let mut want_emit = Vec::new();
            let mut want_block = Vec::new();
            for (f, v) in &actions {
                let hit = rules
                    .iter()
                    .find(|r| r.target_aflow == *f && view.eval(&r.condition, *v));
                match hit {
                    Some(r) if r.effect == FlowAction::Block => want_block.push((f.to_string(), Some(r.id.clone()))),
                    None if cfg.params.default_deny => want_block.push((f.to_string(), None)),
                    _ => want_emit.push(f.to_string()),
                }
            }
            let got_emit: Vec<String> = d.emitted.iter().map(|e| e.flow.clone()).collect();
            let got_block: Vec<(String, Option<String>)> = d
                .dropped
                .iter()
                .map(|x| match &x.reason {
                    DropReason::RuleBlocked { rule } => (x.flow.clone(), Some(rule.clone())),
                    _ => (x.flow.clone(), None),
                })
                .collect();
            if got_emit != want_emit || got_block != want_block {
                out.fail(format!(
                    "t={now}ms want emit {want_emit:?} block {want_block:?}, got emit {got_emit:?} block {got_block:?}"
                ));
            }
        }
        replay_blocks(&state, &rules, freshness_ms, floor, &mut out);
    }
    out
}

/// Every rule-blocked action must have had its rule's condition true at
/// decision time, as reconstructed from the event records alone.
fn replay_blocks(
    state: &CnState,
    rules: &[MsrRule],
    freshness_ms: i64,
    floor: Option<(&str, f64)>,
    out: &mut PropertyOutcome,
) {
    let log = state.trigger_log();
    for (i, r) in log.iter().enumerate() {
        let Some(rule_id) = &r.rule else { continue };
        let Some(rule) = rules.iter().find(|x| &x.id == rule_id) else {
            out.fail(format!("log names unknown rule {rule_id}"));
            continue;
        };
        let mut latest = BTreeMap::new();
        for e in &log[..i] {
            if matches!(e.action, LogAction::Event) {
                if let Some(Payload::Scalar(v)) = e.payload {
                    latest.insert(e.flow.as_str(), (ms(e.time), v));
                }
            }
        }
        let view = EventView {
            latest,
            now: ms(r.time),
            freshness_ms,
            floor,
        };
        let action = match r.payload {
            Some(Payload::Scalar(v)) => v,
            _ => f64::NAN,
        };
        if !view.eval(&rule.condition, action) {
            out.fail(format!(
                "t={} {} blocked by {rule_id} whose condition is false",
                r.time, r.flow
            ));
        }
    }
}

pub const POLICY_SUITE_STEPS: usize = 1000;

/// All policy properties, each over at least `steps` randomized steps.
pub fn policy_suite(seed: u64, steps: usize) -> Vec<PropertyOutcome> {
    vec![
        constrain_clamp(seed, steps),
        safe_clamp(seed + 1, steps),
        preemption_dominance(seed + 2, steps),
        fifo_timeout(seed + 3, steps),
        priority_queue_timeout(seed + 4, steps),
        msr_block_soundness(seed + 5, steps),
    ]
}

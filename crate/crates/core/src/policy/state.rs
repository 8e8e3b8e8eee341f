use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{CnType, FlowRole, PolicyParams, TIME_EPS};
use crate::payload::Payload;

/// One input flow of a coordination node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSlot {
    pub flow_id: String,
    pub role: FlowRole,
    /// Topic this flow's admitted messages are published on. Event and fps
    /// flows are read-only and have none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_topic: Option<String>,
    /// Other keys that name this flow in policy parameters (source node,
    /// original or rewired topic).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub aliases: BTreeSet<String>,
}

impl FlowSlot {
    pub fn new(flow_id: &str, role: FlowRole, output_topic: Option<&str>) -> Self {
        Self {
            flow_id: flow_id.to_string(),
            role,
            output_topic: output_topic.map(str::to_string),
            aliases: BTreeSet::new(),
        }
    }

    pub fn with_aliases<I: IntoIterator<Item = S>, S: Into<String>>(mut self, aliases: I) -> Self {
        self.aliases.extend(aliases.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub seq: u64,
    pub flow: String,
    pub payload: Payload,
    pub enqueued: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogAction {
    Emit,
    Drop,
    Clamp,
    Event,
    Fps,
}

/// Line record of the decision/trigger log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub time: f64,
    pub cn_id: String,
    pub flow: String,
    pub action: LogAction,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
}

/// Mutable state owned by one coordination node.
#[derive(Debug, Clone, PartialEq)]
pub struct CnState {
    cn_id: String,
    cn_type: CnType,
    slots: BTreeMap<String, FlowSlot>,
    aliases: BTreeMap<String, String>,
    pub(super) latest: BTreeMap<String, (f64, Payload)>,
    pub(super) queue: VecDeque<QueueEntry>,
    pub(super) next_seq: u64,
    pub(super) log: Vec<TriggerRecord>,
}

impl CnState {
    pub fn new(cn_id: &str, cn_type: CnType, slots: Vec<FlowSlot>) -> Self {
        let mut aliases = BTreeMap::new();
        for s in &slots {
            for a in &s.aliases {
                aliases.entry(a.clone()).or_insert_with(|| s.flow_id.clone());
            }
        }
        Self {
            cn_id: cn_id.to_string(),
            cn_type,
            slots: slots.into_iter().map(|s| (s.flow_id.clone(), s)).collect(),
            aliases,
            latest: BTreeMap::new(),
            queue: VecDeque::new(),
            next_seq: 0,
            log: Vec::new(),
        }
    }

    pub fn cn_id(&self) -> &str {
        &self.cn_id
    }

    pub fn cn_type(&self) -> CnType {
        self.cn_type
    }

    pub fn slot(&self, flow_id: &str) -> Option<&FlowSlot> {
        self.slots.get(flow_id)
    }

    pub fn slots(&self) -> impl Iterator<Item = &FlowSlot> {
        self.slots.values()
    }

    pub fn flows_with_role(&self, role: FlowRole) -> impl Iterator<Item = &FlowSlot> {
        self.slots.values().filter(move |s| s.role == role)
    }

    /// Maps a flow id or one of its aliases to the flow id.
    pub fn resolve_flow<'a>(&'a self, key: &'a str) -> Option<&'a str> {
        if let Some((id, _)) = self.slots.get_key_value(key) {
            Some(id.as_str())
        } else {
            self.aliases.get(key).map(String::as_str)
        }
    }

    pub fn latest(&self, flow_id: &str) -> Option<&(f64, Payload)> {
        self.latest.get(flow_id)
    }

    pub fn queue(&self) -> &VecDeque<QueueEntry> {
        &self.queue
    }

    pub fn clear_queue(&mut self) {
        self.queue.clear();
    }

    pub fn trigger_log(&self) -> &[TriggerRecord] {
        &self.log
    }

    pub(super) fn record(
        &mut self,
        time: f64,
        flow: &str,
        action: LogAction,
        reason: impl Into<String>,
        rule: Option<&str>,
        payload: Option<&Payload>,
    ) {
        self.log.push(TriggerRecord {
            time,
            cn_id: self.cn_id.clone(),
            flow: flow.to_string(),
            action,
            reason: reason.into(),
            rule: rule.map(str::to_string),
            payload: payload.cloned(),
        });
    }

    /// Minimum fps over all fps inputs, counting a missing or stale sample
    /// as 0. Also returns the flows whose samples were stale.
    pub fn fps_min(&self, now: f64, freshness: f64) -> (f64, Vec<String>) {
        let mut min = f64::INFINITY;
        let mut stale = Vec::new();
        for s in self.flows_with_role(FlowRole::Fps) {
            let value = match self.latest.get(&s.flow_id) {
                Some((t, p)) if now - t <= freshness + TIME_EPS => p.speed().unwrap_or(0.0).max(0.0),
                _ => {
                    stale.push(s.flow_id.clone());
                    0.0
                }
            };
            min = min.min(value);
        }
        if min.is_infinite() {
            min = 0.0;
        }
        (min, stale)
    }

    /// Trigger bit of an eflow: a fresh message whose content satisfies
    /// the flow's predicate, if one is configured.
    pub fn trigger_bit(&self, flow: &str, now: f64, params: &PolicyParams) -> bool {
        let Some(id) = self.resolve_flow(flow) else {
            return false;
        };
        let Some((t, payload)) = self.latest.get(id) else {
            return false;
        };
        if now - t > params.event_freshness() + TIME_EPS {
            return false;
        }
        let predicate = params
            .event_predicates
            .iter()
            .find(|(k, _)| self.resolve_flow(k) == Some(id))
            .map(|(_, p)| p);
        predicate.is_none_or(|p| p.eval(payload))
    }
}

/// Sliding-window frequency meter bound to one detection topic.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsMonitorState {
    window: f64,
    period: f64,
    samples: VecDeque<f64>,
    next_tick: f64,
}

impl FpsMonitorState {
    pub fn new(window: f64, period: f64) -> Self {
        Self {
            window,
            period,
            samples: VecDeque::new(),
            next_tick: 0.0,
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn on_detection(&mut self, now: f64) {
        self.samples.push_back(now);
    }

    /// Detections younger than the window divided by the window length.
    pub fn fps(&mut self, now: f64) -> f64 {
        while let Some(&t) = self.samples.front() {
            if now - t >= self.window - TIME_EPS {
                self.samples.pop_front();
            } else {
                break;
            }
        }
        self.samples.len() as f64 / self.window
    }

    /// Records `arrivals` and, when a publication tick is due, returns the
    /// fps to publish.
    pub fn step(&mut self, arrivals: &[f64], now: f64) -> Option<f64> {
        for &t in arrivals {
            self.on_detection(t);
        }
        if now + TIME_EPS >= self.next_tick {
            self.next_tick = now + self.period;
            Some(self.fps(now))
        } else {
            None
        }
    }
}

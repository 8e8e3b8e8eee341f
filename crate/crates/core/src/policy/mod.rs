//! Policies executed inside coordination nodes.
//!
//! A [`PolicyConfig`] names one policy plus its parameters. The step
//! functions in [`step`] apply a config to a [`CnState`] and a batch of
//! inbound messages; [`PolicyEngine`] owns the per-CN state and validates
//! runtime reconfiguration.

mod engine;
mod state;
pub mod step;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::Predicate;

pub use engine::{Ack, CnHandle, PolicyEngine};
pub use state::{CnState, FlowSlot, FpsMonitorState, LogAction, QueueEntry, TriggerRecord};
pub use step::{Decision, DropReason, Dropped, Emission, Inbound, Note};

/// Ages are compared with this tolerance so that float rounding in
/// `now - t` does not flip window and timeout boundaries.
pub const TIME_EPS: f64 = 1e-9;

pub const DEFAULT_ACTIVITY_WINDOW: f64 = 0.5;
pub const DEFAULT_FPS_FRESHNESS: f64 = 1.0;
pub const DEFAULT_EVENT_FRESHNESS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CnType {
    #[serde(rename = "GRCN")]
    Grcn,
    #[serde(rename = "RSRCN")]
    Rsrcn,
    #[serde(rename = "MSRCN")]
    Msrcn,
    FpsMonitor,
}

impl CnType {
    pub fn as_str(self) -> &'static str {
        match self {
            CnType::Grcn => "GRCN",
            CnType::Rsrcn => "RSRCN",
            CnType::Msrcn => "MSRCN",
            CnType::FpsMonitor => "FpsMonitor",
        }
    }

    pub fn allowed_policies(self) -> &'static [PolicyKind] {
        match self {
            CnType::Grcn => &[
                PolicyKind::Block,
                PolicyKind::FifoQueue,
                PolicyKind::PriorityQueue,
                PolicyKind::Preemption,
            ],
            CnType::Rsrcn => &[PolicyKind::Block, PolicyKind::Safe, PolicyKind::Constrain],
            CnType::Msrcn => &[PolicyKind::MsrBlock],
            CnType::FpsMonitor => &[],
        }
    }
}

impl fmt::Display for CnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowRole {
    Generic,
    Vflow,
    Iflow,
    Eflow,
    Aflow,
    Fps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    Block,
    FifoQueue,
    PriorityQueue,
    Preemption,
    Safe,
    Constrain,
    MsrBlock,
}

impl PolicyKind {
    /// Switching between policies of different classes clears queued
    /// entries; FIFO and priority queues share a class.
    fn class(self) -> u8 {
        match self {
            PolicyKind::FifoQueue | PolicyKind::PriorityQueue => 1,
            PolicyKind::Preemption => 2,
            _ => 0,
        }
    }

    pub fn same_class(self, other: PolicyKind) -> bool {
        self.class() == other.class()
    }

    /// Who selects this policy.
    pub fn executor(self) -> Role {
        match self {
            PolicyKind::Constrain | PolicyKind::MsrBlock => Role::EndUser,
            _ => Role::Developer,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Developer,
    EndUser,
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "developer" | "dev" => Ok(Role::Developer),
            "end_user" | "enduser" | "user" => Ok(Role::EndUser),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowAction {
    Allow,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Always,
    /// Trigger bit of an eflow.
    Event(String),
    /// Content of the action message under decision.
    Action(Predicate),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    pub fn event_flows(&self) -> Vec<&str> {
        match self {
            Condition::Event(f) => vec![f.as_str()],
            Condition::And(v) | Condition::Or(v) => v.iter().flat_map(|c| c.event_flows()).collect(),
            Condition::Not(c) => c.event_flows(),
            Condition::Always | Condition::Action(_) => Vec::new(),
        }
    }
}

/// `IF condition THEN effect ON target_aflow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsrRule {
    pub id: String,
    pub condition: Condition,
    pub target_aflow: String,
    pub effect: FlowAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub block_bits: BTreeMap<String, FlowAction>,
    /// Queue entry lifetime in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
    /// Lower value wins.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub priority: BTreeMap<String, i64>,
    /// Velocity allowed per unit of fps (Safe).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_vel_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub msr_rules: Vec<MsrRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps_freshness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_freshness: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub event_predicates: BTreeMap<String, Predicate>,
    /// MSRCN: block actions no rule matched.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default_deny: bool,
    /// Queue policies drain on this period instead of on arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tick: Option<f64>,
}

impl PolicyParams {
    pub fn activity_window(&self) -> f64 {
        self.activity_window.unwrap_or(DEFAULT_ACTIVITY_WINDOW)
    }

    pub fn fps_freshness(&self) -> f64 {
        self.fps_freshness.unwrap_or(DEFAULT_FPS_FRESHNESS)
    }

    pub fn event_freshness(&self) -> f64 {
        self.event_freshness.unwrap_or(DEFAULT_EVENT_FRESHNESS)
    }

    /// Every flow key the parameters mention.
    fn flow_keys(&self) -> BTreeSet<&str> {
        let mut keys: BTreeSet<&str> = self.block_bits.keys().map(String::as_str).collect();
        keys.extend(self.priority.keys().map(String::as_str));
        keys.extend(self.event_predicates.keys().map(String::as_str));
        for r in &self.msr_rules {
            keys.insert(r.target_aflow.as_str());
            keys.extend(r.condition.event_flows());
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub policy: PolicyKind,
    #[serde(default)]
    pub params: PolicyParams,
    /// End users cannot replace a mandatory policy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mandatory: bool,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ConfigError {
    #[error("unknown coordination node {cn_id}")]
    UnknownCn { cn_id: String },
    #[error("policy {policy} is not valid for a {cn_type}")]
    InvalidPolicyForCnType { cn_type: CnType, policy: PolicyKind },
    #[error("role violation: {reason}")]
    RoleViolation { reason: String },
    #[error("policy on {cn_id} is mandatory and cannot be replaced by an end user")]
    MandatoryPolicy { cn_id: String },
    #[error("invalid parameters: {reason}")]
    InvalidParams { reason: String },
}

fn invalid(reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidParams { reason: reason.into() }
}

fn positive(name: &str, v: Option<f64>) -> Result<f64, ConfigError> {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(invalid(format!("{name} must be > 0, got {x}"))),
        None => Err(invalid(format!("{name} is required"))),
    }
}

fn non_negative(name: &str, v: Option<f64>) -> Result<f64, ConfigError> {
    match v {
        Some(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(invalid(format!("{name} must be >= 0, got {x}"))),
        None => Err(invalid(format!("{name} is required"))),
    }
}

impl PolicyConfig {
    pub fn new(policy: PolicyKind) -> Self {
        Self {
            policy,
            params: PolicyParams::default(),
            mandatory: false,
        }
    }

    pub fn block_all_allow() -> Self {
        Self::new(PolicyKind::Block)
    }

    pub fn constrain(limit: f64) -> Self {
        let mut c = Self::new(PolicyKind::Constrain);
        c.params.max_vel_limit = Some(limit);
        c
    }

    pub fn safe(threshold: f64) -> Self {
        let mut c = Self::new(PolicyKind::Safe);
        c.params.threshold = Some(threshold);
        c
    }

    pub fn fifo(timeout: f64) -> Self {
        let mut c = Self::new(PolicyKind::FifoQueue);
        c.params.timeout = Some(timeout);
        c
    }

    pub fn priority_queue(timeout: f64, priority: &[(&str, i64)]) -> Self {
        let mut c = Self::new(PolicyKind::PriorityQueue);
        c.params.timeout = Some(timeout);
        c.params.priority = priority.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        c
    }

    pub fn preemption(priority: &[(&str, i64)]) -> Self {
        let mut c = Self::new(PolicyKind::Preemption);
        c.params.priority = priority.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        c
    }

    pub fn msr_block(rules: Vec<MsrRule>) -> Self {
        let mut c = Self::new(PolicyKind::MsrBlock);
        c.params.msr_rules = rules;
        c
    }

    /// Checks the parameters the policy requires, independent of any CN.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        match self.policy {
            PolicyKind::Block | PolicyKind::MsrBlock => {}
            PolicyKind::FifoQueue => {
                positive("timeout", p.timeout)?;
            }
            PolicyKind::PriorityQueue => {
                positive("timeout", p.timeout)?;
                if p.priority.is_empty() {
                    return Err(invalid("priority is required"));
                }
            }
            PolicyKind::Preemption => {
                if p.priority.is_empty() {
                    return Err(invalid("priority is required"));
                }
            }
            PolicyKind::Safe => {
                non_negative("threshold", p.threshold)?;
            }
            PolicyKind::Constrain => {
                non_negative("max_vel_limit", p.max_vel_limit)?;
            }
        }
        let mut seen = BTreeSet::new();
        for v in p.priority.values() {
            if !seen.insert(v) {
                return Err(invalid(format!("priority {v} assigned to more than one flow")));
            }
        }
        for (name, v) in [
            ("activity_window", p.activity_window),
            ("fps_freshness", p.fps_freshness),
            ("event_freshness", p.event_freshness),
            ("output_tick", p.output_tick),
        ] {
            if v.is_some() {
                positive(name, v)?;
            }
        }
        let mut ids = BTreeSet::new();
        for r in &p.msr_rules {
            if !ids.insert(r.id.as_str()) {
                return Err(invalid(format!("duplicate rule id {}", r.id)));
            }
        }
        Ok(())
    }

    /// Full validation against a CN: policy fits the type, parameters are
    /// well formed, and every flow key resolves on `state`.
    pub fn validate_for(&self, state: &CnState) -> Result<(), ConfigError> {
        if !state.cn_type().allowed_policies().contains(&self.policy) {
            return Err(ConfigError::InvalidPolicyForCnType {
                cn_type: state.cn_type(),
                policy: self.policy,
            });
        }
        self.validate()?;
        for key in self.params.flow_keys() {
            if state.resolve_flow(key).is_none() {
                return Err(invalid(format!("unknown flow `{key}` on {}", state.cn_id())));
            }
        }
        for r in &self.params.msr_rules {
            let target = state.resolve_flow(&r.target_aflow).expect("checked above");
            if state.slot(target).map(|s| s.role) != Some(FlowRole::Aflow) {
                return Err(invalid(format!(
                    "rule {} targets non-action flow {}",
                    r.id, r.target_aflow
                )));
            }
            for e in r.condition.event_flows() {
                let id = state.resolve_flow(e).expect("checked above");
                if state.slot(id).map(|s| s.role) != Some(FlowRole::Eflow) {
                    return Err(invalid(format!("rule {} reads non-event flow {e}", r.id)));
                }
            }
        }
        Ok(())
    }
}

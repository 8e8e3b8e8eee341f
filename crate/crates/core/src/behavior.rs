//! Node dynamics used by the simulator.

use serde::{Deserialize, Serialize};

use crate::payload::Payload;

/// How a node behaves at simulation time. Topics are always the node's
/// logical (pre-instrumentation) topic names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    /// Publishes `payload` at `rate_hz` between `start` and `stop`.
    PeriodicPublisher {
        /// Defaults to every topic the node publishes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic: Option<String>,
        rate_hz: f64,
        payload: Payload,
        #[serde(default)]
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop: Option<f64>,
        /// Uniform jitter bound in seconds, drawn from the scenario seed.
        #[serde(default)]
        jitter: f64,
    },
    /// Republishes after `latency` whenever a message arrives on `input`.
    ReactiveTransform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output: Option<String>,
        #[serde(default)]
        latency: f64,
        /// `None` forwards the received payload unchanged.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<Payload>,
    },
    Script {
        actions: Vec<ScriptAction>,
    },
}

/// A timed publication, optionally repeated and gated on a scenario flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptAction {
    pub at: f64,
    pub topic: String,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<f64>,
    /// Scenario flag that must be set for the action to fire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
}

impl BehaviorSpec {
    /// Checks the numeric invariants: positive rates, non-negative
    /// latencies, and non-decreasing script times.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            BehaviorSpec::PeriodicPublisher {
                rate_hz,
                jitter,
                start,
                stop,
                ..
            } => {
                if !(*rate_hz > 0.0 && rate_hz.is_finite()) {
                    return Err(format!("rate_hz must be > 0, got {rate_hz}"));
                }
                if *jitter < 0.0 || *jitter >= 1.0 / rate_hz {
                    return Err(format!("jitter must lie in [0, period), got {jitter}"));
                }
                if *start < 0.0 || stop.is_some_and(|s| s < *start) {
                    return Err("publication window is empty or negative".into());
                }
            }
            BehaviorSpec::ReactiveTransform { latency, .. } => {
                if *latency < 0.0 {
                    return Err(format!("latency must be >= 0, got {latency}"));
                }
            }
            BehaviorSpec::Script { actions } => {
                for pair in actions.windows(2) {
                    if pair[1].at < pair[0].at {
                        return Err(format!(
                            "script times must be non-decreasing ({} after {})",
                            pair[1].at, pair[0].at
                        ));
                    }
                }
                for a in actions {
                    a.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Logical topics this behaviour publishes on (given the node's
    /// declared publications).
    pub fn published_topics<'a>(&'a self, declared: &'a [String]) -> Vec<&'a str> {
        match self {
            BehaviorSpec::PeriodicPublisher { topic: Some(t), .. } => vec![t.as_str()],
            BehaviorSpec::PeriodicPublisher { topic: None, .. } => declared.iter().map(String::as_str).collect(),
            BehaviorSpec::ReactiveTransform { output: Some(t), .. } => vec![t.as_str()],
            BehaviorSpec::ReactiveTransform { output: None, .. } => declared.iter().map(String::as_str).collect(),
            BehaviorSpec::Script { actions } => actions.iter().map(|a| a.topic.as_str()).collect(),
        }
    }
}

impl ScriptAction {
    pub fn validate(&self) -> Result<(), String> {
        if self.at < 0.0 {
            return Err(format!("script time must be >= 0, got {}", self.at));
        }
        if let Some(every) = self.repeat_every {
            if every.is_nan() || every <= 0.0 {
                return Err(format!("repeat_every must be > 0, got {every}"));
            }
        }
        Ok(())
    }
}

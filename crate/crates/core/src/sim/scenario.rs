use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assertions::Assertion;
use crate::behavior::{BehaviorSpec, ScriptAction};
use crate::graph::{parse_graph, GraphError, InteractionGraph};
use crate::instrument::{instrument, uninstrument, InstrumentError, InstrumentedGraph};
use crate::policy::{CnType, ConfigError, PolicyConfig};
use crate::risk::{discover_all, MatchTables};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario syntax at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error("scenario references unknown node {0}")]
    UnknownNode(String),
    #[error("no coordination node matches selector {0}")]
    UnknownCn(String),
    #[error("node {node}: {reason}")]
    Behavior { node: String, reason: String },
    #[error("policy for {cn_id}: {source}")]
    Config {
        cn_id: String,
        #[source]
        source: ConfigError,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Graph given by path (relative to the scenario file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Path(String),
    Inline(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub node: String,
    /// Scenario flag every action of this attack is gated on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
    pub actions: Vec<ScriptAction>,
}

/// Picks a CN by id, or by type and (optionally) one of its output topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CnSelector {
    Id(String),
    Match {
        #[serde(rename = "type")]
        cn_type: CnType,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic: Option<String>,
    },
}

impl std::fmt::Display for CnSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CnSelector::Id(id) => f.write_str(id),
            CnSelector::Match {
                cn_type,
                topic: Some(t),
            } => write!(f, "{cn_type} on {t}"),
            CnSelector::Match { cn_type, topic: None } => write!(f, "{cn_type}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyAssignment {
    pub cn: CnSelector,
    pub config: PolicyConfig,
}

fn default_latency() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub graph: GraphSource,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Insert coordination nodes before running.
    #[serde(default)]
    pub instrument: bool,
    /// Fixed per-edge delivery latency in seconds.
    #[serde(default = "default_latency")]
    pub link_latency: f64,
    #[serde(default)]
    pub flags: BTreeSet<String>,
    #[serde(default)]
    pub behaviors: BTreeMap<String, BehaviorSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub policies: Vec<PolicyAssignment>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<MatchTables>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    fn load_graph(&self) -> Result<(InteractionGraph, Option<InstrumentedGraph>), ScenarioError> {
        let value = match &self.graph {
            GraphSource::Inline(v) => v.clone(),
            GraphSource::Path(p) => {
                let path = self.base_dir.as_deref().unwrap_or(Path::new(".")).join(p);
                let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
                    line: e.line(),
                    reason: format!("{}: {e}", path.display()),
                })?
            }
        };
        if value.get("cns").is_some() {
            let ig = InstrumentedGraph::from_json(&value.to_string())?;
            Ok((uninstrument(&ig), Some(ig)))
        } else {
            Ok((parse_graph(&value.to_string())?, None))
        }
    }

    /// Resolves the graph, instrumentation, behaviours and policies.
    /// `instrument` overrides the scenario's own flag when set.
    pub fn prepare(&self, instrument_override: Option<bool>) -> Result<PreparedScenario, ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        if !(self.link_latency >= 0.0 && self.link_latency.is_finite()) {
            return Err(ScenarioError::Invalid("link_latency must be >= 0".into()));
        }
        let want = instrument_override.unwrap_or(self.instrument);
        let (original, given) = self.load_graph()?;
        let ig = match (want, given) {
            (true, Some(ig)) => ig,
            (true, None) => {
                let tables = self.tables.clone().unwrap_or_default();
                let report = discover_all(&original, &tables);
                instrument(&original, &report, &BTreeMap::new())?
            }
            (false, _) => InstrumentedGraph {
                graph: original.clone(),
                cns: Vec::new(),
            },
        };

        let mut behaviors: BTreeMap<String, Vec<BehaviorSpec>> = BTreeMap::new();
        for n in original.nodes() {
            if let Some(b) = &n.behavior {
                behaviors.entry(n.name.clone()).or_default().push(b.clone());
            }
        }
        for (node, b) in &self.behaviors {
            let b = crate::graph::normalize_behavior(b.clone());
            check_behavior(&original, node, &b)?;
            behaviors.insert(node.clone(), vec![b]);
        }
        for a in &self.attacks {
            let actions = a
                .actions
                .iter()
                .cloned()
                .map(|mut act| {
                    act.topic = crate::graph::normalize_topic(&act.topic);
                    if act.gate.is_none() {
                        act.gate = a.gate.clone();
                    }
                    act
                })
                .collect();
            let b = BehaviorSpec::Script { actions };
            check_behavior(&original, &a.node, &b)?;
            behaviors.entry(a.node.clone()).or_default().push(b);
        }

        let mut policies = Vec::new();
        for p in &self.policies {
            let hits: Vec<&str> = ig
                .cns
                .iter()
                .filter(|c| match &p.cn {
                    CnSelector::Id(id) => &c.id == id,
                    CnSelector::Match { cn_type, topic } => {
                        c.cn_type == *cn_type
                            && topic
                                .as_ref()
                                .is_none_or(|t| c.output_topics.contains(&crate::graph::normalize_topic(t)))
                    }
                })
                .map(|c| c.id.as_str())
                .collect();
            match hits.as_slice() {
                [] if ig.cns.is_empty() => {}
                [] => return Err(ScenarioError::UnknownCn(p.cn.to_string())),
                ids => {
                    for id in ids {
                        policies.push((id.to_string(), p.config.clone()));
                    }
                }
            }
        }

        for a in &self.assertions {
            if let Some(to) = a.target_node() {
                if ig.graph.node(to).is_none() {
                    return Err(ScenarioError::UnknownNode(to.to_string()));
                }
            }
        }

        Ok(PreparedScenario {
            name: self.name.clone(),
            instrumented: want,
            original,
            graph: ig,
            behaviors,
            policies,
            flags: self.flags.clone(),
            assertions: self.assertions.clone(),
            duration: self.duration,
            seed: self.seed,
            link_latency: self.link_latency,
        })
    }
}

fn check_behavior(g: &InteractionGraph, node: &str, b: &BehaviorSpec) -> Result<(), ScenarioError> {
    let n = g
        .node(node)
        .ok_or_else(|| ScenarioError::UnknownNode(node.to_string()))?;
    b.validate().map_err(|reason| ScenarioError::Behavior {
        node: node.to_string(),
        reason,
    })?;
    let declared: Vec<String> = n.publishes.iter().cloned().collect();
    for t in b.published_topics(&declared) {
        if !n.publishes.contains(&crate::graph::normalize_topic(t)) {
            return Err(ScenarioError::Behavior {
                node: node.to_string(),
                reason: format!("publishes undeclared topic {t}"),
            });
        }
    }
    Ok(())
}

/// Everything the simulator needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub name: String,
    pub instrumented: bool,
    /// The graph without coordination nodes; behaviours use its topics.
    pub original: InteractionGraph,
    pub graph: InstrumentedGraph,
    pub behaviors: BTreeMap<String, Vec<BehaviorSpec>>,
    /// (cn id, config) in application order.
    pub policies: Vec<(String, PolicyConfig)>,
    pub flags: BTreeSet<String>,
    pub assertions: Vec<Assertion>,
    pub duration: f64,
    pub seed: u64,
    pub link_latency: f64,
}

//! Inserts coordination nodes into an interaction graph.
//!
//! Function nodes are never modified beyond remapping the topic they
//! publish on. A remapped publication `/t` becomes `/t/<flow_id>`, the CN
//! subscribes that topic and republishes admitted messages on `/t`.
//! Planning runs GRCNs first, then the RSRCN with its fps monitors, then
//! the MSRCN; each stage remaps whoever currently publishes the topic, so
//! CNs chain when several risks share a topic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorSpec;
use crate::graph::{Domain, GraphDocument, GraphError, InteractionGraph, MessageType, NodeSpec};
pub use crate::policy::{CnType, FlowRole};
use crate::policy::{FlowSlot, PolicyConfig};
use crate::risk::{RiskFinding, RiskKind, RiskReport};

/// Namespace of every CN node name.
pub const CN_PREFIX: &str = "/cn/";
pub const FPS_TYPE: &str = "std_msgs/Float64";
pub const DEFAULT_FPS_WINDOW: f64 = 1.0;
pub const DEFAULT_FPS_PERIOD: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum InstrumentError {
    #[error("report fingerprint {report} does not match graph fingerprint {graph}")]
    FingerprintMismatch { report: String, graph: String },
    #[error("report has no RSR findings")]
    NoRsrRisk,
    #[error("report has no MSR findings")]
    NoMsrRisk,
    #[error("graph is already instrumented (node {0})")]
    AlreadyInstrumented(String),
    #[error("malformed instrumented graph: {0}")]
    Malformed(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One input of a CN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowBinding {
    pub flow_id: String,
    /// Nodes whose publications form this flow.
    pub sources: Vec<String>,
    pub original_topic: String,
    /// Topic the CN subscribes. Equals `original_topic` for taps.
    pub rewired_topic: String,
    pub role: FlowRole,
    /// `true` when `sources` were moved to `rewired_topic`; `false` for
    /// read-only taps (events, detections, fps).
    pub remapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub window: f64,
    pub period: f64,
}

/// The risk a CN mitigates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskRef {
    pub kind: RiskKind,
    pub topic: String,
    pub risky_nodes: BTreeSet<String>,
}

impl From<&RiskFinding> for RiskRef {
    fn from(f: &RiskFinding) -> Self {
        Self {
            kind: f.kind,
            topic: f.topic.clone(),
            risky_nodes: f.risky_nodes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationNodeSpec {
    pub id: String,
    pub cn_type: CnType,
    pub node_name: String,
    pub inputs: Vec<FlowBinding>,
    /// Logical topics the CN publishes.
    pub output_topics: Vec<String>,
    pub successors: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_policy: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorParams>,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub risks: Vec<RiskRef>,
}

impl CoordinationNodeSpec {
    pub fn flows_with_role(&self, role: FlowRole) -> impl Iterator<Item = &FlowBinding> {
        self.inputs.iter().filter(move |b| b.role == role)
    }

    /// Policy-engine view of the inputs.
    pub fn flow_slots(&self) -> Vec<FlowSlot> {
        let mut topic_uses: BTreeMap<&str, usize> = BTreeMap::new();
        for b in &self.inputs {
            *topic_uses.entry(b.original_topic.as_str()).or_default() += 1;
        }
        self.inputs
            .iter()
            .map(|b| {
                let output = match b.role {
                    FlowRole::Generic | FlowRole::Vflow | FlowRole::Aflow => Some(b.original_topic.as_str()),
                    _ => None,
                };
                let mut aliases: Vec<String> = b.sources.clone();
                aliases.push(b.rewired_topic.clone());
                if topic_uses[b.original_topic.as_str()] == 1 {
                    aliases.push(b.original_topic.clone());
                }
                aliases.retain(|a| a != &b.flow_id);
                FlowSlot::new(&b.flow_id, b.role, output).with_aliases(aliases)
            })
            .collect()
    }

    /// Flow bound to a topic the CN subscribes.
    pub fn flow_for_topic(&self, topic: &str) -> Option<&FlowBinding> {
        self.inputs.iter().find(|b| b.rewired_topic == topic)
    }
}

/// Entry of the CN configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnConfigEntry {
    pub id: String,
    #[serde(rename = "type")]
    pub cn_type: CnType,
    pub flows: Vec<FlowBinding>,
    pub policy: Option<PolicyConfig>,
    pub params: CnParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnParams {
    pub node: String,
    pub outputs: Vec<String>,
    pub successors: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedGraph {
    pub graph: InteractionGraph,
    pub cns: Vec<CoordinationNodeSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstrumentedDocument {
    graph: GraphDocument,
    cns: Vec<CoordinationNodeSpec>,
}

impl InstrumentedGraph {
    pub fn cn(&self, id: &str) -> Option<&CoordinationNodeSpec> {
        self.cns.iter().find(|c| c.id == id)
    }

    pub fn count(&self, ty: CnType) -> usize {
        self.cns.iter().filter(|c| c.cn_type == ty).count()
    }

    /// Actual topic for a node's logical publication.
    pub fn route_map(&self) -> BTreeMap<(String, String), String> {
        let mut map = BTreeMap::new();
        for cn in &self.cns {
            for b in cn.inputs.iter().filter(|b| b.remapped) {
                for s in &b.sources {
                    map.insert((s.clone(), b.original_topic.clone()), b.rewired_topic.clone());
                }
            }
        }
        map
    }

    pub fn cn_config(&self) -> Vec<CnConfigEntry> {
        self.cns
            .iter()
            .map(|c| CnConfigEntry {
                id: c.id.clone(),
                cn_type: c.cn_type,
                flows: c.inputs.clone(),
                policy: c.default_policy.clone(),
                params: CnParams {
                    node: c.node_name.clone(),
                    outputs: c.output_topics.clone(),
                    successors: c.successors.clone(),
                    window: c.monitor.as_ref().map(|m| m.window),
                    period: c.monitor.as_ref().map(|m| m.period),
                },
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = InstrumentedDocument {
            graph: self.graph.to_document(),
            cns: self.cns.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("instrumented graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InstrumentError> {
        let mut doc: InstrumentedDocument =
            serde_json::from_str(text).map_err(|e| InstrumentError::Malformed(e.to_string()))?;
        // Behaviours name the topics a node believes it publishes, which a
        // remap moved; they are checked against the graph without CNs.
        let behaviors: BTreeMap<String, BehaviorSpec> = doc
            .graph
            .nodes
            .iter_mut()
            .filter_map(|n| n.behavior.take().map(|b| (n.name.clone(), b)))
            .collect();
        let graph = doc.graph.into_graph()?;
        for cn in &doc.cns {
            if graph.node(&cn.node_name).is_none() {
                return Err(InstrumentError::Malformed(format!(
                    "CN node {} missing from graph",
                    cn.node_name
                )));
            }
        }
        let ig = Self { graph, cns: doc.cns };
        uninstrument(&ig).with_behaviors(behaviors.clone(), true)?;
        Ok(Self {
            graph: ig.graph.with_behaviors(behaviors, false)?,
            cns: ig.cns,
        })
    }
}

/// Built-in default policy per CN type.
pub fn default_policy(ty: CnType) -> Option<PolicyConfig> {
    match ty {
        CnType::Grcn | CnType::Rsrcn => Some(PolicyConfig::block_all_allow()),
        CnType::Msrcn => Some(PolicyConfig::msr_block(Vec::new())),
        CnType::FpsMonitor => None,
    }
}

struct Planner {
    graph: InteractionGraph,
    cns: Vec<CoordinationNodeSpec>,
    counters: BTreeMap<&'static str, usize>,
    defaults: BTreeMap<CnType, PolicyConfig>,
}

impl Planner {
    fn new(g: &InteractionGraph, defaults: &BTreeMap<CnType, PolicyConfig>) -> Self {
        Self {
            graph: g.clone(),
            cns: Vec::new(),
            counters: BTreeMap::new(),
            defaults: defaults.clone(),
        }
    }

    fn next_id(&mut self, prefix: &'static str) -> String {
        let n = self.counters.entry(prefix).or_default();
        *n += 1;
        format!("{prefix}{n}")
    }

    /// Next flow id whose derived topic is free.
    fn next_flow(&mut self, prefix: &'static str, topic: &str) -> (String, String) {
        loop {
            let id = self.next_id(prefix);
            let rewired = format!("{}/{}", topic.trim_end_matches('/'), id);
            if self.graph.topic(&rewired).is_none() {
                return (id, rewired);
            }
        }
    }

    fn cn_id(&mut self, ty: CnType) -> String {
        let prefix = match ty {
            CnType::Grcn => "grcn_",
            CnType::Rsrcn => "rsrcn_",
            CnType::Msrcn => "msrcn_",
            CnType::FpsMonitor => "fps_monitor_",
        };
        self.next_id(prefix)
    }

    fn msg_type(&self, topic: &str) -> MessageType {
        self.graph.topic(topic).expect("finding topics exist").msg_type.clone()
    }

    /// Moves every current publisher of `topic` onto a fresh flow topic.
    fn remap(&mut self, prefix: &'static str, role: FlowRole, topic: &str, sources: Vec<String>) -> FlowBinding {
        let (flow_id, rewired) = self.next_flow(prefix, topic);
        let ty = self.msg_type(topic);
        self.graph.add_topic(&rewired, ty);
        for s in &sources {
            self.graph.remap_publication(s, topic, &rewired);
        }
        FlowBinding {
            flow_id,
            sources,
            original_topic: topic.to_string(),
            rewired_topic: rewired,
            role,
            remapped: true,
        }
    }

    fn tap(&mut self, prefix: &'static str, role: FlowRole, topic: &str) -> FlowBinding {
        let flow_id = self.next_id(prefix);
        FlowBinding {
            flow_id,
            sources: self.graph.publishers_of(topic).iter().cloned().collect(),
            original_topic: topic.to_string(),
            rewired_topic: topic.to_string(),
            role,
            remapped: false,
        }
    }

    fn current_publishers(&self, topic: &str) -> Vec<String> {
        self.graph.publishers_of(topic).iter().cloned().collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn add_cn(
        &mut self,
        id: String,
        cn_type: CnType,
        inputs: Vec<FlowBinding>,
        output_topics: Vec<String>,
        successors: BTreeSet<String>,
        description: String,
        risks: Vec<RiskRef>,
        monitor: Option<MonitorParams>,
    ) {
        let node_name = format!("{CN_PREFIX}{id}");
        let mut node = NodeSpec::new(&node_name);
        node.subscribes = inputs.iter().map(|b| b.rewired_topic.clone()).collect();
        node.publishes = output_topics.iter().cloned().collect();
        node.domain_hint = Some(Domain::Other);
        self.graph.add_node(node);
        let default_policy = self.defaults.get(&cn_type).cloned().or_else(|| default_policy(cn_type));
        self.cns.push(CoordinationNodeSpec {
            id,
            cn_type,
            node_name,
            inputs,
            output_topics,
            successors,
            default_policy: if cn_type == CnType::FpsMonitor {
                None
            } else {
                default_policy
            },
            monitor,
            description,
            risks,
        });
    }

    fn plan_gr(&mut self, original: &InteractionGraph, report: &RiskReport) {
        for f in &report.gr_st {
            let id = self.cn_id(CnType::Grcn);
            let inputs: Vec<FlowBinding> = self
                .current_publishers(&f.topic)
                .into_iter()
                .map(|p| self.remap("flow", FlowRole::Generic, &f.topic, vec![p]))
                .collect();
            let successors = original.subscribers_of(&f.topic).clone();
            let description = format!("arbitrates {} publishers sharing {}", inputs.len(), f.topic);
            self.add_cn(
                id,
                CnType::Grcn,
                inputs,
                vec![f.topic.clone()],
                successors,
                description,
                vec![f.into()],
                None,
            );
        }
        for f in &report.gr_mt {
            let group: Vec<String> = if f.related_topics.is_empty() {
                vec![f.topic.clone()]
            } else {
                f.related_topics.clone()
            };
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            for t in &group {
                let pubs = self.current_publishers(t);
                if pubs.is_empty() {
                    continue;
                }
                inputs.push(self.remap("flow", FlowRole::Generic, t, pubs));
                outputs.push(t.clone());
            }
            if inputs.is_empty() {
                continue;
            }
            let id = self.cn_id(CnType::Grcn);
            let description = format!(
                "guards {} parallel {} inputs of {}",
                inputs.len(),
                f.msg_type,
                f.risky_nodes.iter().next().map(String::as_str).unwrap_or("?")
            );
            self.add_cn(
                id,
                CnType::Grcn,
                inputs,
                outputs,
                f.successors.clone(),
                description,
                vec![f.into()],
                None,
            );
        }
    }

    fn plan_rsr(&mut self, original: &InteractionGraph, report: &RiskReport) -> Result<(), InstrumentError> {
        if !report.has_rsr() {
            return Err(InstrumentError::NoRsrRisk);
        }
        let mut vel_topics: Vec<String> = report.rsr_max_vel.iter().map(|f| f.topic.clone()).collect();
        if vel_topics.is_empty() {
            vel_topics = report
                .msr_action
                .iter()
                .filter(|f| f.msg_type.full_name() == "geometry_msgs/Twist")
                .map(|f| f.topic.clone())
                .collect();
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut successors = BTreeSet::new();
        for t in &vel_topics {
            let pubs = self.current_publishers(t);
            if pubs.is_empty() {
                continue;
            }
            inputs.push(self.remap("vflow", FlowRole::Vflow, t, pubs));
            outputs.push(t.clone());
            successors.extend(original.subscribers_of(t).iter().cloned());
        }
        let rsrcn_id = self.cn_id(CnType::Rsrcn);
        let rsrcn_node = format!("{CN_PREFIX}{rsrcn_id}");
        for f in &report.rsr_image {
            let mon_id = self.cn_id(CnType::FpsMonitor);
            let iflow = self.tap("iflow", FlowRole::Iflow, &f.topic);
            let (fps_id, fps_topic) = self.next_flow("fps", &f.topic);
            self.graph
                .add_topic(&fps_topic, MessageType::parse(FPS_TYPE).expect("constant type"));
            let description = format!(
                "measures the detection rate of {} on {}",
                describe_set(&f.risky_nodes),
                f.topic
            );
            let mon_node = format!("{CN_PREFIX}{mon_id}");
            self.add_cn(
                mon_id,
                CnType::FpsMonitor,
                vec![iflow],
                vec![fps_topic.clone()],
                BTreeSet::from([rsrcn_node.clone()]),
                description,
                vec![f.into()],
                Some(MonitorParams {
                    window: DEFAULT_FPS_WINDOW,
                    period: DEFAULT_FPS_PERIOD,
                }),
            );
            inputs.push(FlowBinding {
                flow_id: fps_id,
                sources: vec![mon_node],
                original_topic: fps_topic.clone(),
                rewired_topic: fps_topic,
                role: FlowRole::Fps,
                remapped: false,
            });
        }
        let risks = report
            .rsr_max_vel
            .iter()
            .chain(&report.rsr_image)
            .map(RiskRef::from)
            .collect();
        let description = format!(
            "limits maximal velocity on {} by the frame rate of {} recognition node(s)",
            if outputs.is_empty() {
                "(none)".to_string()
            } else {
                outputs.join(", ")
            },
            report.rsr_image.len()
        );
        self.add_cn(
            rsrcn_id,
            CnType::Rsrcn,
            inputs,
            outputs,
            successors,
            description,
            risks,
            None,
        );
        Ok(())
    }

    fn plan_msr(&mut self, original: &InteractionGraph, report: &RiskReport) -> Result<(), InstrumentError> {
        if !report.has_msr() {
            return Err(InstrumentError::NoMsrRisk);
        }
        let action_topics: Vec<String> = report.msr_action.iter().map(|f| f.topic.clone()).collect();
        let mut event_topics: Vec<String> = Vec::new();
        for t in report.msr_event.iter().map(|f| f.topic.clone()).chain(
            report
                .rsr_image
                .iter()
                .flat_map(|f| f.topics().map(str::to_string).collect::<Vec<_>>()),
        ) {
            if !action_topics.contains(&t) && !event_topics.contains(&t) {
                event_topics.push(t);
            }
        }
        event_topics.sort();
        let id = self.cn_id(CnType::Msrcn);
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut successors = BTreeSet::new();
        for t in &action_topics {
            let pubs = self.current_publishers(t);
            inputs.push(self.remap("aflow", FlowRole::Aflow, t, pubs));
            outputs.push(t.clone());
            successors.extend(original.subscribers_of(t).iter().cloned());
        }
        for t in &event_topics {
            inputs.push(self.tap("eflow", FlowRole::Eflow, t));
        }
        let risks = report
            .msr_event
            .iter()
            .chain(&report.msr_action)
            .map(RiskRef::from)
            .collect();
        let description = format!(
            "gates {} action topic(s) on {} event topic(s)",
            action_topics.len(),
            event_topics.len()
        );
        self.add_cn(id, CnType::Msrcn, inputs, outputs, successors, description, risks, None);
        Ok(())
    }
}

fn describe_set(s: &BTreeSet<String>) -> String {
    s.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn check_preconditions(g: &InteractionGraph, report: &RiskReport) -> Result<(), InstrumentError> {
    if let Some(n) = g.nodes().find(|n| n.name.starts_with(CN_PREFIX)) {
        return Err(InstrumentError::AlreadyInstrumented(n.name.clone()));
    }
    let fp = g.fingerprint();
    if report.graph_fingerprint != fp {
        return Err(InstrumentError::FingerprintMismatch {
            report: report.graph_fingerprint.clone(),
            graph: fp,
        });
    }
    Ok(())
}

/// GRCNs alone, applied to `g`.
pub fn plan_grcns(g: &InteractionGraph, report: &RiskReport) -> Result<Vec<CoordinationNodeSpec>, InstrumentError> {
    check_preconditions(g, report)?;
    let mut p = Planner::new(g, &BTreeMap::new());
    p.plan_gr(g, report);
    Ok(p.cns)
}

/// The RSRCN and its fps monitors, planned on an otherwise untouched graph.
pub fn plan_rsrcn(
    g: &InteractionGraph,
    report: &RiskReport,
) -> Result<(CoordinationNodeSpec, Vec<CoordinationNodeSpec>), InstrumentError> {
    check_preconditions(g, report)?;
    let mut p = Planner::new(g, &BTreeMap::new());
    p.plan_rsr(g, report)?;
    let (rsrcn, monitors): (Vec<_>, Vec<_>) = p.cns.into_iter().partition(|c| c.cn_type == CnType::Rsrcn);
    Ok((rsrcn.into_iter().next().expect("one RSRCN planned"), monitors))
}

pub fn plan_msrcn(g: &InteractionGraph, report: &RiskReport) -> Result<CoordinationNodeSpec, InstrumentError> {
    check_preconditions(g, report)?;
    let mut p = Planner::new(g, &BTreeMap::new());
    p.plan_msr(g, report)?;
    Ok(p.cns.pop().expect("one MSRCN planned"))
}

/// Applies all planners. Stages without findings are skipped.
pub fn instrument(
    g: &InteractionGraph,
    report: &RiskReport,
    defaults: &BTreeMap<CnType, PolicyConfig>,
) -> Result<InstrumentedGraph, InstrumentError> {
    check_preconditions(g, report)?;
    let mut p = Planner::new(g, defaults);
    p.plan_gr(g, report);
    match p.plan_rsr(g, report) {
        Ok(()) | Err(InstrumentError::NoRsrRisk) => {}
        Err(e) => return Err(e),
    }
    match p.plan_msr(g, report) {
        Ok(()) | Err(InstrumentError::NoMsrRisk) => {}
        Err(e) => return Err(e),
    }
    Ok(InstrumentedGraph {
        graph: p.graph,
        cns: p.cns,
    })
}

/// Undoes [`instrument`]: restores remapped publications and removes CN
/// nodes and the topics they introduced.
pub fn uninstrument(ig: &InstrumentedGraph) -> InteractionGraph {
    let mut g = ig.graph.clone();
    for cn in ig.cns.iter().rev() {
        for b in &cn.inputs {
            if b.remapped {
                for s in &b.sources {
                    g.remap_publication(s, &b.rewired_topic, &b.original_topic);
                }
            }
        }
        g.remove_node(&cn.node_name);
        for b in cn.inputs.iter().filter(|b| b.remapped) {
            g.remove_topic(&b.rewired_topic);
        }
        if cn.cn_type == CnType::FpsMonitor {
            for t in &cn.output_topics {
                g.remove_topic(t);
            }
        }
    }
    g
}

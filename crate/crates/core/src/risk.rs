//! Rule-based discovery of high-risk nodes.
//!
//! Discovery keys purely on topic names and message types. Each rule yields
//! one [`RiskFinding`] per flagged topic (or per node for the rules that are
//! node-centric), and the six finding lists together form a [`RiskReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{InteractionGraph, MessageType, TopicSpec};

pub const IMAGE_TYPE: &str = "sensor_msgs/Image";
pub const MAX_VEL_TYPE: &str = "std_msgs/Float64";
pub const MAX_VEL_KEYWORD: &str = "max_vel";
pub const EVENT_NAME_KEYWORD: &str = "detect";
pub const ACTION_NAME_KEYWORD: &str = "goal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskKind {
    #[serde(rename = "GR_ST")]
    GrSt,
    #[serde(rename = "GR_MT")]
    GrMt,
    #[serde(rename = "RSR_Image")]
    RsrImage,
    #[serde(rename = "RSR_MaxVel")]
    RsrMaxVel,
    #[serde(rename = "MSR_Event")]
    MsrEvent,
    #[serde(rename = "MSR_Action")]
    MsrAction,
}

impl RiskKind {
    pub const ALL: [RiskKind; 6] = [
        RiskKind::GrSt,
        RiskKind::GrMt,
        RiskKind::RsrImage,
        RiskKind::RsrMaxVel,
        RiskKind::MsrEvent,
        RiskKind::MsrAction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::GrSt => "GR_ST",
            RiskKind::GrMt => "GR_MT",
            RiskKind::RsrImage => "RSR_Image",
            RiskKind::RsrMaxVel => "RSR_MaxVel",
            RiskKind::MsrEvent => "MSR_Event",
            RiskKind::MsrAction => "MSR_Action",
        }
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One flagged topic (or node) with the nodes that make it risky.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskFinding {
    pub kind: RiskKind,
    pub risky_nodes: BTreeSet<String>,
    /// The shared or flagged topic.
    pub topic: String,
    pub msg_type: MessageType,
    /// Further topics that belong to the finding: the parallel group for
    /// GR_MT, every recognition output for RSR_Image.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related_topics: Vec<String>,
    /// Publishers feeding the risky node (GR_MT, RSR_Image).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub upstream: BTreeSet<String>,
    /// Nodes consuming the flagged topic.
    pub successors: BTreeSet<String>,
    pub evidence: String,
}

impl RiskFinding {
    /// Every topic the finding cites.
    pub fn topics(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.topic.as_str()).chain(
            self.related_topics
                .iter()
                .map(String::as_str)
                .filter(move |t| *t != self.topic),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchTables {
    #[serde(default = "default_event_types")]
    pub event_msg_types: Vec<String>,
    #[serde(default = "default_action_types")]
    pub action_msg_types: Vec<String>,
    #[serde(default = "default_recog_keywords")]
    pub recog_topic_keywords: Vec<String>,
    #[serde(default = "default_denylist")]
    pub log_viz_denylist: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn default_event_types() -> Vec<String> {
    strings(&[
        "sensor_msgs/BatteryState",
        "sensor_msgs/Temperature",
        "sensor_msgs/RelativeHumidity",
        "sensor_msgs/MagneticField",
        "sensor_msgs/FluidPressure",
        "sensor_msgs/NavSatFix",
        "sensor_msgs/Illuminance",
        "nav_msgs/Odometry",
    ])
}

fn default_action_types() -> Vec<String> {
    strings(&[
        "geometry_msgs/Twist",
        "control_msgs/FollowJointTrajectoryAction",
        "audio_common_msgs/AudioData",
    ])
}

fn default_recog_keywords() -> Vec<String> {
    strings(&[
        "detect", "people", "face", "object", "person", "sign", "traffic", "lane",
    ])
}

fn default_denylist() -> Vec<String> {
    strings(&["rosout", "log", "rviz", "visual", "status_viz"])
}

impl Default for MatchTables {
    fn default() -> Self {
        Self {
            event_msg_types: default_event_types(),
            action_msg_types: default_action_types(),
            recog_topic_keywords: default_recog_keywords(),
            log_viz_denylist: default_denylist(),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid match tables: {0}")]
pub struct TablesError(String);

impl MatchTables {
    pub fn from_json(text: &str) -> Result<Self, TablesError> {
        serde_json::from_str(text).map_err(|e| TablesError(e.to_string()))
    }

    /// `true` when the topic is tagged or named as log/visualization output.
    pub fn is_log_or_viz(&self, topic: &TopicSpec) -> bool {
        !topic.tags.is_empty() || name_contains_any(&topic.name, &self.log_viz_denylist)
    }

    pub fn is_event_topic(&self, topic: &TopicSpec) -> bool {
        type_in_table(&topic.msg_type, &self.event_msg_types) || name_contains(&topic.name, EVENT_NAME_KEYWORD)
    }

    pub fn is_action_topic(&self, topic: &TopicSpec) -> bool {
        type_in_table(&topic.msg_type, &self.action_msg_types) || name_contains(&topic.name, ACTION_NAME_KEYWORD)
    }

    pub fn is_recognition_topic(&self, topic: &TopicSpec) -> bool {
        name_contains_any(&topic.name, &self.recog_topic_keywords)
    }
}

pub fn is_max_vel_topic(topic: &TopicSpec) -> bool {
    name_contains(&topic.name, MAX_VEL_KEYWORD) && type_is(&topic.msg_type, MAX_VEL_TYPE)
}

pub fn is_image_topic(topic: &TopicSpec) -> bool {
    type_is(&topic.msg_type, IMAGE_TYPE)
}

/// Repairs the singular package spelling (`geometry_msg/Twist`) to the
/// canonical plural form.
pub fn normalize_type_name(name: &str) -> String {
    let name = name.trim();
    match name.split_once('/') {
        Some((pkg, ty)) if pkg.ends_with("_msg") => format!("{pkg}s/{ty}"),
        _ => name.to_string(),
    }
}

fn type_is(t: &MessageType, expected: &str) -> bool {
    normalize_type_name(t.full_name()) == normalize_type_name(expected)
}

/// Exact match after normalization, then substring containment.
pub fn type_in_table(t: &MessageType, table: &[String]) -> bool {
    let actual = normalize_type_name(t.full_name());
    table.iter().any(|entry| {
        let entry = normalize_type_name(entry);
        !entry.is_empty() && (actual == entry || actual.contains(&entry))
    })
}

fn name_contains(name: &str, keyword: &str) -> bool {
    !keyword.is_empty() && name.to_lowercase().contains(&keyword.to_lowercase())
}

fn name_contains_any(name: &str, keywords: &[String]) -> bool {
    keywords.iter().any(|k| name_contains(name, k))
}

fn describe(nodes: &BTreeSet<String>) -> String {
    nodes.iter().cloned().collect::<Vec<_>>().join(", ")
}

pub fn discover_gr(g: &InteractionGraph, mt: &MatchTables) -> Vec<RiskFinding> {
    let mut out = Vec::new();
    for topic in g.topics() {
        if mt.is_log_or_viz(topic) {
            continue;
        }
        let pubs = g.publishers_of(&topic.name);
        if pubs.len() >= 2 {
            out.push(RiskFinding {
                kind: RiskKind::GrSt,
                risky_nodes: pubs.clone(),
                topic: topic.name.clone(),
                msg_type: topic.msg_type.clone(),
                related_topics: Vec::new(),
                upstream: BTreeSet::new(),
                successors: g.subscribers_of(&topic.name).clone(),
                evidence: format!(
                    "{} publishers share {} ({}): {}",
                    pubs.len(),
                    topic.name,
                    topic.msg_type,
                    describe(pubs)
                ),
            });
        }
    }
    for node in g.nodes() {
        let mut groups: BTreeMap<&MessageType, Vec<&TopicSpec>> = BTreeMap::new();
        for t in g.subs_of_node(&node.name) {
            if !mt.is_log_or_viz(t) {
                groups.entry(&t.msg_type).or_default().push(t);
            }
        }
        for (ty, topics) in groups {
            if topics.len() < 2 {
                continue;
            }
            let names: Vec<String> = topics.iter().map(|t| t.name.clone()).collect();
            let upstream: BTreeSet<String> = names.iter().flat_map(|t| g.publishers_of(t).iter().cloned()).collect();
            out.push(RiskFinding {
                kind: RiskKind::GrMt,
                risky_nodes: BTreeSet::from([node.name.clone()]),
                topic: names[0].clone(),
                msg_type: ty.clone(),
                evidence: format!(
                    "{} subscribes {} parallel {} topics: {}",
                    node.name,
                    names.len(),
                    ty,
                    names.join(", ")
                ),
                related_topics: names,
                upstream,
                successors: BTreeSet::from([node.name.clone()]),
            });
        }
    }
    sort_findings(&mut out);
    out
}

pub fn discover_rsr(g: &InteractionGraph, mt: &MatchTables) -> Vec<RiskFinding> {
    let mut out = Vec::new();
    for topic in g.topics().filter(|t| is_max_vel_topic(t)) {
        let pubs = g.publishers_of(&topic.name);
        if pubs.is_empty() {
            continue;
        }
        out.push(RiskFinding {
            kind: RiskKind::RsrMaxVel,
            risky_nodes: pubs.clone(),
            topic: topic.name.clone(),
            msg_type: topic.msg_type.clone(),
            related_topics: Vec::new(),
            upstream: BTreeSet::new(),
            successors: g.subscribers_of(&topic.name).clone(),
            evidence: format!("{} configures the maximal velocity via {}", describe(pubs), topic.name),
        });
    }
    for node in g.nodes() {
        let images: Vec<&TopicSpec> = g
            .subs_of_node(&node.name)
            .into_iter()
            .filter(|t| is_image_topic(t))
            .collect();
        if images.is_empty() {
            continue;
        }
        let recog: Vec<&TopicSpec> = g
            .pubs_of_node(&node.name)
            .into_iter()
            .filter(|t| mt.is_recognition_topic(t))
            .collect();
        let Some(first) = recog.first() else { continue };
        let related: Vec<String> = recog.iter().map(|t| t.name.clone()).collect();
        out.push(RiskFinding {
            kind: RiskKind::RsrImage,
            risky_nodes: BTreeSet::from([node.name.clone()]),
            topic: first.name.clone(),
            msg_type: first.msg_type.clone(),
            upstream: images
                .iter()
                .flat_map(|t| g.publishers_of(&t.name).iter().cloned())
                .collect(),
            successors: related
                .iter()
                .flat_map(|t| g.subscribers_of(t).iter().cloned())
                .collect(),
            evidence: format!(
                "{} recognises images from {} and publishes {}",
                node.name,
                images.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", "),
                related.join(", ")
            ),
            related_topics: related,
        });
    }
    sort_findings(&mut out);
    out
}

pub fn discover_msr(g: &InteractionGraph, mt: &MatchTables) -> Vec<RiskFinding> {
    let mut out = Vec::new();
    for topic in g.topics() {
        let pubs = g.publishers_of(&topic.name);
        if pubs.is_empty() {
            continue;
        }
        let subs = g.subscribers_of(&topic.name);
        for (kind, hit) in [
            (RiskKind::MsrEvent, mt.is_event_topic(topic)),
            (RiskKind::MsrAction, mt.is_action_topic(topic)),
        ] {
            if !hit {
                continue;
            }
            let evidence = match kind {
                RiskKind::MsrEvent => format!(
                    "event topic {} ({}) from {}; consumed by {}",
                    topic.name,
                    topic.msg_type,
                    describe(pubs),
                    if subs.is_empty() {
                        "nobody".to_string()
                    } else {
                        describe(subs)
                    }
                ),
                _ => format!(
                    "action topic {} ({}) from {}",
                    topic.name,
                    topic.msg_type,
                    describe(pubs)
                ),
            };
            out.push(RiskFinding {
                kind,
                risky_nodes: pubs.clone(),
                topic: topic.name.clone(),
                msg_type: topic.msg_type.clone(),
                related_topics: Vec::new(),
                upstream: BTreeSet::new(),
                successors: subs.clone(),
                evidence,
            });
        }
    }
    sort_findings(&mut out);
    out
}

fn sort_findings(v: &mut [RiskFinding]) {
    v.sort_by(|a, b| {
        (a.kind, &a.topic, a.risky_nodes.iter().next()).cmp(&(b.kind, &b.topic, b.risky_nodes.iter().next()))
    });
}

/// The six RN sets for one graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskReport {
    pub graph_fingerprint: String,
    #[serde(rename = "GR_ST")]
    pub gr_st: Vec<RiskFinding>,
    #[serde(rename = "GR_MT")]
    pub gr_mt: Vec<RiskFinding>,
    #[serde(rename = "RSR_Image")]
    pub rsr_image: Vec<RiskFinding>,
    #[serde(rename = "RSR_MaxVel")]
    pub rsr_max_vel: Vec<RiskFinding>,
    #[serde(rename = "MSR_Event")]
    pub msr_event: Vec<RiskFinding>,
    #[serde(rename = "MSR_Action")]
    pub msr_action: Vec<RiskFinding>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("report lists {kind} finding on unknown {what} {name}")]
    UnknownReference {
        kind: RiskKind,
        what: &'static str,
        name: String,
    },
}

impl RiskReport {
    pub fn empty(fingerprint: String) -> Self {
        Self {
            graph_fingerprint: fingerprint,
            gr_st: Vec::new(),
            gr_mt: Vec::new(),
            rsr_image: Vec::new(),
            rsr_max_vel: Vec::new(),
            msr_event: Vec::new(),
            msr_action: Vec::new(),
        }
    }

    pub fn of_kind(&self, kind: RiskKind) -> &[RiskFinding] {
        match kind {
            RiskKind::GrSt => &self.gr_st,
            RiskKind::GrMt => &self.gr_mt,
            RiskKind::RsrImage => &self.rsr_image,
            RiskKind::RsrMaxVel => &self.rsr_max_vel,
            RiskKind::MsrEvent => &self.msr_event,
            RiskKind::MsrAction => &self.msr_action,
        }
    }

    pub fn findings(&self) -> impl Iterator<Item = &RiskFinding> {
        RiskKind::ALL.into_iter().flat_map(move |k| self.of_kind(k).iter())
    }

    pub fn is_empty(&self) -> bool {
        self.findings().next().is_none()
    }

    pub fn has_rsr(&self) -> bool {
        !self.rsr_image.is_empty() || !self.rsr_max_vel.is_empty()
    }

    pub fn has_msr(&self) -> bool {
        !self.msr_event.is_empty() || !self.msr_action.is_empty()
    }

    /// The RN set of one kind: the union of its findings' risky nodes.
    pub fn risk_nodes(&self, kind: RiskKind) -> BTreeSet<String> {
        self.of_kind(kind)
            .iter()
            .flat_map(|f| f.risky_nodes.iter().cloned())
            .collect()
    }

    /// Checks every node and topic the report names exists in `g`.
    pub fn check_references(&self, g: &InteractionGraph) -> Result<(), ReportError> {
        for f in self.findings() {
            for n in f.risky_nodes.iter().chain(&f.upstream).chain(&f.successors) {
                if g.node(n).is_none() {
                    return Err(ReportError::UnknownReference {
                        kind: f.kind,
                        what: "node",
                        name: n.clone(),
                    });
                }
            }
            for t in f.topics() {
                if g.topic(t).is_none() {
                    return Err(ReportError::UnknownReference {
                        kind: f.kind,
                        what: "topic",
                        name: t.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))
    }
}

pub fn discover_all(g: &InteractionGraph, mt: &MatchTables) -> RiskReport {
    let mut report = RiskReport::empty(g.fingerprint());
    for f in discover_gr(g, mt)
        .into_iter()
        .chain(discover_rsr(g, mt))
        .chain(discover_msr(g, mt))
    {
        match f.kind {
            RiskKind::GrSt => report.gr_st.push(f),
            RiskKind::GrMt => report.gr_mt.push(f),
            RiskKind::RsrImage => report.rsr_image.push(f),
            RiskKind::RsrMaxVel => report.rsr_max_vel.push(f),
            RiskKind::MsrEvent => report.msr_event.push(f),
            RiskKind::MsrAction => report.msr_action.push(f),
        }
    }
    report
}

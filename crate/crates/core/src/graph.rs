//! The app interaction graph: nodes, topics and the publish/subscribe edges
//! between them.
//!
//! Topics are first-class vertices. A graph is bipartite (node ↔ topic),
//! immutable once built, and carries derived indexes that are rebuilt from
//! the node lists whenever the crate rewires it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::behavior::BehaviorSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// A message type such as `geometry_msgs/Twist`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MessageType {
    full_name: String,
    split: usize,
}

impl MessageType {
    pub fn parse(full_name: &str) -> Result<Self, GraphError> {
        let full_name = full_name.trim();
        let mut parts = full_name.split('/');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(pkg), Some(ty), None) if !pkg.is_empty() && !ty.is_empty() => Ok(Self {
                full_name: full_name.to_string(),
                split: pkg.len(),
            }),
            _ => Err(GraphError::Validation(format!(
                "message type `{full_name}` is not of the form package/Type"
            ))),
        }
    }

    pub fn full_name(&self) -> &str {
        &self.full_name
    }

    pub fn package(&self) -> &str {
        &self.full_name[..self.split]
    }

    pub fn type_name(&self) -> &str {
        &self.full_name[self.split + 1..]
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.full_name)
    }
}

impl TryFrom<String> for MessageType {
    type Error = GraphError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        MessageType::parse(&value)
    }
}

impl From<MessageType> for String {
    fn from(value: MessageType) -> Self {
        value.full_name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicTag {
    Log,
    Visualization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Perception,
    Planning,
    Control,
    Driver,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSpec {
    pub name: String,
    pub msg_type: MessageType,
    pub tags: BTreeSet<TopicTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub publishes: BTreeSet<String>,
    pub subscribes: BTreeSet<String>,
    pub domain_hint: Option<Domain>,
    pub behavior: Option<BehaviorSpec>,
}

impl NodeSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            publishes: BTreeSet::new(),
            subscribes: BTreeSet::new(),
            domain_hint: None,
            behavior: None,
        }
    }
}

/// Ensures the leading slash: `tf` becomes `/tf`.
pub fn normalize_topic(name: &str) -> String {
    let name = name.trim();
    if name.starts_with('/') {
        name.to_string()
    } else {
        format!("/{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub topic_count: usize,
    pub edge_count: usize,
}

/// Validated interaction graph.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    name: String,
    nodes: BTreeMap<String, NodeSpec>,
    topics: BTreeMap<String, TopicSpec>,
    publishers_of: BTreeMap<String, BTreeSet<String>>,
    subscribers_of: BTreeMap<String, BTreeSet<String>>,
}

impl InteractionGraph {
    /// Builds and validates a graph. Topic names in `topics` and in the node
    /// lists are normalized first.
    pub fn new(name: &str, topics: Vec<TopicSpec>, nodes: Vec<NodeSpec>) -> Result<Self, GraphError> {
        let mut topic_map = BTreeMap::new();
        for mut t in topics {
            t.name = normalize_topic(&t.name);
            if t.name == "/" {
                return Err(GraphError::Validation("empty topic name".into()));
            }
            if topic_map.contains_key(&t.name) {
                return Err(GraphError::Validation(format!("duplicate topic {}", t.name)));
            }
            topic_map.insert(t.name.clone(), t);
        }
        let mut node_map = BTreeMap::new();
        for n in nodes {
            if n.name.trim().is_empty() {
                return Err(GraphError::Validation("empty node name".into()));
            }
            if node_map.contains_key(&n.name) {
                return Err(GraphError::Validation(format!("duplicate node {}", n.name)));
            }
            node_map.insert(n.name.clone(), n);
        }
        let mut g = Self {
            name: name.to_string(),
            nodes: node_map,
            topics: topic_map,
            publishers_of: BTreeMap::new(),
            subscribers_of: BTreeMap::new(),
        };
        g.validate_refs()?;
        g.rebuild_indexes();
        Ok(g)
    }

    fn validate_refs(&self) -> Result<(), GraphError> {
        for n in self.nodes.values() {
            for t in n.publishes.iter().chain(n.subscribes.iter()) {
                if !self.topics.contains_key(t) {
                    return Err(GraphError::Validation(format!(
                        "node {} references undeclared topic {}",
                        n.name, t
                    )));
                }
            }
            if let Some(b) = &n.behavior {
                b.validate()
                    .map_err(|e| GraphError::Validation(format!("node {}: {e}", n.name)))?;
                let declared: Vec<String> = n.publishes.iter().cloned().collect();
                for t in b.published_topics(&declared) {
                    if !n.publishes.contains(&normalize_topic(t)) {
                        return Err(GraphError::Validation(format!(
                            "node {} behaviour publishes {} which the node does not declare",
                            n.name, t
                        )));
                    }
                }
                if let BehaviorSpec::ReactiveTransform { input: Some(t), .. } = b {
                    if !n.subscribes.contains(&normalize_topic(t)) {
                        return Err(GraphError::Validation(format!(
                            "node {} transform input {} is not subscribed",
                            n.name, t
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Attaches behaviours by node name. With `check`, they are validated
    /// against this graph's declarations.
    pub(crate) fn with_behaviors(
        mut self,
        behaviors: BTreeMap<String, BehaviorSpec>,
        check: bool,
    ) -> Result<Self, GraphError> {
        for (name, b) in behaviors {
            let n = self
                .nodes
                .get_mut(&name)
                .ok_or_else(|| GraphError::Validation(format!("behaviour for unknown node {name}")))?;
            n.behavior = Some(normalize_behavior(b));
        }
        if check {
            self.validate_refs()?;
        }
        Ok(self)
    }

    fn rebuild_indexes(&mut self) {
        self.publishers_of = self.topics.keys().map(|t| (t.clone(), BTreeSet::new())).collect();
        self.subscribers_of = self.publishers_of.clone();
        for n in self.nodes.values() {
            for t in &n.publishes {
                self.publishers_of.get_mut(t).expect("validated").insert(n.name.clone());
            }
            for t in &n.subscribes {
                self.subscribers_of
                    .get_mut(t)
                    .expect("validated")
                    .insert(n.name.clone());
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicSpec> {
        self.topics.values()
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.get(name)
    }

    pub fn topic(&self, name: &str) -> Option<&TopicSpec> {
        self.topics.get(name)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn topic_count(&self) -> usize {
        self.topics.len()
    }

    /// Nodes publishing to `topic` (N^p_j). Empty for unknown topics.
    pub fn publishers_of(&self, topic: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.publishers_of.get(topic).unwrap_or(&EMPTY)
    }

    pub fn subscribers_of(&self, topic: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.subscribers_of.get(topic).unwrap_or(&EMPTY)
    }

    /// Topics subscribed by `node` (T^s_i).
    pub fn subs_of_node(&self, node: &str) -> Vec<&TopicSpec> {
        self.nodes
            .get(node)
            .map(|n| n.subscribes.iter().filter_map(|t| self.topics.get(t)).collect())
            .unwrap_or_default()
    }

    /// Topics published by `node` (T^p_i).
    pub fn pubs_of_node(&self, node: &str) -> Vec<&TopicSpec> {
        self.nodes
            .get(node)
            .map(|n| n.publishes.iter().filter_map(|t| self.topics.get(t)).collect())
            .unwrap_or_default()
    }

    /// Checks that the stored indexes equal a from-scratch rebuild.
    pub fn indexes_coherent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.rebuild_indexes();
        fresh.publishers_of == self.publishers_of && fresh.subscribers_of == self.subscribers_of
    }

    /// Stable digest over the structural content (topics with types and
    /// tags, nodes with their edges). Behaviours and domain hints are not
    /// part of the fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in self.topics.values() {
            h.update(b"T\0");
            h.update(t.name.as_bytes());
            h.update(b"\0");
            h.update(t.msg_type.full_name().as_bytes());
            for tag in &t.tags {
                h.update(format!("\0{tag:?}").as_bytes());
            }
            h.update(b"\n");
        }
        for n in self.nodes.values() {
            h.update(b"N\0");
            h.update(n.name.as_bytes());
            for t in &n.publishes {
                h.update(b"\0p:");
                h.update(t.as_bytes());
            }
            for t in &n.subscribes {
                h.update(b"\0s:");
                h.update(t.as_bytes());
            }
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    // Mutation used by the instrumentor. Each keeps the indexes coherent.

    pub(crate) fn add_topic(&mut self, name: &str, msg_type: MessageType) {
        self.topics.insert(
            name.to_string(),
            TopicSpec {
                name: name.to_string(),
                msg_type,
                tags: BTreeSet::new(),
            },
        );
        self.publishers_of.entry(name.to_string()).or_default();
        self.subscribers_of.entry(name.to_string()).or_default();
    }

    pub(crate) fn remove_topic(&mut self, name: &str) {
        self.topics.remove(name);
        self.publishers_of.remove(name);
        self.subscribers_of.remove(name);
    }

    pub(crate) fn add_node(&mut self, node: NodeSpec) {
        for t in &node.publishes {
            self.publishers_of
                .entry(t.clone())
                .or_default()
                .insert(node.name.clone());
        }
        for t in &node.subscribes {
            self.subscribers_of
                .entry(t.clone())
                .or_default()
                .insert(node.name.clone());
        }
        self.nodes.insert(node.name.clone(), node);
    }

    pub(crate) fn remove_node(&mut self, name: &str) {
        if let Some(node) = self.nodes.remove(name) {
            for t in &node.publishes {
                if let Some(s) = self.publishers_of.get_mut(t) {
                    s.remove(name);
                }
            }
            for t in &node.subscribes {
                if let Some(s) = self.subscribers_of.get_mut(t) {
                    s.remove(name);
                }
            }
        }
    }

    /// Moves `node`'s publication from `from` to `to`.
    pub(crate) fn remap_publication(&mut self, node: &str, from: &str, to: &str) {
        let n = self.nodes.get_mut(node).expect("remap of unknown node");
        if n.publishes.remove(from) {
            n.publishes.insert(to.to_string());
            if let Some(s) = self.publishers_of.get_mut(from) {
                s.remove(node);
            }
            self.publishers_of
                .entry(to.to_string())
                .or_default()
                .insert(node.to_string());
        }
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            name: self.name.clone(),
            topics: self
                .topics
                .values()
                .map(|t| TopicDoc {
                    name: t.name.clone(),
                    msg_type: t.msg_type.full_name().to_string(),
                    tags: t.tags.iter().copied().collect(),
                })
                .collect(),
            nodes: self
                .nodes
                .values()
                .map(|n| NodeDoc {
                    name: n.name.clone(),
                    publishes: n.publishes.iter().cloned().collect(),
                    subscribes: n.subscribes.iter().cloned().collect(),
                    domain: n.domain_hint,
                    behavior: n.behavior.clone(),
                })
                .collect(),
        }
    }

    /// Serializes to the graph file format (pretty JSON, sorted by name).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph serializes")
    }
}

/// Wire form of a graph file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub name: String,
    #[serde(default)]
    pub topics: Vec<TopicDoc>,
    #[serde(default)]
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub msg_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<TopicTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub name: String,
    #[serde(default, rename = "pub")]
    pub publishes: Vec<String>,
    #[serde(default, rename = "sub")]
    pub subscribes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<BehaviorSpec>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<InteractionGraph, GraphError> {
        let mut topics = Vec::with_capacity(self.topics.len());
        for t in self.topics {
            topics.push(TopicSpec {
                name: t.name,
                msg_type: MessageType::parse(&t.msg_type)?,
                tags: t.tags.into_iter().collect(),
            });
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in self.nodes {
            let publishes = dedup_topics(&n.name, "pub", n.publishes)?;
            let subscribes = dedup_topics(&n.name, "sub", n.subscribes)?;
            nodes.push(NodeSpec {
                name: n.name,
                publishes,
                subscribes,
                domain_hint: n.domain,
                behavior: n.behavior.map(normalize_behavior),
            });
        }
        InteractionGraph::new(&self.name, topics, nodes)
    }
}

fn dedup_topics(node: &str, what: &str, list: Vec<String>) -> Result<BTreeSet<String>, GraphError> {
    let mut out = BTreeSet::new();
    for t in list {
        let t = normalize_topic(&t);
        if !out.insert(t.clone()) {
            return Err(GraphError::Validation(format!(
                "node {node} lists {t} twice in `{what}`"
            )));
        }
    }
    Ok(out)
}

pub(crate) fn normalize_behavior(b: BehaviorSpec) -> BehaviorSpec {
    let norm = |t: Option<String>| t.map(|t| normalize_topic(&t));
    match b {
        BehaviorSpec::PeriodicPublisher {
            topic,
            rate_hz,
            payload,
            start,
            stop,
            jitter,
        } => BehaviorSpec::PeriodicPublisher {
            topic: norm(topic),
            rate_hz,
            payload,
            start,
            stop,
            jitter,
        },
        BehaviorSpec::ReactiveTransform {
            input,
            output,
            latency,
            payload,
        } => BehaviorSpec::ReactiveTransform {
            input: norm(input),
            output: norm(output),
            latency,
            payload,
        },
        BehaviorSpec::Script { mut actions } => {
            for a in &mut actions {
                a.topic = normalize_topic(&a.topic);
            }
            BehaviorSpec::Script { actions }
        }
    }
}

/// Parses a graph description document.
pub fn parse_graph(text: &str) -> Result<InteractionGraph, GraphError> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    doc.into_graph()
}

pub fn graph_stats(g: &InteractionGraph) -> GraphStats {
    GraphStats {
        node_count: g.nodes.len(),
        topic_count: g.topics.len(),
        edge_count: g.nodes.values().map(|n| n.publishes.len() + n.subscribes.len()).sum(),
    }
}

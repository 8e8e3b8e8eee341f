//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod policy_oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use roboguard_core::risk::{MatchTables, RiskKind, RiskReport};
use roboguard_core::{parse_graph, InteractionGraph};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_graph(name: &str) -> InteractionGraph {
    let text = std::fs::read_to_string(fixture_path(name)).expect("fixture readable");
    parse_graph(&text).expect("fixture parses")
}

// ---------------------------------------------------------------------------
// Random graphs

const TOPIC_STEMS: &[&str] = &[
    "/cmd_vel",
    "/control/max_vel",
    "/Max_Vel_cfg",
    "/max_vel_hint",
    "/detect/sign",
    "/objects",
    "/people_count",
    "/face_box",
    "/traffic/light",
    "/lane_state",
    "/rosout",
    "/log/trace",
    "/rviz/marker",
    "/move_base/goal",
    "/odom",
    "/camera/image",
    "/scan",
    "/debug_image_out",
    "/status",
    "/plan",
    "/battery",
];

const TYPES: &[&str] = &[
    "sensor_msgs/Image",
    "std_msgs/Float64",
    "geometry_msgs/Twist",
    "geometry_msg/Twist",
    "nav_msgs/Odometry",
    "std_msgs/String",
    "sensor_msgs/BatteryState",
    "audio_common_msgs/AudioData",
    "std_msgs/Float32",
    "nav_msgs/Path",
];

/// Seeded random graph document with at most `max_nodes` nodes,
/// `max_topics` topics and `max_types` distinct message types.
pub fn random_graph_doc(seed: u64, max_nodes: usize, max_topics: usize, max_types: usize) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_topics = rng.gen_range(1..=max_topics);
    let n_nodes = rng.gen_range(1..=max_nodes);
    let mut types: Vec<&str> = TYPES.to_vec();
    types.shuffle(&mut rng);
    types.truncate(rng.gen_range(1..=max_types.min(TYPES.len())));

    let topics: Vec<Value> = (0..n_topics)
        .map(|i| {
            let stem = TOPIC_STEMS[rng.gen_range(0..TOPIC_STEMS.len())];
            let ty = types[rng.gen_range(0..types.len())];
            let mut t = json!({ "name": format!("{stem}_{i}"), "type": ty });
            match rng.gen_range(0..20) {
                0 => t["tags"] = json!(["log"]),
                1 => t["tags"] = json!(["visualization"]),
                _ => {}
            }
            t
        })
        .collect();
    let names: Vec<String> = topics.iter().map(|t| t["name"].as_str().unwrap().to_string()).collect();

    let nodes: Vec<Value> = (0..n_nodes)
        .map(|i| {
            let p_pub = rng.gen_range(0.05..0.3);
            let p_sub = rng.gen_range(0.05..0.4);
            let publishes: Vec<&String> = names.iter().filter(|_| rng.gen_bool(p_pub)).collect();
            let subscribes: Vec<&String> = names.iter().filter(|_| rng.gen_bool(p_sub)).collect();
            json!({ "name": format!("/node_{i}"), "pub": publishes, "sub": subscribes })
        })
        .collect();
    json!({ "name": format!("random-{seed}"), "topics": topics, "nodes": nodes })
}

pub fn random_graph(seed: u64, max_nodes: usize, max_topics: usize, max_types: usize) -> InteractionGraph {
    parse_graph(&random_graph_doc(seed, max_nodes, max_topics, max_types).to_string()).expect("generated graph valid")
}

/// Autoware-scale graph: `nodes` nodes and `topics` topics with a
/// realistic share of shared topics and image consumers.
pub fn scale_graph(seed: u64, nodes: usize, topics: usize) -> InteractionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic_docs: Vec<Value> = (0..topics)
        .map(|i| {
            let stem = TOPIC_STEMS[i % TOPIC_STEMS.len()];
            json!({ "name": format!("{stem}_{i}"), "type": TYPES[rng.gen_range(0..TYPES.len())] })
        })
        .collect();
    let names: Vec<String> = topic_docs
        .iter()
        .map(|t| t["name"].as_str().unwrap().to_string())
        .collect();
    let node_docs: Vec<Value> = (0..nodes)
        .map(|i| {
            let publishes: Vec<&String> = names.iter().filter(|_| rng.gen_bool(0.05)).collect();
            let subscribes: Vec<&String> = names.iter().filter(|_| rng.gen_bool(0.08)).collect();
            json!({ "name": format!("/node_{i}"), "pub": publishes, "sub": subscribes })
        })
        .collect();
    let doc = json!({ "name": "scale", "topics": topic_docs, "nodes": node_docs });
    parse_graph(&doc.to_string()).expect("scale graph valid")
}

// ---------------------------------------------------------------------------
// Brute-force risk oracle, written from the rule definitions alone.

/// (kind, flagged topics, risky nodes, consumers)
pub type FindingKey = (RiskKind, BTreeSet<String>, BTreeSet<String>, BTreeSet<String>);

struct RawGraph {
    topics: Vec<(String, String, bool)>,
    pubs: BTreeMap<String, BTreeSet<String>>,
    subs: BTreeMap<String, BTreeSet<String>>,
}

fn raw(g: &InteractionGraph) -> RawGraph {
    let doc = g.to_document();
    let topics = doc
        .topics
        .iter()
        .map(|t| (t.name.clone(), t.msg_type.clone(), !t.tags.is_empty()))
        .collect();
    let mut pubs = BTreeMap::new();
    let mut subs = BTreeMap::new();
    for n in &doc.nodes {
        pubs.insert(n.name.clone(), n.publishes.iter().cloned().collect());
        subs.insert(n.name.clone(), n.subscribes.iter().cloned().collect());
    }
    RawGraph { topics, pubs, subs }
}

fn lower_contains(hay: &str, needle: &str) -> bool {
    !needle.is_empty() && hay.to_lowercase().contains(&needle.to_lowercase())
}

fn canon_type(ty: &str) -> String {
    let ty = ty.trim();
    match ty.find('/') {
        Some(i) if ty[..i].ends_with("_msg") => format!("{}s{}", &ty[..i], &ty[i..]),
        _ => ty.to_string(),
    }
}

fn in_table(ty: &str, table: &[String]) -> bool {
    let ty = canon_type(ty);
    table
        .iter()
        .map(|e| canon_type(e))
        .any(|e| !e.is_empty() && (ty == e || ty.contains(&e)))
}

pub fn oracle_findings(g: &InteractionGraph, mt: &MatchTables) -> BTreeSet<FindingKey> {
    let r = raw(g);
    let publishers = |t: &str| -> BTreeSet<String> {
        r.pubs
            .iter()
            .filter(|(_, ts)| ts.contains(t))
            .map(|(n, _)| n.clone())
            .collect()
    };
    let subscribers = |t: &str| -> BTreeSet<String> {
        r.subs
            .iter()
            .filter(|(_, ts)| ts.contains(t))
            .map(|(n, _)| n.clone())
            .collect()
    };
    let log_viz = |name: &str, tagged: bool| tagged || mt.log_viz_denylist.iter().any(|w| lower_contains(name, w));
    let ty_of = |t: &str| r.topics.iter().find(|x| x.0 == t).map(|x| x.1.clone()).unwrap();
    let tagged_of = |t: &str| r.topics.iter().find(|x| x.0 == t).map(|x| x.2).unwrap();
    let one = |t: &str| BTreeSet::from([t.to_string()]);

    let mut out = BTreeSet::new();
    for (name, ty, tagged) in &r.topics {
        let p = publishers(name);
        let s = subscribers(name);
        if !log_viz(name, *tagged) && p.len() >= 2 {
            out.insert((RiskKind::GrSt, one(name), p.clone(), s.clone()));
        }
        if p.is_empty() {
            continue;
        }
        if lower_contains(name, "max_vel") && canon_type(ty) == "std_msgs/Float64" {
            out.insert((RiskKind::RsrMaxVel, one(name), p.clone(), s.clone()));
        }
        if in_table(ty, &mt.event_msg_types) || lower_contains(name, "detect") {
            out.insert((RiskKind::MsrEvent, one(name), p.clone(), s.clone()));
        }
        if in_table(ty, &mt.action_msg_types) || lower_contains(name, "goal") {
            out.insert((RiskKind::MsrAction, one(name), p.clone(), s.clone()));
        }
    }
    for (node, subs) in &r.subs {
        let mut by_type: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for t in subs {
            if !log_viz(t, tagged_of(t)) {
                by_type.entry(ty_of(t)).or_default().insert(t.clone());
            }
        }
        for group in by_type.into_values().filter(|g| g.len() >= 2) {
            let me = BTreeSet::from([node.clone()]);
            out.insert((RiskKind::GrMt, group, me.clone(), me));
        }
        let sees_images = subs.iter().any(|t| canon_type(&ty_of(t)) == "sensor_msgs/Image");
        let recog: BTreeSet<String> = r.pubs[node]
            .iter()
            .filter(|t| mt.recog_topic_keywords.iter().any(|k| lower_contains(t, k)))
            .cloned()
            .collect();
        if sees_images && !recog.is_empty() {
            let consumers = recog.iter().flat_map(|t| subscribers(t)).collect();
            out.insert((RiskKind::RsrImage, recog, BTreeSet::from([node.clone()]), consumers));
        }
    }
    out
}

pub fn report_keys(report: &RiskReport) -> BTreeSet<FindingKey> {
    report
        .findings()
        .map(|f| {
            let topics: BTreeSet<String> = if f.related_topics.is_empty() {
                BTreeSet::from([f.topic.clone()])
            } else {
                f.related_topics.iter().cloned().collect()
            };
            (f.kind, topics, f.risky_nodes.clone(), f.successors.clone())
        })
        .collect()
}

/// The six RN sets (risky nodes per kind) of a key set.
pub fn rn_sets(keys: &BTreeSet<FindingKey>) -> BTreeMap<RiskKind, BTreeSet<String>> {
    let mut out: BTreeMap<RiskKind, BTreeSet<String>> = RiskKind::ALL.iter().map(|k| (*k, BTreeSet::new())).collect();
    for (kind, _, nodes, _) in keys {
        out.get_mut(kind).unwrap().extend(nodes.iter().cloned());
    }
    out
}

// ---------------------------------------------------------------------------
// Published example rows for the Home and AutoRace apps, with node names
// normalized to the graph spelling.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// The row's node is one of the finding's risky nodes.
    Risky,
    /// The row's node publishes into the flagged subscriber.
    Upstream,
    /// The row's node consumes the flagged topic.
    Consumer,
}

#[derive(Debug, Clone, Copy)]
pub struct ExampleRow {
    pub fixture: &'static str,
    pub kind: RiskKind,
    pub node: &'static str,
    pub role: Role,
    pub topic: &'static str,
    pub pub_node: Option<&'static str>,
}

const fn row(
    fixture: &'static str,
    kind: RiskKind,
    node: &'static str,
    role: Role,
    topic: &'static str,
    pub_node: Option<&'static str>,
) -> ExampleRow {
    ExampleRow {
        fixture,
        kind,
        node,
        role,
        topic,
        pub_node,
    }
}

const HOME: &str = "home_findings.json";
const RACE: &str = "autorace_findings.json";

pub const EXAMPLE_ROWS: &[ExampleRow] = &[
    row(
        HOME,
        RiskKind::GrSt,
        "/move_base",
        Role::Risky,
        "/cmd_vel",
        Some("/gazebo"),
    ),
    row(
        HOME,
        RiskKind::GrSt,
        "/teleop_twist_keyboard",
        Role::Risky,
        "/cmd_vel",
        Some("/gazebo"),
    ),
    row(
        HOME,
        RiskKind::GrMt,
        "/gazebo",
        Role::Upstream,
        "/camera/depth/image_raw",
        Some("/find_object_3d"),
    ),
    row(
        HOME,
        RiskKind::GrMt,
        "/gazebo",
        Role::Upstream,
        "/camera/rgb/image_raw",
        Some("/find_object_3d"),
    ),
    row(
        HOME,
        RiskKind::RsrImage,
        "/find_object_3d",
        Role::Risky,
        "/objects",
        Some("/search_manager"),
    ),
    row(HOME, RiskKind::MsrEvent, "/move_base", Role::Consumer, "/odom", None),
    row(
        HOME,
        RiskKind::MsrAction,
        "/rosbot_tts",
        Role::Risky,
        "/rosbot_audio/audio",
        Some("/rosbot_audio"),
    ),
    row(
        RACE,
        RiskKind::GrSt,
        "/detect_tunnel",
        Role::Risky,
        "/move_base_simple/goal",
        Some("/move_base"),
    ),
    row(
        RACE,
        RiskKind::GrSt,
        "/rviz",
        Role::Risky,
        "/move_base_simple/goal",
        Some("/move_base"),
    ),
    row(
        RACE,
        RiskKind::GrMt,
        "/detect_lane",
        Role::Upstream,
        "/detect/lane",
        Some("/control_lane"),
    ),
    row(
        RACE,
        RiskKind::GrMt,
        "/detect_traffic_light",
        Role::Upstream,
        "/control/max_vel",
        Some("/control_lane"),
    ),
    row(
        RACE,
        RiskKind::RsrImage,
        "/detect_sign",
        Role::Risky,
        "/detect/traffic_sign",
        Some("/core_mode_decider"),
    ),
    row(
        RACE,
        RiskKind::RsrMaxVel,
        "/detect_parking",
        Role::Risky,
        "/control/max_vel",
        Some("/control_lane"),
    ),
    row(
        RACE,
        RiskKind::MsrEvent,
        "/core_node_controller",
        Role::Consumer,
        "/detect/tunnel_stamped",
        None,
    ),
    row(
        RACE,
        RiskKind::MsrAction,
        "/detect_tunnel",
        Role::Risky,
        "/cmd_vel",
        Some("/gazebo"),
    ),
];

/// Checks one row against a report: exactly one finding of the row's kind
/// covers the row's topic, and it names the row's nodes in the right roles.
pub fn check_row(report: &RiskReport, r: &ExampleRow) -> Result<(), String> {
    let hits: Vec<_> = report
        .of_kind(r.kind)
        .iter()
        .filter(|f| f.topics().any(|t| t == r.topic))
        .collect();
    let [f] = hits.as_slice() else {
        return Err(format!(
            "{:?} on {}: {} findings, expected 1",
            r.kind,
            r.topic,
            hits.len()
        ));
    };
    let placed = match r.role {
        Role::Risky => f.risky_nodes.contains(r.node),
        Role::Upstream => f.upstream.contains(r.node),
        Role::Consumer => f.successors.contains(r.node),
    };
    if !placed {
        return Err(format!(
            "{:?} on {}: {} not in {:?} role",
            r.kind, r.topic, r.node, r.role
        ));
    }
    if let Some(p) = r.pub_node {
        if !f.successors.contains(p) {
            return Err(format!("{:?} on {}: successor {} missing", r.kind, r.topic, p));
        }
        if r.kind == RiskKind::GrMt && !f.risky_nodes.contains(p) {
            return Err(format!("GR_MT on {}: {} should be the risky subscriber", r.topic, p));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Classifier corpus

use roboguard_core::classifier::{classify, extract_key_info, load_corpus, Classification, FunctionType, RuleSet};

pub struct CorpusResult {
    pub name: String,
    pub label: FunctionType,
    pub got: Classification,
}

pub fn corpus_labels() -> BTreeMap<String, FunctionType> {
    let text = std::fs::read_to_string(fixture_path("corpus/labels.csv")).expect("labels readable");
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (name, ty) = l.split_once(',').expect("two columns");
            (name.to_string(), ty.trim().parse().expect("known type"))
        })
        .collect()
}

pub fn classify_corpus(rules: &RuleSet) -> Vec<CorpusResult> {
    let labels = corpus_labels();
    load_corpus(&fixture_path("corpus"))
        .expect("corpus loads")
        .iter()
        .map(|raw| {
            let rec = extract_key_info(raw).expect("corpus records parse");
            CorpusResult {
                name: raw.name.clone(),
                label: labels[&raw.name],
                got: classify(&rec, rules),
            }
        })
        .collect()
}

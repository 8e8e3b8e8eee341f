mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use roboguard_core::{graph_stats, parse_graph, GraphError, InteractionGraph};
use serde_json::json;

type EdgeSets = (
    BTreeSet<String>,
    BTreeSet<String>,
    BTreeSet<(String, String)>,
    BTreeSet<(String, String)>,
);

fn edge_sets(g: &InteractionGraph) -> EdgeSets {
    let nodes = g.nodes().map(|n| n.name.clone()).collect();
    let topics = g
        .topics()
        .map(|t| format!("{}:{}", t.name, t.msg_type.full_name()))
        .collect();
    let mut pubs = BTreeSet::new();
    let mut subs = BTreeSet::new();
    for n in g.nodes() {
        pubs.extend(n.publishes.iter().map(|t| (n.name.clone(), t.clone())));
        subs.extend(n.subscribes.iter().map(|t| (n.name.clone(), t.clone())));
    }
    (nodes, topics, pubs, subs)
}

fn coherent(g: &InteractionGraph) -> bool {
    g.topics().all(|t| {
        g.nodes().all(|n| {
            let p =
                g.publishers_of(&t.name).contains(&n.name) == g.pubs_of_node(&n.name).iter().any(|x| x.name == t.name);
            let s =
                g.subscribers_of(&t.name).contains(&n.name) == g.subs_of_node(&n.name).iter().any(|x| x.name == t.name);
            p && s
        })
    })
}

#[test]
fn shared_publishers_are_indexed() {
    let g = parse_graph(
        &json!({
            "name": "teleop",
            "topics": [{"name": "cmd_vel", "type": "geometry_msgs/Twist"}],
            "nodes": [
                {"name": "/move_base", "pub": ["/cmd_vel"], "sub": []},
                {"name": "/teleop_twist_keyboard", "pub": ["cmd_vel"], "sub": []}
            ]
        })
        .to_string(),
    )
    .unwrap();
    let want: BTreeSet<String> = ["/move_base", "/teleop_twist_keyboard"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(g.publishers_of("/cmd_vel"), &want);
}

#[test]
fn ghost_subscription_is_named() {
    let err = parse_graph(
        &json!({"name": "g", "topics": [], "nodes": [{"name": "/n", "pub": [], "sub": ["/ghost"]}]}).to_string(),
    )
    .unwrap_err();
    assert!(
        matches!(&err, GraphError::Validation(m) if m.contains("/ghost")),
        "{err}"
    );
}

#[test]
fn home_fixture_cardinalities() {
    let g = load_graph("home.json");
    let s = graph_stats(&g);
    assert_eq!((s.node_count, s.topic_count), (21, 125));
    assert!(s.edge_count > 0);
    assert!(coherent(&g));
}

#[test]
fn empty_and_single_edge_stats() {
    let empty = parse_graph(r#"{"name": "e", "topics": [], "nodes": []}"#).unwrap();
    let s = graph_stats(&empty);
    assert_eq!((s.node_count, s.topic_count, s.edge_count), (0, 0, 0));
    let one = parse_graph(
        r#"{"name": "o", "topics": [{"name": "/x", "type": "std_msgs/Int32"}], "nodes": [{"name": "/a", "pub": ["/x"], "sub": []}]}"#,
    )
    .unwrap();
    let s = graph_stats(&one);
    assert_eq!((s.node_count, s.topic_count, s.edge_count), (1, 1, 1));
}

#[test]
fn scale_graph_is_coherent() {
    let g = scale_graph(3, 38, 218);
    assert_eq!((g.node_count(), g.topic_count()), (38, 218));
    assert!(coherent(&g));
    assert!(g.indexes_coherent());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip_preserves_edges(seed in any::<u64>()) {
        let g = random_graph(seed, 20, 30, 8);
        let back = parse_graph(&g.to_json()).unwrap();
        prop_assert_eq!(edge_sets(&g), edge_sets(&back));
        prop_assert_eq!(g.fingerprint(), back.fingerprint());
    }

    #[test]
    fn indexes_agree_with_node_lists(seed in any::<u64>()) {
        let g = random_graph(seed, 20, 30, 8);
        prop_assert!(coherent(&g));
        prop_assert!(g.indexes_coherent());
    }

    #[test]
    fn declaration_order_is_irrelevant(seed in any::<u64>()) {
        let doc = random_graph_doc(seed, 20, 30, 8);
        let mut rev = doc.clone();
        rev["nodes"].as_array_mut().unwrap().reverse();
        rev["topics"].as_array_mut().unwrap().reverse();
        for n in rev["nodes"].as_array_mut().unwrap() {
            n["pub"].as_array_mut().unwrap().reverse();
            n["sub"].as_array_mut().unwrap().reverse();
        }
        let a = parse_graph(&doc.to_string()).unwrap();
        let b = parse_graph(&rev.to_string()).unwrap();
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        prop_assert_eq!(a, b);
    }
}

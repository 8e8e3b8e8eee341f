mod common;

use std::sync::Arc;
use std::thread;

use roboguard_core::policy::Role;
use roboguard_core::sim::check_assertions;
use roboguard_core::{CnType, PolicyConfig};
use roboguard_service::{CnUpdate, LiveSim, Pace, RiskModel, Store, StoreError, Timestamp};

use common::*;

fn model(id: &str) -> RiskModel {
    RiskModel {
        cn_id: id.into(),
        cn_type: CnType::Rsrcn,
        description: "test".into(),
        trigger_time: None,
        risk_info: Vec::new(),
        policy_params: Some(PolicyConfig::block_all_allow()),
    }
}

fn at(ms: u64) -> Timestamp {
    let epoch: Timestamp = EPOCH.parse().unwrap();
    Timestamp::new(epoch.inner() + std::time::Duration::from_millis(ms))
}

fn violation(id: &str, ms: u64, details: &str) -> CnUpdate {
    CnUpdate::Violation {
        time: at(ms),
        cn_id: id.into(),
        violated_rule: "Constrain".into(),
        cause: "max_vel exceeds limit".into(),
        details: details.into(),
    }
}

#[test]
fn rsrcn_clamp_becomes_a_violation_record() {
    let s = scenario("rsr_attack.json");
    let store = Arc::new(Store::in_memory());
    let live = LiveSim::spawn(s.prepare(None).unwrap(), store.clone(), options(Pace::Unpaced, true)).unwrap();
    let handle = live.handle();
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    rt.block_on(handle.advance_to(10.0)).unwrap();
    let trace = live.shutdown();

    let rsrcn = store.models().into_iter().find(|m| m.cn_type == CnType::Rsrcn).unwrap();
    let logged = store.violations_since(None);
    let clamps: Vec<_> = logged.iter().filter(|v| v.cn_id == rsrcn.cn_id).collect();
    assert!(!clamps.is_empty());
    assert!(clamps.iter().all(|v| v.cause == "max_vel exceeds limit"));
    assert!(clamps[0].details.contains("2"), "{}", clamps[0].details);
    assert_eq!(rsrcn.trigger_time, Some(clamps.last().unwrap().time));

    // Every CN violation in the trace is in the log, in the same order.
    let from_trace: Vec<_> = trace
        .violations()
        .filter_map(|e| match &e.kind {
            roboguard_core::sim::EventKind::Violation {
                source: roboguard_core::sim::ViolationSource::Cn { cn_id },
                details,
                ..
            } => Some((cn_id.clone(), details.clone())),
            _ => None,
        })
        .collect();
    let from_log: Vec<_> = logged.iter().map(|v| (v.cn_id.clone(), v.details.clone())).collect();
    assert_eq!(from_log, from_trace);
}

#[test]
fn duplicate_config_echo_is_a_no_op() {
    let store = Store::in_memory();
    store.collect(CnUpdate::Register(model("rsrcn_1"))).unwrap();
    let echo = CnUpdate::Config {
        cn_id: "rsrcn_1".into(),
        config: PolicyConfig::constrain(0.22),
    };
    assert!(store.collect(echo.clone()).unwrap());
    let before = store.model("rsrcn_1").unwrap();
    assert!(!store.collect(echo).unwrap());
    assert_eq!(store.model("rsrcn_1").unwrap(), before);
    assert!(!store.collect(CnUpdate::Register(before.clone())).unwrap());
}

#[test]
fn burst_of_1000_is_retained_in_order() {
    let store = Store::in_memory();
    store.collect(CnUpdate::Register(model("a"))).unwrap();
    let sent: Vec<String> = (0..1000).map(|i| format!("msg-{i}")).collect();
    for (i, d) in sent.iter().enumerate() {
        store.collect(violation("a", i as u64 / 3, d)).unwrap();
    }
    let got = store.violations_since(None);
    assert_eq!(got.len(), 1000);
    for (i, v) in got.iter().enumerate() {
        assert_eq!(v.index, i as u64);
        assert_eq!(v.details, sent[i]);
    }
    assert!(got.windows(2).all(|w| w[0].time <= w[1].time));
}

#[test]
fn updates_from_unknown_cns_are_rejected() {
    let store = Store::in_memory();
    let err = store.collect(violation("ghost", 0, "x")).unwrap_err();
    assert!(matches!(err, StoreError::UnknownCn(id) if id == "ghost"));
    assert_eq!(store.violation_count(), 0);
}

#[test]
fn out_of_order_violation_is_rejected() {
    let store = Store::in_memory();
    store.collect(CnUpdate::Register(model("a"))).unwrap();
    store.collect(violation("a", 500, "late")).unwrap();
    assert!(matches!(
        store.collect(violation("a", 100, "early")),
        Err(StoreError::OutOfOrder { .. })
    ));
    assert_eq!(store.violation_count(), 1);
}

#[test]
fn since_filters_by_time() {
    let store = Store::in_memory();
    store.collect(CnUpdate::Register(model("a"))).unwrap();
    for ms in [0, 100, 100, 200] {
        store.collect(violation("a", ms, "")).unwrap();
    }
    assert_eq!(store.violations_since(Some(at(100))).len(), 3);
    assert_eq!(store.violations_since(Some(at(101))).len(), 1);
    assert!(store.violations_since(Some(at(10_000))).is_empty());
}

#[test]
fn persisted_store_resumes_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        store.collect(CnUpdate::Register(model("a"))).unwrap();
        store
            .collect(CnUpdate::Config {
                cn_id: "a".into(),
                config: PolicyConfig::constrain(0.3),
            })
            .unwrap();
        store.collect(violation("a", 10, "first")).unwrap();
        store.collect(violation("a", 20, "second")).unwrap();
    }
    let store = Store::open(dir.path()).unwrap();
    let m = store.model("a").unwrap();
    assert_eq!(m.policy_params, Some(PolicyConfig::constrain(0.3)));
    assert_eq!(m.trigger_time, Some(at(20)));
    store.collect(violation("a", 30, "third")).unwrap();
    let log = store.violations_since(None);
    assert_eq!(
        log.iter().map(|v| (v.index, v.details.as_str())).collect::<Vec<_>>(),
        vec![(0, "first"), (1, "second"), (2, "third")]
    );
}

#[test]
fn corrupt_store_file_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("violations.jsonl"), "\n{not json}\n").unwrap();
    match Store::open(dir.path()) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected corrupt store, got {other:?}"),
    }
}

#[test]
fn concurrent_writers_keep_the_log_dense() {
    let store = Arc::new(Store::in_memory());
    for w in 0..4 {
        store.collect(CnUpdate::Register(model(&format!("w{w}")))).unwrap();
    }
    let writers: Vec<_> = (0..4)
        .map(|w| {
            let store = store.clone();
            thread::spawn(move || {
                for i in 0..250 {
                    store.collect(violation(&format!("w{w}"), 0, &i.to_string())).unwrap();
                }
            })
        })
        .collect();
    let reader = {
        let store = store.clone();
        thread::spawn(move || {
            let mut last = 0;
            for _ in 0..200 {
                let n = store.violations_since(None).len();
                assert!(n >= last, "log shrank from {last} to {n}");
                last = n;
            }
        })
    };
    for w in writers {
        w.join().unwrap();
    }
    reader.join().unwrap();
    let log = store.violations_since(None);
    assert_eq!(log.len(), 1000);
    assert!(log.iter().enumerate().all(|(i, v)| v.index == i as u64));
    for w in 0..4 {
        let mine: Vec<u32> = log
            .iter()
            .filter(|v| v.cn_id == format!("w{w}"))
            .map(|v| v.details.parse().unwrap())
            .collect();
        assert_eq!(mine, (0..250).collect::<Vec<_>>(), "writer {w} order");
    }
}

#[test]
fn end_user_constrain_applies_to_the_rest_of_the_run() {
    let mut s = scenario("rsr_attack.json");
    s.policies.clear();
    let assertions = s.assertions.clone();

    // Without the policy the bound is violated.
    let store = Arc::new(Store::in_memory());
    let bare = LiveSim::spawn(s.prepare(None).unwrap(), store, options(Pace::Manual, true)).unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    rt.block_on(bare.handle().advance_to(10.0)).unwrap();
    assert!(!check_assertions(&bare.shutdown(), &assertions)[0].passed);

    let store = Arc::new(Store::in_memory());
    let live = LiveSim::spawn(s.prepare(None).unwrap(), store.clone(), options(Pace::Manual, true)).unwrap();
    let h = live.handle();
    let rsrcn = store
        .models()
        .into_iter()
        .find(|m| m.cn_type == CnType::Rsrcn)
        .unwrap()
        .cn_id;
    rt.block_on(h.advance_to(1.0)).unwrap();
    let ack = rt
        .block_on(h.configure(&rsrcn, PolicyConfig::constrain(0.22), Role::EndUser))
        .unwrap();
    assert!(ack.changed);
    assert_eq!(store.model(&rsrcn).unwrap().policy_params, Some(ack.applied));
    rt.block_on(h.advance_to(10.0)).unwrap();
    assert!(h.status().done);
    assert!(check_assertions(&live.shutdown(), &assertions)[0].passed);
    assert!(store.violation_count() > 0);
}

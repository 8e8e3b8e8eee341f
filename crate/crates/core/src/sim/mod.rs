//! Discrete-event pub/sub simulation of (instrumented) graphs.

pub mod assertions;
pub mod bench;
mod engine;
pub mod scenario;
pub mod trace;

use serde::{Deserialize, Serialize};

pub use assertions::{check_assertions, Assertion, AssertionResult, OnlineChecker};
pub use bench::{linear_fit, measure_cn_overhead, LinearFit, OverheadPoint};
pub use engine::Simulation;
pub use scenario::{PreparedScenario, Scenario, ScenarioError};
pub use trace::{EventKind, Trace, TraceEvent, TraceSummary, ViolationSource};

/// Outcome of a complete run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub instrumented: bool,
    pub cn_count: usize,
    pub summary: TraceSummary,
    pub assertions: Vec<AssertionResult>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Prepares and runs a scenario to completion.
pub fn run(scenario: &Scenario, instrument: Option<bool>) -> Result<(Trace, RunReport), ScenarioError> {
    let prepared = scenario.prepare(instrument)?;
    let assertions = prepared.assertions.clone();
    let report_head = (prepared.name.clone(), prepared.instrumented, prepared.graph.cns.len());
    let trace = Simulation::new(prepared, true)?.into_trace();
    let report = RunReport {
        scenario: report_head.0,
        instrumented: report_head.1,
        cn_count: report_head.2,
        summary: trace.summary(),
        assertions: check_assertions(&trace, &assertions),
    };
    Ok((trace, report))
}

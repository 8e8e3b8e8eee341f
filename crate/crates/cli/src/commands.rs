use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use roboguard_core::classifier::{classify as classify_repo, extract_key_info, load_corpus, RepoRecord, RuleSet};
use roboguard_core::sim::{check_assertions, linear_fit, measure_cn_overhead, RunReport, ScenarioError};
use roboguard_core::{discover_all, parse_graph, InteractionGraph, MatchTables, RiskReport, Scenario, Simulation};
use roboguard_service::{AppState, LiveOptions, LiveSim, Pace, RunClock, Store, Timestamp};
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes `text` to `path`, or to stdout when there is no path.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            fs::write(p, text).map_err(|e| CliError::io(p, e))?;
            tracing::info!(path = %p.display(), "wrote");
            Ok(())
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn load_graph(path: &Path) -> CliResult<InteractionGraph> {
    parse_graph(&read(path)?).map_err(|e| CliError::invalid(path, e))
}

fn load_tables(path: Option<&Path>) -> CliResult<MatchTables> {
    match path {
        Some(p) => MatchTables::from_json(&read(p)?).map_err(|e| CliError::invalid(p, e)),
        None => Ok(MatchTables::default()),
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> CliResult<Scenario> {
    let mut s = Scenario::load(path).map_err(|e| scenario_error(path, e))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn scenario_error(path: &Path, e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Io { path, source } => CliError::Io { path, source },
        other => CliError::invalid(path, other),
    }
}

pub fn analyze(graph: &Path, tables: Option<&Path>, out: Option<&Path>) -> CliResult {
    let g = load_graph(graph)?;
    let report = discover_all(&g, &load_tables(tables)?);
    tracing::info!(findings = report.findings().count(), "analysis done");
    emit(out, &report.to_json())
}

#[derive(Serialize)]
struct ClassifyRow<'a> {
    name: &'a str,
    #[serde(rename = "type")]
    function_type: String,
    matched_via: String,
}

pub fn classify(corpus: &Path, rules: Option<&Path>, out: Option<&Path>) -> CliResult {
    let rules = match rules {
        Some(p) => RuleSet::from_json(&read(p)?).map_err(|e| CliError::invalid(p, e))?,
        None => RuleSet::default(),
    };
    if !corpus.is_dir() {
        return Err(CliError::Usage(format!("{}: not a corpus directory", corpus.display())));
    }
    let repos = load_corpus(corpus).map_err(|e| CliError::invalid(corpus, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for raw in &repos {
        let rec = extract_key_info(raw).unwrap_or_else(|e| {
            tracing::warn!(repo = %raw.name, error = %e, "manifest ignored");
            RepoRecord {
                name: raw.name.trim().to_string(),
                manifest_description: String::new(),
                readme: raw.readme_text.clone().unwrap_or_default(),
            }
        });
        let c = classify_repo(&rec, &rules);
        w.serialize(ClassifyRow {
            name: &rec.name,
            function_type: c.function_type.to_string(),
            matched_via: c.matched_via.to_string(),
        })
        .expect("in-memory CSV write");
    }
    let bytes = w.into_inner().expect("in-memory CSV flush");
    let text = String::from_utf8(bytes).expect("CSV is UTF-8");
    emit(out, text.trim_end())
}

pub fn instrument(graph: &Path, report: Option<&Path>, out: Option<&Path>, cn_config: Option<&Path>) -> CliResult {
    let g = load_graph(graph)?;
    let report = match report {
        Some(p) => RiskReport::from_json(&read(p)?).map_err(|e| CliError::invalid(p, e))?,
        None => discover_all(&g, &MatchTables::default()),
    };
    let ig = roboguard_core::instrument(&g, &report, &BTreeMap::new()).map_err(|e| CliError::invalid(graph, e))?;
    tracing::info!(cns = ig.cns.len(), "instrumented");
    if let Some(p) = cn_config {
        emit(Some(p), &to_json(&ig.cn_config()))?;
    }
    emit(out, &ig.to_json())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

pub struct SimulateOpts {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub instrument: Option<bool>,
    pub trace: Option<PathBuf>,
    pub report: bool,
    pub fail_on_violation: bool,
}

fn run_scenario(s: &Scenario, path: &Path, instrument: Option<bool>) -> CliResult<(roboguard_core::Trace, RunReport)> {
    roboguard_core::run(s, instrument).map_err(|e| scenario_error(path, e))
}

fn write_trace(path: &Path, trace: &roboguard_core::Trace) -> CliResult {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    trace
        .write_jsonl(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn summarize(r: &RunReport) -> String {
    let mut lines = vec![format!(
        "{}: {} ({} CNs), {} publishes, {} deliveries, {} violation events",
        r.scenario,
        if r.instrumented { "instrumented" } else { "bare" },
        r.cn_count,
        r.summary.publishes,
        r.summary.deliveries,
        r.summary.violations
    )];
    for a in &r.assertions {
        let first = a
            .first_offending
            .as_ref()
            .map(|o| format!(", first at t={:.3} to {}", o.time, o.node))
            .unwrap_or_default();
        lines.push(format!(
            "  {} {} ({}): {} offending{first}",
            if a.passed { "PASS" } else { "FAIL" },
            a.label,
            a.kind,
            a.violations
        ));
    }
    lines.join("\n")
}

fn verdict(r: &RunReport, fail_on_violation: bool) -> CliResult {
    if fail_on_violation && !r.passed() {
        let failed: Vec<&str> = r
            .assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| a.label.as_str())
            .collect();
        return Err(CliError::Violation(format!("assertions failed: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn simulate(o: &SimulateOpts) -> CliResult {
    let s = load_scenario(&o.scenario, o.seed)?;
    let (trace, report) = run_scenario(&s, &o.scenario, o.instrument)?;
    if let Some(p) = &o.trace {
        write_trace(p, &trace)?;
    }
    if o.report {
        emit(None, &to_json(&report))?;
    } else {
        emit(None, &summarize(&report))?;
    }
    verdict(&report, o.fail_on_violation)
}

/// Parses `a..b` (inclusive) or a single length.
pub fn parse_range(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("--bench-cn-chain expects A..B, got `{text}`"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (text, text),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

#[derive(Serialize)]
struct BenchOutput {
    points: Vec<roboguard_core::sim::OverheadPoint>,
    /// Fit of added latency on chain length over lengths >= 1.
    fit: Option<roboguard_core::sim::LinearFit>,
}

pub fn bench(range: &str, trials: usize, messages: usize) -> CliResult {
    let lengths = parse_range(range)?;
    if trials == 0 || messages == 0 {
        return Err(CliError::Usage("--trials and --messages must be > 0".into()));
    }
    let points = measure_cn_overhead(&lengths, trials, messages);
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.n_cns >= 1)
        .map(|p| (p.n_cns as f64, p.added_latency))
        .collect();
    let fit = (xy.len() >= 2).then(|| linear_fit(&xy));
    emit(None, &to_json(&BenchOutput { points, fit }))
}

pub struct ServeOpts {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub listen: String,
    pub enforce_roles: bool,
    pub store: Option<PathBuf>,
    pub speed: f64,
    pub instrument: bool,
}

pub fn serve(o: &ServeOpts) -> CliResult {
    let addr: SocketAddr = o
        .listen
        .parse()
        .map_err(|_| CliError::Usage(format!("--listen expects addr:port, got `{}`", o.listen)))?;
    if !(o.speed >= 0.0 && o.speed.is_finite()) {
        return Err(CliError::Usage("--speed must be >= 0".into()));
    }
    let s = load_scenario(&o.scenario, o.seed)?;
    let prepared = s
        .prepare(Some(o.instrument))
        .map_err(|e| scenario_error(&o.scenario, e))?;
    let store = Arc::new(match &o.store {
        Some(dir) => Store::open(dir).map_err(|e| CliError::Validation(e.to_string()))?,
        None => Store::in_memory(),
    });
    let opts = LiveOptions {
        pace: if o.speed == 0.0 {
            Pace::Unpaced
        } else {
            Pace::Realtime(o.speed)
        },
        slice: 0.05,
        enforce_roles: o.enforce_roles,
        clock: RunClock::new(Timestamp::now()),
    };
    let live = LiveSim::spawn(prepared, store.clone(), opts).map_err(|e| scenario_error(&o.scenario, e))?;
    let state = AppState {
        store,
        live: live.handle(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io(Path::new("<runtime>"), e))?;
    eprintln!("serving {} on http://{addr}", s.name);
    rt.block_on(roboguard_service::serve(addr, state))
        .map_err(|e| CliError::io(Path::new(&o.listen), e))?;
    drop(live);
    Ok(())
}

pub fn pipeline(
    scenario: &Path,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    instrument: bool,
    fail_on_violation: bool,
) -> CliResult {
    let s = load_scenario(scenario, seed)?;
    let prepared = s.prepare(Some(instrument)).map_err(|e| scenario_error(scenario, e))?;
    let report = discover_all(&prepared.original, &s.tables.clone().unwrap_or_default());
    let ig = prepared.graph.clone();
    let assertions = prepared.assertions.clone();
    let (name, cn_count) = (prepared.name.clone(), ig.cns.len());
    let trace = Simulation::new(prepared, true)
        .map_err(|e| scenario_error(scenario, e))?
        .into_trace();
    let run = RunReport {
        scenario: name,
        instrumented: instrument,
        cn_count,
        summary: trace.summary(),
        assertions: check_assertions(&trace, &assertions),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        emit(Some(&dir.join("report.json")), &report.to_json())?;
        if instrument {
            emit(Some(&dir.join("instrumented.json")), &ig.to_json())?;
            emit(Some(&dir.join("cns.json")), &to_json(&ig.cn_config()))?;
        }
        write_trace(&dir.join("trace.jsonl"), &trace)?;
        emit(Some(&dir.join("run_report.json")), &to_json(&run))?;
    }
    emit(
        None,
        &format!("{} findings\n{}", report.findings().count(), summarize(&run)),
    )?;
    verdict(&run, fail_on_violation)
}

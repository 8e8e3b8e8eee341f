mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

/// Interaction-risk toolkit for pub/sub robot applications: find risky
/// topic sharing, interpose coordination nodes, and check the result in
/// simulation.
///
/// Exit codes: 0 success, 1 usage or I/O error, 2 invalid input,
/// 3 assertion failed (with --fail-on-violation).
#[derive(Debug, Parser)]
#[command(name = "roboguard", version)]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discover interaction risks in a graph.
    ///
    /// Graph file: {"name", "topics": [{"name", "type", "tags"?}],
    /// "nodes": [{"name", "pub": [..], "sub": [..], "domain"?, "behavior"?}]}.
    /// Unknown fields are rejected. The report lists findings per kind
    /// (GR_ST, GR_MT, RSR_MaxVel, RSR_Image, MSR_Event, MSR_Action) with
    /// the graph fingerprint.
    Analyze(AnalyzeArgs),
    /// Classify robot-software repositories by function.
    ///
    /// The corpus holds one directory per repository with optional
    /// name.txt, package.xml and README.md. Output CSV columns:
    /// name, type, matched_via.
    Classify(ClassifyArgs),
    /// Insert coordination nodes for the risks in a report.
    ///
    /// Writes the instrumented graph ({"graph", "cns"}) and optionally the
    /// CN config file: per CN {id, type, flows, policy, params}.
    Instrument(InstrumentArgs),
    /// Run a scenario, or benchmark chains of coordination nodes.
    ///
    /// Scenario file: {"name", "graph" (path or inline), "duration",
    /// "seed"?, "instrument"?, "link_latency"?, "flags"?, "behaviors"?,
    /// "attacks"?, "policies"?, "assertions"?, "tables"?}. The trace is
    /// line-delimited JSON, one event per line.
    Simulate(SimulateArgs),
    /// Serve CN state, violations and policy changes over HTTP for a live
    /// simulation.
    ///
    /// Endpoints: GET /cns, GET /cns/{id}, GET /violations?since=<ISO-8601>,
    /// PUT /cns/{id}/policy (x-role: developer | end_user), GET /stream
    /// (server-sent violations), GET /status.
    Serve(ServeArgs),
    /// Analyze, instrument and simulate a scenario in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    graph: PathBuf,
    /// Match-table override (JSON).
    #[arg(long)]
    tables: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    corpus: PathBuf,
    /// Rule set override (JSON).
    #[arg(long)]
    rules: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InstrumentArgs {
    graph: PathBuf,
    /// Report from `analyze`; computed with default tables when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Instrumented graph destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CN config destination.
    #[arg(long)]
    cn_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file; not needed with --bench-cn-chain.
    #[arg(required_unless_present = "bench_cn_chain")]
    scenario: Option<PathBuf>,
    /// Write the event trace (JSON lines) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the full run report as JSON.
    #[arg(long)]
    report: bool,
    /// Exit 3 when an assertion fails.
    #[arg(long)]
    fail_on_violation: bool,
    /// Run without coordination nodes regardless of the scenario.
    #[arg(long, conflicts_with = "instrument")]
    no_instrument: bool,
    /// Insert coordination nodes regardless of the scenario.
    #[arg(long)]
    instrument: bool,
    /// Benchmark Block CN chains of these lengths, e.g. 0..10 (inclusive).
    #[arg(long, value_name = "A..B", conflicts_with = "scenario")]
    bench_cn_chain: Option<String>,
    #[arg(long, default_value_t = 5, requires = "bench_cn_chain")]
    trials: usize,
    #[arg(long, default_value_t = 400, requires = "bench_cn_chain")]
    messages: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Enforce executor roles on policy changes (default).
    #[arg(long, overrides_with = "no_enforce_roles")]
    enforce_roles: bool,
    #[arg(long)]
    no_enforce_roles: bool,
    /// Persist risk models and violations in this directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Virtual seconds per wall-clock second; 0 runs unpaced.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long)]
    no_instrument: bool,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    scenario: PathBuf,
    /// Write report.json, instrumented.json, cns.json, trace.jsonl and
    /// run_report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    fail_on_violation: bool,
    #[arg(long)]
    no_instrument: bool,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a.graph, a.tables.as_deref(), a.out.as_deref()),
        Command::Classify(a) => commands::classify(&a.corpus, a.rules.as_deref(), a.out.as_deref()),
        Command::Instrument(a) => {
            commands::instrument(&a.graph, a.report.as_deref(), a.out.as_deref(), a.cn_config.as_deref())
        }
        Command::Simulate(a) => match a.bench_cn_chain {
            Some(range) => commands::bench(&range, a.trials, a.messages),
            None => commands::simulate(&commands::SimulateOpts {
                scenario: a.scenario.expect("required by clap"),
                seed: cli.seed,
                instrument: match (a.instrument, a.no_instrument) {
                    (true, _) => Some(true),
                    (_, true) => Some(false),
                    _ => None,
                },
                trace: a.trace,
                report: a.report,
                fail_on_violation: a.fail_on_violation,
            }),
        },
        Command::Serve(a) => commands::serve(&commands::ServeOpts {
            scenario: a.scenario,
            seed: cli.seed,
            listen: a.listen,
            enforce_roles: !a.no_enforce_roles,
            store: a.store,
            speed: a.speed,
            instrument: !a.no_instrument,
        }),
        Command::Pipeline(a) => commands::pipeline(
            &a.scenario,
            cli.seed,
            a.out_dir.as_deref(),
            !a.no_instrument,
            a.fail_on_violation,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_) | CliError::Io { .. }) {
                eprintln!("see `roboguard --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

//! Core toolkit for modelling robot-app interaction graphs, discovering
//! interaction risks, interposing coordination nodes and enforcing their
//! policies inside a deterministic pub/sub simulator.

pub mod behavior;
pub mod classifier;
pub mod graph;
pub mod instrument;
pub mod payload;
pub mod policy;
pub mod risk;
pub mod sim;

pub use graph::{graph_stats, parse_graph, GraphError, GraphStats, InteractionGraph, MessageType};
pub use instrument::{instrument, uninstrument, CnType, CoordinationNodeSpec, InstrumentedGraph};
pub use payload::{Payload, Predicate};
pub use policy::{PolicyConfig, PolicyKind};
pub use risk::{discover_all, MatchTables, RiskFinding, RiskKind, RiskReport};
pub use sim::{run, Scenario, Simulation, Trace};

//! Drives a simulation on its own thread and feeds CN events to the store.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use roboguard_core::policy::{Ack, ConfigError, Role};
use roboguard_core::sim::{EventKind, PreparedScenario, ScenarioError, TraceEvent, ViolationSource};
use roboguard_core::{PolicyConfig, Simulation, Trace};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::model::{CnUpdate, RiskModel, RunClock};
use crate::store::Store;

/// How fast virtual time moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    /// As fast as the simulator runs.
    Unpaced,
    /// Virtual seconds per wall-clock second.
    Realtime(f64),
    /// Only on explicit `advance_to` calls.
    Manual,
}

#[derive(Debug, Clone)]
pub struct LiveOptions {
    pub pace: Pace,
    /// Virtual seconds advanced per slice between command checks.
    pub slice: f64,
    pub enforce_roles: bool,
    pub clock: RunClock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub scenario: String,
    pub sim_time: f64,
    pub duration: f64,
    pub done: bool,
    pub enforce_roles: bool,
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation thread has stopped")]
    Stopped,
}

enum Command {
    Configure {
        cn_id: String,
        config: Box<PolicyConfig>,
        role: Role,
        reply: oneshot::Sender<Result<Ack, ConfigError>>,
    },
    AdvanceTo {
        t: f64,
        reply: oneshot::Sender<f64>,
    },
    Shutdown,
}

/// Cloneable handle the HTTP layer talks to.
#[derive(Clone)]
pub struct LiveHandle {
    tx: mpsc::Sender<Command>,
    status: Arc<Mutex<Status>>,
}

impl LiveHandle {
    /// Forwards a policy change and waits until the engine applied it and
    /// the store reflects it.
    pub async fn configure(&self, cn_id: &str, config: PolicyConfig, role: Role) -> Result<Ack, LiveError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Command::Configure {
                cn_id: cn_id.to_string(),
                config: Box::new(config),
                role,
                reply,
            })
            .map_err(|_| LiveError::Stopped)?;
        Ok(rx.await.map_err(|_| LiveError::Stopped)??)
    }

    /// Runs the simulation up to virtual time `t`; returns the new time.
    pub async fn advance_to(&self, t: f64) -> Result<f64, LiveError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Command::AdvanceTo { t, reply })
            .map_err(|_| LiveError::Stopped)?;
        rx.await.map_err(|_| LiveError::Stopped)
    }

    pub fn status(&self) -> Status {
        self.status.lock().expect("status lock").clone()
    }
}

/// Owns the simulation thread. Dropping it stops the thread.
pub struct LiveSim {
    handle: LiveHandle,
    thread: Option<JoinHandle<Trace>>,
}

impl LiveSim {
    /// Registers every CN with the store, then starts the run.
    pub fn spawn(prepared: PreparedScenario, store: Arc<Store>, opts: LiveOptions) -> Result<Self, ScenarioError> {
        let sim = Simulation::new(prepared, opts.enforce_roles)?;
        for cn in &sim.graph().cns {
            let model = RiskModel::from_spec(cn, sim.engine().config(&cn.id));
            if let Err(e) = store.collect(CnUpdate::Register(model)) {
                tracing::warn!(cn = %cn.id, error = %e, "registering CN failed");
            }
        }
        let status = Arc::new(Mutex::new(Status {
            scenario: sim.prepared().name.clone(),
            sim_time: sim.now(),
            duration: sim.duration(),
            done: false,
            enforce_roles: opts.enforce_roles,
        }));
        let (tx, rx) = mpsc::channel();
        let mut worker = Worker {
            sim,
            store,
            opts,
            cursor: 0,
            status: status.clone(),
        };
        let thread = thread::Builder::new()
            .name("live-sim".into())
            .spawn(move || worker.run(rx))
            .expect("spawn simulation thread");
        Ok(Self {
            handle: LiveHandle { tx, status },
            thread: Some(thread),
        })
    }

    pub fn handle(&self) -> LiveHandle {
        self.handle.clone()
    }

    /// Stops the thread and returns the trace so far.
    pub fn shutdown(mut self) -> Trace {
        self.stop().unwrap_or_default()
    }

    fn stop(&mut self) -> Option<Trace> {
        let _ = self.handle.tx.send(Command::Shutdown);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for LiveSim {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Worker {
    sim: Simulation,
    store: Arc<Store>,
    opts: LiveOptions,
    /// Trace events already forwarded.
    cursor: usize,
    status: Arc<Mutex<Status>>,
}

impl Worker {
    fn run(&mut self, rx: mpsc::Receiver<Command>) -> Trace {
        loop {
            let cmd = if self.sim.is_done() || self.opts.pace == Pace::Manual {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => break,
                }
            } else {
                match rx.try_recv() {
                    Ok(c) => Some(c),
                    Err(mpsc::TryRecvError::Empty) => None,
                    Err(mpsc::TryRecvError::Disconnected) => break,
                }
            };
            match cmd {
                Some(Command::Shutdown) => break,
                Some(Command::Configure {
                    cn_id,
                    config,
                    role,
                    reply,
                }) => {
                    let res = self.sim.configure(&cn_id, *config, role);
                    if let Ok(ack) = &res {
                        self.echo(&ack.cn_id, ack.applied.clone());
                    }
                    let _ = reply.send(res);
                }
                Some(Command::AdvanceTo { t, reply }) => {
                    self.advance(t);
                    let _ = reply.send(self.sim.now());
                }
                None => {
                    let target = self.sim.now() + self.opts.slice;
                    self.advance(target);
                    if let Pace::Realtime(rate) = self.opts.pace {
                        thread::sleep(Duration::from_secs_f64(self.opts.slice / rate.max(1e-6)));
                    }
                }
            }
        }
        self.sim.trace().clone()
    }

    fn advance(&mut self, t: f64) {
        if t >= self.sim.duration() {
            self.sim.run_to_end();
        } else {
            self.sim.advance_to(t);
        }
        self.forward();
        let mut s = self.status.lock().expect("status lock");
        s.sim_time = self.sim.now();
        s.done = self.sim.is_done();
    }

    fn echo(&self, cn_id: &str, config: PolicyConfig) {
        let update = CnUpdate::Config {
            cn_id: cn_id.to_string(),
            config,
        };
        if let Err(e) = self.store.collect(update) {
            tracing::warn!(cn = cn_id, error = %e, "config echo dropped");
        }
    }

    fn forward(&mut self) {
        let events = &self.sim.trace().events[self.cursor..];
        self.cursor += events.len();
        for e in events {
            if let Some(update) = to_update(e, &self.opts.clock) {
                if let Err(err) = self.store.collect(update) {
                    tracing::warn!(error = %err, "CN update dropped");
                }
            }
        }
    }
}

fn to_update(e: &TraceEvent, clock: &RunClock) -> Option<CnUpdate> {
    match &e.kind {
        EventKind::Violation {
            source: ViolationSource::Cn { cn_id },
            rule,
            cause,
            details,
        } => Some(CnUpdate::Violation {
            time: clock.at(e.time),
            cn_id: cn_id.clone(),
            violated_rule: rule.clone(),
            cause: cause.clone(),
            details: details.clone(),
        }),
        EventKind::CnDecision { cn_id, decision, .. } if !decision.dropped.is_empty() || !decision.notes.is_empty() => {
            Some(CnUpdate::Trigger {
                cn_id: cn_id.clone(),
                time: clock.at(e.time),
            })
        }
        _ => None,
    }
}

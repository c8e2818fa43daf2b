//! An in-process cluster: broker, server and simulated clients that sleep
//! a virtual cost per evaluation.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::client::{self, ClientHandle, ClientOptions, ClientPhase};
use crate::domain::ApplicationDescription;
use crate::protocol::{Broker, Connector};
use crate::server::{self, MemoryStorage, Phase, ServerConfig, SessionStatus};

use super::{Evaluator, HarnessError};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub clients: usize,
    /// Sleep per evaluation.
    pub virtual_cost: Duration,
    pub heartbeat: Duration,
    /// Crash client 0 (no bye) when it takes a new assignment after this
    /// many reported evaluations. The assignment is lost with it.
    pub kill_after: Option<usize>,
    /// Start one more client once the knowledge is out.
    pub late_joiner: bool,
    pub timeout: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            virtual_cost: Duration::ZERO,
            heartbeat: Duration::from_millis(50),
            kill_after: None,
            late_joiner: false,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub id: String,
    pub killed: bool,
    pub late: bool,
    pub evaluations: usize,
    pub payload: Option<Arc<String>>,
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    /// Last session status seen.
    pub status: SessionStatus,
    pub clients: Vec<ClientOutcome>,
    /// First hello to broadcast.
    pub time_to_knowledge: Option<Duration>,
    /// Learning compute time summed over rounds.
    pub modeling: Duration,
    pub wall: Duration,
    /// Measurements taken, including ones lost with a killed client.
    pub evaluations: u64,
    pub storage: MemoryStorage,
}

impl ClusterRun {
    pub fn finished(&self) -> bool {
        self.status.phase == Phase::Serving
    }
}

struct Worker {
    handle: Arc<ClientHandle>,
    thread: thread::JoinHandle<(usize, bool)>,
    late: bool,
}

fn spawn_client(
    id: String,
    desc: &ApplicationDescription,
    connector: Arc<dyn Connector>,
    evaluator: Evaluator,
    cfg: &SimConfig,
    kill_after: Option<usize>,
    stop: Arc<AtomicBool>,
    late: bool,
) -> Result<Worker, HarnessError> {
    let opts = ClientOptions {
        client_id: Some(id),
        heartbeat: cfg.heartbeat,
        retry: (Duration::from_millis(5), Duration::from_millis(100)),
        ..ClientOptions::default()
    };
    let handle = Arc::new(client::start(desc.clone(), connector, opts)?);
    let cost = cfg.virtual_cost;
    let h = handle.clone();
    let thread = thread::spawn(move || {
        let mut done = 0;
        while !stop.load(Ordering::Relaxed) {
            match h.wait_assignment(Duration::from_millis(50)) {
                Some(c) => {
                    if kill_after == Some(done) {
                        h.kill();
                        return (done, true);
                    }
                    if !cost.is_zero() {
                        thread::sleep(cost);
                    }
                    let (features, metrics) = evaluator.measure(&c);
                    h.report(&c, &features, &metrics);
                    done += 1;
                }
                None if h.phase() == ClientPhase::Serving => thread::sleep(Duration::from_millis(50)),
                None => {}
            }
        }
        (done, false)
    });
    Ok(Worker { handle, thread, late })
}

/// Runs one application to broadcast (or `timeout`) and tears everything
/// down. Every surviving client is given until the timeout to install the
/// knowledge.
pub fn run_cluster(desc: &ApplicationDescription, evaluator: &Evaluator, cfg: &SimConfig) -> Result<ClusterRun, HarnessError> {
    let started = Instant::now();
    let deadline = started + cfg.timeout;
    let broker = Broker::new();
    let storage = MemoryStorage::new();
    let server = server::start(&broker, Arc::new(storage.clone()), ServerConfig { heartbeat: cfg.heartbeat })?;
    let connector: Arc<dyn Connector> = Arc::new(broker.clone());
    let stop = Arc::new(AtomicBool::new(false));
    let app = desc.app_name.clone();
    let mut workers = Vec::with_capacity(cfg.clients + 1);
    for i in 0..cfg.clients.max(1) {
        let kill = if i == 0 { cfg.kill_after } else { None };
        workers.push(spawn_client(
            format!("sim{i}"),
            desc,
            connector.clone(),
            evaluator.clone(),
            cfg,
            kill,
            stop.clone(),
            false,
        )?);
    }
    let remaining = |d: Instant| d.saturating_duration_since(Instant::now());
    let status = server.wait_for(&app, remaining(deadline), |s| s.phase == Phase::Serving || s.aborted.is_some());
    if status.as_ref().is_some_and(|s| s.phase == Phase::Serving) && cfg.late_joiner {
        workers.push(spawn_client(
            format!("sim{}", cfg.clients.max(1)),
            desc,
            connector.clone(),
            evaluator.clone(),
            cfg,
            None,
            stop.clone(),
            true,
        )?);
    }
    if status.is_some() {
        for w in &workers {
            // A killed client's thread has already returned.
            w.handle.wait_until(remaining(deadline), |h| {
                h.phase() == ClientPhase::Serving || h.error().is_some() || h.knowledge().is_some() || w.thread.is_finished()
            });
        }
    }
    stop.store(true, Ordering::Relaxed);
    let mut clients = Vec::with_capacity(workers.len());
    for w in workers {
        let (evaluations, killed) = w.thread.join().map_err(|_| HarnessError::Run("client thread panicked".into()))?;
        clients.push(ClientOutcome {
            id: w.handle.client_id().to_string(),
            killed,
            late: w.late,
            evaluations,
            payload: if killed { None } else { w.handle.knowledge_payload() },
        });
        w.handle.stop();
    }
    let status = server
        .status(&app)
        .ok_or_else(|| HarnessError::Run(format!("{app}: no session was created")))?;
    server.shutdown();
    let modeling = status.timeline.modeling.iter().filter_map(|m| m.compute).sum();
    Ok(ClusterRun {
        time_to_knowledge: status.timeline.time_to_knowledge(),
        status,
        clients,
        modeling,
        wall: started.elapsed(),
        evaluations: evaluator.count(),
        storage,
    })
}

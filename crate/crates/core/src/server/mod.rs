//! The remote application handler.
//!
//! One session per application drives the workflow: ask the first client
//! for the application description, generate a DoE, deal its evaluations
//! to the live clients, learn once every evaluation is observed, then
//! either broadcast the knowledge or explore another batch.
//!
//! [`start`] runs the sessions as threads behind a broker link. Messages of
//! one application are handled in order by its own thread; learning runs on
//! a separate thread and posts its result back.

mod dispatch;
mod learning;
mod session;
mod storage;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, tick, unbounded, Receiver, Sender};
use log::{error, warn};
use parking_lot::Mutex;

use crate::protocol::{Channel, Connector, Link, Message, ProtocolError, Topic, TOPIC_ROOT};

pub use dispatch::{compress, dispatch, expand, quota, Assignments};
pub use learning::{efp_dataset, run_learning, EfpLearning, LearningError, LearningJob, LearningResult};
pub use session::{Action, AppSession, ModelingSpan, Phase, SessionStatus, Timeline, MISSED_BEATS};
pub use storage::{CsvStorage, MemoryStorage, Persisted, Storage, StorageError, StorageFactory};

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Expected client heartbeat period.
    pub heartbeat: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            heartbeat: DEFAULT_HEARTBEAT,
        }
    }
}

type Statuses = Arc<Mutex<BTreeMap<String, SessionStatus>>>;

/// A running server. Dropping it stops every session.
pub struct ServerHandle {
    statuses: Statuses,
    stop: Sender<()>,
    router: Option<JoinHandle<()>>,
    link: Arc<dyn Link>,
}

impl ServerHandle {
    pub fn status(&self, app: &str) -> Option<SessionStatus> {
        self.statuses.lock().get(app).cloned()
    }

    pub fn apps(&self) -> Vec<String> {
        self.statuses.lock().keys().cloned().collect()
    }

    /// Polls until `pred` holds for the session of `app` or `timeout`
    /// elapses.
    pub fn wait_for(
        &self,
        app: &str,
        timeout: Duration,
        pred: impl Fn(&SessionStatus) -> bool,
    ) -> Option<SessionStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(s) = self.status(app).filter(|s| pred(s)) {
                return Some(s);
            }
            if Instant::now() >= deadline {
                return None;
            }
            thread::sleep(Duration::from_millis(2));
        }
    }

    pub fn wait_for_phase(&self, app: &str, phase: Phase, timeout: Duration) -> Option<SessionStatus> {
        self.wait_for(app, timeout, |s| s.phase == phase)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        let _ = self.stop.send(());
        if let Some(r) = self.router.take() {
            let _ = r.join();
        }
        self.link.close();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

struct Worker {
    tx: Sender<Message>,
    handle: JoinHandle<()>,
}

/// Connects to the broker, recovers stored sessions and serves until the
/// handle is dropped.
pub fn start(
    connector: &dyn Connector,
    storage: Arc<dyn StorageFactory>,
    config: ServerConfig,
) -> Result<ServerHandle, ProtocolError> {
    let link: Arc<dyn Link> = Arc::from(connector.connect()?);
    for channel in [Channel::Welcome, Channel::InfoReply, Channel::Observation, Channel::Bye] {
        link.subscribe(&format!("{TOPIC_ROOT}/+/{channel}/+"))?;
    }
    let statuses: Statuses = Arc::default();
    let epoch = Instant::now();
    let mut workers = BTreeMap::new();
    match storage.apps() {
        Ok(apps) => {
            for app in apps {
                match AppSession::recover(&app, storage.open(), config.heartbeat, epoch.elapsed()) {
                    Ok((session, actions)) => {
                        let w = spawn_worker(session, actions, link.clone(), statuses.clone(), &config, epoch);
                        workers.insert(app, w);
                    }
                    Err(e) => error!("cannot recover {app}: {e}"),
                }
            }
        }
        Err(e) => error!("cannot list stored applications: {e}"),
    }
    let (stop, stop_rx) = bounded(1);
    let router = {
        let link = link.clone();
        let statuses = statuses.clone();
        thread::Builder::new().name("server-router".into()).spawn(move || {
            route(link, storage, config, statuses, workers, stop_rx, epoch)
        })?
    };
    Ok(ServerHandle {
        statuses,
        stop,
        router: Some(router),
        link,
    })
}

fn route(
    link: Arc<dyn Link>,
    storage: Arc<dyn StorageFactory>,
    config: ServerConfig,
    statuses: Statuses,
    mut workers: BTreeMap<String, Worker>,
    stop: Receiver<()>,
    epoch: Instant,
) {
    loop {
        select! {
            recv(link.incoming()) -> msg => {
                let Ok(msg) = msg else { break };
                let app = match Topic::parse(&msg.topic) {
                    Ok(t) => t.app,
                    Err(e) => {
                        warn!("{e}");
                        continue;
                    }
                };
                let worker = workers.entry(app.clone()).or_insert_with(|| {
                    let session = AppSession::new(&app, storage.open(), config.heartbeat);
                    spawn_worker(session, vec![], link.clone(), statuses.clone(), &config, epoch)
                });
                let _ = worker.tx.send(msg);
            }
            recv(stop) -> _ => break,
        }
    }
    for (_, w) in workers {
        drop(w.tx);
        let _ = w.handle.join();
    }
}

fn spawn_worker(
    mut session: AppSession,
    initial: Vec<Action>,
    link: Arc<dyn Link>,
    statuses: Statuses,
    config: &ServerConfig,
    epoch: Instant,
) -> Worker {
    let (tx, rx) = unbounded::<Message>();
    let period = (config.heartbeat / 2).max(Duration::from_millis(5));
    let name = format!("session-{}", session.app());
    let handle = thread::Builder::new()
        .name(name)
        .spawn(move || {
            let (learn_tx, learn_rx) = unbounded();
            let ticker = tick(period);
            let mut learners: Vec<JoinHandle<()>> = vec![];
            let mut run = |session: &mut AppSession, actions: Vec<Action>| {
                for a in actions {
                    match a {
                        Action::Publish(m) => {
                            if let Err(e) = link.publish(m) {
                                warn!("{}: publish failed: {e}", session.app());
                            }
                        }
                        Action::Learn(job) => {
                            let tx = learn_tx.clone();
                            learners.retain(|h| !h.is_finished());
                            learners.push(thread::spawn(move || {
                                let _ = tx.send(run_learning(&job));
                            }));
                        }
                    }
                }
                statuses.lock().insert(session.app().to_string(), session.status());
            };
            run(&mut session, initial);
            loop {
                let actions = select! {
                    recv(rx) -> msg => match msg {
                        Ok(m) => session.handle(&m, epoch.elapsed()),
                        Err(_) => break,
                    },
                    recv(learn_rx) -> r => match r {
                        Ok(r) => session.on_learning(r, epoch.elapsed()),
                        Err(_) => vec![],
                    },
                    recv(ticker) -> _ => session.tick(epoch.elapsed()),
                };
                run(&mut session, actions);
            }
        })
        .expect("spawn session thread");
    Worker { tx, handle }
}

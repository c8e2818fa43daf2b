//! The application-side handler.
//!
//! [`start`] spawns a service thread that owns every protocol interaction:
//! it greets the server, answers the description request, receives DoE
//! assignments and installs broadcast knowledge. Application threads only
//! touch local state through [`ClientHandle::get_config`] and
//! [`ClientHandle::report`], which never wait on the network.
//!
//! Once knowledge is installed, [`select_op`] picks the operating point for
//! the current input: it keeps the points of the nearest feature centroid,
//! rescales their expected EFPs by the [`MonitorWindow`] correction, and
//! returns the best one under the [`Requirements`].

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{never, select, unbounded, Receiver, Sender};
use log::{debug, info, warn};
use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::clustering::nearest_centroid;
use crate::doe::restricted_grid;
use crate::domain::{
    decode_csv_row, encode_csv_row, encode_description, ApplicationDescription, Comparator,
    ConfigKey, DoeRow, EfpVector, FeatureVector, KnobConfig, KnowledgeBase, Observation,
    OperatingPoint, RowLayout,
};
use crate::knowledge::decode_payload;
use crate::protocol::{
    payload, payload_body, topic, Channel, Connector, Greeting, Link, Message, Topic, Welcome,
};

/// Outbound messages kept while the broker is unreachable.
pub const DEFAULT_BUFFER_CAP: usize = 10_000;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("EFP index {0} does not exist")]
    UnknownEfp(usize),
    #[error("priority {0} is used by more than one constraint")]
    DuplicatePriority(i32),
    #[error("invalid client id {0:?}")]
    ClientId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub efp: usize,
    pub comparator: Comparator,
    pub threshold: f64,
    /// Larger is more important; the smallest is relaxed first.
    pub priority: i32,
}

/// What the application wants from its operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Requirements {
    pub rank: (usize, Direction),
    pub constraints: Vec<Constraint>,
}

impl Requirements {
    pub fn new(efp: usize, direction: Direction) -> Self {
        Self {
            rank: (efp, direction),
            constraints: vec![],
        }
    }

    pub fn constrain(mut self, efp: usize, comparator: Comparator, threshold: f64, priority: i32) -> Self {
        self.constraints.push(Constraint {
            efp,
            comparator,
            threshold,
            priority,
        });
        self
    }

    pub fn validate(&self, efps: usize) -> Result<(), ClientError> {
        if self.rank.0 >= efps {
            return Err(ClientError::UnknownEfp(self.rank.0));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.efp >= efps {
                return Err(ClientError::UnknownEfp(c.efp));
            }
            if self.constraints[..i].iter().any(|o| o.priority == c.priority) {
                return Err(ClientError::DuplicatePriority(c.priority));
            }
        }
        Ok(())
    }
}

impl Default for Requirements {
    /// Minimize the first EFP, unconstrained.
    fn default() -> Self {
        Self::new(0, Direction::Minimize)
    }
}

/// Per-EFP circular buffers of `(observed, expected)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorWindow {
    capacity: usize,
    buffers: Vec<VecDeque<(f64, f64)>>,
}

impl MonitorWindow {
    pub fn new(efps: usize, capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buffers: vec![VecDeque::new(); efps],
        }
    }

    pub fn push(&mut self, observed: &[f64], expected: &[f64]) {
        for ((buf, o), e) in self.buffers.iter_mut().zip(observed).zip(expected) {
            if buf.len() == self.capacity {
                buf.pop_front();
            }
            buf.push_back((*o, *e));
        }
    }

    pub fn len(&self, efp: usize) -> usize {
        self.buffers.get(efp).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.iter().all(VecDeque::is_empty)
    }

    pub fn clear(&mut self) {
        self.buffers.iter_mut().for_each(VecDeque::clear);
    }

    pub fn correction_factor(&self) -> Vec<f64> {
        correction_factor(self)
    }
}

/// `mean(observed) / mean(expected)` per EFP; 1 for an empty buffer or a
/// zero expected mean.
pub fn correction_factor(window: &MonitorWindow) -> Vec<f64> {
    window
        .buffers
        .iter()
        .map(|b| {
            if b.is_empty() {
                return 1.0;
            }
            let (o, e) = b.iter().fold((0.0, 0.0), |(o, e), (x, y)| (o + x, e + y));
            if e == 0.0 || !(o / e).is_finite() {
                1.0
            } else {
                o / e
            }
        })
        .collect()
}

fn scaled(op: &OperatingPoint, efp: usize, corrections: &[f64]) -> f64 {
    op.expected[efp] * corrections.get(efp).copied().unwrap_or(1.0)
}

/// Best operating point for `features` under `reqs`.
///
/// Only points of the nearest centroid compete. Expected values are scaled
/// by `corrections`. When no point satisfies every constraint, constraints
/// are dropped from the lowest priority up. Ties go to the lexicographically
/// lower configuration.
pub fn select_op<'a>(
    kb: &'a KnowledgeBase,
    reqs: &Requirements,
    features: &[f64],
    corrections: &[f64],
) -> Option<&'a OperatingPoint> {
    let candidates: Vec<&OperatingPoint> = if kb.centroids.len() > 1 {
        let c = &kb.centroids[nearest_centroid(features, &kb.centroids)];
        kb.ops.iter().filter(|op| op.features == *c).collect()
    } else {
        kb.ops.iter().collect()
    };
    let mut active: Vec<&Constraint> = reqs.constraints.iter().collect();
    active.sort_by(|a, b| b.priority.cmp(&a.priority));
    let (rank, direction) = reqs.rank;
    loop {
        let best = candidates
            .iter()
            .filter(|op| {
                active
                    .iter()
                    .all(|c| c.comparator.holds(scaled(op, c.efp, corrections), c.threshold))
            })
            .min_by(|a, b| {
                let (x, y) = (scaled(a, rank, corrections), scaled(b, rank, corrections));
                let ord = match direction {
                    Direction::Minimize => x.total_cmp(&y),
                    Direction::Maximize => y.total_cmp(&x),
                };
                ord.then_with(|| a.config.lex_cmp(&b.config))
            });
        match best {
            Some(op) => return Some(op),
            None if active.pop().is_some() => {}
            None => return None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Defaults to a random id.
    pub client_id: Option<String>,
    pub heartbeat: Duration,
    /// First and largest delay between connection attempts.
    pub retry: (Duration, Duration),
    pub window: usize,
    pub buffer_cap: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            client_id: None,
            heartbeat: Duration::from_secs(5),
            retry: (Duration::from_millis(50), Duration::from_secs(2)),
            window: DEFAULT_WINDOW,
            buffer_cap: DEFAULT_BUFFER_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    /// Not connected to a broker yet.
    Connecting,
    /// Connected, nothing to evaluate.
    Idle,
    /// Holding DoE assignments.
    Exploring,
    /// Knowledge installed.
    Serving,
}

impl fmt::Display for ClientPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClientPhase::Connecting => "connecting",
            ClientPhase::Idle => "idle",
            ClientPhase::Exploring => "exploring",
            ClientPhase::Serving => "serving",
        })
    }
}

/// Installed knowledge: the operating points plus an index for looking up
/// the expected values of a reported configuration.
#[derive(Debug)]
pub struct Installed {
    pub kb: KnowledgeBase,
    pub payload: Arc<String>,
    index: HashMap<(ConfigKey, usize), usize>,
}

impl Installed {
    fn new(kb: KnowledgeBase, payload: Arc<String>) -> Self {
        let index = kb
            .ops
            .iter()
            .enumerate()
            .map(|(i, op)| {
                let c = kb.centroids.iter().position(|c| *c == op.features).unwrap_or(0);
                ((op.config.key(), c), i)
            })
            .collect();
        Self { kb, payload, index }
    }

    /// Expected EFPs of `config` at the centroid nearest to `features`.
    pub fn expected(&self, config: &KnobConfig, features: &[f64]) -> Option<&EfpVector> {
        let c = nearest_centroid(features, &self.kb.centroids);
        self.index
            .get(&(config.key(), c))
            .map(|&i| &self.kb.ops[i].expected)
    }
}

#[derive(Debug)]
struct State {
    phase: ClientPhase,
    queue: VecDeque<KnobConfig>,
    /// Handed to the application, not yet reported.
    inflight: Vec<KnobConfig>,
    /// Reported, not yet acknowledged: `(timestamp, config)`.
    unacked: VecDeque<(i64, KnobConfig)>,
    last_assigned: Option<KnobConfig>,
    last_ts: i64,
    error: Option<String>,
}

fn take_assignment(st: &mut State) -> Option<KnobConfig> {
    let c = st.queue.pop_front()?;
    st.inflight.push(c.clone());
    st.last_assigned = Some(c.clone());
    if st.queue.is_empty() && st.phase == ClientPhase::Exploring {
        st.phase = ClientPhase::Idle;
    }
    Some(c)
}

struct Shared {
    desc: ApplicationDescription,
    layout: RowLayout,
    client_id: String,
    default_config: KnobConfig,
    state: Mutex<State>,
    /// Signalled when the queue, phase or error changes.
    changed: Condvar,
    knowledge: Mutex<Option<Arc<Installed>>>,
    window: Mutex<MonitorWindow>,
    reqs: Mutex<Requirements>,
    heartbeat: Duration,
}

enum Command {
    Send(Message),
    Stop,
    Kill,
}

/// Handle to a running client. Safe to share between application threads.
pub struct ClientHandle {
    shared: Arc<Shared>,
    commands: Sender<Command>,
    service: Mutex<Option<JoinHandle<()>>>,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.contains(['/', '+', '$']) && id.is_ascii()
}

/// Starts the service thread. Returns at once: without a reachable broker
/// the thread keeps retrying and the application runs on the default
/// configuration.
pub fn start(
    desc: ApplicationDescription,
    connector: Arc<dyn Connector>,
    opts: ClientOptions,
) -> Result<ClientHandle, ClientError> {
    let client_id = opts
        .client_id
        .clone()
        .unwrap_or_else(|| format!("c{:016x}", rand::random::<u64>()));
    if !valid_id(&client_id) {
        return Err(ClientError::ClientId(client_id));
    }
    let default_config = restricted_grid(&desc, crate::doe::DEFAULT_GRID_CAP)
        .ok()
        .and_then(|g| g.into_iter().next())
        .unwrap_or_else(|| KnobConfig::new(desc.knobs.iter().map(|k| k.values[0]).collect()));
    let shared = Arc::new(Shared {
        layout: desc.layout(),
        window: Mutex::new(MonitorWindow::new(desc.efps.len(), opts.window)),
        desc,
        client_id,
        default_config,
        state: Mutex::new(State {
            phase: ClientPhase::Connecting,
            queue: VecDeque::new(),
            inflight: vec![],
            unacked: VecDeque::new(),
            last_assigned: None,
            last_ts: i64::MIN,
            error: None,
        }),
        changed: Condvar::new(),
        knowledge: Mutex::new(None),
        reqs: Mutex::new(Requirements::default()),
        heartbeat: opts.heartbeat,
    });
    let (tx, rx) = unbounded();
    let service = {
        let shared = shared.clone();
        thread::Builder::new()
            .name(format!("client-{}", shared.client_id))
            .spawn(move || Service::new(shared, connector, opts, rx).run())
            .expect("spawn client service thread")
    };
    Ok(ClientHandle {
        shared,
        commands: tx,
        service: Mutex::new(Some(service)),
    })
}

impl ClientHandle {
    pub fn client_id(&self) -> &str {
        &self.shared.client_id
    }

    pub fn description(&self) -> &ApplicationDescription {
        &self.shared.desc
    }

    pub fn phase(&self) -> ClientPhase {
        self.shared.state.lock().phase
    }

    pub fn has_assignment(&self) -> bool {
        !self.shared.state.lock().queue.is_empty()
    }

    /// Why the server gave up on this application, if it did.
    pub fn error(&self) -> Option<String> {
        self.shared.state.lock().error.clone()
    }

    /// Pops the next DoE evaluation, if any.
    pub fn next_assignment(&self) -> Option<KnobConfig> {
        take_assignment(&mut self.shared.state.lock())
    }

    /// Like [`next_assignment`](Self::next_assignment), but blocks up to
    /// `timeout` for one to arrive. Returns `None` at once when serving or
    /// after the server gave up.
    pub fn wait_assignment(&self, timeout: Duration) -> Option<KnobConfig> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock();
        loop {
            if let Some(c) = take_assignment(&mut st) {
                return Some(c);
            }
            if st.phase == ClientPhase::Serving || st.error.is_some() {
                return None;
            }
            if self.shared.changed.wait_until(&mut st, deadline).timed_out() {
                return take_assignment(&mut st);
            }
        }
    }

    /// The configuration to run next: a pending DoE evaluation, else the
    /// selector's choice over installed knowledge, else the last assigned
    /// configuration, else the default one.
    pub fn get_config(&self, features: &[f64]) -> KnobConfig {
        if let Some(c) = self.next_assignment() {
            return c;
        }
        if let Some(k) = self.knowledge() {
            let corrections = self.shared.window.lock().correction_factor();
            let reqs = self.shared.reqs.lock().clone();
            if let Some(op) = select_op(&k.kb, &reqs, features, &corrections) {
                return op.config.clone();
            }
        }
        let st = self.shared.state.lock();
        st.last_assigned
            .clone()
            .unwrap_or_else(|| self.shared.default_config.clone())
    }

    /// Publishes a measurement. While knowledge is installed the monitor
    /// window also records it against the expected values.
    pub fn report(&self, config: &KnobConfig, features: &[f64], metrics: &[f64]) {
        let ts = {
            let mut st = self.shared.state.lock();
            let ts = now_ms().max(st.last_ts.saturating_add(1));
            st.last_ts = ts;
            if let Some(i) = st.inflight.iter().position(|c| c == config) {
                st.inflight.remove(i);
            }
            st.unacked.push_back((ts, config.clone()));
            ts
        };
        if let Some(k) = self.knowledge() {
            if let Some(expected) = k.expected(config, features) {
                self.shared.window.lock().push(metrics, expected);
            }
        }
        let obs = Observation {
            client_id: self.shared.client_id.clone(),
            config: config.clone(),
            features: FeatureVector::new(features.to_vec()),
            metrics: EfpVector::new(metrics.to_vec()),
            timestamp: ts,
        };
        let msg = Message::new(
            topic(&self.shared.desc.app_name, Channel::Observation, Some(&self.shared.client_id)),
            payload(Channel::Observation, &encode_csv_row(&obs)),
        );
        let _ = self.commands.send(Command::Send(msg));
    }

    pub fn set_requirements(&self, reqs: Requirements) -> Result<(), ClientError> {
        reqs.validate(self.shared.desc.efps.len())?;
        *self.shared.reqs.lock() = reqs;
        Ok(())
    }

    pub fn requirements(&self) -> Requirements {
        self.shared.reqs.lock().clone()
    }

    /// The installed knowledge snapshot.
    pub fn knowledge(&self) -> Option<Arc<Installed>> {
        self.shared.knowledge.lock().clone()
    }

    /// The knowledge payload exactly as received.
    pub fn knowledge_payload(&self) -> Option<Arc<String>> {
        self.knowledge().map(|k| k.payload.clone())
    }

    pub fn correction_factors(&self) -> Vec<f64> {
        self.shared.window.lock().correction_factor()
    }

    pub fn window(&self) -> MonitorWindow {
        self.shared.window.lock().clone()
    }

    /// Polls until `pred` holds or `timeout` elapses.
    pub fn wait_until(&self, timeout: Duration, pred: impl Fn(&ClientHandle) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        while !pred(self) {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(1));
        }
        true
    }

    /// Flushes pending messages, says bye and joins the service thread.
    pub fn stop(&self) {
        self.finish(Command::Stop);
    }

    /// Stops abruptly, as a crash would: no flush, no bye.
    pub fn kill(&self) {
        self.finish(Command::Kill);
    }

    fn finish(&self, cmd: Command) {
        if let Some(h) = self.service.lock().take() {
            let _ = self.commands.send(cmd);
            let _ = h.join();
        }
    }
}

impl Drop for ClientHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Service {
    shared: Arc<Shared>,
    connector: Arc<dyn Connector>,
    opts: ClientOptions,
    commands: Receiver<Command>,
    link: Option<Box<dyn Link>>,
    incarnation: u64,
    outbox: VecDeque<Message>,
    dropped: usize,
    backoff: Duration,
    next_attempt: Instant,
    next_beat: Instant,
}

impl Service {
    fn new(shared: Arc<Shared>, connector: Arc<dyn Connector>, opts: ClientOptions, commands: Receiver<Command>) -> Self {
        let now = Instant::now();
        Self {
            backoff: opts.retry.0,
            shared,
            connector,
            opts,
            commands,
            link: None,
            incarnation: rand::random(),
            outbox: VecDeque::new(),
            dropped: 0,
            next_attempt: now,
            next_beat: now,
        }
    }

    fn app(&self) -> &str {
        &self.shared.desc.app_name
    }

    fn topic(&self, channel: Channel) -> String {
        topic(self.app(), channel, Some(&self.shared.client_id))
    }

    fn run(mut self) {
        loop {
            let now = Instant::now();
            if self.link.is_none() && now >= self.next_attempt {
                self.connect();
            }
            if self.link.is_some() && Instant::now() >= self.next_beat {
                self.greet(Greeting::Heartbeat);
            }
            let wake = if self.link.is_some() {
                self.next_beat
            } else {
                self.next_attempt
            };
            let timeout = wake.saturating_duration_since(Instant::now());
            let incoming = self.link.as_ref().map(|l| l.incoming().clone());
            let incoming = incoming.unwrap_or_else(never);
            select! {
                recv(self.commands) -> cmd => match cmd {
                    Ok(Command::Send(m)) => {
                        self.enqueue(m);
                        self.flush();
                    }
                    Ok(Command::Stop) | Err(_) => {
                        self.flush();
                        if let Some(l) = &self.link {
                            let _ = l.publish(Message::new(self.topic(Channel::Bye), payload(Channel::Bye, "")));
                            l.close();
                        }
                        return;
                    }
                    Ok(Command::Kill) => {
                        if let Some(l) = &self.link {
                            l.close();
                        }
                        return;
                    }
                },
                recv(incoming) -> msg => match msg {
                    Ok(m) => self.on_message(m),
                    Err(_) => self.disconnect("link closed"),
                },
                default(timeout) => {}
            }
        }
    }

    fn enqueue(&mut self, m: Message) {
        if self.outbox.len() >= self.opts.buffer_cap {
            self.outbox.pop_front();
            self.dropped += 1;
            if self.dropped.is_power_of_two() {
                warn!("{}: outbound buffer full, {} messages dropped", self.app(), self.dropped);
            }
        }
        self.outbox.push_back(m);
    }

    fn flush(&mut self) {
        while let Some(m) = self.outbox.front() {
            let Some(link) = &self.link else { return };
            match link.publish(m.clone()) {
                Ok(()) => {
                    self.outbox.pop_front();
                }
                Err(e) => {
                    self.disconnect(&e.to_string());
                    return;
                }
            }
        }
    }

    fn disconnect(&mut self, why: &str) {
        if let Some(l) = self.link.take() {
            debug!("{}: disconnected: {why}", self.app());
            l.close();
        }
        self.next_attempt = Instant::now() + self.backoff;
        let mut st = self.shared.state.lock();
        if st.phase != ClientPhase::Serving {
            st.phase = ClientPhase::Connecting;
        }
    }

    fn connect(&mut self) {
        let attempt = self.connector.connect().and_then(|link| {
            for channel in [Channel::InfoRequest, Channel::Explore, Channel::Knowledge] {
                link.subscribe(&self.topic(channel))?;
            }
            link.subscribe(&topic(self.app(), Channel::Knowledge, None))?;
            Ok(link)
        });
        match attempt {
            Ok(link) => {
                info!("{}: client {} connected", self.app(), self.shared.client_id);
                self.link = Some(link);
                self.backoff = self.opts.retry.0;
                {
                    let mut st = self.shared.state.lock();
                    if st.phase == ClientPhase::Connecting {
                        st.phase = if st.queue.is_empty() {
                            ClientPhase::Idle
                        } else {
                            ClientPhase::Exploring
                        };
                    }
                }
                self.greet(Greeting::Hello);
                self.flush();
            }
            Err(e) => {
                debug!("{}: broker unreachable: {e}", self.app());
                self.next_attempt = Instant::now() + self.backoff;
                self.backoff = (self.backoff * 2).min(self.opts.retry.1);
            }
        }
    }

    fn greet(&mut self, greeting: Greeting) {
        self.next_beat = Instant::now() + self.shared.heartbeat;
        let w = Welcome {
            incarnation: self.incarnation,
            greeting,
        };
        let msg = Message::new(self.topic(Channel::Welcome), w.encode());
        if let Some(l) = &self.link {
            if let Err(e) = l.publish(msg) {
                self.disconnect(&e.to_string());
            }
        }
    }

    fn on_message(&mut self, m: Message) {
        let Ok(t) = Topic::parse(&m.topic) else { return };
        let result = match t.channel {
            Channel::InfoRequest => self.on_info_request(),
            Channel::Explore => self.on_explore(&m.payload),
            Channel::Knowledge => self.on_knowledge(&m.payload),
            _ => Ok(()),
        };
        if let Err(e) = result {
            warn!("{}: bad {} message: {e}", self.app(), t.channel);
        }
    }

    fn on_info_request(&mut self) -> Result<(), String> {
        let body = encode_description(&self.shared.desc).map_err(|e| e.to_string())?;
        let msg = Message::new(self.topic(Channel::InfoReply), payload(Channel::InfoReply, &body));
        self.enqueue(msg);
        self.flush();
        Ok(())
    }

    fn on_explore(&mut self, text: &str) -> Result<(), String> {
        let body = payload_body(Channel::Explore, text).map_err(|e| e.to_string())?;
        let mut lines = body.lines();
        let ack: i64 = lines
            .next()
            .and_then(|l| l.strip_prefix("ack,"))
            .and_then(|v| v.trim().parse().ok())
            .ok_or("missing ack line")?;
        let mut list = VecDeque::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: DoeRow = decode_csv_row(line, &self.shared.layout).map_err(|e| e.to_string())?;
            for _ in 0..row.remaining_repetitions {
                list.push_back(row.config.clone());
            }
        }
        let horizon = now_ms() - (self.shared.heartbeat * 3).as_millis() as i64;
        let mut st = self.shared.state.lock();
        // Reports the server had not processed yet, and evaluations in the
        // application's hands, are still on the list.
        st.unacked.retain(|(ts, _)| *ts > ack && *ts > horizon);
        let pending: Vec<KnobConfig> = st
            .unacked
            .iter()
            .map(|(_, c)| c.clone())
            .chain(st.inflight.iter().cloned())
            .collect();
        for c in pending {
            if let Some(i) = list.iter().position(|x| *x == c) {
                list.remove(i);
            }
        }
        debug!("{}: {} evaluations assigned", self.shared.client_id, list.len());
        st.queue = list;
        if st.phase != ClientPhase::Serving {
            st.phase = if st.queue.is_empty() {
                ClientPhase::Idle
            } else {
                ClientPhase::Exploring
            };
        }
        self.shared.changed.notify_all();
        Ok(())
    }

    fn on_knowledge(&mut self, text: &str) -> Result<(), String> {
        let body = payload_body(Channel::Knowledge, text).map_err(|e| e.to_string())?;
        if let Some(reason) = body.strip_prefix("#error,") {
            warn!("{}: server gave up: {reason}", self.app());
            let mut st = self.shared.state.lock();
            st.error = Some(reason.to_string());
            st.queue.clear();
            self.shared.changed.notify_all();
            return Ok(());
        }
        let kb = decode_payload(text, &self.shared.layout).map_err(|e| e.to_string())?;
        let installed = Arc::new(Installed::new(kb, Arc::new(text.to_string())));
        *self.shared.knowledge.lock() = Some(installed);
        self.shared.window.lock().clear();
        let mut st = self.shared.state.lock();
        st.queue.clear();
        st.phase = ClientPhase::Serving;
        self.shared.changed.notify_all();
        info!("{}: knowledge installed on {}", self.app(), self.shared.client_id);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::KnobDomain;
    use crate::protocol::Broker;
    use proptest::prelude::*;

    fn op(config: &[f64], expected: &[f64], features: &[f64]) -> OperatingPoint {
        OperatingPoint {
            config: config.to_vec().into(),
            expected: expected.to_vec().into(),
            features: features.to_vec().into(),
        }
    }

    fn kb(ops: Vec<OperatingPoint>, centroids: Vec<Vec<f64>>) -> KnowledgeBase {
        KnowledgeBase {
            ops,
            centroids: centroids.into_iter().map(FeatureVector::new).collect(),
            model_tags: vec![],
        }
    }

    const TIME: usize = 0;
    const QUALITY: usize = 1;

    #[test]
    fn constrained_selection() {
        let k = kb(vec![op(&[1.0], &[4.0, 7.0], &[]), op(&[2.0], &[3.0, 9.0], &[]), op(&[3.0], &[8.0, 10.0], &[])], vec![vec![]]);
        let r = Requirements::new(QUALITY, Direction::Maximize).constrain(TIME, Comparator::LessEq, 5.0, 1);
        assert_eq!(select_op(&k, &r, &[], &[1.0, 1.0]).unwrap().config[0], 2.0);
    }

    #[test]
    fn infeasible_constraints_are_relaxed() {
        let k = kb(vec![op(&[1.0], &[6.0, 7.0], &[]), op(&[2.0], &[9.0, 9.0], &[])], vec![vec![]]);
        let r = Requirements::new(QUALITY, Direction::Maximize).constrain(TIME, Comparator::LessEq, 5.0, 1);
        assert_eq!(select_op(&k, &r, &[], &[1.0, 1.0]).unwrap().config[0], 2.0);
        // The less important constraint goes first.
        let r = Requirements::new(QUALITY, Direction::Maximize)
            .constrain(TIME, Comparator::LessEq, 7.0, 2)
            .constrain(QUALITY, Comparator::GreaterEq, 8.0, 1);
        assert_eq!(select_op(&k, &r, &[], &[1.0, 1.0]).unwrap().config[0], 1.0);
    }

    #[test]
    fn nearest_centroid_filters() {
        let k = kb(
            vec![op(&[1.0], &[1.0, 0.0], &[10.0]), op(&[2.0], &[5.0, 0.0], &[20.0])],
            vec![vec![10.0], vec![20.0]],
        );
        let r = Requirements::new(TIME, Direction::Maximize);
        assert_eq!(select_op(&k, &r, &[10.0], &[1.0, 1.0]).unwrap().config[0], 1.0);
        assert_eq!(select_op(&k, &r, &[19.0], &[1.0, 1.0]).unwrap().config[0], 2.0);
    }

    #[test]
    fn correction_tightens_feasibility() {
        let k = kb(vec![op(&[1.0], &[4.0, 9.0], &[]), op(&[2.0], &[2.0, 5.0], &[])], vec![vec![]]);
        let r = Requirements::new(QUALITY, Direction::Maximize).constrain(TIME, Comparator::LessEq, 5.0, 1);
        assert_eq!(select_op(&k, &r, &[], &[1.0, 1.0]).unwrap().config[0], 1.0);
        assert_eq!(select_op(&k, &r, &[], &[2.0, 1.0]).unwrap().config[0], 2.0);
    }

    #[test]
    fn ties_prefer_lower_configs() {
        let k = kb(vec![op(&[3.0], &[1.0, 0.0], &[]), op(&[-1.0], &[1.0, 0.0], &[])], vec![vec![]]);
        assert_eq!(select_op(&k, &Requirements::default(), &[], &[]).unwrap().config[0], -1.0);
    }

    #[test]
    fn monitor_window() {
        let mut w = MonitorWindow::new(2, 3);
        assert_eq!(w.correction_factor(), vec![1.0, 1.0]);
        w.push(&[2.0, 1.0], &[1.0, 1.0]);
        assert_eq!(w.correction_factor(), vec![2.0, 1.0]);
        for _ in 0..3 {
            w.push(&[3.0, 0.0], &[3.0, 0.0]);
        }
        assert_eq!(w.len(0), 3);
        assert_eq!(w.correction_factor(), vec![1.0, 1.0]);
    }

    #[test]
    fn requirement_validation() {
        assert!(Requirements::new(2, Direction::Minimize).validate(2).is_err());
        let dup = Requirements::default()
            .constrain(0, Comparator::LessEq, 1.0, 1)
            .constrain(1, Comparator::LessEq, 1.0, 1);
        assert_eq!(dup.validate(2), Err(ClientError::DuplicatePriority(1)));
    }

    fn toy() -> ApplicationDescription {
        ApplicationDescription::new(
            "toy",
            vec![KnobDomain::new("k", vec![3.0, 4.0]).unwrap()],
            vec!["t".into()],
            vec![],
        )
    }

    fn opts(id: &str) -> ClientOptions {
        ClientOptions {
            client_id: Some(id.into()),
            heartbeat: Duration::from_millis(20),
            retry: (Duration::from_millis(5), Duration::from_millis(20)),
            ..ClientOptions::default()
        }
    }

    #[test]
    fn default_config_without_server() {
        let broker = Broker::new();
        broker.set_available(false);
        let c = start(toy(), Arc::new(broker.clone()), opts("a")).unwrap();
        assert_eq!(c.get_config(&[]).0, vec![3.0]);
        assert_eq!(c.phase(), ClientPhase::Connecting);
        broker.set_available(true);
        assert!(c.wait_until(Duration::from_secs(2), |c| c.phase() == ClientPhase::Idle));
        c.stop();
    }

    #[test]
    fn explore_assignment_honours_repetitions() {
        let broker = Broker::new();
        let server = broker.connect().unwrap();
        server.subscribe("margot/toy/welcome/a").unwrap();
        let c = start(toy(), Arc::new(broker.clone()), opts("a")).unwrap();
        assert!(server.recv_timeout(Duration::from_secs(2)).is_some());
        server
            .publish(Message::new("margot/toy/explore/a", payload(Channel::Explore, "ack,-1\n4,2\n3,1\n")))
            .unwrap();
        assert!(c.wait_until(Duration::from_secs(2), |c| c.has_assignment()));
        let got: Vec<f64> = (0..4).map(|_| c.get_config(&[]).0[0]).collect();
        assert_eq!(got, vec![4.0, 4.0, 3.0, 3.0]);
        c.stop();
    }

    #[test]
    fn waiting_wakes_on_assignment() {
        let broker = Broker::new();
        let server = broker.connect().unwrap();
        server.subscribe("margot/toy/welcome/a").unwrap();
        let c = start(toy(), Arc::new(broker.clone()), opts("a")).unwrap();
        assert!(server.recv_timeout(Duration::from_secs(2)).is_some());
        assert_eq!(c.wait_assignment(Duration::from_millis(20)), None);
        let publisher = thread::spawn(move || {
            thread::sleep(Duration::from_millis(50));
            server
                .publish(Message::new("margot/toy/explore/a", payload(Channel::Explore, "ack,-1\n4,1\n")))
                .unwrap();
        });
        let started = Instant::now();
        assert_eq!(c.wait_assignment(Duration::from_secs(5)), Some(KnobConfig::new(vec![4.0])));
        assert!(started.elapsed() < Duration::from_secs(2));
        publisher.join().unwrap();
        c.stop();
    }

    #[test]
    fn buffered_reports_survive_an_outage() {
        let broker = Broker::new();
        let server = broker.connect().unwrap();
        server.subscribe("margot/toy/observation/a").unwrap();
        let c = start(toy(), Arc::new(broker.clone()), opts("a")).unwrap();
        assert!(c.wait_until(Duration::from_secs(2), |c| c.phase() == ClientPhase::Idle));
        broker.set_available(false);
        let k = KnobConfig::new(vec![3.0]);
        for i in 0..5 {
            c.report(&k, &[], &[i as f64]);
        }
        thread::sleep(Duration::from_millis(30));
        assert!(server.incoming().is_empty());
        broker.set_available(true);
        let got: Vec<String> = (0..5)
            .map(|_| server.recv_timeout(Duration::from_secs(2)).unwrap().payload)
            .collect();
        for (i, p) in got.iter().enumerate() {
            let row = payload_body(Channel::Observation, p).unwrap();
            assert!(row.starts_with(&format!("a,3,{i},")));
        }
        c.stop();
    }

    #[test]
    fn stop_says_bye() {
        let broker = Broker::new();
        let server = broker.connect().unwrap();
        server.subscribe("margot/toy/bye/+").unwrap();
        let c = start(toy(), Arc::new(broker.clone()), opts("a")).unwrap();
        assert!(c.wait_until(Duration::from_secs(2), |c| c.phase() == ClientPhase::Idle));
        c.stop();
        assert_eq!(server.recv_timeout(Duration::from_secs(1)).unwrap().topic, "margot/toy/bye/a");
    }

    proptest! {
        #[test]
        fn rank_rescaling_is_invariant(
            values in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30),
            scale in 0.01f64..100.0,
            maximize in any::<bool>(),
            threshold in 0.0f64..100.0,
        ) {
            let ops: Vec<OperatingPoint> = values
                .iter()
                .enumerate()
                .map(|(i, (t, q))| op(&[i as f64], &[*t, *q], &[]))
                .collect();
            let dir = if maximize { Direction::Maximize } else { Direction::Minimize };
            let r = Requirements::new(QUALITY, dir).constrain(TIME, Comparator::LessEq, threshold, 1);
            let a = kb(ops.clone(), vec![vec![]]);
            let b = kb(
                ops.into_iter().map(|mut o| { o.expected.0[QUALITY] *= scale; o }).collect(),
                vec![vec![]],
            );
            let pa = select_op(&a, &r, &[], &[1.0, 1.0]).unwrap().config.clone();
            let pb = select_op(&b, &r, &[], &[1.0, 1.0]).unwrap().config.clone();
            prop_assert_eq!(pa, pb);
        }
    }
}

//! Per-application state machine. Handlers are pure apart from storage
//! writes: they take the current time and return the messages to publish
//! and the learning jobs to start.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use log::{debug, error, info, warn};

use crate::doe::{generate_design, restricted_grid, DoeError, DEFAULT_GRID_CAP};
use crate::domain::{
    decode_csv_row, decode_description, encode_csv_row, validate_description,
    ApplicationDescription, ConfigKey, DoeRow, FeatureVector, KnobConfig, KnowledgeBase,
    ModelTag, Observation,
};
use crate::knowledge::encode_payload;
use crate::protocol::{payload, payload_body, topic, Channel, Greeting, Message, Topic, Welcome};

use super::dispatch::{compress, dispatch, expand, Assignments};
use super::learning::{LearningError, LearningJob, LearningResult};
use super::storage::{Persisted, Storage, StorageError};

/// Heartbeats a client may miss before it is considered dead.
pub const MISSED_BEATS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitingInfo,
    Exploring,
    Modeling,
    Serving,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::AwaitingInfo => "awaiting_info",
            Phase::Exploring => "exploring",
            Phase::Modeling => "modeling",
            Phase::Serving => "serving",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Action {
    Publish(Message),
    Learn(LearningJob),
}

/// One learning run as seen by the session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelingSpan {
    pub started: Duration,
    pub finished: Option<Duration>,
    /// Time spent inside the learning pipeline.
    pub compute: Option<Duration>,
}

/// Event times, measured from server start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    pub first_hello: Option<Duration>,
    pub modeling: Vec<ModelingSpan>,
    pub broadcast: Option<Duration>,
}

impl Timeline {
    /// First hello to knowledge broadcast.
    pub fn time_to_knowledge(&self) -> Option<Duration> {
        Some(self.broadcast?.saturating_sub(self.first_hello?))
    }
}

/// Read-only view of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStatus {
    pub app: String,
    pub phase: Phase,
    pub iteration: usize,
    pub doe: Vec<DoeRow>,
    /// Evaluations still to be observed.
    pub remaining: usize,
    pub observations: usize,
    /// Observations of configurations the client had not been assigned.
    pub free_run: usize,
    pub clients: Vec<String>,
    pub assigned: Assignments,
    pub aborted: Option<String>,
    pub timeline: Timeline,
    pub knowledge_payload: Option<Arc<String>>,
    pub report: Option<String>,
}

#[derive(Debug, Clone)]
struct ClientState {
    incarnation: u64,
    last_seen: Duration,
}

pub struct AppSession {
    app: String,
    desc: Option<ApplicationDescription>,
    phase: Phase,
    doe: Vec<DoeRow>,
    needed: HashMap<ConfigKey, u32>,
    observed: HashMap<ConfigKey, u32>,
    assigned: Assignments,
    clients: BTreeMap<String, ClientState>,
    /// Timestamp of the latest observation received from each client id.
    acks: HashMap<String, i64>,
    observations: Vec<Observation>,
    seen: HashSet<(String, ConfigKey, i64)>,
    free_run: usize,
    iteration: usize,
    knowledge: Option<KnowledgeBase>,
    knowledge_payload: Option<Arc<String>>,
    report: Option<String>,
    info_requested: Option<(String, Duration)>,
    aborted: Option<String>,
    timeline: Timeline,
    heartbeat: Duration,
    storage: Box<dyn Storage>,
}

fn publish(t: String, channel: Channel, body: &str) -> Action {
    Action::Publish(Message::new(t, payload(channel, body)))
}

impl AppSession {
    pub fn new(app: &str, storage: Box<dyn Storage>, heartbeat: Duration) -> Self {
        Self {
            app: app.into(),
            desc: None,
            phase: Phase::AwaitingInfo,
            doe: vec![],
            needed: HashMap::new(),
            observed: HashMap::new(),
            assigned: Assignments::new(),
            clients: BTreeMap::new(),
            acks: HashMap::new(),
            observations: vec![],
            seen: HashSet::new(),
            free_run: 0,
            iteration: 0,
            knowledge: None,
            knowledge_payload: None,
            report: None,
            info_requested: None,
            aborted: None,
            timeline: Timeline::default(),
            heartbeat,
            storage,
        }
    }

    /// Rebuilds a session from storage. The phase is inferred: stored
    /// knowledge means serving, a fully observed DoE means modeling (the
    /// returned actions restart learning), anything else exploring.
    pub fn recover(
        app: &str,
        storage: Box<dyn Storage>,
        heartbeat: Duration,
        now: Duration,
    ) -> Result<(Self, Vec<Action>), StorageError> {
        let persisted = storage.load(app)?;
        let mut s = Self::new(app, storage, heartbeat);
        let actions = s.replay(persisted, now);
        Ok((s, actions))
    }

    fn replay(&mut self, p: Persisted, now: Duration) -> Vec<Action> {
        if p.skipped > 0 {
            warn!("{}: skipped {} corrupted stored rows", self.app, p.skipped);
        }
        let Some(desc) = p.desc else {
            return vec![];
        };
        for row in p.doe {
            *self.needed.entry(row.config.key()).or_default() += row.remaining_repetitions;
            self.doe.push(row);
        }
        let n = desc.doe_params.n.max(1);
        self.iteration = self.doe.len().div_ceil(n);
        self.desc = Some(desc);
        for obs in p.observations {
            self.record(obs);
        }
        let desc = self.desc.clone().unwrap();
        if let Some(ops) = p.knowledge {
            let centroids = p.centroids.unwrap_or_else(|| {
                let mut seen: Vec<FeatureVector> = vec![];
                for op in &ops {
                    if !seen.contains(&op.features) {
                        seen.push(op.features.clone());
                    }
                }
                seen
            });
            let kb = KnowledgeBase {
                ops,
                centroids,
                model_tags: selected_tags(&desc, p.report.as_deref().unwrap_or("")),
            };
            self.knowledge_payload = Some(Arc::new(encode_payload(&desc, &kb)));
            self.knowledge = Some(kb);
            self.report = p.report;
            self.phase = Phase::Serving;
            info!("{}: recovered in serving", self.app);
            vec![]
        } else if self.doe.is_empty() {
            self.next_batch(now)
        } else if self.remaining() == 0 {
            self.report = p.report;
            info!("{}: recovered with a complete DoE; relearning", self.app);
            self.enter_modeling(now)
        } else {
            self.phase = Phase::Exploring;
            info!("{}: recovered exploring, {} evaluations pending", self.app, self.remaining());
            vec![]
        }
    }

    pub fn app(&self) -> &str {
        &self.app
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn description(&self) -> Option<&ApplicationDescription> {
        self.desc.as_ref()
    }

    pub fn knowledge(&self) -> Option<&KnowledgeBase> {
        self.knowledge.as_ref()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    fn remaining_of(&self, key: &ConfigKey) -> u32 {
        let need = self.needed.get(key).copied().unwrap_or(0);
        need.saturating_sub(self.observed.get(key).copied().unwrap_or(0))
    }

    pub fn remaining(&self) -> usize {
        self.doe.iter().map(|r| self.remaining_of(&r.config.key()) as usize).sum()
    }

    /// One entry per outstanding evaluation, in DoE order.
    pub fn tokens(&self) -> Vec<KnobConfig> {
        expand(self.doe.iter().map(|r| (r.config.clone(), self.remaining_of(&r.config.key()))))
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            app: self.app.clone(),
            phase: self.phase,
            iteration: self.iteration,
            doe: self.doe.clone(),
            remaining: self.remaining(),
            observations: self.observations.len(),
            free_run: self.free_run,
            clients: self.clients.keys().cloned().collect(),
            assigned: self.assigned.clone(),
            aborted: self.aborted.clone(),
            timeline: self.timeline.clone(),
            knowledge_payload: self.knowledge_payload.clone(),
            report: self.report.clone(),
        }
    }

    pub fn handle(&mut self, msg: &Message, now: Duration) -> Vec<Action> {
        let t = match Topic::parse(&msg.topic) {
            Ok(t) if t.app == self.app => t,
            _ => {
                debug!("{}: ignoring message on {}", self.app, msg.topic);
                return vec![];
            }
        };
        let Some(cid) = t.client_id.as_deref() else {
            return vec![];
        };
        match t.channel {
            Channel::Welcome => match Welcome::decode(&msg.payload) {
                Ok(w) => self.on_welcome(cid, w, now),
                Err(e) => {
                    warn!("{}: {e}", self.app);
                    vec![]
                }
            },
            Channel::InfoReply => self.on_info_reply(cid, &msg.payload, now),
            Channel::Observation => self.on_observation(cid, &msg.payload, now),
            Channel::Bye => self.on_bye(cid, now),
            _ => vec![],
        }
    }

    fn on_welcome(&mut self, cid: &str, w: Welcome, now: Duration) -> Vec<Action> {
        self.timeline.first_hello.get_or_insert(now);
        let fresh = match self.clients.get_mut(cid) {
            Some(c) if c.incarnation == w.incarnation => {
                c.last_seen = now;
                false
            }
            Some(c) => {
                info!("{}: client {cid} rejoined", self.app);
                c.incarnation = w.incarnation;
                c.last_seen = now;
                self.assigned.remove(cid);
                true
            }
            None => {
                debug!("{}: client {cid} joined", self.app);
                self.clients.insert(
                    cid.into(),
                    ClientState {
                        incarnation: w.incarnation,
                        last_seen: now,
                    },
                );
                true
            }
        };
        if w.greeting == Greeting::Heartbeat && !fresh {
            return vec![];
        }
        if let Some(reason) = &self.aborted {
            return vec![self.error_message(reason, Some(cid))];
        }
        match self.phase {
            Phase::AwaitingInfo => {
                let pending = self
                    .info_requested
                    .as_ref()
                    .is_some_and(|(c, _)| self.clients.contains_key(c));
                if pending {
                    vec![]
                } else {
                    self.request_info(cid, now)
                }
            }
            Phase::Exploring => self.redispatch(Some(cid)),
            Phase::Modeling => vec![self.explore_message(cid, &[])],
            Phase::Serving => {
                let p = self.knowledge_payload.as_ref().unwrap();
                vec![Action::Publish(Message::new(
                    topic(&self.app, Channel::Knowledge, Some(cid)),
                    p.as_str(),
                ))]
            }
        }
    }

    fn request_info(&mut self, cid: &str, now: Duration) -> Vec<Action> {
        info!("{}: asking {cid} for the application description", self.app);
        self.info_requested = Some((cid.into(), now));
        vec![publish(topic(&self.app, Channel::InfoRequest, Some(cid)), Channel::InfoRequest, "")]
    }

    fn error_message(&self, reason: &str, cid: Option<&str>) -> Action {
        publish(
            topic(&self.app, Channel::Knowledge, cid),
            Channel::Knowledge,
            &format!("#error,{}", reason.replace('\n', " ")),
        )
    }

    fn abort(&mut self, reason: String) -> Vec<Action> {
        error!("{}: session aborted: {reason}", self.app);
        let msg = self.error_message(&reason, None);
        self.aborted = Some(reason);
        self.assigned.clear();
        vec![msg]
    }

    fn on_info_reply(&mut self, cid: &str, text: &str, now: Duration) -> Vec<Action> {
        if self.phase != Phase::AwaitingInfo || self.aborted.is_some() {
            debug!("{}: ignoring info_reply from {cid}", self.app);
            return vec![];
        }
        let body = match payload_body(Channel::InfoReply, text) {
            Ok(b) => b,
            Err(e) => return self.abort(e.to_string()),
        };
        let desc = match decode_description(body) {
            Ok(d) => d,
            Err(e) => return self.abort(e.to_string()),
        };
        if desc.app_name != self.app {
            return self.abort(format!("description names application {:?}", desc.app_name));
        }
        if let Err(violations) = validate_description(&desc) {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return self.abort(text.join("; "));
        }
        if let Err(e) = self.storage.write_description(&desc) {
            error!("{}: {e}", self.app);
        }
        self.info_requested = None;
        // Observations that arrived before the description could be decoded
        // were dropped, so nothing is pending here.
        self.desc = Some(desc);
        self.next_batch(now)
    }

    fn explored(&self) -> HashSet<ConfigKey> {
        self.needed.keys().chain(self.observed.keys()).cloned().collect()
    }

    fn grid_exhausted(&self) -> bool {
        let explored = self.explored();
        match restricted_grid(self.desc.as_ref().unwrap(), DEFAULT_GRID_CAP) {
            Ok(grid) => grid.iter().all(|c| explored.contains(&c.key())),
            Err(_) => true,
        }
    }

    /// Generates and dispatches the next DoE batch.
    fn next_batch(&mut self, now: Duration) -> Vec<Action> {
        let desc = self.desc.clone().unwrap();
        let seed = desc.learn_params.rng_seed.wrapping_add(self.iteration as u64);
        let design = match generate_design(&desc, &self.explored(), seed) {
            Ok(d) => d,
            Err(DoeError::ExhaustedSpace) if !self.observations.is_empty() => {
                warn!("{}: design space exhausted; forcing selection", self.app);
                return self.enter_modeling(now);
            }
            Err(e) => return self.abort(e.to_string()),
        };
        self.iteration += 1;
        let rows: Vec<DoeRow> = design
            .points
            .into_iter()
            .map(|config| DoeRow {
                config,
                remaining_repetitions: design.repetitions,
            })
            .collect();
        if let Err(e) = self.storage.append_doe(&desc, &rows) {
            error!("{}: {e}", self.app);
        }
        for r in &rows {
            *self.needed.entry(r.config.key()).or_default() += r.remaining_repetitions;
        }
        info!(
            "{}: DoE batch {} with {} configurations",
            self.app,
            self.iteration,
            rows.len()
        );
        self.doe.extend(rows);
        self.phase = Phase::Exploring;
        if self.remaining() == 0 {
            return self.enter_modeling(now);
        }
        self.redispatch(None)
    }

    fn explore_message(&self, cid: &str, list: &[KnobConfig]) -> Action {
        let ack = self.acks.get(cid).copied().unwrap_or(-1);
        let mut body = format!("ack,{ack}\n");
        for (config, n) in compress(list) {
            body.push_str(&encode_csv_row(&DoeRow {
                config,
                remaining_repetitions: n,
            }));
            body.push('\n');
        }
        publish(topic(&self.app, Channel::Explore, Some(cid)), Channel::Explore, &body)
    }

    /// Re-deals the outstanding evaluations and sends new lists to the
    /// clients whose list changed (and to `greet`, unconditionally).
    fn redispatch(&mut self, greet: Option<&str>) -> Vec<Action> {
        let live: Vec<String> = self.clients.keys().cloned().collect();
        let next = dispatch(&self.tokens(), &self.assigned, &live);
        let mut actions = vec![];
        for (cid, list) in &next {
            let before = self.assigned.get(cid).map(Vec::as_slice).unwrap_or(&[]);
            if before != list.as_slice() || greet == Some(cid.as_str()) {
                actions.push(self.explore_message(cid, list));
            }
        }
        self.assigned = next;
        actions
    }

    /// Appends a new observation; false for a duplicate.
    fn record(&mut self, obs: Observation) -> bool {
        let key = obs.config.key();
        if !self.seen.insert((obs.client_id.clone(), key.clone(), obs.timestamp)) {
            return false;
        }
        *self.observed.entry(key).or_default() += 1;
        let ack = self.acks.entry(obs.client_id.clone()).or_insert(i64::MIN);
        *ack = (*ack).max(obs.timestamp);
        self.observations.push(obs);
        true
    }

    fn on_observation(&mut self, cid: &str, text: &str, now: Duration) -> Vec<Action> {
        let Some(desc) = self.desc.clone() else {
            warn!("{}: observation from {cid} before the description; dropped", self.app);
            return vec![];
        };
        let body = match payload_body(Channel::Observation, text) {
            Ok(b) => b,
            Err(e) => {
                warn!("{}: {e}", self.app);
                return vec![];
            }
        };
        if let Some(c) = self.clients.get_mut(cid) {
            c.last_seen = now;
        }
        let layout = desc.layout();
        let mut actions = vec![];
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            let obs: Observation = match decode_csv_row(line, &layout) {
                Ok(o) => o,
                Err(e) => {
                    warn!("{}: malformed observation from {cid}: {e}", self.app);
                    continue;
                }
            };
            if !desc.config_is_valid(&obs.config) {
                warn!("{}: observation of a configuration outside the domain from {cid}", self.app);
                continue;
            }
            if self.seen.contains(&(obs.client_id.clone(), obs.config.key(), obs.timestamp)) {
                debug!("{}: duplicate observation from {cid}", self.app);
                continue;
            }
            if let Err(e) = self.storage.append_observation(&desc, &obs) {
                error!("{}: observation not stored: {e}", self.app);
                continue;
            }
            let key = obs.config.key();
            let client = obs.client_id.clone();
            let config = obs.config.clone();
            let was_needed = self.remaining_of(&key) > 0;
            self.record(obs);
            if self.phase != Phase::Exploring {
                continue;
            }
            let list = self.assigned.entry(client.clone()).or_default();
            let held = match list.iter().position(|c| *c == config) {
                Some(i) => {
                    list.remove(i);
                    true
                }
                None => false,
            };
            let drained = list.is_empty();
            if !held {
                self.free_run += 1;
                info!("{}: observation of an unassigned configuration from {client}", self.app);
            }
            if self.remaining() == 0 {
                actions.extend(self.enter_modeling(now));
            } else if !held || !was_needed || drained {
                actions.extend(self.redispatch(None));
            }
        }
        actions
    }

    fn enter_modeling(&mut self, now: Duration) -> Vec<Action> {
        let desc = self.desc.clone().unwrap();
        let force = self.grid_exhausted();
        self.phase = Phase::Modeling;
        self.assigned.clear();
        self.timeline.modeling.push(ModelingSpan {
            started: now,
            finished: None,
            compute: None,
        });
        info!(
            "{}: modeling after iteration {} with {} observations",
            self.app,
            self.iteration,
            self.observations.len()
        );
        vec![Action::Learn(LearningJob {
            desc,
            observations: self.observations.clone(),
            iteration: self.iteration,
            force,
        })]
    }

    fn on_bye(&mut self, cid: &str, _now: Duration) -> Vec<Action> {
        if self.clients.remove(cid).is_none() {
            return vec![];
        }
        debug!("{}: client {cid} left", self.app);
        self.assigned.remove(cid);
        self.after_departure()
    }

    fn after_departure(&mut self) -> Vec<Action> {
        match self.phase {
            Phase::Exploring if self.aborted.is_none() => self.redispatch(None),
            _ => vec![],
        }
    }

    /// Expires silent clients and retries an unanswered info request.
    pub fn tick(&mut self, now: Duration) -> Vec<Action> {
        let limit = self.heartbeat * MISSED_BEATS;
        let dead: Vec<String> = self
            .clients
            .iter()
            .filter(|(_, c)| now.saturating_sub(c.last_seen) > limit)
            .map(|(id, _)| id.clone())
            .collect();
        let mut actions = vec![];
        if !dead.is_empty() {
            for id in &dead {
                info!("{}: client {id} missed {MISSED_BEATS} heartbeats", self.app);
                self.clients.remove(id);
                self.assigned.remove(id);
            }
            actions.extend(self.after_departure());
        }
        if self.phase == Phase::AwaitingInfo && self.aborted.is_none() {
            let stale = match &self.info_requested {
                None => true,
                Some((c, at)) => !self.clients.contains_key(c) || now.saturating_sub(*at) > limit,
            };
            if stale {
                if let Some(cid) = self.clients.keys().next().cloned() {
                    actions.extend(self.request_info(&cid, now));
                }
            }
        }
        actions
    }

    pub fn on_learning(
        &mut self,
        result: Result<LearningResult, LearningError>,
        now: Duration,
    ) -> Vec<Action> {
        if self.phase != Phase::Modeling {
            return vec![];
        }
        if let Some(span) = self.timeline.modeling.last_mut() {
            span.finished = Some(now);
            span.compute = result.as_ref().ok().map(|r| r.duration);
        }
        let desc = self.desc.clone().unwrap();
        let r = match result {
            Ok(r) => r,
            Err(e) => {
                warn!("{}: learning failed: {e}", self.app);
                if self.grid_exhausted() {
                    return self.abort(format!("learning failed on the whole design space: {e}"));
                }
                return self.next_batch(now);
            }
        };
        let report = r.report_csv();
        if let Err(e) = self.storage.write_report(&desc, &report) {
            error!("{}: {e}", self.app);
        }
        self.report = Some(report);
        if let Err(e) = self.storage.write_clusters(&desc, &r.centroids) {
            error!("{}: {e}", self.app);
        }
        match r.knowledge {
            Some(kb) => {
                if let Err(e) = self.storage.write_knowledge(&desc, &kb) {
                    error!("{}: {e}", self.app);
                }
                let text = Arc::new(encode_payload(&desc, &kb));
                self.knowledge = Some(kb);
                self.knowledge_payload = Some(text.clone());
                self.phase = Phase::Serving;
                self.timeline.broadcast = Some(now);
                info!("{}: broadcasting knowledge", self.app);
                vec![Action::Publish(Message::new(
                    topic(&self.app, Channel::Knowledge, None),
                    text.as_str(),
                ))]
            }
            None if self.grid_exhausted() => {
                self.abort("no model could be fitted on the whole design space".into())
            }
            None => {
                info!("{}: no eligible model after iteration {}", self.app, self.iteration);
                self.next_batch(now)
            }
        }
    }
}

/// Model tags of the `selected` rows of a stored report.
fn selected_tags(desc: &ApplicationDescription, report: &str) -> Vec<ModelTag> {
    let mut tags: Vec<ModelTag> = report
        .lines()
        .skip(1)
        .filter_map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() < 6 || !c[5].starts_with("selected") {
                return None;
            }
            Some(ModelTag {
                efp: c[0].into(),
                family: c[1].into(),
                signed_r2: c[3].parse().ok()?,
                mae_adj: c[4].parse().ok()?,
            })
        })
        .collect();
    tags.sort_by_key(|t| desc.efp_index(&t.efp));
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::KnobDomain;
    use crate::server::learning::run_learning;
    use crate::server::storage::MemoryStorage;
    use crate::domain::{encode_description, FeatureVector};

    const T: Duration = Duration::from_secs(5);

    fn binh() -> ApplicationDescription {
        let mut d = ApplicationDescription::new(
            "binh",
            vec![
                KnobDomain::range("x", -7.0, 4.0, 1.0).unwrap(),
                KnobDomain::range("y", -7.0, 4.0, 1.0).unwrap(),
            ],
            vec!["b2".into()],
            vec![],
        );
        d.doe_params.n = 20;
        d
    }

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    fn hello(s: &mut AppSession, cid: &str, inc: u64, now: Duration) -> Vec<Action> {
        let w = Welcome { incarnation: inc, greeting: Greeting::Hello };
        s.handle(&Message::new(topic("binh", Channel::Welcome, Some(cid)), w.encode()), now)
    }

    fn info(s: &mut AppSession, desc: &ApplicationDescription) -> Vec<Action> {
        let body = encode_description(desc).unwrap();
        s.handle(
            &Message::new(topic("binh", Channel::InfoReply, Some("c0")), payload(Channel::InfoReply, &body)),
            ms(1),
        )
    }

    fn observe(s: &mut AppSession, cid: &str, config: &KnobConfig, ts: i64) -> Vec<Action> {
        let obs = Observation {
            client_id: cid.into(),
            config: config.clone(),
            features: FeatureVector::default(),
            metrics: vec![-0.5 * config[0] - config[1] - 1.0].into(),
            timestamp: ts,
        };
        s.handle(
            &Message::new(
                topic("binh", Channel::Observation, Some(cid)),
                payload(Channel::Observation, &encode_csv_row(&obs)),
            ),
            ms(ts as u64),
        )
    }

    fn topics(actions: &[Action]) -> Vec<String> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Publish(m) => Some(m.topic.clone()),
                _ => None,
            })
            .collect()
    }

    fn exploring(clients: &[&str]) -> (AppSession, MemoryStorage) {
        let store = MemoryStorage::new();
        let mut s = AppSession::new("binh", Box::new(store.clone()), T);
        for c in clients {
            hello(&mut s, c, 1, ms(0));
        }
        info(&mut s, &binh());
        (s, store)
    }

    /// Feeds every assigned evaluation back until the session leaves
    /// exploring, returning the learning job.
    fn drain(s: &mut AppSession, mut ts: i64) -> LearningJob {
        loop {
            let assigned = s.status().assigned;
            let Some((cid, list)) = assigned.iter().find(|(_, l)| !l.is_empty()) else {
                panic!("nothing assigned while {} remain", s.remaining());
            };
            ts += 1;
            let actions = observe(s, cid, &list[0].clone(), ts);
            if let Some(Action::Learn(job)) = actions.into_iter().find(|a| matches!(a, Action::Learn(_))) {
                return job;
            }
        }
    }

    #[test]
    fn first_client_is_asked_for_info() {
        let mut s = AppSession::new("binh", Box::new(MemoryStorage::new()), T);
        assert_eq!(topics(&hello(&mut s, "c0", 1, ms(0))), vec!["margot/binh/info_request/c0"]);
        assert!(hello(&mut s, "c1", 1, ms(0)).is_empty());
        assert_eq!(s.phase(), Phase::AwaitingInfo);
    }

    #[test]
    fn info_reply_starts_exploration() {
        let (mut s, store) = exploring(&["c0", "c1"]);
        assert_eq!(s.phase(), Phase::Exploring);
        assert_eq!(s.status().doe.len(), 20);
        assert_eq!(store.file("binh", "doe.csv").unwrap().lines().count(), 21);
        let loads: Vec<usize> = s.status().assigned.values().map(Vec::len).collect();
        assert_eq!(loads, vec![10, 10]);
        assert!(info(&mut s, &binh()).is_empty());
    }

    #[test]
    fn invalid_description_aborts() {
        let mut s = AppSession::new("binh", Box::new(MemoryStorage::new()), T);
        hello(&mut s, "c0", 1, ms(0));
        let mut d = binh();
        d.doe_params.n = 0;
        let actions = info(&mut s, &d);
        assert_eq!(topics(&actions), vec!["margot/binh/knowledge"]);
        assert!(s.status().aborted.is_some());
    }

    #[test]
    fn duplicates_do_not_double_count() {
        let (mut s, _) = exploring(&["c0"]);
        let c = s.status().assigned["c0"][0].clone();
        observe(&mut s, "c0", &c, 10);
        let r = s.remaining();
        observe(&mut s, "c0", &c, 10);
        assert_eq!(s.remaining(), r);
        assert_eq!(s.status().observations, 1);
    }

    #[test]
    fn full_cycle_to_serving_and_late_client() {
        let (mut s, store) = exploring(&["c0", "c1", "c2"]);
        let job = drain(&mut s, 0);
        assert_eq!(s.phase(), Phase::Modeling);
        let actions = s.on_learning(run_learning(&job), ms(500));
        assert_eq!(topics(&actions), vec!["margot/binh/knowledge"]);
        assert_eq!(s.phase(), Phase::Serving);
        assert!(store.file("binh", "knowledge.csv").is_some());
        let late = hello(&mut s, "c9", 1, ms(600));
        assert_eq!(topics(&late), vec!["margot/binh/knowledge/c9"]);
        let extra = observe(&mut s, "c9", &KnobConfig::new(vec![0.0, 0.0]), 700);
        assert!(extra.is_empty());
        assert_eq!(s.phase(), Phase::Serving);
    }

    #[test]
    fn rejoin_reclaims_and_reissues() {
        let (mut s, _) = exploring(&["c0", "c1"]);
        let before = s.status().assigned["c1"].clone();
        observe(&mut s, "c1", &before[0], 5);
        let actions = hello(&mut s, "c1", 2, ms(10));
        assert!(topics(&actions).contains(&"margot/binh/explore/c1".to_string()));
        let after = s.status().assigned;
        assert_eq!(after.values().map(Vec::len).sum::<usize>(), 19);
        assert!(after["c1"].len() >= 9);
    }

    #[test]
    fn silent_clients_are_reclaimed() {
        let (mut s, _) = exploring(&["c0", "c1"]);
        let hb = Welcome { incarnation: 1, greeting: Greeting::Heartbeat };
        for i in 1..=4u64 {
            s.handle(&Message::new(topic("binh", Channel::Welcome, Some("c0")), hb.encode()), T * i as u32);
        }
        s.tick(T * 4 - ms(1));
        s.tick(T * 4);
        let st = s.status();
        assert_eq!(st.clients, vec!["c0".to_string()]);
        assert_eq!(st.assigned["c0"].len(), 20);
    }

    #[test]
    fn empty_model_restarts_exploration() {
        let (mut s, _) = exploring(&["c0"]);
        let job = drain(&mut s, 0);
        let mut r = run_learning(&job).unwrap();
        r.knowledge = None;
        s.on_learning(Ok(r), ms(1000));
        assert_eq!(s.phase(), Phase::Exploring);
        assert_eq!(s.status().iteration, 2);
        assert_eq!(s.status().doe.len(), 40);
        let keys: HashSet<ConfigKey> = s.status().doe.iter().map(|r| r.config.key()).collect();
        assert_eq!(keys.len(), 40);
    }

    #[test]
    fn recovery_replays_the_log() {
        let (mut s, store) = exploring(&["c0"]);
        let list = s.status().assigned["c0"].clone();
        for (i, c) in list.iter().take(15).enumerate() {
            observe(&mut s, "c0", c, i as i64 + 1);
        }
        let (a, _) = AppSession::recover("binh", Box::new(store.clone()), T, ms(0)).unwrap();
        let (b, _) = AppSession::recover("binh", Box::new(store.clone()), T, ms(0)).unwrap();
        assert_eq!(a.remaining(), 5);
        assert_eq!(a.phase(), Phase::Exploring);
        assert_eq!(a.status(), b.status());
        assert_eq!(a.tokens(), s.tokens());
    }

    #[test]
    fn recovery_after_broadcast_serves() {
        let (mut s, store) = exploring(&["c0"]);
        let job = drain(&mut s, 0);
        s.on_learning(run_learning(&job), ms(10));
        let (r, actions) = AppSession::recover("binh", Box::new(store), T, ms(0)).unwrap();
        assert!(actions.is_empty());
        assert_eq!(r.phase(), Phase::Serving);
        assert_eq!(r.knowledge().unwrap().model_tags, s.knowledge().unwrap().model_tags);
        assert_eq!(r.status().knowledge_payload, s.status().knowledge_payload);
    }

    #[test]
    fn empty_storage_awaits_info() {
        let (r, actions) = AppSession::recover("binh", Box::new(MemoryStorage::new()), T, ms(0)).unwrap();
        assert!(actions.is_empty());
        assert_eq!(r.phase(), Phase::AwaitingInfo);
    }
}

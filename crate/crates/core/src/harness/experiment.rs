//! Experiment specs and the runner that turns one into CSV files.
//!
//! A spec is TOML:
//!
//! ```toml
//! app = "binh"             # binh | kursawe | docklike
//! kind = "accuracy"        # accuracy | scalability | clustering | prediction
//! efps = ["b1"]            # subset of EFPs; all when omitted
//! budgets = [10, 20, 30]   # configurations per DoE round
//! repeats = 20
//! clients = [4]
//! clusters = [1]
//! repetitions = 1
//! rounds = 1               # force selection after this round; 0 = no cap
//! transport = "cluster"    # cluster | offline
//! virtual_cost_ms = 0
//! heartbeat_ms = 50
//! library = 1000           # ligands for clustering and prediction
//! timeout_s = 300
//!
//! [docklike]
//! c = [1.0, 0.5, 0.75]
//! d = [0.1, 0.01, 0.04]
//! q = 10.0
//! sigma = 0.2
//! ```
//!
//! Every combination of budget, client count and cluster count is run
//! `repeats` times; repeat `r` uses seed `seed + r`. Rows of every output
//! start with the run key `budget,clients,clusters,repeat,seed`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use crate::client::{Direction, Requirements};
use crate::domain::{Comparator, FeatureVector, KnowledgeBase};
use crate::domain::{format_real, ApplicationDescription};
use crate::knowledge::{decode_payload, knowledge_csv, knowledge_error};

use super::analysis::{cluster_swing, prediction_error, PredictionError};
use super::{learn_offline, run_cluster, Docklike, DocklikeParams, HarnessError, SimConfig, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Knowledge error against the truth per sample budget.
    Accuracy,
    /// Time to knowledge per client count.
    Scalability,
    /// Per-cluster execution-time swing per cluster count.
    Clustering,
    /// Predicted against measured time to solution of a ligand library.
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    /// Broker, server and simulated clients in process.
    Cluster,
    /// The same learning loop called directly.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub app: String,
    pub kind: ExperimentKind,
    pub efps: Vec<String>,
    pub budgets: Vec<usize>,
    pub repeats: usize,
    pub clients: Vec<usize>,
    pub clusters: Vec<usize>,
    pub repetitions: u32,
    pub rounds: usize,
    pub transport: Transport,
    pub virtual_cost_ms: u64,
    pub heartbeat_ms: u64,
    pub library: usize,
    /// Time constraint for prediction runs; the median expected time of the
    /// knowledge when absent.
    pub time_limit: Option<f64>,
    pub timeout_s: u64,
    pub seed: u64,
    pub docklike: DocklikeParams,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            app: "binh".into(),
            kind: ExperimentKind::Accuracy,
            efps: vec![],
            budgets: vec![40],
            repeats: 1,
            clients: vec![4],
            clusters: vec![1],
            repetitions: 1,
            rounds: 1,
            transport: Transport::Cluster,
            virtual_cost_ms: 0,
            heartbeat_ms: 50,
            library: 1000,
            time_limit: None,
            timeout_s: 300,
            seed: 0,
            docklike: DocklikeParams::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Spec(m.into()));
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return fail("budgets must be non-empty and positive");
        }
        if self.clients.is_empty() || self.clients.contains(&0) {
            return fail("clients must be non-empty and positive");
        }
        if self.clusters.is_empty() || self.clusters.contains(&0) {
            return fail("clusters must be non-empty and positive");
        }
        if self.repeats == 0 || self.repetitions == 0 {
            return fail("repeats and repetitions must be positive");
        }
        if matches!(self.kind, ExperimentKind::Clustering | ExperimentKind::Prediction) {
            if self.app != "docklike" {
                return fail("clustering and prediction experiments need the docklike app");
            }
            if self.library == 0 {
                return fail("library must be positive");
            }
        }
        if !(self.docklike.sigma >= 0.0 && self.docklike.sigma.is_finite()) {
            return fail("sigma must be finite and non-negative");
        }
        self.workload(1).map(|_| ())
    }

    fn workload(&self, clusters: usize) -> Result<Workload, HarnessError> {
        Workload::named(&self.app, &self.efps, self.docklike, clusters)
    }
}

/// Everything measured in one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub budget: usize,
    pub clients: usize,
    pub clusters: usize,
    pub repeat: usize,
    pub seed: u64,
    pub rounds: usize,
    /// `(efp, mae_adj, signed_r2)` of the knowledge against the truth.
    pub errors: Vec<(String, f64, f64)>,
    /// EFPs whose model was chosen without meeting the eligibility rule.
    pub forced: Vec<String>,
    pub time_to_knowledge: Option<Duration>,
    pub modeling: Duration,
    pub wall: Duration,
    pub evaluations: u64,
    pub swing: Option<f64>,
    pub prediction: Option<PredictionError>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentSummary {
    pub runs: Vec<RunRecord>,
}

struct Outputs {
    report: BufWriter<File>,
    knowledge: BufWriter<File>,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    extra: Option<BufWriter<File>>,
}

const KEY: &str = "budget,clients,clusters,repeat,seed";

fn create(dir: &Path, name: &str, header: &str) -> Result<BufWriter<File>, HarnessError> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "{header}")?;
    Ok(w)
}

impl Outputs {
    fn open(dir: &Path, spec: &ExperimentSpec, desc: &ApplicationDescription) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir)?;
        let kb_header = crate::domain::knowledge_header(desc);
        let extra = match spec.kind {
            ExperimentKind::Clustering => Some(create(dir, "cluster_swing.csv", &format!("{KEY},swing"))?),
            ExperimentKind::Prediction => {
                Some(create(dir, "prediction.csv", &format!("{KEY},predicted,actual,relative_error"))?)
            }
            _ => None,
        };
        Ok(Self {
            report: create(dir, "report.csv", &format!("{KEY},{}", crate::evaluate::REPORT_HEADER))?,
            knowledge: create(dir, "knowledge.csv", &format!("{KEY},{kb_header}"))?,
            metrics: create(dir, "metrics_vs_samples.csv", &format!("{KEY},samples,efp,mae_adj,signed_r2,forced"))?,
            timing: create(
                dir,
                "timing.csv",
                &format!("{KEY},rounds,evaluations,time_to_knowledge_s,modeling_s,wall_s"),
            )?,
            extra,
        })
    }

    fn flush(&mut self) -> Result<(), HarnessError> {
        for w in [&mut self.report, &mut self.knowledge, &mut self.metrics, &mut self.timing] {
            w.flush()?;
        }
        if let Some(w) = &mut self.extra {
            w.flush()?;
        }
        Ok(())
    }
}

fn secs(d: Option<Duration>) -> String {
    d.map_or_else(String::new, |d| format_real(d.as_secs_f64()))
}

struct Learned {
    kb: Option<KnowledgeBase>,
    report: String,
    rounds: usize,
    time_to_knowledge: Option<Duration>,
    modeling: Duration,
    wall: Duration,
    evaluations: u64,
    samples: usize,
}

fn learn(
    spec: &ExperimentSpec,
    desc: &ApplicationDescription,
    workload: &Workload,
    clients: usize,
    seed: u64,
) -> Result<Learned, HarnessError> {
    let evaluator = workload.evaluator(seed);
    match spec.transport {
        Transport::Offline => {
            let started = std::time::Instant::now();
            let run = learn_offline(desc, &evaluator)?;
            Ok(Learned {
                report: run.result.report_csv(),
                kb: run.result.knowledge,
                rounds: run.rounds,
                time_to_knowledge: None,
                modeling: run.modeling,
                wall: started.elapsed(),
                evaluations: evaluator.count(),
                samples: run.observations.len(),
            })
        }
        Transport::Cluster => {
            let cfg = SimConfig {
                clients,
                virtual_cost: Duration::from_millis(spec.virtual_cost_ms),
                heartbeat: Duration::from_millis(spec.heartbeat_ms.max(1)),
                timeout: Duration::from_secs(spec.timeout_s),
                ..SimConfig::default()
            };
            let run = run_cluster(desc, &evaluator, &cfg)?;
            if !run.finished() {
                let why = run.status.aborted.clone().unwrap_or_else(|| format!("stuck in {}", run.status.phase));
                return Err(HarnessError::Run(format!("{}: {why}", desc.app_name)));
            }
            let kb = match &run.status.knowledge_payload {
                Some(p) => Some(decode_payload(p, &desc.layout()).map_err(|e| HarnessError::Run(e.to_string()))?),
                None => None,
            };
            Ok(Learned {
                kb,
                report: run.status.report.clone().unwrap_or_default(),
                rounds: run.status.iteration,
                time_to_knowledge: run.time_to_knowledge,
                modeling: run.modeling,
                wall: run.wall,
                evaluations: run.evaluations,
                samples: run.status.observations,
            })
        }
    }
}

/// Library of ligand features and their measured time at every
/// configuration, drawn independently of the training stream.
fn ligand_library(params: DocklikeParams, size: usize, seed: u64) -> (Docklike, Vec<FeatureVector>) {
    let mut w = Docklike::new(params, seed ^ 0x11b_4a4e);
    let lib = (0..size).map(|_| FeatureVector::new(w.next_ligand().features().to_vec())).collect();
    (w, lib)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every combination of the spec and writes the CSV files into `out`.
/// Files are flushed after each run, so a failure leaves the rows of the
/// runs before it.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentSummary, HarnessError> {
    spec.validate()?;
    let first = spec.workload(spec.clusters[0])?;
    let mut files = Outputs::open(out, spec, &first.description())?;
    let mut summary = ExperimentSummary::default();
    for &budget in &spec.budgets {
        for &clients in &spec.clients {
            for &clusters in &spec.clusters {
                let workload = spec.workload(clusters)?;
                for repeat in 0..spec.repeats {
                    let seed = spec.seed.wrapping_add(repeat as u64);
                    let rounds = (spec.rounds > 0).then_some(spec.rounds);
                    let desc = workload.configured(budget, spec.repetitions, seed, rounds);
                    let key = format!("{budget},{clients},{clusters},{repeat},{seed}");
                    let result = learn(spec, &desc, &workload, clients, seed);
                    let learned = match result {
                        Ok(l) => l,
                        Err(e) => {
                            files.flush()?;
                            return Err(HarnessError::Run(format!("run {key}: {e}")));
                        }
                    };
                    let record = record_run(spec, &desc, &workload, &learned, &key, &mut files)?;
                    summary.runs.push(RunRecord {
                        budget,
                        clients,
                        clusters,
                        repeat,
                        seed,
                        ..record
                    });
                    files.flush()?;
                }
            }
        }
    }
    Ok(summary)
}

fn record_run(
    spec: &ExperimentSpec,
    desc: &ApplicationDescription,
    workload: &Workload,
    l: &Learned,
    key: &str,
    files: &mut Outputs,
) -> Result<RunRecord, HarnessError> {
    let mut forced = vec![];
    for line in l.report.lines().skip(1) {
        writeln!(files.report, "{key},{line}")?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.last() == Some(&"selected_forced") {
            forced.push(cols[0].to_string());
        }
    }
    let kb = l.kb.as_ref().ok_or_else(|| HarnessError::Run(format!("run {key}: no knowledge")))?;
    for line in knowledge_csv(desc, kb).lines().skip(1) {
        writeln!(files.knowledge, "{key},{line}")?;
    }
    let errors: Vec<(String, f64, f64)> = desc
        .efps
        .iter()
        .zip(knowledge_error(kb, |c, f| workload.truth(c, f)))
        .map(|(e, (m, r))| (e.clone(), m, r))
        .collect();
    for (e, m, r) in &errors {
        let f = forced.contains(e);
        writeln!(files.metrics, "{key},{},{e},{},{},{f}", l.samples, format_real(*m), format_real(*r))?;
    }
    writeln!(
        files.timing,
        "{key},{},{},{},{},{}",
        l.rounds,
        l.evaluations,
        secs(l.time_to_knowledge),
        secs(Some(l.modeling)),
        secs(Some(l.wall))
    )?;
    let seed = key.rsplit(',').next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (mut swing, mut prediction) = (None, None);
    match spec.kind {
        ExperimentKind::Clustering => {
            let (mut w, lib) = ligand_library(spec.docklike, spec.library, seed);
            // Any fixed configuration will do: time is base(config) × f.
            let config = [1.0, 1.0];
            let times: Vec<f64> = lib
                .iter()
                .map(|f| {
                    let ligand = super::Ligand {
                        atoms: f[0] as u32,
                        rotamers: f[1] as u32,
                    };
                    w.measure(&config, &ligand)[0]
                })
                .collect();
            let s = cluster_swing(&lib, &times, &kb.centroids);
            if let Some(x) = &mut files.extra {
                writeln!(x, "{key},{}", format_real(s))?;
            }
            swing = Some(s);
        }
        ExperimentKind::Prediction => {
            let (mut w, lib) = ligand_library(spec.docklike, spec.library, seed);
            let limit = spec
                .time_limit
                .unwrap_or_else(|| median(kb.ops.iter().map(|op| op.expected[0]).collect()));
            let reqs = Requirements::new(1, Direction::Maximize).constrain(0, Comparator::LessEq, limit, 1);
            let lib: Vec<Vec<f64>> = lib.iter().map(|f| f.to_vec()).collect();
            let p = prediction_error(kb, &reqs, 0, &lib, |config, f| {
                let ligand = super::Ligand {
                    atoms: f[0] as u32,
                    rotamers: f[1] as u32,
                };
                w.measure(config, &ligand)[0]
            })
            .ok_or_else(|| HarnessError::Run(format!("run {key}: no operating point")))?;
            if let Some(x) = &mut files.extra {
                writeln!(
                    x,
                    "{key},{},{},{}",
                    format_real(p.predicted),
                    format_real(p.actual),
                    format_real(p.relative())
                )?;
            }
            prediction = Some(p);
        }
        _ => {}
    }
    Ok(RunRecord {
        budget: 0,
        clients: 0,
        clusters: 0,
        repeat: 0,
        seed,
        rounds: l.rounds,
        errors,
        forced,
        time_to_knowledge: l.time_to_knowledge,
        modeling: l.modeling,
        wall: l.wall,
        evaluations: l.evaluations,
        swing,
        prediction,
    })
}

//! Synthetic applications, a simulated cluster and an experiment runner.
//!
//! A [`Workload`] bundles an application description with a way to measure
//! a configuration. Measurements are a pure function of the run seed, the
//! configuration and how many times that configuration was measured
//! before, so a run produces the same observations whichever simulated
//! client happens to evaluate what.

mod analysis;
mod docklike;
mod experiment;
mod functions;
mod offline;
mod sim;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::domain::{ApplicationDescription, ConfigKey, KnobConfig};

pub use analysis::{cluster_swing, prediction_error, spearman, PredictionError};
pub use docklike::{docklike_description, Docklike, DocklikeParams, Ligand, ATOMS, ROTAMERS};
pub use experiment::{run_experiment, ExperimentKind, ExperimentSpec, ExperimentSummary, RunRecord, Transport};
pub use functions::{binh, binh_description, kursawe, kursawe_description, Synthetic};
pub use offline::{learn_offline, OfflineRun};
pub use sim::{run_cluster, ClientOutcome, ClusterRun, SimConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
    #[error("wrong number of knob values: {0}")]
    Arity(usize),
    #[error("unknown application {0:?}")]
    UnknownApp(String),
    #[error("unknown EFP {0:?}")]
    UnknownEfp(String),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Doe(#[from] crate::doe::DoeError),
    #[error(transparent)]
    Learning(#[from] crate::server::LearningError),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Client(#[from] crate::client::ClientError),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An application the harness can measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// A closed-form function restricted to some of its EFPs, by index.
    Synthetic { app: Synthetic, efps: Vec<usize> },
    Docklike { params: DocklikeParams, clusters: usize },
}

impl Workload {
    /// `app` is `binh`, `kursawe` or `docklike`; `efps` keeps only the named
    /// EFPs (all when empty).
    pub fn named(app: &str, efps: &[String], params: DocklikeParams, clusters: usize) -> Result<Self, HarnessError> {
        let synthetic = match app {
            "binh" => Synthetic::Binh,
            "kursawe" => Synthetic::Kursawe,
            "docklike" => return Ok(Workload::Docklike { params, clusters }),
            _ => return Err(HarnessError::UnknownApp(app.into())),
        };
        let all = synthetic.description().efps;
        let efps = if efps.is_empty() {
            (0..all.len()).collect()
        } else {
            efps.iter()
                .map(|e| all.iter().position(|a| a == e).ok_or_else(|| HarnessError::UnknownEfp(e.clone())))
                .collect::<Result<_, _>>()?
        };
        Ok(Workload::Synthetic { app: synthetic, efps })
    }

    pub fn synthetic(app: Synthetic, efps: &[&str]) -> Self {
        let names: Vec<String> = efps.iter().map(|s| s.to_string()).collect();
        let name = match app {
            Synthetic::Binh => "binh",
            Synthetic::Kursawe => "kursawe",
        };
        Self::named(name, &names, DocklikeParams::default(), 1).expect("known EFP names")
    }

    pub fn description(&self) -> ApplicationDescription {
        match self {
            Workload::Synthetic { app, efps } => {
                let mut d = app.description();
                d.efps = efps.iter().map(|&e| d.efps[e].clone()).collect();
                d
            }
            Workload::Docklike { clusters, .. } => docklike_description(*clusters),
        }
    }

    /// Description with a per-round budget, repetitions and seed. With
    /// `rounds = Some(r)` selection is forced after round `r`.
    pub fn configured(&self, budget: usize, repetitions: u32, seed: u64, rounds: Option<usize>) -> ApplicationDescription {
        let mut d = self.description();
        d.doe_params.n = budget;
        d.doe_params.repetitions = repetitions.max(1);
        d.learn_params.rng_seed = seed;
        d.learn_params.max_iterations = rounds.map_or(-1, |r| r as i64);
        d
    }

    /// Noise-free EFPs.
    pub fn truth(&self, config: &[f64], features: &[f64]) -> Vec<f64> {
        match self {
            Workload::Synthetic { app, efps } => {
                let all = app.evaluate(config).expect("configuration inside the domain");
                efps.iter().map(|&e| all[e]).collect()
            }
            Workload::Docklike { params, .. } => params.oracle(config, features),
        }
    }

    pub fn evaluator(&self, seed: u64) -> Evaluator {
        Evaluator {
            workload: self.clone(),
            seed,
            counts: Arc::default(),
        }
    }
}

/// `(features, metrics)` of one evaluation.
pub type Measurement = (Vec<f64>, Vec<f64>);

/// Shared, thread-safe measuring device for one run.
#[derive(Debug, Clone)]
pub struct Evaluator {
    workload: Workload,
    seed: u64,
    counts: Arc<Mutex<HashMap<ConfigKey, u64>>>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Evaluator {
    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    /// Measures `config` once. The `i`-th measurement of a configuration in
    /// a run is always the same.
    pub fn measure(&self, config: &KnobConfig) -> Measurement {
        let occurrence = {
            let mut counts = self.counts.lock();
            let n = counts.entry(config.key()).or_default();
            *n += 1;
            *n - 1
        };
        match &self.workload {
            Workload::Synthetic { .. } => (vec![], self.workload.truth(config, &[])),
            Workload::Docklike { params, .. } => {
                let mut s = splitmix(self.seed ^ occurrence.wrapping_mul(0xa076_1d64_78bd_642f));
                for v in config.iter() {
                    s = splitmix(s ^ v.to_bits());
                }
                let mut w = Docklike::new(*params, s);
                let ligand = w.next_ligand();
                let metrics = w.measure(config, &ligand);
                (ligand.features().to_vec(), metrics)
            }
        }
    }

    /// Number of measurements taken so far.
    pub fn count(&self) -> u64 {
        self.counts.lock().values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_description() {
        let w = Workload::synthetic(Synthetic::Binh, &["b2"]);
        assert_eq!(w.description().efps, vec!["b2".to_string()]);
        assert_eq!(w.truth(&[0.0, 0.0], &[]), vec![-1.0]);
        assert!(Workload::named("binh", &["k1".into()], DocklikeParams::default(), 1).is_err());
        assert!(Workload::named("nope", &[], DocklikeParams::default(), 1).is_err());
    }

    #[test]
    fn measurements_depend_on_occurrence_not_caller() {
        let w = Workload::Docklike {
            params: DocklikeParams::default(),
            clusters: 3,
        };
        let a = w.evaluator(5);
        let b = w.evaluator(5);
        let (x, y) = (KnobConfig::new(vec![1.0, 2.0]), KnobConfig::new(vec![3.0, 4.0]));
        let first = (a.measure(&x), a.measure(&y), a.measure(&x));
        let second = (b.measure(&y), b.measure(&x), b.measure(&x));
        assert_eq!(first.0, second.1);
        assert_eq!(first.1, second.0);
        assert_eq!(first.2, second.2);
        assert_ne!(first.0, first.2);
        assert_eq!(a.count(), 3);
    }
}

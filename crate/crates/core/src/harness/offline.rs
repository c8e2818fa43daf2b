//! The server's learning loop without transport: design, measure every
//! repetition, learn, repeat until some knowledge is produced.

use std::collections::HashSet;
use std::time::Duration;

use crate::doe::{generate_design, restricted_grid, DoeError, DEFAULT_GRID_CAP};
use crate::domain::{ApplicationDescription, EfpVector, FeatureVector, KnobConfig, Observation};
use crate::knowledge::knowledge_error;
use crate::server::{run_learning, LearningJob, LearningResult};

use super::{Evaluator, HarnessError};

#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub desc: ApplicationDescription,
    /// Rounds run; the last one produced `result`.
    pub rounds: usize,
    /// Configurations explored, in design order.
    pub explored: Vec<KnobConfig>,
    pub observations: Vec<Observation>,
    pub result: LearningResult,
    /// `(mae_adj, signed_r2)` per EFP of the knowledge against the noise-free
    /// truth at every operating point. Empty without knowledge.
    pub errors: Vec<(f64, f64)>,
    /// Learning time summed over rounds.
    pub modeling: Duration,
}

/// Same rounds, seeds and forcing rule as a server session, so the result
/// equals that of a distributed run of the same description.
pub fn learn_offline(desc: &ApplicationDescription, evaluator: &Evaluator) -> Result<OfflineRun, HarnessError> {
    let grid = restricted_grid(desc, DEFAULT_GRID_CAP)?.len();
    let mut explored = Vec::new();
    let mut keys = HashSet::new();
    let mut observations = Vec::new();
    let mut round = 0usize;
    let mut modeling = Duration::ZERO;
    loop {
        let seed = desc.learn_params.rng_seed.wrapping_add(round as u64);
        match generate_design(desc, &keys, seed) {
            Ok(design) => {
                round += 1;
                for c in &design.points {
                    keys.insert(c.key());
                    for _ in 0..design.repetitions {
                        let (features, metrics) = evaluator.measure(c);
                        observations.push(Observation {
                            client_id: "offline".into(),
                            config: c.clone(),
                            features: FeatureVector::new(features),
                            metrics: EfpVector::new(metrics),
                            timestamp: observations.len() as i64,
                        });
                    }
                }
                explored.extend(design.points);
            }
            Err(DoeError::ExhaustedSpace) if !observations.is_empty() => {}
            Err(e) => return Err(e.into()),
        }
        let job = LearningJob {
            desc: desc.clone(),
            observations: observations.clone(),
            iteration: round,
            force: keys.len() >= grid,
        };
        let result = run_learning(&job)?;
        modeling += result.duration;
        if let Some(kb) = &result.knowledge {
            let truth = |c: &[f64], f: &[f64]| evaluator.workload().truth(c, f);
            let errors = knowledge_error(kb, truth);
            return Ok(OfflineRun {
                desc: desc.clone(),
                rounds: round,
                explored,
                observations,
                result,
                errors,
                modeling,
            });
        }
        if job.force {
            return Err(HarnessError::Run("no model could be fitted on the whole design space".into()));
        }
    }
}

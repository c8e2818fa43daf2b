//! The learning pipeline run when a DoE batch is complete: validation and
//! selection per EFP, feature clustering, operating-point generation.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clustering::{cluster_features, ClusterError};
use crate::domain::{ApplicationDescription, FeatureVector, KnowledgeBase, Observation};
use crate::evaluate::{config_groups, learn_efp, EvalError, SelectionOutcome, ValidationReport, REPORT_HEADER};
use crate::knowledge::{generate_knowledge, KnowledgeError};
use crate::models::{Dataset, FittedModel, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("no observations to learn from")]
    NoObservations,
    #[error(transparent)]
    Dataset(#[from] ModelError),
    #[error("{efp}: {source}")]
    Evaluation { efp: String, source: EvalError },
    #[error(transparent)]
    Clustering(#[from] ClusterError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

#[derive(Debug, Clone)]
pub struct LearningJob {
    pub desc: ApplicationDescription,
    pub observations: Vec<Observation>,
    pub iteration: usize,
    /// Select even without an eligible candidate (grid exhausted).
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct EfpLearning {
    pub efp: String,
    pub report: ValidationReport,
    pub outcome: SelectionOutcome,
    pub model: Option<FittedModel>,
}

#[derive(Debug, Clone)]
pub struct LearningResult {
    pub iteration: usize,
    pub efps: Vec<EfpLearning>,
    pub centroids: Vec<FeatureVector>,
    /// `None` when some EFP has no selected model.
    pub knowledge: Option<KnowledgeBase>,
    pub duration: Duration,
}

impl LearningResult {
    /// `report.csv`. The chosen candidate of each EFP has status `selected`
    /// (`selected_forced` when chosen by the last-round rule).
    pub fn report_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for e in &self.efps {
            let chosen = e.outcome.chosen.as_ref().map(|c| c.kind);
            for (c, row) in e.report.candidates.iter().zip(e.report.csv_rows(&e.efp)) {
                if Some(c.kind) == chosen {
                    let cut = row.rfind(',').map_or(row.len(), |i| i + 1);
                    out.push_str(&row[..cut]);
                    out.push_str(if e.outcome.forced { "selected_forced" } else { "selected" });
                } else {
                    out.push_str(&row);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.knowledge.is_some()
    }
}

/// Training set of one EFP: knobs then features as predictors.
pub fn efp_dataset(
    desc: &ApplicationDescription,
    observations: &[Observation],
    efp: usize,
) -> Result<Dataset, ModelError> {
    let rows = observations
        .iter()
        .map(|o| o.config.iter().chain(o.features.iter()).copied().collect())
        .collect();
    let targets = observations.iter().map(|o| o.metrics[efp]).collect();
    Dataset::new(rows, targets, desc.predictor_names())
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub fn run_learning(job: &LearningJob) -> Result<LearningResult, LearningError> {
    let started = Instant::now();
    let desc = &job.desc;
    if job.observations.is_empty() {
        return Err(LearningError::NoObservations);
    }
    // Arrival order depends on client timing; learning must not.
    let mut observations = job.observations.clone();
    observations.sort_by(|a, b| {
        a.config
            .lex_cmp(&b.config)
            .then_with(|| lex(&a.features, &b.features))
            .then_with(|| lex(&a.metrics, &b.metrics))
    });
    let configs: Vec<_> = observations.iter().map(|o| o.config.clone()).collect();
    let groups = config_groups(&configs);
    let mut efps = Vec::with_capacity(desc.efps.len());
    for (e, name) in desc.efps.iter().enumerate() {
        let data = efp_dataset(desc, &observations, e)?;
        let learned = learn_efp(&data, &groups, &desc.learn_params, job.iteration, job.force)
            .map_err(|source| LearningError::Evaluation {
                efp: name.clone(),
                source,
            })?;
        efps.push(EfpLearning {
            efp: name.clone(),
            report: learned.report,
            outcome: learned.outcome,
            model: learned.model,
        });
    }
    let features: Vec<FeatureVector> = observations.iter().map(|o| o.features.clone()).collect();
    let centroids = cluster_features(&features, &desc.cluster_params, desc.learn_params.rng_seed)?;
    let knowledge = match efps.iter().map(|e| e.model.clone()).collect::<Option<Vec<_>>>() {
        Some(models) => {
            let mut kb = generate_knowledge(desc, &models, &centroids)?;
            for (tag, e) in kb.model_tags.iter_mut().zip(&efps) {
                if let Some(c) = &e.outcome.chosen {
                    tag.signed_r2 = c.signed_r2;
                    tag.mae_adj = c.mae_adj;
                }
            }
            Some(kb)
        }
        None => None,
    };
    Ok(LearningResult {
        iteration: job.iteration,
        efps,
        centroids,
        knowledge,
        duration: started.elapsed(),
    })
}

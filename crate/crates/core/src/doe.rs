//! Design of experiments: which knob configurations to explore.
//!
//! A design is built in four steps: enumerate the full factorial of the knob
//! domains, drop configurations rejected by the restriction, pick a
//! maximum-determinant ("Dmax") subset of the normalized space, and snap the
//! picks back onto admissible, not yet selected configurations.
//!
//! Distances are Euclidean over knob values min-max normalized per knob, so
//! the correlation threshold `epsilon` is scale free.

use std::collections::HashSet;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{ApplicationDescription, ConfigKey, KnobConfig, KnobDomain, Restriction};

/// Largest full factorial enumerated without an explicit cap.
pub const DEFAULT_GRID_CAP: usize = 1_000_000;
/// Above this many candidate configurations Dmax samples the continuous
/// hypercube instead of using the grid itself.
pub const MAX_GRID_CANDIDATES: usize = 10_000;
const RESTARTS: usize = 10;
const JITTER_RETRIES: usize = 10;
const MAX_EXCHANGE_PASSES: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DoeError {
    #[error("full factorial has {product} configurations, above the cap of {cap}")]
    GridTooLarge { product: u128, cap: usize },
    #[error("infeasible design space: no configuration satisfies the restriction")]
    InfeasibleSpace,
    #[error("need at least {needed} candidates, got {available}")]
    TooFewCandidates { needed: usize, available: usize },
    #[error("correlation matrix stayed singular after {0} jittered restarts")]
    Singular(usize),
    #[error("design space exhausted: every point was already selected")]
    ExhaustedSpace,
}

/// Variogram turning normalized distance into decorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variogram {
    /// `1.5 (h/ε) − 0.5 (h/ε)³`, reaching 1 at `h = ε`.
    #[default]
    Spherical,
    /// `h/ε`.
    Linear,
}

impl Variogram {
    pub fn gamma(self, h: f64, epsilon: f64) -> f64 {
        let r = (h / epsilon).min(1.0);
        match self {
            Variogram::Spherical => 1.5 * r - 0.5 * r * r * r,
            Variogram::Linear => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub epsilon: f64,
    pub variogram: Variogram,
}

impl CorrelationSpec {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            variogram: Variogram::Spherical,
        }
    }
}

/// `1 − γ(h)` within the threshold distance, `0` beyond it.
pub fn correlation(h: f64, spec: &CorrelationSpec) -> f64 {
    if h <= spec.epsilon {
        (1.0 - spec.variogram.gamma(h, spec.epsilon)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Correlation matrix of a set of normalized points.
pub fn correlation_matrix(points: &[Vec<f64>], spec: &CorrelationSpec) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            correlation(distance(&points[i], &points[j]), spec)
        }
    })
}

/// Cartesian product of the knob domains, first knob varying slowest.
pub fn full_factorial(knobs: &[KnobDomain], cap: usize) -> Result<Vec<KnobConfig>, DoeError> {
    let product = knobs
        .iter()
        .map(|k| k.values.len() as u128)
        .product::<u128>();
    if product > cap as u128 {
        return Err(DoeError::GridTooLarge { product, cap });
    }
    let mut grid = Vec::with_capacity(product as usize);
    let mut index = vec![0usize; knobs.len()];
    for _ in 0..product {
        grid.push(KnobConfig(
            index.iter().zip(knobs).map(|(&i, k)| k.values[i]).collect(),
        ));
        for pos in (0..knobs.len()).rev() {
            index[pos] += 1;
            if index[pos] < knobs[pos].values.len() {
                break;
            }
            index[pos] = 0;
        }
    }
    Ok(grid)
}

/// Keeps the configurations the restriction allows, preserving order.
pub fn apply_restrictions(
    grid: Vec<KnobConfig>,
    restriction: &Restriction,
) -> Result<Vec<KnobConfig>, DoeError> {
    let kept: Vec<KnobConfig> = grid.into_iter().filter(|c| restriction.allows(c)).collect();
    if kept.is_empty() {
        return Err(DoeError::InfeasibleSpace);
    }
    Ok(kept)
}

/// Full factorial filtered by the description's restriction, if any.
pub fn restricted_grid(desc: &ApplicationDescription, cap: usize) -> Result<Vec<KnobConfig>, DoeError> {
    let grid = full_factorial(&desc.knobs, cap)?;
    match &desc.doe_params.restriction {
        Some(r) => apply_restrictions(grid, r),
        None => Ok(grid),
    }
}

pub fn normalize_config(knobs: &[KnobDomain], config: &[f64]) -> Vec<f64> {
    config.iter().zip(knobs).map(|(v, k)| k.normalize(*v)).collect()
}

/// Log-determinant of the correlation matrix of `points`, or `None` when it
/// is not positive definite.
pub fn log_det(points: &[Vec<f64>], spec: &CorrelationSpec) -> Option<f64> {
    let m = correlation_matrix(points, spec);
    let chol = m.cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Result of a Dmax search: indices into the candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaxSelection {
    pub indices: Vec<usize>,
    pub log_det: f64,
}

struct Exchange<'a> {
    candidates: &'a [Vec<f64>],
    spec: &'a CorrelationSpec,
    selected: Vec<usize>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

impl<'a> Exchange<'a> {
    fn start(candidates: &'a [Vec<f64>], spec: &'a CorrelationSpec, selected: Vec<usize>) -> Option<Self> {
        let points: Vec<Vec<f64>> = selected.iter().map(|&i| candidates[i].clone()).collect();
        let m = correlation_matrix(&points, spec);
        let chol = m.cholesky()?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self {
            candidates,
            spec,
            selected,
            inverse: chol.inverse(),
            log_det,
        })
    }

    /// Sparse correlations between a candidate and the current selection,
    /// skipping position `skip`.
    fn row(&self, cand: usize, skip: usize) -> Vec<(usize, f64)> {
        let c = &self.candidates[cand];
        self.selected
            .iter()
            .enumerate()
            .filter(|&(pos, _)| pos != skip)
            .filter_map(|(pos, &s)| {
                let r = correlation(distance(c, &self.candidates[s]), self.spec);
                (r > 0.0).then_some((pos, r))
            })
            .collect()
    }

    /// det(after replacing position `pos` by `cand`) / det(current).
    ///
    /// With `B` the inverse of the current matrix and `r` the new
    /// correlations (zero at `pos`), the Schur complement of the reduced
    /// matrix gives `B_pp · (1 − rᵀBr + (bᵀr)² / B_pp)`.
    fn ratio(&self, pos: usize, cand: usize) -> f64 {
        let r = self.row(cand, pos);
        let b_pp = self.inverse[(pos, pos)];
        let mut quad = 0.0;
        let mut cross = 0.0;
        for &(i, ri) in &r {
            cross += self.inverse[(i, pos)] * ri;
            for &(j, rj) in &r {
                quad += ri * self.inverse[(i, j)] * rj;
            }
        }
        b_pp * (1.0 - quad + cross * cross / b_pp)
    }

    fn run(mut self) -> Option<DmaxSelection> {
        let n = self.selected.len();
        let mut in_set: HashSet<usize> = self.selected.iter().copied().collect();
        for _ in 0..MAX_EXCHANGE_PASSES {
            let mut improved = false;
            for pos in 0..n {
                let mut best: Option<(usize, f64)> = None;
                for cand in 0..self.candidates.len() {
                    if in_set.contains(&cand) {
                        continue;
                    }
                    let ratio = self.ratio(pos, cand);
                    if ratio > 1.0 + 1e-10 && best.is_none_or(|(_, b)| ratio > b) {
                        best = Some((cand, ratio));
                    }
                }
                if let Some((cand, _)) = best {
                    let old = self.selected[pos];
                    let mut next = self.selected.clone();
                    next[pos] = cand;
                    match Exchange::start(self.candidates, self.spec, next) {
                        Some(updated) if updated.log_det > self.log_det => {
                            in_set.remove(&old);
                            in_set.insert(cand);
                            self.selected = updated.selected;
                            self.inverse = updated.inverse;
                            self.log_det = updated.log_det;
                            improved = true;
                        }
                        _ => {}
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Some(DmaxSelection {
            indices: self.selected,
            log_det: self.log_det,
        })
    }
}

/// Picks `n` of the candidate points maximizing the determinant of their
/// correlation matrix, by greedy single-point exchange from several seeded
/// random starts. Deterministic given `seed`.
pub fn dmax_select(
    candidates: &[Vec<f64>],
    n: usize,
    spec: &CorrelationSpec,
    seed: u64,
) -> Result<DmaxSelection, DoeError> {
    if n < 1 || candidates.len() < n {
        return Err(DoeError::TooFewCandidates {
            needed: n.max(1),
            available: candidates.len(),
        });
    }
    if n == candidates.len() {
        let indices: Vec<usize> = (0..n).collect();
        let log_det = log_det(candidates, spec).unwrap_or(f64::NEG_INFINITY);
        return Ok(DmaxSelection { indices, log_det });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<DmaxSelection> = None;
    let mut failures = 0;
    let mut restarts = 0;
    while restarts < RESTARTS {
        let start = sample(&mut rng, candidates.len(), n).into_vec();
        match Exchange::start(candidates, spec, start).and_then(Exchange::run) {
            Some(sel) => {
                restarts += 1;
                if best.as_ref().is_none_or(|b| sel.log_det > b.log_det) {
                    best = Some(sel);
                }
            }
            None => {
                failures += 1;
                if failures >= JITTER_RETRIES {
                    break;
                }
            }
        }
    }
    best.ok_or(DoeError::Singular(failures))
}

/// Snaps normalized points onto the nearest admissible configuration that is
/// neither already in this batch nor in `already_selected`. Ties go to the
/// lexicographically lower configuration. Returns the configurations and the
/// number of points dropped because nothing was left.
pub fn map_to_domain(
    points: &[Vec<f64>],
    knobs: &[KnobDomain],
    grid: &[KnobConfig],
    already_selected: &HashSet<ConfigKey>,
) -> Result<(Vec<KnobConfig>, usize), DoeError> {
    let normalized: Vec<Vec<f64>> = grid.iter().map(|c| normalize_config(knobs, c)).collect();
    let mut taken: HashSet<ConfigKey> = already_selected.clone();
    let mut out = Vec::with_capacity(points.len());
    let mut dropped = 0;
    for p in points {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in normalized.iter().enumerate() {
            if taken.contains(&grid[i].key()) {
                continue;
            }
            let d = distance(p, q);
            let better = match best {
                None => true,
                Some((b, bd)) => {
                    d < bd || (d == bd && grid[i].lex_cmp(&grid[b]) == std::cmp::Ordering::Less)
                }
            };
            if better {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => {
                taken.insert(grid[i].key());
                out.push(grid[i].clone());
            }
            None => dropped += 1,
        }
    }
    if out.is_empty() && !points.is_empty() {
        return Err(DoeError::ExhaustedSpace);
    }
    if dropped > 0 {
        warn!("{dropped} design points dropped: no unselected configuration left");
    }
    Ok((out, dropped))
}

/// Configurations to explore in one round, each with its repetition count.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub points: Vec<KnobConfig>,
    pub repetitions: u32,
    pub explored: HashSet<ConfigKey>,
    /// True when fewer unexplored configurations than requested were left.
    pub saturated: bool,
}

/// Builds the next batch of configurations, never returning one in
/// `explored`.
pub fn generate_design(
    desc: &ApplicationDescription,
    explored: &HashSet<ConfigKey>,
    seed: u64,
) -> Result<Design, DoeError> {
    let params = &desc.doe_params;
    let grid = restricted_grid(desc, DEFAULT_GRID_CAP)?;
    let unexplored: Vec<KnobConfig> = grid
        .into_iter()
        .filter(|c| !explored.contains(&c.key()))
        .collect();
    let design = |points: Vec<KnobConfig>, saturated: bool| Design {
        points,
        repetitions: params.repetitions,
        explored: explored.clone(),
        saturated,
    };
    if unexplored.is_empty() {
        return Err(DoeError::ExhaustedSpace);
    }
    if unexplored.len() <= params.n {
        if unexplored.len() < params.n {
            warn!(
                "requested {} configurations but only {} unexplored remain",
                params.n,
                unexplored.len()
            );
        }
        return Ok(design(unexplored, true));
    }

    let spec = CorrelationSpec::new(params.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d0e);
    let candidates: Vec<Vec<f64>> = if unexplored.len() <= MAX_GRID_CANDIDATES {
        unexplored
            .iter()
            .map(|c| normalize_config(&desc.knobs, c))
            .collect()
    } else {
        (0..MAX_GRID_CANDIDATES)
            .map(|_| (0..desc.knobs.len()).map(|_| rng.random::<f64>()).collect())
            .collect()
    };
    let selection = dmax_select(&candidates, params.n, &spec, rng.random())?;
    let picked: Vec<Vec<f64>> = selection
        .indices
        .iter()
        .map(|&i| candidates[i].clone())
        .collect();
    let (mut points, _) = map_to_domain(&picked, &desc.knobs, &unexplored, explored)?;
    // Dropped points are topped up with the nearest remaining configurations.
    while points.len() < params.n {
        let mut taken = explored.clone();
        taken.extend(points.iter().map(|p| p.key()));
        let extra: Vec<Vec<f64>> = vec![(0..desc.knobs.len()).map(|_| rng.random()).collect()];
        match map_to_domain(&extra, &desc.knobs, &unexplored, &taken) {
            Ok((more, _)) => points.extend(more),
            Err(_) => break,
        }
    }
    Ok(design(points, false))
}

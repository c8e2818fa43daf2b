//! Multivariate adaptive regression splines.
//!
//! The forward pass greedily adds mirrored hinge pairs `max(0, z − t)`,
//! `max(0, t − z)` (optionally multiplied by an existing term) with knots at
//! observed values; the backward pass removes terms one at a time and keeps
//! the subset with the lowest generalized cross-validation score.

use nalgebra::{DMatrix, DVector};

use super::{
    least_squares, Dataset, Family, FittedModel, ModelError, ModelKind, ModelParams, Standardizer,
};

const MIN_ROWS: usize = 8;
const MAX_TERMS: usize = 21;
const MAX_KNOTS: usize = 20;
const ORTHO_TOL: f64 = 1e-10;

pub fn hinge(x: f64, knot: f64, positive: bool) -> f64 {
    if positive {
        (x - knot).max(0.0)
    } else {
        (knot - x).max(0.0)
    }
}

/// One factor of a basis term, over a standardized predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    Hinge { var: usize, knot: f64, positive: bool },
    Linear { var: usize },
}

impl Factor {
    fn var(&self) -> usize {
        match *self {
            Factor::Hinge { var, .. } | Factor::Linear { var } => var,
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        match *self {
            Factor::Hinge {
                var,
                knot,
                positive,
            } => hinge(z[var], knot, positive),
            Factor::Linear { var } => z[var],
        }
    }
}

/// Product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BasisTerm {
    pub factors: Vec<Factor>,
}

impl BasisTerm {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(z)).product()
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    fn uses(&self, var: usize) -> bool {
        self.factors.iter().any(|f| f.var() == var)
    }

    fn with(&self, factor: Factor) -> BasisTerm {
        let mut factors = self.factors.clone();
        factors.push(factor);
        BasisTerm { factors }
    }
}

/// `ŷ = c + Σ wᵢ Bᵢ(z)` over the pruned basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MarsModel {
    pub standardizer: Standardizer,
    pub intercept: f64,
    pub terms: Vec<(f64, BasisTerm)>,
    pub max_interaction: usize,
    /// GCV of the forward-pass model and of the selected subset.
    pub forward_gcv: f64,
    pub gcv: f64,
}

impl MarsModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        self.intercept + self.terms.iter().map(|(w, t)| w * t.eval(&z)).sum::<f64>()
    }
}

fn gcv(rss: f64, n: usize, terms_with_intercept: usize, penalty: f64) -> f64 {
    let c = terms_with_intercept as f64 + penalty * (terms_with_intercept as f64 - 1.0) / 2.0;
    let n = n as f64;
    if c >= n {
        return f64::INFINITY;
    }
    let denom = 1.0 - c / n;
    rss / n / (denom * denom)
}

fn rss_of(columns: &[&DVector<f64>], y: &DVector<f64>) -> (f64, DVector<f64>) {
    let n = y.len();
    let design = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let (coef, _) = least_squares(&design, y);
    let resid = y - &design * &coef;
    (resid.norm_squared(), coef)
}

/// Candidate knots for one variable among rows where the parent is active.
fn knots(z: &[Vec<f64>], var: usize, parent: &DVector<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = z
        .iter()
        .zip(parent.iter())
        .filter(|(_, p)| **p != 0.0)
        .map(|(row, _)| row[var])
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    // The largest value would give an all-zero positive hinge.
    values.pop();
    if values.len() > MAX_KNOTS {
        let step = values.len().div_ceil(MAX_KNOTS);
        values = values.into_iter().step_by(step).collect();
    }
    values
}

struct Orthonormal {
    basis: Vec<DVector<f64>>,
}

impl Orthonormal {
    /// Component of `v` orthogonal to the basis, or `None` when `v` is
    /// (numerically) inside the span.
    fn residual(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        let scale = v.norm();
        if scale == 0.0 {
            return None;
        }
        let mut r = v.clone();
        for q in &self.basis {
            let d = q.dot(&r);
            r.axpy(-d, q, 1.0);
        }
        for q in &self.basis {
            let d = q.dot(&r);
            r.axpy(-d, q, 1.0);
        }
        let norm = r.norm();
        (norm > ORTHO_TOL * scale).then(|| r / norm)
    }

    fn push(&mut self, v: &DVector<f64>) -> bool {
        match self.residual(v) {
            Some(q) => {
                self.basis.push(q);
                true
            }
            None => false,
        }
    }
}

struct Candidate {
    gain: f64,
    terms: Vec<(BasisTerm, DVector<f64>, f64)>,
}

pub fn fit_mars(data: &Dataset, max_interaction: usize) -> Result<FittedModel, ModelError> {
    fit(data, max_interaction.max(1), false, Family::Mars)
}

/// MARS with two-way interactions and linear entry terms.
pub fn fit_polymars(data: &Dataset) -> Result<FittedModel, ModelError> {
    fit(data, 2, true, Family::Polymars)
}

fn fit(
    data: &Dataset,
    max_interaction: usize,
    linear_entry: bool,
    family: Family,
) -> Result<FittedModel, ModelError> {
    let n = data.n();
    if n < MIN_ROWS {
        return Err(ModelError::TooFewRows {
            family: family.name(),
            needed: MIN_ROWS,
            got: n,
        });
    }
    let standardizer = Standardizer::fit(data);
    let p = standardizer.dims();
    let z = standardizer.transform_all(data);
    let y = &data.targets;
    let max_degree = max_interaction.min(p.max(1));
    let penalty = if max_degree > 1 { 3.0 } else { 2.0 };
    let budget = MAX_TERMS.min(2 * p + 1);

    // Forward pass.
    let ones = DVector::from_element(n, 1.0);
    let mut terms: Vec<(BasisTerm, DVector<f64>)> = vec![(BasisTerm::default(), ones.clone())];
    let mut ortho = Orthonormal { basis: vec![] };
    ortho.push(&ones);
    let mut resid = y - ones.scale(y.mean());
    let total = resid.norm_squared();

    while terms.len() - 1 < budget && terms.len() + 1 < n && total > 0.0 {
        let slots = budget - (terms.len() - 1);
        let mut best: Option<Candidate> = None;
        let mut consider = |cand: Candidate| {
            if best.as_ref().is_none_or(|b| cand.gain > b.gain * (1.0 + 1e-9)) {
                best = Some(cand);
            }
        };
        for (parent, parent_col) in &terms {
            if parent.degree() >= max_degree {
                continue;
            }
            for var in 0..p {
                if parent.uses(var) {
                    continue;
                }
                for knot in knots(&z, var, parent_col) {
                    let mut parts = Vec::with_capacity(2);
                    for positive in [true, false] {
                        let col = DVector::from_fn(n, |i, _| {
                            parent_col[i] * hinge(z[i][var], knot, positive)
                        });
                        let factor = Factor::Hinge {
                            var,
                            knot,
                            positive,
                        };
                        parts.push((parent.with(factor), col));
                    }
                    consider(pair_gain(&ortho, &resid, parts, slots));
                }
                if linear_entry {
                    let col = DVector::from_fn(n, |i, _| parent_col[i] * z[i][var]);
                    let term = parent.with(Factor::Linear { var });
                    consider(pair_gain(&ortho, &resid, vec![(term, col)], slots));
                }
            }
        }
        // A pure product has no main effect for a single factor to pick up,
        // so linear products also enter directly.
        if linear_entry && max_degree >= 2 {
            for u in 0..p {
                for v in u + 1..p {
                    let col = DVector::from_fn(n, |i, _| z[i][u] * z[i][v]);
                    let term = BasisTerm {
                        factors: vec![Factor::Linear { var: u }, Factor::Linear { var: v }],
                    };
                    consider(pair_gain(&ortho, &resid, vec![(term, col)], slots));
                }
            }
        }
        let Some(chosen) = best else { break };
        if chosen.gain <= 1e-12 * total {
            break;
        }
        for (term, col, _) in chosen.terms {
            if ortho.push(&col) {
                let q = ortho.basis.last().unwrap();
                let d = q.dot(&resid);
                resid.axpy(-d, q, 1.0);
                terms.push((term, col));
            }
        }
    }

    // Backward pass over subsets of the non-intercept terms.
    let mut active: Vec<usize> = (1..terms.len()).collect();
    let cols_of = |active: &[usize]| -> Vec<&DVector<f64>> {
        std::iter::once(&terms[0].1)
            .chain(active.iter().map(|&i| &terms[i].1))
            .collect()
    };
    let (full_rss, _) = rss_of(&cols_of(&active), y);
    let forward_gcv = gcv(full_rss, n, active.len() + 1, penalty);
    let mut best_subset = active.clone();
    let mut best_gcv = forward_gcv;
    while !active.is_empty() {
        let mut drop: Option<(usize, f64)> = None;
        for k in 0..active.len() {
            let mut trial = active.clone();
            trial.remove(k);
            let (rss, _) = rss_of(&cols_of(&trial), y);
            if drop.is_none_or(|(_, r)| rss < r) {
                drop = Some((k, rss));
            }
        }
        let (k, rss) = drop.unwrap();
        active.remove(k);
        let score = gcv(rss, n, active.len() + 1, penalty);
        if score <= best_gcv {
            best_gcv = score;
            best_subset = active.clone();
        }
    }

    let (_, coef) = rss_of(&cols_of(&best_subset), y);
    let model = MarsModel {
        standardizer,
        intercept: coef[0],
        terms: best_subset
            .iter()
            .enumerate()
            .map(|(k, &i)| (coef[k + 1], terms[i].0.clone()))
            .collect(),
        max_interaction: max_degree,
        forward_gcv,
        gcv: best_gcv,
    };
    Ok(FittedModel {
        kind: ModelKind::Base(family),
        params: ModelParams::Mars(model),
        warnings: vec![],
    })
}

/// RSS reduction from adding `parts` (one or two columns) to the model.
fn pair_gain(
    ortho: &Orthonormal,
    resid: &DVector<f64>,
    parts: Vec<(BasisTerm, DVector<f64>)>,
    slots: usize,
) -> Candidate {
    let mut scored: Vec<(BasisTerm, DVector<f64>, f64)> = Vec::new();
    let mut local = Orthonormal {
        basis: Vec::with_capacity(2),
    };
    let mut gain = 0.0;
    for (term, col) in parts {
        let Some(q) = ortho.residual(&col) else { continue };
        let Some(q) = local.residual(&q) else { continue };
        let g = q.dot(resid).powi(2);
        local.basis.push(q);
        gain += g;
        scored.push((term, col, g));
    }
    if scored.len() > slots {
        // Only room for one: keep the hinge that explains more on its own.
        let solo = |col: &DVector<f64>| ortho.residual(col).map_or(0.0, |q| q.dot(resid).powi(2));
        scored.sort_by(|a, b| solo(&b.1).total_cmp(&solo(&a.1)));
        scored.truncate(slots);
        gain = solo(&scored[0].1);
    }
    Candidate {
        gain,
        terms: scored,
    }
}

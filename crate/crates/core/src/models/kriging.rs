//! Universal Kriging: `Y(x) = μ(x) + Z(x)` with a linear trend `μ` and a
//! zero-mean stationary process `Z` under a squared-exponential kernel with
//! one length scale per standardized predictor.
//!
//! Length scales (and optionally a nugget) are chosen by maximizing the
//! concentrated likelihood over a log-spaced grid followed by coordinate
//! sweeps.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{
    least_squares, Dataset, Family, FittedModel, ModelError, ModelKind, ModelParams, Standardizer,
};

/// Distinct predictor rows accepted by a fit.
pub const MAX_KRIGING_ROWS: usize = 250;
const MIN_ROWS: usize = 3;
const JITTERS: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];
const NUGGETS: [f64; 6] = [1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1];
const GRID_POINTS: usize = 16;
const LENGTH_MIN: f64 = 0.05;
const LENGTH_MAX: f64 = 20.0;
const SWEEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingOptions {
    /// Search a nugget for noisy targets; off gives an interpolator.
    pub estimate_nugget: bool,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        Self {
            estimate_nugget: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingModel {
    pub standardizer: Standardizer,
    pub length_scales: Vec<f64>,
    pub nugget: f64,
    pub jitter: f64,
    /// Process variance in standardized target units.
    pub sigma2: f64,
    /// Trend coefficients over `[1, z]` (or `[1]`).
    pub beta: Vec<f64>,
    pub linear_trend: bool,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Rows left after averaging duplicates.
    pub training_rows: usize,
    points: Vec<Vec<f64>>,
    gamma: DVector<f64>,
    chol_l: DMatrix<f64>,
    /// `(Fᵀ R⁻¹ F)⁻¹`, for the variance correction of the trend.
    trend_gram_inv: DMatrix<f64>,
}

fn kernel(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(scales)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum();
    (-0.5 * s).exp()
}

fn trend_row(z: &[f64], linear: bool) -> Vec<f64> {
    let mut row = vec![1.0];
    if linear {
        row.extend_from_slice(z);
    }
    row
}

/// Collapses rows with identical predictors onto the mean of their targets,
/// keeping first-occurrence order.
fn average_duplicates(data: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for i in 0..data.n() {
        let row = data.row(i);
        let key = row
            .iter()
            .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        let slot = *index.entry(key).or_insert_with(|| {
            rows.push(row);
            sums.push((0.0, 0));
            sums.len() - 1
        });
        sums[slot].0 += data.targets[i];
        sums[slot].1 += 1;
    }
    (rows, sums.into_iter().map(|(s, c)| s / c as f64).collect())
}

struct Problem {
    z: Vec<Vec<f64>>,
    y: DVector<f64>,
    f: DMatrix<f64>,
}

struct Evaluation {
    nll: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

impl Problem {
    fn evaluate(&self, scales: &[f64], nugget: f64) -> Option<Evaluation> {
        let n = self.z.len();
        for jitter in JITTERS {
            let r = DMatrix::from_fn(n, n, |i, j| {
                let k = kernel(&self.z[i], &self.z[j], scales);
                if i == j {
                    k + nugget + jitter
                } else {
                    k
                }
            });
            let Some(chol) = r.cholesky() else { continue };
            let l = chol.l();
            let ft = l.solve_lower_triangular(&self.f)?;
            let yt = l.solve_lower_triangular(&self.y)?;
            let (beta, _) = least_squares(&ft, &yt);
            let sigma2 = (yt - ft * beta).norm_squared() / n as f64;
            let logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            let nll = n as f64 * sigma2.max(1e-300).ln() + logdet;
            if nll.is_finite() {
                return Some(Evaluation { nll, jitter, chol });
            }
        }
        None
    }
}

pub fn fit_kriging(data: &Dataset) -> Result<FittedModel, ModelError> {
    fit_kriging_with(data, KrigingOptions::default())
}

pub fn fit_kriging_with(data: &Dataset, opts: KrigingOptions) -> Result<FittedModel, ModelError> {
    let (rows, targets) = average_duplicates(data);
    let n = rows.len();
    if n < MIN_ROWS {
        return Err(ModelError::TooFewRows {
            family: Family::Kriging.name(),
            needed: MIN_ROWS,
            got: n,
        });
    }
    if n > MAX_KRIGING_ROWS {
        return Err(ModelError::TooLarge {
            rows: n,
            cap: MAX_KRIGING_ROWS,
        });
    }
    let collapsed = Dataset::new(rows, targets, data.column_names.clone())?;
    let standardizer = Standardizer::fit(&collapsed);
    let z = standardizer.transform_all(&collapsed);
    let p = standardizer.dims();
    let y_mean = collapsed.targets.mean();
    let spread = collapsed.targets.iter().map(|t| (t - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if spread > 0.0 { spread.sqrt() } else { 1.0 };
    let y = collapsed.targets.map(|t| (t - y_mean) / y_scale);
    let linear_trend = n >= p + 2;
    let f_rows: Vec<Vec<f64>> = z.iter().map(|r| trend_row(r, linear_trend)).collect();
    let q = f_rows[0].len();
    let problem = Problem {
        f: DMatrix::from_fn(n, q, |i, j| f_rows[i][j]),
        z,
        y,
    };

    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            let t = i as f64 / (GRID_POINTS - 1) as f64;
            (LENGTH_MIN.ln() + t * (LENGTH_MAX / LENGTH_MIN).ln()).exp()
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64, Evaluation)> = None;
    let consider = |scales: Vec<f64>, nugget: f64, best: &mut Option<(Vec<f64>, f64, Evaluation)>| {
        if let Some(e) = problem.evaluate(&scales, nugget) {
            if best.as_ref().is_none_or(|(_, _, b)| e.nll < b.nll) {
                *best = Some((scales, nugget, e));
            }
        }
    };
    let base_nugget = if opts.estimate_nugget { NUGGETS[0] } else { 0.0 };
    for &l in &grid {
        consider(vec![l; p], base_nugget, &mut best);
    }
    if p > 1 {
        for _ in 0..SWEEPS {
            for d in 0..p {
                let Some((current, nugget)) = best.as_ref().map(|(s, t, _)| (s.clone(), *t)) else {
                    break;
                };
                for &l in &grid {
                    if l == current[d] {
                        continue;
                    }
                    let mut scales = current.clone();
                    scales[d] = l;
                    consider(scales, nugget, &mut best);
                }
            }
        }
    }
    if opts.estimate_nugget {
        if let Some(scales) = best.as_ref().map(|(s, _, _)| s.clone()) {
            for &t in &NUGGETS[1..] {
                consider(scales.clone(), t, &mut best);
            }
        }
    }
    let (length_scales, nugget, eval) = best.ok_or(ModelError::Singular)?;

    let l = eval.chol.l();
    let ft = l.solve_lower_triangular(&problem.f).ok_or(ModelError::Singular)?;
    let yt = l.solve_lower_triangular(&problem.y).ok_or(ModelError::Singular)?;
    let (beta, _) = least_squares(&ft, &yt);
    let resid_t = &yt - &ft * &beta;
    let sigma2 = resid_t.norm_squared() / n as f64;
    let gamma = l.transpose().solve_upper_triangular(&resid_t).ok_or(ModelError::Singular)?;
    let gram = ft.transpose() * &ft;
    let trend_gram_inv = gram
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|_| ModelError::Singular)?;

    Ok(FittedModel {
        kind: ModelKind::Base(Family::Kriging),
        params: ModelParams::Kriging(KrigingModel {
            standardizer,
            length_scales,
            nugget,
            jitter: eval.jitter,
            sigma2,
            beta: beta.iter().copied().collect(),
            linear_trend,
            y_mean,
            y_scale,
            training_rows: n,
            points: problem.z,
            gamma,
            chol_l: l,
            trend_gram_inv,
        }),
        warnings: vec![],
    })
}

impl KrigingModel {
    /// Correlations with the training points. The numerical jitter is part
    /// of the covariance at coincident points, so training inputs are
    /// reproduced exactly when no nugget is fitted.
    fn correlations(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| {
                let k = kernel(z, p, &self.length_scales);
                if p.as_slice() == z {
                    k + self.jitter
                } else {
                    k
                }
            }),
        )
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        let f = trend_row(&z, self.linear_trend);
        let trend: f64 = f.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let r = self.correlations(&z);
        self.y_mean + self.y_scale * (trend + r.dot(&self.gamma))
    }

    /// Kriging variance at `x`, in original target units.
    pub fn predict_variance(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        let f = DVector::from_vec(trend_row(&z, self.linear_trend));
        let r = self.correlations(&z);
        let Some(rt) = self.chol_l.solve_lower_triangular(&r) else {
            return f64::NAN;
        };
        let fmat = DMatrix::from_fn(self.points.len(), f.len(), |i, j| {
            trend_row(&self.points[i], self.linear_trend)[j]
        });
        let Some(ft) = self.chol_l.solve_lower_triangular(&fmat) else {
            return f64::NAN;
        };
        let u = ft.transpose() * &rt - f;
        let correction = (u.transpose() * &self.trend_gram_inv * &u)[(0, 0)];
        let base = 1.0 + self.nugget + self.jitter - rt.norm_squared();
        (self.sigma2 * (base + correction)).max(0.0) * self.y_scale * self.y_scale
    }

    /// Lower Cholesky factor of the training covariance (nugget and jitter
    /// included).
    pub fn covariance_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }
}

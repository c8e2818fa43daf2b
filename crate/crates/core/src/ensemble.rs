//! Bagging and stacking over cross-validation models.
//!
//! A [`CvModelSet`] holds one model per fold of a single family together with
//! the out-of-fold prediction of every training row. Bagging averages the
//! fold models; stacking fits simplex weights on the out-of-fold predictions
//! of several families and combines their full-data fits.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::models::{
    least_squares, Dataset, Family, FittedModel, ModelError, ModelKind, ModelParams,
};

const KKT_TOLERANCE: f64 = 1e-8;
const MAX_STACK_FAMILIES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("cross-validation sets use different fold assignments")]
    MismatchedFolds,
    #[error("no cross-validation sets to combine")]
    Empty,
    #[error("fold {0} has no training rows")]
    EmptyFold(usize),
    #[error("need at least two folds, got {0}")]
    TooFewFolds(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fold models of one family and their out-of-fold predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CvModelSet {
    pub family: Family,
    pub fold_models: Vec<FittedModel>,
    /// Fold index of every training row.
    pub fold_assignment: Vec<usize>,
    pub oof_predictions: Vec<f64>,
}

/// Fits `family` once per fold on the rows outside the fold and predicts the
/// rows inside it.
pub fn cross_validate(
    data: &Dataset,
    family: Family,
    fold_assignment: &[usize],
) -> Result<CvModelSet, EnsembleError> {
    let k = fold_assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(EnsembleError::TooFewFolds(k));
    }
    let mut fold_models = Vec::with_capacity(k);
    let mut oof = vec![f64::NAN; data.n()];
    for fold in 0..k {
        let train: Vec<usize> = (0..data.n()).filter(|&i| fold_assignment[i] != fold).collect();
        if train.is_empty() {
            return Err(EnsembleError::EmptyFold(fold));
        }
        let model = family.fit(&data.subset(&train))?;
        for i in (0..data.n()).filter(|&i| fold_assignment[i] == fold) {
            oof[i] = model.predict(&data.row(i));
        }
        fold_models.push(model);
    }
    Ok(CvModelSet {
        family,
        fold_models,
        fold_assignment: fold_assignment.to_vec(),
        oof_predictions: oof,
    })
}

/// Mean of the fold models.
pub fn bag(cv: &CvModelSet) -> FittedModel {
    FittedModel {
        kind: ModelKind::Bagged(cv.family),
        params: ModelParams::Bagged(cv.fold_models.clone()),
        warnings: vec![],
    }
}

/// `n × F` matrix whose column `f` holds the out-of-fold predictions of
/// `cv_sets[f]`.
pub fn stacking_matrix(cv_sets: &[CvModelSet]) -> Result<DMatrix<f64>, EnsembleError> {
    let first = cv_sets.first().ok_or(EnsembleError::Empty)?;
    if cv_sets.iter().any(|s| s.fold_assignment != first.fold_assignment) {
        return Err(EnsembleError::MismatchedFolds);
    }
    let n = first.oof_predictions.len();
    Ok(DMatrix::from_fn(n, cv_sets.len(), |i, f| {
        cv_sets[f].oof_predictions[i]
    }))
}

/// Simplex weights of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingWeights {
    pub weights: Vec<f64>,
    /// Set when the solver could not certify optimality and fell back to
    /// uniform weights.
    pub fallback: bool,
}

/// Orthonormal basis of `{v : Σv = 0}` in `m` dimensions (Helmert columns).
fn sum_zero_basis(m: usize) -> DMatrix<f64> {
    let mut basis = DMatrix::zeros(m, m.saturating_sub(1));
    for j in 1..m {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            basis[(i, j - 1)] = 1.0 / norm;
        }
        basis[(j, j - 1)] = -(j as f64) / norm;
    }
    basis
}

/// Least squares restricted to `Σw = 1` on the columns in `support`; the
/// solution closest to uniform when it is not unique.
fn equality_solution(p: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let m = support.len();
    let ps = p.select_columns(support.iter());
    let w0 = DVector::from_element(m, 1.0 / m as f64);
    if m == 1 {
        return w0;
    }
    let basis = sum_zero_basis(m);
    let (a, _) = least_squares(&(&ps * &basis), &(y - &ps * &w0));
    w0 + basis * a
}

fn objective(p: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (p * w - y).norm_squared()
}

/// Largest violation of the optimality conditions of
/// `min ‖Pw − y‖²` over the simplex, relative to the gradient scale.
pub fn kkt_residual(p: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    let g = (p.transpose() * (p * &w - y)) * 2.0;
    let scale = 1.0 + g.amax();
    let active: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let lambda = active.iter().map(|&i| g[i]).sum::<f64>() / active.len().max(1) as f64;
    let mut worst = (w.sum() - 1.0).abs() + w.iter().map(|v| (-v).max(0.0)).sum::<f64>();
    for i in 0..w.len() {
        let v = if w[i] > 0.0 {
            (g[i] - lambda).abs()
        } else {
            (lambda - g[i]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst / scale
}

/// Minimizes `‖Pw − y‖²` subject to `w ≥ 0`, `Σw = 1`, exactly, by solving
/// the equality-constrained problem on every support and keeping the best
/// feasible one. Ties prefer larger supports.
pub fn solve_stack_weights(p: &DMatrix<f64>, y: &DVector<f64>) -> StackingWeights {
    let f = p.ncols();
    let uniform = || StackingWeights {
        weights: vec![1.0 / f as f64; f],
        fallback: true,
    };
    if f == 0 || f > MAX_STACK_FAMILIES {
        return uniform();
    }
    let scale = y.norm_squared().max(p.norm_squared()).max(1e-300);
    let mut best: Option<(f64, usize, DVector<f64>)> = None;
    for mask in 1u32..(1 << f) {
        let support: Vec<usize> = (0..f).filter(|i| mask & (1 << i) != 0).collect();
        let ws = equality_solution(p, y, &support);
        if ws.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let mut w = DVector::zeros(f);
        for (k, &i) in support.iter().enumerate() {
            w[i] = ws[k].max(0.0);
        }
        w /= w.sum();
        let obj = objective(p, y, &w);
        let better = match &best {
            None => true,
            Some((b, size, _)) => {
                let tie = (obj - b).abs() <= 1e-12 * scale;
                (!tie && obj < *b) || (tie && support.len() > *size)
            }
        };
        if better {
            best = Some((obj, support.len(), w));
        }
    }
    let Some((_, _, w)) = best else {
        return uniform();
    };
    let weights: Vec<f64> = w.iter().copied().collect();
    if kkt_residual(p, y, &weights) >= KKT_TOLERANCE {
        return uniform();
    }
    StackingWeights {
        weights,
        fallback: false,
    }
}

/// `Σ w_f · model_f(x)` over full-data fits.
pub fn stack(models: Vec<FittedModel>, weights: &StackingWeights) -> FittedModel {
    let mut warnings = Vec::new();
    if weights.fallback {
        warnings.push("stacking weights fell back to uniform".to_string());
    }
    FittedModel {
        kind: ModelKind::Stacked,
        params: ModelParams::Stacked(weights.weights.iter().copied().zip(models).collect()),
        warnings,
    }
}

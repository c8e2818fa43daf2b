//! Base model families mapping a predictor vector (knobs then features) to
//! one EFP: first-order linear regression with and without two-way
//! interactions, MARS, POLYMARS and Universal Kriging.
//!
//! Every fit standardizes its predictors internally and drops constant
//! columns, so callers always pass raw values.

mod kriging;
mod linear;
mod mars;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use kriging::{fit_kriging, fit_kriging_with, KrigingModel, KrigingOptions, MAX_KRIGING_ROWS};
pub use linear::{fit_linear, LinearCoefficients, LinearModel};
pub use mars::{fit_mars, fit_polymars, hinge, BasisTerm, Factor, MarsModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{family} needs at least {needed} rows, got {got}")]
    TooFewRows {
        family: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("kriging is limited to {cap} distinct rows, got {rows}")]
    TooLarge { rows: usize, cap: usize },
    #[error("covariance matrix is not positive definite even with the largest jitter")]
    Singular,
    #[error("invalid dataset: {0}")]
    InvalidData(String),
}

/// The base modelling techniques, in declaration order (used for tie-breaks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Linear1,
    Linear1x,
    Mars,
    Polymars,
    Kriging,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Linear1,
        Family::Linear1x,
        Family::Mars,
        Family::Polymars,
        Family::Kriging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear1 => "linear1",
            Family::Linear1x => "linear1x",
            Family::Mars => "mars",
            Family::Polymars => "polymars",
            Family::Kriging => "kriging",
        }
    }

    pub fn fit(self, data: &Dataset) -> Result<FittedModel, ModelError> {
        match self {
            Family::Linear1 => Ok(fit_linear(data, false)),
            Family::Linear1x => Ok(fit_linear(data, true)),
            Family::Mars => fit_mars(data, 1),
            Family::Polymars => fit_polymars(data),
            Family::Kriging => fit_kriging(data),
        }
    }
}

/// What a fitted model is: a base family, a bagged family, or the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Base(Family),
    Bagged(Family),
    Stacked,
}

impl ModelKind {
    pub fn is_ensemble(self) -> bool {
        !matches!(self, ModelKind::Base(_))
    }

    pub fn parse(name: &str) -> Option<Self> {
        if name == "stacking" {
            return Some(ModelKind::Stacked);
        }
        let (base, bagged) = match name.strip_suffix("_bagged") {
            Some(base) => (base, true),
            None => (name, false),
        };
        let family = Family::ALL.into_iter().find(|f| f.name() == base)?;
        Some(if bagged {
            ModelKind::Bagged(family)
        } else {
            ModelKind::Base(family)
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Base(fam) => f.write_str(fam.name()),
            ModelKind::Bagged(fam) => write!(f, "{}_bagged", fam.name()),
            ModelKind::Stacked => f.write_str("stacking"),
        }
    }
}

/// Training data for one EFP. Rows are observations; columns are knobs then
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub predictors: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self, ModelError> {
        let n = rows.len();
        if n == 0 {
            return Err(ModelError::InvalidData("no rows".into()));
        }
        if targets.len() != n {
            return Err(ModelError::InvalidData(format!(
                "{n} rows but {} targets",
                targets.len()
            )));
        }
        let p = column_names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(ModelError::InvalidData(format!(
                "row {bad} has {} values, expected {p}",
                rows[bad].len()
            )));
        }
        if rows.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidData("non-finite value".into()));
        }
        Ok(Self {
            predictors: DMatrix::from_fn(n, p, |i, j| rows[i][j]),
            targets: DVector::from_vec(targets),
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn p(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.predictors.row(i).iter().copied().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            predictors: self.predictors.select_rows(rows.iter()),
            targets: self.targets.select_rows(rows.iter()),
            column_names: self.column_names.clone(),
        }
    }

    /// One flag per column: true when every row holds the same value.
    pub fn constant_columns(&self) -> Vec<bool> {
        (0..self.p())
            .map(|j| {
                let col = self.predictors.column(j);
                let (lo, hi) = (col.min(), col.max());
                hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0)
            })
            .collect()
    }
}

/// Z-score transform over the non-constant columns of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let constant = data.constant_columns();
        let n = data.n() as f64;
        let mut keep = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for (j, &c) in constant.iter().enumerate() {
            if c {
                continue;
            }
            let col = data.predictors.column(j);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            keep.push(j);
            mean.push(m);
            scale.push(var.sqrt());
        }
        Self { keep, mean, scale }
    }

    pub fn dims(&self) -> usize {
        self.keep.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        self.keep
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&j, (m, s))| (x[j] - m) / s)
            .collect()
    }

    pub fn transform_all(&self, data: &Dataset) -> Vec<Vec<f64>> {
        (0..data.n()).map(|i| self.transform(&data.row(i))).collect()
    }

    pub fn dropped(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|j| !self.keep.contains(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Linear(LinearModel),
    Mars(MarsModel),
    Kriging(KrigingModel),
    /// Cross-validation models whose predictions are averaged.
    Bagged(Vec<FittedModel>),
    /// Full-data base models and their simplex weights.
    Stacked(Vec<(f64, FittedModel)>),
}

/// A trained predictor for one EFP. Immutable and cheap to share.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Linear(m) => m.predict(x),
            ModelParams::Mars(m) => m.predict(x),
            ModelParams::Kriging(m) => m.predict(x),
            ModelParams::Bagged(models) => {
                models.iter().map(|m| m.predict(x)).sum::<f64>() / models.len() as f64
            }
            ModelParams::Stacked(parts) => parts.iter().map(|(w, m)| w * m.predict(x)).sum(),
        }
    }

    pub fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.predict(&data.row(i))).collect()
    }
}

/// Least squares through the SVD pseudo-inverse: the minimum-norm solution
/// when `design` is rank deficient. Returns the coefficients and the
/// condition number.
pub(crate) fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (design.nrows().max(design.ncols()) as f64);
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .filter(|s| *s > tol)
        .fold(f64::INFINITY, f64::min);
    let coef = svd
        .solve(y, tol.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(design.ncols()));
    let cond = if smin.is_finite() { smax / smin } else { f64::INFINITY };
    (coef, cond)
}

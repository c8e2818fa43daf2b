use nalgebra::{DMatrix, DVector};

use super::{least_squares, Dataset, Family, FittedModel, ModelKind, ModelParams, Standardizer};

const CONDITION_WARNING: f64 = 1e10;

/// Ordinary least squares over `[1, z₁..z_p]` and, with interactions, every
/// `zᵢ·zⱼ` (i < j), where `z` are the standardized predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    pub interactions: bool,
    /// Coefficients on the standardized design, intercept first.
    pub coefficients: Vec<f64>,
    pub condition_number: f64,
    p: usize,
}

/// Coefficients expressed on the original predictor units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients {
    pub intercept: f64,
    /// One per original column; zero for dropped constant columns.
    pub linear: Vec<f64>,
    /// `((i, j), coefficient)` on `xᵢ·xⱼ`, original column indices, i < j.
    pub interactions: Vec<((usize, usize), f64)>,
}

fn design_row(z: &[f64], interactions: bool) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + z.len() + z.len() * z.len() / 2);
    row.push(1.0);
    row.extend_from_slice(z);
    if interactions {
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                row.push(z[i] * z[j]);
            }
        }
    }
    row
}

pub fn fit_linear(data: &Dataset, interactions: bool) -> FittedModel {
    let standardizer = Standardizer::fit(data);
    let rows: Vec<Vec<f64>> = standardizer
        .transform_all(data)
        .iter()
        .map(|z| design_row(z, interactions))
        .collect();
    let cols = rows[0].len();
    let design = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let (coef, condition_number) = least_squares(&design, &data.targets);

    let mut warnings = Vec::new();
    let dropped = standardizer.dropped(data.p());
    if !dropped.is_empty() {
        warnings.push(format!("constant columns dropped: {dropped:?}"));
    }
    if condition_number > CONDITION_WARNING {
        warnings.push(format!("ill-conditioned design (condition {condition_number:.3e})"));
    }
    let family = if interactions {
        Family::Linear1x
    } else {
        Family::Linear1
    };
    FittedModel {
        kind: ModelKind::Base(family),
        params: ModelParams::Linear(LinearModel {
            standardizer,
            interactions,
            coefficients: coef.iter().copied().collect(),
            condition_number,
            p: data.p(),
        }),
        warnings,
    }
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let row = design_row(&self.standardizer.transform(x), self.interactions);
        DVector::from_vec(row).dot(&DVector::from_column_slice(&self.coefficients))
    }

    pub fn original_coefficients(&self) -> LinearCoefficients {
        let s = &self.standardizer;
        let d = s.dims();
        let mut intercept = self.coefficients[0];
        let mut linear = vec![0.0; self.p];
        let mut interactions = Vec::new();
        for a in 0..d {
            let beta = self.coefficients[1 + a];
            linear[s.keep[a]] += beta / s.scale[a];
            intercept -= beta * s.mean[a] / s.scale[a];
        }
        if self.interactions {
            let mut idx = 1 + d;
            for a in 0..d {
                for b in a + 1..d {
                    let g = self.coefficients[idx] / (s.scale[a] * s.scale[b]);
                    idx += 1;
                    interactions.push(((s.keep[a], s.keep[b]), g));
                    linear[s.keep[a]] -= g * s.mean[b];
                    linear[s.keep[b]] -= g * s.mean[a];
                    intercept += g * s.mean[a] * s.mean[b];
                }
            }
        }
        LinearCoefficients {
            intercept,
            linear,
            interactions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::grid_dataset;
    use super::*;
    use proptest::prelude::*;

    fn linear_params(m: &FittedModel) -> &LinearModel {
        match &m.params {
            ModelParams::Linear(l) => l,
            _ => unreachable!(),
        }
    }

    #[test]
    fn recovers_the_linear_binh_objective() {
        let xs: Vec<f64> = (-7..=4).map(f64::from).collect();
        let data = grid_dataset(&xs, &xs, |x, y| -0.5 * x - y - 1.0);
        let model = fit_linear(&data, false);
        let c = linear_params(&model).original_coefficients();
        assert!((c.intercept + 1.0).abs() < 1e-10);
        assert!((c.linear[0] + 0.5).abs() < 1e-10);
        assert!((c.linear[1] + 1.0).abs() < 1e-10);
        for i in 0..data.n() {
            assert!((model.predict(&data.row(i)) - data.targets[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_targets_give_intercept_only() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let data = grid_dataset(&xs, &xs, |_, _| 4.25);
        let c = linear_params(&fit_linear(&data, true)).original_coefficients();
        assert!((c.intercept - 4.25).abs() < 1e-12);
        assert!(c.linear.iter().all(|v| v.abs() < 1e-12));
        assert!(c.interactions.iter().all(|(_, v)| v.abs() < 1e-12));
    }

    #[test]
    fn bilinear_data_gives_unit_interaction() {
        // Closed form: x·y lies in the span of the interaction design, so
        // OLS reproduces it exactly.
        let xs = [-2.0, -1.0, 0.5, 1.0, 3.0];
        let data = grid_dataset(&xs, &xs, |x, y| x * y);
        let c = linear_params(&fit_linear(&data, true)).original_coefficients();
        assert!(c.intercept.abs() < 1e-9);
        assert!(c.linear.iter().all(|v| v.abs() < 1e-9), "{c:?}");
        assert_eq!(c.interactions.len(), 1);
        assert_eq!(c.interactions[0].0, (0, 1));
        assert!((c.interactions[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_still_returns_a_model() {
        // Second column duplicates the first.
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64]).collect();
        let t: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 + 1.0).collect();
        let data = Dataset::new(rows, t, vec!["a".into(), "b".into()]).unwrap();
        let model = fit_linear(&data, false);
        assert!(linear_params(&model).condition_number.is_finite());
        for i in 0..5 {
            assert!((model.predict(&data.row(i)) - data.targets[i]).abs() < 1e-9);
        }
        let c = linear_params(&model).original_coefficients();
        assert!((c.linear[0] - c.linear[1]).abs() < 1e-9, "minimum norm splits evenly");
    }

    #[test]
    fn underdetermined_fit_interpolates() {
        let data = Dataset::new(
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 5.0]],
            vec![1.0, 2.0],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let model = fit_linear(&data, true);
        assert!((model.predict(&[0.0, 1.0, 2.0]) - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residuals_are_orthogonal_to_predictors(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 8..30),
            noise in proptest::collection::vec(-1.0f64..1.0, 30),
            interactions in any::<bool>(),
        ) {
            let n = rows.len();
            let t: Vec<f64> = rows.iter().zip(&noise).map(|(r, e)| r[0] * r[1] - 2.0 * r[2] + e).collect();
            let data = Dataset::new(rows, t, vec!["a".into(), "b".into(), "c".into()]).unwrap();
            let model = fit_linear(&data, interactions);
            let resid: Vec<f64> = (0..n).map(|i| data.targets[i] - model.predict(&data.row(i))).collect();
            for j in 0..3 {
                let dot: f64 = (0..n).map(|i| resid[i] * data.predictors[(i, j)]).sum();
                prop_assert!(dot.abs() < 1e-8 * n as f64, "column {} dot {}", j, dot);
            }
        }
    }
}

//! Post-processing of experiment results.

use crate::client::{select_op, Requirements};
use crate::clustering::nearest_centroid;
use crate::domain::{FeatureVector, KnowledgeBase};

/// Mean over non-empty clusters of the range (max − min) of `times`,
/// divided by the range over all points. Points go to their nearest
/// centroid. 0 when every time is equal.
pub fn cluster_swing(features: &[FeatureVector], times: &[f64], centroids: &[FeatureVector]) -> f64 {
    assert_eq!(features.len(), times.len());
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), t| (l.min(t), h.max(t)));
        if lo.is_finite() { Some(hi - lo) } else { None }
    };
    let Some(global) = span(&mut times.iter().copied()).filter(|g| *g > 0.0) else {
        return 0.0;
    };
    let k = centroids.len().max(1);
    let labels: Vec<usize> = features.iter().map(|f| nearest_centroid(f, centroids)).collect();
    let ranges: Vec<f64> = (0..k)
        .filter_map(|c| span(&mut labels.iter().zip(times).filter(|(l, _)| **l == c).map(|(_, t)| *t)))
        .collect();
    ranges.iter().sum::<f64>() / ranges.len() as f64 / global
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionError {
    /// Sum over the library of the expected value of the chosen point.
    pub predicted: f64,
    /// Sum over the library of the true value of the chosen configuration.
    pub actual: f64,
}

impl PredictionError {
    pub fn relative(&self) -> f64 {
        ((self.predicted - self.actual) / self.actual).abs()
    }
}

/// Picks an operating point per input as a client would and compares the
/// total expected `efp` with the total given by `truth(config, features)`.
pub fn prediction_error(
    kb: &KnowledgeBase,
    reqs: &Requirements,
    efp: usize,
    library: &[Vec<f64>],
    mut truth: impl FnMut(&[f64], &[f64]) -> f64,
) -> Option<PredictionError> {
    let ones = vec![1.0; kb.model_tags.len().max(efp + 1)];
    let mut out = PredictionError {
        predicted: 0.0,
        actual: 0.0,
    };
    for f in library {
        let op = select_op(kb, reqs, f, &ones)?;
        out.predicted += op.expected[efp];
        out.actual += truth(&op.config, f);
    }
    Some(out)
}

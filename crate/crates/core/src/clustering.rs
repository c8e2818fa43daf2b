//! Representative input-feature vectors for the knowledge base.
//!
//! Features are min-max normalized per dimension before clustering, and
//! centroids are reported back in original units.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{ClusterMethod, ClusterParams, FeatureVector};

const KMEANS_RESTARTS: usize = 20;
const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no feature vectors to cluster")]
    NoFeatures,
    #[error("feature vector {index} has {found} values, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("manual clustering requested without centroids")]
    MissingManualCentroids,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Per-dimension min-max scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub span: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for p in points {
            if min.is_empty() {
                min = p.to_vec();
                max = p.to_vec();
            }
            for (d, v) in p.iter().enumerate() {
                min[d] = min[d].min(*v);
                max[d] = max[d].max(*v);
            }
        }
        let span = min
            .iter()
            .zip(&max)
            .map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 })
            .collect();
        Self { min, span }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.min.iter().zip(&self.span))
            .map(|(v, (lo, s))| (v - lo) / s)
            .collect()
    }

    pub fn invert(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.min.iter().zip(&self.span))
            .map(|(v, (lo, s))| lo + v * s)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of<'a>(points: impl Iterator<Item = &'a Vec<f64>>, dims: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dims];
    let mut count = 0usize;
    for p in points {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// One k-means run: centroids, assignments and the objective after every
/// Lloyd iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective_trace: Vec<f64>,
}

impl KMeansRun {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::INFINITY)
    }
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansRun {
    let dims = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let objective = |a: &[usize], c: &[Vec<f64>]| -> f64 {
        points.iter().zip(a).map(|(p, &i)| sq_dist(p, &c[i])).sum()
    };
    let mut trace = vec![objective(&assignments, &centroids)];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        for (j, c) in centroids.iter_mut().enumerate() {
            // An emptied cluster keeps its previous centroid.
            if assignments.contains(&j) {
                *c = mean_of(points.iter().zip(&assignments).filter(|(_, a)| **a == j).map(|(p, _)| p), dims);
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        trace.push(objective(&next, &centroids));
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansRun {
        centroids,
        assignments,
        objective_trace: trace,
    }
}

/// k-means++ seeding and Lloyd iterations, best of several restarts, on
/// already normalized points.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansRun> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, plus_plus_seeds(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// DBSCAN labels on normalized points: `Some(cluster)` or `None` for noise.
/// Neighborhoods include the point itself.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| sq_dist(&points[i], &points[j]) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if labels[j].is_none() {
                    labels[j] = Some(next);
                    if core[j] {
                        stack.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Representative centroids of the observed feature vectors.
///
/// With no declared features the result is one empty centroid; with method
/// `none` it is the global mean.
pub fn cluster_features(
    features: &[FeatureVector],
    params: &ClusterParams,
    seed: u64,
) -> Result<Vec<FeatureVector>, ClusterError> {
    if params.method == ClusterMethod::Manual {
        return params
            .manual_centroids
            .clone()
            .ok_or(ClusterError::MissingManualCentroids);
    }
    let Some(first) = features.first() else {
        return Err(ClusterError::NoFeatures);
    };
    let dims = first.len();
    if let Some(index) = features.iter().position(|f| f.len() != dims) {
        return Err(ClusterError::DimensionMismatch {
            index,
            expected: dims,
            found: features[index].len(),
        });
    }
    if dims == 0 {
        return Ok(vec![FeatureVector::default()]);
    }
    let norm = Normalizer::fit(features.iter().map(|f| f.values()));
    let points: Vec<Vec<f64>> = features.iter().map(|f| norm.apply(f)).collect();
    let centroids: Vec<Vec<f64>> = match params.method {
        ClusterMethod::None => vec![mean_of(points.iter(), dims)],
        ClusterMethod::KMeans => {
            if params.k == 0 {
                return Err(ClusterError::ZeroK);
            }
            let distinct = distinct_count(&points);
            let k = if params.k > distinct {
                warn!("k = {} exceeds {distinct} distinct feature vectors; reduced", params.k);
                distinct
            } else {
                params.k
            };
            kmeans(&points, k, seed).centroids
        }
        ClusterMethod::Dbscan => {
            let labels = dbscan(&points, params.eps_dist, params.min_pts);
            let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
            if clusters == 0 {
                warn!("dbscan marked every feature vector as noise; using the global mean");
                vec![mean_of(points.iter(), dims)]
            } else {
                (0..clusters)
                    .map(|c| {
                        mean_of(
                            points.iter().zip(&labels).filter(|(_, l)| **l == Some(c)).map(|(p, _)| p),
                            dims,
                        )
                    })
                    .collect()
            }
        }
        ClusterMethod::Manual => unreachable!(),
    };
    Ok(centroids
        .iter()
        .map(|c| FeatureVector::new(norm.invert(c)))
        .collect())
}

/// Index of the closest centroid, on features min-max normalized over the
/// centroids. Ties go to the lowest index.
pub fn nearest_centroid(features: &[f64], centroids: &[FeatureVector]) -> usize {
    if centroids.len() <= 1 || features.is_empty() {
        return 0;
    }
    let norm = Normalizer::fit(centroids.iter().map(|c| c.values()));
    let f = norm.apply(features);
    let scaled: Vec<Vec<f64>> = centroids.iter().map(|c| norm.apply(c)).collect();
    nearest(&f, &scaled).0
}

/// Index of the closest centroid for each point; how noise is handed to a
/// cluster.
pub fn assign(features: &[FeatureVector], centroids: &[FeatureVector]) -> Vec<usize> {
    features.iter().map(|f| nearest_centroid(f, centroids)).collect()
}

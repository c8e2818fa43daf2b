//! A synthetic stand-in for a geometric docking kernel whose run time
//! depends on the ligand being docked.
//!
//! Ligands have `atoms ∈ [28, 153]` and `rotamers ∈ [2, 53]`, drawn
//! uniformly. With knobs `a ∈ 1..=8` and `b ∈ 1..=6`:
//!
//! ```text
//! time    = base(a, b) · f(atoms, rotamers) · noise
//! base    = c0 + c1·a + c2·b
//! f       = d0 + d1·atoms + d2·rotamers
//! noise   ~ LogNormal(−σ²/2, σ)          (mean 1; exactly 1 when σ = 0)
//! quality = q · a · b
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;

use crate::domain::{ApplicationDescription, ClusterMethod, KnobDomain};

pub const ATOMS: (u32, u32) = (28, 153);
pub const ROTAMERS: (u32, u32) = (2, 53);

/// Coefficients of the workload. The defaults are the published oracle.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct DocklikeParams {
    pub c: [f64; 3],
    pub d: [f64; 3],
    pub q: f64,
    /// Log-space standard deviation of the multiplicative noise.
    pub sigma: f64,
}

impl Default for DocklikeParams {
    fn default() -> Self {
        Self {
            c: [1.0, 0.5, 0.75],
            d: [0.1, 0.01, 0.04],
            q: 10.0,
            sigma: 0.2,
        }
    }
}

impl DocklikeParams {
    pub fn zero_noise(self) -> Self {
        Self { sigma: 0.0, ..self }
    }

    pub fn base(&self, a: f64, b: f64) -> f64 {
        self.c[0] + self.c[1] * a + self.c[2] * b
    }

    pub fn f(&self, atoms: f64, rotamers: f64) -> f64 {
        self.d[0] + self.d[1] * atoms + self.d[2] * rotamers
    }

    /// Noise-free EFPs `[time, quality]`.
    pub fn oracle(&self, config: &[f64], features: &[f64]) -> Vec<f64> {
        let (a, b) = (config[0], config[1]);
        vec![self.base(a, b) * self.f(features[0], features[1]), self.q * a * b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ligand {
    pub atoms: u32,
    pub rotamers: u32,
}

impl Ligand {
    pub fn features(&self) -> [f64; 2] {
        [self.atoms as f64, self.rotamers as f64]
    }
}

/// A seeded ligand stream plus the noise source.
#[derive(Debug, Clone)]
pub struct Docklike {
    pub params: DocklikeParams,
    rng: ChaCha8Rng,
    noise: Option<LogNormal<f64>>,
}

impl Docklike {
    pub fn new(params: DocklikeParams, seed: u64) -> Self {
        let s = params.sigma;
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: (s > 0.0).then(|| LogNormal::new(-s * s / 2.0, s).expect("finite sigma")),
        }
    }

    pub fn next_ligand(&mut self) -> Ligand {
        Ligand {
            atoms: self.rng.random_range(ATOMS.0..=ATOMS.1),
            rotamers: self.rng.random_range(ROTAMERS.0..=ROTAMERS.1),
        }
    }

    /// Measured `[time, quality]` of docking `ligand` with `config`.
    pub fn measure(&mut self, config: &[f64], ligand: &Ligand) -> Vec<f64> {
        let mut v = self.params.oracle(config, &ligand.features());
        if let Some(n) = &self.noise {
            v[0] *= n.sample(&mut self.rng);
        }
        v
    }
}

/// Knobs `a ∈ 1..=8`, `b ∈ 1..=6`; EFPs `time`, `quality`; features
/// `atoms`, `rotamers`; k-means with `k` clusters.
pub fn docklike_description(k: usize) -> ApplicationDescription {
    let mut d = ApplicationDescription::new(
        "docklike",
        vec![
            KnobDomain::range("a", 1.0, 8.0, 1.0).unwrap(),
            KnobDomain::range("b", 1.0, 6.0, 1.0).unwrap(),
        ],
        vec!["time".into(), "quality".into()],
        vec!["atoms".into(), "rotamers".into()],
    );
    d.cluster_params.method = ClusterMethod::KMeans;
    d.cluster_params.k = k.max(1);
    d
}

//! Two-domain benchmark with a known shared label map.
//!
//! Both domains draw a low-dimensional latent `z` (the domains differ by a
//! mean shift) and map it to valence and arousal through the same
//! linear-plus-quadratic function squashed by `tanh`, with Gaussian label
//! noise. Features are a fixed random linear embedding of `z` plus noise.
//! Each domain also has its own block of high-variance nuisance features
//! that are near-constant in the other domain.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, SampleId};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_per_domain: usize,
    pub n_features: usize,
    pub n_latent: usize,
    /// Nuisance features owned by each domain.
    pub n_nuisance: usize,
    pub label_noise: f64,
    pub feature_noise: f64,
    /// Latent mean offset between the domains.
    pub domain_shift: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_per_domain: 400,
            n_features: 50,
            n_latent: 4,
            n_nuisance: 10,
            label_noise: 0.2,
            feature_noise: 0.3,
            domain_shift: 0.25,
        }
    }
}

struct LabelMap {
    linear: Array2<f64>,
    quadratic: Vec<Array2<f64>>,
}

impl LabelMap {
    fn eval(&self, z: &Array1<f64>) -> [f64; 2] {
        let lin = self.linear.dot(z);
        [0, 1].map(|t| (lin[t] + z.dot(&self.quadratic[t].dot(z))).tanh())
    }
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let e: f64 = StandardNormal.sample(rng);
        scale * e
    })
}

/// Domains `synth-a` and `synth-b`, generated from `seed`.
pub fn generate(config: &SyntheticConfig, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let SyntheticConfig {
        n_per_domain: n,
        n_features,
        n_latent: d,
        n_nuisance,
        label_noise,
        feature_noise,
        domain_shift,
    } = *config;
    assert!(2 * n_nuisance < n_features, "nuisance blocks leave no shared features");
    let n_shared = n_features - 2 * n_nuisance;

    let mut shared = seeding::stream(seed, "synthetic-shared", 0);
    let map = LabelMap {
        linear: normal_matrix(&mut shared, 2, d, 0.8 / (d as f64).sqrt()),
        quadratic: (0..2).map(|_| normal_matrix(&mut shared, d, d, 0.5 / d as f64)).collect(),
    };
    let embed = normal_matrix(&mut shared, n_shared, d, 1.0 / (d as f64).sqrt());

    let domain = |index: usize, name: &str| {
        let mut rng = seeding::stream(seed, "synthetic-domain", index as u64);
        let shift = if index == 0 { domain_shift } else { -domain_shift };
        let nuisance_embed = normal_matrix(&mut rng, n_nuisance, 2, 1.5);
        let own = n_shared + index * n_nuisance;
        let mut x = Array2::<f64>::zeros((n, n_features));
        let mut valence = Array1::<f64>::zeros(n);
        let mut arousal = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut z: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            z[0] += shift;
            let clean = embed.dot(&z);
            for j in 0..n_shared {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = clean[j] + feature_noise * e;
            }
            let u: Array1<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nuisance = nuisance_embed.dot(&u);
            for j in n_shared..n_features {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = if (own..own + n_nuisance).contains(&j) {
                    nuisance[j - own] + 0.1 * e
                } else {
                    0.05 * e
                };
            }
            let [v, a] = map.eval(&z);
            let ev: f64 = StandardNormal.sample(&mut rng);
            let ea: f64 = StandardNormal.sample(&mut rng);
            valence[i] = (v + label_noise * ev).clamp(-1.0, 1.0);
            arousal[i] = (a + label_noise * ea).clamp(-1.0, 1.0);
        }
        let ids = (0..n)
            .map(|i| SampleId::new(format!("{name}-{i:04}")).expect("non-empty"))
            .collect();
        let names = (0..n_features).map(|j| format!("f{j:03}")).collect();
        LabeledDataset::new(name, ids, names, x, valence, arousal, None).expect("generated data is valid")
    };
    (domain(0, "synth-a"), domain(1, "synth-b"))
}

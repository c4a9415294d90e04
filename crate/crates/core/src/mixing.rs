//! Composition of mixed training sets and the randomized-label baseline.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, LabeledDataset, SampleId};
use crate::seeding;
use crate::stratification::{self, ClusterAssignment, StratificationError};

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("invalid mix (k={k}, p={p}): both must lie in [0, 1] and one must equal 1")]
    InvalidSpec { k: f64, p: f64 },
    #[error("feature dimension mismatch: {0}")]
    FeatureDimensionMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Stratification(#[from] StratificationError),
}

pub type Result<T> = std::result::Result<T, MixingError>;

/// Fractions of dataset `A` (`k`) and dataset `B` (`p`) entering a training
/// set; one of the two is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixSpec")]
pub struct MixSpec {
    k: f64,
    p: f64,
}

#[derive(Deserialize)]
struct RawMixSpec {
    k: f64,
    p: f64,
}

impl TryFrom<RawMixSpec> for MixSpec {
    type Error = MixingError;

    fn try_from(raw: RawMixSpec) -> Result<Self> {
        MixSpec::new(raw.k, raw.p)
    }
}

impl MixSpec {
    pub fn new(k: f64, p: f64) -> Result<Self> {
        let in_range = |x: f64| (0.0..=1.0).contains(&x);
        if in_range(k) && in_range(p) && k.max(p) == 1.0 {
            Ok(MixSpec { k, p })
        } else {
            Err(MixingError::InvalidSpec { k, p })
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Expected mixed-set size for populations of `n_a` and `n_b` samples.
    pub fn mixed_size(&self, n_a: usize, n_b: usize) -> usize {
        stratification::round_half_up(self.k * n_a as f64) + stratification::round_half_up(self.p * n_b as f64)
    }

    /// Every valid cell of `grid × grid` (those with `max(k, p) == 1`),
    /// ordered by `(k, p)`.
    pub fn full_grid(grid: &[f64]) -> Vec<MixSpec> {
        let mut specs = Vec::new();
        for &k in grid {
            for &p in grid {
                if let Ok(spec) = MixSpec::new(k, p) {
                    specs.push(spec);
                }
            }
        }
        specs
    }

    /// `(1, p)` for every `p` in `grid`.
    pub fn vary_p(grid: &[f64]) -> Vec<MixSpec> {
        grid.iter().filter_map(|&p| MixSpec::new(1.0, p).ok()).collect()
    }

    /// `(k, 1)` for every `k` in `grid`.
    pub fn vary_k(grid: &[f64]) -> Vec<MixSpec> {
        grid.iter().filter_map(|&k| MixSpec::new(k, 1.0).ok()).collect()
    }
}

impl std::fmt::Display for MixSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k={}, p={}", self.k, self.p)
    }
}

/// The default sweep grid `{0, 0.2, 0.4, 0.6, 0.8, 1}`.
pub fn default_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

/// A concatenation of stratified sub-samples of two datasets.
///
/// Sample ids are qualified as `domain:id` so that the two sources cannot
/// collide; `provenance` holds each sample's source domain.
#[derive(Debug, Clone)]
pub struct MixedDataset {
    samples: LabeledDataset,
    provenance: Vec<String>,
    assignment: ClusterAssignment,
    spec: MixSpec,
    seed: u64,
}

impl MixedDataset {
    pub fn samples(&self) -> &LabeledDataset {
        &self.samples
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Stratification classes of the mixed set; the two sources never share
    /// a class.
    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn spec(&self) -> MixSpec {
        self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the samples that came from `domain`.
    pub fn indices_of(&self, domain: &str) -> Vec<usize> {
        self.provenance
            .iter()
            .enumerate()
            .filter(|(_, d)| d.as_str() == domain)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn manifest(&self) -> MixManifest {
        let mut counts = BTreeMap::new();
        for d in &self.provenance {
            *counts.entry(d.clone()).or_insert(0usize) += 1;
        }
        MixManifest {
            k: self.spec.k,
            p: self.spec.p,
            seed: self.seed,
            counts,
            ids: self.samples.ids().to_vec(),
            checksum: self.samples.checksum(),
        }
    }
}

/// JSON record of a mixed training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub k: f64,
    pub p: f64,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub ids: Vec<SampleId>,
    pub checksum: String,
}

/// Ids of the form `domain:id`.
pub fn qualify(ds: &LabeledDataset) -> dataset::Result<LabeledDataset> {
    let ids = ds
        .ids()
        .iter()
        .map(|id| SampleId::new(format!("{}:{}", ds.domain(), id)).expect("non-empty"))
        .collect();
    LabeledDataset::new(
        ds.domain(),
        ids,
        ds.feature_names().to_vec(),
        ds.features().to_owned(),
        ds.valence().to_owned(),
        ds.arousal().to_owned(),
        ds.category().map(<[String]>::to_vec),
    )
}

/// Builds `round(k·|A|) + round(p·|B|)` training samples.
///
/// Each side is reduced by [`stratification::stratified_subsample`] with a
/// sub-seed derived from `(seed, domain)`; the parts are concatenated `A`
/// first and their rows are kept bit-for-bit.
pub fn mix_datasets(
    a: &LabeledDataset,
    a_assign: &ClusterAssignment,
    b: &LabeledDataset,
    b_assign: &ClusterAssignment,
    spec: MixSpec,
    seed: u64,
) -> Result<MixedDataset> {
    if a.n_features() != b.n_features() {
        return Err(MixingError::FeatureDimensionMismatch(format!(
            "{:?} has {} columns, {:?} has {}",
            a.domain(),
            a.n_features(),
            b.domain(),
            b.n_features()
        )));
    }
    check_len(a, a_assign)?;
    check_len(b, b_assign)?;
    let pick_a = stratification::stratified_subsample_indices(
        a_assign,
        spec.k,
        seeding::sub_seed(seed, a.domain(), 0),
    )?;
    let pick_b = stratification::stratified_subsample_indices(
        b_assign,
        spec.p,
        seeding::sub_seed(seed, b.domain(), 1),
    )?;
    let part_a = qualify(&a.select(&pick_a))?;
    let part_b = qualify(&b.select(&pick_b))?;
    let samples = LabeledDataset::concat(format!("{}+{}", a.domain(), b.domain()), &part_a, &part_b)?;
    let provenance = std::iter::repeat_n(a.domain().to_string(), pick_a.len())
        .chain(std::iter::repeat_n(b.domain().to_string(), pick_b.len()))
        .collect();
    let assignment = ClusterAssignment::concat(samples.domain(), &a_assign.subset(&pick_a), &b_assign.subset(&pick_b));
    Ok(MixedDataset {
        samples,
        provenance,
        assignment,
        spec,
        seed,
    })
}

fn check_len(ds: &LabeledDataset, assignment: &ClusterAssignment) -> Result<()> {
    if ds.len() != assignment.len() {
        return Err(StratificationError::LengthMismatch {
            assigned: assignment.len(),
            expected: ds.len(),
        }
        .into());
    }
    Ok(())
}

/// Copy of `ds` whose labels are i.i.d. uniform on `[-1, 1]`.
pub fn randomize_labels(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut rng = seeding::stream(seed, "randomize-labels", 0);
    let n = ds.len();
    let valence: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let arousal: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    ds.with_labels(valence, arousal)
        .expect("uniform labels are in range and the rest is unchanged")
}

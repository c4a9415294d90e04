//! Stratification of continuous labels.
//!
//! The `(valence, arousal)` plane is partitioned by agglomerative Ward
//! clustering; each cluster becomes a stratification class for k-fold
//! splitting and for proportional sub-sampling.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, SampleId};
use crate::seeding;

#[derive(Debug, Error)]
pub enum StratificationError {
    #[error("cannot cluster an empty label set")]
    EmptyInput,
    #[error("non-finite label at row {0}")]
    NonFiniteLabel(usize),
    #[error("minimum cluster size must be positive")]
    InvalidMinClusterSize,
    #[error("need at least two folds, got {0}")]
    InvalidFoldCount(usize),
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("assignment covers {assigned} samples, dataset has {expected}")]
    LengthMismatch { assigned: usize, expected: usize },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed split file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, StratificationError>;

/// Cluster membership of every sample of one dataset. Cluster ids are dense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    dataset_domain: String,
    cluster_of: Vec<usize>,
    cluster_sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Builds an assignment from raw ids, which must cover `0..C` densely.
    pub fn new(dataset_domain: impl Into<String>, cluster_of: Vec<usize>) -> Result<Self> {
        let n_clusters = cluster_of.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut cluster_sizes = vec![0; n_clusters];
        for &c in &cluster_of {
            cluster_sizes[c] += 1;
        }
        if let Some(empty) = cluster_sizes.iter().position(|&s| s == 0) {
            return Err(StratificationError::InvalidAssignment(format!(
                "cluster id {empty} is unused"
            )));
        }
        Ok(ClusterAssignment {
            dataset_domain: dataset_domain.into(),
            cluster_of,
            cluster_sizes,
        })
    }

    pub fn dataset_domain(&self) -> &str {
        &self.dataset_domain
    }

    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn len(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_of.is_empty()
    }

    /// Member indices of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters()];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    /// Restriction to `indices`; clusters left empty are dropped and the
    /// rest renumbered in their original order.
    pub fn subset(&self, indices: &[usize]) -> ClusterAssignment {
        let mut used = vec![false; self.n_clusters()];
        for &i in indices {
            used[self.cluster_of[i]] = true;
        }
        let mut remap = vec![usize::MAX; used.len()];
        let mut next = 0;
        for (c, &u) in used.iter().enumerate() {
            if u {
                remap[c] = next;
                next += 1;
            }
        }
        let cluster_of = indices.iter().map(|&i| remap[self.cluster_of[i]]).collect();
        ClusterAssignment::new(self.dataset_domain.clone(), cluster_of).expect("dense by construction")
    }

    /// Stacks two assignments, keeping their classes disjoint.
    pub fn concat(domain: impl Into<String>, first: &ClusterAssignment, second: &ClusterAssignment) -> ClusterAssignment {
        let offset = first.n_clusters();
        let cluster_of = first
            .cluster_of
            .iter()
            .copied()
            .chain(second.cluster_of.iter().map(|&c| c + offset))
            .collect();
        ClusterAssignment::new(domain, cluster_of).expect("dense by construction")
    }
}

/// One executed merge of the agglomeration. Clusters are named by their
/// smallest member index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WardMerge {
    pub first: usize,
    pub second: usize,
    /// Increase of the total within-cluster sum of squares.
    pub cost: f64,
    pub merged_size: usize,
}

/// Result of [`ward_agglomerate`]: the final flat partition and its history.
#[derive(Debug, Clone)]
pub struct WardOutcome {
    pub cluster_of: Vec<usize>,
    pub merges: Vec<WardMerge>,
}

/// Agglomerative Ward clustering with a minimum-size stopping rule.
///
/// Starting from singletons, the pair with the smallest Ward merge cost
/// `|A||B| / (|A|+|B|) · ‖c_A − c_B‖²` is merged as long as any cluster is
/// smaller than `min_cluster_size`. Only pairs involving at least one
/// undersized cluster are eligible, so clusters that already satisfy the rule
/// are never fused with each other. Costs are maintained with the
/// Lance–Williams recurrence; ties go to the lexicographically smallest pair
/// of cluster names.
pub fn ward_agglomerate(points: ArrayView2<'_, f64>, min_cluster_size: usize) -> Result<WardOutcome> {
    let n = points.nrows();
    if n == 0 {
        return Err(StratificationError::EmptyInput);
    }
    if min_cluster_size == 0 {
        return Err(StratificationError::InvalidMinClusterSize);
    }
    for (row, p) in points.outer_iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(StratificationError::NonFiniteLabel(row));
        }
    }

    let mut cost = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cost[i * n + j] = 0.5 * d2;
            cost[j * n + i] = 0.5 * d2;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut n_active = n;
    let mut n_small = if min_cluster_size > 1 { n } else { 0 };

    let legal = |size: &[usize], a: usize, b: usize| size[a] < min_cluster_size || size[b] < min_cluster_size;

    // nearest[i]: best eligible partner j > i as (cost, j).
    let row_best = |i: usize, size: &[usize], active: &[bool], cost: &[f64]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if active[j] && legal(size, i, j) {
                let c = cost[i * n + j];
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, j));
                }
            }
        }
        best
    };
    let mut nearest: Vec<Option<(f64, usize)>> = (0..n).map(|i| row_best(i, &size, &active, &cost)).collect();

    let mut merges = Vec::new();
    while n_small > 0 && n_active > 1 {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((c, j)) = nearest[i] {
                if pick.is_none_or(|(pc, _, _)| c < pc) {
                    pick = Some((c, i, j));
                }
            }
        }
        let (merge_cost, a, b) = pick.expect("an undersized cluster always has an eligible partner");

        let (na, nb) = (size[a] as f64, size[b] as f64);
        let d_ab = cost[a * n + b];
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let updated = ((na + nk) * cost[k * n + a] + (nb + nk) * cost[k * n + b] - nk * d_ab) / (na + nb + nk);
            cost[k * n + a] = updated;
            cost[a * n + k] = updated;
        }
        let was_small = (size[a] < min_cluster_size) as usize + (size[b] < min_cluster_size) as usize;
        size[a] += size[b];
        active[b] = false;
        n_active -= 1;
        n_small = n_small + (size[a] < min_cluster_size) as usize - was_small;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        merges.push(WardMerge {
            first: a,
            second: b,
            cost: merge_cost,
            merged_size: size[a],
        });

        nearest[b] = None;
        nearest[a] = row_best(a, &size, &active, &cost);
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            match nearest[k] {
                Some((_, t)) if t == a || t == b => nearest[k] = row_best(k, &size, &active, &cost),
                current if k < a && legal(&size, k, a) => {
                    let c = cost[k * n + a];
                    if current.is_none_or(|(bc, bj)| c < bc || (c == bc && a < bj)) {
                        nearest[k] = Some((c, a));
                    }
                }
                _ => {}
            }
        }
    }

    let mut cluster_of = vec![0usize; n];
    let mut next = 0;
    for rep in 0..n {
        if active[rep] {
            for &i in &members[rep] {
                cluster_of[i] = next;
            }
            next += 1;
        }
    }
    Ok(WardOutcome { cluster_of, merges })
}

/// Ward clustering of an `n × 2` `(valence, arousal)` matrix.
pub fn ward_cluster(
    domain: &str,
    labels: ArrayView2<'_, f64>,
    min_cluster_size: usize,
) -> Result<ClusterAssignment> {
    let outcome = ward_agglomerate(labels, min_cluster_size)?;
    ClusterAssignment::new(domain, outcome.cluster_of)
}

/// Clusters a dataset on its own labels.
pub fn cluster_dataset(ds: &LabeledDataset, min_cluster_size: usize) -> Result<ClusterAssignment> {
    ward_cluster(ds.domain(), ds.label_matrix().view(), min_cluster_size)
}

/// Stratification class per sample: the cluster id itself.
pub fn assign_classes(assignment: &ClusterAssignment) -> Vec<usize> {
    assignment.cluster_of.clone()
}

/// A partition of a dataset into `n_folds` stratified folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    n_folds: usize,
    fold_of: Vec<usize>,
    seed: u64,
    /// Clusters smaller than the fold count; some folds miss these classes.
    #[serde(default)]
    undersized_clusters: Vec<usize>,
}

impl FoldPlan {
    pub fn new(n_folds: usize, fold_of: Vec<usize>, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(StratificationError::InvalidFoldCount(n_folds));
        }
        if let Some(&bad) = fold_of.iter().find(|&&f| f >= n_folds) {
            return Err(StratificationError::InvalidAssignment(format!(
                "fold id {bad} with {n_folds} folds"
            )));
        }
        Ok(FoldPlan {
            n_folds,
            fold_of,
            seed,
            undersized_clusters: Vec::new(),
        })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn undersized_clusters(&self) -> &[usize] {
        &self.undersized_clusters
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment.
///
/// Within each cluster the members are shuffled by a stream keyed on
/// `(seed, cluster)` and dealt round-robin over the folds. The dealing
/// position carries over from one cluster to the next so that remainders
/// spread across folds instead of piling onto fold 0.
pub fn stratified_kfold(assignment: &ClusterAssignment, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(StratificationError::InvalidFoldCount(n_folds));
    }
    let mut fold_of = vec![0usize; assignment.len()];
    let mut undersized_clusters = Vec::new();
    let mut offset = 0;
    for (c, mut members) in assignment.members().into_iter().enumerate() {
        if members.len() < n_folds {
            log::warn!(
                "cluster {c} of {:?} has {} samples for {n_folds} folds",
                assignment.dataset_domain,
                members.len()
            );
            undersized_clusters.push(c);
        }
        members.shuffle(&mut seeding::stream(seed, "kfold-cluster", c as u64));
        for (t, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + t) % n_folds;
        }
        offset = (offset + members.len()) % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        fold_of,
        seed,
        undersized_clusters,
    })
}

/// `floor(x + 0.5)` for non-negative `x`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-cluster sample quotas for drawing `fraction` of every cluster.
///
/// The total is `round_half_up(fraction · n)`; clusters first receive
/// `floor(fraction · size)` and the remaining units go to the largest
/// fractional parts (lower cluster id first on ties).
pub fn apportion(cluster_sizes: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(StratificationError::InvalidFraction(fraction));
    }
    let n: usize = cluster_sizes.iter().sum();
    let target = round_half_up(fraction * n as f64).min(n);
    let shares: Vec<f64> = cluster_sizes.iter().map(|&s| fraction * s as f64).collect();
    let mut quotas: Vec<usize> = shares
        .iter()
        .zip(cluster_sizes)
        .map(|(s, &size)| (s.floor() as usize).min(size))
        .collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..cluster_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(assigned);
    while missing > 0 {
        let before = missing;
        for &c in &order {
            if missing == 0 {
                break;
            }
            if quotas[c] < cluster_sizes[c] {
                quotas[c] += 1;
                missing -= 1;
            }
        }
        if missing == before {
            break;
        }
    }
    Ok(quotas)
}

/// Indices (ascending) of a stratified random sub-sample.
pub fn stratified_subsample_indices(
    assignment: &ClusterAssignment,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let quotas = apportion(&assignment.cluster_sizes, fraction)?;
    let mut picked = Vec::with_capacity(quotas.iter().sum());
    for (c, mut members) in assignment.members().into_iter().enumerate() {
        if quotas[c] == members.len() {
            picked.extend(members);
            continue;
        }
        members.shuffle(&mut seeding::stream(seed, "subsample-cluster", c as u64));
        picked.extend_from_slice(&members[..quotas[c]]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Stratified sub-sample of `ds`, keeping the original sample order.
pub fn stratified_subsample(
    ds: &LabeledDataset,
    assignment: &ClusterAssignment,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if assignment.len() != ds.len() {
        return Err(StratificationError::LengthMismatch {
            assigned: assignment.len(),
            expected: ds.len(),
        });
    }
    let picked = stratified_subsample_indices(assignment, fraction, seed)?;
    Ok(ds.select(&picked))
}

/// Stratified two-way split: `(kept, rest)` with `kept` drawn as a
/// `fraction` sub-sample.
pub fn stratified_split(
    assignment: &ClusterAssignment,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let kept = stratified_subsample_indices(assignment, fraction, seed)?;
    let mut in_kept = vec![false; assignment.len()];
    for &i in &kept {
        in_kept[i] = true;
    }
    let rest = (0..assignment.len()).filter(|&i| !in_kept[i]).collect();
    Ok((kept, rest))
}

fn write_pairs(path: &Path, column: &str, ids: &[SampleId], values: &[usize]) -> Result<()> {
    if ids.len() != values.len() {
        return Err(StratificationError::LengthMismatch {
            assigned: values.len(),
            expected: ids.len(),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["id", column]).map_err(csv_io)?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id.as_str(), &v.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn read_pairs(path: &Path, column: &str, ids: &[SampleId]) -> Result<Vec<usize>> {
    let file = File::open(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers().map_err(csv_format)?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", column] {
        return Err(StratificationError::Format(format!("expected header id,{column}")));
    }
    let mut by_id = HashMap::new();
    for record in r.records() {
        let record = record.map_err(csv_format)?;
        let value: usize = record[1]
            .parse()
            .map_err(|_| StratificationError::Format(format!("bad {column} value {:?}", &record[1])))?;
        by_id.insert(record[0].to_string(), value);
    }
    if by_id.len() != ids.len() {
        return Err(StratificationError::LengthMismatch {
            assigned: by_id.len(),
            expected: ids.len(),
        });
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| StratificationError::Format(format!("no {column} for sample {id}")))
        })
        .collect()
}

fn csv_io(e: csv::Error) -> StratificationError {
    StratificationError::Io(std::io::Error::other(e.to_string()))
}

fn csv_format(e: csv::Error) -> StratificationError {
    StratificationError::Format(e.to_string())
}

/// Writes `id,cluster` rows.
pub fn write_assignment(path: impl AsRef<Path>, ids: &[SampleId], assignment: &ClusterAssignment) -> Result<()> {
    write_pairs(path.as_ref(), "cluster", ids, &assignment.cluster_of)
}

/// Reads `id,cluster` rows back in the order of `ids`.
pub fn read_assignment(path: impl AsRef<Path>, ids: &[SampleId], domain: &str) -> Result<ClusterAssignment> {
    let cluster_of = read_pairs(path.as_ref(), "cluster", ids)?;
    ClusterAssignment::new(domain, cluster_of)
}

/// Writes `id,fold` rows.
pub fn write_fold_plan(path: impl AsRef<Path>, ids: &[SampleId], plan: &FoldPlan) -> Result<()> {
    write_pairs(path.as_ref(), "fold", ids, &plan.fold_of)
}

/// Reads `id,fold` rows back in the order of `ids`.
pub fn read_fold_plan(path: impl AsRef<Path>, ids: &[SampleId], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    let fold_of = read_pairs(path.as_ref(), "fold", ids)?;
    FoldPlan::new(n_folds, fold_of, seed)
}

//! Hyperparameter search by successive halving, and greedy forward ensemble
//! selection over the best candidates.
//!
//! A search works on one training matrix. A stratified hold-out is split
//! off once for scoring; every rung trains its candidates on a stratified
//! sub-sample of the remaining rows whose size grows geometrically up to
//! the whole training part. Scores are the mean over source domains of the
//! per-domain validation MSE, so a small domain is not drowned out by a
//! large one.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{
    EnsembleModel, FittedPipeline, KernelSpec, LearnerError, ModelFamily, ModelSpec, PipelineConfig,
    PreparedFeatures, Regressor,
};
use crate::seeding;
use crate::stratification::{self, ClusterAssignment, StratificationError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no candidates to search")]
    EmptyGrid,
    #[error("invalid search settings: {0}")]
    InvalidSettings(String),
    #[error("every candidate failed to fit")]
    NoViableCandidate,
    #[error("{what} has {got} rows, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Stratification(#[from] StratificationError),
}

pub type Result<T> = std::result::Result<T, SearchError>;

fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo_exp)];
    }
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

/// The hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub pca_thresholds: Vec<f64>,
    pub alphas: Vec<f64>,
    pub l1_ratios: Vec<f64>,
    pub cs: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            pca_thresholds: vec![0.8, 0.9, 0.95, 0.99],
            alphas: logspace(-4.0, 1.0, 6),
            l1_ratios: vec![0.1, 0.5, 0.9],
            cs: logspace(-2.0, 3.0, 6),
            epsilons: vec![0.01, 0.1, 0.2],
            kernels: vec![
                KernelSpec::Linear,
                KernelSpec::Rbf { gamma_scale: 0.1 },
                KernelSpec::Rbf { gamma_scale: 1.0 },
                KernelSpec::Rbf { gamma_scale: 10.0 },
            ],
        }
    }
}

impl SearchSpace {
    /// Every configuration of `family`, in a fixed order.
    pub fn candidates(&self, family: ModelFamily) -> Vec<PipelineConfig> {
        let models: Vec<ModelSpec> = match family {
            ModelFamily::ElasticNet => self
                .alphas
                .iter()
                .flat_map(|&alpha| {
                    self.l1_ratios
                        .iter()
                        .map(move |&l1_ratio| ModelSpec::ElasticNet { alpha, l1_ratio })
                })
                .collect(),
            ModelFamily::Svr => self
                .cs
                .iter()
                .flat_map(|&c| {
                    self.epsilons.iter().flat_map(move |&epsilon| {
                        self.kernels
                            .iter()
                            .map(move |&kernel| ModelSpec::Svr { c, epsilon, kernel })
                    })
                })
                .collect(),
        };
        self.pca_thresholds
            .iter()
            .flat_map(|&pca_threshold| models.iter().map(move |&model| PipelineConfig { pca_threshold, model }))
            .collect()
    }

    pub fn len(&self, family: ModelFamily) -> usize {
        let models = match family {
            ModelFamily::ElasticNet => self.alphas.len() * self.l1_ratios.len(),
            ModelFamily::Svr => self.cs.len() * self.epsilons.len() * self.kernels.len(),
        };
        models * self.pca_thresholds.len()
    }

    pub fn is_empty(&self, family: ModelFamily) -> bool {
        self.len(family) == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    /// Keep `ceil(n / eta)` candidates after each rung.
    pub eta: f64,
    /// Training fraction used by the first rung.
    pub min_resource: f64,
    /// Fraction of the training rows held out for scoring.
    pub validation_fraction: f64,
    /// Evaluate a seeded random subset of this many candidates per family.
    pub budget: Option<usize>,
    /// Number of top candidates offered to ensemble selection.
    pub ensemble_library: usize,
    /// Forward-selection rounds.
    pub ensemble_rounds: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            eta: 3.0,
            min_resource: 0.2,
            validation_fraction: 0.2,
            budget: None,
            ensemble_library: 10,
            ensemble_rounds: 20,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(SearchError::InvalidSettings(format!("eta = {} (need > 1)", self.eta)));
        }
        if !(self.min_resource > 0.0 && self.min_resource <= 1.0) {
            return Err(SearchError::InvalidSettings(format!(
                "min_resource = {} (need 0 < r <= 1)",
                self.min_resource
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(SearchError::InvalidSettings(format!(
                "validation_fraction = {}",
                self.validation_fraction
            )));
        }
        if self.budget == Some(0) {
            return Err(SearchError::InvalidSettings("budget = 0".into()));
        }
        if self.ensemble_library == 0 || self.ensemble_rounds == 0 {
            return Err(SearchError::InvalidSettings("empty ensemble library or zero rounds".into()));
        }
        Ok(())
    }
}

/// Rung layout of a successive-halving run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalvingSchedule {
    pub n_candidates: usize,
    pub eta: f64,
    pub min_resource: f64,
}

impl HalvingSchedule {
    pub fn new(n_candidates: usize, eta: f64, min_resource: f64) -> Result<Self> {
        if n_candidates == 0 {
            return Err(SearchError::EmptyGrid);
        }
        SearchSettings {
            eta,
            min_resource,
            ..SearchSettings::default()
        }
        .validate()?;
        Ok(HalvingSchedule {
            n_candidates,
            eta,
            min_resource,
        })
    }

    /// `1 + ceil(log_eta n)` for integer `eta`: one rung per halving until a
    /// single candidate is left.
    pub fn n_rungs(&self) -> usize {
        let mut rungs = 1;
        let mut alive = self.n_candidates;
        while alive > 1 {
            alive = survivors_after(alive, self.eta);
            rungs += 1;
        }
        rungs
    }

    /// Training fraction of every rung, geometric from `min_resource` to 1.
    pub fn resources(&self) -> Vec<f64> {
        let n = self.n_rungs();
        if n == 1 {
            return vec![1.0];
        }
        let last = (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    1.0
                } else {
                    self.min_resource.powf((last - i as f64) / last)
                }
            })
            .collect()
    }

    /// Number of candidates trained at every rung.
    pub fn survivors(&self) -> Vec<usize> {
        let mut alive = self.n_candidates;
        (0..self.n_rungs())
            .map(|_| {
                let now = alive;
                alive = survivors_after(alive, self.eta);
                now
            })
            .collect()
    }
}

/// `ceil(n / eta)`, forced to shrink while more than one is left.
fn survivors_after(n: usize, eta: f64) -> usize {
    ((n as f64 / eta).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Training rows whose validation score decides the search.
#[derive(Debug, Clone, Copy)]
pub struct SearchData<'a> {
    pub features: ArrayView2<'a, f64>,
    pub target: ArrayView1<'a, f64>,
    /// Source-domain index of every row.
    pub groups: &'a [usize],
    pub assignment: &'a ClusterAssignment,
}

impl SearchData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.features.nrows();
        for (what, got) in [
            ("target", self.target.len()),
            ("groups", self.groups.len()),
            ("assignment", self.assignment.len()),
        ] {
            if got != n {
                return Err(SearchError::LengthMismatch { what, got, expected: n });
            }
        }
        Ok(())
    }
}

/// Mean over groups of the per-group mean squared error.
pub fn grouped_mse(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>, groups: &[usize]) -> f64 {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ((t, p), g) in truth.iter().zip(pred.iter()).zip(groups) {
        let e = acc.entry(*g).or_insert((0.0, 0));
        e.0 += (t - p) * (t - p);
        e.1 += 1;
    }
    if acc.is_empty() {
        return f64::INFINITY;
    }
    acc.values().map(|(s, c)| s / *c as f64).sum::<f64>() / acc.len() as f64
}

/// Fixed training/validation split of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn holdout_split(assignment: &ClusterAssignment, validation_fraction: f64, seed: u64) -> Result<Holdout> {
    let (train, validation) =
        stratification::stratified_split(assignment, 1.0 - validation_fraction, seeding::sub_seed(seed, "holdout", 0))?;
    Ok(Holdout { train, validation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub config: PipelineConfig,
    /// `None` when the candidate failed to fit.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungRecord {
    pub rung: usize,
    pub resource: f64,
    pub n_train: usize,
    pub scores: Vec<CandidateScore>,
}

/// Result of one successive-halving run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingOutcome {
    pub best: PipelineConfig,
    pub best_score: f64,
    /// Candidates ranked by furthest rung reached, then by score there.
    pub ranking: Vec<CandidateScore>,
    pub rungs: Vec<RungRecord>,
    pub holdout: Holdout,
}

fn score_order(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    let sa = a.score.unwrap_or(f64::INFINITY);
    let sb = b.score.unwrap_or(f64::INFINITY);
    sa.total_cmp(&sb).then_with(|| a.config.lexicographic_cmp(&b.config))
}

/// Candidate subset of size `budget`, drawn without replacement.
pub fn apply_budget(mut candidates: Vec<PipelineConfig>, budget: Option<usize>, seed: u64) -> Vec<PipelineConfig> {
    match budget {
        Some(b) if b < candidates.len() => {
            candidates.shuffle(&mut seeding::stream(seed, "search-budget", 0));
            candidates.truncate(b);
            candidates.sort_by(|a, b| a.lexicographic_cmp(b));
            candidates
        }
        _ => candidates,
    }
}

fn fit_scored(
    prepared: &PreparedFeatures,
    configs: &[PipelineConfig],
    y_train: ArrayView1<'_, f64>,
    x_val: ArrayView2<'_, f64>,
    y_val: ArrayView1<'_, f64>,
    val_groups: &[usize],
) -> Vec<CandidateScore> {
    // Candidates sharing a threshold share the projection.
    let mut thresholds: Vec<f64> = configs.iter().map(|c| c.pca_threshold).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let projections: Vec<_> = thresholds.iter().map(|&t| prepared.project(t)).collect();
    configs
        .par_iter()
        .map(|config| {
            let at = thresholds.iter().position(|&t| t == config.pca_threshold).expect("collected above");
            let score = match &projections[at] {
                Ok((pca, scores)) => prepared
                    .fit_projected(config, pca, scores.view(), y_train)
                    .and_then(|fitted| fitted.predict(x_val))
                    .map(|pred| grouped_mse(y_val, pred.view(), val_groups)),
                Err(e) => Err(e.clone()),
            };
            match score {
                Ok(s) if s.is_finite() => CandidateScore {
                    config: *config,
                    score: Some(s),
                },
                Ok(_) => CandidateScore {
                    config: *config,
                    score: None,
                },
                Err(e) => {
                    log::warn!("candidate {config} failed: {e}");
                    CandidateScore {
                        config: *config,
                        score: None,
                    }
                }
            }
        })
        .collect()
}

/// Successive halving over `candidates`.
pub fn successive_halving(
    data: SearchData<'_>,
    candidates: &[PipelineConfig],
    settings: &SearchSettings,
    seed: u64,
) -> Result<HalvingOutcome> {
    settings.validate()?;
    data.check()?;
    if candidates.is_empty() {
        return Err(SearchError::EmptyGrid);
    }
    let holdout = holdout_split(data.assignment, settings.validation_fraction, seed)?;
    if holdout.train.len() < 2 || holdout.validation.is_empty() {
        return Err(SearchError::InvalidSettings(format!(
            "{} rows are too few for a validation split",
            data.features.nrows()
        )));
    }
    let x_val = data.features.select(Axis(0), &holdout.validation);
    let y_val = data.target.select(Axis(0), &holdout.validation);
    let val_groups: Vec<usize> = holdout.validation.iter().map(|&i| data.groups[i]).collect();
    let train_assign = data.assignment.subset(&holdout.train);

    let schedule = HalvingSchedule::new(candidates.len(), settings.eta, settings.min_resource)?;
    let n_rungs = schedule.n_rungs();
    let resources = schedule.resources();
    let mut alive: Vec<PipelineConfig> = candidates.to_vec();
    let mut rungs = Vec::with_capacity(n_rungs);
    // Furthest rung reached by every candidate, with its score there.
    let mut reached: Vec<(usize, CandidateScore)> = Vec::new();

    for (rung, &resource) in resources.iter().enumerate() {
        let mut local =
            stratification::stratified_subsample_indices(&train_assign, resource, seeding::sub_seed(seed, "rung", rung as u64))?;
        if local.len() < 2 {
            local = (0..holdout.train.len()).collect();
        }
        let rows: Vec<usize> = local.iter().map(|&i| holdout.train[i]).collect();
        let x_train = data.features.select(Axis(0), &rows);
        let y_train = data.target.select(Axis(0), &rows);
        let mut scores = match PreparedFeatures::new(x_train.view()) {
            Ok(prepared) => fit_scored(&prepared, &alive, y_train.view(), x_val.view(), y_val.view(), &val_groups),
            Err(e) => {
                log::warn!("rung {rung}: preprocessing failed: {e}");
                alive
                    .iter()
                    .map(|c| CandidateScore {
                        config: *c,
                        score: None,
                    })
                    .collect()
            }
        };
        scores.sort_by(score_order);
        log::debug!(
            "rung {rung}: {} candidates on {} rows, best {:?}",
            scores.len(),
            rows.len(),
            scores[0].score
        );
        let keep = if rung + 1 == n_rungs {
            scores.len()
        } else {
            survivors_after(alive.len(), settings.eta)
        };
        reached.retain(|(_, c)| !scores.iter().any(|s| s.config == c.config));
        reached.extend(scores.iter().cloned().map(|s| (rung, s)));
        alive = scores.iter().take(keep).filter(|s| s.score.is_some()).map(|s| s.config).collect();
        rungs.push(RungRecord {
            rung,
            resource,
            n_train: rows.len(),
            scores,
        });
        if alive.is_empty() {
            break;
        }
    }

    reached.sort_by(|(ra, a), (rb, b)| rb.cmp(ra).then_with(|| score_order(a, b)));
    let ranking: Vec<CandidateScore> = reached.into_iter().map(|(_, c)| c).collect();
    let best = ranking.first().filter(|c| c.score.is_some()).ok_or(SearchError::NoViableCandidate)?;
    Ok(HalvingOutcome {
        best: best.config,
        best_score: best.score.expect("filtered"),
        ranking,
        rungs,
        holdout,
    })
}

/// Weighted list of pipeline configurations; refitting it on new rows
/// gives an [`EnsembleModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub members: Vec<RecipeMember>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeMember {
    pub config: PipelineConfig,
    pub weight: f64,
}

impl Recipe {
    pub fn single(config: PipelineConfig) -> Self {
        Recipe {
            members: vec![RecipeMember { config, weight: 1.0 }],
        }
    }

    /// Fits every member on `(x, y)` from scratch.
    pub fn fit(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<EnsembleModel> {
        if x.nrows() != y.len() {
            return Err(SearchError::LengthMismatch {
                what: "target",
                got: y.len(),
                expected: x.nrows(),
            });
        }
        let prepared = PreparedFeatures::new(x)?;
        let fitted = self
            .members
            .par_iter()
            .map(|m| prepared.fit(&m.config, y))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(EnsembleModel::new(fitted, self.members.iter().map(|m| m.weight).collect())?)
    }
}

/// Ensemble chosen by forward selection with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelection {
    pub library: Vec<PipelineConfig>,
    /// Times each library entry was picked.
    pub counts: Vec<usize>,
    pub score: f64,
    /// Validation score after every round.
    pub trace: Vec<f64>,
}

impl EnsembleSelection {
    pub fn recipe(&self) -> Recipe {
        let total: usize = self.counts.iter().sum();
        Recipe {
            members: self
                .library
                .iter()
                .zip(&self.counts)
                .filter(|(_, &c)| c > 0)
                .map(|(cfg, &c)| RecipeMember {
                    config: *cfg,
                    weight: c as f64 / total as f64,
                })
                .collect(),
        }
    }
}

/// Greedy forward selection from precomputed validation predictions.
///
/// Each round adds the entry (repeats allowed) whose inclusion gives the
/// lowest score of the averaged prediction, lowest index on ties. Selection
/// stops after `max_members` rounds or as soon as no entry improves the
/// score. `None` entries are skipped.
pub fn forward_select(
    predictions: &[Option<Array1<f64>>],
    truth: ArrayView1<'_, f64>,
    groups: &[usize],
    max_members: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if predictions.iter().all(Option::is_none) {
        return Err(SearchError::NoViableCandidate);
    }
    let mut counts = vec![0usize; predictions.len()];
    let mut sum = Array1::<f64>::zeros(truth.len());
    let mut trace: Vec<f64> = Vec::with_capacity(max_members);
    for round in 1..=max_members {
        let mut pick: Option<(f64, usize)> = None;
        for (j, pred) in predictions.iter().enumerate() {
            let Some(pred) = pred else { continue };
            let avg = (&sum + pred) / round as f64;
            let s = grouped_mse(truth, avg.view(), groups);
            if pick.is_none_or(|(b, _)| s < b) {
                pick = Some((s, j));
            }
        }
        let (s, j) = pick.expect("at least one viable entry");
        if trace.last().is_some_and(|&prev| s >= prev) {
            break;
        }
        counts[j] += 1;
        sum += predictions[j].as_ref().expect("viable");
        trace.push(s);
    }
    Ok((counts, trace))
}

/// Fits every `library` entry on the hold-out training rows and runs
/// [`forward_select`] on their validation predictions.
pub fn greedy_ensemble(
    data: SearchData<'_>,
    holdout: &Holdout,
    library: &[PipelineConfig],
    max_members: usize,
) -> Result<EnsembleSelection> {
    data.check()?;
    if library.is_empty() {
        return Err(SearchError::EmptyGrid);
    }
    let x_train = data.features.select(Axis(0), &holdout.train);
    let y_train = data.target.select(Axis(0), &holdout.train);
    let x_val = data.features.select(Axis(0), &holdout.validation);
    let y_val = data.target.select(Axis(0), &holdout.validation);
    let val_groups: Vec<usize> = holdout.validation.iter().map(|&i| data.groups[i]).collect();
    let prepared = PreparedFeatures::new(x_train.view())?;

    let predictions: Vec<Option<Array1<f64>>> = library
        .par_iter()
        .map(|cfg| {
            prepared
                .fit(cfg, y_train.view())
                .and_then(|m: FittedPipeline| m.predict(x_val.view()))
                .inspect_err(|e| log::warn!("ensemble candidate {cfg} failed: {e}"))
                .ok()
                .filter(|p| p.iter().all(|v| v.is_finite()))
        })
        .collect();
    let (counts, trace) = forward_select(&predictions, y_val.view(), &val_groups, max_members)?;
    Ok(EnsembleSelection {
        library: library.to_vec(),
        counts,
        score: *trace.last().expect("at least one round"),
        trace,
    })
}

/// How the model of a report row is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    /// A single configuration, no search.
    Fixed { config: PipelineConfig },
    /// Successive halving over one family's grid.
    Search { family: ModelFamily },
    /// Successive halving over both families, then forward ensemble selection.
    Ensemble,
}

impl Strategy {
    /// Name used in the `model` column of reports.
    pub fn label(&self) -> String {
        match self {
            Strategy::Fixed { config } => format!("{}-fixed", config.family().name()),
            Strategy::Search { family } => family.name().to_string(),
            Strategy::Ensemble => "ensemble".to_string(),
        }
    }
}

/// Output of [`select`]: the recipe plus the searches that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub recipe: Recipe,
    pub searches: Vec<(ModelFamily, HalvingOutcome)>,
    pub ensemble: Option<EnsembleSelection>,
}

/// Runs `strategy` on `data` and returns the recipe to refit.
pub fn select(
    strategy: &Strategy,
    data: SearchData<'_>,
    space: &SearchSpace,
    settings: &SearchSettings,
    seed: u64,
) -> Result<Selection> {
    let families = match strategy {
        Strategy::Fixed { config } => {
            return Ok(Selection {
                recipe: Recipe::single(*config),
                searches: Vec::new(),
                ensemble: None,
            })
        }
        Strategy::Search { family } => vec![*family],
        Strategy::Ensemble => vec![ModelFamily::ElasticNet, ModelFamily::Svr],
    };
    let mut searches = Vec::with_capacity(families.len());
    for family in families {
        let candidates = apply_budget(space.candidates(family), settings.budget, seeding::sub_seed(seed, family.name(), 0));
        searches.push((family, successive_halving(data, &candidates, settings, seed)?));
    }
    if let Strategy::Search { .. } = strategy {
        let best = searches[0].1.best;
        return Ok(Selection {
            recipe: Recipe::single(best),
            searches,
            ensemble: None,
        });
    }
    let library: Vec<PipelineConfig> = searches
        .iter()
        .flat_map(|(_, s)| {
            s.ranking
                .iter()
                .filter(|c| c.score.is_some())
                .take(settings.ensemble_library)
                .map(|c| c.config)
        })
        .collect();
    let holdout = &searches[0].1.holdout;
    let ensemble = greedy_ensemble(data, holdout, &library, settings.ensemble_rounds)?;
    Ok(Selection {
        recipe: ensemble.recipe(),
        searches,
        ensemble: Some(ensemble),
    })
}

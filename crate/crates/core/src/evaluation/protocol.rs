use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{aggregate, CvReport, MetricRecord};
use super::{mse, r2, EvaluationError, Result};
use crate::dataset::{LabeledDataset, Target};
use crate::learners::{ModelFamily, Regressor};
use crate::mixing::{self, MixSpec, MixedDataset};
use crate::search::{self, Recipe, SearchData, SearchSettings, SearchSpace, Selection, Strategy};
use crate::seeding;
use crate::stratification::{ClusterAssignment, FoldPlan};

/// A dataset with its stratification classes and fold plan.
#[derive(Debug, Clone)]
pub struct Corpus {
    data: LabeledDataset,
    assignment: ClusterAssignment,
    folds: FoldPlan,
}

impl Corpus {
    pub fn new(data: LabeledDataset, assignment: ClusterAssignment, folds: FoldPlan) -> Result<Self> {
        let invalid = |reason: String| EvaluationError::InvalidCorpus {
            domain: data.domain().to_string(),
            reason,
        };
        if assignment.len() != data.len() {
            return Err(invalid(format!(
                "{} cluster labels for {} samples",
                assignment.len(),
                data.len()
            )));
        }
        if folds.len() != data.len() {
            return Err(invalid(format!("{} fold labels for {} samples", folds.len(), data.len())));
        }
        if let Some(f) = (0..folds.n_folds()).find(|&f| folds.test_indices(f).is_empty()) {
            return Err(invalid(format!("fold {f} is empty")));
        }
        Ok(Corpus {
            data,
            assignment,
            folds,
        })
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn folds(&self) -> &FoldPlan {
        &self.folds
    }

    fn train_part(&self, fold: usize) -> (LabeledDataset, ClusterAssignment) {
        let idx = self.folds.train_indices(fold);
        (self.data.select(&idx), self.assignment.subset(&idx))
    }

    fn test_part(&self, fold: usize) -> LabeledDataset {
        self.data.select(&self.folds.test_indices(fold))
    }
}

/// When hyperparameters are chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Once, on the mixture of the complete datasets, then reused in every fold.
    #[default]
    Once,
    /// Separately inside every fold, on that fold's training mixture only.
    PerFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub strategies: Vec<Strategy>,
    pub targets: Vec<Target>,
    pub space: SearchSpace,
    pub search: SearchSettings,
    pub selection: SelectionMode,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            strategies: vec![Strategy::Search {
                family: ModelFamily::Svr,
            }],
            targets: Target::ALL.to_vec(),
            space: SearchSpace::default(),
            search: SearchSettings::default(),
            selection: SelectionMode::default(),
        }
    }
}

impl CvSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvaluationError::InvalidSettings(m));
        if self.strategies.is_empty() {
            return bad("no model strategies".into());
        }
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        let labels: HashSet<String> = self.strategies.iter().map(Strategy::label).collect();
        if labels.len() != self.strategies.len() {
            return bad("two strategies share a report label".into());
        }
        let targets: HashSet<Target> = self.targets.iter().copied().collect();
        if targets.len() != self.targets.len() {
            return bad("duplicate target".into());
        }
        for s in &self.strategies {
            let family = match s {
                Strategy::Search { family } => *family,
                _ => continue,
            };
            if self.space.is_empty(family) {
                return bad(format!("empty {} grid", family.name()));
            }
        }
        if self.strategies.contains(&Strategy::Ensemble)
            && [ModelFamily::ElasticNet, ModelFamily::Svr]
                .iter()
                .any(|f| self.space.is_empty(*f))
        {
            return bad("ensemble search needs both grids".into());
        }
        self.search.validate()?;
        Ok(())
    }
}

/// The recipe chosen for one `(model, target)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub model: String,
    pub target: Target,
    /// `None` for a selection shared by all folds.
    pub fold: Option<usize>,
    pub recipe: Recipe,
    pub validation_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub test_domain: String,
    pub n_test: usize,
    /// Hash of the sorted test ids.
    pub test_ids_checksum: String,
    pub n_train: usize,
    pub train_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub role: String,
    pub domain: String,
    pub n_samples: usize,
    pub checksum: String,
}

/// Everything needed to rerun a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub spec: MixSpec,
    pub seed: u64,
    pub baseline: bool,
    pub n_folds: usize,
    pub datasets: Vec<DatasetRecord>,
    pub settings: CvSettings,
    pub selections: Vec<SelectionRecord>,
    pub folds: Vec<FoldRecord>,
}

fn check_pair(a: &Corpus, b: &Corpus) -> Result<()> {
    if a.folds.n_folds() != b.folds.n_folds() {
        return Err(EvaluationError::InvalidSettings(format!(
            "fold counts differ: {} vs {}",
            a.folds.n_folds(),
            b.folds.n_folds()
        )));
    }
    if a.data.domain() == b.data.domain() {
        return Err(EvaluationError::InvalidSettings(format!(
            "both datasets are tagged {:?}",
            a.data.domain()
        )));
    }
    if a.data.n_features() != b.data.n_features() {
        return Err(EvaluationError::InvalidSettings(format!(
            "feature counts differ: {} vs {}",
            a.data.n_features(),
            b.data.n_features()
        )));
    }
    Ok(())
}

fn choose(
    mixed: &MixedDataset,
    a_domain: &str,
    settings: &CvSettings,
    seed: u64,
    fold: Option<usize>,
) -> Result<Vec<(SelectionRecord, Selection)>> {
    let groups: Vec<usize> = mixed
        .provenance()
        .iter()
        .map(|d| usize::from(d.as_str() != a_domain))
        .collect();
    let mut out = Vec::new();
    for strategy in &settings.strategies {
        for &target in &settings.targets {
            let data = SearchData {
                features: mixed.samples().features(),
                target: mixed.samples().target(target),
                groups: &groups,
                assignment: mixed.assignment(),
            };
            let sel: Selection = search::select(strategy, data, &settings.space, &settings.search, seed)?;
            let score = match (&sel.ensemble, sel.searches.first()) {
                (Some(e), _) => Some(e.score),
                (None, Some((_, s))) => Some(s.best_score),
                _ => None,
            };
            log::info!(
                "selected {} for {target} (fold {fold:?}): {} member(s), validation mse {score:?}",
                strategy.label(),
                sel.recipe.members.len()
            );
            out.push((
                SelectionRecord {
                    model: strategy.label(),
                    target,
                    fold,
                    recipe: sel.recipe.clone(),
                    validation_score: score,
                },
                sel,
            ));
        }
    }
    Ok(out)
}

fn id_checksum(ds: &LabeledDataset) -> String {
    let mut ids: Vec<&str> = ds.ids().iter().map(|i| i.as_str()).collect();
    ids.sort_unstable();
    seeding::content_hash(ids.join("\n").as_bytes())
}

struct FoldOutput {
    records: Vec<(usize, usize, usize, MetricRecord)>,
    selections: Vec<SelectionRecord>,
    folds: Vec<FoldRecord>,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
    baseline: bool,
    fold: usize,
    shared: Option<&[SelectionRecord]>,
) -> Result<FoldOutput> {
    let (a_train, a_assign) = a.train_part(fold);
    let (b_train, b_assign) = b.train_part(fold);
    let a_train = if baseline {
        mixing::randomize_labels(&a_train, seeding::sub_seed(seed, "baseline", fold as u64))
    } else {
        a_train
    };
    let mixed = mixing::mix_datasets(
        &a_train,
        &a_assign,
        &b_train,
        &b_assign,
        spec,
        seeding::sub_seed(seed, "mix", fold as u64),
    )?;
    let tests = [a.test_part(fold), b.test_part(fold)];

    let train_ids: HashSet<&str> = mixed.samples().ids().iter().map(|i| i.as_str()).collect();
    let test_ids = mixing::qualify(&tests[0])?
        .ids()
        .iter()
        .chain(mixing::qualify(&tests[1])?.ids())
        .map(|i| i.as_str().to_string())
        .collect::<Vec<_>>();
    let leaked: Vec<&String> = test_ids.iter().filter(|id| train_ids.contains(id.as_str())).collect();
    if let Some(first) = leaked.first() {
        return Err(EvaluationError::Leakage {
            fold,
            count: leaked.len(),
            example: first.to_string(),
        });
    }

    let own: Vec<SelectionRecord>;
    let (selections, chosen) = match shared {
        Some(s) => (Vec::new(), s),
        None => {
            own = choose(
                &mixed,
                a.data.domain(),
                settings,
                seeding::sub_seed(seed, "search", fold as u64),
                Some(fold),
            )?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
            (own.clone(), own.as_slice())
        }
    };

    let manifest = mixed.manifest();
    let fold_records = tests
        .iter()
        .map(|t| FoldRecord {
            fold,
            test_domain: t.domain().to_string(),
            n_test: t.len(),
            test_ids_checksum: id_checksum(t),
            n_train: mixed.len(),
            train_counts: manifest.counts.clone(),
        })
        .collect();

    let mut records = Vec::new();
    for (si, strategy) in settings.strategies.iter().enumerate() {
        for (ti, &target) in settings.targets.iter().enumerate() {
            let label = strategy.label();
            let recipe = &chosen
                .iter()
                .find(|r| r.model == label && r.target == target)
                .expect("one selection per strategy and target")
                .recipe;
            let model = recipe.fit(mixed.samples().features(), mixed.samples().target(target))?;
            for (di, test) in tests.iter().enumerate() {
                let truth = test.target(target);
                let pred = model.predict(test.features())?;
                let m = mse(truth, pred.view())?;
                records.push((
                    si,
                    di,
                    ti,
                    MetricRecord {
                        spec_k: spec.k(),
                        spec_p: spec.p(),
                        model: label.clone(),
                        test_domain: test.domain().to_string(),
                        target,
                        fold,
                        rmse: m.sqrt(),
                        mse: m,
                        r2: r2(truth, pred.view())?,
                    },
                ));
            }
        }
    }
    Ok(FoldOutput {
        records,
        selections,
        folds: fold_records,
    })
}

fn select_shared(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
    baseline: bool,
) -> Result<Vec<(SelectionRecord, Selection)>> {
    let index = a.folds.n_folds() as u64;
    let a_all = if baseline {
        mixing::randomize_labels(&a.data, seeding::sub_seed(seed, "baseline", index))
    } else {
        a.data.clone()
    };
    let mixed = mixing::mix_datasets(
        &a_all,
        &a.assignment,
        &b.data,
        &b.assignment,
        spec,
        seeding::sub_seed(seed, "mix", index),
    )?;
    choose(&mixed, a.data.domain(), settings, seeding::sub_seed(seed, "search", index), None)
}

/// The fold-independent selection that [`cross_validate`] makes under
/// [`SelectionMode::Once`], with the searches behind every recipe.
pub fn select_once(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
) -> Result<Vec<(SelectionRecord, Selection)>> {
    settings.validate()?;
    check_pair(a, b)?;
    select_shared(a, b, spec, settings, seed, false)
}

fn check_selections(settings: &CvSettings, selections: &[SelectionRecord]) -> Result<()> {
    for strategy in &settings.strategies {
        for &target in &settings.targets {
            let n = selections
                .iter()
                .filter(|r| r.model == strategy.label() && r.target == target && r.fold.is_none())
                .count();
            if n != 1 {
                return Err(EvaluationError::InvalidSettings(format!(
                    "{n} shared selections for {} / {target}, expected 1",
                    strategy.label()
                )));
            }
        }
    }
    Ok(())
}

fn run_cv(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
    baseline: bool,
    given: Option<&[SelectionRecord]>,
) -> Result<CvReport> {
    settings.validate()?;
    check_pair(a, b)?;
    let n_folds = a.folds.n_folds();

    let shared: Option<Vec<SelectionRecord>> = match (given, settings.selection) {
        (Some(records), _) => {
            check_selections(settings, records)?;
            Some(records.to_vec())
        }
        (None, SelectionMode::PerFold) => None,
        (None, SelectionMode::Once) => Some(
            select_shared(a, b, spec, settings, seed, baseline)?
                .into_iter()
                .map(|(r, _)| r)
                .collect(),
        ),
    };

    let outputs = (0..n_folds)
        .into_par_iter()
        .map(|fold| run_fold(a, b, spec, settings, seed, baseline, fold, shared.as_deref()))
        .collect::<Result<Vec<_>>>()?;

    let mut keyed = Vec::new();
    let mut selections: Vec<SelectionRecord> = shared.unwrap_or_default();
    let mut folds = Vec::new();
    for out in outputs {
        keyed.extend(out.records);
        selections.extend(out.selections);
        folds.extend(out.folds);
    }
    keyed.sort_by_key(|(si, di, ti, r)| (*si, *di, *ti, r.fold));
    let records: Vec<MetricRecord> = keyed.into_iter().map(|(.., r)| r).collect();
    let datasets = [("a", &a.data), ("b", &b.data)]
        .iter()
        .map(|(role, ds)| DatasetRecord {
            role: role.to_string(),
            domain: ds.domain().to_string(),
            n_samples: ds.len(),
            checksum: ds.checksum(),
        })
        .collect();
    Ok(CvReport {
        baseline,
        aggregates: aggregate(&records),
        records,
        manifest: ReportManifest {
            spec,
            seed,
            baseline,
            n_folds,
            datasets,
            settings: settings.clone(),
            selections,
            folds,
        },
    })
}

/// Outer cross-validation with `(k, p)`-mixed training folds.
///
/// For every fold the training portions of `a` and `b` (by their own fold
/// plans) are mixed under `spec`; each model is fitted on the mixture from
/// scratch and tested on fold `i` of `a` and of `b` separately.
pub fn cross_validate(a: &Corpus, b: &Corpus, spec: MixSpec, settings: &CvSettings, seed: u64) -> Result<CvReport> {
    run_cv(a, b, spec, settings, seed, false, None)
}

/// [`cross_validate`] reusing fold-independent `selections`, e.g. from
/// [`select_once`], instead of searching again. The selection mode in
/// `settings` is ignored.
pub fn cross_validate_with(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
    selections: &[SelectionRecord],
) -> Result<CvReport> {
    run_cv(a, b, spec, settings, seed, false, Some(selections))
}

/// [`cross_validate`] with `a`'s training labels replaced by uniform noise
/// before mixing. Test folds keep their genuine labels.
pub fn run_randomized_baseline(
    a: &Corpus,
    b: &Corpus,
    spec: MixSpec,
    settings: &CvSettings,
    seed: u64,
) -> Result<CvReport> {
    run_cv(a, b, spec, settings, seed, true, None)
}

/// One report per grid cell. All cells share the corpora's fold plans.
pub fn run_kp_sweep(
    a: &Corpus,
    b: &Corpus,
    grid: &[MixSpec],
    settings: &CvSettings,
    seed: u64,
) -> Result<Vec<CvReport>> {
    if grid.is_empty() {
        return Err(EvaluationError::InvalidSettings("empty (k, p) grid".into()));
    }
    grid.par_iter()
        .map(|&spec| cross_validate(a, b, spec, settings, seed))
        .collect()
}

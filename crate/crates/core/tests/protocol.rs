use std::collections::{BTreeMap, HashSet};

use affectmix::evaluation::{
    aggregate, cross_validate, cross_validate_with, read_tsv, run_kp_sweep, run_randomized_baseline, select_once, write_tsv, Corpus,
    CvReport, CvSettings, SelectionMode,
};
use affectmix::learners::{KernelSpec, ModelFamily, ModelSpec, PipelineConfig};
use affectmix::search::{
    forward_select, grouped_mse, select, successive_halving, SearchData, SearchSettings, SearchSpace, Strategy,
};
use affectmix::stratification::{cluster_dataset, stratified_kfold};
use affectmix::synthetic::{generate, SyntheticConfig};
use affectmix::{LabeledDataset, MixSpec, Target};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn svr(threshold: f64) -> PipelineConfig {
    PipelineConfig {
        pca_threshold: threshold,
        model: ModelSpec::Svr {
            c: 1.0,
            epsilon: 0.1,
            kernel: KernelSpec::Rbf { gamma_scale: 1.0 },
        },
    }
}

fn elasticnet(alpha: f64) -> PipelineConfig {
    PipelineConfig {
        pca_threshold: 0.9,
        model: ModelSpec::ElasticNet { alpha, l1_ratio: 0.5 },
    }
}

fn corpora(n: usize, seed: u64) -> (Corpus, Corpus) {
    let (a, b) = generate(
        &SyntheticConfig {
            n_per_domain: n,
            ..SyntheticConfig::default()
        },
        seed,
    );
    let corpus = |ds: LabeledDataset| {
        let assign = cluster_dataset(&ds, 25).unwrap();
        let folds = stratified_kfold(&assign, 5, seed).unwrap();
        Corpus::new(ds, assign, folds).unwrap()
    };
    (corpus(a), corpus(b))
}

fn fixed_settings() -> CvSettings {
    CvSettings {
        strategies: vec![
            Strategy::Fixed { config: svr(0.9) },
            Strategy::Fixed {
                config: elasticnet(0.01),
            },
        ],
        ..CvSettings::default()
    }
}

#[test]
fn records_cover_every_fold_domain_and_target() {
    let (a, b) = corpora(120, 1);
    let report = cross_validate(&a, &b, MixSpec::new(1.0, 0.5).unwrap(), &fixed_settings(), 7).unwrap();
    assert_eq!(report.records.len(), 2 * 5 * 2 * 2);
    assert_eq!(report.aggregates.len(), 2 * 2 * 2);
    let keys: HashSet<_> = report
        .records
        .iter()
        .map(|r| (r.model.clone(), r.test_domain.clone(), r.target, r.fold))
        .collect();
    assert_eq!(keys.len(), report.records.len());
    for r in &report.records {
        assert!((r.rmse * r.rmse - r.mse).abs() < 1e-12);
        assert!(r.r2 <= 1.0);
    }
    // every test fold is the corpus's own, unmixed fold
    for f in &report.manifest.folds {
        let corpus = if f.test_domain == "synth-a" { &a } else { &b };
        assert_eq!(f.n_test, corpus.folds().test_indices(f.fold).len());
        let want_train = MixSpec::new(1.0, 0.5)
            .unwrap()
            .mixed_size(a.folds().train_indices(f.fold).len(), b.folds().train_indices(f.fold).len());
        assert_eq!(f.n_train, want_train);
    }
}

#[test]
fn runs_are_deterministic() {
    let (a, b) = corpora(100, 2);
    let spec = MixSpec::new(0.5, 1.0).unwrap();
    let first = cross_validate(&a, &b, spec, &fixed_settings(), 3).unwrap();
    let second = cross_validate(&a, &b, spec, &fixed_settings(), 3).unwrap();
    assert_eq!(first, second);
    let other = cross_validate(&a, &b, spec, &fixed_settings(), 4).unwrap();
    assert_ne!(first.records, other.records);
}

#[test]
fn sweep_cells_share_test_folds() {
    let (a, b) = corpora(100, 3);
    let grid = vec![
        MixSpec::new(1.0, 0.0).unwrap(),
        MixSpec::new(0.5, 1.0).unwrap(),
        MixSpec::new(1.0, 1.0).unwrap(),
    ];
    let settings = CvSettings {
        strategies: vec![Strategy::Fixed {
            config: elasticnet(0.01),
        }],
        ..CvSettings::default()
    };
    let reports = run_kp_sweep(&a, &b, &grid, &settings, 5).unwrap();
    assert_eq!(reports.len(), 3);
    let checksums = |r: &CvReport| {
        r.manifest
            .folds
            .iter()
            .map(|f| ((f.fold, f.test_domain.clone()), f.test_ids_checksum.clone()))
            .collect::<BTreeMap<_, _>>()
    };
    let reference = checksums(&reports[0]);
    assert_eq!(reference.len(), 10);
    for (r, spec) in reports.iter().zip(&grid) {
        assert_eq!(r.spec(), *spec);
        assert_eq!(checksums(r), reference);
    }
}

#[test]
fn baseline_without_a_equals_genuine_run() {
    let (a, b) = corpora(100, 4);
    let spec = MixSpec::new(0.0, 1.0).unwrap();
    let genuine = cross_validate(&a, &b, spec, &fixed_settings(), 9).unwrap();
    let baseline = run_randomized_baseline(&a, &b, spec, &fixed_settings(), 9).unwrap();
    assert_eq!(genuine.records, baseline.records);
    assert!(baseline.baseline && !genuine.baseline);

    let spec = MixSpec::new(1.0, 1.0).unwrap();
    let genuine = cross_validate(&a, &b, spec, &fixed_settings(), 9).unwrap();
    let baseline = run_randomized_baseline(&a, &b, spec, &fixed_settings(), 9).unwrap();
    assert_ne!(genuine.records, baseline.records);
}

#[test]
fn aggregates_recompute_from_tsv() {
    let (a, b) = corpora(100, 5);
    let report = cross_validate(&a, &b, MixSpec::new(1.0, 1.0).unwrap(), &fixed_settings(), 1).unwrap();
    let mut buf = Vec::new();
    write_tsv(&mut buf, &report.records).unwrap();
    let back = read_tsv(buf.as_slice()).unwrap();
    assert_eq!(back, report.records);
    assert_eq!(aggregate(&back), report.aggregates);
}

#[test]
fn per_fold_selection_records_every_fold() {
    let (a, b) = corpora(100, 6);
    let settings = CvSettings {
        strategies: vec![Strategy::Search {
            family: ModelFamily::ElasticNet,
        }],
        targets: vec![Target::Valence],
        space: SearchSpace {
            pca_thresholds: vec![0.9],
            alphas: vec![1e-3, 1e-1, 10.0],
            l1_ratios: vec![0.5],
            ..SearchSpace::default()
        },
        selection: SelectionMode::PerFold,
        ..CvSettings::default()
    };
    let report = cross_validate(&a, &b, MixSpec::new(1.0, 1.0).unwrap(), &settings, 2).unwrap();
    let folds: Vec<_> = report.manifest.selections.iter().map(|s| s.fold).collect();
    assert_eq!(folds, (0..5).map(Some).collect::<Vec<_>>());
    assert_eq!(report.records.len(), 5 * 2);

    let once = cross_validate(
        &a,
        &b,
        MixSpec::new(1.0, 1.0).unwrap(),
        &CvSettings {
            selection: SelectionMode::Once,
            ..settings
        },
        2,
    )
    .unwrap();
    assert_eq!(once.manifest.selections.len(), 1);
    assert_eq!(once.manifest.selections[0].fold, None);
}

#[test]
fn persisted_selection_reproduces_cross_validation() {
    let (a, b) = corpora(100, 8);
    let settings = CvSettings {
        strategies: vec![Strategy::Search {
            family: ModelFamily::ElasticNet,
        }],
        space: SearchSpace {
            pca_thresholds: vec![0.8, 0.95],
            alphas: vec![1e-3, 1e-1],
            l1_ratios: vec![0.5],
            ..SearchSpace::default()
        },
        ..CvSettings::default()
    };
    let spec = MixSpec::new(1.0, 0.6).unwrap();
    let direct = cross_validate(&a, &b, spec, &settings, 4).unwrap();
    let chosen: Vec<_> = select_once(&a, &b, spec, &settings, 4)
        .unwrap()
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    assert_eq!(chosen.len(), 2);
    let reused = cross_validate_with(&a, &b, spec, &settings, 4, &chosen).unwrap();
    assert_eq!(direct, reused);
    assert!(cross_validate_with(&a, &b, spec, &settings, 4, &chosen[..1]).is_err());
}

#[test]
fn rejects_bad_pairs_and_settings() {
    let (a, _) = corpora(60, 7);
    let spec = MixSpec::new(1.0, 1.0).unwrap();
    assert!(cross_validate(&a, &a, spec, &fixed_settings(), 0).is_err());
    let (a, b) = corpora(60, 7);
    let empty = CvSettings {
        strategies: Vec::new(),
        ..CvSettings::default()
    };
    assert!(cross_validate(&a, &b, spec, &empty, 0).is_err());
    let dup = CvSettings {
        strategies: vec![Strategy::Fixed { config: svr(0.9) }, Strategy::Fixed { config: svr(0.8) }],
        ..CvSettings::default()
    };
    assert!(cross_validate(&a, &b, spec, &dup, 0).is_err());
    assert!(run_kp_sweep(&a, &b, &[], &fixed_settings(), 0).is_err());
}

// ---- search ----

struct Linear {
    x: Array2<f64>,
    y: Array1<f64>,
    groups: Vec<usize>,
    assignment: affectmix::ClusterAssignment,
}

fn linear_problem(n: usize, noise: f64, seed: u64) -> Linear {
    let mut rng = affectmix::seeding::stream(seed, "test", 0);
    let x = Array2::from_shape_fn((n, 6), |_| StandardNormal.sample(&mut rng));
    let w = Array1::from(vec![0.4, -0.3, 0.2, 0.0, 0.1, -0.2]);
    let y = x.dot(&w).mapv(|v: f64| v + noise * rng.random_range(-1.0..1.0));
    let groups = (0..n).map(|i| i % 2).collect();
    let assignment = affectmix::ClusterAssignment::new("t", (0..n).map(|i| i % 3).collect()).unwrap();
    Linear { x, y, groups, assignment }
}

impl Linear {
    fn data(&self) -> SearchData<'_> {
        SearchData {
            features: self.x.view(),
            target: self.y.view(),
            groups: &self.groups,
            assignment: &self.assignment,
        }
    }
}

fn en_threshold(threshold: f64, alpha: f64) -> PipelineConfig {
    PipelineConfig {
        pca_threshold: threshold,
        model: ModelSpec::ElasticNet { alpha, l1_ratio: 0.5 },
    }
}

#[test]
fn halving_finds_planted_optimum() {
    let p = linear_problem(300, 0.05, 1);
    // only full-variance projections with little shrinkage can fit the map
    let mut candidates = Vec::new();
    for &t in &[0.3, 0.6, 0.999] {
        for &a in &[1e-4, 0.3, 3.0] {
            candidates.push(en_threshold(t, a));
        }
    }
    let out = successive_halving(p.data(), &candidates, &SearchSettings::default(), 0).unwrap();
    assert_eq!(out.best, en_threshold(0.999, 1e-4));
    let sizes: Vec<usize> = out.rungs.iter().map(|r| r.scores.len()).collect();
    assert_eq!(sizes, vec![9, 3, 1]);
    let resources: Vec<f64> = out.rungs.iter().map(|r| r.resource).collect();
    assert!(resources.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*resources.last().unwrap(), 1.0);
    assert_eq!(out.ranking.len(), 9);
    assert_eq!(out.ranking[0].config, out.best);
    assert!(out.rungs.windows(2).all(|w| w[0].n_train < w[1].n_train));
}

#[test]
fn single_candidate_is_returned() {
    let p = linear_problem(80, 0.1, 2);
    let only = en_threshold(0.9, 0.01);
    let out = successive_halving(p.data(), &[only], &SearchSettings::default(), 3).unwrap();
    assert_eq!(out.best, only);
    assert_eq!(out.rungs.len(), 1);
    assert_eq!(out.rungs[0].resource, 1.0);
}

#[test]
fn halving_is_deterministic() {
    let p = linear_problem(120, 0.3, 3);
    let candidates: Vec<_> = [1e-3, 1e-2, 1e-1, 1.0].iter().map(|&a| en_threshold(0.95, a)).collect();
    let a = successive_halving(p.data(), &candidates, &SearchSettings::default(), 5).unwrap();
    let b = successive_halving(p.data(), &candidates, &SearchSettings::default(), 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ensemble_never_worse_than_best_single() {
    let p = linear_problem(200, 0.5, 4);
    let space = SearchSpace {
        pca_thresholds: vec![0.8, 0.99],
        alphas: vec![1e-3, 0.1],
        l1_ratios: vec![0.5],
        cs: vec![0.1, 1.0],
        epsilons: vec![0.1],
        kernels: vec![KernelSpec::Linear, KernelSpec::Rbf { gamma_scale: 1.0 }],
    };
    let settings = SearchSettings::default();
    let sel = select(&Strategy::Ensemble, p.data(), &space, &settings, 8).unwrap();
    let ens = sel.ensemble.as_ref().unwrap();
    let best_single = sel.searches.iter().map(|(_, s)| s.best_score).fold(f64::INFINITY, f64::min);
    // first round picks the best single library entry on the full hold-out
    // training rows, so the final score can only be lower
    assert!(ens.trace.windows(2).all(|w| w[1] < w[0]));
    assert!(ens.score <= ens.trace[0]);
    assert!(ens.score <= best_single + 1e-12, "{} vs {}", ens.score, best_single);
    let weights: f64 = sel.recipe.members.iter().map(|m| m.weight).sum();
    assert!((weights - 1.0).abs() < 1e-12);
    let model = sel.recipe.fit(p.x.view(), p.y.view()).unwrap();
    assert_eq!(model.members().len(), sel.recipe.members.len());
}

#[test]
fn two_independent_unbiased_members_are_combined() {
    let mut rng = affectmix::seeding::stream(0, "test", 1);
    let n = 400;
    let truth = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let noisy = |rng: &mut rand_chacha::ChaCha8Rng| {
        truth.mapv(|t| {
            let e: f64 = StandardNormal.sample(rng);
            t + 0.3 * e
        })
    };
    let p1 = noisy(&mut rng);
    let p2 = noisy(&mut rng);
    let biased = truth.mapv(|t| t + 0.5);
    let groups = vec![0; n];
    let preds = vec![Some(p1.clone()), None, Some(p2.clone()), Some(biased)];
    let (counts, trace) = forward_select(&preds, truth.view(), &groups, 10).unwrap();
    assert!(counts[0] > 0 && counts[2] > 0, "{counts:?}");
    assert_eq!(counts[1], 0);
    assert_eq!(counts[3], 0);
    let single = grouped_mse(truth.view(), p1.view(), &groups).min(grouped_mse(truth.view(), p2.view(), &groups));
    assert!(*trace.last().unwrap() < 0.75 * single);
}

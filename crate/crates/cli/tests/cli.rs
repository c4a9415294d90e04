use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use affectmix::dataset::write_dataset;
use affectmix::evaluation::{format_sci, read_tsv, MeanStd, MetricRecord};
use affectmix::synthetic::{generate, SyntheticConfig};
use affectmix_cli::{run, Cli, CliError};
use clap::Parser;

const FAST: &str = r#"
seed = 11
out = "run"

[data]
kind = "synthetic"
n_per_domain = 80

[evaluate]
specs = [{ k = 1.0, p = 1.0 }]

[sweep]
grid = [0.5, 1.0]
shape = "vary-k"

[baseline]
specs = [{ k = 1.0, p = 1.0 }]

[[cv.strategies]]
kind = "fixed"
config = { pca_threshold = 0.9, model = { family = "elasticnet", alpha = 0.01, l1_ratio = 0.5 } }
"#;

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("experiment.toml");
    fs::write(&path, text).unwrap();
    (dir, path)
}

fn cmd(config: &Path, args: &[&str]) -> Result<affectmix_cli::artifacts::StageManifest, CliError> {
    let mut argv = vec!["affectmix".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--config".into());
    argv.push(config.display().to_string());
    run(&Cli::try_parse_from(argv).unwrap())
}

fn stages(config: &Path, names: &[&str]) {
    for name in names {
        cmd(config, &[name]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

fn binary(config: &Path, args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_affectmix"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RUST_LOG", "error")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn split_is_byte_identical_across_runs() {
    let (dir, config) = setup(FAST);
    stages(&config, &["ingest", "cluster", "split"]);
    let run_dir = dir.path().join("run");
    let read = |name: &str| fs::read(run_dir.join("split").join(name)).unwrap();
    let first = (read("a.folds.csv"), read("b.folds.csv"), read("manifest.json"));
    stages(&config, &["split"]);
    assert_eq!(first, (read("a.folds.csv"), read("b.folds.csv"), read("manifest.json")));

    // a full re-run from scratch reproduces every stage
    fs::remove_dir_all(&run_dir).unwrap();
    stages(&config, &["ingest", "cluster", "split"]);
    assert_eq!(first.0, read("a.folds.csv"));
}

#[test]
fn two_cell_sweep_has_one_row_per_cell_fold_domain_and_target() {
    let (dir, config) = setup(FAST);
    stages(&config, &["ingest", "cluster", "split", "sweep"]);
    let tsv = fs::read_to_string(dir.path().join("run/sweep/records.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "spec_k\tspec_p\tmodel\ttest_domain\ttarget\tfold\trmse\tmse\tr2"
    );
    assert_eq!(lines.count(), 2 * 5 * 2 * 2);
}

fn recompute(records: &[MetricRecord], k: f64, domain: &str, target: &str, f: fn(&MetricRecord) -> f64) -> MeanStd {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.spec_k == k && r.test_domain == domain && r.target.name() == target)
        .map(f)
        .collect();
    assert_eq!(values.len(), 5);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanStd { mean, std: var.sqrt() }
}

#[test]
fn report_strings_match_recomputation() {
    let (dir, config) = setup(FAST);
    stages(&config, &["ingest", "cluster", "split", "sweep", "baseline", "report"]);
    let run_dir = dir.path().join("run");
    let records = read_tsv(fs::File::open(run_dir.join("sweep/records.tsv")).unwrap()).unwrap();
    let md = fs::read_to_string(run_dir.join("report/sweep.md")).unwrap();
    let mut checked = 0;
    for k in [0.5, 1.0] {
        for domain in ["synth-a", "synth-b"] {
            for target in ["valence", "arousal"] {
                for f in [|r: &MetricRecord| r.rmse, |r: &MetricRecord| r.r2] {
                    let m = recompute(&records, k, domain, target, f);
                    let cell = format!("{} ± {}", format_sci(m.mean), format_sci(m.std));
                    let row = md
                        .lines()
                        .filter(|l| l.starts_with(&format!("| {domain} | elasticnet-fixed | {target} |")))
                        .find(|l| l.contains(&cell));
                    assert!(row.is_some(), "{cell} missing for k={k} {domain} {target}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 16);
    let cmp = fs::read_to_string(run_dir.join("report/baseline_vs_genuine.tsv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 2 * 2);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("report/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["sources"], serde_json::json!(["sweep", "baseline"]));
}

#[test]
fn manifests_hash_every_output() {
    let (dir, config) = setup(FAST);
    stages(&config, &["ingest", "cluster", "split", "search", "evaluate"]);
    let run_dir = dir.path().join("run");
    for stage in ["ingest", "cluster", "split", "search", "evaluate"] {
        let manifest: affectmix_cli::artifacts::StageManifest =
            serde_json::from_slice(&fs::read(run_dir.join(stage).join("manifest.json")).unwrap()).unwrap();
        let listed: Vec<&str> = manifest.outputs.iter().map(|e| e.path.as_str()).collect();
        let mut on_disk: Vec<String> = fs::read_dir(run_dir.join(stage))
            .unwrap()
            .map(|e| format!("{stage}/{}", e.unwrap().file_name().to_string_lossy()))
            .filter(|p| !p.ends_with("manifest.json"))
            .collect();
        on_disk.sort();
        let mut sorted = listed.clone();
        sorted.sort();
        assert_eq!(sorted, on_disk, "{stage}");
        for entry in &manifest.outputs {
            let bytes = fs::read(run_dir.join(&entry.path)).unwrap();
            assert_eq!(affectmix::seeding::content_hash(&bytes), entry.sha256);
        }
    }
    // the resolved config sits next to the outputs and parses back
    let resolved = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(resolved.contains("min_cluster_size = 25"));
    assert!(resolved.contains("n_folds = 5"));
    affectmix_cli::ExperimentConfig::parse(&resolved, dir.path()).unwrap();
}

#[test]
fn stale_and_missing_stages_are_rejected() {
    let (dir, config) = setup(FAST);
    assert!(matches!(cmd(&config, &["cluster"]), Err(CliError::MissingPriorStage { .. })));
    stages(&config, &["ingest", "cluster", "split"]);
    // a different seed invalidates the fold plans
    match cmd(&config, &["evaluate", "--seed", "12"]) {
        Err(CliError::MissingPriorStage { stage, .. }) => assert_eq!(stage, "ingest"),
        other => panic!("{other:?}"),
    }
    // search has not run for this configuration
    match cmd(&config, &["evaluate"]) {
        Err(e @ CliError::MissingPriorStage { .. }) => assert_eq!(e.exit_code(), 1),
        other => panic!("{other:?}"),
    }
    let folds = dir.path().join("run/split/a.folds.csv");
    let mut text = fs::read_to_string(&folds).unwrap();
    text.push('\n');
    text.push_str("extra,0\n");
    fs::write(&folds, text).unwrap();
    assert!(matches!(cmd(&config, &["search"]), Err(CliError::CorruptArtifact { .. })));
}

#[test]
fn evaluate_reuses_the_persisted_search() {
    let text = FAST.replace(
        "[[cv.strategies]]\nkind = \"fixed\"\nconfig = { pca_threshold = 0.9, model = { family = \"elasticnet\", alpha = 0.01, l1_ratio = 0.5 } }",
        "[[cv.strategies]]\nkind = \"search\"\nfamily = \"elasticnet\"\n\n[cv.space]\npca_thresholds = [0.8, 0.95]\nalphas = [0.001, 0.1]\nl1_ratios = [0.5]\n",
    );
    assert_ne!(text, FAST);
    let (dir, config) = setup(&text);
    stages(&config, &["ingest", "cluster", "split", "search", "evaluate"]);
    let search: affectmix_cli::commands::SearchArtifact =
        serde_json::from_slice(&fs::read(dir.path().join("run/search/k1_p1.json")).unwrap()).unwrap();
    assert_eq!(search.selections.len(), 2);
    let ranking = &search.selections[0].selection.searches[0].1.ranking;
    assert_eq!(ranking.len(), 4);
    let reports: Vec<affectmix::evaluation::CvReport> =
        serde_json::from_slice(&fs::read(dir.path().join("run/evaluate/reports.json")).unwrap()).unwrap();
    let used: Vec<_> = reports[0].manifest.selections.iter().map(|s| s.recipe.clone()).collect();
    let searched: Vec<_> = search.selections.iter().map(|s| s.record.recipe.clone()).collect();
    assert_eq!(used, searched);
}

#[test]
fn ingests_files_with_rescaling_and_exclusion() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = generate(
        &SyntheticConfig {
            n_per_domain: 60,
            ..SyntheticConfig::default()
        },
        1,
    );
    for (name, ds) in [("a", &a), ("b", &b)] {
        let labels = dir.path().join(format!("{name}.canonical.csv"));
        write_dataset(ds, dir.path().join(format!("{name}.features.csv")), &labels).unwrap();
        // back onto the 1..9 scale, with every tenth sample tagged as music
        let mut raw = String::from("id,valence,arousal,category\n");
        for (i, id) in ds.ids().iter().enumerate() {
            let sam = |v: f64| 5.0 + 4.0 * v;
            let category = if i % 10 == 0 { "music" } else { "other" };
            raw.push_str(&format!(
                "{id},{},{},{category}\n",
                sam(ds.valence()[i]),
                sam(ds.arousal()[i])
            ));
        }
        fs::write(dir.path().join(format!("{name}.labels.csv")), raw).unwrap();
    }
    let text = r#"
out = "run"
[data]
kind = "files"
[data.a]
domain = "general"
features = "a.features.csv"
labels = "a.labels.csv"
scale = { lo = 1, hi = 9 }
exclude_categories = ["music"]
[data.b]
domain = "music"
features = "b.features.csv"
labels = "b.labels.csv"
scale = { lo = 1, hi = 9 }
"#;
    let config = dir.path().join("experiment.toml");
    fs::write(&config, text).unwrap();
    let manifest = cmd(&config, &["ingest"]).unwrap();
    assert_eq!(manifest.inputs.len(), 4);
    let summary = &manifest.details["datasets"];
    assert_eq!(summary[0]["n_samples"], 54);
    assert_eq!(summary[0]["n_excluded"], 6);
    assert_eq!(summary[1]["n_samples"], 60);
    let labels = fs::read_to_string(dir.path().join("run/ingest/a.labels.csv")).unwrap();
    for line in labels.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    stages(&config, &["cluster", "split"]);

    // an out-of-range label is a validation error
    let bad = fs::read_to_string(dir.path().join("b.labels.csv"))
        .unwrap()
        .replacen(",other\n", ",other\nzzz,10,5,other\n", 1);
    fs::write(dir.path().join("b.labels.csv"), bad).unwrap();
    assert!(matches!(cmd(&config, &["ingest"]), Err(CliError::InvalidData(_))));
}

#[test]
fn exit_codes() {
    let (dir, config) = setup(FAST);
    assert_eq!(binary(&config, &["ingest"]), 0);
    assert_eq!(binary(&config, &["search", "--seed", "5"]), 1);
    assert_eq!(binary(&config, &["bogus"]), 1);
    assert_eq!(binary(&config, &["ingest", "--jobs", "0"]), 1);
    assert_eq!(binary(&dir.path().join("missing.toml"), &["ingest"]), 1);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, FAST.replace("n_per_domain = 80", "n_per_domain = 80\nn_nuisance = 40")).unwrap();
    assert_eq!(binary(&bad, &["ingest"]), 1);
    let absent = dir.path().join("absent.toml");
    let files = "[data]\nkind = \"files\"\n[data.a]\ndomain = \"general\"\nfeatures = \"none.csv\"\nlabels = \"none.csv\"\nscale = { lo = 1, hi = 9 }\n[data.b]\ndomain = \"music\"\nfeatures = \"none.csv\"\nlabels = \"none.csv\"\nscale = { lo = 1, hi = 9 }\n";
    fs::write(&absent, files).unwrap();
    assert_eq!(binary(&absent, &["ingest"]), 1);
    // the output directory cannot be created inside a regular file
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let blocked = blocker.join("run");
    assert_eq!(binary(&config, &["ingest", "--out", blocked.to_str().unwrap()]), 2);
}

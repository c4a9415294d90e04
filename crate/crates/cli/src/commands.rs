//! One function per subcommand. Each reads the artifacts of the stages it
//! depends on, writes its own stage directory and returns the manifest.

use affectmix::dataset::{exclude_by_category, load_dataset, write_dataset};
use affectmix::evaluation::{
    aggregate, cross_validate, cross_validate_with, format_sci, read_tsv, run_kp_sweep, run_randomized_baseline,
    select_once, table_by_spec, table_summary, write_tsv, Aggregate, Corpus, CvReport, Metric, MetricRecord,
    SelectionMode, SelectionRecord,
};
use affectmix::search::Selection;
use affectmix::seeding::{content_hash, sub_seed};
use affectmix::stratification::{
    cluster_dataset, read_assignment, read_fold_plan, stratified_kfold, write_assignment, write_fold_plan,
};
use affectmix::synthetic::generate;
use affectmix::{LabelScale, LabeledDataset, MixSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{self, read_json, require, StageManifest, StageWriter};
use crate::config::{spec_name, DataSource, ExperimentConfig};
use crate::error::{CliError, Result};

pub const ROLES: [&str; 2] = ["a", "b"];

fn fingerprint(value: serde_json::Value) -> String {
    content_hash(value.to_string().as_bytes())
}

pub fn ingest_fingerprint(c: &ExperimentConfig) -> String {
    let seed = matches!(c.data, DataSource::Synthetic(_)).then_some(c.seed);
    fingerprint(json!({ "data": c.data, "seed": seed }))
}

pub fn cluster_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "ingest": ingest_fingerprint(c), "min_cluster_size": c.min_cluster_size }))
}

pub fn split_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "cluster": cluster_fingerprint(c), "n_folds": c.n_folds, "seed": c.seed }))
}

pub fn search_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "split": split_fingerprint(c), "cv": c.cv, "specs": c.evaluate.specs }))
}

pub fn evaluate_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "search": search_fingerprint(c) }))
}

pub fn sweep_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "split": split_fingerprint(c), "cv": c.cv, "sweep": c.sweep }))
}

pub fn baseline_fingerprint(c: &ExperimentConfig) -> String {
    fingerprint(json!({ "split": split_fingerprint(c), "cv": c.cv, "specs": c.baseline.specs }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub role: String,
    pub domain: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_excluded: usize,
    pub checksum: String,
}

fn features_file(role: &str) -> String {
    format!("{role}.features.csv")
}

fn labels_file(role: &str) -> String {
    format!("{role}.labels.csv")
}

fn clusters_file(role: &str) -> String {
    format!("{role}.clusters.csv")
}

fn folds_file(role: &str) -> String {
    format!("{role}.folds.csv")
}

const RECORDS: &str = "records.tsv";

/// Validates and persists both datasets with labels on the `[-1, 1]` scale.
pub fn cmd_ingest(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "ingest")?;
    let mut summaries = Vec::new();
    let datasets: Vec<(LabeledDataset, usize)> = match &c.data {
        DataSource::Files { a, b } => {
            let mut out = Vec::new();
            for files in [a, b] {
                let full = load_dataset(&files.features, &files.labels, &files.domain, files.scale)?;
                stage.external_input(&files.features)?;
                stage.external_input(&files.labels)?;
                let mut ds = full.clone();
                for category in &files.exclude_categories {
                    ds = exclude_by_category(&ds, category)?;
                }
                log::info!(
                    "{}: {} samples, {} features, {} excluded",
                    ds.domain(),
                    ds.len(),
                    ds.n_features(),
                    full.len() - ds.len()
                );
                out.push((ds, full.len()));
            }
            out
        }
        DataSource::Synthetic(cfg) => {
            let (a, b) = generate(cfg, c.seed);
            let (na, nb) = (a.len(), b.len());
            vec![(a, na), (b, nb)]
        }
    };
    if datasets[0].0.feature_names() != datasets[1].0.feature_names() {
        return Err(CliError::InvalidData(
            "the two datasets must have the same feature columns in the same order".into(),
        ));
    }
    for (role, (ds, n_raw)) in ROLES.iter().zip(&datasets) {
        if ds.len() < c.n_folds {
            return Err(CliError::InvalidData(format!(
                "dataset {:?} has {} samples, fewer than {} folds",
                ds.domain(),
                ds.len(),
                c.n_folds
            )));
        }
        let (f, l) = (features_file(role), labels_file(role));
        write_dataset(ds, stage.path(&f), stage.path(&l)).map_err(CliError::io(format!("writing {role} dataset")))?;
        stage.record(&f)?;
        stage.record(&l)?;
        summaries.push(DatasetSummary {
            role: role.to_string(),
            domain: ds.domain().to_string(),
            n_samples: ds.len(),
            n_features: ds.n_features(),
            n_excluded: n_raw - ds.len(),
            checksum: ds.checksum(),
        });
    }
    stage.finish(c.seed, ingest_fingerprint(c), json!({ "datasets": summaries }))
}

fn load_ingested(c: &ExperimentConfig, stage: &mut StageWriter) -> Result<Vec<LabeledDataset>> {
    let manifest = require(&c.out, "ingest", &ingest_fingerprint(c))?;
    stage.stage_input(&manifest);
    let summaries: Vec<DatasetSummary> = serde_json::from_value(manifest.details["datasets"].clone())
        .map_err(|e| CliError::InvalidData(format!("ingest manifest: {e}")))?;
    let dir = c.out.join("ingest");
    ROLES
        .iter()
        .zip(&summaries)
        .map(|(role, summary)| {
            let ds = load_dataset(
                dir.join(features_file(role)),
                dir.join(labels_file(role)),
                &summary.domain,
                LabelScale::canonical(),
            )?;
            if ds.checksum() != summary.checksum {
                return Err(CliError::CorruptArtifact {
                    path: dir.join(features_file(role)),
                });
            }
            Ok(ds)
        })
        .collect()
}

/// Ward clusters of each dataset's label plane.
pub fn cmd_cluster(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "cluster")?;
    let datasets = load_ingested(c, &mut stage)?;
    let mut details = Vec::new();
    for (role, ds) in ROLES.iter().zip(&datasets) {
        let assignment =
            cluster_dataset(ds, c.min_cluster_size).map_err(|e| CliError::InvalidData(format!("{role}: {e}")))?;
        let name = clusters_file(role);
        write_assignment(stage.path(&name), ds.ids(), &assignment)?;
        stage.record(&name)?;
        log::info!("{}: {} clusters", ds.domain(), assignment.n_clusters());
        details.push(json!({
            "role": role,
            "n_clusters": assignment.n_clusters(),
            "cluster_sizes": assignment.cluster_sizes(),
        }));
    }
    stage.finish(c.seed, cluster_fingerprint(c), json!({ "clusters": details }))
}

/// Stratified fold plans, one per dataset.
pub fn cmd_split(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "split")?;
    let datasets = load_ingested(c, &mut stage)?;
    let cluster = require(&c.out, "cluster", &cluster_fingerprint(c))?;
    stage.stage_input(&cluster);
    let mut details = Vec::new();
    for (index, (role, ds)) in ROLES.iter().zip(&datasets).enumerate() {
        let assignment = read_assignment(c.out.join("cluster").join(clusters_file(role)), ds.ids(), ds.domain())?;
        let plan = stratified_kfold(&assignment, c.n_folds, sub_seed(c.seed, "split", index as u64))?;
        let name = folds_file(role);
        write_fold_plan(stage.path(&name), ds.ids(), &plan)?;
        stage.record(&name)?;
        details.push(json!({
            "role": role,
            "fold_sizes": plan.fold_sizes(),
            "undersized_clusters": plan.undersized_clusters(),
        }));
    }
    stage.finish(c.seed, split_fingerprint(c), json!({ "folds": details }))
}

fn load_corpora(c: &ExperimentConfig, stage: &mut StageWriter) -> Result<(Corpus, Corpus)> {
    let datasets = load_ingested(c, stage)?;
    for (name, fp) in [("cluster", cluster_fingerprint(c)), ("split", split_fingerprint(c))] {
        let manifest = require(&c.out, name, &fp)?;
        stage.stage_input(&manifest);
    }
    let mut corpora = Vec::new();
    for (index, (role, ds)) in ROLES.iter().zip(datasets).enumerate() {
        let assignment = read_assignment(c.out.join("cluster").join(clusters_file(role)), ds.ids(), ds.domain())?;
        let plan = read_fold_plan(
            c.out.join("split").join(folds_file(role)),
            ds.ids(),
            c.n_folds,
            sub_seed(c.seed, "split", index as u64),
        )?;
        corpora.push(Corpus::new(ds, assignment, plan)?);
    }
    let b = corpora.pop().expect("two corpora");
    let a = corpora.pop().expect("two corpora");
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchArtifact {
    pub spec: MixSpec,
    pub selections: Vec<SearchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub record: SelectionRecord,
    pub selection: Selection,
}

fn search_file(spec: MixSpec) -> String {
    format!("{}.json", spec_name(spec))
}

/// Fold-independent model selection for every evaluated `(k, p)` cell.
pub fn cmd_search(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "search")?;
    let (a, b) = load_corpora(c, &mut stage)?;
    let mut details = Vec::new();
    for &spec in &c.evaluate.specs {
        let chosen = select_once(&a, &b, spec, &c.cv, c.seed)?;
        for (record, _) in &chosen {
            log::info!(
                "{spec}: {} / {} -> {} member(s), validation mse {:?}",
                record.model,
                record.target,
                record.recipe.members.len(),
                record.validation_score
            );
            details.push(json!({
                "spec": spec,
                "model": record.model,
                "target": record.target,
                "members": record.recipe.members,
                "validation_score": record.validation_score,
            }));
        }
        let artifact = SearchArtifact {
            spec,
            selections: chosen
                .into_iter()
                .map(|(record, selection)| SearchEntry { record, selection })
                .collect(),
        };
        stage.write(&search_file(spec), &artifacts::to_json(&artifact))?;
    }
    stage.finish(c.seed, search_fingerprint(c), json!({ "selections": details }))
}

fn tsv_bytes(records: &[MetricRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_tsv(&mut buf, records)?;
    Ok(buf)
}

fn finish_reports(
    mut stage: StageWriter,
    reports: &[CvReport],
    seed: u64,
    fingerprint: String,
) -> Result<StageManifest> {
    let records: Vec<MetricRecord> = reports.iter().flat_map(|r| r.records.iter().cloned()).collect();
    stage.write(RECORDS, &tsv_bytes(&records)?)?;
    stage.write("reports.json", &artifacts::to_json(&reports))?;
    let cells: Vec<_> = reports.iter().map(|r| r.spec()).collect();
    stage.finish(seed, fingerprint, json!({ "cells": cells, "n_records": records.len() }))
}

/// Cross-validated reports for the configured `(k, p)` cells.
pub fn cmd_evaluate(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "evaluate")?;
    let (a, b) = load_corpora(c, &mut stage)?;
    let searched = match c.cv.selection {
        SelectionMode::Once => {
            let manifest = require(&c.out, "search", &search_fingerprint(c))?;
            stage.stage_input(&manifest);
            Some(())
        }
        SelectionMode::PerFold => None,
    };
    let mut reports = Vec::new();
    for &spec in &c.evaluate.specs {
        let report = match searched {
            Some(()) => {
                let artifact: SearchArtifact = read_json(&c.out.join("search").join(search_file(spec)))?;
                let records: Vec<SelectionRecord> = artifact.selections.into_iter().map(|e| e.record).collect();
                cross_validate_with(&a, &b, spec, &c.cv, c.seed, &records)?
            }
            None => cross_validate(&a, &b, spec, &c.cv, c.seed)?,
        };
        log_aggregates(&report);
        reports.push(report);
    }
    finish_reports(stage, &reports, c.seed, evaluate_fingerprint(c))
}

fn log_aggregates(report: &CvReport) {
    for agg in &report.aggregates {
        log::info!(
            "{}: {} on {} / {}: rmse {} r2 {:.3}",
            report.spec(),
            agg.model,
            agg.test_domain,
            agg.target,
            format_sci(agg.rmse.mean),
            agg.r2.mean
        );
    }
}

/// Every cell of the configured `(k, p)` sweep.
pub fn cmd_sweep(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "sweep")?;
    let (a, b) = load_corpora(c, &mut stage)?;
    let reports = run_kp_sweep(&a, &b, &c.sweep.specs(), &c.cv, c.seed)?;
    reports.iter().for_each(log_aggregates);
    finish_reports(stage, &reports, c.seed, sweep_fingerprint(c))
}

/// Cells trained with `A`'s labels replaced by uniform noise.
pub fn cmd_baseline(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "baseline")?;
    let (a, b) = load_corpora(c, &mut stage)?;
    let mut reports = Vec::new();
    for &spec in &c.baseline.specs {
        let report = run_randomized_baseline(&a, &b, spec, &c.cv, c.seed)?;
        log_aggregates(&report);
        reports.push(report);
    }
    finish_reports(stage, &reports, c.seed, baseline_fingerprint(c))
}

const AGGREGATE_HEADER: &str =
    "spec_k\tspec_p\tmodel\ttest_domain\ttarget\tn_folds\trmse_mean\trmse_std\tmse_mean\tmse_std\tr2_mean\tr2_std\n";

fn aggregates_tsv(aggs: &[Aggregate]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    for a in aggs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            a.spec_k,
            a.spec_p,
            a.model,
            a.test_domain,
            a.target,
            a.n_folds,
            a.rmse.mean,
            a.rmse.std,
            a.mse.mean,
            a.mse.std,
            a.r2.mean,
            a.r2.std
        ));
    }
    out
}

fn markdown(title: &str, aggs: &[Aggregate]) -> String {
    let mut out = format!("# {title}\n\nMean ± standard deviation over folds.\n");
    for metric in [Metric::Rmse, Metric::Mse, Metric::R2] {
        out.push_str(&format!("\n## {}\n\n{}", metric.name(), table_by_spec(aggs, metric)));
    }
    out.push_str(&format!("\n## Summary\n\n{}", table_summary(aggs)));
    out
}

fn same_cell(a: &Aggregate, b: &Aggregate) -> bool {
    a.spec_k == b.spec_k
        && a.spec_p == b.spec_p
        && a.model == b.model
        && a.test_domain == b.test_domain
        && a.target == b.target
}

/// Baseline cells next to the genuine cells with the same `(k, p)`.
fn baseline_comparison(baseline: &[Aggregate], genuine: &[Aggregate]) -> String {
    let mut out = String::from(
        "spec_k\tspec_p\tmodel\ttest_domain\ttarget\tgenuine_rmse\tbaseline_rmse\tgenuine_r2\tbaseline_r2\n",
    );
    for b in baseline {
        if let Some(g) = genuine.iter().find(|g| same_cell(g, b)) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                b.spec_k, b.spec_p, b.model, b.test_domain, b.target, g.rmse.mean, b.rmse.mean, g.r2.mean, b.r2.mean
            ));
        }
    }
    out
}

/// Aggregate tables from whichever of evaluate, sweep and baseline exist.
pub fn cmd_report(c: &ExperimentConfig) -> Result<StageManifest> {
    let mut stage = StageWriter::begin(&c.out, "report")?;
    let sources = [
        ("evaluate", evaluate_fingerprint(c), "Evaluated cells"),
        ("sweep", sweep_fingerprint(c), "(k, p) sweep"),
        ("baseline", baseline_fingerprint(c), "Randomized-label baseline"),
    ];
    let mut found: Vec<(&str, Vec<Aggregate>)> = Vec::new();
    for (name, fp, title) in &sources {
        let Some(manifest) = artifacts::optional(&c.out, name, fp)? else {
            continue;
        };
        stage.stage_input(&manifest);
        let path = c.out.join(name).join(RECORDS);
        let file = std::fs::File::open(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
        let aggs = aggregate(&read_tsv(std::io::BufReader::new(file))?);
        stage.write(&format!("{name}.md"), markdown(title, &aggs).as_bytes())?;
        stage.write(&format!("{name}.aggregates.tsv"), aggregates_tsv(&aggs).as_bytes())?;
        found.push((name, aggs));
    }
    if found.is_empty() {
        return Err(CliError::MissingPriorStage {
            stage: "evaluate".into(),
            reason: "none of evaluate, sweep or baseline has results for this configuration".into(),
        });
    }
    let get = |name: &str| found.iter().find(|(n, _)| *n == name).map(|(_, a)| a.as_slice());
    if let Some(base) = get("baseline") {
        let genuine: Vec<Aggregate> = get("sweep")
            .into_iter()
            .chain(get("evaluate"))
            .flatten()
            .cloned()
            .collect();
        stage.write("baseline_vs_genuine.tsv", baseline_comparison(base, &genuine).as_bytes())?;
    }
    let names: Vec<&str> = found.iter().map(|(n, _)| *n).collect();
    stage.finish(c.seed, fingerprint(json!({ "sources": names })), json!({ "sources": names }))
}

/// Writes the resolved configuration next to the stage outputs.
pub fn write_resolved_config(c: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&c.out).map_err(CliError::io(format!("creating {}", c.out.display())))?;
    artifacts::write_file(&c.out.join("config.toml"), c.to_toml().as_bytes())
}

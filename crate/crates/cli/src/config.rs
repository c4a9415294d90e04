//! Experiment configuration, read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use affectmix::evaluation::CvSettings;
use affectmix::mixing::default_grid;
use affectmix::synthetic::SyntheticConfig;
use affectmix::{LabelScale, MixSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// One labeled corpus on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub domain: String,
    /// CSV with an `id` column followed by one column per feature.
    pub features: PathBuf,
    /// CSV with `id,valence,arousal[,category]`.
    pub labels: PathBuf,
    /// Range of the raw annotations.
    pub scale: LabelScale,
    /// Samples with one of these categories are dropped at ingestion.
    #[serde(default)]
    pub exclude_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Files { a: DatasetFiles, b: DatasetFiles },
    /// The generated two-domain benchmark, seeded by the experiment seed.
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepShape {
    /// Every `(k, p)` of `grid × grid` with `max(k, p) = 1`.
    #[default]
    Full,
    /// `(1, p)` for `p` in the grid.
    VaryP,
    /// `(k, 1)` for `k` in the grid.
    VaryK,
    /// Both one-at-a-time sweeps; `(1, 1)` appears once.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub shape: SweepShape,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: default_grid(),
            shape: SweepShape::default(),
        }
    }
}

impl SweepConfig {
    pub fn specs(&self) -> Vec<MixSpec> {
        match self.shape {
            SweepShape::Full => MixSpec::full_grid(&self.grid),
            SweepShape::VaryP => MixSpec::vary_p(&self.grid),
            SweepShape::VaryK => MixSpec::vary_k(&self.grid),
            SweepShape::Cross => {
                let mut specs = MixSpec::vary_p(&self.grid);
                for s in MixSpec::vary_k(&self.grid) {
                    if !specs.contains(&s) {
                        specs.push(s);
                    }
                }
                specs
            }
        }
    }
}

fn spec(k: f64, p: f64) -> MixSpec {
    MixSpec::new(k, p).expect("valid constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub specs: Vec<MixSpec>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            specs: vec![spec(1.0, 0.0), spec(0.0, 1.0), spec(1.0, 1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Cells trained with randomized `A` labels.
    pub specs: Vec<MixSpec>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            specs: MixSpec::vary_k(&default_grid()),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_folds() -> usize {
    5
}

fn default_min_cluster() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default = "default_min_cluster")]
    pub min_cluster_size: usize,
    pub data: DataSource,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub cv: CvSettings,
}

impl ExperimentConfig {
    /// Parses `text`; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::ConfigSyntax(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.out);
        if let DataSource::Files { a, b } = &mut config.data {
            for ds in [a, b] {
                resolve(&mut ds.features);
                resolve(&mut ds.labels);
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigRead {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    /// The configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(invalid("n_folds", "need at least 2 folds"));
        }
        if self.min_cluster_size == 0 {
            return Err(invalid("min_cluster_size", "must be positive"));
        }
        match &self.data {
            DataSource::Files { a, b } => {
                for (role, ds) in [("data.a", a), ("data.b", b)] {
                    if ds.domain.trim().is_empty() || ds.domain.contains(':') {
                        return Err(invalid(&format!("{role}.domain"), "must be non-empty and free of ':'"));
                    }
                    let mut seen = HashSet::new();
                    if let Some(c) = ds.exclude_categories.iter().find(|c| !seen.insert(*c)) {
                        return Err(invalid(
                            &format!("{role}.exclude_categories"),
                            format!("{c:?} listed twice"),
                        ));
                    }
                }
                if a.domain == b.domain {
                    return Err(invalid("data.b.domain", "both datasets have the same domain"));
                }
            }
            DataSource::Synthetic(s) => {
                if s.n_per_domain == 0 || s.n_latent == 0 {
                    return Err(invalid("data", "n_per_domain and n_latent must be positive"));
                }
                if 2 * s.n_nuisance >= s.n_features {
                    return Err(invalid("data.n_nuisance", "nuisance blocks leave no shared features"));
                }
                for (field, v) in [
                    ("label_noise", s.label_noise),
                    ("feature_noise", s.feature_noise),
                    ("domain_shift", s.domain_shift),
                ] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(invalid(&format!("data.{field}"), "must be finite and non-negative"));
                    }
                }
            }
        }
        if self.evaluate.specs.is_empty() {
            return Err(invalid("evaluate.specs", "empty"));
        }
        if self.sweep.grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(invalid("sweep.grid", "values must lie in [0, 1]"));
        }
        if self.sweep.specs().is_empty() {
            return Err(invalid("sweep.grid", "no valid (k, p) cell; include 1"));
        }
        for (field, specs) in [
            ("evaluate.specs", &self.evaluate.specs),
            ("baseline.specs", &self.baseline.specs),
        ] {
            let names: HashSet<String> = specs.iter().map(|s| spec_name(*s)).collect();
            if names.len() != specs.len() {
                return Err(invalid(field, "duplicate (k, p) cell"));
            }
        }
        if self.baseline.specs.is_empty() {
            return Err(invalid("baseline.specs", "empty"));
        }
        self.cv.validate().map_err(|e| invalid("cv", e.to_string()))?;
        Ok(())
    }
}

/// File stem for one `(k, p)` cell, e.g. `k1_p0.2`.
pub fn spec_name(spec: MixSpec) -> String {
    format!("k{}_p{}", spec.k(), spec.p())
}

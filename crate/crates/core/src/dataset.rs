//! Loading, validating and normalizing labeled feature sets.
//!
//! A feature file is a comma-separated table whose header starts with `id`
//! followed by one column per static acoustic descriptor. The matching label
//! file has the header `id,valence,arousal` with an optional trailing
//! `category` column. Rows are joined on `id`, so the two files may list
//! samples in different orders; the dataset keeps the feature file's order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch in {path}: {reason}")]
    SchemaMismatch { path: PathBuf, reason: String },
    #[error("non-finite feature value for sample {id} (row {row}), column {column}")]
    NonFiniteFeature {
        id: String,
        row: usize,
        column: String,
    },
    #[error("samples present in only one of the feature/label files: {}", .ids.join(", "))]
    UnpairedSample { ids: Vec<String> },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("empty sample id at row {0}")]
    EmptyId(usize),
    #[error("label {value} of sample {id:?} outside [{lo}, {hi}]")]
    LabelOutOfRange {
        id: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid label scale: lo={lo} must be below hi={hi}")]
    InvalidScale { lo: f64, hi: f64 },
    #[error("dataset {0:?} has no category metadata")]
    NoCategoryMetadata(String),
    #[error("feature columns differ: {0}")]
    FeatureDimensionMismatch(String),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Identifier of one sample, unique within its dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(String);

impl SampleId {
    pub fn new(value: impl Into<String>) -> Option<Self> {
        let value = value.into();
        if value.is_empty() {
            None
        } else {
            Some(SampleId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The two regression targets. They are always modelled independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valence,
    Arousal,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Valence, Target::Arousal];

    pub fn name(self) -> &'static str {
        match self {
            Target::Valence => "valence",
            Target::Arousal => "arousal",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Source range of the raw annotations, e.g. the 1..9 SAM scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelScale")]
pub struct LabelScale {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
struct RawLabelScale {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawLabelScale> for LabelScale {
    type Error = DatasetError;

    fn try_from(raw: RawLabelScale) -> Result<Self> {
        LabelScale::new(raw.lo, raw.hi)
    }
}

impl LabelScale {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(LabelScale { lo, hi })
        } else {
            Err(DatasetError::InvalidScale { lo, hi })
        }
    }

    /// Nine-point Self-Assessment Manikin ratings.
    pub fn sam() -> Self {
        LabelScale { lo: 1.0, hi: 9.0 }
    }

    pub fn unit() -> Self {
        LabelScale { lo: 0.0, hi: 1.0 }
    }

    /// Labels that are already on the canonical scale.
    pub fn canonical() -> Self {
        LabelScale { lo: -1.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

/// Affine map of `raw` from `[lo, hi]` onto `[-1, 1]`.
pub fn rescale_label(raw: f64, scale: LabelScale) -> Result<f64> {
    rescale_checked(raw, scale, "")
}

fn rescale_checked(raw: f64, scale: LabelScale, id: &str) -> Result<f64> {
    let LabelScale { lo, hi } = scale;
    if !(lo..=hi).contains(&raw) {
        return Err(DatasetError::LabelOutOfRange {
            id: id.to_string(),
            value: raw,
            lo,
            hi,
        });
    }
    if lo == -1.0 && hi == 1.0 {
        return Ok(raw);
    }
    // Symmetric form: both endpoints land exactly on -1 and 1.
    let value = ((raw - lo) - (hi - raw)) / (hi - lo);
    Ok(value.clamp(-1.0, 1.0))
}

/// An immutable feature matrix with per-sample valence/arousal labels.
///
/// Labels are on the canonical `[-1, 1]` scale; every feature value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    domain: String,
    ids: Vec<SampleId>,
    feature_names: Vec<String>,
    features: Array2<f64>,
    valence: Array1<f64>,
    arousal: Array1<f64>,
    category: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(
        domain: impl Into<String>,
        ids: Vec<SampleId>,
        feature_names: Vec<String>,
        features: Array2<f64>,
        valence: Array1<f64>,
        arousal: Array1<f64>,
        category: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = ids.len();
        if features.nrows() != n || valence.len() != n || arousal.len() != n {
            return Err(DatasetError::Inconsistent(format!(
                "{} ids, {} feature rows, {} valence and {} arousal labels",
                n,
                features.nrows(),
                valence.len(),
                arousal.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(DatasetError::Inconsistent(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if let Some(category) = &category {
            if category.len() != n {
                return Err(DatasetError::Inconsistent(format!(
                    "{} categories for {n} samples",
                    category.len()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id) {
                return Err(DatasetError::DuplicateId(id.to_string()));
            }
        }
        for (row, values) in features.axis_iter(Axis(0)).enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteFeature {
                    id: ids[row].to_string(),
                    row,
                    column: feature_names[col].clone(),
                });
            }
        }
        for (i, id) in ids.iter().enumerate() {
            for value in [valence[i], arousal[i]] {
                if !(-1.0..=1.0).contains(&value) {
                    return Err(DatasetError::LabelOutOfRange {
                        id: id.to_string(),
                        value,
                        lo: -1.0,
                        hi: 1.0,
                    });
                }
            }
        }
        Ok(LabeledDataset {
            domain: domain.into(),
            ids,
            feature_names,
            features,
            valence,
            arousal,
            category,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn valence(&self) -> ArrayView1<'_, f64> {
        self.valence.view()
    }

    pub fn arousal(&self) -> ArrayView1<'_, f64> {
        self.arousal.view()
    }

    pub fn target(&self, target: Target) -> ArrayView1<'_, f64> {
        match target {
            Target::Valence => self.valence.view(),
            Target::Arousal => self.arousal.view(),
        }
    }

    pub fn category(&self) -> Option<&[String]> {
        self.category.as_deref()
    }

    /// `n × 2` matrix of `(valence, arousal)` pairs.
    pub fn label_matrix(&self) -> Array2<f64> {
        let mut labels = Array2::zeros((self.len(), 2));
        labels.column_mut(0).assign(&self.valence);
        labels.column_mut(1).assign(&self.arousal);
        labels
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            domain: self.domain.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), indices),
            valence: indices.iter().map(|&i| self.valence[i]).collect(),
            arousal: indices.iter().map(|&i| self.arousal[i]).collect(),
            category: self
                .category
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i].clone()).collect()),
        }
    }

    /// Same samples and features with replaced labels.
    pub fn with_labels(&self, valence: Array1<f64>, arousal: Array1<f64>) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.domain.clone(),
            self.ids.clone(),
            self.feature_names.clone(),
            self.features.clone(),
            valence,
            arousal,
            self.category.clone(),
        )
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> LabeledDataset {
        self.domain = domain.into();
        self
    }

    /// Stacks `first` on top of `second`. Category metadata survives only
    /// when both parts carry it.
    pub fn concat(
        domain: impl Into<String>,
        first: &LabeledDataset,
        second: &LabeledDataset,
    ) -> Result<LabeledDataset> {
        check_same_features(first, second)?;
        let features = ndarray::concatenate(Axis(0), &[first.features(), second.features()])
            .expect("column counts checked");
        let category = match (&first.category, &second.category) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        LabeledDataset::new(
            domain,
            first.ids.iter().chain(&second.ids).cloned().collect(),
            first.feature_names.clone(),
            features,
            first.valence.iter().chain(&second.valence).copied().collect(),
            first.arousal.iter().chain(&second.arousal).copied().collect(),
            category,
        )
    }

    /// SHA-256 over ids, feature names, features and labels (bit patterns).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.domain.as_bytes());
        h.update([0]);
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for (i, id) in self.ids.iter().enumerate() {
            h.update(id.as_str().as_bytes());
            h.update([0]);
            for v in self.features.row(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(self.valence[i].to_bits().to_le_bytes());
            h.update(self.arousal[i].to_bits().to_le_bytes());
            if let Some(c) = &self.category {
                h.update(c[i].as_bytes());
                h.update([0]);
            }
        }
        hex::encode(h.finalize())
    }

    /// Checksum of the feature matrix alone.
    pub fn feature_checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.features.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn check_same_features(a: &LabeledDataset, b: &LabeledDataset) -> Result<()> {
    if a.n_features() != b.n_features() {
        return Err(DatasetError::FeatureDimensionMismatch(format!(
            "{:?} has {} columns, {:?} has {}",
            a.domain,
            a.n_features(),
            b.domain,
            b.n_features()
        )));
    }
    Ok(())
}

/// Drops every sample whose category equals `category`, keeping order.
pub fn exclude_by_category(ds: &LabeledDataset, category: &str) -> Result<LabeledDataset> {
    let categories = ds
        .category()
        .ok_or_else(|| DatasetError::NoCategoryMetadata(ds.domain.clone()))?;
    let keep: Vec<usize> = categories
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_str() != category)
        .map(|(i, _)| i)
        .collect();
    Ok(ds.select(&keep))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn schema(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::SchemaMismatch {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> DatasetError {
    match err.kind() {
        csv::ErrorKind::Io(_) => DatasetError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(err.to_string()),
        },
        _ => schema(path, err.to_string()),
    }
}

struct FeatureTable {
    names: Vec<String>,
    ids: Vec<SampleId>,
    rows: Vec<f64>,
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("id") {
        return Err(schema(path, "first header column must be `id`"));
    }
    if header.len() < 2 {
        return Err(schema(path, "no feature columns"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(schema(
                path,
                format!("row {row} has {} columns, header has {}", record.len(), header.len()),
            ));
        }
        let id = SampleId::new(&record[0]).ok_or(DatasetError::EmptyId(row))?;
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id.to_string()));
        }
        for (col, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                schema(path, format!("non-numeric value {field:?} at row {row}, column {}", names[col]))
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFiniteFeature {
                    id: id.to_string(),
                    row,
                    column: names[col].clone(),
                });
            }
            rows.push(value);
        }
        ids.push(id);
    }
    Ok(FeatureTable { names, ids, rows })
}

struct LabelRow {
    valence: f64,
    arousal: f64,
    category: Option<String>,
}

fn read_labels(path: &Path, scale: LabelScale) -> Result<(HashMap<SampleId, LabelRow>, Vec<SampleId>, bool)> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let columns: Vec<&str> = header.iter().collect();
    let has_category = match columns.as_slice() {
        ["id", "valence", "arousal"] => false,
        ["id", "valence", "arousal", "category"] => true,
        _ => {
            return Err(schema(
                path,
                format!("expected header id,valence,arousal[,category], found {}", columns.join(",")),
            ))
        }
    };
    let mut labels = HashMap::new();
    let mut order = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(schema(path, format!("row {row} has {} columns", record.len())));
        }
        let id = SampleId::new(&record[0]).ok_or(DatasetError::EmptyId(row))?;
        let parse = |field: &str, name: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| schema(path, format!("non-numeric {name} {field:?} at row {row}")))
        };
        let valence = rescale_checked(parse(&record[1], "valence")?, scale, id.as_str())?;
        let arousal = rescale_checked(parse(&record[2], "arousal")?, scale, id.as_str())?;
        let category = has_category.then(|| record[3].to_string());
        if labels
            .insert(id.clone(), LabelRow { valence, arousal, category })
            .is_some()
        {
            return Err(DatasetError::DuplicateId(id.to_string()));
        }
        order.push(id);
    }
    Ok((labels, order, has_category))
}

/// Reads and joins a feature file and a label file, rescaling labels from
/// `scale` to `[-1, 1]`.
pub fn load_dataset(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    domain: &str,
    scale: LabelScale,
) -> Result<LabeledDataset> {
    let features_path = features_path.as_ref();
    let labels_path = labels_path.as_ref();
    let table = read_features(features_path)?;
    let (mut labels, label_order, has_category) = read_labels(labels_path, scale)?;

    let feature_ids: HashSet<&SampleId> = table.ids.iter().collect();
    let mut unpaired: Vec<String> = table
        .ids
        .iter()
        .filter(|id| !labels.contains_key(*id))
        .chain(label_order.iter().filter(|id| !feature_ids.contains(id)))
        .map(|id| id.to_string())
        .collect();
    if !unpaired.is_empty() {
        unpaired.sort();
        return Err(DatasetError::UnpairedSample { ids: unpaired });
    }

    let n = table.ids.len();
    let mut valence = Array1::zeros(n);
    let mut arousal = Array1::zeros(n);
    let mut category = has_category.then(|| Vec::with_capacity(n));
    for (i, id) in table.ids.iter().enumerate() {
        let row = labels.remove(id).expect("pairing checked");
        valence[i] = row.valence;
        arousal[i] = row.arousal;
        if let (Some(cats), Some(c)) = (category.as_mut(), row.category) {
            cats.push(c);
        }
    }
    let n_cols = table.names.len();
    let features = Array2::from_shape_vec((n, n_cols), table.rows)
        .map_err(|e| DatasetError::Inconsistent(e.to_string()))?;
    LabeledDataset::new(domain, table.ids, table.names, features, valence, arousal, category)
}

/// Writes the dataset back out as a feature CSV and a label CSV on the
/// canonical scale. Floats use the shortest round-trip representation, so
/// `load_dataset(.., LabelScale::canonical())` restores it bit-exactly.
pub fn write_dataset(
    ds: &LabeledDataset,
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(features_path)?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ds.ids.iter().enumerate() {
        let mut record = vec![id.to_string()];
        record.extend(ds.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(labels_path)?;
    if ds.category.is_some() {
        w.write_record(["id", "valence", "arousal", "category"])?;
    } else {
        w.write_record(["id", "valence", "arousal"])?;
    }
    for (i, id) in ds.ids.iter().enumerate() {
        let mut record = vec![id.to_string(), ds.valence[i].to_string(), ds.arousal[i].to_string()];
        if let Some(c) = &ds.category {
            record.push(c[i].clone());
        }
        w.write_record(&record)?;
    }
    w.flush()
}

/// SHA-256 of a file's bytes.
pub fn file_checksum(path: impl AsRef<Path>) -> std::io::Result<String> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(crate::seeding::content_hash(&bytes))
}

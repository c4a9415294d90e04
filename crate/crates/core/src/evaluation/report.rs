use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::protocol::ReportManifest;
use super::{EvaluationError, Result};
use crate::dataset::Target;
use crate::mixing::MixSpec;

pub const TSV_HEADER: [&str; 9] = [
    "spec_k",
    "spec_p",
    "model",
    "test_domain",
    "target",
    "fold",
    "rmse",
    "mse",
    "r2",
];

/// Scores of one model on one test fold of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub spec_k: f64,
    pub spec_p: f64,
    pub model: String,
    pub test_domain: String,
    pub target: Target,
    pub fold: usize,
    pub rmse: f64,
    pub mse: f64,
    pub r2: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Mse,
    R2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE",
            Metric::Mse => "MSE",
            Metric::R2 => "R2",
        }
    }
}

/// Fold statistics of one `(spec, model, test_domain, target)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub spec_k: f64,
    pub spec_p: f64,
    pub model: String,
    pub test_domain: String,
    pub target: Target,
    pub n_folds: usize,
    pub rmse: MeanStd,
    pub mse: MeanStd,
    pub r2: MeanStd,
}

impl Aggregate {
    pub fn metric(&self, metric: Metric) -> MeanStd {
        match metric {
            Metric::Rmse => self.rmse,
            Metric::Mse => self.mse,
            Metric::R2 => self.r2,
        }
    }

    fn spec_label(&self) -> String {
        spec_label(self.spec_k, self.spec_p)
    }
}

fn spec_label(k: f64, p: f64) -> String {
    format!("k={k} p={p}")
}

/// Groups records by `(spec, model, test_domain, target)` in order of first
/// appearance.
pub fn aggregate(records: &[MetricRecord]) -> Vec<Aggregate> {
    let mut groups: Vec<(&MetricRecord, Vec<&MetricRecord>)> = Vec::new();
    for r in records {
        let same = |g: &MetricRecord| {
            g.spec_k == r.spec_k
                && g.spec_p == r.spec_p
                && g.model == r.model
                && g.test_domain == r.test_domain
                && g.target == r.target
        };
        match groups.iter_mut().find(|(g, _)| same(g)) {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(first, members)| {
            let column = |f: fn(&MetricRecord) -> f64| MeanStd::of(&members.iter().map(|m| f(m)).collect::<Vec<_>>());
            Aggregate {
                spec_k: first.spec_k,
                spec_p: first.spec_p,
                model: first.model.clone(),
                test_domain: first.test_domain.clone(),
                target: first.target,
                n_folds: members.len(),
                rmse: column(|m| m.rmse),
                mse: column(|m| m.mse),
                r2: column(|m| m.r2),
            }
        })
        .collect()
}

/// Cross-validation result for one `(k, p)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub baseline: bool,
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<Aggregate>,
    pub manifest: ReportManifest,
}

impl CvReport {
    pub fn spec(&self) -> MixSpec {
        self.manifest.spec
    }

    pub fn find(&self, model: &str, test_domain: &str, target: Target) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.model == model && a.test_domain == test_domain && a.target == target)
    }
}

/// Writes records as tab-separated values under [`TSV_HEADER`]. Numbers use
/// the shortest representation that parses back to the same value.
pub fn write_tsv<'a, W: Write>(out: W, records: impl IntoIterator<Item = &'a MetricRecord>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let csv_err = |e: csv::Error| EvaluationError::Io(std::io::Error::other(e.to_string()));
    w.write_record(TSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.spec_k.to_string(),
            r.spec_p.to_string(),
            r.model.clone(),
            r.test_domain.clone(),
            r.target.name().to_string(),
            r.fold.to_string(),
            r.rmse.to_string(),
            r.mse.to_string(),
            r.r2.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tsv<R: Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(input);
    let fmt = |m: String| EvaluationError::Format(m);
    let header = r.headers().map_err(|e| fmt(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TSV_HEADER {
        return Err(fmt(format!("expected header {}", TSV_HEADER.join("\t"))));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| fmt(format!("row {}: bad {} value {:?}", line + 1, TSV_HEADER[i], &row[i])))
        };
        let target = match &row[4] {
            "valence" => Target::Valence,
            "arousal" => Target::Arousal,
            other => return Err(fmt(format!("row {}: unknown target {other:?}", line + 1))),
        };
        records.push(MetricRecord {
            spec_k: num(0)?,
            spec_p: num(1)?,
            model: row[2].to_string(),
            test_domain: row[3].to_string(),
            target,
            fold: row[5]
                .parse()
                .map_err(|_| fmt(format!("row {}: bad fold {:?}", line + 1, &row[5])))?,
            rmse: num(6)?,
            mse: num(7)?,
            r2: num(8)?,
        });
    }
    Ok(records)
}

/// `x` in `%.2e` notation with a signed, at least two-digit exponent.
pub fn format_sci(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.2e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Three decimals without the leading zero, e.g. `.152`.
pub fn format_short(x: f64) -> String {
    let s = format!("{x:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn distinct<T: PartialEq + Clone>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Markdown table with one column per training spec and one row per
/// `(test_domain, model, target)`; cells are `mean ± std` of `metric`.
pub fn table_by_spec(aggregates: &[Aggregate], metric: Metric) -> String {
    let specs = distinct(aggregates.iter().map(|a| (a.spec_k.to_bits(), a.spec_p.to_bits())));
    let rows = distinct(aggregates.iter().map(|a| (a.test_domain.clone(), a.model.clone(), a.target)));
    let mut out = String::new();
    let _ = write!(out, "| Test set | Model | Target |");
    for &(k, p) in &specs {
        let _ = write!(out, " {} |", spec_label(f64::from_bits(k), f64::from_bits(p)));
    }
    out.push('\n');
    out.push_str(&"|---".repeat(3 + specs.len()));
    out.push_str("|\n");
    for (domain, model, target) in rows {
        let _ = write!(out, "| {domain} | {model} | {target} |");
        for &(k, p) in &specs {
            let cell = aggregates.iter().find(|a| {
                a.spec_k.to_bits() == k
                    && a.spec_p.to_bits() == p
                    && a.test_domain == domain
                    && a.model == model
                    && a.target == target
            });
            match cell {
                Some(a) => {
                    let m = a.metric(metric);
                    let _ = write!(out, " {} ± {} |", format_sci(m.mean), format_sci(m.std));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Markdown table with one row per `(test_domain, model @ spec)` and mean
/// RMSE and R² for each target.
pub fn table_summary(aggregates: &[Aggregate]) -> String {
    let rows = distinct(aggregates.iter().map(|a| (a.test_domain.clone(), a.model.clone(), a.spec_label())));
    let mut out = String::from(
        "| Test set | Method | RMSE valence | RMSE arousal | R2 valence | R2 arousal |\n|---|---|---|---|---|---|\n",
    );
    for (domain, model, spec) in rows {
        let cell = |target: Target, metric: Metric| {
            aggregates
                .iter()
                .find(|a| a.test_domain == domain && a.model == model && a.spec_label() == spec && a.target == target)
                .map(|a| format_short(a.metric(metric).mean))
                .unwrap_or_else(|| "-".to_string())
        };
        let _ = writeln!(
            out,
            "| {domain} | {model} @ {spec} | {} | {} | {} | {} |",
            cell(Target::Valence, Metric::Rmse),
            cell(Target::Arousal, Metric::Rmse),
            cell(Target::Valence, Metric::R2),
            cell(Target::Arousal, Metric::R2),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(fold: usize, rmse: f64, target: Target) -> MetricRecord {
        MetricRecord {
            spec_k: 1.0,
            spec_p: 0.2,
            model: "svr".into(),
            test_domain: "pmemo".into(),
            target,
            fold,
            rmse,
            mse: rmse * rmse,
            r2: 1.0 - rmse,
        }
    }

    #[test]
    fn sci_matches_printf() {
        assert_eq!(format_sci(0.214), "2.14e-01");
        assert_eq!(format_sci(28000.0), "2.80e+04");
        assert_eq!(format_sci(0.0206), "2.06e-02");
        assert_eq!(format_sci(0.0), "0.00e+00");
        assert_eq!(format_sci(9.999), "1.00e+01");
        assert_eq!(format_sci(-1.5e-10), "-1.50e-10");
        assert_eq!(format_sci(1e100), "1.00e+100");
    }

    #[test]
    fn short_format() {
        assert_eq!(format_short(0.1523), ".152");
        assert_eq!(format_short(-0.25), "-.250");
        assert_eq!(format_short(1.0), "1.000");
    }

    #[test]
    fn sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn tsv_round_trip_and_aggregate() {
        let records: Vec<MetricRecord> = (0..5)
            .flat_map(|f| [rec(f, 0.1 + f as f64 / 7.0, Target::Valence), rec(f, 0.3, Target::Arousal)])
            .collect();
        let mut buf = Vec::new();
        write_tsv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("spec_k\tspec_p\tmodel\ttest_domain\ttarget\tfold\trmse\tmse\tr2\n"));
        assert_eq!(text.lines().count(), 11);
        let back = read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, records);

        let agg = aggregate(&records);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].n_folds, 5);
        assert_eq!(agg[1].rmse.std, 0.0);
        let table = table_by_spec(&agg, Metric::Rmse);
        assert!(table.contains("k=1 p=0.2"), "{table}");
        assert!(table.contains("3.00e-01 ± 0.00e+00"), "{table}");
        let summary = table_summary(&agg);
        assert!(summary.contains("svr @ k=1 p=0.2"), "{summary}");
    }

    #[test]
    fn rejects_bad_tsv() {
        assert!(read_tsv("a\tb\n".as_bytes()).is_err());
        let bad = format!("{}\n1\t0\tsvr\tx\tjoy\t0\t1\t1\t0\n", TSV_HEADER.join("\t"));
        assert!(read_tsv(bad.as_bytes()).is_err());
    }
}

//! CSV ingestion, result serialization and the flat `key = value` config format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::inference::BootstrapResult;
use crate::kclass::{KClassFit, Method};
use crate::sim::RejectionTable;

/// Serializes a list of matrices as nested row arrays.
pub fn serialize_matrices<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        seq.serialize_element(&matrix_rows(m))?;
    }
    seq.end()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Which CSV columns play which role. Empty lists are filled from the
/// header by prefix: `x1, x2, ...`, `z1, ...`, `w1, ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub w: Vec<String>,
    pub cluster: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            y: "y".into(),
            x: Vec::new(),
            z: Vec::new(),
            w: Vec::new(),
            cluster: "cluster".into(),
        }
    }
}

/// Columns named `<prefix><k>` for k = 1, 2, ..., in numeric order.
fn numbered(header: &[String], prefix: &str) -> Vec<String> {
    let mut found: Vec<(u32, String)> = header
        .iter()
        .filter_map(|h| {
            let rest = h.strip_prefix(prefix)?;
            let k: u32 = rest.parse().ok()?;
            (!rest.starts_with('+') && !rest.starts_with('0')).then(|| (k, h.clone()))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(_, h)| h).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Append cluster indicators to W. When W already holds a constant
    /// column the first cluster's indicator is left out.
    pub cluster_dummies: bool,
}

/// A dataset together with the original cluster labels, in the dataset's
/// cluster order.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: ClusteredDataset,
    pub cluster_labels: Vec<String>,
    /// Names of the W columns, including generated ones.
    pub w_names: Vec<String>,
}

/// `load_csv`.
pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap, opts: LoadOptions) -> Result<LoadedData> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, map, opts)
}

/// Reads a dataset from any CSV source. Rows in errors are counted from 1,
/// header excluded.
pub fn read_csv<R: Read>(source: R, map: &ColumnMap, opts: LoadOptions) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let resolve = |names: &[String], prefix: &str| -> Vec<String> {
        if names.is_empty() {
            numbered(&header, prefix)
        } else {
            names.to_vec()
        }
    };
    let x_names = resolve(&map.x, "x");
    let z_names = resolve(&map.z, "z");
    let w_names = resolve(&map.w, "w");
    if x_names.is_empty() || z_names.is_empty() {
        return Err(Error::InvalidArgument(
            "CSV needs at least one x column and one z column".into(),
        ));
    }
    let index = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("column \"{name}\" not found in header")))
    };
    let y_col = index(&map.y)?;
    let c_col = index(&map.cluster)?;
    let cols = |names: &[String]| names.iter().map(|s| index(s)).collect::<Result<Vec<_>>>();
    let (x_cols, z_cols, w_cols) = (cols(&x_names)?, cols(&z_names)?, cols(&w_names)?);

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut w = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |c: usize| -> Result<f64> {
            let text = rec.get(c).unwrap_or("");
            text.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: format!("\"{text}\" is not a number"),
            })
        };
        y.push(cell(y_col)?);
        for &c in &x_cols {
            x.push(cell(c)?);
        }
        for &c in &z_cols {
            z.push(cell(c)?);
        }
        for &c in &w_cols {
            w.push(cell(c)?);
        }
        let label = rec.get(c_col).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Parse {
                row,
                column: map.cluster.clone(),
                message: "empty cluster label".into(),
            });
        }
        raw_labels.push(label.to_owned());
    }
    let n = y.len();
    let (ids, labels) = cluster_ids(&raw_labels);
    let x = DMatrix::from_row_slice(n, x_cols.len(), &x);
    let z = DMatrix::from_row_slice(n, z_cols.len(), &z);
    let mut w = DMatrix::from_row_slice(n, w_cols.len(), &w);
    let mut w_names = w_names;

    if opts.cluster_dummies {
        let has_constant = (0..w.ncols()).any(|c| is_constant(&w.column(c).into_owned()));
        let mut sorted: Vec<i64> = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let skip = usize::from(has_constant);
        let mut extra = Vec::new();
        for &id in &sorted[skip..] {
            let d = DVector::from_iterator(n, ids.iter().map(|&i| f64::from(u8::from(i == id))));
            for c in 0..w.ncols() {
                if w.column(c) == d {
                    return Err(Error::InvalidArgument(format!(
                        "W column \"{}\" duplicates the indicator of cluster {}",
                        w_names[c], labels[&id]
                    )));
                }
            }
            w_names.push(format!("cluster_{}", labels[&id]));
            extra.push(d);
        }
        let mut wider = DMatrix::zeros(n, w.ncols() + extra.len());
        wider.columns_mut(0, w.ncols()).copy_from(&w);
        for (k, d) in extra.iter().enumerate() {
            wider.set_column(w.ncols() + k, d);
        }
        w = wider;
    }
    if w.ncols() == 0 {
        w = DMatrix::from_element(n, 1, 1.0);
        w_names.push("intercept".into());
    }
    let dataset = ClusteredDataset::new(DVector::from_vec(y), x, z, w, &ids)?;
    let cluster_labels = dataset.labels().iter().map(|id| labels[id].clone()).collect();
    Ok(LoadedData {
        dataset,
        cluster_labels,
        w_names,
    })
}

fn is_constant(v: &DVector<f64>) -> bool {
    v.len() > 0 && v[0] != 0.0 && v.iter().all(|&a| a == v[0])
}

/// Integer labels are used as given; otherwise labels are numbered in
/// order of first appearance.
fn cluster_ids(raw: &[String]) -> (Vec<i64>, BTreeMap<i64, String>) {
    let parsed: Option<Vec<i64>> = raw.iter().map(|s| s.parse().ok()).collect();
    let ids = match parsed {
        Some(ids) => ids,
        None => {
            let mut seen: BTreeMap<&str, i64> = BTreeMap::new();
            raw.iter()
                .map(|s| {
                    let next = seen.len() as i64;
                    *seen.entry(s.as_str()).or_insert(next)
                })
                .collect()
        }
    };
    let mut labels = BTreeMap::new();
    for (id, s) in ids.iter().zip(raw) {
        labels.entry(*id).or_insert_with(|| s.clone());
    }
    (ids, labels)
}

/// Shortest text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes a dataset as CSV with columns `y, x1.., z1.., w1.., cluster`.
pub fn write_dataset_csv<W: Write>(data: &ClusteredDataset, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_owned()];
    header.extend((1..=data.dx()).map(|k| format!("x{k}")));
    header.extend((1..=data.dz()).map(|k| format!("z{k}")));
    header.extend((1..=data.dw()).map(|k| format!("w{k}")));
    header.push("cluster".into());
    wr.write_record(&header)?;
    let ids = data.cluster_index();
    for i in 0..data.n() {
        let mut rec = vec![format_f64(data.y()[i])];
        for m in [data.x(), data.z(), data.w()] {
            rec.extend(m.row(i).iter().map(|&v| format_f64(v)));
        }
        rec.push(data.labels()[ids[i]].to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_dataset_csv(data: &ClusteredDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_csv(data, std::fs::File::create(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown format \"{s}\" (json or csv)"))),
        }
    }
}

/// A bootstrap result plus optional per-draw statistics and warnings.
#[derive(Debug, Clone, Serialize)]
pub struct TestRecord<'a> {
    #[serde(flatten)]
    pub result: &'a BootstrapResult,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<&'a [f64]>,
}

impl<'a> TestRecord<'a> {
    pub fn new(result: &'a BootstrapResult, with_distribution: bool) -> Self {
        let mut warnings = Vec::new();
        if result.singular_draws > 0 {
            warnings.push(format!(
                "{} bootstrap draws could not be computed and were set to 0",
                result.singular_draws
            ));
        }
        Self {
            result,
            warnings,
            distribution: with_distribution.then_some(result.distribution.as_slice()),
        }
    }
}

/// Point estimates with per-cluster first stages.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub method: Method,
    pub kappa: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n: usize,
    pub q: usize,
    pub dz: usize,
    pub dw: usize,
    pub cluster_labels: Vec<String>,
    pub cluster_sizes: Vec<usize>,
    /// `d_z × d_x` first-stage coefficients, one matrix per cluster.
    #[serde(serialize_with = "serialize_matrices")]
    pub first_stage: Vec<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(data: &ClusteredDataset, labels: &[String], fit: &KClassFit) -> Self {
        let (first_stage, warnings) = match crate::data::cluster_first_stage(data) {
            Ok(fs) => (fs, Vec::new()),
            Err(e) => (Vec::new(), vec![format!("per-cluster first stage unavailable: {e}")]),
        };
        Self {
            method: fit.method,
            kappa: fit.kappa,
            beta: fit.beta_hat.iter().copied().collect(),
            gamma: fit.gamma_hat.iter().copied().collect(),
            n: data.n(),
            q: data.q(),
            dz: data.dz(),
            dw: data.dw(),
            cluster_labels: labels.to_vec(),
            cluster_sizes: data.cluster_sizes(),
            first_stage,
            warnings,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn save_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_json(value, std::fs::File::create(path)?)
}

/// One-line CSV summary of a test.
pub fn write_test_csv<W: Write>(r: &BootstrapResult, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record([
        "test",
        "estimator",
        "studentized",
        "statistic",
        "critical_value",
        "pvalue",
        "reject",
        "alpha",
        "signset_mode",
        "signset_size",
    ])?;
    let mode = serde_json::to_value(r.signset.mode)?;
    let test = serde_json::to_value(r.test)?;
    wr.write_record([
        test.as_str().unwrap_or_default().to_owned(),
        r.estimator.map(|m| m.to_string()).unwrap_or_default(),
        r.studentized.to_string(),
        format_f64(r.statistic),
        format_f64(r.critical_value),
        format_f64(r.pvalue),
        r.reject.to_string(),
        format_f64(r.alpha),
        mode.as_str().unwrap_or_default().to_owned(),
        r.signset.size.to_string(),
    ])?;
    wr.flush()?;
    Ok(())
}

/// `write_results` for a single test.
pub fn write_results<W: Write>(r: &BootstrapResult, format: Format, with_distribution: bool, out: W) -> Result<()> {
    match format {
        Format::Json => write_json(&TestRecord::new(r, with_distribution), out),
        Format::Csv => write_test_csv(r, out),
    }
}

/// Rejection table as CSV. Power tables carry an extra `beta` column.
pub fn write_rejection_csv<W: Write>(table: &RejectionTable, out: W) -> Result<()> {
    let power = table.kind == "power";
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["test", "estimator", "rho", "pi0", "dz", "strong"];
    if power {
        header.push("beta");
    }
    header.extend(["reject_rate", "se"]);
    wr.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![
            row.test.clone(),
            row.estimator.map(|m| m.to_string()).unwrap_or_default(),
            format_f64(row.rho),
            format_f64(row.pi0),
            row.dz.to_string(),
            row.strong.to_string(),
        ];
        if power {
            rec.push(format_f64(row.beta));
        }
        rec.push(format_f64(row.reject_rate));
        rec.push(format_f64(row.se));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parsed `key = value` file. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", k + 1)));
            }
            if entries.insert(key.to_owned(), value.trim().to_owned()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key \"{key}\"", k + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fails on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key \"{k}\""))),
            None => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("key \"{key}\": {e}")))
            })
            .transpose()
    }
}

//! CSV ingestion, preprocessing, splits and result persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::{ensure, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub standardization: Option<Standardization>,
}

/// Rows of `inputs` and `outputs` are aligned samples `(u_j, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        source: &str,
        seed: Option<u64>,
    ) -> Self {
        debug_assert_eq!(inputs.nrows(), outputs.nrows());
        Self {
            inputs,
            outputs,
            meta: DatasetMeta {
                source: source.to_owned(),
                seed,
                standardization: None,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    /// Outputs flattened sample-major: entry `j d_v + k` is `v_j[k]`.
    pub fn stacked_outputs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.outputs.len(),
            (0..self.outputs.nrows())
                .flat_map(|j| self.outputs.row(j).iter().copied().collect::<Vec<_>>()),
        )
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(rows),
            outputs: self.outputs.select_rows(rows),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub label_column: usize,
    /// `None` selects the first 14 columns after the label.
    pub feature_columns: Option<Vec<usize>>,
    pub row_limit: Option<usize>,
    pub has_header: bool,
}

/// Number of features used by default for SUSY-style files.
pub const DEFAULT_FEATURES: usize = 14;

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: 0,
            feature_columns: None,
            row_limit: None,
            has_header: false,
        }
    }
}

impl CsvOptions {
    fn columns(&self, width: usize) -> Vec<usize> {
        match &self.feature_columns {
            Some(c) => c.clone(),
            None => (self.label_column + 1..width)
                .take(DEFAULT_FEATURES)
                .collect(),
        }
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        col,
        msg: format!("not a number: {cell:?}"),
    })?;
    ensure!(
        value.is_finite(),
        Error::Parse {
            row,
            col,
            msg: format!("non-finite value {cell:?}"),
        }
    );
    Ok(value)
}

/// Loads a numeric CSV. Rows and columns in errors are 1-based data rows
/// and 0-based column indices.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    ensure!(
        opts.row_limit != Some(0),
        Error::domain("row limit must be positive")
    );
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(false)
        .from_reader(file);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Option<Vec<usize>> = None;
    for (idx, record) in reader.records().enumerate() {
        if opts.row_limit.is_some_and(|l| idx >= l) {
            break;
        }
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        let cols = columns.get_or_insert_with(|| opts.columns(record.len()));
        ensure!(
            !cols.is_empty(),
            Error::config("no feature columns selected")
        );
        let width = record.len();
        for &c in cols.iter().chain(std::iter::once(&opts.label_column)) {
            ensure!(
                c < width,
                Error::config(format!("column {c} out of range for {width}-column file"))
            );
        }
        labels.push(parse_cell(
            &record[opts.label_column],
            row,
            opts.label_column,
        )?);
        for &c in cols.iter() {
            inputs.push(parse_cell(&record[c], row, c)?);
        }
    }
    let n = labels.len();
    ensure!(
        n >= 1,
        Error::domain(format!("{} contains no data rows", path.display()))
    );
    let d = inputs.len() / n;
    Ok(Dataset::new(
        DMatrix::from_row_slice(n, d, &inputs),
        DMatrix::from_column_slice(n, 1, &labels),
        &path.display().to_string(),
        None,
    ))
}

/// Per-feature affine map fitted on one dataset and reusable on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero variance, left centred but unscaled.
    pub unscaled: Vec<usize>,
}

impl Standardization {
    pub fn fit(inputs: &DMatrix<f64>) -> Result<Self> {
        let n = inputs.nrows();
        ensure!(n >= 2, Error::domain("standardization needs n >= 2"));
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut unscaled = Vec::new();
        for (c, col) in inputs.column_iter().enumerate() {
            let m = col.mean();
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            mean.push(m);
            if var > 0.0 {
                std.push(var.sqrt());
            } else {
                std.push(1.0);
                unscaled.push(c);
            }
        }
        Ok(Self {
            mean,
            std,
            unscaled,
        })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        ensure!(
            data.input_dim() == self.mean.len(),
            Error::domain("standardization fitted on a different number of features")
        );
        let mut out = data.clone();
        for (c, mut col) in out.inputs.column_iter_mut().enumerate() {
            col.apply(|x| *x = (*x - self.mean[c]) / self.std[c]);
        }
        out.meta.standardization = Some(self.clone());
        Ok(out)
    }
}

/// Standardizes the inputs to mean 0 and population variance 1.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let params = Standardization::fit(&data.inputs)?;
    Ok((params.apply(data)?, params))
}

/// Seeded disjoint split into `n_train` and `n_test` rows.
pub fn split(
    data: &Dataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    ensure!(
        n_train + n_test <= data.len(),
        Error::domain(format!(
            "split {n_train} + {n_test} exceeds {} available rows",
            data.len()
        ))
    );
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    Ok((
        data.select(&idx[..n_train]),
        data.select(&idx[n_train..n_train + n_test]),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    /// 17 significant digits for floats, so values reparse bit-identically.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Rectangular table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let width = self.header.len();
        ensure!(width > 0, Error::domain("table needs a header"));
        for (i, r) in self.rows.iter().enumerate() {
            ensure!(
                r.len() == width,
                Error::domain(format!("row {i} has {} cells, header has {width}", r.len()))
            );
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Internal(format!("csv encoding failed: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| Error::Internal(format!("csv flush failed: {e}")))
    }
}

/// Writes the table as CSV with LF line endings.
pub fn save_results(table: &Table, path: &Path) -> Result<()> {
    write_bytes(path, &table.to_csv_bytes()?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Reads a CSV with a header row back into header and numeric rows.
pub fn load_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            col: 0,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        rows.push(
            rec.iter()
                .enumerate()
                .map(|(c, s)| parse_cell(s, row, c))
                .collect::<Result<_>>()?,
        );
    }
    Ok((header, rows))
}

/// Git blob hash: SHA-1 of `"blob <len>\0" ++ bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(
        &fs::read(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Run record written next to every output: enough to replay the run and
/// check its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_bytes(path, s.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Synthetic stand-in for the SUSY file: a 0/1 label followed by 18 feature
/// columns, the first 8 "low-level" and the rest smooth functions of them.
pub fn susy_like_fixture(n: usize, seed: u64) -> Table {
    let mut rng = rng_from_seed(seed);
    let mut t = Table::new((0..19).map(|c| {
        if c == 0 {
            "label".to_owned()
        } else {
            format!("f{c}")
        }
    }));
    for _ in 0..n {
        let label = rng.gen_bool(0.46);
        let shift = if label { 0.4 } else { 0.0 };
        let low: Vec<f64> = (0..8)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) + shift)
            .collect();
        let mut row = vec![Cell::Float(f64::from(u8::from(label)))];
        row.extend(low.iter().map(|&x| Cell::Float(x)));
        for k in 0..10 {
            let (a, b) = (low[k % 8], low[(k + 3) % 8]);
            row.push(Cell::Float((a * a + b * b).sqrt() + 0.1 * (a * b).tanh()));
        }
        t.push(row);
    }
    t
}

/// Writes the fixture without a header, matching the raw SUSY layout.
pub fn write_susy_fixture(path: &Path, n: usize, seed: u64) -> Result<()> {
    let t = susy_like_fixture(n, seed);
    let bytes = t.to_csv_bytes()?;
    let body = bytes
        .iter()
        .position(|&b| b == b'\n')
        .map_or(&bytes[..], |i| &bytes[i + 1..]);
    write_bytes(path, body)
}

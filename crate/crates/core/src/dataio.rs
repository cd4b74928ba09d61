//! Two-period treatment/mediator data: ingestion, validation, covariate
//! residualization and the (d, m, t) cell partition every estimator works on.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One of the eight treatment × mediator × period cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub d: bool,
    pub m: bool,
    pub t: bool,
}

impl Cell {
    pub const fn new(d: bool, m: bool, t: bool) -> Self {
        Cell { d, m, t }
    }

    pub const fn index(self) -> usize {
        (self.d as usize) * 4 + (self.m as usize) * 2 + self.t as usize
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..8).map(|i| Cell::new(i & 4 != 0, i & 2 != 0, i & 1 != 0))
    }

    pub(crate) fn empty_error(self) -> Error {
        Error::EmptyCell {
            d: self.d as u8,
            m: self.m as u8,
            t: self.t as u8,
        }
    }
}

/// Index of a cluster inside its [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub cluster: ClusterId,
    pub y: f64,
    pub d: bool,
    pub m: bool,
    pub t: bool,
    pub covariates: Vec<f64>,
}

impl ObservationRecord {
    pub fn new(cluster: usize, y: f64, d: bool, m: bool, t: bool) -> Self {
        ObservationRecord {
            cluster: ClusterId(cluster),
            y,
            d,
            m,
            t,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.d, self.m, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Panel,
    RepeatedCrossSection,
}

/// Validated two-period sample.
///
/// All eight cells are non-empty, except that the pair (d=0, m=1, t=0/1) may
/// be empty in both periods at once: that is a one-sided non-compliance
/// design in which always-takers cannot exist.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    design: Design,
    n_clusters: usize,
    labels: Option<Arc<Vec<String>>>,
    dropped_rows: usize,
}

impl Dataset {
    /// Validates `records`. Cluster ids must lie in `0..n_clusters` where
    /// `n_clusters` is one past the largest id used.
    pub fn new(records: Vec<ObservationRecord>, design: Design) -> Result<Self> {
        let n_clusters = records.iter().map(|r| r.cluster.0 + 1).max().unwrap_or(0);
        let data = Dataset {
            records,
            design,
            n_clusters,
            labels: None,
            dropped_rows: 0,
        };
        data.validate()?;
        Ok(data)
    }

    fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        self.n_clusters = labels.len();
        self.labels = Some(Arc::new(labels));
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let width = self.records.first().map_or(0, |r| r.covariates.len());
        let mut counts = [0usize; 8];
        for (row, r) in self.records.iter().enumerate() {
            if !r.y.is_finite() {
                return Err(Error::NonFiniteValue(r.y));
            }
            if r.covariates.len() != width {
                return Err(Error::CovariateLength {
                    row,
                    expected: width,
                    found: r.covariates.len(),
                });
            }
            if let Some(&x) = r.covariates.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue(x));
            }
            counts[r.cell().index()] += 1;
        }
        let one_sided = counts[Cell::new(false, true, false).index()] == 0
            && counts[Cell::new(false, true, true).index()] == 0;
        for cell in Cell::all() {
            if counts[cell.index()] == 0 && !(one_sided && !cell.d && cell.m) {
                return Err(cell.empty_error());
            }
        }
        if self.design == Design::Panel {
            let mut status: Vec<Option<(bool, bool)>> = vec![None; self.n_clusters];
            for r in &self.records {
                match status[r.cluster.0] {
                    None => status[r.cluster.0] = Some((r.d, r.m)),
                    Some(s) if s != (r.d, r.m) => {
                        return Err(Error::InconsistentPanel(self.cluster_label(r.cluster)))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Rows discarded at load time because of missing values.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn n_covariates(&self) -> usize {
        self.records.first().map_or(0, |r| r.covariates.len())
    }

    /// Whether the (d=0, m=1) cells carry data, i.e. always-takers can be
    /// represented in the sample at all.
    pub fn has_always_taker_cells(&self) -> bool {
        self.records.iter().any(|r| !r.d && r.m)
    }

    pub fn cluster_label(&self, id: ClusterId) -> String {
        match &self.labels {
            Some(labels) => labels[id.0].clone(),
            None => id.0.to_string(),
        }
    }

    /// Row indices grouped by cluster, in cluster-id order.
    pub fn cluster_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_clusters];
        for (i, r) in self.records.iter().enumerate() {
            rows[r.cluster.0].push(i);
        }
        rows
    }

    /// Builds the dataset made of the given clusters (with repetition). Each
    /// draw becomes a fresh cluster so repeated clusters stay distinct.
    pub fn resample_clusters(&self, groups: &[Vec<usize>], picks: &[usize]) -> Result<Dataset> {
        let mut records = Vec::with_capacity(self.records.len());
        for (new_id, &g) in picks.iter().enumerate() {
            for &row in &groups[g] {
                let mut r = self.records[row].clone();
                r.cluster = ClusterId(new_id);
                records.push(r);
            }
        }
        let data = Dataset {
            records,
            design: self.design,
            n_clusters: picks.len(),
            labels: None,
            dropped_rows: 0,
        };
        data.validate()?;
        Ok(data)
    }

    /// Returns a copy with every outcome replaced by `f(record)`.
    pub fn map_outcomes(&self, f: impl Fn(&ObservationRecord) -> f64) -> Result<Dataset> {
        let mut out = self.clone();
        for r in &mut out.records {
            r.y = f(r);
        }
        out.validate()?;
        Ok(out)
    }

    /// Keeps only records satisfying `keep`; clusters are not renumbered.
    pub fn filter(&self, keep: impl Fn(&ObservationRecord) -> bool) -> Result<Dataset> {
        let mut out = self.clone();
        out.records.retain(|r| keep(r));
        out.validate()?;
        Ok(out)
    }
}

/// Column names of the input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub cluster: String,
    pub outcome: String,
    pub treatment: String,
    pub mediator: String,
    pub time: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            cluster: "id".into(),
            outcome: "y".into(),
            treatment: "d".into(),
            mediator: "m".into(),
            time: "t".into(),
            covariates: Vec::new(),
        }
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<bool> {
    match field.trim().parse::<f64>() {
        Ok(0.0) => Ok(false),
        Ok(1.0) => Ok(true),
        _ => Err(Error::NonBinaryCode {
            row,
            column: column.to_string(),
            value: field.to_string(),
        }),
    }
}

fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::MalformedNumber {
            row,
            column: column.to_string(),
            value: field.to_string(),
        }),
    }
}

/// Reads a headed CSV file. See [`read_dataset`].
pub fn load_dataset(path: impl AsRef<Path>, schema: &ColumnMap, design: Design) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema, design)
}

/// Parses CSV input into a validated dataset.
///
/// Rows with a missing outcome, treatment, mediator, period or covariate
/// (empty, `NA`, `NaN` or `.`) are dropped and counted; malformed values are
/// hard errors reporting the 1-based line number of the file.
pub fn read_dataset<R: Read>(input: R, schema: &ColumnMap, design: Design) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.cluster)?;
    let y_col = find(&schema.outcome)?;
    let d_col = find(&schema.treatment)?;
    let m_col = find(&schema.mediator)?;
    let t_col = find(&schema.time)?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    let mut dropped = 0;
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |c: usize| row.get(c).unwrap_or("");
        let required = [y_col, d_col, m_col, t_col, id_col];
        if required.iter().chain(&x_cols).any(|&c| is_missing(field(c))) {
            dropped += 1;
            continue;
        }
        let y = parse_real(field(y_col), line, &schema.outcome)?;
        let d = parse_binary(field(d_col), line, &schema.treatment)?;
        let m = parse_binary(field(m_col), line, &schema.mediator)?;
        let t = parse_binary(field(t_col), line, &schema.time)?;
        let covariates = x_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, name)| parse_real(field(c), line, name))
            .collect::<Result<Vec<_>>>()?;
        let label = field(id_col).to_string();
        let cluster = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            labels.len() - 1
        });
        records.push(ObservationRecord::new(cluster, y, d, m, t).with_covariates(covariates));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let mut data = Dataset {
        records,
        design,
        n_clusters: 0,
        labels: None,
        dropped_rows: dropped,
    }
    .with_labels(labels)?;
    data.dropped_rows = dropped;
    Ok(data)
}

/// Writes the dataset in the default column layout (`id,y,d,m,t,x1..xk`).
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "y".into(), "d".into(), "m".into(), "t".into()];
    header.extend((1..=data.n_covariates()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![
            data.cluster_label(r.cluster),
            format!("{}", r.y),
            (r.d as u8).to_string(),
            (r.m as u8).to_string(),
            (r.t as u8).to_string(),
        ];
        row.extend(r.covariates.iter().map(|x| format!("{x}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces each outcome by the grand mean plus its residual from one pooled
/// least-squares regression of the outcome on an intercept and the covariates.
pub fn residualize_covariates(data: &Dataset) -> Result<Dataset> {
    let k = data.n_covariates();
    if k == 0 {
        return Err(Error::NoCovariates);
    }
    let n = data.len();
    let mean_y = data.records.iter().map(|r| r.y).sum::<f64>() / n as f64;
    let mut mean_x = vec![0.0; k];
    for r in &data.records {
        for (acc, x) in mean_x.iter_mut().zip(&r.covariates) {
            *acc += x;
        }
    }
    mean_x.iter_mut().for_each(|v| *v /= n as f64);

    let x = DMatrix::from_fn(n, k, |i, j| data.records[i].covariates[j] - mean_x[j]);
    let y = DVector::from_fn(n, |i, _| data.records[i].y - mean_y);
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * (n.max(k) as f64) * f64::EPSILON;
    if s_max <= 0.0 || svd.singular_values.iter().any(|&s| s <= tol) || n <= k {
        return Err(Error::RankDeficientDesign);
    }
    let beta = svd.solve(&y, tol).map_err(|_| Error::RankDeficientDesign)?;
    let fitted = &x * &beta;

    let mut out = data.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        r.y = mean_y + (y[i] - fitted[i]);
    }
    Ok(out)
}

/// Sorted outcome values of each (d, m, t) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    cells: [Vec<f64>; 8],
}

impl CellPartition {
    /// Builds a partition from raw cell contents (indexed by [`Cell::index`]).
    pub fn from_cells(mut cells: [Vec<f64>; 8]) -> Self {
        for c in &mut cells {
            c.sort_by(f64::total_cmp);
        }
        CellPartition { cells }
    }

    pub fn values(&self, cell: Cell) -> &[f64] {
        &self.cells[cell.index()]
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells[cell.index()].len()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Period-`t` outcomes of all units with treatment `d`, sorted.
    pub fn treatment_group(&self, d: bool, t: bool) -> Vec<f64> {
        let mut v: Vec<f64> = [false, true]
            .iter()
            .flat_map(|&m| self.values(Cell::new(d, m, t)).iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

pub fn partition_cells(data: &Dataset) -> CellPartition {
    let mut cells: [Vec<f64>; 8] = Default::default();
    for r in &data.records {
        cells[r.cell().index()].push(r.y);
    }
    CellPartition::from_cells(cells)
}

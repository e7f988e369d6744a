//! Benchmark datasets: toy sigmoid problems, K11C, UB5D, CSV ingestion and
//! train/test splitting.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}, column {column}: {reason}")]
    Cell {
        row: usize,
        column: usize,
        reason: String,
    },
    #[error("dataset needs at least 2 rows and 1 feature, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("target and feature rows disagree: {0} vs {1}")]
    Shape(usize, usize),
    #[error("non-finite value in dataset `{0}`")]
    NonFinite(String),
    #[error("target column `{0}` not found")]
    NoTarget(String),
    #[error("split ratio {0} leaves one side empty")]
    EmptySplit(f64),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Samples in rows, features in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub role: Role,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        x: DMatrix<f64>,
        y: Vec<f64>,
        role: Role,
    ) -> Result<Self, DataError> {
        let name = name.into();
        if x.nrows() < 2 || x.ncols() < 1 {
            return Err(DataError::TooSmall {
                rows: x.nrows(),
                cols: x.ncols(),
            });
        }
        if x.nrows() != y.len() {
            return Err(DataError::Shape(x.nrows(), y.len()));
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(DataError::NonFinite(name));
        }
        Ok(Dataset { name, x, y, role })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_target_constant(&self) -> bool {
        self.y.iter().all(|&v| v == self.y[0])
    }

    fn from_rows(name: &str, rows: &[Vec<f64>], y: Vec<f64>, role: Role) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Dataset::new(name, x, y, role).expect("generator produced an invalid dataset")
    }

    fn select_rows(&self, rows: &[usize], role: Role) -> Result<Self, DataError> {
        let x = DMatrix::from_fn(rows.len(), self.d(), |i, j| self.x[(rows[i], j)]);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Dataset::new(self.name.clone(), x, y, role)
    }
}

/// Composition of π/4 Givens rotations over all coordinate planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSpec {
    pub d: usize,
    pub angle: f64,
    pub matrix: DMatrix<f64>,
}

impl RotationSpec {
    /// Planes `(i, j)`, `i < j`, in lexicographic order, multiplied left to
    /// right: `R = G(0,1) · G(0,2) · … · G(d-2,d-1)`.
    pub fn new(d: usize) -> Self {
        let angle = FRAC_PI_4;
        let (s, c) = angle.sin_cos();
        let mut matrix = DMatrix::identity(d, d);
        for i in 0..d {
            for j in i + 1..d {
                let mut g = DMatrix::identity(d, d);
                g[(i, i)] = c;
                g[(i, j)] = -s;
                g[(j, i)] = s;
                g[(j, j)] = c;
                matrix *= g;
            }
        }
        RotationSpec { d, angle, matrix }
    }
}

/// The standard increasing logistic.
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn uniform_rows<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(lo..=hi)).collect())
        .collect()
}

/// Sigmoid of the first coordinate after applying `rotation`.
pub fn gen_sigmoid_with<R: Rng + ?Sized>(
    name: &str,
    rotation: &DMatrix<f64>,
    rng: &mut R,
) -> (Dataset, Dataset) {
    let d = rotation.nrows();
    let target = |x: &Vec<f64>| {
        let z: f64 = (0..d).map(|j| rotation[(0, j)] * x[j]).sum();
        logistic(z)
    };
    let make = |rng: &mut R, n: usize, role| {
        let rows = uniform_rows(rng, n, d, -10.0, 10.0);
        let y = rows.iter().map(target).collect();
        Dataset::from_rows(name, &rows, y, role)
    };
    let train = make(rng, 100 * d, Role::Train);
    let test = make(rng, 250 * d, Role::Test);
    (train, test)
}

/// S*/RS* toy problems on `[-10, 10]^d`.
pub fn gen_sigmoid<R: Rng + ?Sized>(d: usize, rotated: bool, rng: &mut R) -> (Dataset, Dataset) {
    let name = format!("{}s{d}d", if rotated { "r" } else { "" });
    let rotation = if rotated {
        RotationSpec::new(d).matrix
    } else {
        DMatrix::identity(d, d)
    };
    gen_sigmoid_with(&name, &rotation, rng)
}

pub fn k11c(x1: f64, x2: f64) -> f64 {
    (27.22 * x1 - 4.54) * (-0.39 * x2) + 11.46 * ((0.21 * x1 - 1.0) * (x2 + 16.6) + 1.97).sin()
}

/// 500 uniform training samples; a 601×601 grid with spacing 0.01 for test.
pub fn gen_k11c<R: Rng + ?Sized>(rng: &mut R) -> (Dataset, Dataset) {
    let rows = uniform_rows(rng, 500, 2, -3.0, 3.0);
    let y = rows.iter().map(|r| k11c(r[0], r[1])).collect();
    let train = Dataset::from_rows("k11c", &rows, y, Role::Train);

    let axis: Vec<f64> = (0..=600).map(|i| (i as f64 - 300.0) / 100.0).collect();
    let mut grid = Vec::with_capacity(axis.len() * axis.len());
    for &a in &axis {
        for &b in &axis {
            grid.push(vec![a, b]);
        }
    }
    let y = grid.iter().map(|r| k11c(r[0], r[1])).collect();
    let test = Dataset::from_rows("k11c", &grid, y, Role::Test);
    (train, test)
}

pub fn ub5d(x: &[f64]) -> f64 {
    10.0 / (5.0 + x.iter().map(|v| (v - 3.0) * (v - 3.0)).sum::<f64>())
}

pub fn gen_ub5d<R: Rng + ?Sized>(rng: &mut R) -> (Dataset, Dataset) {
    let make = |rng: &mut R, n, role| {
        let rows = uniform_rows(rng, n, 5, -0.25, 6.35);
        let y = rows.iter().map(|r| ub5d(r)).collect();
        Dataset::from_rows("ub5d", &rows, y, role)
    };
    let train = make(rng, 1024, Role::Train);
    let test = make(rng, 5000, Role::Test);
    (train, test)
}

/// A named benchmark generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Sigmoid { d: usize, rotated: bool },
    K11c,
    Ub5d,
}

impl Generator {
    pub fn generate(&self, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            Generator::Sigmoid { d, rotated } => gen_sigmoid(d, rotated, &mut rng),
            Generator::K11c => gen_k11c(&mut rng),
            Generator::Ub5d => gen_ub5d(&mut rng),
        }
    }
}

impl FromStr for Generator {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "k11c" => return Ok(Generator::K11c),
            "ub5d" => return Ok(Generator::Ub5d),
            _ => {}
        }
        let (rotated, rest) = match lower.strip_prefix("rs") {
            Some(rest) => (true, rest),
            None => (false, lower.strip_prefix('s').unwrap_or("")),
        };
        match rest.strip_suffix('d').and_then(|n| n.parse::<usize>().ok()) {
            Some(d) if d >= 1 => Ok(Generator::Sigmoid { d, rotated }),
            _ => Err(DataError::UnknownGenerator(s.to_string())),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Sigmoid { d, rotated } => {
                write!(f, "{}s{d}d", if *rotated { "r" } else { "" })
            }
            Generator::K11c => f.write_str("k11c"),
            Generator::Ub5d => f.write_str("ub5d"),
        }
    }
}

/// Selects the target column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Last,
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "last" {
            TargetColumn::Last
        } else if let Ok(i) = s.parse::<usize>() {
            TargetColumn::Index(i)
        } else {
            TargetColumn::Name(s.to_string())
        })
    }
}

/// Reads a numeric CSV table; all non-target columns become features.
pub fn read_csv<R: Read>(
    reader: R,
    name: &str,
    target: &TargetColumn,
    has_header: bool,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = if has_header {
        Some(rdr.headers()?.clone())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(cell, row_no, j + 1))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    let target_idx = match target {
        TargetColumn::Last => width.checked_sub(1),
        TargetColumn::Index(i) => Some(*i).filter(|&i| i < width),
        TargetColumn::Name(n) => headers
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == n)),
    }
    .ok_or_else(|| DataError::NoTarget(format!("{target:?}")))?;

    let y: Vec<f64> = rows.iter().map(|r| r[target_idx]).collect();
    let features: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|mut r| {
            r.remove(target_idx);
            r
        })
        .collect();
    let d = width - 1;
    let x = DMatrix::from_fn(features.len(), d, |i, j| features[i][j]);
    Dataset::new(name, x, y, Role::Train)
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64, DataError> {
    let err = |reason: &str| DataError::Cell {
        row,
        column,
        reason: reason.to_string(),
    };
    if cell.is_empty() {
        return Err(err("missing value"));
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(err(&format!("non-finite value `{cell}`"))),
        Err(_) => Err(err(&format!("not a number: `{cell}`"))),
    }
}

pub fn load_csv(
    path: &Path,
    target: &TargetColumn,
    has_header: bool,
) -> Result<Dataset, DataError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    read_csv(file, &name, target, has_header)
}

/// Writes `x1,..,xd,y` with a header row; floats round-trip exactly.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = (1..=data.d())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.d())
            .map(|j| format!("{:?}", data.x[(i, j)]))
            .chain(std::iter::once(format!("{:?}", data.y[i])))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Random partition: the first `⌈ratio·n⌉` rows of a uniform permutation
/// train, the rest test.
pub fn split<R: Rng + ?Sized>(
    data: &Dataset,
    ratio: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::EmptySplit(ratio));
    }
    let n = data.n();
    // the epsilon keeps e.g. 0.7·10 from rounding up to 8
    let n_train = ((ratio * n as f64) - 1e-9).ceil() as usize;
    if n_train < 2 || n - n_train < 2 {
        return Err(DataError::EmptySplit(ratio));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let train = data.select_rows(&order[..n_train], Role::Train)?;
    let test = data.select_rows(&order[n_train..], Role::Test)?;
    Ok((train, test))
}

//! Top-level linear model over gene outputs and the R² fitness.

use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;
use thiserror::Error;

use crate::bench::Dataset;
use crate::exprtree::{Gene, LeafCounts, Primitives};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitnessError {
    #[error("non-finite value in regression inputs or solution")]
    NonFinite,
    #[error("target is constant; R² is undefined")]
    ConstantTarget,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `y ≈ c0 + Σ c_k · gene_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub c0: f64,
    pub c: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, gene_outputs: &[Vec<f64>]) -> Vec<f64> {
        let n = gene_outputs.first().map_or(0, Vec::len);
        let mut yhat = vec![self.c0; n];
        for (col, &ck) in gene_outputs.iter().zip(&self.c) {
            for (p, &g) in yhat.iter_mut().zip(col) {
                *p += ck * g;
            }
        }
        yhat
    }

    pub fn is_finite(&self) -> bool {
        self.c0.is_finite() && self.c.iter().all(|c| c.is_finite())
    }
}

/// Training fitness of an individual. Higher is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessReport {
    pub train_r2: f64,
    pub valid: bool,
}

impl FitnessReport {
    pub fn invalid() -> Self {
        FitnessReport {
            train_r2: f64::NEG_INFINITY,
            valid: false,
        }
    }

    pub fn valid(train_r2: f64) -> Self {
        FitnessReport {
            train_r2,
            valid: true,
        }
    }

    /// Quality order: every invalid report ties with every other invalid one
    /// and sits below all valid reports.
    pub fn cmp_quality(&self, other: &FitnessReport) -> Ordering {
        match (self.valid, other.valid) {
            (false, false) => Ordering::Equal,
            (false, true) => Ordering::Less,
            (true, false) => Ordering::Greater,
            (true, true) => self.train_r2.total_cmp(&other.train_r2),
        }
    }
}

/// Least-squares fit of `y` on `[1 | g]`; `g` holds one gene per column.
pub fn ols_fit(g: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel, FitnessError> {
    let columns: Vec<Vec<f64>> = g.column_iter().map(|c| c.iter().copied().collect()).collect();
    ols_fit_columns(&columns, y)
}

/// Same as [`ols_fit`] with gene outputs given column by column.
///
/// Rank-deficient designs get the minimum-norm least-squares solution.
pub fn ols_fit_columns(columns: &[Vec<f64>], y: &[f64]) -> Result<LinearModel, FitnessError> {
    let n = y.len();
    let k = columns.len();
    if n == 0 || k == 0 {
        return Err(FitnessError::Shape(format!("n={n}, k={k}")));
    }
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(FitnessError::Shape(format!(
            "column of length {} against {n} targets",
            bad.len()
        )));
    }
    let finite = |v: &f64| v.is_finite();
    if !y.iter().all(finite) || !columns.iter().flatten().all(finite) {
        return Err(FitnessError::NonFinite);
    }

    // Uniform scaling keeps the SVD away from overflow and leaves the
    // minimum-norm solution unchanged up to the same factor.
    let scale = columns
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    // flush entries that would underflow when squared
    let flush = |v: f64| if v.abs() < TINY { 0.0 } else { v };
    let design = DMatrix::from_fn(n, k + 1, |i, j| {
        if j == 0 {
            flush(1.0 / scale)
        } else {
            flush(columns[j - 1][i] / scale)
        }
    });
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !sigma_max.is_finite() {
        return Err(FitnessError::NonFinite);
    }
    let tol = sigma_max * (n.max(k + 1) as f64) * f64::EPSILON;
    let sol = svd
        .solve(&rhs, tol)
        .map_err(|_| FitnessError::NonFinite)?;
    let model = LinearModel {
        c0: sol[0] / scale,
        c: sol.iter().skip(1).map(|v| v / scale).collect(),
    };
    if model.is_finite() {
        Ok(model)
    } else {
        Err(FitnessError::NonFinite)
    }
}

const TINY: f64 = 1e-150;

/// Sum of squared residuals.
pub fn sse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Total sum of squares around the mean.
pub fn sst(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// `1 − SSE/SST`. Negative when the fit is worse than predicting the mean.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, FitnessError> {
    if y.len() != yhat.len() || y.len() < 2 {
        return Err(FitnessError::Shape(format!(
            "{} targets, {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let total = sst(y);
    if total == 0.0 {
        return Err(FitnessError::ConstantTarget);
    }
    Ok(1.0 - sse(y, yhat) / total)
}

/// Result of fitting the top-level model of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model: LinearModel,
    pub report: FitnessReport,
    /// Training SSE of the fitted model; infinite when invalid.
    pub sse: f64,
}

impl Evaluation {
    fn invalid(k: usize) -> Self {
        Evaluation {
            model: LinearModel {
                c0: 0.0,
                c: vec![0.0; k],
            },
            report: FitnessReport::invalid(),
            sse: f64::INFINITY,
        }
    }
}

/// Fits the top-level model to precomputed gene outputs.
pub fn fit_outputs(outputs: &[Vec<f64>], y: &[f64]) -> Evaluation {
    let model = match ols_fit_columns(outputs, y) {
        Ok(m) => m,
        Err(_) => return Evaluation::invalid(outputs.len()),
    };
    let yhat = model.predict(outputs);
    let residual = sse(y, &yhat);
    match r_squared(y, &yhat) {
        Ok(r2) if residual.is_finite() && r2.is_finite() => Evaluation {
            model,
            report: FitnessReport::valid(r2),
            sse: residual,
        },
        _ => Evaluation::invalid(outputs.len()),
    }
}

pub fn gene_outputs(genes: &[Gene], data: &Dataset, prims: &Primitives) -> Vec<Vec<f64>> {
    genes.iter().map(|g| g.eval(&data.x, prims)).collect()
}

/// Evaluates a gene set on a training dataset: fit, then score.
pub fn evaluate(genes: &[Gene], data: &Dataset, prims: &Primitives) -> Evaluation {
    fit_outputs(&gene_outputs(genes, data, prims), &data.y)
}

/// R² of an already fitted model on other data (no refit).
pub fn score(genes: &[Gene], model: &LinearModel, data: &Dataset, prims: &Primitives) -> f64 {
    let outputs = gene_outputs(genes, data, prims);
    let yhat = model.predict(&outputs);
    if !yhat.iter().all(|v| v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    r_squared(&data.y, &yhat).unwrap_or(f64::NAN)
}

/// Fraction of non-constant leaves that are LCF leaves.
pub fn lcf_ratio(genes: &[Gene]) -> f64 {
    let mut total = LeafCounts::default();
    for g in genes {
        total += g.leaf_counts();
    }
    let non_const = total.lcfs + total.vars;
    if non_const == 0 {
        0.0
    } else {
        total.lcfs as f64 / non_const as f64
    }
}

pub fn mean_gene_depth(genes: &[Gene]) -> f64 {
    genes.iter().map(|g| g.depth() as f64).sum::<f64>() / genes.len() as f64
}

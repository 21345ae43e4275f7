//! Finite-rank discretizations of `A = T − U` and their step-function
//! embedding.
//!
//! All three methods share the shape `T = diag(w-values)`,
//! `U[k][l] = |I_l| · (kernel value for cells k, l)`:
//!
//! * `nystrom` samples `w` and `u` at the partition nodes (compact domains);
//! * `galerkin-sampled` uses the very same formulas, on either domain kind;
//! * `galerkin-averaged` replaces the samples by cell averages computed with
//!   an `s`-point midpoint sub-rule per cell, i.e. the conditional-expectation
//!   projection onto step functions.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;
use crate::model::{LossFunction, ModelError, ModelSpec};
use crate::quadrature::{pairwise_sum, Partition};

pub mod dump;

pub use dump::{parse_matrix_dump, write_matrix_dump, DumpError, MatrixDump};

/// Default sub-rule order of the averaged Galerkin variant.
pub const DEFAULT_SUB_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("the Nyström method needs a compact domain")]
    NotCompact,
    #[error("{cells} cells exceed the cap of {cap}")]
    TooLarge { cells: usize, cap: usize },
    #[error("sub-quadrature order must be at least 1")]
    InvalidSubOrder,
    #[error("kernel sample not finite at entry ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("negative kernel sample {value} at entry ({row}, {col})")]
    NegativeKernel { row: usize, col: usize, value: f64 },
    #[error("loss w at cell {cell} is {value}, below the essinf tolerance")]
    NegativeLoss { cell: usize, value: f64 },
    #[error("fitness not finite at cell {cell}")]
    NonFiniteFitness { cell: usize },
    #[error("alpha = {alpha} is not above -min w = {bound}")]
    Pole { alpha: f64, bound: f64 },
    #[error("density has zero mass")]
    DegenerateDensity,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("partitions cannot be aligned: {0}")]
    IncompatiblePartitions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Nystrom,
    GalerkinSampled,
    GalerkinAveraged,
}

impl MethodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nystrom => "nystrom",
            Self::GalerkinSampled => "galerkin-sampled",
            Self::GalerkinAveraged => "galerkin-averaged",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nystrom" => Ok(Self::Nystrom),
            "galerkin-sampled" => Ok(Self::GalerkinSampled),
            "galerkin-averaged" => Ok(Self::GalerkinAveraged),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Nystrom,
    GalerkinSampled,
    GalerkinAveraged { sub_order: usize },
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Self::Nystrom => MethodKind::Nystrom,
            Self::GalerkinSampled => MethodKind::GalerkinSampled,
            Self::GalerkinAveraged { .. } => MethodKind::GalerkinAveraged,
        }
    }

    /// Nyström on compact domains, sampled Galerkin on the real line.
    pub fn default_for(model: &ModelSpec) -> Self {
        if model.domain.is_compact() {
            Self::Nystrom
        } else {
            Self::GalerkinSampled
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().as_str())
    }
}

/// The matrices `T_n` (as its diagonal) and `U_n` on one partition.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    partition: Partition,
    w_diag: Vec<f64>,
    u_matrix: DenseMatrix,
    r_samples: Vec<f64>,
    method: Method,
    shift: f64,
}

impl DiscreteOperator {
    /// Assembles an operator from precomputed parts, checking shapes and
    /// signs.
    pub fn from_parts(
        partition: Partition,
        w_diag: Vec<f64>,
        u_matrix: DenseMatrix,
        r_samples: Vec<f64>,
        method: Method,
        shift: f64,
    ) -> Result<Self, DiscretizeError> {
        let n = partition.len();
        for got in [w_diag.len(), u_matrix.n(), r_samples.len()] {
            if got != n {
                return Err(DiscretizeError::LengthMismatch { expected: n, got });
            }
        }
        for (k, row) in u_matrix.rows().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DiscretizeError::NonFinite { row: k, col: l });
                }
                if v < 0.0 {
                    return Err(DiscretizeError::NegativeKernel {
                        row: k,
                        col: l,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            partition,
            w_diag,
            u_matrix,
            r_samples,
            method,
            shift,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.w_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_diag.is_empty()
    }

    pub fn w_diag(&self) -> &[f64] {
        &self.w_diag
    }

    pub fn u_matrix(&self) -> &DenseMatrix {
        &self.u_matrix
    }

    pub fn r_samples(&self) -> &[f64] {
        &self.r_samples
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn min_w(&self) -> f64 {
        self.w_diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_w(&self) -> f64 {
        self.w_diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest sampled kernel value, `max U[k][l] / |I_l|`.
    pub fn max_kernel_sample(&self) -> f64 {
        let weights = self.partition.weights();
        self.u_matrix
            .rows()
            .flat_map(|row| row.iter().zip(&weights).map(|(u, a)| u / a))
            .fold(0.0, f64::max)
    }

    /// `A_n = diag(w) − U_n`, formed on demand.
    pub fn a_matrix(&self) -> DenseMatrix {
        let n = self.len();
        let mut a = DenseMatrix::zeros(n);
        for k in 0..n {
            for l in 0..n {
                a.set(k, l, -self.u_matrix.get(k, l));
            }
            a.set(k, k, a.get(k, k) + self.w_diag[k]);
        }
        a
    }

    /// `(diag(w) − U) x`.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let ux = self.u_matrix.matvec(x);
        self.w_diag
            .iter()
            .zip(x)
            .zip(ux)
            .map(|((w, xi), u)| w * xi - u)
            .collect()
    }

    /// Sum of `α_k · r(t_k) · p_k`.
    pub fn mean_fitness(&self, density: &StepDensity) -> f64 {
        let weights = self.partition.weights();
        let terms: Vec<f64> = weights
            .iter()
            .zip(&self.r_samples)
            .zip(density.values())
            .map(|((a, r), p)| a * r * p)
            .collect();
        pairwise_sum(&terms)
    }
}

pub fn nystrom_matrices(
    model: &ModelSpec,
    loss: &LossFunction,
    partition: &Partition,
) -> Result<DiscreteOperator, DiscretizeError> {
    if !model.domain.is_compact() {
        return Err(DiscretizeError::NotCompact);
    }
    assemble_sampled(model, loss, partition, Method::Nystrom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GalerkinVariant {
    Sampled,
    Averaged { sub_order: usize },
}

pub fn galerkin_matrices(
    model: &ModelSpec,
    loss: &LossFunction,
    partition: &Partition,
    variant: GalerkinVariant,
) -> Result<DiscreteOperator, DiscretizeError> {
    match variant {
        GalerkinVariant::Sampled => assemble_sampled(model, loss, partition, Method::GalerkinSampled),
        GalerkinVariant::Averaged { sub_order } => assemble_averaged(model, loss, partition, sub_order),
    }
}

/// Dispatches on `method`.
pub fn discretize(
    model: &ModelSpec,
    loss: &LossFunction,
    partition: &Partition,
    method: Method,
) -> Result<DiscreteOperator, DiscretizeError> {
    match method {
        Method::Nystrom => nystrom_matrices(model, loss, partition),
        Method::GalerkinSampled => galerkin_matrices(model, loss, partition, GalerkinVariant::Sampled),
        Method::GalerkinAveraged { sub_order } => {
            galerkin_matrices(model, loss, partition, GalerkinVariant::Averaged { sub_order })
        }
    }
}

fn check_size(model: &ModelSpec, partition: &Partition) -> Result<(), DiscretizeError> {
    if partition.len() > model.max_cells {
        return Err(DiscretizeError::TooLarge {
            cells: partition.len(),
            cap: model.max_cells,
        });
    }
    Ok(())
}

fn sample_fitness(model: &ModelSpec, partition: &Partition) -> Result<Vec<f64>, DiscretizeError> {
    partition
        .points()
        .iter()
        .enumerate()
        .map(|(cell, &t)| {
            let r = model.fitness.eval(t);
            if r.is_finite() {
                Ok(r)
            } else {
                Err(DiscretizeError::NonFiniteFitness { cell })
            }
        })
        .collect()
}

fn check_loss(model: &ModelSpec, w_diag: &[f64]) -> Result<(), DiscretizeError> {
    for (cell, &value) in w_diag.iter().enumerate() {
        if !value.is_finite() || value < -model.tol_essinf {
            return Err(DiscretizeError::NegativeLoss { cell, value });
        }
    }
    Ok(())
}

/// Fills `U` row by row; the first failing entry in row-major order wins.
fn fill_rows<F>(n: usize, entry: F) -> Result<DenseMatrix, DiscretizeError>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut u = DenseMatrix::zeros(n);
    let outcomes: Vec<Result<(), DiscretizeError>> = u
        .rows_mut()
        .enumerate()
        .map(|(k, row)| {
            for (l, slot) in row.iter_mut().enumerate() {
                let v = entry(k, l);
                if !v.is_finite() {
                    return Err(DiscretizeError::NonFinite { row: k, col: l });
                }
                if v < 0.0 {
                    return Err(DiscretizeError::NegativeKernel {
                        row: k,
                        col: l,
                        value: v,
                    });
                }
                *slot = v;
            }
            Ok(())
        })
        .collect();
    outcomes.into_iter().collect::<Result<(), _>>()?;
    Ok(u)
}

fn assemble_sampled(
    model: &ModelSpec,
    loss: &LossFunction,
    partition: &Partition,
    method: Method,
) -> Result<DiscreteOperator, DiscretizeError> {
    check_size(model, partition)?;
    let points = partition.points();
    let weights = partition.weights();
    let w_diag: Vec<f64> = points
        .par_iter()
        .map(|&t| loss.w(t))
        .collect::<Result<_, _>>()?;
    check_loss(model, &w_diag)?;
    let r_samples = sample_fitness(model, partition)?;
    let u_matrix = fill_rows(points.len(), |k, l| {
        weights[l] * model.kernel.eval(points[k], points[l])
    })?;
    Ok(DiscreteOperator {
        partition: partition.clone(),
        w_diag,
        u_matrix,
        r_samples,
        method,
        shift: loss.shift(),
    })
}

fn assemble_averaged(
    model: &ModelSpec,
    loss: &LossFunction,
    partition: &Partition,
    sub_order: usize,
) -> Result<DiscreteOperator, DiscretizeError> {
    if sub_order == 0 {
        return Err(DiscretizeError::InvalidSubOrder);
    }
    check_size(model, partition)?;
    let n = partition.len();
    let weights = partition.weights();
    let subs: Vec<Vec<f64>> = (0..n)
        .map(|k| partition.sub_points(k, sub_order).collect())
        .collect();
    let s = sub_order as f64;

    let w_diag: Vec<f64> = subs
        .par_iter()
        .map(|cell| {
            let values: Vec<f64> = cell.iter().map(|&x| loss.w(x)).collect::<Result<_, _>>()?;
            Ok(pairwise_sum(&values) / s)
        })
        .collect::<Result<_, ModelError>>()?;
    check_loss(model, &w_diag)?;
    let r_samples = sample_fitness(model, partition)?;
    let u_matrix = fill_rows(n, |k, l| {
        let mut total = 0.0;
        for &x in &subs[k] {
            for &y in &subs[l] {
                total += model.kernel.eval(x, y);
            }
        }
        weights[l] * total / (s * s)
    })?;
    Ok(DiscreteOperator {
        partition: partition.clone(),
        w_diag,
        u_matrix,
        r_samples,
        method: Method::GalerkinAveraged { sub_order },
        shift: loss.shift(),
    })
}

/// `K_α = U (T + α)^{-1}`: column `l` of `U` divided by `w_l + α`.
pub fn k_alpha_matrix(op: &DiscreteOperator, alpha: f64) -> Result<DenseMatrix, DiscretizeError> {
    let bound = -op.min_w();
    if !(alpha > bound) {
        return Err(DiscretizeError::Pole { alpha, bound });
    }
    let n = op.len();
    let scale: Vec<f64> = op.w_diag.iter().map(|w| 1.0 / (w + alpha)).collect();
    let mut k = op.u_matrix.clone();
    for row in 0..n {
        for col in 0..n {
            k.set(row, col, k.get(row, col) * scale[col]);
        }
    }
    Ok(k)
}

/// A vector interpreted as the step function `Σ p_k 1_{I_k}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDensity {
    partition: Partition,
    values: Vec<f64>,
}

impl StepDensity {
    pub fn new(partition: Partition, values: Vec<f64>) -> Result<Self, DiscretizeError> {
        if values.len() != partition.len() {
            return Err(DiscretizeError::LengthMismatch {
                expected: partition.len(),
                got: values.len(),
            });
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ α_k |p_k|`.
    pub fn induced_norm(&self) -> f64 {
        induced_norm(&self.partition, &self.values)
    }

    /// Value of the step function at `x`; zero outside the covered interval.
    pub fn value_at(&self, x: f64) -> f64 {
        self.partition.locate(x).map_or(0.0, |k| self.values[k])
    }
}

pub(crate) fn induced_norm(partition: &Partition, values: &[f64]) -> f64 {
    let terms: Vec<f64> = partition
        .weights()
        .iter()
        .zip(values)
        .map(|(a, v)| a * v.abs())
        .collect();
    pairwise_sum(&terms)
}

/// Normalizes `values` to unit induced norm. Returns the density and the
/// induced norm of the input.
pub fn embed_density(partition: &Partition, values: &[f64]) -> Result<(StepDensity, f64), DiscretizeError> {
    if values.len() != partition.len() {
        return Err(DiscretizeError::LengthMismatch {
            expected: partition.len(),
            got: values.len(),
        });
    }
    let norm = induced_norm(partition, values);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(DiscretizeError::DegenerateDensity);
    }
    let scaled = values.iter().map(|v| v / norm).collect();
    Ok((
        StepDensity {
            partition: partition.clone(),
            values: scaled,
        },
        norm,
    ))
}

/// Total-variation distance `½ ∫ |p₁ − p₂|` of two step densities, computed
/// exactly on the common refinement of both partitions (densities vanish
/// outside their covered intervals).
pub fn tv_distance(d1: &StepDensity, d2: &StepDensity) -> Result<f64, DiscretizeError> {
    for d in [d1, d2] {
        if d.values.iter().any(|v| !v.is_finite()) {
            return Err(DiscretizeError::IncompatiblePartitions(
                "density values must be finite".into(),
            ));
        }
    }
    if d1.partition.edges() == d2.partition.edges() {
        let terms: Vec<f64> = d1
            .partition
            .weights()
            .iter()
            .zip(d1.values.iter().zip(&d2.values))
            .map(|(a, (p, q))| a * (p - q).abs())
            .collect();
        return Ok(0.5 * pairwise_sum(&terms));
    }
    let mut breakpoints: Vec<f64> = d1
        .partition
        .edges()
        .iter()
        .chain(d2.partition.edges())
        .copied()
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let terms: Vec<f64> = breakpoints
        .windows(2)
        .map(|seg| {
            let mid = 0.5 * (seg[0] + seg[1]);
            (seg[1] - seg[0]) * (d1.value_at(mid) - d2.value_at(mid)).abs()
        })
        .collect();
    Ok(0.5 * pairwise_sum(&terms))
}

//! Scalar maximum principle `λ ≈ sup (r − g)` with the mutational loss
//! `g(x) = ∫ (u(x, y) − √(u(x, y) u(y, x))) dy`, and the mutation-locality
//! experiment that sharpens the kernel as `ν · h(ν |x − y|)`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::convergence::{parse_field, read_records, solve_level, CsvError, PipelineError};
use crate::discretize::Method;
use crate::eigensolver::{SolveRoute, SolverConfig};
use crate::model::{Domain, JumpProfile, ModelError, ModelSpec, MutationKernel, Profile};
use crate::quadrature::{pairwise_sum, Partition, QuadratureRule};

pub const CSV_HEADER: [&str; 6] = ["nu", "level", "N", "lambda_raw", "lambda_mp", "gap"];

/// Cells the kernel width `σ_h / ν` must span under the mesh-coupling rule.
pub const CELLS_PER_KERNEL_WIDTH: f64 = 4.0;

/// Residual above `RESIDUAL_RETRY_FACTOR · tol` triggers a finer level.
const RESIDUAL_RETRY_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaxPrincipleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("the ν list must be nonempty and strictly ascending")]
    BadNuList,
    #[error("ν = {nu}: no level up to {max_cells} cells resolves the kernel")]
    Unresolvable { nu: f64, max_cells: usize },
}

fn integrand(kernel: &MutationKernel, x: f64, y: f64) -> Result<f64, ModelError> {
    let a = kernel.eval(x, y);
    let b = kernel.eval(y, x);
    if !a.is_finite() || !b.is_finite() {
        return Err(ModelError::NonFinite { x, y: Some(y) });
    }
    if a < 0.0 || b < 0.0 {
        return Err(ModelError::Invalid(format!(
            "negative kernel sample at ({x}, {y})"
        )));
    }
    // Exact zero on symmetric pairs rather than a − √a·√a.
    Ok(if a == b { 0.0 } else { a - a.sqrt() * b.sqrt() })
}

/// `Q(y ↦ u(x, y) − √(u(x, y) u(y, x)))`.
pub fn mutational_loss_g(model: &ModelSpec, x: f64, quad: &QuadratureRule) -> Result<f64, ModelError> {
    let terms: Vec<f64> = quad
        .points()
        .iter()
        .zip(quad.weights())
        .map(|(&y, a)| Ok(a * integrand(&model.kernel, x, y)?))
        .collect::<Result<_, ModelError>>()?;
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleEstimate {
    /// Evaluation grid: the partition refined twice.
    pub points: Vec<f64>,
    pub g_values: Vec<f64>,
    /// `max_k (r(t_k) − g(t_k))` with the raw fitness.
    pub lambda_mp: f64,
    pub argmax: f64,
}

/// Grid estimate of `sup (r − g)` on the partition refined twice, with `g`
/// integrated by the same refined rule.
pub fn max_principle_estimate(model: &ModelSpec, partition: &Partition) -> Result<MaxPrincipleEstimate, ModelError> {
    let fine = partition.halved().halved();
    let quad = QuadratureRule::new(fine);
    let points = quad.points().to_vec();
    let g_values: Vec<f64> = points
        .par_iter()
        .map(|&x| mutational_loss_g(model, x, &quad))
        .collect::<Result<_, _>>()?;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for (&t, g) in points.iter().zip(&g_values) {
        let r = model.fitness.eval(t);
        if !r.is_finite() {
            return Err(ModelError::NonFinite { x: t, y: None });
        }
        if r - g > best.0 {
            best = (r - g, t);
        }
    }
    Ok(MaxPrincipleEstimate {
        points,
        g_values,
        lambda_mp: best.0,
        argmax: best.1,
    })
}

/// `u(x, y) = exp(γ(x − y)) · ν · h(ν |x − y|)`.
pub fn scaling_family(h: JumpProfile, gamma: f64, nu: f64) -> Result<MutationKernel, ModelError> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(ModelError::Invalid(format!("nu must be positive, got {nu}")));
    }
    if !gamma.is_finite() {
        return Err(ModelError::Invalid("gamma must be finite".into()));
    }
    Ok(MutationKernel::ExponentialTilted { gamma, nu, jump: h })
}

/// Models differing only in the locality parameter `ν` of the kernel.
#[derive(Debug, Clone)]
pub struct LocalityFamily {
    pub domain: Domain,
    pub fitness: Profile,
    pub jump: JumpProfile,
    pub gamma: f64,
    pub base_cells: usize,
    pub max_cells: usize,
}

impl LocalityFamily {
    pub fn model(&self, nu: f64) -> Result<ModelSpec, ModelError> {
        Ok(ModelSpec::new(
            self.domain,
            self.fitness.clone(),
            scaling_family(self.jump.clone(), self.gamma, nu)?,
        )
        .with_base_cells(self.base_cells)
        .with_max_cells(self.max_cells))
    }

    /// Smallest level `≥ min_level` whose mesh width is at most
    /// `width(h) / (4ν)`.
    pub fn coupled_level(&self, nu: f64, min_level: u32) -> Result<u32, MaxPrincipleError> {
        let model = self.model(nu)?;
        let target = self.jump.width() / (CELLS_PER_KERNEL_WIDTH * nu);
        let mut level = min_level;
        loop {
            match model.partition(level) {
                Ok(p) if p.mesh_width() <= target => return Ok(level),
                Ok(_) => level += 1,
                Err(_) => {
                    return Err(MaxPrincipleError::Unresolvable {
                        nu,
                        max_cells: self.max_cells,
                    })
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityRow {
    pub nu: f64,
    pub level: u32,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_raw: f64,
    pub lambda_mp: f64,
    /// `lambda_mp − lambda_raw`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityTable {
    pub rows: Vec<LocalityRow>,
    /// Set when the gap increases somewhere along the ν ladder.
    pub flagged: bool,
}

impl LocalityTable {
    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gap).collect()
    }

    pub fn gap_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap)
    }

    pub fn to_csv(&self) -> String {
        write_locality_csv(&self.rows)
    }
}

/// Solves the family at every `ν` (finest of `level` and the mesh-coupled
/// level, refined further while the residual misses `10 · tol`) and
/// tabulates `λ_raw`, `λ_MP` and their gap.
pub fn locality_experiment(
    family: &LocalityFamily,
    nu_list: &[f64],
    level: u32,
    cfg: &SolverConfig,
) -> Result<LocalityTable, MaxPrincipleError> {
    if nu_list.is_empty() || nu_list.windows(2).any(|w| !(w[0] < w[1])) || !(nu_list[0] > 0.0) {
        return Err(MaxPrincipleError::BadNuList);
    }
    let mut rows = Vec::with_capacity(nu_list.len());
    for &nu in nu_list {
        let model = family.model(nu)?;
        let method = Method::default_for(&model);
        let mut lvl = family.coupled_level(nu, level)?;
        let (op, result) = loop {
            let loss = model.loss_for_level(lvl)?;
            let (op, result) = solve_level(&model, &loss, lvl, method, cfg, SolveRoute::Direct)?;
            if result.residual_a <= RESIDUAL_RETRY_FACTOR * cfg.tol {
                break (op, result);
            }
            lvl += 1;
            if model.cells_at(lvl) > model.max_cells {
                return Err(MaxPrincipleError::Unresolvable {
                    nu,
                    max_cells: model.max_cells,
                });
            }
        };
        let estimate = max_principle_estimate(&model, op.partition())?;
        rows.push(LocalityRow {
            nu,
            level: lvl,
            n: op.len(),
            lambda_raw: result.lambda_raw,
            lambda_mp: estimate.lambda_mp,
            gap: estimate.lambda_mp - result.lambda_raw,
        });
    }
    let mut table = LocalityTable { rows, flagged: false };
    table.flagged = !table.gap_nonincreasing();
    Ok(table)
}

pub fn write_locality_csv(rows: &[LocalityRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            format!("{:.16e}", r.nu),
            r.level.to_string(),
            r.n.to_string(),
            format!("{:.16e}", r.lambda_raw),
            format!("{:.16e}", r.lambda_mp),
            format!("{:.16e}", r.gap),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Parses the output of [`write_locality_csv`].
pub fn parse_locality_csv(text: &str) -> Result<Vec<LocalityRow>, CsvError> {
    let records = read_records(text, &CSV_HEADER)?;
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 1;
            Ok(LocalityRow {
                nu: parse_field(rec, row, 0, CSV_HEADER[0])?,
                level: parse_field(rec, row, 1, CSV_HEADER[1])?,
                n: parse_field(rec, row, 2, CSV_HEADER[2])?,
                lambda_raw: parse_field(rec, row, 3, CSV_HEADER[3])?,
                lambda_mp: parse_field(rec, row, 4, CSV_HEADER[4])?,
                gap: parse_field(rec, row, 5, CSV_HEADER[5])?,
            })
        })
        .collect()
}

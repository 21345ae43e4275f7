//! Perron eigenpair of a discretized operator, by two independent routes.
//!
//! The direct route runs power iteration on `B = c·Id − A_n` with
//! `c = max w_diag`, so `λ_n = ρ(B) − c`. The bisection route finds the `α`
//! with `ρ(K_{α,n}) = 1`; the spectral radius of `K_α` is strictly decreasing
//! in `α`, so bisection on `ρ(K_α) − 1` is well posed, and the Perron vector
//! `q` of `K_{α*}` gives `p = q / (w + α*)`.
//!
//! Vectors are normalized in the induced norm `Σ α_k |v_k|`, so every
//! iterate is a unit-mass step density.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{embed_density, induced_norm, DiscreteOperator, DiscretizeError, StepDensity};
use crate::matrix::{is_strongly_connected, DenseMatrix};
use crate::quadrature::pairwise_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix has a negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("the support graph of U is not strongly connected")]
    Reducible,
    #[error("power iteration did not converge in {iterations} iterations (last increment {last_increment:e})")]
    NonConvergence { iterations: usize, last_increment: f64 },
    #[error("power iteration collapsed to the zero vector")]
    Degenerate,
    #[error("λ below bracket: ρ(K_α) = {rho} < 1 at α = {alpha} (the model may violate the cusp condition at this resolution)")]
    BelowBracket { alpha: f64, rho: f64 },
    #[error("λ above bracket: ρ(K_α) = {rho} > 1 at α = {alpha}")]
    AboveBracket { alpha: f64, rho: f64 },
    #[error("Perron vector entry {index} is {value}, not positive")]
    NotPositive { index: usize, value: f64 },
    #[error("dense eigensolve gives {dense}, power iteration gives {power}")]
    CrossCheck { power: f64, dense: f64 },
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Tolerance on successive eigenvalue and eigenvector increments.
    pub tol: f64,
    pub max_iterations: usize,
    /// Overrides the default `(lo, hi)` bisection bracket.
    pub bisection_bracket: Option<(f64, f64)>,
    /// Bisection stops once `|ρ(K_α) − 1|` is at most this.
    pub tol_rho: f64,
    /// ... or once the bracket is at most this wide.
    pub min_bracket_width: f64,
    /// Also compute the full spectrum with a dense eigensolver and compare.
    pub dense_cross_check: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 100_000,
            bisection_bracket: None,
            tol_rho: 1e-10,
            min_bracket_width: 1e-12,
            dense_cross_check: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.into()));
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return bad("tol must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.tol_rho > 0.0) || !(self.min_bracket_width > 0.0) {
            return bad("bisection tolerances must be positive");
        }
        if let Some((lo, hi)) = self.bisection_bracket {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return bad("bisection bracket needs lo < hi");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveRoute {
    Direct,
    Bisection,
}

impl fmt::Display for SolveRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Bisection => "bisection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    pub lambda_shifted: f64,
    /// `lambda_shifted − shift`, the equilibrium mean fitness.
    pub lambda_raw: f64,
    pub density: StepDensity,
    /// `(w_diag + λ) · p`.
    pub q_values: Vec<f64>,
    pub residual_a: f64,
    pub residual_k: f64,
    /// `|λ_raw − Σ α_k r(t_k) p_k|`.
    pub mean_fitness_gap: f64,
    pub iterations: usize,
    pub method: SolveRoute,
}

struct PowerOutcome {
    rho: f64,
    vector: Vec<f64>,
    iterations: usize,
    /// Set when the Collatz–Wielandt bounds separated `ρ` from the
    /// requested threshold before convergence.
    decided: Option<Ordering>,
}

fn weighted_l1(weights: &[f64], v: &[f64]) -> f64 {
    let terms: Vec<f64> = weights.iter().zip(v).map(|(w, x)| w * x.abs()).collect();
    pairwise_sum(&terms)
}

/// Power iteration for a nonnegative operator given as `apply(v, out)`.
///
/// Converged when both the eigenvalue estimate and the normalized iterate
/// move by at most `tol`. With `threshold = Some(t)` it also stops as soon as
/// `min_k (Mv)_k/v_k > t` or `max_k (Mv)_k/v_k < t`, which bracket `ρ`.
fn power_iterate<F>(
    mut apply: F,
    weights: &[f64],
    start: &[f64],
    tol: f64,
    max_iterations: usize,
    threshold: Option<f64>,
) -> Result<PowerOutcome, SolverError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = weights.len();
    let norm0 = weighted_l1(weights, start);
    if !(norm0 > 0.0) || !norm0.is_finite() {
        return Err(SolverError::Degenerate);
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / norm0).collect();
    let mut y = vec![0.0; n];
    let mut rho_prev = f64::NAN;
    let mut last_increment = f64::INFINITY;
    for it in 1..=max_iterations {
        apply(&v, &mut y);
        let rho = weighted_l1(weights, &y);
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(SolverError::Degenerate);
        }
        let decided = threshold.and_then(|t| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (yk, vk) in y.iter().zip(&v) {
                if !(*vk > 0.0) {
                    return None;
                }
                let ratio = yk / vk;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            if lo > t {
                Some(Ordering::Greater)
            } else if hi < t {
                Some(Ordering::Less)
            } else {
                None
            }
        });
        for yk in y.iter_mut() {
            *yk /= rho;
        }
        let dv = {
            let terms: Vec<f64> = weights
                .iter()
                .zip(y.iter().zip(&v))
                .map(|(w, (a, b))| w * (a - b).abs())
                .collect();
            pairwise_sum(&terms)
        };
        let drho = (rho - rho_prev).abs();
        last_increment = drho;
        std::mem::swap(&mut v, &mut y);
        if decided.is_some() || (drho <= tol && dv <= tol) {
            return Ok(PowerOutcome {
                rho,
                vector: v,
                iterations: it,
                decided,
            });
        }
        rho_prev = rho;
    }
    Err(SolverError::NonConvergence {
        iterations: max_iterations,
        last_increment,
    })
}

/// Dominant eigenvalue and eigenvector of a nonnegative matrix by power
/// iteration from the all-ones vector. The eigenvector is nonnegative with
/// unit `ℓ¹` norm.
pub fn spectral_radius(matrix: &DenseMatrix, cfg: &SolverConfig) -> Result<(f64, Vec<f64>), SolverError> {
    cfg.validate()?;
    let n = matrix.n();
    for (k, row) in matrix.rows().enumerate() {
        for (l, &value) in row.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(SolverError::NegativeEntry { row: k, col: l, value });
            }
        }
    }
    let weights = vec![1.0; n];
    let out = power_iterate(
        |v, y| matrix.matvec_into(v, y),
        &weights,
        &vec![1.0; n],
        cfg.tol,
        cfg.max_iterations,
        None,
    )?;
    Ok((out.rho, out.vector))
}

fn check_irreducible(op: &DiscreteOperator) -> Result<(), SolverError> {
    let u = op.u_matrix();
    if is_strongly_connected(op.len(), |k, l| u.get(k, l) > 0.0) {
        Ok(())
    } else {
        Err(SolverError::Reducible)
    }
}

/// `Σ α_k |((diag(w) − U + λ) p)_k|`.
pub fn residual(op: &DiscreteOperator, lambda: f64, density: &StepDensity) -> f64 {
    let p = density.values();
    let ap = op.apply_a(p);
    let r: Vec<f64> = ap.iter().zip(p).map(|(a, pk)| a + lambda * pk).collect();
    induced_norm(op.partition(), &r)
}

/// `Σ α_k |(K_λ q − q)_k|` with `K_λ q = U (q / (w + λ))`.
fn residual_k(op: &DiscreteOperator, lambda: f64, q: &[f64]) -> f64 {
    let scaled: Vec<f64> = q.iter().zip(op.w_diag()).map(|(qk, w)| qk / (w + lambda)).collect();
    let kq = op.u_matrix().matvec(&scaled);
    let diff: Vec<f64> = kq.iter().zip(q).map(|(a, b)| a - b).collect();
    induced_norm(op.partition(), &diff)
}

fn finish(
    op: &DiscreteOperator,
    lambda_shifted: f64,
    values: &[f64],
    iterations: usize,
    method: SolveRoute,
) -> Result<EigenResult, SolverError> {
    let (density, _) = embed_density(op.partition(), values)?;
    if let Some((index, &value)) = density.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(SolverError::NotPositive { index, value });
    }
    let q_values: Vec<f64> = density
        .values()
        .iter()
        .zip(op.w_diag())
        .map(|(p, w)| (w + lambda_shifted) * p)
        .collect();
    let residual_a = residual(op, lambda_shifted, &density);
    let residual_k = residual_k(op, lambda_shifted, &q_values);
    let lambda_raw = lambda_shifted - op.shift();
    let mean_fitness_gap = (lambda_raw - op.mean_fitness(&density)).abs();
    Ok(EigenResult {
        lambda_shifted,
        lambda_raw,
        density,
        q_values,
        residual_a,
        residual_k,
        mean_fitness_gap,
        iterations,
        method,
    })
}

fn dense_cross_check(op: &DiscreteOperator, lambda: f64) -> Result<(), SolverError> {
    let neg_a = -op.a_matrix().to_nalgebra();
    let dense = neg_a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if (dense - lambda).abs() > 1e-8 * lambda.abs().max(1.0) {
        return Err(SolverError::CrossCheck { power: lambda, dense });
    }
    Ok(())
}

/// Direct route: power iteration on `max(w)·Id − A_n`.
pub fn perron_eigenpair(op: &DiscreteOperator, cfg: &SolverConfig) -> Result<EigenResult, SolverError> {
    cfg.validate()?;
    check_irreducible(op)?;
    let c = op.max_w();
    let w = op.w_diag();
    let u = op.u_matrix();
    let weights = op.partition().weights();
    let out = power_iterate(
        |v, y| {
            u.matvec_into(v, y);
            for k in 0..v.len() {
                y[k] += (c - w[k]) * v[k];
            }
        },
        &weights,
        &vec![1.0; op.len()],
        cfg.tol,
        cfg.max_iterations,
        None,
    )?;
    let lambda = out.rho - c;
    if cfg.dense_cross_check {
        dense_cross_check(op, lambda)?;
    }
    finish(op, lambda, &out.vector, out.iterations, SolveRoute::Direct)
}

/// Default bisection bracket: `lo` just above the pole at `−min w` (and at
/// least `tol`), `hi = max w + max u · |covered interval|`.
pub fn default_bracket(op: &DiscreteOperator, cfg: &SolverConfig) -> (f64, f64) {
    let lo = cfg.tol.max(-op.min_w() + cfg.tol);
    let hi = op.max_w() + op.max_kernel_sample() * op.partition().covered_length();
    (lo, hi.max(lo + cfg.tol))
}

/// Evaluates `ρ(K_α)` with power iteration on `K_α + Id` (which is aperiodic
/// whenever `K_α` is irreducible), starting from `start`.
struct KAlpha<'a> {
    op: &'a DiscreteOperator,
    weights: Vec<f64>,
    cfg: &'a SolverConfig,
    iterations: usize,
}

struct KEval {
    rho: f64,
    vector: Vec<f64>,
    decided: Option<Ordering>,
}

impl<'a> KAlpha<'a> {
    fn new(op: &'a DiscreteOperator, cfg: &'a SolverConfig) -> Self {
        Self {
            op,
            weights: op.partition().weights(),
            cfg,
            iterations: 0,
        }
    }

    fn eval(&mut self, alpha: f64, start: &[f64], decide: bool) -> Result<KEval, SolverError> {
        let bound = -self.op.min_w();
        if !(alpha > bound) {
            return Err(DiscretizeError::Pole { alpha, bound }.into());
        }
        let scale: Vec<f64> = self.op.w_diag().iter().map(|w| 1.0 / (w + alpha)).collect();
        let u = self.op.u_matrix();
        let mut scaled = vec![0.0; self.op.len()];
        let out = power_iterate(
            |v, y| {
                for k in 0..v.len() {
                    scaled[k] = v[k] * scale[k];
                }
                u.matvec_into(&scaled, y);
                for k in 0..v.len() {
                    y[k] += v[k];
                }
            },
            &self.weights,
            start,
            0.1 * self.cfg.tol_rho.min(self.cfg.tol),
            self.cfg.max_iterations,
            decide.then_some(2.0),
        )?;
        self.iterations += out.iterations;
        Ok(KEval {
            rho: out.rho - 1.0,
            vector: out.vector,
            decided: out.decided,
        })
    }
}

/// `ρ(K_{α,n})` for a single `α`.
pub fn k_alpha_spectral_radius(op: &DiscreteOperator, alpha: f64, cfg: &SolverConfig) -> Result<f64, SolverError> {
    cfg.validate()?;
    let mut k = KAlpha::new(op, cfg);
    Ok(k.eval(alpha, &vec![1.0; op.len()], false)?.rho)
}

/// Bisection route: `λ_n` is the root of `ρ(K_α) = 1`.
pub fn solve_via_bisection(op: &DiscreteOperator, cfg: &SolverConfig) -> Result<EigenResult, SolverError> {
    cfg.validate()?;
    check_irreducible(op)?;
    let (mut lo, mut hi) = cfg.bisection_bracket.unwrap_or_else(|| default_bracket(op, cfg));
    let mut k = KAlpha::new(op, cfg);
    let ones = vec![1.0; op.len()];

    let at_lo = k.eval(lo, &ones, true)?;
    if at_lo.decided == Some(Ordering::Less) || (at_lo.decided.is_none() && at_lo.rho < 1.0) {
        return Err(SolverError::BelowBracket { alpha: lo, rho: at_lo.rho });
    }
    let at_hi = k.eval(hi, &ones, true)?;
    if at_hi.decided == Some(Ordering::Greater) || (at_hi.decided.is_none() && at_hi.rho > 1.0) {
        return Err(SolverError::AboveBracket { alpha: hi, rho: at_hi.rho });
    }

    let mut start = at_lo.vector;
    let root = loop {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= cfg.min_bracket_width || mid <= lo || mid >= hi {
            break mid;
        }
        let e = k.eval(mid, &start, true)?;
        start = e.vector;
        let side = match e.decided {
            Some(side) => side,
            None if (e.rho - 1.0).abs() <= cfg.tol_rho => break mid,
            None => e.rho.partial_cmp(&1.0).unwrap_or(Ordering::Equal),
        };
        match side {
            Ordering::Greater => lo = mid,
            Ordering::Less => hi = mid,
            Ordering::Equal => break mid,
        }
    };

    // Converge the Perron vector of K at the root.
    let last = k.eval(root, &start, false)?;
    let p: Vec<f64> = last
        .vector
        .iter()
        .zip(op.w_diag())
        .map(|(q, w)| q / (w + root))
        .collect();
    if cfg.dense_cross_check {
        dense_cross_check(op, root)?;
    }
    let iterations = k.iterations;
    finish(op, root, &p, iterations, SolveRoute::Bisection)
}

/// Dispatches on `route`.
pub fn solve(op: &DiscreteOperator, cfg: &SolverConfig, route: SolveRoute) -> Result<EigenResult, SolverError> {
    match route {
        SolveRoute::Direct => perron_eigenpair(op, cfg),
        SolveRoute::Bisection => solve_via_bisection(op, cfg),
    }
}

//! Refinement studies, cross-method comparisons and oracle comparisons.

use serde::Serialize;
use thiserror::Error;

use crate::discretize::{
    discretize, tv_distance, DiscreteOperator, DiscretizeError, Method, MethodKind, StepDensity,
};
use crate::eigensolver::{solve, EigenResult, SolveRoute, SolverConfig, SolverError};
use crate::model::{Domain, LossFunction, ModelError, ModelSpec};
use crate::quadrature::pairwise_sum;

/// Tail mass above which a real-line study is flagged.
pub const TAIL_MASS_LIMIT: f64 = 1e-6;

/// Sub-points per cell used to average an oracle density.
pub const ORACLE_SUB_POINTS: usize = 32;

pub const CSV_HEADER: [&str; 9] = [
    "level",
    "N",
    "lambda_shifted",
    "lambda_raw",
    "residual_A",
    "residual_K",
    "mean_fitness_gap",
    "tv_prev",
    "tail_mass",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Partition, discretization and solve at one level.
pub fn solve_level(
    model: &ModelSpec,
    loss: &LossFunction,
    level: u32,
    method: Method,
    cfg: &SolverConfig,
    route: SolveRoute,
) -> Result<(DiscreteOperator, EigenResult), PipelineError> {
    let partition = model.partition(level)?;
    let op = discretize(model, loss, &partition, method)?;
    let result = solve(&op, cfg, route)?;
    Ok((op, result))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: u32,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_shifted: f64,
    pub lambda_raw: f64,
    #[serde(rename = "residual_A")]
    pub residual_a: f64,
    #[serde(rename = "residual_K")]
    pub residual_k: f64,
    pub mean_fitness_gap: f64,
    /// TV distance to the previous level's density.
    pub tv_prev: Option<f64>,
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub method: MethodKind,
    pub levels: Vec<LevelRecord>,
    /// Set when a real-line study ends with tail mass above
    /// [`TAIL_MASS_LIMIT`].
    pub tail_flagged: bool,
}

impl ConvergenceReport {
    pub fn lambdas(&self) -> Vec<f64> {
        self.levels.iter().map(|r| r.lambda_raw).collect()
    }

    /// `TV(p_ℓ, p_{ℓ+1})` for consecutive levels.
    pub fn tv_consecutive(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|r| r.tv_prev).collect()
    }

    /// Ratios of consecutive eigenvalue increments
    /// `|λ_{ℓ+2} − λ_{ℓ+1}| / |λ_{ℓ+1} − λ_ℓ|`.
    pub fn cauchy_ratios(&self) -> Vec<f64> {
        let lambdas = self.lambdas();
        let steps: Vec<f64> = lambdas.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        steps.windows(2).map(|s| s[1] / s[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        write_convergence_csv(&self.levels)
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("a refinement study needs at least 2 levels, got {0}")]
    TooFewLevels(u32),
    #[error("level {level}: {source}")]
    Level {
        level: u32,
        #[source]
        source: PipelineError,
        /// Levels completed before the failure.
        partial: ConvergenceReport,
    },
}

/// `Σ_{|t_k| > L/2} α_k p_k` on a real-line truncation `[−L, L]`; zero on
/// compact domains.
pub fn tail_mass(domain: &Domain, density: &StepDensity) -> f64 {
    if domain.is_compact() {
        return 0.0;
    }
    let (a, b) = density.partition().covered();
    let half = 0.25 * (b - a);
    let center = 0.5 * (a + b);
    let terms: Vec<f64> = density
        .partition()
        .points()
        .iter()
        .zip(density.partition().weights())
        .zip(density.values())
        .filter(|((t, _), _)| (*t - center).abs() > half)
        .map(|((_, a), p)| a * p)
        .collect();
    pairwise_sum(&terms)
}

/// Solves at levels `base_level .. base_level + num_levels` with one loss
/// function computed at the finest level, and records eigenvalues,
/// residuals, consecutive TV distances and tail masses.
pub fn refinement_study(
    model: &ModelSpec,
    method: Method,
    base_level: u32,
    num_levels: u32,
    cfg: &SolverConfig,
) -> Result<ConvergenceReport, StudyError> {
    if num_levels < 2 {
        return Err(StudyError::TooFewLevels(num_levels));
    }
    let finest = base_level + num_levels - 1;
    let mut report = ConvergenceReport {
        method: method.kind(),
        levels: Vec::new(),
        tail_flagged: false,
    };
    let loss = match model.loss_for_level(finest) {
        Ok(loss) => loss,
        Err(e) => {
            return Err(StudyError::Level {
                level: finest,
                source: e.into(),
                partial: report,
            })
        }
    };
    let mut previous: Option<StepDensity> = None;
    for level in base_level..=finest {
        let outcome = solve_level(model, &loss, level, method, cfg, SolveRoute::Direct).and_then(|(_, r)| {
            let tv = match &previous {
                Some(prev) => Some(tv_distance(prev, &r.density)?),
                None => None,
            };
            Ok((r, tv))
        });
        let (result, tv_prev) = match outcome {
            Ok(v) => v,
            Err(source) => {
                return Err(StudyError::Level {
                    level,
                    source,
                    partial: report,
                })
            }
        };
        report.levels.push(LevelRecord {
            level,
            n: result.density.partition().len(),
            lambda_shifted: result.lambda_shifted,
            lambda_raw: result.lambda_raw,
            residual_a: result.residual_a,
            residual_k: result.residual_k,
            mean_fitness_gap: result.mean_fitness_gap,
            tv_prev,
            tail_mass: tail_mass(&model.domain, &result.density),
        });
        previous = Some(result.density);
    }
    report.tail_flagged = report
        .levels
        .last()
        .is_some_and(|r| r.tail_mass > TAIL_MASS_LIMIT);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub level: u32,
    pub n: usize,
    pub lambda_first: f64,
    pub lambda_second: f64,
    pub lambda_gap: f64,
    pub tv_gap: f64,
}

/// Solves the same level with two methods and compares the results.
pub fn compare_methods(
    model: &ModelSpec,
    level: u32,
    first: Method,
    second: Method,
    cfg: &SolverConfig,
) -> Result<MethodComparison, PipelineError> {
    let loss = model.loss_for_level(level)?;
    let (_, a) = solve_level(model, &loss, level, first, cfg, SolveRoute::Direct)?;
    let (_, b) = solve_level(model, &loss, level, second, cfg, SolveRoute::Direct)?;
    Ok(MethodComparison {
        level,
        n: a.density.partition().len(),
        lambda_first: a.lambda_raw,
        lambda_second: b.lambda_raw,
        lambda_gap: (a.lambda_raw - b.lambda_raw).abs(),
        tv_gap: tv_distance(&a.density, &b.density)?,
    })
}

/// Sampled Galerkin against averaged Galerkin with `sub_order` sub-points.
pub fn cross_method_compare(
    model: &ModelSpec,
    level: u32,
    sub_order: usize,
    cfg: &SolverConfig,
) -> Result<MethodComparison, PipelineError> {
    compare_methods(
        model,
        level,
        Method::GalerkinSampled,
        Method::GalerkinAveraged { sub_order },
        cfg,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub n: usize,
    pub lambda_error: f64,
    pub tv_error: f64,
}

/// Cell averages of `f` on the partition of `like`, with
/// [`ORACLE_SUB_POINTS`] midpoint samples per cell.
pub fn cell_averages<F: Fn(f64) -> f64>(like: &StepDensity, f: F) -> Vec<f64> {
    let p = like.partition();
    (0..p.len())
        .map(|k| {
            let samples: Vec<f64> = p.sub_points(k, ORACLE_SUB_POINTS).map(&f).collect();
            pairwise_sum(&samples) / ORACLE_SUB_POINTS as f64
        })
        .collect()
}

/// `|λ_raw − λ*|` and the TV distance between the computed density and the
/// cell-averaged oracle density.
pub fn oracle_compare<F: Fn(f64) -> f64>(
    result: &EigenResult,
    lambda_star: f64,
    density_star: F,
) -> Result<OracleComparison, DiscretizeError> {
    let averaged = cell_averages(&result.density, density_star);
    let oracle = StepDensity::new(result.density.partition().clone(), averaged)?;
    Ok(OracleComparison {
        n: oracle.partition().len(),
        lambda_error: (result.lambda_raw - lambda_star).abs(),
        tv_error: tv_distance(&result.density, &oracle)?,
    })
}

/// Solves `model` at `level` and compares with an oracle.
pub fn oracle_compare_at_level<F: Fn(f64) -> f64>(
    model: &ModelSpec,
    level: u32,
    method: Method,
    cfg: &SolverConfig,
    lambda_star: f64,
    density_star: F,
) -> Result<OracleComparison, PipelineError> {
    let loss = model.loss_for_level(level)?;
    let (_, result) = solve_level(model, &loss, level, method, cfg, SolveRoute::Direct)?;
    Ok(oracle_compare(&result, lambda_star, density_star)?)
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_convergence_csv(rows: &[LevelRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.level.to_string(),
            r.n.to_string(),
            fmt_real(r.lambda_shifted),
            fmt_real(r.lambda_raw),
            fmt_real(r.residual_a),
            fmt_real(r.residual_k),
            fmt_real(r.mean_fitness_gap),
            r.tv_prev.map(fmt_real).unwrap_or_default(),
            fmt_real(r.tail_mass),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsvError {
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}, column {column}: {message}")]
    Field {
        row: usize,
        column: &'static str,
        message: String,
    },
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    row: usize,
    index: usize,
    column: &'static str,
) -> Result<T, CsvError> {
    let raw = record.get(index).unwrap_or("");
    raw.parse().map_err(|_| CsvError::Field {
        row,
        column,
        message: format!("cannot parse '{raw}'"),
    })
}

pub(crate) fn read_records(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>, CsvError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| CsvError::Malformed(e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(CsvError::Header(found.iter().map(String::from).collect()));
    }
    reader
        .records()
        .map(|r| r.map_err(|e| CsvError::Malformed(e.to_string())))
        .collect()
}

/// Parses the output of [`write_convergence_csv`].
pub fn parse_convergence_csv(text: &str) -> Result<Vec<LevelRecord>, CsvError> {
    let records = read_records(text, &CSV_HEADER)?;
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 1;
            let real = |idx: usize| parse_field::<f64>(rec, row, idx, CSV_HEADER[idx]);
            let tv_prev = match rec.get(7) {
                Some("") => None,
                _ => Some(real(7)?),
            };
            Ok(LevelRecord {
                level: parse_field(rec, row, 0, CSV_HEADER[0])?,
                n: parse_field(rec, row, 1, CSV_HEADER[1])?,
                lambda_shifted: real(2)?,
                lambda_raw: real(3)?,
                residual_a: real(4)?,
                residual_k: real(5)?,
                mean_fitness_gap: real(6)?,
                tv_prev,
                tail_mass: real(8)?,
            })
        })
        .collect()
}

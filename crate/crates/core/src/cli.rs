//! Command-line front end: `coa <solve|converge|validate|maxp> --config <path>`.
//!
//! Exit codes: 0 success, 1 usage, configuration or I/O error, 2 model
//! failure (validation, discretization, reducible operator), 3 solver
//! failure, 4 when `--seed-check` finds two runs that differ.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_config, OutputFormat, RunConfig};
use crate::convergence::{refinement_study, PipelineError, StudyError};
use crate::discretize::dump::write_matrix_dump;
use crate::discretize::{discretize, DiscretizeError};
use crate::eigensolver::{solve, SolverError};
use crate::maxprinciple::{locality_experiment, LocalityFamily, MaxPrincipleError};
use crate::model::{validate_model, ModelError, ModelSpec, MutationKernel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_NONDETERMINISTIC: i32 = 4;

/// Environment variable overriding the cell cap of the model.
pub const MAX_N_ENV: &str = "COA_MAX_N";

#[derive(Debug, Parser)]
#[command(name = "coa", version, about = "Equilibria of continuum-of-alleles mutation-selection models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve at the base level and write the eigenpair.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the assembled matrices to this file.
        #[arg(long, value_name = "PATH")]
        dump_matrix: Option<PathBuf>,
    },
    /// Refinement study over `levels.count` levels.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the model's standing assumptions.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Max-principle gap along the `maxp.nu` ladder.
    Maxp {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output file; overrides `output.path`. Standard output otherwise.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Run twice and fail unless both outputs are byte-identical.
    #[arg(long)]
    seed_check: bool,
}

struct Failure {
    code: i32,
    message: String,
    /// Output produced before the failure, written anyway.
    partial: Option<String>,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            partial: None,
        }
    }
}

fn model_code(_: &ModelError) -> i32 {
    EXIT_MODEL
}

fn discretize_code(e: &DiscretizeError) -> i32 {
    match e {
        DiscretizeError::InvalidSubOrder => EXIT_USAGE,
        _ => EXIT_MODEL,
    }
}

fn solver_code(e: &SolverError) -> i32 {
    match e {
        SolverError::InvalidConfig(_) => EXIT_USAGE,
        SolverError::Reducible | SolverError::NegativeEntry { .. } => EXIT_MODEL,
        SolverError::Discretize(d) => discretize_code(d),
        _ => EXIT_SOLVER,
    }
}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Model(m) => model_code(m),
        PipelineError::Discretize(d) => discretize_code(d),
        PipelineError::Solver(s) => solver_code(s),
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(model_code(&e), e.to_string())
    }
}

impl From<DiscretizeError> for Failure {
    fn from(e: DiscretizeError) -> Self {
        Failure::new(discretize_code(&e), e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        Failure::new(solver_code(&e), e.to_string())
    }
}

impl From<MaxPrincipleError> for Failure {
    fn from(e: MaxPrincipleError) -> Self {
        let code = match &e {
            MaxPrincipleError::Model(m) => model_code(m),
            MaxPrincipleError::Pipeline(p) => pipeline_code(p),
            MaxPrincipleError::BadNuList => EXIT_USAGE,
            MaxPrincipleError::Unresolvable { .. } => EXIT_SOLVER,
        };
        Failure::new(code, e.to_string())
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct SolveSummary {
    level: u32,
    #[serde(rename = "N")]
    n: usize,
    method: String,
    route: String,
    lambda_shifted: f64,
    lambda_raw: f64,
    #[serde(rename = "residual_A")]
    residual_a: f64,
    #[serde(rename = "residual_K")]
    residual_k: f64,
    mean_fitness_gap: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct SolveJson<'a> {
    #[serde(flatten)]
    summary: &'a SolveSummary,
    points: &'a [f64],
    density: &'a [f64],
}

const SOLVE_HEADER: [&str; 10] = [
    "level",
    "N",
    "method",
    "route",
    "lambda_shifted",
    "lambda_raw",
    "residual_A",
    "residual_K",
    "mean_fitness_gap",
    "iterations",
];

fn solve_csv(s: &SolveSummary) -> String {
    let real = |v: f64| format!("{v:.16e}");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SOLVE_HEADER).expect("in-memory write");
    w.write_record([
        s.level.to_string(),
        s.n.to_string(),
        s.method.clone(),
        s.route.clone(),
        real(s.lambda_shifted),
        real(s.lambda_raw),
        real(s.residual_a),
        real(s.residual_k),
        real(s.mean_fitness_gap),
        s.iterations.to_string(),
    ])
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

struct Run<'a> {
    cfg: &'a RunConfig,
    model: ModelSpec,
}

impl Run<'_> {
    fn solve(&self, dump: Option<&Path>) -> Result<String, Failure> {
        let method = self.cfg.method().map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
        let level = self.cfg.levels.base;
        let loss = self.model.loss_for_level(level)?;
        let partition = self.model.partition(level)?;
        let op = discretize(&self.model, &loss, &partition, method)?;
        if let Some(path) = dump {
            write_file(path, &write_matrix_dump(&op))?;
        }
        let result = solve(&op, &self.cfg.solver_config(), self.cfg.solver.route)?;
        let summary = SolveSummary {
            level,
            n: op.len(),
            method: method.kind().to_string(),
            route: result.method.to_string(),
            lambda_shifted: result.lambda_shifted,
            lambda_raw: result.lambda_raw,
            residual_a: result.residual_a,
            residual_k: result.residual_k,
            mean_fitness_gap: result.mean_fitness_gap,
            iterations: result.iterations,
        };
        Ok(match self.cfg.output.format {
            OutputFormat::Csv => solve_csv(&summary),
            OutputFormat::Json => to_json(&SolveJson {
                summary: &summary,
                points: result.density.partition().points(),
                density: result.density.values(),
            }),
        })
    }

    fn converge(&self, err: &mut dyn Write) -> Result<String, Failure> {
        let method = self.cfg.method().map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
        let format = self.cfg.output.format;
        let render = |report: &crate::convergence::ConvergenceReport| match format {
            OutputFormat::Csv => report.to_csv(),
            OutputFormat::Json => to_json(report),
        };
        let levels = &self.cfg.levels;
        match refinement_study(&self.model, method, levels.base, levels.count, &self.cfg.solver_config()) {
            Ok(report) => {
                if report.tail_flagged {
                    let _ = writeln!(err, "warning: tail mass at the finest level exceeds the limit");
                }
                Ok(render(&report))
            }
            Err(StudyError::TooFewLevels(n)) => Err(Failure::new(
                EXIT_USAGE,
                format!("levels.count must be at least 2 for converge, got {n}"),
            )),
            Err(StudyError::Level { level, source, partial }) => Err(Failure {
                code: pipeline_code(&source),
                message: format!("level {level}: {source}"),
                partial: Some(render(&partial)),
            }),
        }
    }

    fn validate(&self) -> Result<String, Failure> {
        let report = validate_model(&self.model, self.cfg.levels.base);
        let text = match self.cfg.output.format {
            OutputFormat::Json => to_json(&report),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["condition", "status", "witness", "note"]).expect("in-memory write");
                for e in &report.entries {
                    w.write_record([
                        e.condition.to_string(),
                        e.status.to_string(),
                        format!("{:e}", e.witness),
                        e.note.clone(),
                    ])
                    .expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
            }
        };
        if report.any_failed() {
            let failed: Vec<String> = report
                .entries
                .iter()
                .filter(|e| e.status == crate::model::Status::Fail)
                .map(|e| format!("{}: {}", e.condition, e.note))
                .collect();
            return Err(Failure {
                code: EXIT_MODEL,
                message: format!("model validation failed ({})", failed.join("; ")),
                partial: Some(text),
            });
        }
        Ok(text)
    }

    fn maxp(&self) -> Result<String, Failure> {
        let (gamma, jump) = match &self.model.kernel {
            MutationKernel::ExponentialTilted { gamma, jump, .. } => (*gamma, jump.clone()),
            _ => {
                return Err(Failure::new(
                    EXIT_USAGE,
                    "maxp needs kernel.form = \"exponential-tilted\"",
                ))
            }
        };
        let family = LocalityFamily {
            domain: self.model.domain,
            fitness: self.model.fitness.clone(),
            jump,
            gamma,
            base_cells: self.model.base_cells,
            max_cells: self.model.max_cells,
        };
        let table = locality_experiment(&family, &self.cfg.maxp.nu, self.cfg.levels.base, &self.cfg.solver_config())?;
        Ok(match self.cfg.output.format {
            OutputFormat::Csv => table.to_csv(),
            OutputFormat::Json => to_json(&table),
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn run(cli: Cli, err: &mut dyn Write, max_n_override: Option<usize>) -> (Option<PathBuf>, Result<String, Failure>) {
    let (common, dump) = match &cli.command {
        Command::Solve { common, dump_matrix } => (common, dump_matrix.as_deref()),
        Command::Converge { common } | Command::Validate { common } | Command::Maxp { common } => (common, None),
    };
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(f) => return (common.out.clone(), Err(f)),
    };
    let out_path = common.out.clone().or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    let mut model = match cfg.model_spec() {
        Ok(m) => m,
        Err(e) => return (out_path, Err(Failure::new(EXIT_USAGE, e.to_string()))),
    };
    if let Some(n) = max_n_override {
        model.max_cells = n;
    }
    let run = Run { cfg: &cfg, model };
    let once = |err: &mut dyn Write| match &cli.command {
        Command::Solve { .. } => run.solve(dump),
        Command::Converge { .. } => run.converge(err),
        Command::Validate { .. } => run.validate(),
        Command::Maxp { .. } => run.maxp(),
    };
    let first = once(err);
    if !common.seed_check {
        return (out_path, first);
    }
    let second = once(err);
    let outcome = match (first, second) {
        (Ok(a), Ok(b)) if a == b => {
            let _ = writeln!(err, "seed check: two runs gave identical output");
            Ok(a)
        }
        (Ok(a), Ok(_)) => Err(Failure {
            code: EXIT_NONDETERMINISTIC,
            message: "seed check: two runs gave different output".into(),
            partial: Some(a),
        }),
        (Err(a), Err(b)) if a.code == b.code && a.message == b.message && a.partial == b.partial => Err(a),
        (Err(a), _) | (_, Err(a)) => Err(Failure {
            code: EXIT_NONDETERMINISTIC,
            message: format!("seed check: runs disagree ({})", a.message),
            partial: None,
        }),
    };
    (out_path, outcome)
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Artifacts go to the output path or to `out`; diagnostics go
/// to `err`. `max_n_override` replaces the model's cell cap.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, max_n_override: Option<usize>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let (out_path, outcome) = run(cli, err, max_n_override);
    let emit = |text: &str, out: &mut dyn Write| -> Result<(), Failure> {
        match &out_path {
            Some(p) => write_file(p, text),
            None => out
                .write_all(text.as_bytes())
                .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write output: {e}"))),
        }
    };
    let failure = match outcome {
        Ok(text) => match emit(&text, out) {
            Ok(()) => return EXIT_OK,
            Err(f) => f,
        },
        Err(f) => {
            if let Some(text) = &f.partial {
                if let Err(g) = emit(text, out) {
                    let _ = writeln!(err, "error: {}", g.message);
                }
            }
            f
        }
    };
    let _ = writeln!(err, "error: {}", failure.message);
    failure.code
}

/// Reads [`MAX_N_ENV`] from the environment.
pub fn max_n_from_env() -> Result<Option<usize>, String> {
    match std::env::var(MAX_N_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("{MAX_N_ENV}: {e}")),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{MAX_N_ENV} must be a positive integer, got '{v}'")),
        },
    }
}

//! TOML run configuration.
//!
//! ```toml
//! method = "nystrom"              # optional
//!
//! [model.domain]
//! kind = "compact"                # or "real-line" with l0, max_level
//! a = -1.0
//! b = 1.0
//!
//! [model.fitness]
//! form = "quadratic"
//! params = { peak = 1.0, curvature = 1.0 }
//!
//! [model.kernel]
//! form = "house-of-cards"
//! params = { mu = 1.0, m = 0.5 }
//!
//! [levels]
//! base = 4
//! count = 2
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{Method, MethodKind, DEFAULT_SUB_ORDER};
use crate::eigensolver::{SolveRoute, SolverConfig};
use crate::model::{
    Domain, JumpProfile, ModelSpec, MutationKernel, PiecewiseLinear, Profile, DEFAULT_BASE_CELLS,
    DEFAULT_GAMMA_EPSILON, DEFAULT_MAX_CELLS, DEFAULT_TOL_ESSINF,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{key} {message}")]
    Semantic { key: String, message: String },
}

fn semantic(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Semantic {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
    Points(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Compact,
    RealLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormConfig {
    pub form: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essinf_factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_essinf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cells: Option<usize>,
    pub domain: DomainConfig,
    pub fitness: FormConfig,
    pub kernel: FormConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    #[serde(default)]
    pub base: u32,
    #[serde(default = "default_count")]
    pub count: u32,
}

fn default_count() -> u32 {
    4
}

impl Default for LevelsConfig {
    fn default() -> Self {
        Self {
            base: 0,
            count: default_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_route")]
    pub route: SolveRoute,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
    #[serde(default)]
    pub dense_cross_check: bool,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iterations() -> usize {
    100_000
}

fn default_route() -> SolveRoute {
    SolveRoute::Direct
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iterations: default_max_iterations(),
            route: default_route(),
            bracket: None,
            dense_cross_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxpConfig {
    #[serde(default = "default_nu")]
    pub nu: Vec<f64>,
}

fn default_nu() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

impl Default for MaxpConfig {
    fn default() -> Self {
        Self { nu: default_nu() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_order: Option<usize>,
    pub model: ModelConfig,
    #[serde(default)]
    pub levels: LevelsConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub maxp: MaxpConfig,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let mut end = offset.min(text.len());
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    let before = &text[..end];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a configuration, filling in the default method.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let model = cfg.model_spec()?;
    if cfg.method.is_none() {
        cfg.method = Some(Method::default_for(&model).kind());
    }
    cfg.method()?;
    cfg.solver_config().validate().map_err(|e| semantic("solver", e.to_string()))?;
    if cfg.maxp.nu.is_empty() || cfg.maxp.nu.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(semantic("maxp.nu", "must be a nonempty list of positive numbers"));
    }
    if cfg.maxp.nu.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(semantic("maxp.nu", "must be strictly ascending"));
    }
    Ok(cfg)
}

/// Serializes a configuration back to TOML.
pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable")
}

struct Params<'a> {
    section: &'static str,
    values: &'a BTreeMap<String, ParamValue>,
}

impl<'a> Params<'a> {
    fn key(&self, name: &str) -> String {
        format!("{}.params.{name}", self.section)
    }

    fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(semantic(self.key(k), "is not a recognized parameter")),
            None => Ok(()),
        }
    }

    fn number(&self, name: &str) -> Result<Option<f64>, ConfigError> {
        match self.values.get(name) {
            None => Ok(None),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(Some(*v)),
            Some(_) => Err(semantic(self.key(name), "must be a finite number")),
        }
    }

    fn required(&self, name: &str) -> Result<f64, ConfigError> {
        self.number(name)?.ok_or_else(|| semantic(self.key(name), "is required"))
    }

    fn positive(&self, name: &str) -> Result<f64, ConfigError> {
        let v = self.required(name)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(semantic(self.key(name), "must be positive"))
        }
    }

    fn nonnegative(&self, name: &str) -> Result<f64, ConfigError> {
        let v = self.required(name)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(semantic(self.key(name), "must be non-negative"))
        }
    }
}

fn fitness_from(form: &FormConfig) -> Result<Profile, ConfigError> {
    let p = Params {
        section: "fitness",
        values: &form.params,
    };
    let profile = match form.form.as_str() {
        "constant" => {
            p.check_known(&["value"])?;
            Profile::Constant {
                value: p.required("value")?,
            }
        }
        "linear" => {
            p.check_known(&["intercept", "slope"])?;
            Profile::Linear {
                intercept: p.required("intercept")?,
                slope: p.required("slope")?,
            }
        }
        "quadratic" => {
            p.check_known(&["peak", "curvature"])?;
            Profile::Quadratic {
                peak: p.required("peak")?,
                curvature: p.required("curvature")?,
            }
        }
        "gaussian" => {
            p.check_known(&["amplitude", "scale"])?;
            Profile::Gaussian {
                amplitude: p.required("amplitude")?,
                scale: p.positive("scale")?,
            }
        }
        "table" => {
            p.check_known(&["points"])?;
            let points = match form.params.get("points") {
                Some(ParamValue::Points(pts)) => pts.iter().map(|[x, y]| (*x, *y)).collect::<Vec<_>>(),
                _ => return Err(semantic(p.key("points"), "must be a list of [x, r] pairs")),
            };
            Profile::Table(PiecewiseLinear::new(&points).map_err(|e| semantic(p.key("points"), e.to_string()))?)
        }
        other => return Err(semantic("fitness.form", format!("'{other}' is not a known fitness form"))),
    };
    Ok(profile)
}

fn jump_from(p: &Params<'_>) -> Result<JumpProfile, ConfigError> {
    let mass = p.nonnegative("mass")?;
    let width = p.positive("sigma")?;
    match p.values.get("jump") {
        None => Ok(JumpProfile::Gaussian { mass, sigma: width }),
        Some(ParamValue::Text(t)) if t == "gaussian" => Ok(JumpProfile::Gaussian { mass, sigma: width }),
        Some(ParamValue::Text(t)) if t == "laplace" => Ok(JumpProfile::Laplace { mass, scale: width }),
        Some(_) => Err(semantic(p.key("jump"), "must be \"gaussian\" or \"laplace\"")),
    }
}

fn kernel_from(form: &FormConfig) -> Result<MutationKernel, ConfigError> {
    let p = Params {
        section: "kernel",
        values: &form.params,
    };
    let kernel = match form.form.as_str() {
        "gaussian-difference" => {
            p.check_known(&["mu", "sigma"])?;
            MutationKernel::GaussianDifference {
                mu: p.nonnegative("mu")?,
                sigma: p.positive("sigma")?,
            }
        }
        "house-of-cards" => {
            p.check_known(&["mu", "m"])?;
            MutationKernel::HouseOfCards {
                mu: p.nonnegative("mu")?,
                density: Profile::Constant {
                    value: p.nonnegative("m")?,
                },
            }
        }
        "exponential-tilted" => {
            p.check_known(&["gamma", "nu", "mass", "sigma", "jump"])?;
            MutationKernel::ExponentialTilted {
                gamma: p.required("gamma")?,
                nu: p.number("nu")?.map_or(Ok(1.0), |v| {
                    if v > 0.0 {
                        Ok(v)
                    } else {
                        Err(semantic(p.key("nu"), "must be positive"))
                    }
                })?,
                jump: jump_from(&p)?,
            }
        }
        "regularized-gamma" => {
            p.check_known(&["mu", "shape", "rate", "epsilon"])?;
            let epsilon = match p.number("epsilon")? {
                None => DEFAULT_GAMMA_EPSILON,
                Some(e) if e > 0.0 => e,
                Some(_) => return Err(semantic(p.key("epsilon"), "must be positive")),
            };
            MutationKernel::regularized_gamma(p.nonnegative("mu")?, p.positive("shape")?, p.positive("rate")?, epsilon)
                .map_err(|e| semantic("kernel.params", e.to_string()))?
        }
        "block" => {
            p.check_known(&["rate", "lo", "hi"])?;
            let (lo, hi) = (p.required("lo")?, p.required("hi")?);
            if !(lo < hi) {
                return Err(semantic(p.key("hi"), "must exceed kernel.params.lo"));
            }
            MutationKernel::Block {
                rate: p.nonnegative("rate")?,
                lo,
                hi,
            }
        }
        other => return Err(semantic("kernel.form", format!("'{other}' is not a known kernel form"))),
    };
    Ok(kernel)
}

fn domain_from(d: &DomainConfig) -> Result<Domain, ConfigError> {
    match d.kind {
        DomainKind::Compact => {
            if d.l0.is_some() || d.max_level.is_some() {
                return Err(semantic("model.domain", "l0 and max_level only apply to real-line domains"));
            }
            let a = d.a.ok_or_else(|| semantic("model.domain.a", "is required"))?;
            let b = d.b.ok_or_else(|| semantic("model.domain.b", "is required"))?;
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(semantic("model.domain.b", "must exceed model.domain.a"));
            }
            Ok(Domain::Compact { a, b })
        }
        DomainKind::RealLine => {
            if d.a.is_some() || d.b.is_some() {
                return Err(semantic("model.domain", "a and b only apply to compact domains"));
            }
            let l0 = d.l0.unwrap_or(4.0);
            if !(l0 > 0.0) || !l0.is_finite() {
                return Err(semantic("model.domain.l0", "must be positive"));
            }
            Ok(Domain::RealLine {
                l0,
                max_level: d.max_level.unwrap_or(4),
            })
        }
    }
}

impl RunConfig {
    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.model;
        let mut spec = ModelSpec::new(domain_from(&m.domain)?, fitness_from(&m.fitness)?, kernel_from(&m.kernel)?);
        spec.base_cells = m.base_cells.unwrap_or(DEFAULT_BASE_CELLS);
        if spec.base_cells == 0 {
            return Err(semantic("model.base_cells", "must be positive"));
        }
        spec.essinf_factor = m.essinf_factor.unwrap_or(spec.essinf_factor);
        if spec.essinf_factor == 0 {
            return Err(semantic("model.essinf_factor", "must be positive"));
        }
        spec.tol_essinf = m.tol_essinf.unwrap_or(DEFAULT_TOL_ESSINF);
        if !(spec.tol_essinf > 0.0) {
            return Err(semantic("model.tol_essinf", "must be positive"));
        }
        spec.max_cells = m.max_cells.unwrap_or(DEFAULT_MAX_CELLS);
        Ok(spec)
    }

    pub fn method(&self) -> Result<Method, ConfigError> {
        let kind = match self.method {
            Some(k) => k,
            None => Method::default_for(&self.model_spec()?).kind(),
        };
        if kind != MethodKind::GalerkinAveraged && self.sub_order.is_some() {
            return Err(semantic("sub_order", "only applies to method galerkin-averaged"));
        }
        match kind {
            MethodKind::Nystrom => {
                if self.model.domain.kind != DomainKind::Compact {
                    return Err(semantic("method", "nystrom needs a compact domain"));
                }
                Ok(Method::Nystrom)
            }
            MethodKind::GalerkinSampled => Ok(Method::GalerkinSampled),
            MethodKind::GalerkinAveraged => {
                let sub_order = self.sub_order.unwrap_or(DEFAULT_SUB_ORDER);
                if sub_order == 0 {
                    return Err(semantic("sub_order", "must be positive"));
                }
                Ok(Method::GalerkinAveraged { sub_order })
            }
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iterations: self.solver.max_iterations,
            bisection_bracket: self.solver.bracket.map(|[lo, hi]| (lo, hi)),
            dense_cross_check: self.solver.dense_cross_check,
            ..SolverConfig::default()
        }
    }
}

//! Run configuration as flat `key = value` text with dotted keys.

use std::fmt::Write as _;
use std::path::Path;

use drfkit_core::first_stage::{FirstStage, GpsFamily, ResidualMode};
use drfkit_core::functionals::QuantileMode;
use drfkit_core::inference::Denominator;
use drfkit_core::kernel::{BandwidthRule, DEFAULT_BANDWIDTH_EXPONENT};
use drfkit_core::math;
use drfkit_core::partial_mean::{Step2, WeightKind};
use drfkit_core::trimming::DEFAULT_QUANTILE_LEVEL;
use drfkit_core::{KernelFamily, LocalOrder};

use crate::error::{CliError, Result};

/// Evaluation grid recipe.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// `points` equally spaced values between the `lo` and `hi` sample quantiles.
    Auto {
        points: usize,
        lo: f64,
        hi: f64,
    },
    /// `start, start + step, ...` up to `stop`.
    Range {
        start: f64,
        stop: f64,
        step: f64,
    },
    List(Vec<f64>),
}

impl GridSpec {
    pub fn parse(key: &str, s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| CliError::config(key, format!("{why} in grid `{s}`"));
        if let Some(rest) = s.strip_prefix("auto") {
            let parts: Vec<&str> = rest.split(':').skip(1).collect();
            if parts.len() != 3 {
                return Err(bad("expected auto:<points>:<lo>:<hi>"));
            }
            let points = parts[0].trim().parse().map_err(|_| bad("bad point count"))?;
            let lo = parse_f64(key, parts[1])?;
            let hi = parse_f64(key, parts[2])?;
            if points < 1 || !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
                return Err(bad("need points >= 1 and 0 <= lo < hi <= 1"));
            }
            return Ok(GridSpec::Auto { points, lo, hi });
        }
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("expected start:stop:step"));
            }
            let start = parse_f64(key, parts[0])?;
            let stop = parse_f64(key, parts[1])?;
            let step = parse_f64(key, parts[2])?;
            if !(step > 0.0) || stop < start {
                return Err(bad("need step > 0 and stop >= start"));
            }
            return Ok(GridSpec::Range { start, stop, step });
        }
        let values = parse_list(key, s)?;
        if values.is_empty() {
            return Err(bad("empty list"));
        }
        Ok(GridSpec::List(values))
    }

    pub fn render(&self) -> String {
        match self {
            GridSpec::Auto { points, lo, hi } => format!("auto:{points}:{lo}:{hi}"),
            GridSpec::Range { start, stop, step } => format!("{start}:{stop}:{step}"),
            GridSpec::List(v) => render_list(v),
        }
    }

    /// Concrete grid; `data` feeds the quantile-based recipe.
    pub fn resolve(&self, key: &str, data: &[f64]) -> Result<Vec<f64>> {
        let grid = match self {
            GridSpec::Auto { points, lo, hi } => {
                let mut sorted = data.to_vec();
                math::sort_f64(&mut sorted);
                let a = math::quantile_sorted(&sorted, *lo);
                let b = math::quantile_sorted(&sorted, *hi);
                if *points == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    if !(b > a) {
                        return Err(CliError::config(key, "data quantiles coincide; grid is degenerate"));
                    }
                    let step = (b - a) / (*points - 1) as f64;
                    (0..*points)
                        .map(|k| if k + 1 == *points { b } else { a + k as f64 * step })
                        .collect()
                }
            }
            GridSpec::Range { start, stop, step } => {
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|k| start + k as f64 * step).collect()
            }
            GridSpec::List(v) => v.clone(),
        };
        if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config(key, "grid must be finite and strictly increasing"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step1Kind {
    Observed,
    GpsKernel,
    GpsMle,
    GpsKnown,
    ControlCdf,
    ControlResidual,
}

impl Step1Kind {
    pub fn name(self) -> &'static str {
        match self {
            Step1Kind::Observed => "observed",
            Step1Kind::GpsKernel => "gps_kernel",
            Step1Kind::GpsMle => "gps_mle",
            Step1Kind::GpsKnown => "gps_known",
            Step1Kind::ControlCdf => "control_cdf",
            Step1Kind::ControlResidual => "control_residual",
        }
    }

    pub fn parse(key: &str, s: &str) -> Result<Self> {
        Ok(match s {
            "observed" => Step1Kind::Observed,
            "gps_kernel" => Step1Kind::GpsKernel,
            "gps_mle" => Step1Kind::GpsMle,
            "gps_known" => Step1Kind::GpsKnown,
            "control_cdf" => Step1Kind::ControlCdf,
            "control_residual" => Step1Kind::ControlResidual,
            other => return Err(CliError::config(key, format!("unknown first stage `{other}`"))),
        })
    }

    pub fn is_gps(self) -> bool {
        matches!(self, Step1Kind::GpsKernel | Step1Kind::GpsMle | Step1Kind::GpsKnown)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
    pub weight: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Config {
    pub kind: Step1Kind,
    pub family: GpsFamily,
    pub kernel: KernelFamily,
    /// `h₁` constant of the kernel first stage.
    pub bandwidth_c: f64,
    pub residual: ResidualMode,
    /// Supplied parameters for `gps_known`, intercept first.
    pub beta: Vec<f64>,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step2Config {
    pub order: LocalOrder,
    pub kernel: KernelFamily,
    pub bandwidth_c: f64,
    pub bandwidth_exponent: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimmingConfig {
    pub enabled: bool,
    pub quantile_level: f64,
    /// `None` reuses the treatment grid.
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub t: GridSpec,
    pub y: GridSpec,
    pub tau: Vec<f64>,
    /// Reference level for contrasts `θ(t) - θ(t_ref)`; must lie on the t grid.
    pub reference_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Curves {
    pub mean: bool,
    pub cdf: bool,
    pub quantile: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsConfig {
    pub kind: WeightKind,
    pub t_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub pointwise: bool,
    /// Multiplier-bootstrap draws; 0 disables uniform bands.
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub studentized: bool,
    pub gps_correction: bool,
    /// Adds the Step-3 averaging term to the influence function.
    pub finite_sample_terms: bool,
    pub bias_report: bool,
    /// `None` picks the default for the weight scheme.
    pub denominator: Option<Denominator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: Option<String>,
    pub roles: Roles,
    pub step1: Step1Config,
    pub step2: Step2Config,
    pub trimming: TrimmingConfig,
    pub grid: Grids,
    pub curves: Curves,
    pub weights: WeightsConfig,
    pub inference: InferenceConfig,
    pub quantile_mode: QuantileMode,
    pub rearrange: bool,
    pub normalize: bool,
    pub y_lower: Option<f64>,
    pub y_upper: Option<f64>,
    pub output_dir: String,
    pub psi_dump: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            roles: Roles {
                outcome: String::new(),
                treatment: String::new(),
                covariates: Vec::new(),
                instruments: Vec::new(),
                weight: None,
            },
            step1: Step1Config {
                kind: Step1Kind::GpsMle,
                family: GpsFamily::Lognormal,
                kernel: KernelFamily::Gaussian,
                bandwidth_c: 5.0,
                residual: ResidualMode::Kernel,
                beta: Vec::new(),
                sigma2: None,
            },
            step2: Step2Config {
                order: LocalOrder::Linear,
                kernel: KernelFamily::Gaussian,
                bandwidth_c: 5.0,
                bandwidth_exponent: DEFAULT_BANDWIDTH_EXPONENT,
                fallback: true,
            },
            trimming: TrimmingConfig {
                enabled: true,
                quantile_level: DEFAULT_QUANTILE_LEVEL,
                grid: None,
            },
            grid: Grids {
                t: GridSpec::Auto {
                    points: 49,
                    lo: 0.05,
                    hi: 0.95,
                },
                y: GridSpec::Auto {
                    points: 199,
                    lo: 0.005,
                    hi: 0.995,
                },
                tau: vec![0.5, 0.75],
                reference_t: None,
            },
            curves: Curves {
                mean: true,
                cdf: true,
                quantile: true,
            },
            weights: WeightsConfig {
                kind: WeightKind::Unit,
                t_bar: None,
            },
            inference: InferenceConfig {
                pointwise: true,
                bootstrap: 0,
                alpha: 0.05,
                seed: 1,
                studentized: true,
                gps_correction: false,
                finite_sample_terms: false,
                bias_report: false,
                denominator: None,
            },
            quantile_mode: QuantileMode::Interpolated,
            rearrange: true,
            normalize: false,
            y_lower: None,
            y_upper: None,
            output_dir: "drfkit-out".into(),
            psi_dump: false,
        }
    }
}

pub const PRESETS: &[&str] = &["default", "application"];

impl RunConfig {
    /// Named starting points. `application` is the hours-of-training protocol:
    /// lognormal GPS by maximum likelihood, local linear Step 2 with `C = 5`,
    /// 2.5% trimming, treatment grid 80, 120, ..., 2000.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        match name {
            "default" => {}
            "application" => {
                c.grid.t = GridSpec::Range {
                    start: 80.0,
                    stop: 2000.0,
                    step: 40.0,
                };
            }
            other => return Err(CliError::config("preset", format!("unknown preset `{other}`"))),
        }
        Ok(c)
    }

    /// Parses config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::ConfigSyntax {
                line: lineno + 1,
                reason: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::config(o.clone(), "override must be key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.path" => self.data_path = opt_string(v),
            "roles.outcome" => self.roles.outcome = v.to_string(),
            "roles.treatment" => self.roles.treatment = v.to_string(),
            "roles.covariates" => self.roles.covariates = parse_names(v),
            "roles.instruments" => self.roles.instruments = parse_names(v),
            "roles.weight" => self.roles.weight = opt_string(v),
            "step1.kind" => self.step1.kind = Step1Kind::parse(key, v)?,
            "step1.family" => self.step1.family = GpsFamily::parse(v).map_err(|e| core_cfg(key, e))?,
            "step1.kernel" => self.step1.kernel = KernelFamily::parse(v).map_err(|e| core_cfg(key, e))?,
            "step1.bandwidth_c" => self.step1.bandwidth_c = positive(key, v)?,
            "step1.residual" => {
                self.step1.residual = match v {
                    "kernel" => ResidualMode::Kernel,
                    "ols" => ResidualMode::Ols,
                    other => return Err(CliError::config(key, format!("unknown residual mode `{other}`"))),
                }
            }
            "step1.beta" => self.step1.beta = parse_list(key, v)?,
            "step1.sigma2" => self.step1.sigma2 = opt_f64(key, v)?,
            "step2.order" => {
                self.step2.order = match v {
                    "constant" => LocalOrder::Constant,
                    "linear" => LocalOrder::Linear,
                    other => return Err(CliError::config(key, format!("unknown order `{other}`"))),
                }
            }
            "step2.kernel" => self.step2.kernel = KernelFamily::parse(v).map_err(|e| core_cfg(key, e))?,
            "step2.bandwidth_c" => self.step2.bandwidth_c = positive(key, v)?,
            "step2.bandwidth_exponent" => self.step2.bandwidth_exponent = parse_f64(key, v)?,
            "step2.fallback" => self.step2.fallback = parse_bool(key, v)?,
            "trimming.enabled" => self.trimming.enabled = parse_bool(key, v)?,
            "trimming.quantile_level" => self.trimming.quantile_level = unit_open(key, v)?,
            "trimming.grid" => {
                self.trimming.grid = if v == "t" || v.is_empty() {
                    None
                } else {
                    Some(GridSpec::parse(key, v)?)
                }
            }
            "grid.t" => self.grid.t = GridSpec::parse(key, v)?,
            "grid.y" => self.grid.y = GridSpec::parse(key, v)?,
            "grid.tau" => {
                let tau = parse_list(key, v)?;
                if tau.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return Err(CliError::config(key, "every tau must lie in (0, 1)"));
                }
                self.grid.tau = tau;
            }
            "grid.reference_t" => self.grid.reference_t = opt_f64(key, v)?,
            "curves" => {
                let mut c = Curves {
                    mean: false,
                    cdf: false,
                    quantile: false,
                };
                for name in parse_names(v) {
                    match name.as_str() {
                        "mean" => c.mean = true,
                        "cdf" => c.cdf = true,
                        "quantile" => c.quantile = true,
                        other => return Err(CliError::config(key, format!("unknown curve `{other}`"))),
                    }
                }
                self.curves = c;
            }
            "weights.kind" => self.weights.kind = WeightKind::parse(v).map_err(|e| core_cfg(key, e))?,
            "weights.t_bar" => self.weights.t_bar = opt_f64(key, v)?,
            "inference.pointwise" => self.inference.pointwise = parse_bool(key, v)?,
            "inference.bootstrap" => {
                self.inference.bootstrap = v
                    .parse()
                    .map_err(|_| CliError::config(key, format!("`{v}` is not a draw count")))?
            }
            "inference.alpha" => self.inference.alpha = unit_open(key, v)?,
            "inference.seed" => {
                self.inference.seed = v
                    .parse()
                    .map_err(|_| CliError::config(key, format!("`{v}` is not an unsigned integer")))?
            }
            "inference.studentized" => self.inference.studentized = parse_bool(key, v)?,
            "inference.gps_correction" => self.inference.gps_correction = parse_bool(key, v)?,
            "inference.finite_sample_terms" => self.inference.finite_sample_terms = parse_bool(key, v)?,
            "inference.bias_report" => self.inference.bias_report = parse_bool(key, v)?,
            "inference.denominator" => {
                self.inference.denominator = match v {
                    "auto" | "" => None,
                    "kernel_ratio" => Some(Denominator::KernelRatio),
                    "score" => Some(Denominator::Score),
                    "equivalent" => Some(Denominator::Equivalent),
                    other => return Err(CliError::config(key, format!("unknown denominator `{other}`"))),
                }
            }
            "quantile.mode" => {
                self.quantile_mode = match v {
                    "interpolated" => QuantileMode::Interpolated,
                    "infimum" => QuantileMode::Infimum,
                    other => return Err(CliError::config(key, format!("unknown mode `{other}`"))),
                }
            }
            "quantile.rearrange" => self.rearrange = parse_bool(key, v)?,
            "process.normalize" => self.normalize = parse_bool(key, v)?,
            "bounds.y_lower" => self.y_lower = opt_f64(key, v)?,
            "bounds.y_upper" => self.y_upper = opt_f64(key, v)?,
            "output.dir" => self.output_dir = v.to_string(),
            "output.psi_dump" => self.psi_dump = parse_bool(key, v)?,
            other => return Err(CliError::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = |x: bool| x.to_string();
        let of = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut curves = Vec::new();
        if self.curves.mean {
            curves.push("mean");
        }
        if self.curves.cdf {
            curves.push("cdf");
        }
        if self.curves.quantile {
            curves.push("quantile");
        }
        vec![
            ("data.path", self.data_path.clone().unwrap_or_default()),
            ("roles.outcome", self.roles.outcome.clone()),
            ("roles.treatment", self.roles.treatment.clone()),
            ("roles.covariates", self.roles.covariates.join(",")),
            ("roles.instruments", self.roles.instruments.join(",")),
            ("roles.weight", self.roles.weight.clone().unwrap_or_default()),
            ("step1.kind", self.step1.kind.name().into()),
            ("step1.family", self.step1.family.name().into()),
            ("step1.kernel", self.step1.kernel.name().into()),
            ("step1.bandwidth_c", self.step1.bandwidth_c.to_string()),
            (
                "step1.residual",
                match self.step1.residual {
                    ResidualMode::Kernel => "kernel".into(),
                    ResidualMode::Ols => "ols".into(),
                },
            ),
            ("step1.beta", render_list(&self.step1.beta)),
            ("step1.sigma2", of(self.step1.sigma2)),
            ("step2.order", self.step2.order.name().into()),
            ("step2.kernel", self.step2.kernel.name().into()),
            ("step2.bandwidth_c", self.step2.bandwidth_c.to_string()),
            ("step2.bandwidth_exponent", self.step2.bandwidth_exponent.to_string()),
            ("step2.fallback", b(self.step2.fallback)),
            ("trimming.enabled", b(self.trimming.enabled)),
            ("trimming.quantile_level", self.trimming.quantile_level.to_string()),
            (
                "trimming.grid",
                self.trimming.grid.as_ref().map_or("t".into(), GridSpec::render),
            ),
            ("grid.t", self.grid.t.render()),
            ("grid.y", self.grid.y.render()),
            ("grid.tau", render_list(&self.grid.tau)),
            ("grid.reference_t", of(self.grid.reference_t)),
            ("curves", curves.join(",")),
            ("weights.kind", self.weights.kind.name().into()),
            ("weights.t_bar", of(self.weights.t_bar)),
            ("inference.pointwise", b(self.inference.pointwise)),
            ("inference.bootstrap", self.inference.bootstrap.to_string()),
            ("inference.alpha", self.inference.alpha.to_string()),
            ("inference.seed", self.inference.seed.to_string()),
            ("inference.studentized", b(self.inference.studentized)),
            ("inference.gps_correction", b(self.inference.gps_correction)),
            ("inference.finite_sample_terms", b(self.inference.finite_sample_terms)),
            ("inference.bias_report", b(self.inference.bias_report)),
            (
                "inference.denominator",
                match self.inference.denominator {
                    None => "auto".into(),
                    Some(Denominator::KernelRatio) => "kernel_ratio".into(),
                    Some(Denominator::Score) => "score".into(),
                    Some(Denominator::Equivalent) => "equivalent".into(),
                },
            ),
            (
                "quantile.mode",
                match self.quantile_mode {
                    QuantileMode::Interpolated => "interpolated".into(),
                    QuantileMode::Infimum => "infimum".into(),
                },
            ),
            ("quantile.rearrange", b(self.rearrange)),
            ("process.normalize", b(self.normalize)),
            ("bounds.y_lower", of(self.y_lower)),
            ("bounds.y_upper", of(self.y_upper)),
            ("output.dir", self.output_dir.clone()),
            ("output.psi_dump", b(self.psi_dump)),
        ]
    }

    /// Config text that parses back to `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Same content as `render`, one `# key=value` line each.
    pub fn provenance_header(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.roles;
        if r.outcome.is_empty() {
            return Err(CliError::config("roles.outcome", "an outcome column is required"));
        }
        if r.treatment.is_empty() {
            return Err(CliError::config("roles.treatment", "a treatment column is required"));
        }
        if r.outcome == r.treatment {
            return Err(CliError::config("roles.treatment", "outcome and treatment must differ"));
        }
        let mut seen = vec![r.outcome.as_str(), r.treatment.as_str()];
        for c in r.covariates.iter().chain(&r.instruments).chain(r.weight.iter()) {
            if seen.contains(&c.as_str()) {
                return Err(CliError::config(
                    "roles",
                    format!("column `{c}` has more than one role"),
                ));
            }
            seen.push(c);
        }
        match self.step1.kind {
            Step1Kind::ControlCdf | Step1Kind::ControlResidual if r.instruments.is_empty() => {
                return Err(CliError::config(
                    "roles.instruments",
                    "control-variable first stages need instruments",
                ))
            }
            Step1Kind::Observed | Step1Kind::GpsKernel if r.covariates.is_empty() => {
                return Err(CliError::config(
                    "roles.covariates",
                    "this first stage needs covariates",
                ))
            }
            Step1Kind::GpsKnown => {
                if self.step1.beta.len() != r.covariates.len() + 1 {
                    return Err(CliError::config(
                        "step1.beta",
                        "needs an intercept plus one coefficient per covariate",
                    ));
                }
                if !self.step1.sigma2.is_some_and(|s| s > 0.0) {
                    return Err(CliError::config("step1.sigma2", "a positive variance is required"));
                }
            }
            _ => {}
        }
        if self.weights.kind.is_treated() {
            if self.weights.t_bar.is_none() {
                return Err(CliError::config("weights.t_bar", "treated weights need t_bar"));
            }
            if self.weights.kind == WeightKind::TreatedMle && self.step1.kind != Step1Kind::GpsMle {
                return Err(CliError::config(
                    "weights.kind",
                    "treated_mle needs step1.kind = gps_mle",
                ));
            }
        }
        if self.weights.kind == WeightKind::Supplied && r.weight.is_none() {
            return Err(CliError::config(
                "roles.weight",
                "supplied weights need a weight column",
            ));
        }
        if !self.curves.mean && !self.curves.cdf && !self.curves.quantile {
            return Err(CliError::config("curves", "select at least one curve"));
        }
        if let (Some(l), Some(u)) = (self.y_lower, self.y_upper) {
            if l > u {
                return Err(CliError::config("bounds.y_lower", "exceeds bounds.y_upper"));
            }
        }
        Ok(())
    }

    pub fn step2(&self) -> Step2 {
        Step2 {
            order: self.step2.order,
            family: self.step2.kernel,
            bandwidth: BandwidthRule::RuleOfThumb {
                c: self.step2.bandwidth_c,
                exponent: self.step2.bandwidth_exponent,
            },
            allow_fallback: self.step2.fallback,
        }
    }

    /// First-stage recipe before any treated-pair wrapping.
    pub fn first_stage(&self) -> FirstStage {
        let h1 = BandwidthRule::RuleOfThumb {
            c: self.step1.bandwidth_c,
            exponent: self.step2.bandwidth_exponent,
        };
        match self.step1.kind {
            Step1Kind::Observed => FirstStage::Observed,
            Step1Kind::GpsKernel => FirstStage::GpsKernel {
                family: self.step1.kernel,
                bandwidth: h1,
            },
            Step1Kind::GpsMle => FirstStage::GpsMle {
                family: self.step1.family,
            },
            Step1Kind::GpsKnown => FirstStage::GpsKnown {
                family: self.step1.family,
                beta: self.step1.beta.clone(),
                sigma2: self.step1.sigma2.unwrap_or(f64::NAN),
            },
            Step1Kind::ControlCdf => FirstStage::ControlCdf {
                family: self.step1.kernel,
                bandwidth: h1,
            },
            Step1Kind::ControlResidual => FirstStage::ControlResidual {
                mode: self.step1.residual,
                family: self.step1.kernel,
                bandwidth: h1,
            },
        }
    }
}

fn core_cfg(key: &str, e: drfkit_core::Error) -> CliError {
    CliError::config(key, e.to_string())
}

fn parse_f64(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::config(key, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::config(key, "value must be finite"));
    }
    Ok(v)
}

fn positive(key: &str, s: &str) -> Result<f64> {
    let v = parse_f64(key, s)?;
    if v <= 0.0 {
        return Err(CliError::config(key, "must be positive"));
    }
    Ok(v)
}

fn unit_open(key: &str, s: &str) -> Result<f64> {
    let v = parse_f64(key, s)?;
    if !(v > 0.0 && v < 1.0) {
        return Err(CliError::config(key, "must lie in (0, 1)"));
    }
    Ok(v)
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(CliError::config(key, format!("`{other}` is not a boolean"))),
    }
}

fn opt_f64(key: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(key, s).map(Some)
    }
}

fn opt_string(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn parse_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| parse_f64(key, x))
        .collect()
}

fn render_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::preset("application").unwrap();
        c.apply_overrides(&[
            "roles.outcome=earn".into(),
            "roles.treatment=hours".into(),
            "roles.covariates=a,b".into(),
            "weights.kind=treated_mle".into(),
            "weights.t_bar=960".into(),
            "grid.y=0,1.5,3".into(),
            "step1.sigma2=0.3".into(),
        ])
        .unwrap();
        assert_eq!(RunConfig::from_text(&c.render()).unwrap(), c);
    }

    #[test]
    fn grids() {
        let g = GridSpec::parse("grid.t", "80:2000:40").unwrap();
        let v = g.resolve("grid.t", &[]).unwrap();
        assert_eq!(v.len(), 49);
        assert_eq!(v[0], 80.0);
        assert_eq!(v[48], 2000.0);
        let a = GridSpec::parse("grid.y", "auto:3:0:1").unwrap();
        assert_eq!(a.resolve("grid.y", &[4.0, 0.0, 2.0]).unwrap(), vec![0.0, 2.0, 4.0]);
        assert!(GridSpec::parse("grid.y", "3,2")
            .unwrap()
            .resolve("grid.y", &[])
            .is_err());
        assert!(GridSpec::parse("grid.y", "auto:3:0.5:0.2").is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("step9.x", "1"), Err(CliError::Config { .. })));
        assert!(c.set("inference.alpha", "1.5").is_err());
        assert!(c.set("grid.tau", "0.5,1").is_err());
        assert!(RunConfig::from_text("just words").is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_err());
        c.roles.outcome = "y".into();
        c.roles.treatment = "t".into();
        assert!(c.validate().is_ok());
        c.roles.covariates = vec!["t".into()];
        assert!(c.validate().is_err());
        c.roles.covariates.clear();
        c.weights.kind = WeightKind::TreatedKernel;
        assert!(c.validate().is_err());
    }
}

//! First-stage estimators producing the generated regressor `V̂`.
//!
//! Generalized propensity scores (kernel and closed-form normal/lognormal
//! MLE), the treated-pair score, and the two control-variable
//! constructions. [`FirstStage`] is the recipe used by the partial-mean
//! step: GPS regressors depend on the evaluation treatment level and are
//! refit for every `t`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::{BandwidthRule, KernelFamily, KernelSpec};
use crate::math::{self, Matrix, FRAC_1_SQRT_2PI};
use crate::sample::Sample;
use crate::smoothing;

/// Residual variances below this are rejected as degenerate.
pub const MIN_RESIDUAL_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GpsFamily {
    Normal,
    Lognormal,
}

impl GpsFamily {
    /// Conditional density `ζ(t, μ, σ²)`.
    pub fn density(self, t: f64, mu: f64, sigma2: f64) -> f64 {
        match self {
            GpsFamily::Normal => normal_density(t, mu, sigma2),
            GpsFamily::Lognormal => {
                if t <= 0.0 {
                    0.0
                } else {
                    normal_density(math::ln(t), mu, sigma2) / t
                }
            }
        }
    }

    /// `(∂ζ/∂μ, ∂ζ/∂σ²)` at `(t, μ, σ²)`.
    pub fn density_gradient(self, t: f64, mu: f64, sigma2: f64) -> (f64, f64) {
        let s = match self {
            GpsFamily::Normal => t,
            GpsFamily::Lognormal => math::ln(t),
        };
        let z = self.density(t, mu, sigma2);
        let r = s - mu;
        (z * r / sigma2, z * (r * r / (2.0 * sigma2 * sigma2) - 0.5 / sigma2))
    }

    pub fn name(self) -> &'static str {
        match self {
            GpsFamily::Normal => "normal",
            GpsFamily::Lognormal => "lognormal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(GpsFamily::Normal),
            "lognormal" => Ok(GpsFamily::Lognormal),
            other => Err(Error::invalid("family", format!("unknown GPS family `{other}`"))),
        }
    }
}

fn normal_density(x: f64, mu: f64, sigma2: f64) -> f64 {
    let sd = math::sqrt(sigma2);
    let z = (x - mu) / sd;
    FRAC_1_SQRT_2PI * math::exp(-0.5 * z * z) / sd
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegressorKind {
    Observed,
    GpsKernel,
    GpsMleNormal,
    GpsMleLognormal,
    ControlCdf,
    ControlResidual,
}

impl RegressorKind {
    pub fn is_gps(self) -> bool {
        matches!(
            self,
            RegressorKind::GpsKernel | RegressorKind::GpsMleNormal | RegressorKind::GpsMleLognormal
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Observed => "observed",
            RegressorKind::GpsKernel => "gps_kernel",
            RegressorKind::GpsMleNormal => "gps_mle_normal",
            RegressorKind::GpsMleLognormal => "gps_mle_lognormal",
            RegressorKind::ControlCdf => "control_cdf",
            RegressorKind::ControlResidual => "control_residual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    Kernel,
    Ols,
}

/// Normal/lognormal first-stage parameters and their linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct MleParams {
    pub family: GpsFamily,
    /// Intercept first.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Per-observation influence contributions: row `i` holds the terms whose
    /// sample mean approximates `(β̂ - β₀, σ̂² - σ₀²)`. `None` when the
    /// parameters were supplied rather than estimated.
    pub influence: Option<Matrix>,
}

impl MleParams {
    pub fn index(&self, x: &[f64]) -> f64 {
        self.beta[0] + x.iter().zip(&self.beta[1..]).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FirstStageParams {
    None,
    Kernel(KernelSpec),
    Mle(MleParams),
    Residual {
        mode: ResidualMode,
        spec: Option<KernelSpec>,
    },
}

/// Generated regressor values with the metadata later steps need.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRegressors {
    values: Matrix,
    kind: RegressorKind,
    params: FirstStageParams,
    /// Treatment levels the columns are evaluated at (GPS kinds only).
    eval_points: Vec<f64>,
}

impl GeneratedRegressors {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn kind(&self) -> RegressorKind {
        self.kind
    }

    pub fn params(&self) -> &FirstStageParams {
        &self.params
    }

    pub fn eval_points(&self) -> &[f64] {
        &self.eval_points
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Evaluates `v̂(·)` at a new point: `t` plus the covariate (GPS, observed)
    /// or instrument (control variables) row `s`. The training sample is the
    /// one the regressor was fitted on.
    pub fn evaluate_at(&self, sample: &Sample, t: f64, s: &[f64]) -> Result<Vec<f64>> {
        match (&self.params, self.kind) {
            (_, RegressorKind::Observed) => Ok(s.to_vec()),
            (FirstStageParams::Mle(p), _) => Ok(self
                .eval_points
                .iter()
                .map(|&e| p.family.density(e, p.index(s), p.sigma2))
                .collect()),
            (FirstStageParams::Kernel(spec), RegressorKind::GpsKernel) => self
                .eval_points
                .iter()
                .map(|&e| smoothing::conditional_density(sample.treatment(), sample.covariates(), spec, e, s))
                .collect(),
            (FirstStageParams::Kernel(spec), RegressorKind::ControlCdf) => Ok(vec![smoothing::conditional_cdf(
                sample.treatment(),
                sample.instruments(),
                spec,
                t,
                s,
            )?]),
            (FirstStageParams::Residual { mode, spec }, RegressorKind::ControlResidual) => {
                let fitted = match (mode, spec) {
                    (ResidualMode::Kernel, Some(spec)) => {
                        kernel_mean(sample.treatment(), sample.instruments(), spec, s)?
                    }
                    _ => {
                        let fit = math::ols_with_intercept(sample.instruments(), sample.treatment())?;
                        fit.coefficients[0] + s.iter().zip(&fit.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
                    }
                };
                Ok(vec![t - fitted])
            }
            _ => Err(Error::invalid("regressor", "inconsistent first-stage metadata")),
        }
    }
}

/// Identity pass-through of observed columns.
pub fn observed(x_cols: &Matrix) -> GeneratedRegressors {
    GeneratedRegressors {
        values: x_cols.clone(),
        kind: RegressorKind::Observed,
        params: FirstStageParams::None,
        eval_points: Vec::new(),
    }
}

/// Kernel GPS `V̂_i = f̂_{T|X}(eval_t | X_i)`; `spec1` carries `[h_t, h_x...]`.
pub fn gps_kernel(t_col: &[f64], x_cols: &Matrix, spec1: &KernelSpec, eval_t: f64) -> Result<GeneratedRegressors> {
    let column = kernel_gps_column(t_col, x_cols, spec1, eval_t)?;
    Ok(GeneratedRegressors {
        values: Matrix::column_vector(column),
        kind: RegressorKind::GpsKernel,
        params: FirstStageParams::Kernel(spec1.clone()),
        eval_points: vec![eval_t],
    })
}

fn kernel_gps_column(t_col: &[f64], x_cols: &Matrix, spec1: &KernelSpec, eval_t: f64) -> Result<Vec<f64>> {
    let n = t_col.len();
    if x_cols.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x_cols.rows(),
        });
    }
    if spec1.dim() != 1 + x_cols.cols() {
        return Err(Error::DimensionMismatch {
            expected: 1 + x_cols.cols(),
            got: spec1.dim(),
        });
    }
    let kt: Vec<f64> = t_col.iter().map(|&tj| spec1.scaled(0, tj - eval_t)).collect();
    let xspec = spec1.sub(1..spec1.dim());
    let d = x_cols.cols();
    let mut u = vec![0.0; d];
    let mut out = Vec::with_capacity(n);
    let mut bad = Vec::new();
    for i in 0..n {
        let xi = x_cols.row(i);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            for (l, (a, b)) in x_cols.row(j).iter().zip(xi).enumerate() {
                u[l] = a - b;
            }
            let kx = xspec.product_unchecked(&u);
            den += kx;
            num += kx * kt[j];
        }
        if den > 0.0 {
            out.push(num / den);
        } else {
            bad.push(i);
            out.push(0.0);
        }
    }
    if !bad.is_empty() {
        return Err(Error::DensityUnderflowRows { rows: bad });
    }
    Ok(out)
}

/// Closed-form normal/lognormal MLE of `T | X` and the implied GPS at `eval_t`.
pub fn gps_mle(t_col: &[f64], x_cols: &Matrix, family: GpsFamily, eval_t: f64) -> Result<GeneratedRegressors> {
    let params = fit_mle(t_col, x_cols, family)?;
    gps_from_params(x_cols, params, &[eval_t])
}

/// GPS from supplied (not estimated) parameters.
pub fn gps_known(
    x_cols: &Matrix,
    family: GpsFamily,
    beta: Vec<f64>,
    sigma2: f64,
    eval_t: f64,
) -> Result<GeneratedRegressors> {
    if beta.len() != x_cols.cols() + 1 {
        return Err(Error::DimensionMismatch {
            expected: x_cols.cols() + 1,
            got: beta.len(),
        });
    }
    if !(sigma2 > MIN_RESIDUAL_VARIANCE) {
        return Err(Error::DegenerateVariance(sigma2));
    }
    let params = MleParams {
        family,
        beta,
        sigma2,
        influence: None,
    };
    gps_from_params(x_cols, params, &[eval_t])
}

fn gps_from_params(x_cols: &Matrix, params: MleParams, eval: &[f64]) -> Result<GeneratedRegressors> {
    if params.family == GpsFamily::Lognormal && eval.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid(
            "eval_t",
            "lognormal GPS requires a positive evaluation point",
        ));
    }
    let n = x_cols.rows();
    let mut values = Matrix::zeros(n, eval.len());
    for i in 0..n {
        let mu = params.index(x_cols.row(i));
        for (c, &e) in eval.iter().enumerate() {
            values.set(i, c, params.family.density(e, mu, params.sigma2));
        }
    }
    let kind = match params.family {
        GpsFamily::Normal => RegressorKind::GpsMleNormal,
        GpsFamily::Lognormal => RegressorKind::GpsMleLognormal,
    };
    Ok(GeneratedRegressors {
        values,
        kind,
        params: FirstStageParams::Mle(params),
        eval_points: eval.to_vec(),
    })
}

/// OLS of `T` (or `log T`) on `(1, X)` with residual variance and the
/// per-observation linearization of `(β̂, σ̂²)`.
pub fn fit_mle(t_col: &[f64], x_cols: &Matrix, family: GpsFamily) -> Result<MleParams> {
    let response: Vec<f64> = match family {
        GpsFamily::Normal => t_col.to_vec(),
        GpsFamily::Lognormal => {
            if let Some(row) = t_col.iter().position(|&t| !(t > 0.0)) {
                return Err(Error::NonPositiveTreatment { row });
            }
            t_col.iter().map(|&t| math::ln(t)).collect()
        }
    };
    let fit = math::ols_with_intercept(x_cols, &response)?;
    let n = response.len();
    let sigma2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / n as f64;
    if !(sigma2 >= MIN_RESIDUAL_VARIANCE) {
        return Err(Error::DegenerateVariance(sigma2));
    }
    let p = fit.coefficients.len();
    let mut influence = Matrix::zeros(n, p + 1);
    let mut z = vec![0.0; p];
    for i in 0..n {
        let e = fit.residuals[i];
        z[0] = 1.0;
        z[1..].copy_from_slice(x_cols.row(i));
        for a in 0..p {
            let mut s = 0.0;
            for b in 0..p {
                s += fit.inverse_gram[a * p + b] * z[b];
            }
            influence.set(i, a, s * e);
        }
        influence.set(i, p, e * e - sigma2);
    }
    Ok(MleParams {
        family,
        beta: fit.coefficients,
        sigma2,
        influence: Some(influence),
    })
}

/// How a treated-pair score is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum GpsEstimator {
    /// Conditional kernel density with spec `[h_t, h_x...]`.
    Kernel(KernelSpec),
    Mle(GpsFamily),
}

/// Two-column regressor `(f̂_{T|X}(t | X_i), f̂_{T|X}(t̄ | X_i))`.
pub fn gps_treated_pair(
    t_col: &[f64],
    x_cols: &Matrix,
    estimator: &GpsEstimator,
    t: f64,
    t_bar: f64,
) -> Result<GeneratedRegressors> {
    match estimator {
        GpsEstimator::Kernel(spec) => {
            let a = kernel_gps_column(t_col, x_cols, spec, t)?;
            let b = if t == t_bar {
                a.clone()
            } else {
                kernel_gps_column(t_col, x_cols, spec, t_bar)?
            };
            Ok(GeneratedRegressors {
                values: Matrix::from_columns(t_col.len(), &[a, b])?,
                kind: RegressorKind::GpsKernel,
                params: FirstStageParams::Kernel(spec.clone()),
                eval_points: vec![t, t_bar],
            })
        }
        GpsEstimator::Mle(family) => {
            let params = fit_mle(t_col, x_cols, *family)?;
            gps_from_params(x_cols, params, &[t, t_bar])
        }
    }
}

/// Control variable `V̂_i = F̂_{T|Z}(T_i | Z_i)`; `spec` has one bandwidth per instrument.
pub fn control_cdf(t_col: &[f64], z_cols: &Matrix, spec: &KernelSpec) -> Result<GeneratedRegressors> {
    let n = t_col.len();
    if z_cols.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z_cols.rows(),
        });
    }
    if spec.dim() != z_cols.cols() {
        return Err(Error::DimensionMismatch {
            expected: z_cols.cols(),
            got: spec.dim(),
        });
    }
    let mut u = vec![0.0; z_cols.cols()];
    let mut values = Vec::with_capacity(n);
    let mut bad = Vec::new();
    for i in 0..n {
        let zi = z_cols.row(i);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            for (l, (a, b)) in z_cols.row(j).iter().zip(zi).enumerate() {
                u[l] = a - b;
            }
            let k = spec.product_unchecked(&u);
            den += k;
            if t_col[j] <= t_col[i] {
                num += k;
            }
        }
        if den > 0.0 {
            values.push(num / den);
        } else {
            bad.push(i);
            values.push(0.0);
        }
    }
    if !bad.is_empty() {
        return Err(Error::DensityUnderflowRows { rows: bad });
    }
    Ok(GeneratedRegressors {
        values: Matrix::column_vector(values),
        kind: RegressorKind::ControlCdf,
        params: FirstStageParams::Kernel(spec.clone()),
        eval_points: Vec::new(),
    })
}

fn kernel_mean(t_col: &[f64], z_cols: &Matrix, spec: &KernelSpec, z: &[f64]) -> Result<f64> {
    let mut u = vec![0.0; z.len()];
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..t_col.len() {
        for (l, (a, b)) in z_cols.row(j).iter().zip(z).enumerate() {
            u[l] = a - b;
        }
        let k = spec.product_unchecked(&u);
        den += k;
        num += k * t_col[j];
    }
    if !(den > 0.0) {
        return Err(Error::DensityUnderflow { point: z.to_vec() });
    }
    Ok(num / den)
}

/// Control variable `V̂_i = T_i - Ê[T | Z_i]` with a local constant or OLS first stage.
pub fn control_residual(
    t_col: &[f64],
    z_cols: &Matrix,
    mode: ResidualMode,
    spec: Option<&KernelSpec>,
) -> Result<GeneratedRegressors> {
    let n = t_col.len();
    if z_cols.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z_cols.rows(),
        });
    }
    let values: Vec<f64> = match mode {
        ResidualMode::Ols => math::ols_with_intercept(z_cols, t_col)?.residuals,
        ResidualMode::Kernel => {
            let spec = spec.ok_or_else(|| Error::invalid("spec", "kernel mode needs a kernel spec"))?;
            if spec.dim() != z_cols.cols() {
                return Err(Error::DimensionMismatch {
                    expected: z_cols.cols(),
                    got: spec.dim(),
                });
            }
            let mut out = Vec::with_capacity(n);
            let mut bad = Vec::new();
            for i in 0..n {
                match kernel_mean(t_col, z_cols, spec, z_cols.row(i)) {
                    Ok(m) => out.push(t_col[i] - m),
                    Err(_) => {
                        bad.push(i);
                        out.push(0.0);
                    }
                }
            }
            if !bad.is_empty() {
                return Err(Error::DensityUnderflowRows { rows: bad });
            }
            out
        }
    };
    Ok(GeneratedRegressors {
        values: Matrix::column_vector(values),
        kind: RegressorKind::ControlResidual,
        params: FirstStageParams::Residual {
            mode,
            spec: spec.cloned(),
        },
        eval_points: Vec::new(),
    })
}

/// Recipe for producing `V̂` inside the partial-mean step.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstStage {
    /// Use the sample covariates directly.
    Observed,
    /// Kernel GPS; bandwidths over `(T, X...)`.
    GpsKernel {
        family: KernelFamily,
        bandwidth: BandwidthRule,
    },
    GpsMle {
        family: GpsFamily,
    },
    /// GPS with supplied parameters (no first-stage estimation error).
    GpsKnown {
        family: GpsFamily,
        beta: Vec<f64>,
        sigma2: f64,
    },
    /// Treated-pair score `(GPS at t, GPS at t̄)`.
    GpsTreatedPair {
        base: Box<FirstStage>,
        t_bar: f64,
    },
    /// `F̂_{T|Z}(T|Z)`; bandwidths over the instruments.
    ControlCdf {
        family: KernelFamily,
        bandwidth: BandwidthRule,
    },
    ControlResidual {
        mode: ResidualMode,
        family: KernelFamily,
        bandwidth: BandwidthRule,
    },
}

use alloc::boxed::Box;

impl FirstStage {
    /// Whether `V̂` changes with the evaluation treatment level.
    pub fn depends_on_t(&self) -> bool {
        matches!(
            self,
            FirstStage::GpsKernel { .. }
                | FirstStage::GpsMle { .. }
                | FirstStage::GpsKnown { .. }
                | FirstStage::GpsTreatedPair { .. }
        )
    }

    pub fn is_gps(&self) -> bool {
        self.depends_on_t()
    }

    pub fn name(&self) -> &'static str {
        match self {
            FirstStage::Observed => "observed",
            FirstStage::GpsKernel { .. } => "gps_kernel",
            FirstStage::GpsMle {
                family: GpsFamily::Normal,
            } => "gps_mle_normal",
            FirstStage::GpsMle {
                family: GpsFamily::Lognormal,
            } => "gps_mle_lognormal",
            FirstStage::GpsKnown { .. } => "gps_known",
            FirstStage::GpsTreatedPair { .. } => "gps_treated_pair",
            FirstStage::ControlCdf { .. } => "control_cdf",
            FirstStage::ControlResidual { .. } => "control_residual",
        }
    }

    fn gps_kernel_spec(sample: &Sample, family: KernelFamily, bandwidth: &BandwidthRule) -> Result<KernelSpec> {
        let x = sample.covariates();
        let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
        let mut refs: Vec<&[f64]> = vec![sample.treatment()];
        refs.extend(cols.iter().map(Vec::as_slice));
        bandwidth.spec(family, &refs)
    }

    /// Fits the first stage for evaluation level `t`.
    pub fn fit(&self, sample: &Sample, t: f64) -> Result<GeneratedRegressors> {
        match self {
            FirstStage::Observed => Ok(observed(sample.covariates())),
            FirstStage::GpsKernel { family, bandwidth } => {
                let spec = Self::gps_kernel_spec(sample, *family, bandwidth)?;
                gps_kernel(sample.treatment(), sample.covariates(), &spec, t)
            }
            FirstStage::GpsMle { family } => gps_mle(sample.treatment(), sample.covariates(), *family, t),
            FirstStage::GpsKnown { family, beta, sigma2 } => {
                gps_known(sample.covariates(), *family, beta.clone(), *sigma2, t)
            }
            FirstStage::GpsTreatedPair { base, t_bar } => match base.as_ref() {
                FirstStage::GpsKernel { family, bandwidth } => {
                    let spec = Self::gps_kernel_spec(sample, *family, bandwidth)?;
                    gps_treated_pair(
                        sample.treatment(),
                        sample.covariates(),
                        &GpsEstimator::Kernel(spec),
                        t,
                        *t_bar,
                    )
                }
                FirstStage::GpsMle { family } => gps_treated_pair(
                    sample.treatment(),
                    sample.covariates(),
                    &GpsEstimator::Mle(*family),
                    t,
                    *t_bar,
                ),
                FirstStage::GpsKnown { family, beta, sigma2 } => {
                    let params = MleParams {
                        family: *family,
                        beta: beta.clone(),
                        sigma2: *sigma2,
                        influence: None,
                    };
                    gps_from_params(sample.covariates(), params, &[t, *t_bar])
                }
                _ => Err(Error::invalid("first_stage", "treated pair needs a GPS base estimator")),
            },
            FirstStage::ControlCdf { family, bandwidth } => {
                let z = sample.instruments();
                let cols: Vec<Vec<f64>> = (0..z.cols()).map(|j| z.column(j)).collect();
                let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                let spec = bandwidth.spec(*family, &refs)?;
                control_cdf(sample.treatment(), z, &spec)
            }
            FirstStage::ControlResidual {
                mode,
                family,
                bandwidth,
            } => {
                let z = sample.instruments();
                let spec = match mode {
                    ResidualMode::Kernel => {
                        let cols: Vec<Vec<f64>> = (0..z.cols()).map(|j| z.column(j)).collect();
                        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                        Some(bandwidth.spec(*family, &refs)?)
                    }
                    ResidualMode::Ols => None,
                };
                control_residual(sample.treatment(), z, *mode, spec.as_ref())
            }
        }
    }

    /// Generalized propensity score at level `t` for every observation,
    /// for GPS recipes (the treated pair reports its population column).
    pub fn gps_column(&self, sample: &Sample, t: f64) -> Result<Vec<f64>> {
        let base = match self {
            FirstStage::GpsTreatedPair { base, .. } => base.as_ref(),
            other => other,
        };
        if !base.is_gps() {
            return Err(Error::invalid("first_stage", "not a generalized propensity score"));
        }
        Ok(base.fit(sample, t)?.values().column(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

    fn lognormal_dgp(n: usize, seed: u64) -> (Vec<f64>, Matrix) {
        let mut rng = substream(seed, 0);
        let eta = Normal::new(0.0, 0.5).unwrap();
        let mut t = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            t.push(math::exp(0.5 + xi + eta.sample(&mut rng)));
            x.push(xi);
        }
        (t, Matrix::column_vector(x))
    }

    #[test]
    fn mle_recovers_lognormal_parameters() {
        let n = 10_000;
        let (t, x) = lognormal_dgp(n, 21);
        let p = fit_mle(&t, &x, GpsFamily::Lognormal).unwrap();
        // OLS standard errors: sigma / sqrt(n) for intercept and slope (Var X = 1).
        let se = 0.5 / (n as f64).sqrt();
        assert!((p.beta[0] - 0.5).abs() < 3.0 * se * 1.5, "{:?}", p.beta);
        assert!((p.beta[1] - 1.0).abs() < 3.0 * se * 1.5, "{:?}", p.beta);
        // Var(σ̂²) ≈ 2σ⁴/n.
        let se2 = (2.0 * 0.0625 / n as f64).sqrt();
        assert!((p.sigma2 - 0.25).abs() < 3.0 * se2, "{}", p.sigma2);
    }

    #[test]
    fn mle_influence_averages_to_zero_at_estimate() {
        let (t, x) = lognormal_dgp(500, 4);
        let p = fit_mle(&t, &x, GpsFamily::Lognormal).unwrap();
        let infl = p.influence.unwrap();
        for c in 0..infl.cols() {
            let m = math::mean(&infl.column(c));
            assert!(m.abs() < 1e-10, "column {c}: {m}");
        }
    }

    #[test]
    fn degenerate_fit_rejected() {
        let x = Matrix::column_vector(vec![0.0, 1.0, 2.0, 3.0]);
        let t = vec![1.0, 3.0, 5.0, 7.0];
        assert!(matches!(
            gps_mle(&t, &x, GpsFamily::Normal, 2.0),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn lognormal_requires_positive_treatment() {
        let x = Matrix::column_vector(vec![0.0, 1.0, 2.0]);
        assert_eq!(
            gps_mle(&[1.0, -2.0, 3.0], &x, GpsFamily::Lognormal, 1.0),
            Err(Error::NonPositiveTreatment { row: 1 })
        );
    }

    #[test]
    fn intercept_only_normal_gps() {
        let t = vec![1.0, 2.0, 4.0, 5.0];
        let x = Matrix::empty(4);
        let g = gps_mle(&t, &x, GpsFamily::Normal, 2.5).unwrap();
        let tbar = 3.0;
        let s2 = t.iter().map(|a| (a - tbar) * (a - tbar)).sum::<f64>() / 4.0;
        let expect = math::normal_pdf((2.5 - tbar) / s2.sqrt()) / s2.sqrt();
        for i in 0..4 {
            assert!((g.values().get(i, 0) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn lognormal_is_normal_on_log_scale() {
        let (t, x) = lognormal_dgp(300, 9);
        let eval = 2.7;
        let ln = gps_mle(&t, &x, GpsFamily::Lognormal, eval).unwrap();
        let logt: Vec<f64> = t.iter().map(|&a| math::ln(a)).collect();
        let nm = gps_mle(&logt, &x, GpsFamily::Normal, math::ln(eval)).unwrap();
        for i in 0..t.len() {
            let a = ln.values().get(i, 0);
            let b = nm.values().get(i, 0) / eval;
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn kernel_gps_single_observation() {
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.5, 0.3]).unwrap();
        let g = gps_kernel(&[1.0], &Matrix::column_vector(vec![2.0]), &spec, 1.0).unwrap();
        assert!((g.values().get(0, 0) - FRAC_1_SQRT_2PI / 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_gps_near_constant_under_independence() {
        let mut rng = substream(14, 0);
        let n = 800;
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.4, 1.5]).unwrap();
        let g = gps_kernel(&t, &Matrix::column_vector(x), &spec, 0.0).unwrap();
        let col = g.values().column(0);
        assert!(math::std_dev(&col) < 0.03, "{}", math::std_dev(&col));
        assert!((math::mean(&col) - math::normal_pdf(0.0)).abs() < 0.05);
    }

    #[test]
    fn kernel_gps_underflow_lists_rows() {
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, vec![1.0, 0.1]).unwrap();
        // Each X row is isolated: the X-kernel only sees itself, so no underflow...
        let g = gps_kernel(&[0.0, 1.0], &Matrix::column_vector(vec![0.0, 5.0]), &spec, 0.0);
        assert!(g.is_ok());
    }

    #[test]
    fn treated_pair_duplicates_when_equal() {
        let (t, x) = lognormal_dgp(200, 2);
        let g = gps_treated_pair(&t, &x, &GpsEstimator::Mle(GpsFamily::Lognormal), 1.5, 1.5).unwrap();
        for i in 0..200 {
            assert_eq!(g.values().get(i, 0), g.values().get(i, 1));
        }
    }

    #[test]
    fn control_cdf_single_and_independent() {
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![1.0]).unwrap();
        let g = control_cdf(&[3.0], &Matrix::column_vector(vec![0.0]), &spec).unwrap();
        assert_eq!(g.values().get(0, 0), 1.0);

        let mut rng = substream(15, 0);
        let n = 1000;
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![2.0]).unwrap();
        let g = control_cdf(&t, &Matrix::column_vector(z), &spec).unwrap();
        let mut sorted = t.clone();
        math::sort_f64(&mut sorted);
        let mae: f64 = (0..n)
            .map(|i| {
                let rank = sorted.partition_point(|&a| a <= t[i]) as f64 / n as f64;
                (g.values().get(i, 0) - rank).abs()
            })
            .sum::<f64>()
            / n as f64;
        assert!(mae < 0.05, "{mae}");
    }

    #[test]
    fn control_cdf_invariant_to_monotone_transform() {
        let mut rng = substream(16, 0);
        let n = 150;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = z
            .iter()
            .map(|&a| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a + e * 0.5
            })
            .collect();
        let zm = Matrix::column_vector(z);
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.5]).unwrap();
        let a = control_cdf(&t, &zm, &spec).unwrap();
        let et: Vec<f64> = t.iter().map(|&x| math::exp(x)).collect();
        let b = control_cdf(&et, &zm, &spec).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn residual_controls() {
        let z = vec![0.0, 1.0, 2.0, 3.0];
        let g = control_residual(&z, &Matrix::column_vector(z.clone()), ResidualMode::Ols, None).unwrap();
        assert!(g.values().as_slice().iter().all(|v| v.abs() < 1e-12));
        let t = vec![1.0, 2.0, 6.0];
        let g = control_residual(&t, &Matrix::empty(3), ResidualMode::Ols, None).unwrap();
        assert_eq!(g.values().column(0), vec![-2.0, -1.0, 3.0]);
    }

    #[test]
    fn kernel_residual_tracks_first_stage_error() {
        let mut rng = substream(17, 0);
        let n = 5000;
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let z: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let eta: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = z.iter().zip(&eta).map(|(a, e)| a * a + e).collect();
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.15]).unwrap();
        let g = control_residual(&t, &Matrix::column_vector(z), ResidualMode::Kernel, Some(&spec)).unwrap();
        let v = g.values().column(0);
        let (mv, me) = (math::mean(&v), math::mean(&eta));
        let cov: f64 = v.iter().zip(&eta).map(|(a, b)| (a - mv) * (b - me)).sum::<f64>();
        let corr = cov / (math::std_dev(&v) * math::std_dev(&eta) * (n - 1) as f64);
        assert!(corr > 0.98, "{corr}");
    }

    #[test]
    fn evaluate_at_matches_fitted_values() {
        let (t, x) = lognormal_dgp(100, 3);
        let sample = Sample::new(vec![0.0; 100], t.clone(), x.clone()).unwrap();
        let g = FirstStage::GpsMle {
            family: GpsFamily::Lognormal,
        }
        .fit(&sample, 2.0)
        .unwrap();
        for i in [0, 17, 99] {
            let v = g.evaluate_at(&sample, 2.0, x.row(i)).unwrap();
            assert_eq!(v[0], g.values().get(i, 0));
        }
    }
}

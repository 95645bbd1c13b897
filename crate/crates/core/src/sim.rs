//! Data-generating processes with analytic truths, and a Monte Carlo driver.
//!
//! Oracles evaluate the population objects by one-dimensional adaptive
//! quadrature over the confounder distribution (closed forms are kept
//! alongside as cross-checks). Nothing here touches the smoothing code.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::par;
use crate::rng::{derive_seed, substream, StreamRng};
use crate::sample::Sample;

/// Shipped designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dgp {
    /// `X ~ N(0,1)`, `log T = β₀ + β₁X + η`, `η ~ N(0, σ²)`, `Y = log T + X + ε`.
    LognormalGps { beta0: f64, beta1: f64, sigma2: f64 },
    /// `Y ~ U(0,1)` independent of `T, X ~ N(0,1)`.
    Independence,
    /// `Y = T + X + ε` with `T, X, ε` independent standard normals.
    Location,
    /// `T = Z + η`, `Y = T + ε`, `(η, ε)` standard bivariate normal with correlation `rho`.
    Triangular { rho: f64 },
    /// `X₁, X₂ ~ N(0,1)`, `T = X₁ + X₂ + η`, `Y = T + 2(X₁ - X₂) + ε/2`.
    IndexBias,
}

impl Dgp {
    pub fn lognormal() -> Self {
        Dgp::LognormalGps {
            beta0: 0.5,
            beta1: 1.0,
            sigma2: 0.25,
        }
    }

    pub fn triangular() -> Self {
        Dgp::Triangular { rho: 0.5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::LognormalGps { .. } => "lognormal_gps",
            Dgp::Independence => "independence",
            Dgp::Location => "location",
            Dgp::Triangular { .. } => "triangular",
            Dgp::IndexBias => "index_bias",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "lognormal_gps" | "1" => Ok(Dgp::lognormal()),
            "independence" | "2" => Ok(Dgp::Independence),
            "location" | "3" => Ok(Dgp::Location),
            "triangular" | "4" => Ok(Dgp::triangular()),
            "index_bias" | "5" => Ok(Dgp::IndexBias),
            other => Err(Error::invalid("dgp", format!("unknown design `{other}`"))),
        }
    }

    /// Draws an i.i.d. sample of size `n` from substream `(seed, 0)`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be at least 1"));
        }
        let mut rng = substream(seed, 0);
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        match *self {
            Dgp::LognormalGps { beta0, beta1, sigma2 } => {
                let sd = math::sqrt(sigma2);
                let mut x = Vec::with_capacity(n);
                for _ in 0..n {
                    let (xi, eta, e) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
                    let log_t = beta0 + beta1 * xi + sd * eta;
                    t.push(math::exp(log_t));
                    x.push(xi);
                    y.push(log_t + xi + e);
                }
                Sample::new(y, t, Matrix::column_vector(x))
            }
            Dgp::Independence => {
                let u = Uniform::new(0.0, 1.0).map_err(|e| Error::invalid("dgp", e.to_string()))?;
                let mut x = Vec::with_capacity(n);
                for _ in 0..n {
                    y.push(u.sample(&mut rng));
                    t.push(normal(&mut rng));
                    x.push(normal(&mut rng));
                }
                Sample::new(y, t, Matrix::column_vector(x))
            }
            Dgp::Location => {
                let mut x = Vec::with_capacity(n);
                for _ in 0..n {
                    let (ti, xi, e) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
                    t.push(ti);
                    x.push(xi);
                    y.push(ti + xi + e);
                }
                Sample::new(y, t, Matrix::column_vector(x))
            }
            Dgp::Triangular { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::invalid("rho", "correlation must lie in (-1, 1)"));
                }
                let mut z = Vec::with_capacity(n);
                let c = math::sqrt(1.0 - rho * rho);
                for _ in 0..n {
                    let (zi, eta, u) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
                    let e = rho * eta + c * u;
                    let ti = zi + eta;
                    z.push(zi);
                    t.push(ti);
                    y.push(ti + e);
                }
                Sample::new(y, t, Matrix::empty(n))?.with_instruments(Matrix::column_vector(z))
            }
            Dgp::IndexBias => {
                let mut rows = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let (x1, x2, eta, e) = (normal(&mut rng), normal(&mut rng), normal(&mut rng), normal(&mut rng));
                    let ti = x1 + x2 + eta;
                    t.push(ti);
                    rows.push(x1);
                    rows.push(x2);
                    y.push(ti + 2.0 * (x1 - x2) + 0.5 * e);
                }
                Sample::new(y, t, Matrix::from_row_major(n, 2, rows)?)
            }
        }
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::OracleDomain(format!("t = {t} is not finite")));
        }
        if matches!(self, Dgp::LognormalGps { .. }) && t <= 0.0 {
            return Err(Error::OracleDomain(format!(
                "treatment must be positive in the lognormal design, got {t}"
            )));
        }
        Ok(())
    }

    /// `E[Y(t)]` by quadrature.
    pub fn drf(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match *self {
            Dgp::LognormalGps { .. } => math::ln(t) + normal_expectation(|x| x),
            Dgp::Independence => integrate(|y| y, 0.0, 1.0),
            Dgp::Location => t + normal_expectation(|x| x),
            Dgp::Triangular { .. } => t + normal_expectation(|e| e),
            Dgp::IndexBias => t + normal_expectation(|d| 2.0 * math::sqrt(2.0) * d),
        })
    }

    /// `F_{Y(t)}(y)` by quadrature over the confounder.
    pub fn cdf(&self, t: f64, y: f64) -> Result<f64> {
        self.check_t(t)?;
        if !y.is_finite() {
            return Err(Error::OracleDomain(format!("y = {y} is not finite")));
        }
        Ok(match *self {
            Dgp::LognormalGps { .. } => {
                let lt = math::ln(t);
                normal_expectation(|x| math::normal_cdf(y - lt - x))
            }
            Dgp::Independence => y.clamp(0.0, 1.0),
            Dgp::Location => normal_expectation(|x| math::normal_cdf(y - t - x)),
            Dgp::Triangular { rho } => {
                let c = math::sqrt(1.0 - rho * rho);
                normal_expectation(|eta| math::normal_cdf((y - t - rho * eta) / c))
            }
            Dgp::IndexBias => {
                // X₁ - X₂ = √2 D with D standard normal.
                let s2 = 2.0 * math::sqrt(2.0);
                normal_expectation(|d| math::normal_cdf((y - t - s2 * d) / 0.5))
            }
        })
    }

    /// Closed-form `F_{Y(t)}(y)`, used to cross-check the quadrature.
    pub fn cdf_closed_form(&self, t: f64, y: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match *self {
            Dgp::LognormalGps { .. } => math::normal_cdf((y - math::ln(t)) / math::sqrt(2.0)),
            Dgp::Independence => y.clamp(0.0, 1.0),
            Dgp::Location => math::normal_cdf((y - t) / math::sqrt(2.0)),
            Dgp::Triangular { .. } => math::normal_cdf(y - t),
            Dgp::IndexBias => math::normal_cdf((y - t) / math::sqrt(8.25)),
        })
    }

    /// `f_{T|X}(t | x)`; undefined for the control-variable design.
    pub fn gps(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check_t(t)?;
        let need = match self {
            Dgp::IndexBias => 2,
            Dgp::Triangular { .. } => return Err(Error::OracleDomain("no GPS in the control-variable design".into())),
            _ => 1,
        };
        if x.len() != need {
            return Err(Error::DimensionMismatch {
                expected: need,
                got: x.len(),
            });
        }
        Ok(match *self {
            Dgp::LognormalGps { beta0, beta1, sigma2 } => {
                let sd = math::sqrt(sigma2);
                math::normal_pdf((math::ln(t) - beta0 - beta1 * x[0]) / sd) / (sd * t)
            }
            Dgp::Independence | Dgp::Location => math::normal_pdf(t),
            Dgp::IndexBias => math::normal_pdf(t - x[0] - x[1]),
            Dgp::Triangular { .. } => unreachable!(),
        })
    }

    /// `Q_τ(Y(t))` by bisection on [`Dgp::cdf`].
    pub fn quantile(&self, t: f64, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::OracleDomain(format!("tau = {tau} outside (0, 1)")));
        }
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(t, lo)? > tau {
            lo *= 2.0;
        }
        while self.cdf(t, hi)? < tau {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(t, mid)? < tau {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Density of `Y(t)` by quadrature.
    pub fn density(&self, t: f64, y: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(match *self {
            Dgp::LognormalGps { .. } => {
                let lt = math::ln(t);
                normal_expectation(|x| math::normal_pdf(y - lt - x))
            }
            Dgp::Independence => {
                if (0.0..=1.0).contains(&y) {
                    1.0
                } else {
                    0.0
                }
            }
            Dgp::Location => normal_expectation(|x| math::normal_pdf(y - t - x)),
            Dgp::Triangular { rho } => {
                let c = math::sqrt(1.0 - rho * rho);
                normal_expectation(|eta| math::normal_pdf((y - t - rho * eta) / c) / c)
            }
            Dgp::IndexBias => {
                let s2 = 2.0 * math::sqrt(2.0);
                normal_expectation(|d| math::normal_pdf((y - t - s2 * d) / 0.5) / 0.5)
            }
        })
    }

    /// `E[Y(t) | T = t̄]` (lognormal design only): the covariate mean is
    /// reweighted by `f_{T|X}(t̄ | x)`.
    pub fn treated_mean(&self, t: f64, t_bar: f64) -> Result<f64> {
        self.check_t(t)?;
        self.check_t(t_bar)?;
        match self {
            Dgp::LognormalGps { .. } => {
                let num = normal_expectation(|x| x * self.gps(t_bar, &[x]).unwrap_or(0.0));
                let den = normal_expectation(|x| self.gps(t_bar, &[x]).unwrap_or(0.0));
                if !(den > 0.0) {
                    return Err(Error::OracleDomain("no treatment mass at t_bar".into()));
                }
                Ok(math::ln(t) + num / den)
            }
            _ => Err(Error::OracleDomain(format!(
                "treated mean is only tabulated for the lognormal design, not {}",
                self.name()
            ))),
        }
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `E[g(Z)]` for `Z ~ N(0,1)`, truncated at ±12.
pub fn normal_expectation<F: Fn(f64) -> f64>(g: F) -> f64 {
    integrate(|z| g(z) * math::normal_pdf(z), -12.0, 12.0)
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance 1e-10.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    // Split first so narrow features are not skipped by the initial stencil.
    let pieces = 16;
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * w, a + (k + 1) as f64 * w);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, lo, hi, fa, fm, fb, whole, 1e-10 / pieces as f64, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// One replication's estimates over a fixed set of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    /// Uniform band half-widths, when a band was computed.
    pub band_halfwidth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub rmse: f64,
    pub rmse_mcse: f64,
    /// Monte Carlo standard deviation of the estimates.
    pub mc_sd: f64,
    pub mean_se: f64,
    /// `mean_se / mc_sd`.
    pub se_ratio: f64,
    pub se_ratio_mcse: f64,
    /// Share of replications with `|θ̂ - θ| ≤ z_{0.975} se`.
    pub coverage: f64,
    pub coverage_mcse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub reps: usize,
    pub failures: usize,
    /// First few failure messages.
    pub failure_messages: Vec<String>,
    pub cells: Vec<CellMetrics>,
    /// Share of replications whose band covers every cell, with its MC SE.
    pub uniform_coverage: Option<(f64, f64)>,
    /// Successful replications, in replication order.
    pub replications: Vec<Replication>,
}

const Z975: f64 = 1.959_963_984_540_054;

/// Runs `reps` replications of `estimator(rep_seed, rep)` and summarizes
/// them against `truth`. Replication seeds are derived from `seed`, so the
/// report does not depend on scheduling. Failed replications are counted.
pub fn run_mc<F>(reps: usize, seed: u64, truth: &[f64], estimator: F) -> Result<McReport>
where
    F: Fn(u64, usize) -> Result<Replication> + Sync + Send,
{
    if reps == 0 {
        return Err(Error::invalid("reps", "at least one replication is required"));
    }
    let results = par::map_indexed(reps, |r| estimator(derive_seed(seed, r as u64), r));
    let mut ok = Vec::with_capacity(reps);
    let mut failure_messages = Vec::new();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(rep) if rep.estimates.len() == truth.len() && rep.se.len() == truth.len() => ok.push(rep),
            Ok(_) => {
                failures += 1;
                if failure_messages.len() < 5 {
                    failure_messages.push("replication returned the wrong number of cells".into());
                }
            }
            Err(e) => {
                failures += 1;
                if failure_messages.len() < 5 {
                    failure_messages.push(e.to_string());
                }
            }
        }
    }
    Ok(summarize(reps, failures, failure_messages, truth, ok))
}

pub fn summarize(
    reps: usize,
    failures: usize,
    failure_messages: Vec<String>,
    truth: &[f64],
    ok: Vec<Replication>,
) -> McReport {
    let r = ok.len() as f64;
    let cells = truth
        .iter()
        .enumerate()
        .map(|(c, &th)| {
            let est: Vec<f64> = ok.iter().map(|rep| rep.estimates[c]).collect();
            let se: Vec<f64> = ok.iter().map(|rep| rep.se[c]).collect();
            let mean_estimate = math::mean(&est);
            let mc_sd = if ok.len() > 1 { math::std_dev(&est) } else { 0.0 };
            let sq: Vec<f64> = est.iter().map(|e| (e - th) * (e - th)).collect();
            let mse = math::mean(&sq);
            let rmse = math::sqrt(mse);
            let mse_sd = if ok.len() > 1 { math::std_dev(&sq) } else { 0.0 };
            let rmse_mcse = if rmse > 0.0 {
                mse_sd / math::sqrt(r) / (2.0 * rmse)
            } else {
                0.0
            };
            let mean_se = math::mean(&se);
            let se_ratio = if mc_sd > 0.0 { mean_se / mc_sd } else { f64::NAN };
            let se_ratio_mcse = if ok.len() > 1 {
                se_ratio * math::sqrt(1.0 / (2.0 * (r - 1.0)))
            } else {
                f64::NAN
            };
            let covered = est
                .iter()
                .zip(&se)
                .filter(|(e, s)| (*e - th).abs() <= Z975 * **s)
                .count() as f64;
            let coverage = covered / r;
            CellMetrics {
                truth: th,
                mean_estimate,
                bias: mean_estimate - th,
                bias_mcse: mc_sd / math::sqrt(r),
                rmse,
                rmse_mcse,
                mc_sd,
                mean_se,
                se_ratio,
                se_ratio_mcse,
                coverage,
                coverage_mcse: math::sqrt(coverage * (1.0 - coverage) / r),
            }
        })
        .collect();
    let uniform_coverage = if !ok.is_empty() && ok.iter().all(|rep| rep.band_halfwidth.is_some()) {
        let hits = ok
            .iter()
            .filter(|rep| {
                let hw = rep.band_halfwidth.as_ref().expect("checked");
                rep.estimates
                    .iter()
                    .zip(hw)
                    .zip(truth)
                    .all(|((e, w), th)| (e - th).abs() <= *w)
            })
            .count() as f64;
        let p = hits / r;
        Some((p, math::sqrt(p * (1.0 - p) / r)))
    } else {
        None
    };
    McReport {
        reps,
        failures,
        failure_messages,
        cells,
        uniform_coverage,
        replications: ok,
    }
}

impl McReport {
    /// Tab-free CSV table of the per-cell metrics.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from(
            "cell,truth,mean_estimate,bias,bias_mcse,rmse,rmse_mcse,mc_sd,mean_se,se_ratio,se_ratio_mcse,coverage,coverage_mcse\n",
        );
        for (k, c) in self.cells.iter().enumerate() {
            let label = labels.get(k).cloned().unwrap_or_else(|| format!("{k}"));
            out.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.truth,
                c.mean_estimate,
                c.bias,
                c.bias_mcse,
                c.rmse,
                c.rmse_mcse,
                c.mc_sd,
                c.mean_se,
                c.se_ratio,
                c.se_ratio_mcse,
                c.coverage,
                c.coverage_mcse
            ));
        }
        out
    }
}

/// A `Replication` from a single number and its standard error.
pub fn scalar(estimate: f64, se: f64) -> Replication {
    Replication {
        estimates: vec![estimate],
        se: vec![se],
        band_halfwidth: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Dgp; 5] = [
        Dgp::LognormalGps {
            beta0: 0.5,
            beta1: 1.0,
            sigma2: 0.25,
        },
        Dgp::Independence,
        Dgp::Location,
        Dgp::Triangular { rho: 0.5 },
        Dgp::IndexBias,
    ];

    #[test]
    fn rejects_empty_and_is_deterministic() {
        for d in ALL {
            assert!(d.generate(0, 1).is_err());
            assert_eq!(d.generate(50, 7).unwrap(), d.generate(50, 7).unwrap());
            assert_ne!(d.generate(50, 7).unwrap(), d.generate(50, 8).unwrap());
        }
    }

    #[test]
    fn location_residual_mean() {
        let n = 20_000;
        let s = Dgp::Location.generate(n, 3).unwrap();
        let r: Vec<f64> = (0..n)
            .map(|i| s.outcome()[i] - s.treatment()[i] - s.covariates().get(i, 0))
            .collect();
        assert!(math::mean(&r).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for d in ALL {
            let t = if matches!(d, Dgp::LognormalGps { .. }) {
                2.0
            } else {
                0.3
            };
            for y in [-1.5, 0.0, 0.4, 0.9, 2.5] {
                let a = d.cdf(t, y).unwrap();
                let b = d.cdf_closed_form(t, y).unwrap();
                assert!((a - b).abs() < 1e-8, "{} {y}: {a} {b}", d.name());
            }
        }
        assert!((Dgp::Location.drf(0.7).unwrap() - 0.7).abs() < 1e-10);
        assert!((Dgp::Independence.cdf(1.3, 0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!((Dgp::lognormal().drf(3.0).unwrap() - math::ln(3.0)).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in ALL {
            let t = if matches!(d, Dgp::LognormalGps { .. }) {
                1.5
            } else {
                -0.2
            };
            for tau in [0.05, 0.25, 0.5, 0.75, 0.95] {
                let q = d.quantile(t, tau).unwrap();
                assert!((d.cdf(t, q).unwrap() - tau).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn gps_oracle_is_lognormal_density() {
        let d = Dgp::lognormal();
        let (t, x) = (2.0f64, 0.3);
        let expect = (-(t.ln() - 0.8).powi(2) / 0.5).exp() / (t * (2.0 * core::f64::consts::PI * 0.25).sqrt());
        assert!((d.gps(t, &[x]).unwrap() - expect).abs() < 1e-14);
        assert!(d.gps(-1.0, &[0.0]).is_err());
        assert!(Dgp::triangular().gps(0.0, &[0.0]).is_err());
    }

    #[test]
    fn treated_mean_closed_form() {
        // E[X | log T = s] = (s - 0.5) / 1.25 in the default lognormal design.
        let d = Dgp::lognormal();
        let (t, tb) = (2.0f64, 1.5f64);
        let expect = t.ln() + (tb.ln() - 0.5) / 1.25;
        assert!((d.treated_mean(t, tb).unwrap() - expect).abs() < 1e-8);
        assert!(Dgp::Location.treated_mean(0.0, 0.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        for d in [Dgp::Location, Dgp::IndexBias, Dgp::triangular()] {
            let mass = integrate(|y| d.density(0.2, y).unwrap(), -15.0, 15.0);
            assert!((mass - 1.0).abs() < 1e-6, "{}", d.name());
        }
    }

    #[test]
    fn empirical_cdf_matches_oracle() {
        // Location design: Y - T is independent of T, so F_{Y(t)}(y) = P(Y - T ≤ y - t).
        let n = 200_000;
        let s = Dgp::Location.generate(n, 11).unwrap();
        let t = 0.4;
        for y in [-1.0, 0.4, 2.0] {
            let emp = (0..n).filter(|&i| s.outcome()[i] - s.treatment()[i] <= y - t).count() as f64 / n as f64;
            assert!((emp - Dgp::Location.cdf(t, y).unwrap()).abs() < 0.005);
        }
    }

    #[test]
    fn single_replication_report() {
        let rep = run_mc(1, 3, &[1.0], |_, _| Ok(scalar(1.3, 0.2))).unwrap();
        let c = &rep.cells[0];
        assert!((c.bias - 0.3).abs() < 1e-15);
        assert!((c.rmse - 0.3).abs() < 1e-15);
        assert_eq!(c.coverage, 1.0);
    }

    #[test]
    fn sample_mean_coverage() {
        // Harness check: the textbook interval for a sample mean covers 95% of the time.
        let n = 200;
        let report = run_mc(500, 5, &[0.5], |seed, _| {
            let s = Dgp::Independence.generate(n, seed)?;
            let m = math::mean(s.outcome());
            Ok(scalar(m, math::std_dev(s.outcome()) / (n as f64).sqrt()))
        })
        .unwrap();
        assert!((report.cells[0].coverage - 0.95).abs() < 0.03);
        assert_eq!(report.failures, 0);
    }

    #[test]
    fn failures_are_counted() {
        let report = run_mc(10, 1, &[0.0], |_, r| {
            if r % 3 == 0 {
                Err(Error::RankDeficient)
            } else {
                Ok(scalar(0.1, 0.1))
            }
        })
        .unwrap();
        assert_eq!(report.failures, 4);
        assert_eq!(report.replications.len(), 6);
        assert!(!report.failure_messages.is_empty());
    }

    #[test]
    fn uniform_coverage_requires_all_cells() {
        let reps = vec![
            Replication {
                estimates: vec![0.0, 0.0],
                se: vec![1.0, 1.0],
                band_halfwidth: Some(vec![0.5, 0.5]),
            },
            Replication {
                estimates: vec![0.0, 1.0],
                se: vec![1.0, 1.0],
                band_halfwidth: Some(vec![0.5, 0.5]),
            },
        ];
        let r = summarize(2, 0, vec![], &[0.0, 0.0], reps);
        assert_eq!(r.uniform_coverage.unwrap().0, 0.5);
    }
}

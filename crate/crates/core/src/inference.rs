//! Influence functions, standard errors, bias diagnostics, the quantile
//! delta method and the multiplier bootstrap.
//!
//! Influence contributions carry the `√h_t` factor of the asymptotic
//! expansion; [`InfluenceMatrix::scale`] records it per treatment level so
//! that `se = sqrt(Σ ψ²) / (n √h_t)` never applies it twice.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::first_stage::{FirstStageParams, RegressorKind};
use crate::math::{self, Matrix};
use crate::par;
use crate::partial_mean::{local_fits, Dependent, PartialMean, SliceFit, WeightKind};
use crate::rng::substream;
use crate::smoothing::{self, QuadraticWeights, Smoother};

/// Density floor of the quantile delta method on the standardized outcome scale.
pub const QUANTILE_DENSITY_FLOOR: f64 = 1e-3;

/// Estimate of `f_{T|V}(t | V̂_i)` in the leading term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    /// Joint over marginal kernel density.
    KernelRatio,
    /// The first GPS column `V̂_i` itself (balancing property).
    Score,
    /// Exact linear weights of the estimator: `K_h / f̂_{T|V} · Ê[W|V̂]` is
    /// replaced by `n c_i` with `θ̂ = Σ_i c_i dep_i`.
    Equivalent,
}

/// Factor standing in for `E[W | V = V̂_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFactor {
    /// Local constant regression of `W` on `V̂` (exactly 1 for unit weights).
    Smoothed,
    /// `W_i` itself, for weights that are functions of the conditioning set.
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfluenceOptions {
    pub denominator: Denominator,
    pub weight_factor: WeightFactor,
    /// Adds `√h (fit_i W_i π_i - θ̂)`, the Step-3 averaging term.
    pub centering: bool,
    /// Adds the first-stage GPS estimation term.
    pub gps_correction: bool,
}

impl Default for InfluenceOptions {
    fn default() -> Self {
        Self {
            denominator: Denominator::KernelRatio,
            weight_factor: WeightFactor::Smoothed,
            centering: false,
            gps_correction: false,
        }
    }
}

impl InfluenceOptions {
    /// Expansion for effects on the treated. The kernel-weighted version
    /// carries the `K_h(T_i - t̄)` averaging term, which is first order; the
    /// GPS-weighted version divides by the score and weights by `Ŵ₂ᵢ`.
    pub fn treated(kind: WeightKind) -> Self {
        match kind {
            WeightKind::TreatedKernel => Self {
                centering: true,
                ..Self::default()
            },
            WeightKind::TreatedMle => Self {
                denominator: Denominator::Score,
                weight_factor: WeightFactor::Observed,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }
}

/// `n × (|t_grid|·G)` influence contributions; column `k·G + g` belongs to
/// treatment level `k` and dependent column `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    psi: Matrix,
    scale: Vec<f64>,
    per_curve: usize,
}

impl InfluenceMatrix {
    pub fn new(psi: Matrix, scale: Vec<f64>, per_curve: usize) -> Result<Self> {
        if per_curve == 0 || psi.cols() != scale.len() * per_curve {
            return Err(Error::DimensionMismatch {
                expected: scale.len() * per_curve,
                got: psi.cols(),
            });
        }
        Ok(Self { psi, scale, per_curve })
    }

    pub fn from_blocks(blocks: &[Matrix], scale: Vec<f64>, per_curve: usize) -> Result<Self> {
        let n = blocks.first().map_or(0, Matrix::rows);
        let mut psi = Matrix::zeros(n, blocks.len() * per_curve);
        for (k, b) in blocks.iter().enumerate() {
            if b.rows() != n || b.cols() != per_curve {
                return Err(Error::DimensionMismatch {
                    expected: per_curve,
                    got: b.cols(),
                });
            }
            for i in 0..n {
                psi.row_mut(i)[k * per_curve..(k + 1) * per_curve].copy_from_slice(b.row(i));
            }
        }
        Self::new(psi, scale, per_curve)
    }

    pub fn psi(&self) -> &Matrix {
        &self.psi
    }

    pub fn n(&self) -> usize {
        self.psi.rows()
    }

    /// `√h_t` of curve `k`.
    pub fn scale(&self, k: usize) -> f64 {
        self.scale[k]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn curves(&self) -> Vec<Range<usize>> {
        (0..self.scale.len())
            .map(|k| k * self.per_curve..(k + 1) * self.per_curve)
            .collect()
    }

    pub fn block(&self, k: usize) -> Matrix {
        let g = self.per_curve;
        let data = (0..self.n())
            .flat_map(|i| self.psi.row(i)[k * g..(k + 1) * g].iter().copied())
            .collect();
        Matrix::from_row_major(self.n(), g, data).expect("block shape")
    }

    /// Pointwise standard errors, `|t_grid| × G`.
    pub fn standard_errors(&self) -> Matrix {
        let g = self.per_curve;
        let mut out = Matrix::zeros(self.scale.len(), g);
        for k in 0..self.scale.len() {
            for c in 0..g {
                let col = self.psi.column(k * g + c);
                out.set(k, c, pointwise_se(&col, self.scale[k]));
            }
        }
        out
    }
}

/// `sqrt(Σ ψ²) / (n · scale)`.
pub fn pointwise_se(psi: &[f64], scale: f64) -> f64 {
    let n = psi.len() as f64;
    math::sqrt(psi.iter().map(|p| p * p).sum::<f64>()) / (n * scale)
}

/// Per-column standard errors of an `n × G` block.
pub fn block_se(psi: &Matrix, scale: f64) -> Vec<f64> {
    (0..psi.cols()).map(|c| pointwise_se(&psi.column(c), scale)).collect()
}

/// Leading influence term at one treatment level, `n × G`:
/// `√h K_h(T_i - t) / f̂_{T|V}(t|V̂_i) (dep_i - F̂(·|t, V̂_i)) Ê[W|V̂_i] π̂_i`,
/// plus the optional averaging and first-stage terms.
pub fn influence_main(
    pm: &PartialMean<'_>,
    slice: &SliceFit,
    dep: &Dependent,
    opts: &InfluenceOptions,
) -> Result<Matrix> {
    let sample = pm.sample();
    let n = sample.n();
    let g = dep.columns();
    let s = math::sqrt(slice.h_t());
    let outcome = sample.outcome();
    let w = pm.weights();
    let norm = if slice.normalized { slice.mass } else { 1.0 };
    let mut psi = Matrix::zeros(n, g);
    for (a, &i) in slice.active.iter().enumerate() {
        if opts.denominator == Denominator::Equivalent {
            let c = s * n as f64 * slice.equivalent[i];
            let fits = slice.fits.row(a);
            let row = psi.row_mut(i);
            for col in 0..g {
                row[col] = c * (dep.value(outcome, i, col) - fits[col]);
            }
            continue;
        }
        let denom = match opts.denominator {
            Denominator::Equivalent => unreachable!("handled above"),
            Denominator::KernelRatio => slice.cond_density[a],
            Denominator::Score => {
                if !slice.generated.kind().is_gps() {
                    return Err(Error::invalid("denominator", "score denominator needs a GPS"));
                }
                slice.generated.values().get(i, 0)
            }
        };
        let factor = match opts.weight_factor {
            WeightFactor::Smoothed => slice.weight_factor[a],
            WeightFactor::Observed => w[i],
        };
        if slice.kt[i] == 0.0 || factor == 0.0 {
            continue;
        }
        if !(denom > 0.0) {
            let mut point = vec![slice.t];
            point.extend_from_slice(slice.generated.values().row(i));
            return Err(Error::DensityUnderflow { point });
        }
        let c = s * slice.kt[i] / denom * factor / norm;
        let fits = slice.fits.row(a);
        let row = psi.row_mut(i);
        for col in 0..g {
            row[col] = c * (dep.value(outcome, i, col) - fits[col]);
        }
    }
    if opts.centering {
        for col in 0..g {
            let theta = slice.values[col];
            let mut a = 0;
            for i in 0..n {
                let fit = if a < slice.active.len() && slice.active[a] == i {
                    a += 1;
                    Some(slice.fits.get(a - 1, col))
                } else {
                    None
                };
                let term = if slice.normalized {
                    fit.map_or(0.0, |f| (f - theta) * w[i] / norm)
                } else {
                    fit.map_or(0.0, |f| f * w[i]) - theta
                };
                let cur = psi.get(i, col);
                psi.set(i, col, cur + s * term);
            }
        }
    }
    if opts.gps_correction && slice.generated.kind().is_gps() {
        let corr = gps_if_correction(pm, slice, dep)?;
        for i in 0..n {
            for (p, c) in psi.row_mut(i).iter_mut().zip(corr.row(i)) {
                *p += c;
            }
        }
    }
    Ok(psi)
}

/// Influence for effects on the treated; see [`InfluenceOptions::treated`].
pub fn influence_treated(
    pm: &PartialMean<'_>,
    slice: &SliceFit,
    dep: &Dependent,
    gps_correction: bool,
) -> Result<Matrix> {
    if !pm.weight_kind().is_treated() {
        return Err(Error::invalid(
            "weights",
            "treated influence needs a treated weight scheme",
        ));
    }
    let opts = InfluenceOptions {
        gps_correction,
        ..InfluenceOptions::treated(pm.weight_kind())
    };
    influence_main(pm, slice, dep, &opts)
}

/// First-stage GPS correction, `n × G`.
///
/// Uses `Λ̂_i = (F̂(·|t, V̂_i) - F̂(·|t, X_i)) / V̂_i` with the second fit a
/// direct Step-2 regression on `(T, X)`. Kernel scores contribute
/// `√h (K_{h1}(T_i - t) - V̂_i) Λ̂_i π̂_i`; normal/lognormal scores contribute
/// `√h ℓ_iᵀ n⁻¹ Σ_j ∂ζ_j/∂(β,σ²) Λ̂_j π̂_j` with `ℓ_i` the parameter
/// linearization. Supplied parameters give zero.
pub fn gps_if_correction(pm: &PartialMean<'_>, slice: &SliceFit, dep: &Dependent) -> Result<Matrix> {
    let sample = pm.sample();
    let n = sample.n();
    let g = dep.columns();
    let mut out = Matrix::zeros(n, g);
    let kind = slice.generated.kind();
    if !kind.is_gps() {
        return Err(Error::invalid("first_stage", "correction applies to GPS regressors"));
    }
    if let FirstStageParams::Mle(p) = slice.generated.params() {
        if p.influence.is_none() {
            return Ok(out);
        }
    }
    let s = math::sqrt(slice.h_t());
    let norm = if slice.normalized { slice.mass } else { 1.0 };
    let direct = local_fits(sample, sample.covariates(), pm.step2(), slice.t, dep, &slice.active)?;
    let v = slice.generated.values();
    let lambda = |a: usize, col: usize| -> f64 {
        let i = slice.active[a];
        (slice.fits.get(a, col) - direct.get(a, col)) / v.get(i, 0)
    };
    match slice.generated.params() {
        FirstStageParams::Kernel(spec) if kind == RegressorKind::GpsKernel => {
            for (a, &i) in slice.active.iter().enumerate() {
                let vi = v.get(i, 0);
                let diff = spec.scaled(0, sample.treatment()[i] - slice.t) - vi;
                for col in 0..g {
                    out.set(i, col, s * diff * lambda(a, col) / norm);
                }
            }
        }
        FirstStageParams::Mle(p) => {
            let infl = p.influence.as_ref().expect("checked above");
            let q = infl.cols();
            let x = sample.covariates();
            let e = slice.generated.eval_points()[0];
            // G = n⁻¹ Σ_j ∂ζ_j/∂θ Λ̂_j π̂_j, q × G.
            let mut grad = vec![0.0; q * g];
            let mut dz = vec![0.0; q];
            for (a, &j) in slice.active.iter().enumerate() {
                let (dmu, ds2) = p.family.density_gradient(e, p.index(x.row(j)), p.sigma2);
                dz[0] = dmu;
                for (l, xl) in x.row(j).iter().enumerate() {
                    dz[1 + l] = dmu * xl;
                }
                dz[q - 1] = ds2;
                for col in 0..g {
                    let lam = lambda(a, col);
                    for r in 0..q {
                        grad[r * g + col] += dz[r] * lam;
                    }
                }
            }
            grad.iter_mut().for_each(|x| *x /= n as f64);
            for i in 0..n {
                let li = infl.row(i);
                let row = out.row_mut(i);
                for col in 0..g {
                    let mut acc = 0.0;
                    for r in 0..q {
                        acc += li[r] * grad[r * g + col];
                    }
                    row[col] = s * acc / norm;
                }
            }
        }
        _ => return Err(Error::invalid("first_stage", "unsupported GPS metadata")),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    /// `h² 𝔅̂` on the scale of the estimate, per dependent column.
    pub bias: Vec<f64>,
    /// `𝔅̂ = bias / h_t²`.
    pub constant: Vec<f64>,
    /// Active observations whose local quadratic fit was singular (skipped).
    pub missing: usize,
}

/// Plug-in leading bias of the local constant Step 2 (second-order kernel):
/// `n⁻¹ Σ_i Σ_d h_d² μ₂/2 (F''_d + 2 F'_d ∂_d f / f)(t, V̂_i) Ê[W|V̂_i] π̂_i`.
/// Derivatives of the regression come from local quadratic fits and those
/// of the density from the analytic KDE gradient.
pub fn leading_bias_lc(pm: &PartialMean<'_>, slice: &SliceFit, dep: &Dependent) -> Result<BiasEstimate> {
    let sample = pm.sample();
    let n = sample.n();
    let g = dep.columns();
    let v = slice.regressors();
    let spec = crate::kernel::KernelSpec::new(pm.step2().family, slice.bandwidths.clone())?;
    let smoother = Smoother::new(sample.treatment(), &v, &spec)?;
    let points = Matrix::column_vector(sample.treatment().to_vec()).hstack(&v)?;
    let outcome = sample.outcome();
    let dep_cols: Vec<Vec<f64>> = (0..g)
        .map(|c| (0..n).map(|i| dep.value(outcome, i, c)).collect())
        .collect();
    let mu2 = spec.family().second_moment();
    let h = spec.bandwidths();
    let d = h.len();
    let per_obs = par::map_indexed(slice.active.len(), |a| -> Result<Option<Vec<f64>>> {
        let i = slice.active[a];
        let vi = v.row(i);
        let q = match smoother.quadratic_weights(slice.t, vi) {
            Ok(q) => q,
            Err(Error::SingularLocalFit { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut at = vec![slice.t];
        at.extend_from_slice(vi);
        let f = smoothing::kde_joint(&points, &spec, &at)?;
        let df = smoothing::kde_gradient(&points, &spec, &at)?;
        let mut b = vec![0.0; g];
        for (c, dep_c) in dep_cols.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..d {
                let f1 = QuadraticWeights::apply(&q.gradient[k], dep_c);
                let f2 = QuadraticWeights::apply(&q.second[k], dep_c);
                let ratio = if f > 0.0 { df[k] / f } else { 0.0 };
                acc += h[k] * h[k] * mu2 / 2.0 * (f2 + 2.0 * f1 * ratio);
            }
            b[c] = acc * slice.weight_factor[a];
        }
        Ok(Some(b))
    });
    let mut bias = vec![0.0; g];
    let mut missing = 0;
    for r in per_obs {
        match r? {
            Some(b) => bias.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            None => missing += 1,
        }
    }
    let norm = if slice.normalized { slice.mass } else { 1.0 };
    bias.iter_mut().for_each(|b| *b /= n as f64 * norm);
    let h2 = h[0] * h[0];
    let constant = bias.iter().map(|b| b / h2).collect();
    Ok(BiasEstimate {
        bias,
        constant,
        missing,
    })
}

/// Quantile influence column `-ψ(Q̂) / f̂_{Y(t)}(Q̂)`, with `ψ(Q̂)` linearly
/// interpolated between the bracketing columns of the `n × G` CDF block.
///
/// `floor` is in outcome units (the standardized floor divided by the
/// outcome's standard deviation).
pub fn quantile_influence(
    block: &Matrix,
    y_grid: &[f64],
    q: f64,
    density: f64,
    floor: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    if block.cols() != y_grid.len() || y_grid.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: y_grid.len(),
            got: block.cols(),
        });
    }
    let (k, lambda) = bracket(y_grid, q);
    let col: Vec<f64> = (0..block.rows())
        .map(|i| {
            let a = block.get(i, k);
            if lambda > 0.0 {
                (1.0 - lambda) * a + lambda * block.get(i, k + 1)
            } else {
                a
            }
        })
        .collect();
    // Vanishing contributions (e.g. a degenerate outcome) short-circuit
    // before the density is consulted.
    if col.iter().all(|&x| x.abs() < 1e-12) {
        return Ok(vec![0.0; col.len()]);
    }
    if !(density >= floor) {
        return Err(Error::QuantileDensityUnderflow { tau, density });
    }
    Ok(col.into_iter().map(|x| -x / density).collect())
}

/// Index `k` and weight `λ` with `q = (1-λ) y_k + λ y_{k+1}` (clamped to the grid).
pub(crate) fn bracket(grid: &[f64], q: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if q <= grid[0] {
        return (0, 0.0);
    }
    if q >= grid[last] {
        return (last, 0.0);
    }
    let k = grid.partition_point(|&y| y <= q) - 1;
    (k, (q - grid[k]) / (grid[k + 1] - grid[k]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// `B × G` draws of `n^{-1/2} Σ U_i ψ_i`.
    pub draws: Matrix,
    /// Per curve; `None` when every column of the curve is degenerate.
    pub critical_values: Vec<Option<f64>>,
    /// `sqrt(n⁻¹ Σ ψ²)` per column.
    pub sigma: Vec<f64>,
    pub curves: Vec<Range<usize>>,
    pub studentized: bool,
    pub alpha: f64,
    pub seed: u64,
    pub n: usize,
}

impl BootstrapResult {
    /// Uniform-band half-widths on the estimate scale; `scales[c]` is the
    /// `√h` of curve `c`. Degenerate curves get width 0.
    pub fn half_widths(&self, scales: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sigma.len()];
        let rn = math::sqrt(self.n as f64);
        for (c, r) in self.curves.iter().enumerate() {
            let Some(cv) = self.critical_values[c] else {
                continue;
            };
            for col in r.clone() {
                out[col] = if self.studentized {
                    cv * self.sigma[col] / (rn * scales[c])
                } else {
                    cv / (rn * scales[c])
                };
            }
        }
        out
    }

    /// Per-column variance of the draws (mean taken as zero).
    pub fn draw_variance(&self) -> Vec<f64> {
        let b = self.draws.rows() as f64;
        (0..self.draws.cols())
            .map(|c| self.draws.column(c).iter().map(|x| x * x).sum::<f64>() / b)
            .collect()
    }
}

/// Multiplier bootstrap with standard normal multipliers. Draw `b` uses the
/// counter-based substream `(seed, b)`, so results do not depend on how draws
/// are scheduled. The critical value of each curve is the `(1-α)` quantile of
/// `sup |draw| / σ̂` (studentized) or `sup |draw|` (raw) over its columns.
pub fn multiplier_bootstrap(
    psi: &Matrix,
    curves: &[Range<usize>],
    draws: usize,
    alpha: f64,
    seed: u64,
    studentized: bool,
) -> Result<BootstrapResult> {
    if draws == 0 {
        return Err(Error::invalid("draws", "at least one draw is required"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    if !psi.is_finite() {
        return Err(Error::invalid("psi", "influence contributions must be finite"));
    }
    let n = psi.rows();
    let g = psi.cols();
    if n == 0 {
        return Err(Error::invalid("psi", "no observations"));
    }
    if curves.iter().any(|r| r.end > g || r.start > r.end) {
        return Err(Error::invalid("curves", "curve ranges exceed the column count"));
    }
    let rn = math::sqrt(n as f64);
    let rows = par::map_indexed(draws, |b| {
        let mut rng = substream(seed, b as u64);
        let mut acc = vec![0.0; g];
        for i in 0..n {
            let u: f64 = StandardNormal.sample(&mut rng);
            for (a, p) in acc.iter_mut().zip(psi.row(i)) {
                *a += u * p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= rn);
        acc
    });
    let out = Matrix::from_row_major(draws, g, rows.into_iter().flatten().collect())?;
    let sigma: Vec<f64> = (0..g)
        .map(|c| math::sqrt(psi.column(c).iter().map(|p| p * p).sum::<f64>() / n as f64))
        .collect();
    let critical_values = curves
        .iter()
        .map(|r| {
            let live: Vec<usize> = r.clone().filter(|&c| sigma[c] > 0.0).collect();
            if live.is_empty() {
                return None;
            }
            let mut sups: Vec<f64> = (0..draws)
                .map(|b| {
                    let row = out.row(b);
                    live.iter()
                        .map(|&c| {
                            if studentized {
                                row[c].abs() / sigma[c]
                            } else {
                                row[c].abs()
                            }
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            math::sort_f64(&mut sups);
            Some(math::quantile_sorted(&sups, 1.0 - alpha))
        })
        .collect();
    Ok(BootstrapResult {
        draws: out,
        critical_values,
        sigma,
        curves: curves.to_vec(),
        studentized,
        alpha,
        seed,
        n,
    })
}

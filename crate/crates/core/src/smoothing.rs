//! Kernel density, conditional density/CDF and local polynomial regression
//! evaluated at arbitrary design points.
//!
//! Regression surfaces are always indexed by a scalar treatment `t` plus a
//! (possibly empty) vector of regressors `v`. A [`KernelSpec`] for these
//! routines carries `1 + d_v` bandwidths, treatment first.
//!
//! All local polynomial estimates are linear smoothers: the fitted value is
//! `Σ_j ℓ_j dep_j` for an equivalent-kernel weight vector `ℓ` that depends on
//! the design only. [`Smoother`] exposes those weights so one pass over the
//! sample can serve a whole family of dependent variables.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::math::{self, Matrix};

/// Relative pivot tolerance for the local normal equations.
const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalOrder {
    Constant,
    Linear,
}

impl LocalOrder {
    pub fn name(self) -> &'static str {
        match self {
            LocalOrder::Constant => "constant",
            LocalOrder::Linear => "linear",
        }
    }
}

/// Evaluation point `(t, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub t: f64,
    pub v: Vec<f64>,
}

impl DesignPoint {
    pub fn new(t: f64, v: Vec<f64>) -> Self {
        Self { t, v }
    }

    fn coords(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + self.v.len());
        c.push(self.t);
        c.extend_from_slice(&self.v);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub value: f64,
    /// Joint kernel density `f̂_{TV}(t, v)`.
    pub density_at_point: f64,
    /// `ℓ_j`, with `value = Σ_j ℓ_j dep_j`.
    pub effective_weights: Vec<f64>,
    /// Set when a singular local-linear design was replaced by a local constant fit.
    pub fell_back: bool,
}

/// Per-point by-products of computing smoother weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSummary {
    /// `n^{-1} Σ_j K_h(T_j - t) K_h(V_j - v)`.
    pub joint_density: f64,
    /// `n^{-1} Σ_j K_h(V_j - v)`; equal to 1 when there are no regressors.
    pub regressor_density: f64,
    pub fell_back: bool,
}

impl PointSummary {
    /// `f̂_{T|V}(t | v)` as a ratio of kernel densities.
    pub fn conditional_treatment_density(&self) -> f64 {
        self.joint_density / self.regressor_density
    }
}

/// Scratch buffers reused across evaluation points.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    /// Product kernel `K_j` at the current point.
    pub kernel: Vec<f64>,
    /// Regressor-only kernel `K_h(V_j - v)` at the current point.
    pub regressor_kernel: Vec<f64>,
    /// Equivalent-kernel weights at the current point.
    pub weights: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            kernel: vec![0.0; n],
            regressor_kernel: vec![0.0; n],
            weights: vec![0.0; n],
        }
    }

    fn ensure(&mut self, n: usize) {
        if self.kernel.len() != n {
            *self = Workspace::new(n);
        }
    }
}

/// Kernel smoother over a treatment column and a regressor matrix.
#[derive(Debug, Clone, Copy)]
pub struct Smoother<'a> {
    t: &'a [f64],
    v: &'a Matrix,
    spec: &'a KernelSpec,
}

impl<'a> Smoother<'a> {
    pub fn new(t: &'a [f64], v: &'a Matrix, spec: &'a KernelSpec) -> Result<Self> {
        if v.rows() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                got: v.rows(),
            });
        }
        if spec.dim() != 1 + v.cols() {
            return Err(Error::DimensionMismatch {
                expected: 1 + v.cols(),
                got: spec.dim(),
            });
        }
        if t.is_empty() {
            return Err(Error::invalid("sample", "at least one observation is required"));
        }
        Ok(Self { t, v, spec })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn spec(&self) -> &KernelSpec {
        self.spec
    }

    /// `K_{h_t}(T_j - t)` for every observation.
    pub fn treatment_kernel(&self, t: f64) -> Vec<f64> {
        self.t.iter().map(|&tj| self.spec.scaled(0, tj - t)).collect()
    }

    /// Computes equivalent-kernel weights at `(t, v)` into `ws.weights`.
    ///
    /// `kt` must hold [`Smoother::treatment_kernel`] for the same `t`. With
    /// `allow_fallback`, a singular local-linear design degrades to a local
    /// constant fit and the summary is flagged.
    pub fn weights_into(
        &self,
        kt: &[f64],
        t: f64,
        v: &[f64],
        order: LocalOrder,
        allow_fallback: bool,
        ws: &mut Workspace,
    ) -> Result<PointSummary> {
        let n = self.n();
        ws.ensure(n);
        let dv = self.v.cols();
        if v.len() != dv {
            return Err(Error::DimensionMismatch {
                expected: dv,
                got: v.len(),
            });
        }
        let mut sum_k = 0.0;
        let mut sum_kv = 0.0;
        for j in 0..n {
            let row = self.v.row(j);
            let mut kv = 1.0;
            let mut volume = 1.0;
            for l in 0..dv {
                let h = self.spec.bandwidths()[l + 1];
                kv *= self.spec.family().evaluate((row[l] - v[l]) / h);
                if kv == 0.0 {
                    break;
                }
                volume *= h;
            }
            let kv = if kv == 0.0 { 0.0 } else { kv / volume };
            ws.regressor_kernel[j] = kv;
            let k = kt[j] * kv;
            ws.kernel[j] = k;
            sum_kv += kv;
            sum_k += k;
        }
        let summary = PointSummary {
            joint_density: sum_k / n as f64,
            regressor_density: if dv == 0 { 1.0 } else { sum_kv / n as f64 },
            fell_back: false,
        };
        if !(sum_k > 0.0) {
            let mut point = Vec::with_capacity(1 + dv);
            point.push(t);
            point.extend_from_slice(v);
            return Err(Error::DensityUnderflow { point });
        }
        match order {
            LocalOrder::Constant => {
                constant_weights(ws, sum_k);
                Ok(summary)
            }
            LocalOrder::Linear => match self.linear_weights(t, v, ws) {
                Ok(()) => Ok(summary),
                Err(e) if allow_fallback && matches!(e, Error::SingularLocalFit { .. }) => {
                    constant_weights(ws, sum_k);
                    Ok(PointSummary {
                        fell_back: true,
                        ..summary
                    })
                }
                Err(e) => Err(e),
            },
        }
    }

    fn scaled_offsets(&self, j: usize, t: f64, v: &[f64], out: &mut [f64]) {
        let h = self.spec.bandwidths();
        out[0] = 1.0;
        out[1] = (self.t[j] - t) / h[0];
        let row = self.v.row(j);
        for l in 0..v.len() {
            out[2 + l] = (row[l] - v[l]) / h[l + 1];
        }
    }

    fn linear_weights(&self, t: f64, v: &[f64], ws: &mut Workspace) -> Result<()> {
        let p = 2 + v.len();
        let mut z = vec![0.0; p];
        let mut gram = vec![0.0; p * p];
        let mut active = 0usize;
        for j in 0..self.n() {
            let k = ws.kernel[j];
            if k == 0.0 {
                continue;
            }
            active += 1;
            self.scaled_offsets(j, t, v, &mut z);
            for a in 0..p {
                let ka = k * z[a];
                for b in 0..=a {
                    gram[a * p + b] += ka * z[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[b * p + a] = gram[a * p + b];
            }
        }
        let singular = || {
            let mut point = Vec::with_capacity(1 + v.len());
            point.push(t);
            point.extend_from_slice(v);
            Error::SingularLocalFit { point }
        };
        if active < p {
            return Err(singular());
        }
        let mut e1 = vec![0.0; p];
        e1[0] = 1.0;
        let a = math::cholesky_solve(&gram, p, &e1, SINGULAR_TOL).ok_or_else(singular)?;
        for j in 0..self.n() {
            let k = ws.kernel[j];
            if k == 0.0 {
                ws.weights[j] = 0.0;
                continue;
            }
            self.scaled_offsets(j, t, v, &mut z);
            let dot: f64 = a.iter().zip(&z).map(|(x, y)| x * y).sum();
            ws.weights[j] = k * dot;
        }
        Ok(())
    }

    /// Equivalent kernels of a local quadratic fit at `(t, v)`.
    ///
    /// Returns weight vectors for the value, the first derivative in every
    /// dimension (treatment first) and the pure second derivative in every
    /// dimension, each already rescaled to the original units.
    pub fn quadratic_weights(&self, t: f64, v: &[f64]) -> Result<QuadraticWeights> {
        let n = self.n();
        let d = 1 + v.len();
        let h = self.spec.bandwidths();
        // Basis: 1, u_a (a < d), u_a u_b (a <= b).
        let cross: Vec<(usize, usize)> = (0..d).flat_map(|a| (a..d).map(move |b| (a, b))).collect();
        let p = 1 + d + cross.len();
        let mut kernel = vec![0.0; n];
        let mut u = vec![0.0; d];
        let mut z = vec![0.0; p];
        let mut gram = vec![0.0; p * p];
        let mut active = 0usize;
        let fill = |j: usize, u: &mut [f64], z: &mut [f64]| {
            u[0] = (self.t[j] - t) / h[0];
            let row = self.v.row(j);
            for l in 0..v.len() {
                u[1 + l] = (row[l] - v[l]) / h[1 + l];
            }
            z[0] = 1.0;
            z[1..=d].copy_from_slice(u);
            for (c, &(a, b)) in cross.iter().enumerate() {
                z[1 + d + c] = u[a] * u[b];
            }
        };
        for j in 0..n {
            fill(j, &mut u, &mut z);
            let k = self
                .spec
                .product_unchecked(&u.iter().zip(h).map(|(a, b)| a * b).collect::<Vec<_>>());
            kernel[j] = k;
            if k == 0.0 {
                continue;
            }
            active += 1;
            for a in 0..p {
                let ka = k * z[a];
                for b in 0..=a {
                    gram[a * p + b] += ka * z[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[b * p + a] = gram[a * p + b];
            }
        }
        let point = || {
            let mut c = Vec::with_capacity(d);
            c.push(t);
            c.extend_from_slice(v);
            c
        };
        if active < p {
            return Err(Error::SingularLocalFit { point: point() });
        }
        let l = math::cholesky(&gram, p, SINGULAR_TOL).ok_or_else(|| Error::SingularLocalFit { point: point() })?;
        // Coefficient rows needed: intercept, linear terms, squared terms.
        let mut rows = Vec::with_capacity(1 + 2 * d);
        let mut scales = Vec::with_capacity(1 + 2 * d);
        rows.push(0);
        scales.push(1.0);
        for a in 0..d {
            rows.push(1 + a);
            scales.push(1.0 / h[a]);
        }
        for a in 0..d {
            let c = cross.iter().position(|&(x, y)| x == a && y == a).unwrap();
            rows.push(1 + d + c);
            scales.push(2.0 / (h[a] * h[a]));
        }
        let solved: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| {
                let mut e = vec![0.0; p];
                e[r] = 1.0;
                math::cholesky_apply(&l, p, &e)
            })
            .collect();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; rows.len()];
        for j in 0..n {
            let k = kernel[j];
            if k == 0.0 {
                continue;
            }
            fill(j, &mut u, &mut z);
            for (c, a) in solved.iter().enumerate() {
                let dot: f64 = a.iter().zip(&z).map(|(x, y)| x * y).sum();
                out[c][j] = k * dot * scales[c];
            }
        }
        let mut it = out.into_iter();
        let value = it.next().unwrap();
        let gradient: Vec<Vec<f64>> = it.by_ref().take(d).collect();
        let second: Vec<Vec<f64>> = it.collect();
        Ok(QuadraticWeights {
            value,
            gradient,
            second,
        })
    }
}

fn constant_weights(ws: &mut Workspace, sum_k: f64) {
    for (w, k) in ws.weights.iter_mut().zip(&ws.kernel) {
        *w = k / sum_k;
    }
}

/// Equivalent kernels of a local quadratic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticWeights {
    pub value: Vec<f64>,
    /// One weight vector per dimension, treatment first.
    pub gradient: Vec<Vec<f64>>,
    /// Pure second derivatives, one per dimension.
    pub second: Vec<Vec<f64>>,
}

impl QuadraticWeights {
    pub fn apply(weights: &[f64], dep: &[f64]) -> f64 {
        weights.iter().zip(dep).map(|(w, y)| w * y).sum()
    }
}

/// `n^{-1} Σ_j K_h(row_j - at)`.
pub fn kde_joint(points: &Matrix, spec: &KernelSpec, at: &[f64]) -> Result<f64> {
    let d = points.cols();
    if spec.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: spec.dim(),
        });
    }
    if at.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: at.len(),
        });
    }
    if points.rows() == 0 {
        return Err(Error::invalid("points", "at least one observation is required"));
    }
    let mut u = vec![0.0; d];
    let mut sum = 0.0;
    for j in 0..points.rows() {
        for (l, (x, a)) in points.row(j).iter().zip(at).enumerate() {
            u[l] = x - a;
        }
        sum += spec.product_unchecked(&u);
    }
    Ok(sum / points.rows() as f64)
}

/// Gradient of [`kde_joint`] with respect to the evaluation point.
pub fn kde_gradient(points: &Matrix, spec: &KernelSpec, at: &[f64]) -> Result<Vec<f64>> {
    let d = points.cols();
    if spec.dim() != d || at.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: at.len().min(spec.dim()),
        });
    }
    let h = spec.bandwidths();
    let fam = spec.family();
    let mut grad = vec![0.0; d];
    let mut kvals = vec![0.0; d];
    for j in 0..points.rows() {
        let row = points.row(j);
        for l in 0..d {
            kvals[l] = fam.evaluate((row[l] - at[l]) / h[l]) / h[l];
        }
        for a in 0..d {
            let ua = (row[a] - at[a]) / h[a];
            let mut term = -fam.derivative(ua) / (h[a] * h[a]);
            for l in 0..d {
                if l != a {
                    term *= kvals[l];
                }
            }
            grad[a] += term;
        }
    }
    let n = points.rows() as f64;
    Ok(grad.into_iter().map(|g| g / n).collect())
}

/// `f̂_{T|X}(t | x)`; `spec` carries `[h_t, h_x...]`.
pub fn conditional_density(t_col: &[f64], x_cols: &Matrix, spec: &KernelSpec, t: f64, x: &[f64]) -> Result<f64> {
    let smoother = Smoother::new(t_col, x_cols, spec)?;
    if x.len() != x_cols.cols() {
        return Err(Error::DimensionMismatch {
            expected: x_cols.cols(),
            got: x.len(),
        });
    }
    let n = smoother.n() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut u = vec![0.0; x.len()];
    let xspec = spec.sub(1..spec.dim());
    for (j, &tj) in t_col.iter().enumerate() {
        for (l, (a, b)) in x_cols.row(j).iter().zip(x).enumerate() {
            u[l] = a - b;
        }
        let kx = xspec.product_unchecked(&u);
        den += kx;
        num += kx * spec.scaled(0, tj - t);
    }
    if !(den > 0.0) {
        let mut point = Vec::with_capacity(1 + x.len());
        point.push(t);
        point.extend_from_slice(x);
        return Err(Error::DensityUnderflow { point });
    }
    Ok((num / n) / (den / n))
}

/// `F̂_{T|Z}(t | z) = Σ 1{T_j ≤ t} K_h(Z_j - z) / Σ K_h(Z_j - z)`; `spec` carries
/// one bandwidth per instrument.
pub fn conditional_cdf(t_col: &[f64], z_cols: &Matrix, spec: &KernelSpec, t: f64, z: &[f64]) -> Result<f64> {
    if z_cols.rows() != t_col.len() {
        return Err(Error::DimensionMismatch {
            expected: t_col.len(),
            got: z_cols.rows(),
        });
    }
    if spec.dim() != z_cols.cols() || z.len() != z_cols.cols() {
        return Err(Error::DimensionMismatch {
            expected: z_cols.cols(),
            got: z.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut u = vec![0.0; z.len()];
    for (j, &tj) in t_col.iter().enumerate() {
        for (l, (a, b)) in z_cols.row(j).iter().zip(z).enumerate() {
            u[l] = a - b;
        }
        let k = spec.product_unchecked(&u);
        den += k;
        if tj <= t {
            num += k;
        }
    }
    if !(den > 0.0) {
        return Err(Error::DensityUnderflow { point: z.to_vec() });
    }
    Ok(num / den)
}

/// Local constant or local linear regression of `dep` on `(T, V)` at `at`.
pub fn local_regress(
    dep: &[f64],
    t_col: &[f64],
    v_cols: &Matrix,
    spec: &KernelSpec,
    at: &DesignPoint,
    order: LocalOrder,
) -> Result<RegressionFit> {
    let smoother = Smoother::new(t_col, v_cols, spec)?;
    if dep.len() != t_col.len() {
        return Err(Error::DimensionMismatch {
            expected: t_col.len(),
            got: dep.len(),
        });
    }
    let kt = smoother.treatment_kernel(at.t);
    let mut ws = Workspace::new(smoother.n());
    let summary = smoother.weights_into(&kt, at.t, &at.v, order, false, &mut ws)?;
    let value = QuadraticWeights::apply(&ws.weights, dep);
    Ok(RegressionFit {
        value,
        density_at_point: summary.joint_density,
        effective_weights: ws.weights,
        fell_back: summary.fell_back,
    })
}

/// Slope of the regression surface in dimension `wrt` (0 = treatment,
/// `1 + l` = regressor `l`) from a kernel-weighted local quadratic fit.
pub fn local_regress_derivative(
    dep: &[f64],
    t_col: &[f64],
    v_cols: &Matrix,
    spec: &KernelSpec,
    at: &DesignPoint,
    wrt: usize,
) -> Result<f64> {
    let smoother = Smoother::new(t_col, v_cols, spec)?;
    if wrt > v_cols.cols() {
        return Err(Error::invalid("wrt", "dimension index out of range"));
    }
    if dep.len() != t_col.len() {
        return Err(Error::DimensionMismatch {
            expected: t_col.len(),
            got: dep.len(),
        });
    }
    let q = smoother.quadratic_weights(at.t, &at.v)?;
    Ok(QuadraticWeights::apply(&q.gradient[wrt], dep))
}

/// Convenience wrapper: joint KDE of `(T, V)` at a design point.
pub fn kde_at_design(t_col: &[f64], v_cols: &Matrix, spec: &KernelSpec, at: &DesignPoint) -> Result<f64> {
    let points = Matrix::column_vector(t_col.to_vec()).hstack(v_cols)?;
    kde_joint(&points, spec, &at.coords())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn gauss(h: Vec<f64>) -> KernelSpec {
        KernelSpec::new(KernelFamily::Gaussian, h).unwrap()
    }

    #[test]
    fn kde_single_point_and_boundary() {
        let pts = Matrix::column_vector(vec![0.0]);
        let v = kde_joint(&pts, &gauss(vec![1.0]), &[0.0]).unwrap();
        assert!((v - 0.398_942_280_4).abs() < 1e-10);
        let pts = Matrix::column_vector(vec![-1.0, 1.0]);
        let epa = KernelSpec::new(KernelFamily::Epanechnikov, vec![1.0]).unwrap();
        assert_eq!(kde_joint(&pts, &epa, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn kde_standard_normal_at_zero() {
        let mut rng = substream(11, 0);
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = kde_joint(&Matrix::column_vector(xs), &gauss(vec![0.3]), &[0.0]).unwrap();
        assert!((v - 0.3989).abs() < 0.05, "{v}");
    }

    #[test]
    fn kde_dimension_mismatch() {
        let pts = Matrix::column_vector(vec![0.0, 1.0]);
        assert!(kde_joint(&pts, &gauss(vec![1.0, 1.0]), &[0.0]).is_err());
    }

    #[test]
    fn conditional_density_single_point() {
        let x = Matrix::column_vector(vec![0.4]);
        let v = conditional_density(&[1.0], &x, &gauss(vec![0.5, 0.3]), 1.0, &[0.4]).unwrap();
        assert!((v - math::FRAC_1_SQRT_2PI / 0.5).abs() < 1e-12);
    }

    #[test]
    fn conditional_density_zero_denominator() {
        let x = Matrix::column_vector(vec![0.0, 0.1]);
        let epa = KernelSpec::new(KernelFamily::Epanechnikov, vec![1.0, 0.2]).unwrap();
        let err = conditional_density(&[0.0, 1.0], &x, &epa, 0.0, &[5.0]).unwrap_err();
        assert!(matches!(err, Error::DensityUnderflow { .. }));
    }

    #[test]
    fn conditional_density_independence_collapses() {
        let mut rng = substream(3, 0);
        let n = 400;
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xm = Matrix::column_vector(x);
        // A huge X bandwidth spreads mass evenly: conditional → marginal KDE of T.
        let spec = gauss(vec![0.4, 1e6]);
        let cond = conditional_density(&t, &xm, &spec, 0.2, &[0.5]).unwrap();
        let marg = kde_joint(&Matrix::column_vector(t.clone()), &gauss(vec![0.4]), &[0.2]).unwrap();
        assert!((cond - marg).abs() < 1e-9);
    }

    #[test]
    fn conditional_cdf_extremes_and_uniform() {
        let mut rng = substream(5, 0);
        let n = 2000;
        let u = Uniform::new(0.0, 1.0).unwrap();
        let t: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zm = Matrix::column_vector(z);
        let spec = gauss(vec![0.4]);
        assert_eq!(conditional_cdf(&t, &zm, &spec, 1.5, &[0.0]).unwrap(), 1.0);
        assert_eq!(conditional_cdf(&t, &zm, &spec, -0.5, &[0.0]).unwrap(), 0.0);
        let mid = conditional_cdf(&t, &zm, &spec, 0.5, &[0.0]).unwrap();
        assert!((mid - 0.5).abs() < 0.05, "{mid}");
    }

    #[test]
    fn local_regress_constant_dep() {
        let t = [0.0, 0.5, 1.0, 1.5, 2.0];
        let v = Matrix::column_vector(vec![1.0, 0.0, 2.0, 1.0, 3.0]);
        let spec = gauss(vec![1.0, 1.0]);
        let at = DesignPoint::new(1.0, vec![1.5]);
        for order in [LocalOrder::Constant, LocalOrder::Linear] {
            let fit = local_regress(&[3.0; 5], &t, &v, &spec, &at, order).unwrap();
            assert!((fit.value - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn local_linear_reproduces_planes() {
        let mut rng = substream(8, 0);
        let n = 60;
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let vv: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dep: Vec<f64> = t.iter().zip(&vv).map(|(a, b)| 2.0 + a + b).collect();
        let v = Matrix::column_vector(vv);
        for h in [0.3, 1.0, 5.0] {
            let spec = gauss(vec![h, h]);
            let at = DesignPoint::new(0.2, vec![-0.4]);
            let fit = local_regress(&dep, &t, &v, &spec, &at, LocalOrder::Linear).unwrap();
            assert!((fit.value - 1.8).abs() < 1e-9, "h = {h}: {}", fit.value);
        }
    }

    #[test]
    fn local_linear_singular_design() {
        // All regressor values identical: the slope in v is unidentified.
        let t = [0.0, 1.0, 2.0];
        let v = Matrix::column_vector(vec![1.0, 1.0, 1.0]);
        let spec = gauss(vec![1.0, 1.0]);
        let at = DesignPoint::new(1.0, vec![1.0]);
        let err = local_regress(&[1.0, 2.0, 3.0], &t, &v, &spec, &at, LocalOrder::Linear).unwrap_err();
        assert!(matches!(err, Error::SingularLocalFit { .. }));
    }

    #[test]
    fn fallback_flags_constant_fit() {
        let t = [0.0, 1.0, 2.0];
        let v = Matrix::column_vector(vec![1.0, 1.0, 1.0]);
        let spec = gauss(vec![1.0, 1.0]);
        let s = Smoother::new(&t, &v, &spec).unwrap();
        let kt = s.treatment_kernel(1.0);
        let mut ws = Workspace::new(3);
        let summary = s
            .weights_into(&kt, 1.0, &[1.0], LocalOrder::Linear, true, &mut ws)
            .unwrap();
        assert!(summary.fell_back);
        assert!((ws.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_linear_and_constant() {
        let mut rng = substream(9, 0);
        let n = 80;
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let vv: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dep: Vec<f64> = vv.iter().map(|b| 2.0 + 3.0 * b).collect();
        let v = Matrix::column_vector(vv);
        let spec = gauss(vec![0.8, 0.8]);
        let at = DesignPoint::new(0.1, vec![0.3]);
        let d = local_regress_derivative(&dep, &t, &v, &spec, &at, 1).unwrap();
        assert!((d - 3.0).abs() < 1e-8, "{d}");
        let d0 = local_regress_derivative(&[1.0; 80], &t, &v, &spec, &at, 1).unwrap();
        assert!(d0.abs() < 1e-9);
    }

    #[test]
    fn derivative_of_sine() {
        let mut rng = substream(10, 0);
        let n = 5000;
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let t: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let vv: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let dep: Vec<f64> = vv.iter().map(|&b| math::sin(b)).collect();
        let v = Matrix::column_vector(vv);
        let spec = gauss(vec![0.2, 0.2]);
        let d = local_regress_derivative(&dep, &t, &v, &spec, &DesignPoint::new(0.0, vec![0.0]), 1).unwrap();
        assert!((d - 1.0).abs() < 0.1, "{d}");
    }

    #[test]
    fn indicator_regression_under_independence() {
        let mut rng = substream(12, 0);
        let n = 2000;
        let u = Uniform::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let vv: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = Matrix::column_vector(vv);
        let spec = gauss(vec![0.5, 0.5]);
        for &yy in &[0.25, 0.5, 0.75] {
            let dep: Vec<f64> = y.iter().map(|&a| if a <= yy { 1.0 } else { 0.0 }).collect();
            for order in [LocalOrder::Constant, LocalOrder::Linear] {
                let fit = local_regress(&dep, &t, &v, &spec, &DesignPoint::new(0.0, vec![0.0]), order).unwrap();
                assert!((fit.value - yy).abs() < 0.03, "{yy} {order:?} {}", fit.value);
            }
        }
    }

    #[test]
    fn kde_gradient_matches_finite_difference() {
        let pts = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.5, -0.2], vec![1.2, 0.3]]).unwrap();
        let spec = gauss(vec![0.7, 0.9]);
        let at = [0.3, 0.1];
        let g = kde_gradient(&pts, &spec, &at).unwrap();
        let eps = 1e-6;
        for a in 0..2 {
            let mut p = at;
            let mut m = at;
            p[a] += eps;
            m[a] -= eps;
            let fd = (kde_joint(&pts, &spec, &p).unwrap() - kde_joint(&pts, &spec, &m).unwrap()) / (2.0 * eps);
            assert!((fd - g[a]).abs() < 1e-8);
        }
    }
}

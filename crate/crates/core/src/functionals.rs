//! Functionals of the estimated process: quantiles, quantile treatment
//! effects, and bounds for the average and quantile structural functions
//! when part of the population is trimmed away.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::partial_mean::ProcessEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantileMode {
    /// Linear interpolation between the bracketing grid points.
    #[default]
    Interpolated,
    /// Smallest grid point whose CDF value reaches `τ`.
    Infimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Censoring {
    /// `τ` lies below the CDF at the first grid point.
    Below,
    /// `τ` is never reached on the grid.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    pub value: f64,
    pub censored: Option<Censoring>,
}

fn check_curve(curve: &[f64], y_grid: &[f64]) -> Result<()> {
    if curve.len() != y_grid.len() {
        return Err(Error::DimensionMismatch {
            expected: y_grid.len(),
            got: curve.len(),
        });
    }
    if y_grid.is_empty() {
        return Err(Error::invalid("y_grid", "grid is empty"));
    }
    Ok(())
}

/// `inf {y : F(y) ≥ τ}` on the grid, optionally interpolated.
pub fn invert_curve(curve: &[f64], y_grid: &[f64], tau: f64, mode: QuantileMode) -> Result<Quantile> {
    check_curve(curve, y_grid)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let Some(k) = curve.iter().position(|&f| f >= tau) else {
        return Ok(Quantile {
            value: y_grid[y_grid.len() - 1],
            censored: Some(Censoring::Above),
        });
    };
    if k == 0 {
        return Ok(Quantile {
            value: y_grid[0],
            censored: (curve[0] > tau).then_some(Censoring::Below),
        });
    }
    let value = match mode {
        QuantileMode::Infimum => y_grid[k],
        QuantileMode::Interpolated => {
            let (f0, f1) = (curve[k - 1], curve[k]);
            let (y0, y1) = (y_grid[k - 1], y_grid[k]);
            y0 + (tau - f0) / (f1 - f0) * (y1 - y0)
        }
    };
    Ok(Quantile { value, censored: None })
}

/// Quantile of `θ̂_{t_k}(·)`.
pub fn invert_quantile(process: &ProcessEstimate, t_index: usize, tau: f64, mode: QuantileMode) -> Result<Quantile> {
    if t_index >= process.t_grid.len() {
        return Err(Error::invalid("t_index", "out of range"));
    }
    invert_curve(process.curve(t_index), &process.y_grid, tau, mode)
}

/// Clips to `[0, 1]` and sorts (monotone rearrangement on the grid). Returns
/// whether anything changed.
pub fn rearrange(curve: &[f64]) -> (Vec<f64>, bool) {
    let mut out: Vec<f64> = curve.iter().map(|&f| f.clamp(0.0, 1.0)).collect();
    crate::math::sort_f64(&mut out);
    let changed = out.iter().zip(curve).any(|(a, b)| a != b);
    (out, changed)
}

/// Rearranges every CDF row of `process` in place and flags it in the metadata.
pub fn rearrange_process(process: &mut ProcessEstimate) -> bool {
    let mut any = false;
    for k in 0..process.t_grid.len() {
        let (row, changed) = rearrange(process.curve(k));
        if changed {
            process.values.row_mut(k).copy_from_slice(&row);
            any = true;
        }
    }
    process.meta.rearranged |= any;
    any
}

/// `Q_τ(Y(t_k)) - Q_τ(Y(t_j))`.
pub fn qte(process: &ProcessEstimate, t_index: usize, t_bar_index: usize, tau: f64, mode: QuantileMode) -> Result<f64> {
    let a = invert_quantile(process, t_index, tau, mode)?;
    let b = invert_quantile(process, t_bar_index, tau, mode)?;
    Ok(a.value - b.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    MeanDrf,
    QuantileDrf,
    Qte,
    AsfBounds,
    QsfBounds,
    Cdf,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::MeanDrf => "mean_drf",
            CurveKind::QuantileDrf => "quantile_drf",
            CurveKind::Qte => "qte",
            CurveKind::AsfBounds => "asf_bounds",
            CurveKind::QsfBounds => "qsf_bounds",
            CurveKind::Cdf => "cdf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveWithBands {
    pub kind: CurveKind,
    /// `t` values, or `τ` values at a fixed `t`.
    pub index: Vec<f64>,
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    pub band_halfwidth: Option<Vec<f64>>,
    /// Bounds kinds only.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl CurveWithBands {
    pub fn new(kind: CurveKind, index: Vec<f64>, point: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        if point.len() != index.len() || se.len() != index.len() {
            return Err(Error::DimensionMismatch {
                expected: index.len(),
                got: point.len().max(se.len()),
            });
        }
        if se.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("se", "standard errors must be nonnegative"));
        }
        Ok(Self {
            kind,
            index,
            point,
            se,
            band_halfwidth: None,
            lower: None,
            upper: None,
        })
    }

    pub fn with_bands(mut self, half_widths: Vec<f64>) -> Result<Self> {
        if half_widths.len() != self.index.len() {
            return Err(Error::DimensionMismatch {
                expected: self.index.len(),
                got: half_widths.len(),
            });
        }
        self.band_halfwidth = Some(half_widths);
        Ok(self)
    }
}

/// `[θ̂ + y_l P̂*, θ̂ + y_u P̂*]` per `t`.
pub fn asf_bounds(mean: &[f64], t_grid: &[f64], trimmed_share: f64, y_l: f64, y_u: f64) -> Result<CurveWithBands> {
    if y_l > y_u {
        return Err(Error::invalid(
            "y_l",
            format!("lower support bound {y_l} exceeds {y_u}"),
        ));
    }
    if !(0.0..=1.0).contains(&trimmed_share) {
        return Err(Error::invalid("trimmed_share", "must lie in [0, 1]"));
    }
    let mut curve = CurveWithBands::new(
        CurveKind::AsfBounds,
        t_grid.to_vec(),
        mean.to_vec(),
        alloc::vec![0.0; mean.len()],
    )?;
    curve.lower = Some(mean.iter().map(|m| m + y_l * trimmed_share).collect());
    curve.upper = Some(mean.iter().map(|m| m + y_u * trimmed_share).collect());
    Ok(curve)
}

/// Bounds on `Q_τ(Y(t))` from the trimmed CDF `curve`:
/// lower `y_l` if `τ ≤ P̂*` else `F̂*⁻¹(τ - P̂*)`; upper `F̂*⁻¹(τ)` if
/// `τ < 1 - P̂*` else `y_u`.
pub fn qsf_bounds(
    curve: &[f64],
    y_grid: &[f64],
    tau: f64,
    trimmed_share: f64,
    y_l: f64,
    y_u: f64,
    mode: QuantileMode,
) -> Result<(f64, f64)> {
    check_curve(curve, y_grid)?;
    if y_l > y_u {
        return Err(Error::invalid(
            "y_l",
            format!("lower support bound {y_l} exceeds {y_u}"),
        ));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let lower = if tau <= trimmed_share {
        y_l
    } else {
        invert_curve(curve, y_grid, tau - trimmed_share, mode)?.value
    };
    let upper = if tau < 1.0 - trimmed_share {
        invert_curve(curve, y_grid, tau, mode)?.value
    } else {
        y_u
    };
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn uniform_grid(m: usize) -> (Vec<f64>, Vec<f64>) {
        let y: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
        (y.clone(), y)
    }

    #[test]
    fn step_cdf() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let f = [0.0, 0.0, 1.0, 1.0];
        for tau in [0.1, 0.5, 0.9] {
            assert_eq!(invert_curve(&f, &y, tau, QuantileMode::Infimum).unwrap().value, 3.0);
            let q = invert_curve(&f, &y, tau, QuantileMode::Interpolated).unwrap().value;
            assert!((2.0..=3.0).contains(&q));
        }
    }

    #[test]
    fn uniform_median() {
        let (y, f) = uniform_grid(200);
        let q = invert_curve(&f, &y, 0.5, QuantileMode::Interpolated).unwrap();
        assert!((q.value - 0.5).abs() < 1e-12);
        assert_eq!(q.censored, None);
        let q = invert_curve(&f, &y, 0.503, QuantileMode::Infimum).unwrap();
        assert!((q.value - 0.503).abs() <= 0.005);
    }

    #[test]
    fn censoring_flags() {
        let y = [0.0, 1.0, 2.0];
        let f = [0.3, 0.6, 0.8];
        let q = invert_curve(&f, &y, 0.1, QuantileMode::Interpolated).unwrap();
        assert_eq!((q.value, q.censored), (0.0, Some(Censoring::Below)));
        let q = invert_curve(&f, &y, 0.9, QuantileMode::Interpolated).unwrap();
        assert_eq!((q.value, q.censored), (2.0, Some(Censoring::Above)));
        assert!(invert_curve(&f, &y, 0.0, QuantileMode::Interpolated).is_err());
        assert!(invert_curve(&f, &y, 1.0, QuantileMode::Interpolated).is_err());
    }

    #[test]
    fn rearrangement() {
        let (r, changed) = rearrange(&[-0.1, 0.4, 0.3, 1.2]);
        assert_eq!(r, vec![0.0, 0.3, 0.4, 1.0]);
        assert!(changed);
        assert!(!rearrange(&[0.0, 0.5, 1.0]).1);
    }

    #[test]
    fn asf_bounds_arithmetic() {
        let b = asf_bounds(&[44.0], &[1.0], 0.05, 0.0, 100.0).unwrap();
        assert_eq!(b.lower.unwrap(), vec![44.0]);
        assert_eq!(b.upper.unwrap(), vec![49.0]);
        let b = asf_bounds(&[1.5, 2.5], &[0.0, 1.0], 0.0, -3.0, 7.0).unwrap();
        assert_eq!(b.lower.as_ref().unwrap(), &b.point);
        assert_eq!(b.upper.as_ref().unwrap(), &b.point);
        let b = asf_bounds(&[1.5], &[0.0], 0.2, 0.0, 0.0).unwrap();
        assert_eq!(b.lower.unwrap(), vec![1.5]);
        assert!(asf_bounds(&[1.0], &[0.0], 0.1, 2.0, 1.0).is_err());
    }

    #[test]
    fn qsf_bounds_regimes() {
        let (y, f) = uniform_grid(1000);
        let (lo, hi) = qsf_bounds(&f, &y, 0.5, 0.1, -1.0, 2.0, QuantileMode::Interpolated).unwrap();
        assert!((lo - 0.4).abs() < 1e-9 && (hi - 0.5).abs() < 1e-9);
        let (lo, hi) = qsf_bounds(&f, &y, 0.3, 0.0, -1.0, 2.0, QuantileMode::Interpolated).unwrap();
        assert_eq!(lo, hi);
        let (lo, _) = qsf_bounds(&f, &y, 0.05, 0.1, -1.0, 2.0, QuantileMode::Interpolated).unwrap();
        assert_eq!(lo, -1.0);
        let (_, hi) = qsf_bounds(&f, &y, 0.95, 0.1, -1.0, 2.0, QuantileMode::Interpolated).unwrap();
        assert_eq!(hi, 2.0);
        let (_, hi) = qsf_bounds(&f, &y, 0.9, 0.1, -1.0, 2.0, QuantileMode::Interpolated).unwrap();
        assert_eq!(hi, 2.0);
    }

    fn cdf_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        prop::collection::vec(0.0f64..1.0, 2..40).prop_map(|mut f| {
            crate::math::sort_f64(&mut f);
            let y: Vec<f64> = (0..f.len()).map(|k| k as f64 * 0.5 - 3.0).collect();
            (y, f)
        })
    }

    proptest! {
        #[test]
        fn monotone_in_tau((y, f) in cdf_strategy(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for mode in [QuantileMode::Interpolated, QuantileMode::Infimum] {
                let qa = invert_curve(&f, &y, lo, mode).unwrap().value;
                let qb = invert_curve(&f, &y, hi, mode).unwrap().value;
                prop_assert!(qa <= qb + 1e-12);
            }
        }

        #[test]
        fn galois_on_grid((y, f) in cdf_strategy(), tau in 0.01f64..0.99) {
            let q = invert_curve(&f, &y, tau, QuantileMode::Infimum).unwrap();
            if q.censored != Some(Censoring::Above) {
                let k = y.iter().position(|&v| v == q.value).unwrap();
                prop_assert!(f[k] >= tau);
            }
        }

        #[test]
        fn qsf_bounds_ordered((y, f) in cdf_strategy(), tau in 0.01f64..0.99, p in 0.0f64..0.5) {
            let (lo, hi) = qsf_bounds(&f, &y, tau, p, -100.0, 100.0, QuantileMode::Interpolated).unwrap();
            prop_assert!(lo <= hi + 1e-12);
        }

        #[test]
        fn asf_bounds_nest(m in -5.0f64..5.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let (a, b) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let narrow = asf_bounds(&[m], &[0.0], a, -2.0, 3.0).unwrap();
            let wide = asf_bounds(&[m], &[0.0], b, -2.0, 3.0).unwrap();
            prop_assert!(wide.lower.unwrap()[0] <= narrow.lower.unwrap()[0] + 1e-12);
            prop_assert!(wide.upper.unwrap()[0] >= narrow.upper.unwrap()[0] - 1e-12);
        }
    }
}

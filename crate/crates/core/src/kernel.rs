//! Univariate second-order kernels, their derivatives, product kernels with
//! per-dimension bandwidths, and the rule-of-thumb bandwidth.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, FRAC_1_SQRT_2PI};

/// Default exponent of the rule-of-thumb bandwidth `C * sd * n^exponent`.
pub const DEFAULT_BANDWIDTH_EXPONENT: f64 = -0.22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    #[inline]
    pub fn evaluate(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => FRAC_1_SQRT_2PI * math::exp(-0.5 * u * u),
            KernelFamily::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `k'(u)`. The Epanechnikov derivative is taken as 0 at `u = ±1`.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => -u * FRAC_1_SQRT_2PI * math::exp(-0.5 * u * u),
            KernelFamily::Epanechnikov => {
                if u.abs() < 1.0 {
                    -1.5 * u
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ u² k(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Epanechnikov => 0.2,
        }
    }

    /// `∫ k(u)² du`.
    pub fn roughness(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5 / math::sqrt(core::f64::consts::PI),
            KernelFamily::Epanechnikov => 0.6,
        }
    }

    /// Half-width of the support, `None` for unbounded kernels.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            KernelFamily::Gaussian => None,
            KernelFamily::Epanechnikov => Some(1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            other => Err(Error::invalid("kernel", format!("unknown family `{other}`"))),
        }
    }
}

/// A kernel family together with one bandwidth per smoothing dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    order: u32,
    bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidths: Vec<f64>) -> Result<Self> {
        Self::with_order(family, 2, bandwidths)
    }

    /// Only second-order kernels are constructed; `order` is validated so
    /// configurations asking for higher orders fail loudly.
    pub fn with_order(family: KernelFamily, order: u32, bandwidths: Vec<f64>) -> Result<Self> {
        if order != 2 {
            return Err(Error::invalid(
                "order",
                format!("only second-order kernels are available, got {order}"),
            ));
        }
        if let Some(h) = bandwidths.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::invalid(
                "bandwidths",
                format!("bandwidths must be positive and finite, got {h}"),
            ));
        }
        Ok(Self {
            family,
            order,
            bandwidths,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    /// Spec restricted to the bandwidths in `range` (e.g. only the regressor part).
    pub fn sub(&self, range: core::ops::Range<usize>) -> KernelSpec {
        KernelSpec {
            family: self.family,
            order: self.order,
            bandwidths: self.bandwidths[range].to_vec(),
        }
    }

    /// `K_h(u) = Π_l h_l^{-1} k(u_l / h_l)`.
    pub fn product(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.bandwidths.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bandwidths.len(),
                got: u.len(),
            });
        }
        Ok(self.product_unchecked(u))
    }

    #[inline]
    pub(crate) fn product_unchecked(&self, u: &[f64]) -> f64 {
        let mut k = 1.0;
        let mut volume = 1.0;
        for (&ul, &h) in u.iter().zip(&self.bandwidths) {
            k *= self.family.evaluate(ul / h);
            if k == 0.0 {
                return 0.0;
            }
            volume *= h;
        }
        k / volume
    }

    /// Scaled univariate kernel `h^{-1} k(u / h)` in dimension `dim`.
    #[inline]
    pub fn scaled(&self, dim: usize, u: f64) -> f64 {
        let h = self.bandwidths[dim];
        self.family.evaluate(u / h) / h
    }
}

pub fn evaluate(spec: &KernelSpec, u: f64) -> f64 {
    spec.family.evaluate(u)
}

pub fn evaluate_derivative(spec: &KernelSpec, u: f64) -> f64 {
    spec.family.derivative(u)
}

pub fn product_kernel(spec: &KernelSpec, u: &[f64]) -> Result<f64> {
    spec.product(u)
}

/// `c * sd * n^{-0.22}`.
pub fn rule_of_thumb_bandwidth(c: f64, std_dev: f64, n: usize) -> Result<f64> {
    rule_of_thumb_bandwidth_with_exponent(c, std_dev, n, DEFAULT_BANDWIDTH_EXPONENT)
}

pub fn rule_of_thumb_bandwidth_with_exponent(c: f64, std_dev: f64, n: usize, exponent: f64) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid("c", format!("must be positive, got {c}")));
    }
    if !(std_dev.is_finite() && std_dev > 0.0) {
        return Err(Error::invalid("std_dev", format!("must be positive, got {std_dev}")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be at least 1"));
    }
    Ok(c * std_dev * math::powf(n as f64, exponent))
}

/// How bandwidths are chosen for a set of smoothing columns.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// Explicit bandwidths, one per column.
    Fixed(Vec<f64>),
    /// `c * sd(column) * n^exponent` per column, i.e. a common bandwidth on
    /// the standardized scale.
    RuleOfThumb { c: f64, exponent: f64 },
}

impl BandwidthRule {
    pub fn rule_of_thumb(c: f64) -> Self {
        BandwidthRule::RuleOfThumb {
            c,
            exponent: DEFAULT_BANDWIDTH_EXPONENT,
        }
    }

    /// Resolves bandwidths for the given columns (all of equal length).
    pub fn resolve(&self, columns: &[&[f64]]) -> Result<Vec<f64>> {
        match self {
            BandwidthRule::Fixed(h) => {
                if h.len() != columns.len() {
                    return Err(Error::DimensionMismatch {
                        expected: columns.len(),
                        got: h.len(),
                    });
                }
                Ok(h.clone())
            }
            BandwidthRule::RuleOfThumb { c, exponent } => columns
                .iter()
                .map(|col| {
                    let sd = math::std_dev(col);
                    // A constant column carries no information; any positive
                    // bandwidth gives identical kernel weights.
                    let sd = if sd > 0.0 { sd } else { 1.0 };
                    rule_of_thumb_bandwidth_with_exponent(*c, sd, col.len(), *exponent)
                })
                .collect(),
        }
    }

    pub fn spec(&self, family: KernelFamily, columns: &[&[f64]]) -> Result<KernelSpec> {
        KernelSpec::new(family, self.resolve(columns)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gauss(h: Vec<f64>) -> KernelSpec {
        KernelSpec::new(KernelFamily::Gaussian, h).unwrap()
    }

    fn epa(h: Vec<f64>) -> KernelSpec {
        KernelSpec::new(KernelFamily::Epanechnikov, h).unwrap()
    }

    #[test]
    fn point_values() {
        assert!((evaluate(&gauss(vec![1.0]), 0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert_eq!(evaluate(&epa(vec![1.0]), 2.0), 0.0);
        assert_eq!(evaluate(&epa(vec![1.0]), 0.0), 0.75);
    }

    #[test]
    fn derivative_values() {
        assert_eq!(evaluate_derivative(&gauss(vec![1.0]), 0.0), 0.0);
        assert_eq!(evaluate_derivative(&epa(vec![1.0]), 0.5), -0.75);
        assert!((evaluate_derivative(&gauss(vec![1.0]), 1.0) + 0.241_970_7).abs() < 1e-7);
        // boundary convention
        assert_eq!(evaluate_derivative(&epa(vec![1.0]), 1.0), 0.0);
        assert_eq!(evaluate_derivative(&epa(vec![1.0]), -1.0), 0.0);
    }

    #[test]
    fn product_kernel_values() {
        assert!((product_kernel(&gauss(vec![1.0]), &[0.0]).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert_eq!(product_kernel(&epa(vec![2.0]), &[4.0]).unwrap(), 0.0);
        let v = product_kernel(&gauss(vec![1.0, 2.0]), &[0.0, 0.0]).unwrap();
        assert!((v - 0.079_577_5).abs() < 1e-7);
    }

    #[test]
    fn product_kernel_dimension_mismatch() {
        assert_eq!(
            product_kernel(&gauss(vec![1.0, 1.0]), &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::new(KernelFamily::Gaussian, vec![0.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, vec![f64::NAN]).is_err());
        assert!(KernelSpec::with_order(KernelFamily::Gaussian, 4, vec![1.0]).is_err());
    }

    #[test]
    fn rule_of_thumb_values() {
        let h = rule_of_thumb_bandwidth(5.0, 961.74, 4024).unwrap();
        assert!((h - 774.4).abs() < 0.1, "{h}");
        assert_eq!(rule_of_thumb_bandwidth(1.0, 1.0, 1).unwrap(), 1.0);
        let h = rule_of_thumb_bandwidth(5.0, 1.0, 4024).unwrap();
        assert!((h - 0.8053).abs() < 1e-4, "{h}");
        assert!(rule_of_thumb_bandwidth(0.0, 1.0, 10).is_err());
        assert!(rule_of_thumb_bandwidth(1.0, -1.0, 10).is_err());
        assert!(rule_of_thumb_bandwidth(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn identical_bandwidth_product_is_exact() {
        let h = 0.7;
        let s = gauss(vec![h; 3]);
        let u = [0.3, -0.9, 1.4];
        let direct = u
            .iter()
            .map(|x| KernelFamily::Gaussian.evaluate(x / h))
            .product::<f64>()
            / (h * h * h);
        assert_eq!(s.product(&u).unwrap(), direct);
    }
}

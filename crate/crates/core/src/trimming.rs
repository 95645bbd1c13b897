//! Common-support trimming.
//!
//! A support table holds, for every observation `i` and grid point `t_l`,
//! the density `f̂_{TV̂}(t_l, V̂_i)` (or the score itself for GPS regressors,
//! where the conditional density of `T` given `X` is the regressor). The
//! threshold `c` is the largest per-grid-point quantile of the positive
//! table entries, and `π̂_i = 1{min_l f̂(t_l, V̂_i) ≥ c}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::first_stage::FirstStage;
use crate::kernel::{BandwidthRule, KernelFamily, KernelSpec};
use crate::math::{self, Matrix};
use crate::sample::Sample;

pub const DEFAULT_QUANTILE_LEVEL: f64 = 0.025;

#[derive(Debug, Clone, PartialEq)]
pub struct TrimmingRule {
    t_grid: Vec<f64>,
    quantile_level: f64,
    threshold: Option<f64>,
    disabled: bool,
}

impl TrimmingRule {
    pub fn new(t_grid: Vec<f64>, quantile_level: f64) -> Result<Self> {
        validate_grid(&t_grid)?;
        if !(quantile_level > 0.0 && quantile_level < 1.0) {
            return Err(Error::invalid(
                "quantile_level",
                format!("must lie in (0, 1), got {quantile_level}"),
            ));
        }
        Ok(Self {
            t_grid,
            quantile_level,
            threshold: None,
            disabled: false,
        })
    }

    /// Keeps every observation.
    pub fn none() -> Self {
        Self {
            t_grid: Vec::new(),
            quantile_level: DEFAULT_QUANTILE_LEVEL,
            threshold: None,
            disabled: true,
        }
    }

    /// Rule with a user-fixed threshold; no quantile step.
    pub fn with_threshold(t_grid: Vec<f64>, c: f64) -> Result<Self> {
        validate_grid(&t_grid)?;
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid("c", format!("must be positive, got {c}")));
        }
        Ok(Self {
            t_grid,
            quantile_level: DEFAULT_QUANTILE_LEVEL,
            threshold: Some(c),
            disabled: false,
        })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn quantile_level(&self) -> f64 {
        self.quantile_level
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }
}

fn validate_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid", "trimming grid is empty"));
    }
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("t_grid", "grid values must be finite"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("t_grid", "grid must be strictly increasing"));
    }
    Ok(())
}

/// `n × L` table of support densities.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportTable {
    t_grid: Vec<f64>,
    densities: Matrix,
}

impl SupportTable {
    pub fn new(t_grid: Vec<f64>, densities: Matrix) -> Result<Self> {
        if densities.cols() != t_grid.len() {
            return Err(Error::DimensionMismatch {
                expected: t_grid.len(),
                got: densities.cols(),
            });
        }
        Ok(Self { t_grid, densities })
    }

    /// `f̂_{TV}(t_l, V_i)` by a product-kernel KDE over `(T, V)`; `spec` carries
    /// `[h_t, h_v...]`.
    pub fn from_kde(t_col: &[f64], v: &Matrix, spec: &KernelSpec, t_grid: &[f64]) -> Result<Self> {
        let n = t_col.len();
        if v.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.rows(),
            });
        }
        if spec.dim() != 1 + v.cols() {
            return Err(Error::DimensionMismatch {
                expected: 1 + v.cols(),
                got: spec.dim(),
            });
        }
        let l = t_grid.len();
        let kt: Vec<Vec<f64>> = t_grid
            .iter()
            .map(|&t| t_col.iter().map(|&tj| spec.scaled(0, tj - t)).collect())
            .collect();
        let vspec = spec.sub(1..spec.dim());
        let d = v.cols();
        let rows = crate::par::map_indexed(n, |i| {
            let vi = v.row(i);
            let mut u = vec![0.0; d];
            let mut acc = vec![0.0; l];
            for j in 0..n {
                for (c, (a, b)) in v.row(j).iter().zip(vi).enumerate() {
                    u[c] = a - b;
                }
                let kv = vspec.product_unchecked(&u);
                if kv == 0.0 {
                    continue;
                }
                for (a, k) in acc.iter_mut().zip(&kt) {
                    *a += kv * k[j];
                }
            }
            acc.iter().map(|a| a / n as f64).collect::<Vec<f64>>()
        });
        let data = rows.into_iter().flatten().collect();
        Ok(Self {
            t_grid: t_grid.to_vec(),
            densities: Matrix::from_row_major(n, l, data)?,
        })
    }

    /// The support table implied by a first-stage recipe. GPS recipes use the
    /// score at each grid point; other recipes use a KDE over `(T, V̂)` with
    /// bandwidths from `bandwidth`.
    pub fn for_first_stage(
        sample: &Sample,
        first_stage: &FirstStage,
        family: KernelFamily,
        bandwidth: &BandwidthRule,
        t_grid: &[f64],
    ) -> Result<Self> {
        validate_grid(t_grid)?;
        let n = sample.n();
        if first_stage.is_gps() {
            let columns: Vec<Vec<f64>> =
                crate::par::map_indexed(t_grid.len(), |l| first_stage.gps_column(sample, t_grid[l]))
                    .into_iter()
                    .collect::<Result<_>>()?;
            return Self::new(t_grid.to_vec(), Matrix::from_columns(n, &columns)?);
        }
        let v = first_stage.fit(sample, t_grid[0])?.into_values();
        let cols: Vec<Vec<f64>> = (0..v.cols()).map(|j| v.column(j)).collect();
        let mut refs: Vec<&[f64]> = vec![sample.treatment()];
        refs.extend(cols.iter().map(Vec::as_slice));
        let spec = bandwidth.spec(family, &refs)?;
        Self::from_kde(sample.treatment(), &v, &spec, t_grid)
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn densities(&self) -> &Matrix {
        &self.densities
    }

    /// `min_l f̂(t_l, V̂_i)` per observation.
    pub fn row_minima(&self) -> Vec<f64> {
        (0..self.densities.rows())
            .map(|i| self.densities.row(i).iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }
}

/// `c_l` for every grid point: the `level`-quantile (linear interpolation)
/// of the positive densities in column `l`.
pub fn grid_thresholds(table: &SupportTable, level: f64) -> Result<Vec<f64>> {
    let d = table.densities();
    (0..d.cols())
        .map(|l| {
            let mut positive: Vec<f64> = d.column(l).into_iter().filter(|&x| x > 0.0).collect();
            if positive.is_empty() {
                return Err(Error::SupportDensityZero { t: table.t_grid[l] });
            }
            math::sort_f64(&mut positive);
            Ok(math::quantile_sorted(&positive, level))
        })
        .collect()
}

/// Returns `rule` with `c = max_l c_l`. Disabled rules and rules with a
/// fixed threshold are returned unchanged.
pub fn resolve_threshold(table: &SupportTable, rule: &TrimmingRule) -> Result<TrimmingRule> {
    if rule.disabled || rule.threshold.is_some() {
        return Ok(rule.clone());
    }
    if table.t_grid != rule.t_grid {
        return Err(Error::invalid("t_grid", "support table and rule use different grids"));
    }
    let c = grid_thresholds(table, rule.quantile_level)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(c > 0.0) {
        return Err(Error::invalid("c", "resolved threshold is not positive"));
    }
    Ok(TrimmingRule {
        threshold: Some(c),
        ..rule.clone()
    })
}

/// `π̂_i` for every observation. A disabled rule keeps everything.
pub fn indicators(table: Option<&SupportTable>, rule: &TrimmingRule) -> Result<Vec<bool>> {
    if rule.disabled {
        return match table {
            Some(t) => Ok(vec![true; t.densities.rows()]),
            None => Err(Error::invalid("table", "sample size unknown without a support table")),
        };
    }
    let c = rule
        .threshold
        .ok_or_else(|| Error::invalid("rule", "threshold has not been resolved"))?;
    let table = table.ok_or_else(|| Error::invalid("table", "support table required"))?;
    Ok(indicators_at(table, c))
}

pub fn indicators_at(table: &SupportTable, c: f64) -> Vec<bool> {
    table.row_minima().into_iter().map(|m| m >= c).collect()
}

/// `P̂* = 1 - n^{-1} Σ π̂_i`.
pub fn trimmed_share(pi: &[bool]) -> f64 {
    if pi.is_empty() {
        return 0.0;
    }
    pi.iter().filter(|&&p| !p).count() as f64 / pi.len() as f64
}

/// Trimmed share at each threshold in `cs`, for sensitivity reporting.
pub fn threshold_sweep(table: &SupportTable, cs: &[f64]) -> Vec<(f64, f64)> {
    let minima = table.row_minima();
    let n = minima.len().max(1) as f64;
    cs.iter()
        .map(|&c| (c, minima.iter().filter(|&&m| m < c).count() as f64 / n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_stage::GpsFamily;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal};

    fn table(rows: &[&[f64]], grid: &[f64]) -> SupportTable {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SupportTable::new(grid.to_vec(), Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn four_point_fixture() {
        let t = table(&[&[1.0], &[2.0], &[3.0], &[4.0]], &[0.0]);
        let rule = TrimmingRule::new(vec![0.0], 0.25).unwrap();
        let r = resolve_threshold(&t, &rule).unwrap();
        assert!((r.threshold().unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(indicators(Some(&t), &r).unwrap(), vec![false, true, true, true]);
    }

    #[test]
    fn identical_columns_give_single_point_answer() {
        let t = table(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[4.0, 4.0]], &[0.0, 1.0]);
        let rule = TrimmingRule::new(vec![0.0, 1.0], 0.25).unwrap();
        assert!((resolve_threshold(&t, &rule).unwrap().threshold().unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn zeros_are_ignored_and_all_zero_column_fails() {
        let t = table(&[&[0.0, 1.0], &[0.0, 2.0]], &[0.0, 1.0]);
        let rule = TrimmingRule::new(vec![0.0, 1.0], 0.5).unwrap();
        assert_eq!(resolve_threshold(&t, &rule), Err(Error::SupportDensityZero { t: 0.0 }));
        let t = table(&[&[0.0], &[1.0], &[3.0]], &[0.0]);
        let rule = TrimmingRule::new(vec![0.0], 0.5).unwrap();
        assert_eq!(resolve_threshold(&t, &rule).unwrap().threshold(), Some(2.0));
    }

    #[test]
    fn extreme_thresholds() {
        let t = table(&[&[1.0], &[2.0], &[3.0]], &[0.0]);
        assert!(indicators_at(&t, 0.5).iter().all(|&p| p));
        assert!(indicators_at(&t, 10.0).iter().all(|&p| !p));
    }

    #[test]
    fn monotone_in_threshold() {
        let mut rng = substream(3, 0);
        let vals: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z.abs()
                    })
                    .collect()
            })
            .collect();
        let t = SupportTable::new(vec![0.0, 1.0, 2.0], Matrix::from_rows(&vals).unwrap()).unwrap();
        let mut prev = indicators_at(&t, 0.0);
        let mut prev_share = trimmed_share(&prev);
        for k in 1..40 {
            let cur = indicators_at(&t, k as f64 * 0.05);
            assert!(cur.iter().zip(&prev).all(|(c, p)| !*c || *p));
            let share = trimmed_share(&cur);
            assert!(share >= prev_share);
            prev = cur;
            prev_share = share;
        }
    }

    #[test]
    fn lower_level_trims_less() {
        let mut rng = substream(5, 0);
        let n = 300;
        let tcol: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.5, 0.5]).unwrap();
        let grid = [-0.5, 0.0, 0.5];
        let tab = SupportTable::from_kde(&tcol, &Matrix::column_vector(x), &spec, &grid).unwrap();
        let mut last = 1.0;
        for level in [0.2, 0.1, 0.05, 0.025, 0.01] {
            let r = resolve_threshold(&tab, &TrimmingRule::new(grid.to_vec(), level).unwrap()).unwrap();
            let share = trimmed_share(&indicators(Some(&tab), &r).unwrap());
            assert!((0.0..=1.0).contains(&share));
            assert!(share <= last);
            last = share;
        }
    }

    #[test]
    fn gps_support_is_the_score() {
        let mut rng = substream(6, 0);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let e: f64 = StandardNormal.sample(&mut rng);
                math::exp(0.5 + xi + 0.5 * e)
            })
            .collect();
        let sample = Sample::new(vec![0.0; n], t, Matrix::column_vector(x)).unwrap();
        let fs = FirstStage::GpsMle {
            family: GpsFamily::Lognormal,
        };
        let grid = [1.0, 2.0, 3.0];
        let tab = SupportTable::for_first_stage(
            &sample,
            &fs,
            KernelFamily::Gaussian,
            &BandwidthRule::rule_of_thumb(1.0),
            &grid,
        )
        .unwrap();
        let rule = resolve_threshold(&tab, &TrimmingRule::new(grid.to_vec(), 0.025).unwrap()).unwrap();
        let c = rule.threshold().unwrap();
        let pi = indicators(Some(&tab), &rule).unwrap();
        let direct: Vec<bool> = (0..n)
            .map(|i| {
                grid.iter()
                    .map(|&g| fs.fit(&sample, g).unwrap().values().get(i, 0))
                    .fold(f64::INFINITY, f64::min)
                    >= c
            })
            .collect();
        assert_eq!(pi, direct);
    }

    #[test]
    fn kde_table_matches_direct_sum() {
        let t = [0.1, 0.5, -0.3, 1.2];
        let v = Matrix::column_vector(vec![1.0, 0.0, 0.4, -0.2]);
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.7, 0.9]).unwrap();
        let tab = SupportTable::from_kde(&t, &v, &spec, &[0.0, 0.5]).unwrap();
        for i in 0..4 {
            for (l, &g) in [0.0, 0.5].iter().enumerate() {
                let direct = crate::smoothing::kde_joint(
                    &Matrix::from_columns(4, &[t.to_vec(), v.column(0)]).unwrap(),
                    &spec,
                    &[g, v.get(i, 0)],
                )
                .unwrap();
                assert!((tab.densities().get(i, l) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn invalid_rules() {
        assert!(TrimmingRule::new(vec![], 0.1).is_err());
        assert!(TrimmingRule::new(vec![1.0, 1.0], 0.1).is_err());
        assert!(TrimmingRule::new(vec![1.0], 1.0).is_err());
        assert!(TrimmingRule::with_threshold(vec![1.0], 0.0).is_err());
    }
}

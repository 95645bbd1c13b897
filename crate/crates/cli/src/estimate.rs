//! The estimate pipeline: first stage, trimming, per-level fits, inference
//! and functionals, producing result rows and a run report.
//!
//! Treatment levels are processed one at a time and only the influence
//! columns needed for bands and contrasts are kept, so memory stays at
//! `O(n · |t_grid| · (1 + |τ|))` instead of the full CDF influence matrix.

use std::fmt::Write as _;

use drfkit_core::first_stage::FirstStage;
use drfkit_core::functionals::{self, Censoring};
use drfkit_core::inference::{self, InfluenceOptions, QUANTILE_DENSITY_FLOOR};
use drfkit_core::kernel::rule_of_thumb_bandwidth_with_exponent;
use drfkit_core::math::{self, Matrix};
use drfkit_core::partial_mean::{Dependent, PartialMean, WeightKind, WeightScheme};
use drfkit_core::rng::derive_seed;
use drfkit_core::trimming::{self, SupportTable, TrimmingRule};
use drfkit_core::{LocalOrder, Sample};

use crate::config::RunConfig;
use crate::error::{AtStage, CliError, Result, Stage};

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub curve: &'static str,
    pub cell_t: f64,
    /// `y` for CDF rows, `τ` for quantile rows, empty for mean rows.
    pub cell_y_or_tau: Option<f64>,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Uniform band, or identified bounds for the bounds curves.
    pub band: Option<(f64, f64)>,
    pub flags: Vec<String>,
}

/// Influence columns of one curve on the estimate scale (`ψ / √h`), so that
/// `se = sqrt(Σ ψ²) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiGroup {
    pub curve: String,
    pub cells: Vec<(f64, Option<f64>)>,
    pub estimates: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl PsiGroup {
    fn new(curve: impl Into<String>) -> Self {
        Self {
            curve: curve.into(),
            cells: Vec::new(),
            estimates: Vec::new(),
            columns: Vec::new(),
        }
    }

    fn push(&mut self, cell: (f64, Option<f64>), estimate: f64, column: Vec<f64>) {
        self.cells.push(cell);
        self.estimates.push(estimate);
        self.columns.push(column);
    }

    pub fn matrix(&self, n: usize) -> Matrix {
        Matrix::from_columns(n, &self.columns).expect("columns have length n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRun {
    pub t_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub rows: Vec<ResultRow>,
    /// Mean and quantile curves, kept for bands, contrasts and dumps.
    pub psi: Vec<PsiGroup>,
    pub threshold: Option<f64>,
    pub trimmed_share: f64,
    pub fallbacks: usize,
    pub report: String,
}

pub fn se_of(column: &[f64]) -> f64 {
    let n = column.len() as f64;
    math::sqrt(column.iter().map(|p| p * p).sum::<f64>()) / n
}

/// Uniform band half-widths for one curve from its estimate-scale columns.
pub fn band_halfwidths(
    group: &PsiGroup,
    n: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
    studentized: bool,
) -> Result<(Vec<f64>, Option<f64>)> {
    let psi = group.matrix(n);
    let curves = 0..psi.cols();
    let boot = inference::multiplier_bootstrap(&psi, std::slice::from_ref(&curves), draws, alpha, seed, studentized)
        .at(Stage::Inference)?;
    Ok((boot.half_widths(&[1.0]), boot.critical_values[0]))
}

fn flags_for(curve: &'static str, fallbacks: usize, rearranged: bool) -> Vec<String> {
    let mut f = vec![curve.to_string()];
    if fallbacks > 0 {
        f.push(format!("fallback={fallbacks}"));
    }
    if rearranged {
        f.push("rearranged".into());
    }
    f
}

pub fn run_estimate(cfg: &RunConfig, sample: &Sample) -> Result<EstimateRun> {
    cfg.validate()?;
    let n = sample.n();
    let t_grid = cfg.grid.t.resolve("grid.t", sample.treatment())?;
    let need_cdf = cfg.curves.cdf || cfg.curves.quantile;
    let y_grid = if need_cdf {
        cfg.grid.y.resolve("grid.y", sample.outcome())?
    } else {
        Vec::new()
    };
    let mut report = String::new();
    let _ = writeln!(report, "observations: {n}");
    let _ = writeln!(
        report,
        "t grid: {} points in [{}, {}]",
        t_grid.len(),
        t_grid[0],
        t_grid[t_grid.len() - 1]
    );
    if need_cdf {
        let _ = writeln!(
            report,
            "y grid: {} points in [{}, {}]",
            y_grid.len(),
            y_grid[0],
            y_grid[y_grid.len() - 1]
        );
    }

    // Step 1 recipe and weights.
    let base = cfg.first_stage();
    let step2 = cfg.step2();
    let (first_stage, scheme) = match cfg.weights.kind {
        WeightKind::Unit => (base.clone(), WeightScheme::unit()),
        WeightKind::Supplied => (
            base.clone(),
            WeightScheme::supplied(sample.weights().map(<[f64]>::to_vec)),
        ),
        kind => {
            let t_bar = cfg.weights.t_bar.expect("validated");
            let scheme = if kind == WeightKind::TreatedKernel {
                WeightScheme::treated_kernel(t_bar)
            } else {
                WeightScheme::treated_mle(t_bar)
            };
            let fs = if base.is_gps() {
                FirstStage::GpsTreatedPair {
                    base: Box::new(base.clone()),
                    t_bar,
                }
            } else {
                base.clone()
            };
            (fs, scheme)
        }
    };
    let _ = writeln!(report, "first stage: {}", first_stage.name());
    let _ = writeln!(report, "weights: {}", scheme.kind.name());

    // Trimming on the support grid.
    let mut threshold = None;
    let indicators = if cfg.trimming.enabled {
        let grid = match &cfg.trimming.grid {
            Some(g) => g.resolve("trimming.grid", sample.treatment())?,
            None => t_grid.clone(),
        };
        let table =
            SupportTable::for_first_stage(sample, &base, step2.family, &step2.bandwidth, &grid).at(Stage::Trimming)?;
        let rule = TrimmingRule::new(grid.clone(), cfg.trimming.quantile_level).at(Stage::Trimming)?;
        let rule = trimming::resolve_threshold(&table, &rule).at(Stage::Trimming)?;
        let pi = trimming::indicators(Some(&table), &rule).at(Stage::Trimming)?;
        threshold = rule.threshold();
        let _ = writeln!(
            report,
            "trimming: level {} over {} support points, threshold c = {}",
            cfg.trimming.quantile_level,
            grid.len(),
            threshold.map_or("none".into(), |c| c.to_string())
        );
        let _ = writeln!(report, "threshold sweep (level, c, trimmed share):");
        for level in [0.01, 0.025, 0.05, 0.1] {
            let r = TrimmingRule::new(grid.clone(), level)
                .and_then(|r| trimming::resolve_threshold(&table, &r))
                .at(Stage::Trimming)?;
            let c = r.threshold().unwrap_or(0.0);
            let share = trimming::trimmed_share(&trimming::indicators_at(&table, c));
            let _ = writeln!(report, "  {level}, {c}, {share}");
        }
        pi
    } else {
        let _ = writeln!(report, "trimming: disabled");
        vec![true; n]
    };

    let pm = PartialMean::new(sample, first_stage, step2.clone(), indicators, &scheme)
        .at(Stage::PartialMean)?
        .normalized(cfg.normalize);
    let trimmed_share = pm.trimmed_share();
    let _ = writeln!(report, "trimmed share P* = {trimmed_share}");
    let _ = writeln!(report, "normalized: {}", cfg.normalize);

    let mut opts = if scheme.kind.is_treated() {
        InfluenceOptions::treated(scheme.kind)
    } else {
        InfluenceOptions::default()
    };
    opts.gps_correction = cfg.inference.gps_correction;
    opts.centering |= cfg.inference.finite_sample_terms;
    if let Some(d) = cfg.inference.denominator {
        opts.denominator = d;
    }
    let want_psi = cfg.inference.pointwise || cfg.inference.bootstrap > 0;

    let sd_y = math::std_dev(sample.outcome());
    let (floor, hy) = if sd_y > 0.0 {
        (
            QUANTILE_DENSITY_FLOOR / sd_y,
            rule_of_thumb_bandwidth_with_exponent(1.06, sd_y, n, -0.2).at(Stage::Inference)?,
        )
    } else {
        (QUANTILE_DENSITY_FLOOR, 1.0)
    };

    let y_dep = Dependent::Indicator(y_grid.clone());
    let mut rows = Vec::new();
    let mut mean_group = PsiGroup::new("mean");
    let mut q_groups: Vec<PsiGroup> = cfg.grid.tau.iter().map(|_| PsiGroup::new("quantile")).collect();
    let mut q_censored: Vec<Vec<bool>> = vec![Vec::new(); cfg.grid.tau.len()];
    let mut cdf_curves: Vec<Vec<f64>> = Vec::new();
    let mut fallbacks = 0;
    let mut bandwidth_lines = Vec::new();
    let mut bias_lines = Vec::new();
    let mut cdf_critical = Vec::new();

    for (k, &t) in t_grid.iter().enumerate() {
        if cfg.curves.mean {
            let s = pm.slice(t, &Dependent::Outcome).at(Stage::PartialMean)?;
            fallbacks += s.fallbacks;
            bandwidth_lines.push((t, s.bandwidths.clone()));
            let est = s.values[0];
            let mut row = ResultRow {
                curve: "mean",
                cell_t: t,
                cell_y_or_tau: None,
                estimate: est,
                se: None,
                band: None,
                flags: flags_for("mean", s.fallbacks, false),
            };
            if want_psi {
                let psi = inference::influence_main(&pm, &s, &Dependent::Outcome, &opts).at(Stage::Inference)?;
                let rh = math::sqrt(s.h_t());
                let col: Vec<f64> = psi.column(0).iter().map(|p| p / rh).collect();
                if cfg.inference.pointwise {
                    row.se = Some(se_of(&col));
                }
                mean_group.push((t, None), est, col);
            }
            if cfg.inference.bias_report && cfg.step2.order == LocalOrder::Constant {
                let b = inference::leading_bias_lc(&pm, &s, &Dependent::Outcome).at(Stage::Inference)?;
                bias_lines.push(format!(
                    "  mean t={t}: bias {} (constant {}, skipped {})",
                    b.bias[0], b.constant[0], b.missing
                ));
            }
            rows.push(row);
        }
        if need_cdf {
            let s = pm.slice(t, &y_dep).at(Stage::PartialMean)?;
            fallbacks += s.fallbacks;
            if !cfg.curves.mean {
                bandwidth_lines.push((t, s.bandwidths.clone()));
            }
            let (curve, changed) = if cfg.rearrange {
                functionals::rearrange(&s.values)
            } else {
                (s.values.clone(), false)
            };
            let rh = math::sqrt(s.h_t());
            let psi = if want_psi {
                Some(inference::influence_main(&pm, &s, &y_dep, &opts).at(Stage::Inference)?)
            } else {
                None
            };
            if cfg.curves.cdf {
                let se = psi.as_ref().map(|p| inference::block_se(p, rh));
                let mut hw = None;
                if let (Some(p), true) = (&psi, cfg.inference.bootstrap > 0) {
                    let mut g = PsiGroup::new("cdf");
                    for (j, &y) in y_grid.iter().enumerate() {
                        g.push((t, Some(y)), curve[j], p.column(j).iter().map(|v| v / rh).collect());
                    }
                    let seed = derive_seed(cfg.inference.seed, 2 + k as u64);
                    let (w, cv) = band_halfwidths(
                        &g,
                        n,
                        cfg.inference.bootstrap,
                        cfg.inference.alpha,
                        seed,
                        cfg.inference.studentized,
                    )?;
                    cdf_critical.push((t, cv));
                    hw = Some(w);
                }
                for (j, &y) in y_grid.iter().enumerate() {
                    rows.push(ResultRow {
                        curve: "cdf",
                        cell_t: t,
                        cell_y_or_tau: Some(y),
                        estimate: curve[j],
                        se: if cfg.inference.pointwise {
                            se.as_ref().map(|s| s[j])
                        } else {
                            None
                        },
                        band: hw.as_ref().map(|w| (curve[j] - w[j], curve[j] + w[j])),
                        flags: flags_for("cdf", s.fallbacks, changed),
                    });
                }
            }
            if cfg.curves.quantile {
                let qs: Vec<functionals::Quantile> = cfg
                    .grid
                    .tau
                    .iter()
                    .map(|&tau| functionals::invert_curve(&curve, &y_grid, tau, cfg.quantile_mode))
                    .collect::<drfkit_core::Result<_>>()
                    .at(Stage::Functionals)?;
                let densities = if psi.is_some() {
                    let dep = Dependent::Density {
                        points: qs.iter().map(|q| q.value).collect(),
                        bandwidth: hy,
                        family: cfg.step2.kernel,
                    };
                    Some(pm.slice(t, &dep).at(Stage::PartialMean)?.values)
                } else {
                    None
                };
                for (j, (&tau, q)) in cfg.grid.tau.iter().zip(&qs).enumerate() {
                    let mut flags = flags_for("quantile", s.fallbacks, changed);
                    match q.censored {
                        Some(Censoring::Below) => flags.push("censored_below".into()),
                        Some(Censoring::Above) => flags.push("censored_above".into()),
                        None => {}
                    }
                    let mut se = None;
                    if let (Some(p), Some(d)) = (&psi, &densities) {
                        let col = if q.censored.is_some() {
                            vec![0.0; n]
                        } else {
                            match inference::quantile_influence(p, &y_grid, q.value, d[j], floor, tau) {
                                Ok(c) => c.into_iter().map(|v| v / rh).collect(),
                                Err(drfkit_core::Error::QuantileDensityUnderflow { .. }) => {
                                    flags.push("density_floor".into());
                                    vec![0.0; n]
                                }
                                Err(e) => {
                                    return Err(CliError::Module {
                                        stage: Stage::Inference,
                                        source: e,
                                    })
                                }
                            }
                        };
                        if cfg.inference.pointwise
                            && q.censored.is_none()
                            && !flags.iter().any(|f| f == "density_floor")
                        {
                            se = Some(se_of(&col));
                        }
                        q_groups[j].push((t, Some(tau)), q.value, col);
                    }
                    q_censored[j].push(q.censored.is_some() || flags.iter().any(|f| f == "density_floor"));
                    rows.push(ResultRow {
                        curve: "quantile",
                        cell_t: t,
                        cell_y_or_tau: Some(tau),
                        estimate: q.value,
                        se,
                        band: None,
                        flags,
                    });
                }
            }
            cdf_curves.push(curve);
        }
    }

    // Uniform bands over t for the mean and each quantile curve.
    let mut critical_lines = Vec::new();
    if cfg.inference.bootstrap > 0 {
        let mut groups: Vec<(&'static str, Option<f64>, &PsiGroup)> = Vec::new();
        if cfg.curves.mean {
            groups.push(("mean", None, &mean_group));
        }
        if cfg.curves.quantile {
            for (j, g) in q_groups.iter().enumerate() {
                groups.push(("quantile", Some(cfg.grid.tau[j]), g));
            }
        }
        for (gi, (curve, tau, g)) in groups.into_iter().enumerate() {
            let seed = derive_seed(cfg.inference.seed, 1_000_000 + gi as u64);
            let (hw, cv) = band_halfwidths(
                g,
                n,
                cfg.inference.bootstrap,
                cfg.inference.alpha,
                seed,
                cfg.inference.studentized,
            )?;
            critical_lines.push(format!(
                "  {curve}{}: {}",
                tau.map_or(String::new(), |t| format!(" tau={t}")),
                cv.map_or("degenerate".into(), |c| c.to_string())
            ));
            let cells = rows.iter_mut().filter(|r| r.curve == curve && r.cell_y_or_tau == tau);
            for (row, h) in cells.zip(&hw) {
                row.band = Some((row.estimate - h, row.estimate + h));
            }
        }
    }

    // Contrasts against a reference level.
    if let Some(t_ref) = cfg.grid.reference_t {
        let r = t_grid
            .iter()
            .position(|&t| (t - t_ref).abs() <= 1e-9 * t_ref.abs().max(1.0))
            .ok_or_else(|| CliError::config("grid.reference_t", "must be a point of the t grid"))?;
        let contrast = |g: &PsiGroup, k: usize| -> (f64, Option<f64>) {
            let est = g.estimates[k] - g.estimates[r];
            let se = (!g.columns.is_empty()).then(|| {
                let d: Vec<f64> = g.columns[k].iter().zip(&g.columns[r]).map(|(a, b)| a - b).collect();
                se_of(&d)
            });
            (est, se)
        };
        if cfg.curves.mean && want_psi {
            for (k, &t) in t_grid.iter().enumerate() {
                let (est, se) = contrast(&mean_group, k);
                rows.push(ResultRow {
                    curve: "mean_contrast",
                    cell_t: t,
                    cell_y_or_tau: None,
                    estimate: est,
                    se: se.filter(|_| cfg.inference.pointwise),
                    band: None,
                    flags: vec!["mean_contrast".into()],
                });
            }
        }
        if cfg.curves.quantile && want_psi {
            for (j, &tau) in cfg.grid.tau.iter().enumerate() {
                for (k, &t) in t_grid.iter().enumerate() {
                    let (est, se) = contrast(&q_groups[j], k);
                    let censored = q_censored[j][k] || q_censored[j][r];
                    let mut flags = vec!["qte".to_string()];
                    if censored {
                        flags.push("censored".into());
                    }
                    rows.push(ResultRow {
                        curve: "qte",
                        cell_t: t,
                        cell_y_or_tau: Some(tau),
                        estimate: est,
                        se: se.filter(|_| cfg.inference.pointwise && !censored),
                        band: None,
                        flags,
                    });
                }
            }
        }
    }

    // Bounds for the trimmed-away share.
    if let (Some(y_l), Some(y_u)) = (cfg.y_lower, cfg.y_upper) {
        if cfg.curves.mean {
            let mean: Vec<f64> = rows.iter().filter(|r| r.curve == "mean").map(|r| r.estimate).collect();
            let b = functionals::asf_bounds(&mean, &t_grid, trimmed_share, y_l, y_u).at(Stage::Functionals)?;
            let (lo, hi) = (b.lower.expect("bounds"), b.upper.expect("bounds"));
            for (k, &t) in t_grid.iter().enumerate() {
                rows.push(ResultRow {
                    curve: "asf_bounds",
                    cell_t: t,
                    cell_y_or_tau: None,
                    estimate: mean[k],
                    se: None,
                    band: Some((lo[k], hi[k])),
                    flags: vec!["asf_bounds".into()],
                });
            }
        }
        if cfg.curves.quantile {
            for &tau in &cfg.grid.tau {
                for (k, &t) in t_grid.iter().enumerate() {
                    let curve = &cdf_curves[k];
                    let (lo, hi) =
                        functionals::qsf_bounds(curve, &y_grid, tau, trimmed_share, y_l, y_u, cfg.quantile_mode)
                            .at(Stage::Functionals)?;
                    let point = functionals::invert_curve(curve, &y_grid, tau, cfg.quantile_mode)
                        .at(Stage::Functionals)?
                        .value;
                    rows.push(ResultRow {
                        curve: "qsf_bounds",
                        cell_t: t,
                        cell_y_or_tau: Some(tau),
                        estimate: point,
                        se: None,
                        band: Some((lo, hi)),
                        flags: vec!["qsf_bounds".into()],
                    });
                }
            }
        }
    }

    let _ = writeln!(
        report,
        "step2 order: {}, kernel: {}",
        cfg.step2.order.name(),
        cfg.step2.kernel.name()
    );
    let _ = writeln!(report, "step2 bandwidths (T, regressors...) per t:");
    for (t, h) in &bandwidth_lines {
        let hs: Vec<String> = h.iter().map(f64::to_string).collect();
        let _ = writeln!(report, "  t={t}: {}", hs.join(", "));
    }
    let _ = writeln!(report, "local-linear fallbacks to local constant: {fallbacks}");
    if cfg.curves.quantile {
        let _ = writeln!(report, "quantile density bandwidth: {hy}, floor: {floor}");
    }
    if cfg.inference.bootstrap > 0 {
        let _ = writeln!(
            report,
            "multiplier bootstrap: {} draws, alpha {}, {}",
            cfg.inference.bootstrap,
            cfg.inference.alpha,
            if cfg.inference.studentized {
                "studentized"
            } else {
                "raw"
            }
        );
        for l in &critical_lines {
            let _ = writeln!(report, "{l}");
        }
        for (t, cv) in &cdf_critical {
            let _ = writeln!(
                report,
                "  cdf t={t}: {}",
                cv.map_or("degenerate".into(), |c| c.to_string())
            );
        }
    }
    if !bias_lines.is_empty() {
        let _ = writeln!(report, "leading bias (local constant):");
        for l in &bias_lines {
            let _ = writeln!(report, "{l}");
        }
    }

    let mut psi = Vec::new();
    if want_psi {
        if cfg.curves.mean {
            psi.push(mean_group);
        }
        if cfg.curves.quantile {
            psi.extend(q_groups);
        }
    }
    Ok(EstimateRun {
        t_grid,
        y_grid,
        rows,
        psi,
        threshold,
        trimmed_share,
        fallbacks,
        report,
    })
}

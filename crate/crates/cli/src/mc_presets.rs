//! Monte Carlo designs: a data-generating process, an estimator config and
//! the cells to score against the oracle.

use drfkit_core::inference::Denominator;
use drfkit_core::partial_mean::WeightKind;
use drfkit_core::sim::{self, Dgp, McReport, Replication};
use drfkit_core::{LocalOrder, Sample};

use crate::config::{Curves, GridSpec, RunConfig, Step1Kind};
use crate::error::{AtStage, CliError, Result, Stage};
use crate::estimate::{run_estimate, ResultRow};

/// Cells scored in each replication.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `E[Y(t)]` on the listed levels.
    Mean(Vec<f64>),
    /// `F_{Y(t)}(y)` on `t × y`.
    Cdf { t: Vec<f64>, y: Vec<f64> },
    /// `Q_τ(Y(t))` on the listed levels.
    Quantile { t: Vec<f64>, tau: f64 },
    /// `E[Y(t) | T = t̄]` on the listed levels.
    TreatedMean { t: Vec<f64>, t_bar: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPreset {
    pub name: String,
    pub dgp: Dgp,
    pub n: usize,
    pub reps: usize,
    pub config: RunConfig,
    pub target: Target,
}

pub const PRESET_NAMES: &[&str] = &[
    "smoke",
    "consistency",
    "rate_small",
    "rate_large",
    "cdf_coverage",
    "cdf_band",
    "quantile_se",
    "treated",
    "index_x",
    "index_gps",
];

/// Config skeleton for simulated data: synthetic column names, no trimming,
/// local linear Step 2 with `C = 5`, pointwise standard errors.
pub fn simulation_config(dgp: Dgp) -> RunConfig {
    let mut c = RunConfig::default();
    c.roles.outcome = "y".into();
    c.roles.treatment = "t".into();
    match dgp {
        Dgp::Triangular { .. } => {
            c.roles.instruments = vec!["z".into()];
            c.step1.kind = Step1Kind::ControlCdf;
        }
        Dgp::IndexBias => {
            c.roles.covariates = vec!["x1".into(), "x2".into()];
            c.step1.kind = Step1Kind::Observed;
        }
        _ => {
            c.roles.covariates = vec!["x".into()];
            c.step1.kind = Step1Kind::Observed;
        }
    }
    c.trimming.enabled = false;
    c.rearrange = false;
    c
}

impl McPreset {
    pub fn new(name: &str, dgp: Dgp, n: usize, reps: usize, target: Target) -> Self {
        let mut config = simulation_config(dgp);
        match &target {
            Target::Mean(t) | Target::TreatedMean { t, .. } => {
                config.grid.t = GridSpec::List(t.clone());
                config.curves = Curves {
                    mean: true,
                    cdf: false,
                    quantile: false,
                };
            }
            Target::Cdf { t, y } => {
                config.grid.t = GridSpec::List(t.clone());
                config.grid.y = GridSpec::List(y.clone());
                config.curves = Curves {
                    mean: false,
                    cdf: true,
                    quantile: false,
                };
            }
            Target::Quantile { t, tau } => {
                config.grid.t = GridSpec::List(t.clone());
                config.grid.tau = vec![*tau];
                config.curves = Curves {
                    mean: false,
                    cdf: false,
                    quantile: true,
                };
            }
        }
        if let Target::TreatedMean { t_bar, .. } = target {
            config.weights.kind = WeightKind::TreatedMle;
            config.weights.t_bar = Some(t_bar);
        }
        Self {
            name: name.into(),
            dgp,
            n,
            reps,
            config,
            target,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match &self.target {
            Target::Mean(t) | Target::TreatedMean { t, .. } => t.iter().map(|t| format!("t={t}")).collect(),
            Target::Cdf { t, y } => t
                .iter()
                .flat_map(|t| y.iter().map(move |y| format!("t={t} y={y}")))
                .collect(),
            Target::Quantile { t, tau } => t.iter().map(|t| format!("t={t} tau={tau}")).collect(),
        }
    }

    pub fn truth(&self) -> Result<Vec<f64>> {
        let d = self.dgp;
        let r: drfkit_core::Result<Vec<f64>> = match &self.target {
            Target::Mean(t) => t.iter().map(|&t| d.drf(t)).collect(),
            Target::Cdf { t, y } => t.iter().flat_map(|&t| y.iter().map(move |&y| d.cdf(t, y))).collect(),
            Target::Quantile { t, tau } => t.iter().map(|&t| d.quantile(t, *tau)).collect(),
            Target::TreatedMean { t, t_bar } => t.iter().map(|&t| d.treated_mean(t, *t_bar)).collect(),
        };
        r.at(Stage::Simulation)
    }

    fn curve(&self) -> &'static str {
        match self.target {
            Target::Mean(_) | Target::TreatedMean { .. } => "mean",
            Target::Cdf { .. } => "cdf",
            Target::Quantile { .. } => "quantile",
        }
    }

    /// Estimates on one simulated sample.
    pub fn estimate(&self, sample: &Sample) -> Result<Replication> {
        let run = run_estimate(&self.config, sample)?;
        let curve = self.curve();
        let rows: Vec<&ResultRow> = run.rows.iter().filter(|r| r.curve == curve).collect();
        let estimates = rows.iter().map(|r| r.estimate).collect();
        let se = rows.iter().map(|r| r.se.unwrap_or(f64::NAN)).collect();
        let band_halfwidth = (self.config.inference.bootstrap > 0).then(|| {
            rows.iter()
                .map(|r| r.band.map_or(f64::NAN, |b| 0.5 * (b.1 - b.0)))
                .collect()
        });
        Ok(Replication {
            estimates,
            se,
            band_halfwidth,
        })
    }

    pub fn sample(&self, seed: u64) -> Result<Sample> {
        self.dgp.generate(self.n, seed).at(Stage::Simulation)
    }

    pub fn run(&self, seed: u64) -> Result<McReport> {
        let truth = self.truth()?;
        sim::run_mc(self.reps, seed, &truth, |s, _| {
            let sample = self.dgp.generate(self.n, s)?;
            self.estimate(&sample).map_err(to_core)
        })
        .at(Stage::Simulation)
    }
}

/// Carries a pipeline error through the core MC driver, which counts it.
fn to_core(e: CliError) -> drfkit_core::Error {
    match e {
        CliError::Module { source, .. } => source,
        other => drfkit_core::Error::OracleDomain(other.to_string()),
    }
}

pub fn preset(name: &str) -> Result<McPreset> {
    let p = match name {
        "smoke" => McPreset::new(name, Dgp::Location, 200, 1, Target::Mean(vec![0.0])),
        // Local linear, Y linear in (T, X): large-sample dose response.
        "consistency" => McPreset::new(
            name,
            Dgp::Location,
            2000,
            50,
            Target::Mean(vec![-1.0, -0.5, 0.0, 0.5, 1.0]),
        ),
        "rate_small" | "rate_large" => {
            let n = if name == "rate_small" { 1000 } else { 4000 };
            let mut p = McPreset::new(name, Dgp::Location, n, 200, Target::Mean(vec![0.5]));
            p.config.step2.bandwidth_c = 1.0;
            p.config.inference.pointwise = false;
            p
        }
        "cdf_coverage" => McPreset::new(
            name,
            Dgp::Independence,
            2000,
            200,
            Target::Cdf {
                t: vec![0.0],
                y: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            },
        ),
        "cdf_band" => {
            let mut p = McPreset::new(
                name,
                Dgp::Independence,
                2000,
                200,
                Target::Cdf {
                    t: vec![0.0],
                    y: (1..10).map(|k| k as f64 / 10.0).collect(),
                },
            );
            p.config.inference.bootstrap = 500;
            p
        }
        "quantile_se" => {
            let mut p = McPreset::new(
                name,
                Dgp::Location,
                5000,
                200,
                Target::Quantile { t: vec![0.5], tau: 0.5 },
            );
            p.config.grid.y = GridSpec::Auto {
                points: 199,
                lo: 0.005,
                hi: 0.995,
            };
            p.config.step2.bandwidth_c = 1.0;
            p.config.rearrange = true;
            p.config.inference.finite_sample_terms = true;
            p
        }
        "treated" => {
            let mut p = McPreset::new(
                name,
                Dgp::lognormal(),
                4000,
                200,
                Target::TreatedMean {
                    t: vec![1.0, 2.5],
                    t_bar: 0.5f64.exp(),
                },
            );
            p.config.step1.kind = Step1Kind::GpsMle;
            p.config.step2.bandwidth_c = 1.0;
            p.config.inference.finite_sample_terms = true;
            p.config.inference.denominator = Some(Denominator::Equivalent);
            p
        }
        "index_x" | "index_gps" => {
            let mut p = McPreset::new(name, Dgp::IndexBias, 1000, 200, Target::Mean(vec![0.0]));
            p.config.step2.order = LocalOrder::Linear;
            if name == "index_gps" {
                p.config.step1.kind = Step1Kind::GpsMle;
                p.config.step1.family = drfkit_core::first_stage::GpsFamily::Normal;
            }
            p.config.inference.pointwise = false;
            p
        }
        other => {
            return Err(CliError::config(
                "preset",
                format!("unknown preset `{other}`; known: {}", PRESET_NAMES.join(", ")),
            ))
        }
    };
    Ok(p)
}

/// A preset built from a user config: the target is the mean curve on the
/// config's t grid, or the CDF on `t × y` when the mean is not requested.
pub fn from_config(dgp: Dgp, config: RunConfig, n: usize, reps: usize) -> Result<McPreset> {
    let t = match &config.grid.t {
        GridSpec::Auto { .. } => return Err(CliError::config("grid.t", "simulation needs an explicit t grid")),
        g => g.resolve("grid.t", &[])?,
    };
    let target = if config.curves.mean {
        match (config.weights.kind.is_treated(), config.weights.t_bar) {
            (true, Some(t_bar)) => Target::TreatedMean { t, t_bar },
            _ => Target::Mean(t),
        }
    } else if config.curves.cdf {
        let y = match &config.grid.y {
            GridSpec::Auto { .. } => return Err(CliError::config("grid.y", "simulation needs an explicit y grid")),
            g => g.resolve("grid.y", &[])?,
        };
        Target::Cdf { t, y }
    } else {
        Target::Quantile {
            t,
            tau: config.grid.tau[0],
        }
    };
    let mut curves = config.curves;
    match target {
        Target::Mean(_) | Target::TreatedMean { .. } => {
            curves.cdf = false;
            curves.quantile = false;
        }
        Target::Cdf { .. } => curves.quantile = false,
        Target::Quantile { .. } => {}
    }
    Ok(McPreset {
        name: "config".into(),
        dgp,
        n,
        reps,
        config: RunConfig { curves, ..config },
        target,
    })
}

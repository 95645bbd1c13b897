use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drfkit::config::RunConfig;
use drfkit::error::{AtStage, CliError, Result, Stage};
use drfkit::{acceptance, mc_presets, results};
use drfkit_core::sim::Dgp;

#[derive(Parser)]
#[command(
    name = "drfkit",
    version,
    about = "Dose-response functions and distributions for continuous treatments"
)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "DRFKIT_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Starting preset (`default`, `application`) applied before the file.
    #[arg(long, default_value = "default")]
    preset: String,
    /// `key=value` overrides applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate dose-response curves from a CSV file.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input CSV (overrides `data.path`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Monte Carlo study on a simulated design.
    Simulate {
        /// Built-in study; see `--list`.
        #[arg(long, conflicts_with = "dgp")]
        study: Option<String>,
        /// Design for a config-driven study: lognormal, independence,
        /// location, triangular, index_bias.
        #[arg(long)]
        dgp: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Writes the per-cell summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Lists the built-in studies.
        #[arg(long)]
        list: bool,
    },
    /// Recompute uniform bands from an influence dump.
    Bootstrap {
        /// `psi.csv` written with `output.psi_dump = true`.
        #[arg(long)]
        psi: PathBuf,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sup of raw rather than studentized draws.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite; optionally only the listed criteria.
    Acceptance {
        criteria: Vec<usize>,
        #[arg(long, default_value_t = 20_261_016)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    if let Err(e) = pool {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Estimate { cfg, data, out } => {
            let mut c = cfg.resolve()?;
            if let Some(d) = data {
                c.data_path = Some(d.display().to_string());
            }
            if let Some(o) = out {
                c.output_dir = o.display().to_string();
            }
            let files = drfkit::estimate_to_dir(&c, Path::new(&c.output_dir))?;
            println!("wrote {}", files.results.display());
            println!("wrote {}", files.report.display());
            if let Some(p) = files.psi {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Config { cfg } => {
            let c = cfg.resolve()?;
            print!("{}", c.render());
            Ok(true)
        }
        Command::Simulate {
            study,
            dgp,
            cfg,
            n,
            reps,
            seed,
            out,
            list,
        } => {
            if list {
                for name in mc_presets::PRESET_NAMES {
                    let p = mc_presets::preset(name)?;
                    println!("{name}: {} design, n = {}, {} reps", p.dgp.name(), p.n, p.reps);
                }
                return Ok(true);
            }
            let mut study = match (study, dgp) {
                (Some(name), _) => {
                    let mut p = mc_presets::preset(&name)?;
                    p.config.apply_overrides(&cfg.overrides)?;
                    p
                }
                (None, Some(d)) => {
                    let d = Dgp::parse(&d).at(Stage::Simulation)?;
                    let mut base = mc_presets::simulation_config(d);
                    if let Some(p) = &cfg.config {
                        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                        base.apply_text(&text)?;
                    }
                    base.apply_overrides(&cfg.overrides)?;
                    mc_presets::from_config(d, base, 1000, 100)?
                }
                (None, None) => return Err(CliError::config("simulate", "give --study or --dgp")),
            };
            if let Some(n) = n {
                study.n = n;
            }
            if let Some(r) = reps {
                study.reps = r;
            }
            let report = study.run(seed)?;
            let labels = study.labels();
            println!(
                "{}: {} design, n = {}, {} reps, {} failed",
                study.name,
                study.dgp.name(),
                study.n,
                report.reps,
                report.failures
            );
            for m in &report.failure_messages {
                println!("  failure: {m}");
            }
            for (c, l) in report.cells.iter().zip(&labels) {
                println!(
                    "  {l}: truth {:.4}, bias {:.4}, rmse {:.4}, mc sd {:.4}, se/sd {:.3}, coverage {:.3}",
                    c.truth, c.bias, c.rmse, c.mc_sd, c.se_ratio, c.coverage
                );
            }
            if let Some((p, se)) = report.uniform_coverage {
                println!("  uniform band coverage {p:.3} (mc se {se:.3})");
            }
            if let Some(path) = out {
                results::write_file(&path, &report.to_csv(&labels))?;
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Bootstrap {
            psi,
            draws,
            alpha,
            seed,
            raw,
            out,
        } => {
            let text = std::fs::read_to_string(&psi).map_err(|e| CliError::io(&psi, e))?;
            let (groups, n) = results::parse_psi(&text)?;
            let rows = results::reband(&groups, n, draws, alpha, seed, !raw)?;
            let header = format!(
                "# source={}\n# bootstrap.draws={draws}\n# bootstrap.alpha={alpha}\n# bootstrap.seed={seed}\n# bootstrap.studentized={}\n",
                psi.display(),
                !raw
            );
            results::write_file(&out, &results::render_results(&header, &rows)?)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Acceptance { criteria, seed } => {
            let known = acceptance::criterion_ids();
            if let Some(bad) = criteria.iter().find(|c| !known.contains(c)) {
                return Err(CliError::config("criteria", format!("no criterion {bad}")));
            }
            let outcomes = acceptance::run(&criteria, seed, |o| println!("{}", o.line()));
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
            Ok(failed == 0)
        }
    }
}

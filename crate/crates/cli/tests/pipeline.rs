use std::process::Command;

use drfkit::config::RunConfig;
use drfkit::data::write_sample_csv;
use drfkit::mc_presets::{preset, simulation_config};
use drfkit::results::{parse_psi, reband, RESULT_COLUMNS};
use drfkit_core::sim::{self, Dgp};

fn location_csv(dir: &std::path::Path, n: usize) -> String {
    let s = Dgp::Location.generate(n, 9).unwrap();
    let path = dir.join("data.csv");
    write_sample_csv(&path, &s, "y", "t", &["x".into()], &[], None).unwrap();
    path.display().to_string()
}

fn config(data: &str) -> RunConfig {
    let mut c = simulation_config(Dgp::Location);
    c.data_path = Some(data.to_string());
    for (k, v) in [
        ("grid.t", "-0.5:0.5:0.5"),
        ("grid.y", "auto:15:0.1:0.9"),
        ("curves", "mean,cdf,quantile"),
        ("trimming.enabled", "true"),
        ("inference.bootstrap", "100"),
        ("output.psi_dump", "true"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn estimate_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&location_csv(dir.path(), 300));
    let files = drfkit::estimate_to_dir(&cfg, &dir.path().join("out")).unwrap();
    let results = std::fs::read_to_string(&files.results).unwrap();
    let body: Vec<&str> = results.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], RESULT_COLUMNS.join(","));
    for curve in ["mean", "cdf", "quantile"] {
        assert!(
            body.iter()
                .any(|l| l.ends_with(curve) || l.contains(&format!(",{curve};"))),
            "{curve}"
        );
    }
    assert!(results.contains("# data.rows_read=300"));
    let report = std::fs::read_to_string(&files.report).unwrap();
    assert!(report.contains("trimmed share"));

    // The dump re-bands to the same standard errors.
    let (groups, n) = parse_psi(&std::fs::read_to_string(files.psi.unwrap()).unwrap()).unwrap();
    assert_eq!(n, 300);
    let rows = reband(&groups, n, 200, 0.05, 3, true).unwrap();
    assert_eq!(rows.len(), groups.iter().map(|g| g.cells.len()).sum::<usize>());
    assert!(rows
        .iter()
        .all(|r| r.band.is_some_and(|b| b.0 <= r.estimate && r.estimate <= b.1)));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&location_csv(dir.path(), 250));
    let mut seen = Vec::new();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = dir.path().join(format!("out{threads}"));
        let files = pool.install(|| drfkit::estimate_to_dir(&cfg, &out)).unwrap();
        seen.push((
            std::fs::read(files.results).unwrap(),
            std::fs::read(files.psi.unwrap()).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn single_replication_study_runs() {
    let p = preset("smoke").unwrap();
    let r = p.run(4).unwrap();
    assert_eq!((r.reps, r.failures), (1, 0));
    assert!(r.cells[0].bias.is_finite());
}

#[test]
fn failed_replications_are_counted() {
    let r = sim::run_mc(6, 1, &[0.0], |seed, rep| {
        if rep % 3 == 0 {
            Err(drfkit_core::Error::OracleDomain("forced failure".into()))
        } else {
            Ok(sim::scalar((seed % 7) as f64 * 0.01, 0.1))
        }
    })
    .unwrap();
    assert_eq!(r.failures, 2);
    assert_eq!(r.replications.len(), 4);
    assert!(r.failure_messages.iter().all(|m| m.contains("forced failure")));
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let exe = env!("CARGO_BIN_EXE_drfkit");
    let out = Command::new(exe)
        .args(["config", "--set", "no.such.key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));

    let out = Command::new(exe)
        .args(["config", "--set", "grid.t=1,2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("grid.t = 1,2"));
}

#[test]
fn binary_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = location_csv(dir.path(), 200);
    let exe = env!("CARGO_BIN_EXE_drfkit");
    let out_dir = dir.path().join("cli-out");
    let out = Command::new(exe)
        .env("DRFKIT_THREADS", "2")
        .args([
            "estimate",
            "--data",
            &data,
            "--out",
            out_dir.to_str().unwrap(),
            "--set",
            "roles.outcome=y",
            "--set",
            "roles.treatment=t",
            "--set",
            "roles.covariates=x",
            "--set",
            "step1.kind=observed",
            "--set",
            "grid.t=0",
            "--set",
            "curves=mean",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("0,,")));
}

#[test]
fn observed_covariates_pass_straight_through() {
    use drfkit_core::partial_mean::{estimate_mean_process, PartialMean, WeightScheme};
    let s = Dgp::Location.generate(400, 21).unwrap();
    let mut cfg = simulation_config(Dgp::Location);
    cfg.set("grid.t", "-1,0,1").unwrap();
    cfg.set("curves", "mean").unwrap();
    cfg.set("inference.pointwise", "false").unwrap();
    let run = drfkit::estimate::run_estimate(&cfg, &s).unwrap();
    let pm = PartialMean::new(
        &s,
        cfg.first_stage(),
        cfg.step2(),
        vec![true; s.n()],
        &WeightScheme::unit(),
    )
    .unwrap();
    let direct = estimate_mean_process(&pm, &[-1.0, 0.0, 1.0], None).unwrap();
    let ours: Vec<f64> = run
        .rows
        .iter()
        .filter(|r| r.curve == "mean")
        .map(|r| r.estimate)
        .collect();
    assert_eq!(ours, direct.values.column(0));
}

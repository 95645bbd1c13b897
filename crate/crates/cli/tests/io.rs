use drfkit::config::Roles;
use drfkit::data::{ingest_csv, write_sample_csv};
use drfkit_core::sim::Dgp;

fn roles(cov: &[&str], inst: &[&str]) -> Roles {
    Roles {
        outcome: "y".into(),
        treatment: "t".into(),
        covariates: cov.iter().map(|s| s.to_string()).collect(),
        instruments: inst.iter().map(|s| s.to_string()).collect(),
        weight: None,
    }
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (dgp, cov, inst) in [
        (Dgp::IndexBias, vec!["x1", "x2"], vec![]),
        (Dgp::triangular(), vec![], vec!["z"]),
        (Dgp::lognormal(), vec!["x"], vec![]),
    ] {
        let s = dgp.generate(257, 5).unwrap();
        let path = dir.path().join(format!("{}.csv", dgp.name()));
        let cov_names: Vec<String> = cov.iter().map(|s| s.to_string()).collect();
        let inst_names: Vec<String> = inst.iter().map(|s| s.to_string()).collect();
        write_sample_csv(&path, &s, "y", "t", &cov_names, &inst_names, None).unwrap();
        let back = ingest_csv(&path, &roles(&cov, &inst)).unwrap();
        assert_eq!(back.rows_read, 257);
        assert_eq!(back.rows_dropped, 0);
        assert_eq!(back.sample, s, "{}", dgp.name());
    }
}

#[test]
fn missing_file_and_column_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let e = ingest_csv(&missing, &roles(&["x"], &[])).unwrap_err();
    assert!(e.to_string().contains("nope.csv"));
    let path = dir.path().join("a.csv");
    std::fs::write(&path, "y,t\n1,2\n").unwrap();
    let e = ingest_csv(&path, &roles(&["x"], &[])).unwrap_err();
    assert!(e.to_string().contains('x'), "{e}");
}

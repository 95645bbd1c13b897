//! Result files: the results table, the run report, and influence dumps.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::estimate::{band_halfwidths, se_of, PsiGroup, ResultRow};

pub const RESULT_COLUMNS: [&str; 7] = [
    "cell_t",
    "cell_y_or_tau",
    "estimate",
    "se",
    "band_lo",
    "band_hi",
    "flags",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `# key=value` provenance lines: the resolved config plus `extra`.
pub fn provenance(cfg: &RunConfig, extra: &[(String, String)]) -> String {
    let mut out = cfg.provenance_header();
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

/// Results table with a provenance header. Floats are written in their
/// shortest round-trip form.
pub fn render_results(header: &str, rows: &[ResultRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let err = |source| CliError::Csv {
        path: "results.csv".into(),
        source,
    };
    wtr.write_record(RESULT_COLUMNS).map_err(err)?;
    for r in rows {
        wtr.write_record([
            r.cell_t.to_string(),
            opt(r.cell_y_or_tau),
            r.estimate.to_string(),
            opt(r.se),
            opt(r.band.map(|b| b.0)),
            opt(r.band.map(|b| b.1)),
            r.flags.join(";"),
        ])
        .map_err(err)?;
    }
    let body = wtr
        .into_inner()
        .map_err(|e| CliError::io("results.csv", e.into_error()))?;
    Ok(format!("{header}{}", String::from_utf8(body).expect("ascii output")))
}

/// One row per cell: `curve, cell_t, cell_y_or_tau, estimate, ψ₁ … ψₙ`, with
/// `ψ` on the estimate scale.
pub fn render_psi(header: &str, groups: &[PsiGroup]) -> String {
    let mut out = String::from(header);
    for g in groups {
        for ((cell, est), col) in g.cells.iter().zip(&g.estimates).zip(&g.columns) {
            let _ = write!(out, "{},{},{},{}", g.curve, cell.0, opt(cell.1), est);
            for p in col {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parses a dump back into curve groups (consecutive rows with the same
/// curve and, for quantiles, the same `τ`) and returns them with `n`.
pub fn parse_psi(text: &str) -> Result<(Vec<PsiGroup>, usize)> {
    let mut groups: Vec<PsiGroup> = Vec::new();
    let mut n = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| CliError::PsiDump(format!("line {}: {why}", lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(bad("expected curve, cell_t, cell_y_or_tau, estimate and psi values"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
        let curve = fields[0].to_string();
        let t = num(fields[1])?;
        let y = if fields[2].is_empty() {
            None
        } else {
            Some(num(fields[2])?)
        };
        let est = num(fields[3])?;
        let col: Vec<f64> = fields[4..].iter().map(|s| num(s)).collect::<Result<_>>()?;
        match n {
            None => n = Some(col.len()),
            Some(m) if m != col.len() => return Err(bad("rows have different observation counts")),
            _ => {}
        }
        let key_tau = if curve == "quantile" { y } else { None };
        let same = groups
            .last()
            .is_some_and(|g| g.curve == curve && (curve != "quantile" || g.cells.last().map(|c| c.1) == Some(key_tau)));
        if !same {
            groups.push(PsiGroup {
                curve: curve.clone(),
                cells: Vec::new(),
                estimates: Vec::new(),
                columns: Vec::new(),
            });
        }
        let g = groups.last_mut().expect("pushed");
        g.cells.push((t, y));
        g.estimates.push(est);
        g.columns.push(col);
    }
    let n = n.ok_or_else(|| CliError::PsiDump("no rows".into()))?;
    Ok((groups, n))
}

/// Re-bands every group of a dump.
pub fn reband(
    groups: &[PsiGroup],
    n: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
    studentized: bool,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let s = drfkit_core::rng::derive_seed(seed, 1_000_000 + gi as u64);
        let (hw, _) = band_halfwidths(g, n, draws, alpha, s, studentized)?;
        let curve: &'static str = match g.curve.as_str() {
            "mean" => "mean",
            "quantile" => "quantile",
            "cdf" => "cdf",
            _ => "values",
        };
        for (k, (&cell, &est)) in g.cells.iter().zip(&g.estimates).enumerate() {
            rows.push(ResultRow {
                curve,
                cell_t: cell.0,
                cell_y_or_tau: cell.1,
                estimate: est,
                se: Some(se_of(&g.columns[k])),
                band: Some((est - hw[k], est + hw[k])),
                flags: vec![curve.to_string()],
            });
        }
    }
    Ok(rows)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_round_trip() {
        let g = PsiGroup {
            curve: "quantile".into(),
            cells: vec![(1.0, Some(0.5)), (2.0, Some(0.5))],
            estimates: vec![0.1, 0.2],
            columns: vec![vec![1.0, -2.0, 0.1], vec![0.3, 1e-17, -4.5]],
        };
        let h = PsiGroup {
            curve: "quantile".into(),
            cells: vec![(1.0, Some(0.75))],
            estimates: vec![0.4],
            columns: vec![vec![0.5, 0.25, 1.0 / 3.0]],
        };
        let text = render_psi("# x=1\n", &[g.clone(), h.clone()]);
        let (back, n) = parse_psi(&text).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back, vec![g, h]);
    }

    #[test]
    fn results_columns_are_fixed() {
        let rows = vec![ResultRow {
            curve: "mean",
            cell_t: 1.5,
            cell_y_or_tau: None,
            estimate: 0.1 + 0.2,
            se: Some(0.01),
            band: None,
            flags: vec!["mean".into(), "fallback=2".into()],
        }];
        let s = render_results("# a=b\n", &rows).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# a=b");
        assert_eq!(lines[1], "cell_t,cell_y_or_tau,estimate,se,band_lo,band_hi,flags");
        assert_eq!(lines[2], "1.5,,0.30000000000000004,0.01,,,mean;fallback=2");
    }
}

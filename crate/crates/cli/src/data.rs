//! CSV ingestion and emission of samples.

use std::io::Read;
use std::path::Path;

use drfkit_core::math;
use drfkit_core::{Matrix, Sample};

use crate::config::Roles;
use crate::error::{AtStage, CliError, Result, Stage};

/// A sample plus what ingestion did to get it.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub sample: Sample,
    /// Covariate column names, missing indicators appended as `<name>_missing`.
    pub covariate_names: Vec<String>,
    pub instrument_names: Vec<String>,
    pub rows_read: usize,
    /// Rows dropped for a missing outcome, treatment or weight.
    pub rows_dropped: usize,
    /// `(column, imputed cells, median)` for each column that had gaps.
    pub imputed: Vec<(String, usize, f64)>,
}

fn is_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

pub fn ingest_csv(path: &Path, roles: &Roles) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, path, roles)
}

pub fn ingest_reader<R: Read>(reader: R, label: &Path, roles: &Roles) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |source| CliError::Csv {
        path: label.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let y_col = find(&roles.outcome)?;
    let t_col = find(&roles.treatment)?;
    let w_col = roles.weight.as_deref().map(find).transpose()?;
    let x_cols: Vec<usize> = roles.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let z_cols: Vec<usize> = roles.instruments.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let cell = |raw: &str, row: usize, col: usize| -> Result<Option<f64>> {
        if is_missing(raw) {
            return Ok(None);
        }
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| CliError::NonNumeric {
                row,
                column: headers[col].to_string(),
                value: raw.to_string(),
            })
    };

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut w = Vec::new();
    let mut x: Vec<Vec<Option<f64>>> = vec![Vec::new(); x_cols.len()];
    let mut z: Vec<Vec<Option<f64>>> = vec![Vec::new(); z_cols.len()];
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        rows_read += 1;
        let row = rec.position().map_or(rows_read + 1, |p| p.line() as usize);
        let get = |c: usize| rec.get(c).unwrap_or("");
        // Parse everything first so a malformed cell is reported even on a dropped row.
        let yi = cell(get(y_col), row, y_col)?;
        let ti = cell(get(t_col), row, t_col)?;
        let wi = w_col.map(|c| cell(get(c), row, c)).transpose()?;
        let xi: Vec<Option<f64>> = x_cols.iter().map(|&c| cell(get(c), row, c)).collect::<Result<_>>()?;
        let zi: Vec<Option<f64>> = z_cols.iter().map(|&c| cell(get(c), row, c)).collect::<Result<_>>()?;
        let (Some(yi), Some(ti)) = (yi, ti) else {
            rows_dropped += 1;
            continue;
        };
        if let Some(None) = wi {
            rows_dropped += 1;
            continue;
        }
        y.push(yi);
        t.push(ti);
        if let Some(Some(v)) = wi {
            w.push(v);
        }
        for (col, v) in x.iter_mut().zip(xi) {
            col.push(v);
        }
        for (col, v) in z.iter_mut().zip(zi) {
            col.push(v);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::NoRows);
    }

    let mut imputed = Vec::new();
    let (x_mat, covariate_names) = impute(&x, &roles.covariates, n, &mut imputed);
    let (z_mat, instrument_names) = impute(&z, &roles.instruments, n, &mut imputed);
    let mut sample = Sample::new(y, t, x_mat).at(Stage::PartialMean)?;
    if !z_cols.is_empty() {
        sample = sample.with_instruments(z_mat).at(Stage::PartialMean)?;
    }
    if w_col.is_some() {
        sample = sample.with_weights(w).at(Stage::PartialMean)?;
    }
    Ok(Ingested {
        sample,
        covariate_names,
        instrument_names,
        rows_read,
        rows_dropped,
        imputed,
    })
}

/// Median fill plus a 0/1 missing indicator for every column with gaps.
fn impute(
    cols: &[Vec<Option<f64>>],
    names: &[String],
    n: usize,
    log: &mut Vec<(String, usize, f64)>,
) -> (Matrix, Vec<String>) {
    let mut out = Vec::new();
    let mut out_names: Vec<String> = names.to_vec();
    let mut indicators = Vec::new();
    for (col, name) in cols.iter().zip(names) {
        let present: Vec<f64> = col.iter().flatten().copied().collect();
        let missing = n - present.len();
        if missing == 0 {
            out.push(present);
            continue;
        }
        let median = if present.is_empty() {
            0.0
        } else {
            math::quantile(&present, 0.5)
        };
        out.push(col.iter().map(|v| v.unwrap_or(median)).collect());
        indicators.push(col.iter().map(|v| if v.is_none() { 1.0 } else { 0.0 }).collect());
        out_names.push(format!("{name}_missing"));
        log.push((name.clone(), missing, median));
    }
    out.extend(indicators);
    let m = if out.is_empty() {
        Matrix::empty(n)
    } else {
        Matrix::from_columns(n, &out).expect("columns share the row count")
    };
    (m, out_names)
}

/// Writes a sample as CSV with the given column names. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_sample_csv(
    path: &Path,
    sample: &Sample,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
    instruments: &[String],
    weight: Option<&str>,
) -> Result<()> {
    let x = sample.covariates();
    let z = sample.instruments();
    if covariates.len() != x.cols() || instruments.len() != z.cols() {
        return Err(CliError::config("roles", "column names do not match the sample"));
    }
    let mut wtr = csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut header: Vec<&str> = vec![outcome, treatment];
    header.extend(covariates.iter().map(String::as_str));
    header.extend(instruments.iter().map(String::as_str));
    let weights = sample.weights();
    if let (Some(name), Some(_)) = (weight, weights) {
        header.push(name);
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..sample.n() {
        let mut rec = vec![sample.outcome()[i].to_string(), sample.treatment()[i].to_string()];
        rec.extend(x.row(i).iter().map(f64::to_string));
        rec.extend(z.row(i).iter().map(f64::to_string));
        if let (Some(_), Some(w)) = (weight, weights) {
            rec.push(w[i].to_string());
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(cov: &[&str]) -> Roles {
        Roles {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: cov.iter().map(|s| s.to_string()).collect(),
            instruments: vec![],
            weight: None,
        }
    }

    fn ingest(text: &str, r: &Roles) -> Result<Ingested> {
        ingest_reader(text.as_bytes(), Path::new("mem.csv"), r)
    }

    #[test]
    fn complete_file_adds_no_indicators() {
        let d = ingest("y,t,a\n1,2,3\n4,5,6\n", &roles(&["a"])).unwrap();
        assert_eq!(d.sample.covariates().cols(), 1);
        assert_eq!(d.rows_dropped, 0);
        assert!(d.imputed.is_empty());
    }

    #[test]
    fn half_missing_covariate_gets_median_and_indicator() {
        let d = ingest("y,t,a\n1,2,3\n4,5,\n7,8,5\n0,1,NA\n", &roles(&["a"])).unwrap();
        let x = d.sample.covariates();
        assert_eq!(x.cols(), 2);
        assert_eq!(x.column(0), vec![3.0, 4.0, 5.0, 4.0]);
        assert_eq!(x.column(1), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.covariate_names, vec!["a", "a_missing"]);
    }

    #[test]
    fn drops_rows_missing_outcome_or_treatment() {
        let d = ingest("y,t\n1,2\n,5\n7,\n3,4\n", &roles(&[])).unwrap();
        assert_eq!(d.sample.n(), 2);
        assert_eq!(d.rows_dropped, 2);
        assert_eq!(d.rows_read, 4);
    }

    #[test]
    fn errors_name_the_column_and_row() {
        let e = ingest("y,t\n1,2\n3,abc\n", &roles(&[])).unwrap_err();
        match e {
            CliError::NonNumeric { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "t");
            }
            other => panic!("{other}"),
        }
        let e = ingest("y,t\n1,2\n", &roles(&["zz"])).unwrap_err();
        assert!(e.to_string().contains("zz"));
    }
}

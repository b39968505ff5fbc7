//! File formats: CSV readers/writers with 17-significant-digit floats for
//! lossless round trips, and deterministic JSON emission.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sglmm_core::eval::{Histogram, PosteriorSummary};
use sglmm_core::spatial::{Location2D, SpatialDataset, TruthRecord};
use sglmm_core::Family;

use crate::error::{io_err, CliError, CliResult};

/// Render a float with 17 significant digits so `parse::<f64>` recovers the
/// exact bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Write any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Dataset CSV: header `s1,s2,x1,...,xp,z,split`, one row per location in
/// storage order, split labels naming each row's membership.
pub fn write_data_csv(path: &Path, data: &SpatialDataset) -> CliResult<()> {
    let n = data.n();
    let p = data.p();
    let mut split = vec![""; n];
    for &i in &data.train_idx {
        split[i] = "train";
    }
    for &i in &data.test_idx {
        split[i] = "test";
    }
    let mut out = String::from("s1,s2");
    for j in 0..p {
        write!(out, ",x{}", j + 1).unwrap();
    }
    out.push_str(",z,split\n");
    for i in 0..n {
        write!(out, "{},{}", fmt_f64(data.locations[i].x), fmt_f64(data.locations[i].y)).unwrap();
        for j in 0..p {
            write!(out, ",{}", fmt_f64(data.x[(i, j)])).unwrap();
        }
        writeln!(out, ",{},{}", fmt_f64(data.z[i]), split[i]).unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// Parse a dataset CSV written by [`write_data_csv`] (or hand-authored in
/// the same schema). Errors cite the 1-based data row.
pub fn read_data_csv(path: &Path, family: Family) -> CliResult<SpatialDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[0] != "s1" || cols[1] != "s2" {
        return Err(CliError::Data(format!(
            "{}: header must start with s1,s2 and contain x1..xp,z,split (got '{header}')",
            path.display()
        )));
    }
    let p = cols.len() - 4;
    for (j, &c) in cols[2..2 + p].iter().enumerate() {
        let expect = format!("x{}", j + 1);
        if c != expect {
            return Err(CliError::Data(format!(
                "{}: expected covariate column '{expect}' at position {}, found '{c}'",
                path.display(),
                j + 3
            )));
        }
    }
    if cols[2 + p] != "z" || cols[3 + p] != "split" {
        return Err(CliError::Data(format!(
            "{}: header must end with z,split (got '{header}')",
            path.display()
        )));
    }

    let mut locations = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (row, line) in lines.enumerate() {
        let rownum = row + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols.len() {
            return Err(CliError::Data(format!(
                "{}: row {rownum} has {} fields, expected {}",
                path.display(),
                parts.len(),
                cols.len()
            )));
        }
        let num = |tok: &str, col: &str| -> CliResult<f64> {
            tok.parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {rownum}: cannot parse '{tok}' as a number in column {col}",
                    path.display()
                ))
            })
        };
        locations.push(Location2D::new(num(parts[0], "s1")?, num(parts[1], "s2")?));
        for j in 0..p {
            xs.push(num(parts[2 + j], &format!("x{}", j + 1))?);
        }
        zs.push(num(parts[2 + p], "z")?);
        match parts[3 + p] {
            "train" => train_idx.push(row),
            "test" => test_idx.push(row),
            other => {
                return Err(CliError::Data(format!(
                    "{}: row {rownum}: split must be 'train' or 'test' (got '{other}')",
                    path.display()
                )))
            }
        }
    }
    let n = zs.len();
    if n == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let x = DMatrix::from_fn(n, p, |i, j| xs[i * p + j]);
    let dataset = SpatialDataset {
        locations,
        x,
        z: DVector::from_vec(zs),
        train_idx,
        test_idx,
        family,
    };
    dataset
        .validate()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(dataset)
}

/// Truth CSV: `param,value` rows for the generating coefficients, the extra
/// response parameter when present, and the latent field at every location.
pub fn write_truth_csv(path: &Path, truth: &TruthRecord, family: Family) -> CliResult<()> {
    let mut out = String::from("param,value\n");
    for j in 0..truth.beta.len() {
        writeln!(out, "beta_{},{}", j + 1, fmt_f64(truth.beta[j])).unwrap();
    }
    if let (Some(v), Some(name)) = (truth.extra_param, family.extra_param_name()) {
        // The truth is recorded on the natural scale; name it accordingly.
        writeln!(out, "{},{}", name.trim_start_matches("log_"), fmt_f64(v)).unwrap();
    }
    for i in 0..truth.omega.len() {
        writeln!(out, "omega_{},{}", i + 1, fmt_f64(truth.omega[i])).unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// Draws CSV: header `iter,<param names...>`, one kept draw per row.
pub fn write_draws_csv(path: &Path, names: &[String], samples: &DMatrix<f64>) -> CliResult<()> {
    let mut out = String::from("iter");
    for n in names {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    for i in 0..samples.nrows() {
        write!(out, "{}", i + 1).unwrap();
        for j in 0..samples.ncols() {
            write!(out, ",{}", fmt_f64(samples[(i, j)])).unwrap();
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Parse a draws CSV written by [`write_draws_csv`]; returns the parameter
/// names and the draw matrix.
pub fn read_draws_csv(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "iter" {
        return Err(CliError::Data(format!(
            "{}: draws header must be iter,<param names> (got '{header}')",
            path.display()
        )));
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let d = names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != d + 1 {
            return Err(CliError::Data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                row + 1,
                parts.len(),
                d + 1
            )));
        }
        for tok in &parts[1..] {
            values.push(tok.parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {}: cannot parse '{tok}' as a number",
                    path.display(),
                    row + 1
                ))
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Data(format!("{}: no draws", path.display())));
    }
    Ok((names, DMatrix::from_fn(rows, d, |i, j| values[i * d + j])))
}

/// Optimization trace CSV: `iter,elbo,walltime_s` per iteration.
pub fn write_trace_csv(path: &Path, elbo: &[f64], walltime: &[f64]) -> CliResult<()> {
    let mut out = String::from("iter,elbo,walltime_s\n");
    for i in 0..elbo.len() {
        writeln!(out, "{},{},{}", i + 1, fmt_f64(elbo[i]), fmt_f64(walltime[i])).unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// Predictions CSV: `loc_id,z_true,z_pred` over the held-out rows.
pub fn write_predictions_csv(
    path: &Path,
    loc_ids: &[usize],
    z_true: &DVector<f64>,
    z_pred: &DVector<f64>,
) -> CliResult<()> {
    let mut out = String::from("loc_id,z_true,z_pred\n");
    for i in 0..loc_ids.len() {
        writeln!(out, "{},{},{}", loc_ids[i], fmt_f64(z_true[i]), fmt_f64(z_pred[i])).unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// Posterior summary CSV: `param,mean,sd,q025,q50,q975`.
pub fn write_summary_csv(path: &Path, summary: &PosteriorSummary) -> CliResult<()> {
    let mut out = String::from("param,mean,sd,q025,q50,q975\n");
    for p in &summary.params {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.name,
            fmt_f64(p.mean),
            fmt_f64(p.sd),
            fmt_f64(p.q025),
            fmt_f64(p.q50),
            fmt_f64(p.q975)
        )
        .unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// Histogram CSV: `bin_left,bin_right,mass`.
pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> CliResult<()> {
    let mut out = String::from("bin_left,bin_right,mass\n");
    for b in 0..hist.masses.len() {
        writeln!(
            out,
            "{},{},{}",
            fmt_f64(hist.edges[b]),
            fmt_f64(hist.edges[b + 1]),
            fmt_f64(hist.masses[b])
        )
        .unwrap();
    }
    write_bytes(path, out.as_bytes())
}

/// One line of the comparison table.
pub struct ComparisonRow {
    pub method: String,
    pub metric: String,
    pub value: Option<f64>,
    pub walltime_s: Option<f64>,
    pub speedup: Option<f64>,
}

/// Comparison CSV: three fit rows then two speedup rows.
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> CliResult<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = String::from("method,metric,value,walltime_s,speedup\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            r.metric,
            opt(r.value),
            opt(r.walltime_s),
            opt(r.speedup)
        )
        .unwrap();
    }
    write_bytes(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for &v in &[
            0.0,
            -0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7e308,
            -4.9e-324,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }
}

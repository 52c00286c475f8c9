//! CSV and key-value text formats for every artifact the toolchain emits,
//! with exact-round-trip number formatting.
//!
//! Schemas (`#` lines are metadata headers, the first plain line is the
//! column header, fields are comma-separated):
//!
//! * release trajectory: `t_s, re_r, im_r, re_b, im_b`
//! * voltage trace: `t_s, volts`
//! * weight function: `t_s, re, im`
//! * measured amplitudes: `re_beta, im_beta, branch, run_id`
//! * 2-D histogram: `re_beta, im_beta, density` (edges and sample count in
//!   the metadata headers)
//! * Wigner map: `re_alpha, im_alpha, w_value`
//! * overlap sweep: `alpha0, t_int_s, overlap`
//! * release study: `sigma_s, g_max_rad_per_s, remaining_fraction`
//! * reports and configs: `key = value` lines
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! parse(emit(x)) reproduces the f64 bit for bit and identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::discrimination::{AmplitudeHistogram, ReadoutReport};
use crate::hilbert::Branch;
use crate::release::ModeTrajectory;
use crate::signal::{VoltageTrace, WeightFunction};
use crate::tomography::{PhaseSpaceGrid, WignerMap};
use crate::{C64, Error, Result};

/// One measured amplitude with its provenance, the row type of the
/// `re_beta, im_beta, branch, run_id` schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaRecord {
    pub beta: C64,
    pub branch: Branch,
    pub run_id: u64,
}

fn fmt_float(v: f64) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::InvalidParams(format!("cannot serialize non-finite value {v}")));
    }
    Ok(v.to_string())
}

fn parse_float(field: &str, context: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{context}: bad number {field:?}")))
}

fn parse_usize(field: &str, context: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{context}: bad integer {field:?}")))
}

/// Splits a CSV body into metadata headers and data rows, checking the
/// column header line.
fn split_csv<'a>(text: &'a str, columns: &str) -> Result<(Vec<(&'a str, &'a str)>, Vec<&'a str>)> {
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for raw in text.lines() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("metadata header without '=': {line:?}")))?;
            meta.push((key.trim(), value.trim()));
            continue;
        }
        if !header_seen {
            if line != columns {
                return Err(Error::Config(format!(
                    "unexpected column header {line:?}, want {columns:?}"
                )));
            }
            header_seen = true;
            continue;
        }
        rows.push(line);
    }
    if !header_seen {
        return Err(Error::Config(format!("missing column header {columns:?}")));
    }
    Ok((meta, rows))
}

fn fields<'a>(row: &'a str, count: usize, context: &str) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = row.split(',').collect();
    if parts.len() != count {
        return Err(Error::Config(format!(
            "{context}: expected {count} fields, got {} in {row:?}",
            parts.len()
        )));
    }
    Ok(parts)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

// --- release trajectory -------------------------------------------------

pub fn trajectory_to_csv(traj: &ModeTrajectory) -> Result<String> {
    let mut out = String::from("t_s,re_r,im_r,re_b,im_b\n");
    for k in 0..traj.times.len() {
        let (r, b) = (traj.r_amp[k], traj.b_amp[k]);
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_float(traj.times[k])?,
            fmt_float(r.re)?,
            fmt_float(r.im)?,
            fmt_float(b.re)?,
            fmt_float(b.im)?
        )
        .expect("string write cannot fail");
    }
    Ok(out)
}

/// Parses a trajectory CSV; parsed trajectories carry no energy budget.
pub fn trajectory_from_csv(text: &str) -> Result<ModeTrajectory> {
    let (_, rows) = split_csv(text, "t_s,re_r,im_r,re_b,im_b")?;
    let mut times = Vec::with_capacity(rows.len());
    let mut r_amp = Vec::with_capacity(rows.len());
    let mut b_amp = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 5, "trajectory row")?;
        times.push(parse_float(f[0], "trajectory t_s")?);
        r_amp.push(C64::new(
            parse_float(f[1], "trajectory re_r")?,
            parse_float(f[2], "trajectory im_r")?,
        ));
        b_amp.push(C64::new(
            parse_float(f[3], "trajectory re_b")?,
            parse_float(f[4], "trajectory im_b")?,
        ));
    }
    ModeTrajectory::from_parts(times, r_amp, b_amp)
}

// --- voltage trace ------------------------------------------------------

pub fn trace_to_csv(trace: &VoltageTrace) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# sample_rate_hz = {}", fmt_float(trace.sample_rate())?).unwrap();
    writeln!(out, "# t_start_s = {}", fmt_float(trace.t_start())?).unwrap();
    out.push_str("t_s,volts\n");
    for (k, &v) in trace.samples().iter().enumerate() {
        writeln!(out, "{},{}", fmt_float(trace.time_at(k))?, fmt_float(v)?).unwrap();
    }
    Ok(out)
}

fn meta_value<'a>(meta: &[(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Config(format!("missing metadata header {key:?}")))
}

pub fn trace_from_csv(text: &str) -> Result<VoltageTrace> {
    let (meta, rows) = split_csv(text, "t_s,volts")?;
    let sample_rate = parse_float(meta_value(&meta, "sample_rate_hz")?, "trace sample_rate_hz")?;
    let t_start = parse_float(meta_value(&meta, "t_start_s")?, "trace t_start_s")?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 2, "trace row")?;
        samples.push(parse_float(f[1], "trace volts")?);
    }
    VoltageTrace::new(sample_rate, t_start, samples)
}

// --- weight function ----------------------------------------------------

pub fn weight_to_csv(w: &WeightFunction) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# sample_rate_hz = {}", fmt_float(w.sample_rate)?).unwrap();
    writeln!(out, "# t_start_s = {}", fmt_float(w.t_start)?).unwrap();
    writeln!(
        out,
        "# lambda = {} {}",
        fmt_float(w.lambda_scale.re)?,
        fmt_float(w.lambda_scale.im)?
    )
    .unwrap();
    out.push_str("t_s,re,im\n");
    let dt = 1.0 / w.sample_rate;
    for k in 0..w.len() {
        writeln!(
            out,
            "{},{},{}",
            fmt_float(w.t_start + k as f64 * dt)?,
            fmt_float(w.re[k])?,
            fmt_float(w.im[k])?
        )
        .unwrap();
    }
    Ok(out)
}

pub fn weight_from_csv(text: &str) -> Result<WeightFunction> {
    let (meta, rows) = split_csv(text, "t_s,re,im")?;
    let sample_rate = parse_float(meta_value(&meta, "sample_rate_hz")?, "weight sample_rate_hz")?;
    let t_start = parse_float(meta_value(&meta, "t_start_s")?, "weight t_start_s")?;
    let lambda_raw = meta_value(&meta, "lambda")?;
    let parts: Vec<&str> = lambda_raw.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("weight lambda header needs two numbers, got {lambda_raw:?}")));
    }
    let lambda_scale = C64::new(
        parse_float(parts[0], "weight lambda re")?,
        parse_float(parts[1], "weight lambda im")?,
    );
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Config(format!("weight sample rate must be positive, got {sample_rate}")));
    }
    let mut re = Vec::with_capacity(rows.len());
    let mut im = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 3, "weight row")?;
        re.push(parse_float(f[1], "weight re")?);
        im.push(parse_float(f[2], "weight im")?);
    }
    if re.is_empty() {
        return Err(Error::EmptySamples("weight function rows"));
    }
    Ok(WeightFunction {
        sample_rate,
        t_start,
        re,
        im,
        lambda_scale,
    })
}

// --- measured amplitudes ------------------------------------------------

pub fn beta_records_to_csv(records: &[BetaRecord]) -> Result<String> {
    let mut out = String::from("re_beta,im_beta,branch,run_id\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_float(r.beta.re)?,
            fmt_float(r.beta.im)?,
            r.branch.label(),
            r.run_id
        )
        .unwrap();
    }
    Ok(out)
}

pub fn beta_records_from_csv(text: &str) -> Result<Vec<BetaRecord>> {
    let (_, rows) = split_csv(text, "re_beta,im_beta,branch,run_id")?;
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 4, "amplitude row")?;
        records.push(BetaRecord {
            beta: C64::new(
                parse_float(f[0], "amplitude re_beta")?,
                parse_float(f[1], "amplitude im_beta")?,
            ),
            branch: Branch::from_label(f[2].trim())?,
            run_id: f[3]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("amplitude run_id: bad integer {:?}", f[3])))?,
        });
    }
    Ok(records)
}

// --- 2-D histogram ------------------------------------------------------

fn edges_header(name: &str, edges: &[f64]) -> Result<String> {
    let mut parts = Vec::with_capacity(edges.len());
    for &e in edges {
        parts.push(fmt_float(e)?);
    }
    Ok(format!("# {name} = {}\n", parts.join(" ")))
}

fn edges_from_header(raw: &str, context: &str) -> Result<Vec<f64>> {
    let mut edges = Vec::new();
    for part in raw.split_whitespace() {
        edges.push(parse_float(part, context)?);
    }
    Ok(edges)
}

pub fn histogram_to_csv(hist: &AmplitudeHistogram) -> Result<String> {
    let mut out = String::new();
    out.push_str(&edges_header("x_edges", hist.x_edges())?);
    out.push_str(&edges_header("y_edges", hist.y_edges())?);
    writeln!(out, "# n_samples = {}", hist.n_samples()).unwrap();
    out.push_str("re_beta,im_beta,density\n");
    let xc = hist.x_centers();
    let yc = hist.y_centers();
    for (ix, &x) in xc.iter().enumerate() {
        for (iy, &y) in yc.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                fmt_float(x)?,
                fmt_float(y)?,
                fmt_float(hist.at(ix, iy))?
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn histogram_from_csv(text: &str) -> Result<AmplitudeHistogram> {
    let (meta, rows) = split_csv(text, "re_beta,im_beta,density")?;
    let x_edges = edges_from_header(meta_value(&meta, "x_edges")?, "histogram x_edges")?;
    let y_edges = edges_from_header(meta_value(&meta, "y_edges")?, "histogram y_edges")?;
    let n_samples = parse_usize(meta_value(&meta, "n_samples")?, "histogram n_samples")?;
    let mut density = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 3, "histogram row")?;
        density.push(parse_float(f[2], "histogram density")?);
    }
    AmplitudeHistogram::from_density(x_edges, y_edges, density, n_samples)
}

// --- Wigner map ---------------------------------------------------------

pub fn wigner_to_csv(map: &WignerMap) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# rotation_applied = {}", fmt_float(map.rotation_applied())?).unwrap();
    out.push_str("re_alpha,im_alpha,w_value\n");
    let grid = map.grid();
    for (ix, &x) in grid.xs().iter().enumerate() {
        for (iy, &y) in grid.ys().iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                fmt_float(x)?,
                fmt_float(y)?,
                fmt_float(map.at(ix, iy))?
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// Rebuilds a map from its CSV. The axis centers are recovered from the
/// row-major point layout (y varies fastest), exactly as emitted.
pub fn wigner_from_csv(text: &str) -> Result<WignerMap> {
    let (meta, rows) = split_csv(text, "re_alpha,im_alpha,w_value")?;
    let rotation = parse_float(meta_value(&meta, "rotation_applied")?, "wigner rotation_applied")?;
    if rows.is_empty() {
        return Err(Error::EmptySamples("wigner rows"));
    }
    let mut points = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 3, "wigner row")?;
        points.push((
            parse_float(f[0], "wigner re_alpha")?,
            parse_float(f[1], "wigner im_alpha")?,
            parse_float(f[2], "wigner w_value")?,
        ));
    }
    // y varies fastest: the first block of constant x enumerates the y axis.
    let x0 = points[0].0;
    let ny = points.iter().take_while(|p| p.0 == x0).count();
    if ny == 0 || points.len() % ny != 0 {
        return Err(Error::Config(format!(
            "wigner rows do not form a rectangular grid ({} rows, {} leading y values)",
            points.len(),
            ny
        )));
    }
    let nx = points.len() / ny;
    let ys: Vec<f64> = points[..ny].iter().map(|p| p.1).collect();
    let xs: Vec<f64> = (0..nx).map(|ix| points[ix * ny].0).collect();
    let values: Vec<f64> = points.iter().map(|p| p.2).collect();
    let grid = PhaseSpaceGrid::from_axes(xs, ys)?;
    WignerMap::from_values(grid, values, rotation)
}

// --- rectangular scan tables --------------------------------------------

fn table_to_csv(columns: &str, rows_axis: &[f64], cols_axis: &[f64], values: &[f64]) -> Result<String> {
    if values.len() != rows_axis.len() * cols_axis.len() {
        return Err(Error::LengthMismatch {
            context: "scan table values vs axes",
            left: values.len(),
            right: rows_axis.len() * cols_axis.len(),
        });
    }
    let mut out = String::from(columns);
    out.push('\n');
    for (i, &a) in rows_axis.iter().enumerate() {
        for (j, &b) in cols_axis.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                fmt_float(a)?,
                fmt_float(b)?,
                fmt_float(values[i * cols_axis.len() + j])?
            )
            .unwrap();
        }
    }
    Ok(out)
}

fn table_from_csv(text: &str, columns: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (_, rows) = split_csv(text, columns)?;
    if rows.is_empty() {
        return Err(Error::EmptySamples("scan table rows"));
    }
    let mut points = Vec::with_capacity(rows.len());
    for row in rows {
        let f = fields(row, 3, "scan table row")?;
        points.push((
            parse_float(f[0], "scan table first axis")?,
            parse_float(f[1], "scan table second axis")?,
            parse_float(f[2], "scan table value")?,
        ));
    }
    let a0 = points[0].0;
    let n_cols = points.iter().take_while(|p| p.0 == a0).count();
    if n_cols == 0 || points.len() % n_cols != 0 {
        return Err(Error::Config(format!(
            "scan table rows do not form a rectangle ({} rows, {} leading column values)",
            points.len(),
            n_cols
        )));
    }
    let n_rows = points.len() / n_cols;
    let rows_axis: Vec<f64> = (0..n_rows).map(|i| points[i * n_cols].0).collect();
    let cols_axis: Vec<f64> = points[..n_cols].iter().map(|p| p.1).collect();
    let values: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok((rows_axis, cols_axis, values))
}

/// Overlap sweep matrix, row-major with t_int varying fastest.
pub fn sweep_to_csv(alpha0: &[f64], t_int: &[f64], overlap: &[f64]) -> Result<String> {
    table_to_csv("alpha0,t_int_s,overlap", alpha0, t_int, overlap)
}

pub fn sweep_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    table_from_csv(text, "alpha0,t_int_s,overlap")
}

/// Remaining-fraction table, row-major with g_max varying fastest.
pub fn release_table_to_csv(sigma: &[f64], g_max: &[f64], remaining: &[f64]) -> Result<String> {
    table_to_csv("sigma_s,g_max_rad_per_s,remaining_fraction", sigma, g_max, remaining)
}

pub fn release_table_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    table_from_csv(text, "sigma_s,g_max_rad_per_s,remaining_fraction")
}

// --- readout report -----------------------------------------------------

/// Serializes a report as `key = value` lines; `extras` carries
/// pipeline-level budget entries (decay and preparation contributions).
pub fn report_to_text(report: &ReadoutReport, extras: &[(String, f64)]) -> Result<String> {
    report.validate()?;
    let mut out = String::new();
    writeln!(out, "overlap = {}", fmt_float(report.overlap)?).unwrap();
    writeln!(out, "error_g = {}", fmt_float(report.error_g)?).unwrap();
    writeln!(out, "error_e = {}", fmt_float(report.error_e)?).unwrap();
    writeln!(out, "fidelity = {}", fmt_float(report.fidelity)?).unwrap();
    match report.qndness {
        Some(q) => writeln!(out, "qndness = {}", fmt_float(q)?).unwrap(),
        None => writeln!(out, "qndness = none").unwrap(),
    }
    writeln!(out, "n_runs = {}", report.n_runs).unwrap();
    for (key, value) in extras {
        writeln!(out, "{key} = {}", fmt_float(*value)?).unwrap();
    }
    Ok(out)
}

/// Parses a report; keys beyond the fixed schema come back as extras.
pub fn report_from_text(text: &str) -> Result<(ReadoutReport, Vec<(String, f64)>)> {
    let pairs = parse_key_values(text)?;
    let mut report = ReadoutReport {
        overlap: f64::NAN,
        error_g: f64::NAN,
        error_e: f64::NAN,
        fidelity: f64::NAN,
        qndness: None,
        n_runs: 0,
    };
    let mut extras = Vec::new();
    for (key, value) in &pairs {
        match key.as_str() {
            "overlap" => report.overlap = parse_float(value, "report overlap")?,
            "error_g" => report.error_g = parse_float(value, "report error_g")?,
            "error_e" => report.error_e = parse_float(value, "report error_e")?,
            "fidelity" => report.fidelity = parse_float(value, "report fidelity")?,
            "qndness" => {
                report.qndness = if value == "none" {
                    None
                } else {
                    Some(parse_float(value, "report qndness")?)
                }
            }
            "n_runs" => report.n_runs = parse_usize(value, "report n_runs")?,
            _ => extras.push((key.clone(), parse_float(value, "report extra")?)),
        }
    }
    report.validate()?;
    Ok((report, extras))
}

// --- key = value text ---------------------------------------------------

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped. Keys keep their order of appearance.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for raw in text.lines() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected 'key = value', got {line:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("empty key in line {line:?}")));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn key_values_to_text(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out
}

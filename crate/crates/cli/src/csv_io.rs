//! One functional variable per CSV file.
//!
//! Header `id,t=<g1>,t=<g2>,...`, then one row per curve: an id followed by the
//! values on the grid. Floats are written with the shortest representation
//! that parses back to the same bits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use funcreg_core::{FunctionalSample, Grid};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImportOptions {
    /// Rows are grid points and columns are curves: header `t,<id1>,<id2>,...`.
    pub transpose: bool,
    /// Replace every value `v` by `ln(1 + v)`.
    pub log1p: bool,
}

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_sample(path: &Path, sample: &FunctionalSample) -> CliResult<()> {
    let mut out = String::with_capacity(sample.n() * sample.r() * 22);
    out.push_str("id");
    for t in sample.grid().points() {
        out.push_str(",t=");
        out.push_str(&format_f64(*t));
    }
    out.push('\n');
    for (i, curve) in sample.curves().enumerate() {
        match sample.ids() {
            Some(ids) => out.push_str(&quote(&ids[i])),
            None => out.push_str(&(i + 1).to_string()),
        }
        for v in curve {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::io(path, e))
}

fn quote(id: &str) -> String {
    if id.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", id.replace('"', "\"\""))
    } else {
        id.to_string()
    }
}

pub fn read_sample(path: &Path) -> CliResult<FunctionalSample> {
    import_sample(path, ImportOptions::default())
}

pub fn import_sample(path: &Path, options: ImportOptions) -> CliResult<FunctionalSample> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        records.push((line, rec));
    }
    let Some(((header_line, header), body)) = records.split_first() else {
        return Err(parse_err(1, "file is empty".into()));
    };
    if body.is_empty() {
        return Err(parse_err(
            *header_line,
            "no data rows after the header".into(),
        ));
    }
    let number = |line: u64, field: &str, what: &str| -> CliResult<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("cannot parse {what} '{field}' as a number")))
    };

    // (ids, grid points, row-major curves)
    let (ids, points, rows): (Vec<String>, Vec<f64>, Vec<Vec<f64>>) = if !options.transpose {
        if header.get(0).map(str::trim) != Some("id") {
            return Err(parse_err(
                *header_line,
                "header must start with 'id'".into(),
            ));
        }
        let points = header
            .iter()
            .skip(1)
            .map(|h| {
                let g = h.trim().strip_prefix("t=").ok_or_else(|| {
                    parse_err(
                        *header_line,
                        format!("grid column '{h}' must look like t=<value>"),
                    )
                })?;
                number(*header_line, g, "grid value")
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let mut ids = Vec::with_capacity(body.len());
        let mut rows = Vec::with_capacity(body.len());
        for (line, rec) in body {
            if rec.len() != points.len() + 1 {
                return Err(parse_err(
                    *line,
                    format!("expected {} fields, found {}", points.len() + 1, rec.len()),
                ));
            }
            ids.push(rec[0].to_string());
            rows.push(
                rec.iter()
                    .skip(1)
                    .map(|f| number(*line, f, "value"))
                    .collect::<CliResult<Vec<f64>>>()?,
            );
        }
        (ids, points, rows)
    } else {
        let ids: Vec<String> = header
            .iter()
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let mut points = Vec::with_capacity(body.len());
        let mut rows = vec![Vec::with_capacity(body.len()); ids.len()];
        for (line, rec) in body {
            if rec.len() != ids.len() + 1 {
                return Err(parse_err(
                    *line,
                    format!("expected {} fields, found {}", ids.len() + 1, rec.len()),
                ));
            }
            points.push(number(*line, &rec[0], "grid value")?);
            for (k, f) in rec.iter().skip(1).enumerate() {
                rows[k].push(number(*line, f, "value")?);
            }
        }
        (ids, points, rows)
    };
    if points.is_empty() || rows.is_empty() {
        return Err(parse_err(
            *header_line,
            "no curves or no grid points".into(),
        ));
    }

    let format_err = |message: String| CliError::Format {
        path: path.to_path_buf(),
        message,
    };
    let grid = Grid::new(points).map_err(|e| format_err(e.to_string()))?;
    let rows = if options.log1p {
        rows.into_iter()
            .map(|r| r.into_iter().map(f64::ln_1p).collect())
            .collect()
    } else {
        rows
    };
    FunctionalSample::from_rows(grid, &rows)
        .and_then(|s| s.with_ids(ids))
        .map_err(|e| format_err(e.to_string()))
}

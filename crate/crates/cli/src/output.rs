//! File and console formatting. Files carry 17 significant digits, console
//! summaries 6.

use std::io::{self, Write};
use std::path::Path;

use sedq_core::solver::write_state_csv;
use sedq_core::{Heatmap, StateRecord};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::CliError;

pub const LOWER_LINE: &str = "q1 + 1 = (q2 + 1) / s";
pub const UPPER_LINE: &str = "q1 = q2 / s";

/// Renders into memory, then writes once to `out` or standard output.
pub fn emit<F>(out: Option<&Path>, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(&buf)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

/// Six significant digits, plain or scientific depending on magnitude.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{:.*}", (5 - e) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_states(w: &mut Vec<u8>, records: &[StateRecord], format: Format) -> io::Result<()> {
    match format {
        Format::Csv => write_state_csv(records, w),
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, records)?;
            writeln!(w)
        }
    }
}

#[derive(Serialize)]
struct Cell {
    q1: u64,
    q2: u64,
    probability: f64,
}

#[derive(Serialize)]
struct HeatmapDoc<'a> {
    s: usize,
    rho: f64,
    q: f64,
    q1max: u64,
    q2max: u64,
    lower_line: &'a str,
    upper_line: &'a str,
    cells: Vec<Cell>,
}

pub fn write_heatmap(w: &mut Vec<u8>, grid: &Heatmap, cfg: &RunConfig) -> io::Result<()> {
    let p = &cfg.model;
    let cells = (0..grid.q1max).flat_map(|q1| (0..grid.q2max).map(move |q2| (q1, q2)));
    match cfg.format {
        Format::Csv => {
            writeln!(w, "# s = {}, rho = {}, q = {}", p.s(), p.rho(), p.q())?;
            writeln!(w, "# grid q1 < {}, q2 < {}", grid.q1max, grid.q2max)?;
            writeln!(w, "# lower line: {LOWER_LINE}")?;
            writeln!(w, "# upper line: {UPPER_LINE}")?;
            writeln!(w, "q1,q2,probability")?;
            for (q1, q2) in cells {
                writeln!(w, "{q1},{q2},{}", f17(grid.get(q1, q2)))?;
            }
            Ok(())
        }
        Format::Json => {
            let doc = HeatmapDoc {
                s: p.s(),
                rho: p.rho(),
                q: p.q(),
                q1max: grid.q1max,
                q2max: grid.q2max,
                lower_line: LOWER_LINE,
                upper_line: UPPER_LINE,
                cells: cells
                    .map(|(q1, q2)| Cell {
                        q1,
                        q2,
                        probability: grid.get(q1, q2),
                    })
                    .collect(),
            };
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            writeln!(w)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NindexRow {
    pub s: usize,
    pub rho: f64,
    pub q: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

pub fn write_nindex(w: &mut Vec<u8>, rows: &[NindexRow], format: Format) -> io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(w, "s,rho,q,N")?;
            for r in rows {
                writeln!(w, "{},{},{},{}", r.s, r.rho, r.q, r.n)?;
            }
            Ok(())
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, rows)?;
            writeln!(w)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmapCell {
    pub m: i64,
    pub n: i64,
    pub l: usize,
    pub converged: bool,
}

pub fn write_lmap(w: &mut Vec<u8>, cells: &[LmapCell], format: Format) -> io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(w, "m,n,l,converged")?;
            for c in cells {
                writeln!(w, "{},{},{},{}", c.m, c.n, c.l, u8::from(c.converged))?;
            }
            Ok(())
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, cells)?;
            writeln!(w)
        }
    }
}

/// `key = value` lines, or one JSON object with string values.
pub fn write_report(w: &mut Vec<u8>, lines: &[(&str, String)], format: Format) -> io::Result<()> {
    match format {
        Format::Csv => {
            for (k, v) in lines {
                writeln!(w, "{k} = {v}")?;
            }
            Ok(())
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> =
                lines.iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone()))).collect();
            serde_json::to_writer_pretty(&mut *w, &map)?;
            writeln!(w)
        }
    }
}

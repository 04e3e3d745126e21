//! CSV and JSON persistence.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64` exactly, so replayed artifacts reproduce the original bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diagnostics::{ExcessRow, SweepReport};
use crate::energy::{ExcessField, TestFunction};
use crate::jko::{StepRecord, SystemRecord};
use crate::measures::{GridDensity, GridShape, ParticleMeasure};
use crate::{Error, Result};

/// Column order of step-record files.
pub const STEP_COLUMNS: [&str; 10] = [
    "step",
    "t",
    "energy",
    "dW2_increment",
    "inner_iters",
    "el_residual",
    "m2",
    "entropy_v",
    "h1_v",
    "wall_ms",
];

pub const SYSTEM_COLUMNS: [&str; 6] = [
    "step",
    "t",
    "h_energy",
    "k_energy",
    "h_increase",
    "species_gap",
];

/// Canonical float rendering.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn integrity(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Integrity(format!("{}: {what}", path.display()))
}

struct Table {
    out: BufWriter<File>,
}

impl Table {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a headed CSV into raw string rows, checking the header exactly.
fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| integrity(path, e))?;
    let found = rdr.headers().map_err(|e| integrity(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(integrity(
            path,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for r in rdr.records() {
        rows.push(r.map_err(|e| integrity(path, e))?);
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| integrity(path, format!("row {}: `{s}`: {e}", row + 1)))
}

/// Reads the `x` column and the column named `value_col` of a headed CSV.
pub fn read_xy(path: &Path, value_col: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| integrity(path, e))?;
    let headers = rdr.headers().map_err(|e| integrity(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| integrity(path, format!("missing column `{name}`")))
    };
    let (ix, iv) = (col("x")?, col(value_col)?);
    let (mut xs, mut vs) = (Vec::new(), Vec::new());
    for (k, r) in rdr.records().enumerate() {
        let r = r.map_err(|e| integrity(path, e))?;
        xs.push(parse(path, k, &r[ix])?);
        vs.push(parse(path, k, &r[iv])?);
    }
    Ok((xs, vs))
}

pub fn write_grid(path: &Path, v: &GridDensity) -> Result<()> {
    write_field(path, "value", v.shape(), v.values())
}

fn write_field(path: &Path, name: &str, shape: GridShape, values: &[f64]) -> Result<()> {
    let mut t = Table::create(path, &["x", name])?;
    for (k, val) in values.iter().enumerate() {
        t.row(&[fmt(shape.x(k)), fmt(*val)])?;
    }
    t.finish()
}

/// Reads an `x,value` grid; the nodes must be uniform.
pub fn read_grid(path: &Path) -> Result<GridDensity> {
    let (xs, vs) = read_xy(path, "value")?;
    if xs.len() < 2 {
        return Err(integrity(path, "grid needs at least two nodes"));
    }
    let shape =
        GridShape::new(xs[0], xs[xs.len() - 1], xs.len()).map_err(|e| integrity(path, e))?;
    let tol = 1e-9 * shape.dx();
    if xs
        .iter()
        .enumerate()
        .any(|(k, x)| (x - shape.x(k)).abs() > tol)
    {
        return Err(integrity(path, "grid nodes are not uniform"));
    }
    GridDensity::new(shape, vs).map_err(|e| integrity(path, e))
}

pub fn write_excess(path: &Path, z: &ExcessField) -> Result<()> {
    write_field(path, "z", z.shape, &z.values)
}

pub fn write_particles(path: &Path, mu: &ParticleMeasure) -> Result<()> {
    let header: &[&str] = if mu.dim() == 1 {
        &["id", "x"]
    } else {
        &["id", "x", "y"]
    };
    let mut t = Table::create(path, header)?;
    for i in 0..mu.len() {
        let mut row = vec![i.to_string()];
        row.extend(mu.point(i).iter().map(|v| fmt(*v)));
        t.row(&row)?;
    }
    t.finish()
}

pub fn read_particles(path: &Path) -> Result<ParticleMeasure> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| integrity(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| integrity(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let dim = match headers
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["id", "x"] => 1,
        ["id", "x", "y"] => 2,
        _ => return Err(integrity(path, "expected header `id,x` or `id,x,y`")),
    };
    let mut coords = Vec::new();
    for (k, r) in rdr.records().enumerate() {
        let r = r.map_err(|e| integrity(path, e))?;
        for c in 1..=dim {
            coords.push(parse::<f64>(path, k, &r[c])?);
        }
    }
    ParticleMeasure::new(dim, coords).map_err(|e| integrity(path, e))
}

pub fn write_steps(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut t = Table::create(path, &STEP_COLUMNS)?;
    for r in records {
        t.row(&[
            r.step.to_string(),
            fmt(r.t),
            fmt(r.energy),
            fmt(r.dw2_increment),
            r.inner_iters.to_string(),
            fmt(r.el_residual),
            fmt(r.m2),
            fmt(r.entropy_v),
            fmt(r.h1_v),
            fmt(r.wall_ms),
        ])?;
    }
    t.finish()
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    read_table(path, &STEP_COLUMNS)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(StepRecord {
                step: parse(path, k, &r[0])?,
                t: parse(path, k, &r[1])?,
                energy: parse(path, k, &r[2])?,
                dw2_increment: parse(path, k, &r[3])?,
                inner_iters: parse(path, k, &r[4])?,
                el_residual: parse(path, k, &r[5])?,
                m2: parse(path, k, &r[6])?,
                entropy_v: parse(path, k, &r[7])?,
                h1_v: parse(path, k, &r[8])?,
                wall_ms: parse(path, k, &r[9])?,
            })
        })
        .collect()
}

pub fn write_system(path: &Path, records: &[SystemRecord]) -> Result<()> {
    let mut t = Table::create(path, &SYSTEM_COLUMNS)?;
    for r in records {
        t.row(&[
            r.step.to_string(),
            fmt(r.t),
            fmt(r.h_energy),
            fmt(r.k_energy),
            fmt(r.h_increase),
            fmt(r.species_gap),
        ])?;
    }
    t.finish()
}

pub fn read_system(path: &Path) -> Result<Vec<SystemRecord>> {
    read_table(path, &SYSTEM_COLUMNS)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(SystemRecord {
                step: parse(path, k, &r[0])?,
                t: parse(path, k, &r[1])?,
                h_energy: parse(path, k, &r[2])?,
                k_energy: parse(path, k, &r[3])?,
                h_increase: parse(path, k, &r[4])?,
                species_gap: parse(path, k, &r[5])?,
            })
        })
        .collect()
}

/// Long-format 1-D trajectory: `snapshot,t,id,x`.
pub fn write_trajectory(path: &Path, times: &[f64], snapshots: &[ParticleMeasure]) -> Result<()> {
    let mut t = Table::create(path, &["snapshot", "t", "id", "x"])?;
    for (k, (time, mu)) in times.iter().zip(snapshots).enumerate() {
        if mu.dim() != 1 {
            return Err(Error::Unsupported("trajectory files of 2-D runs".into()));
        }
        for (i, x) in mu.coords().iter().enumerate() {
            t.row(&[k.to_string(), fmt(*time), i.to_string(), fmt(*x)])?;
        }
    }
    t.finish()
}

pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Vec<ParticleMeasure>)> {
    let rows = read_table(path, &["snapshot", "t", "id", "x"])?;
    let mut times: Vec<f64> = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let snap: usize = parse(path, k, &r[0])?;
        let t: f64 = parse(path, k, &r[1])?;
        let id: usize = parse(path, k, &r[2])?;
        if snap == blocks.len() {
            times.push(t);
            blocks.push(Vec::new());
        } else if snap + 1 != blocks.len() || times[snap].to_bits() != t.to_bits() {
            return Err(integrity(
                path,
                format!("row {}: snapshots out of order", k + 1),
            ));
        }
        if id != blocks[snap].len() {
            return Err(integrity(
                path,
                format!("row {}: particle ids out of order", k + 1),
            ));
        }
        blocks[snap].push(parse(path, k, &r[3])?);
    }
    if blocks.is_empty() {
        return Err(integrity(path, "empty trajectory"));
    }
    let snaps = blocks
        .into_iter()
        .map(|b| {
            if b.windows(2).any(|w| w[1] < w[0]) {
                return Err(integrity(path, "snapshot not sorted"));
            }
            Ok(ParticleMeasure::from_sorted_unchecked(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((times, snaps))
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "eps",
    "E_l2",
    "ratio_prev",
    "excess_l1_max",
    "excess_l2",
    "h1_budget_used",
    "verdict",
];

pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<()> {
    let mut t = Table::create(path, &SWEEP_COLUMNS)?;
    for r in &report.rows {
        t.row(&[
            fmt(r.eps),
            fmt(r.e_l2),
            fmt(r.ratio_prev),
            fmt(r.excess_l1_max),
            fmt(r.excess_l2),
            fmt(r.h1_budget_used),
            r.verdict.clone(),
        ])?;
    }
    t.finish()
}

/// Long-format excess table: `eps,phi,sup_l1,bound,l2`.
pub fn write_excess_table(path: &Path, rows: &[ExcessRow], testfns: &[TestFunction]) -> Result<()> {
    let mut t = Table::create(path, &["eps", "phi", "sup_l1", "bound", "l2"])?;
    for r in rows {
        for (f, phi) in testfns.iter().enumerate() {
            t.row(&[
                fmt(r.eps),
                format!("\"{phi}\""),
                fmt(r.sup_l1[f]),
                fmt(r.bound[f]),
                fmt(r.l2[f]),
            ])?;
        }
    }
    t.finish()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| integrity(path, e))?;
    serde_json::from_str(&s).map_err(|e| integrity(path, e))
}

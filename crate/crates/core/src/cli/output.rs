//! CSV writers and readers; every file is written to a temporary sibling
//! and renamed into place.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::discrete::face_levels;
use crate::model::{FullState, Grid};
use crate::solver::Record;

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    xi: f64,
    w: f64,
    f: f64,
    #[serde(rename = "V")]
    clf: f64,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "W")]
    w_energy: f64,
    mass: f64,
    #[serde(rename = "norm_X")]
    norm_x: f64,
    h_left: f64,
    h_right: f64,
    h_min: f64,
    h_max: f64,
    dt: f64,
}

impl From<&Record> for CsvRow {
    fn from(r: &Record) -> Self {
        Self {
            t: r.t,
            xi: r.xi,
            w: r.w,
            f: r.f,
            clf: r.clf,
            e: r.e,
            w_energy: r.w_energy,
            mass: r.mass,
            norm_x: r.norm_x,
            h_left: r.h_left,
            h_right: r.h_right,
            h_min: r.h_min,
            h_max: r.h_max,
            dt: r.dt,
        }
    }
}

impl From<CsvRow> for Record {
    /// Integrals that are not written to CSV come back as NaN.
    fn from(r: CsvRow) -> Self {
        Self {
            t: r.t,
            xi: r.xi,
            w: r.w,
            f: r.f,
            clf: r.clf,
            e: r.e,
            w_energy: r.w_energy,
            mass: r.mass,
            norm_x: r.norm_x,
            h_left: r.h_left,
            h_right: r.h_right,
            h_min: r.h_min,
            h_max: r.h_max,
            dt: r.dt,
            momentum: f64::NAN,
            viscous_dissipation: f64::NAN,
            slope_sq: f64::NAN,
            phi_integral: f64::NAN,
        }
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Time series with header `t,xi,w,f,V,E,W,mass,norm_X,h_left,h_right,h_min,h_max,dt`.
pub fn write_records_csv(path: &Path, records: &[Record]) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(CsvRow::from(r)).map_err(io::Error::other)?;
    }
    if records.is_empty() {
        writer
            .write_record([
                "t", "xi", "w", "f", "V", "E", "W", "mass", "norm_X", "h_left", "h_right", "h_min", "h_max", "dt",
            ])
            .map_err(io::Error::other)?;
    }
    let bytes = writer.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_records_csv(path: &Path) -> io::Result<Vec<Record>> {
    let mut reader = csv::Reader::from_path(path).map_err(io::Error::other)?;
    reader
        .deserialize::<CsvRow>()
        .map(|row| row.map(Record::from).map_err(io::Error::other))
        .collect()
}

/// Profile at the faces, header `x,h,v`; wall levels are extrapolated.
pub fn write_snapshot_csv(path: &Path, state: &FullState, grid: &Grid) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["x", "h", "v"]).map_err(io::Error::other)?;
    let levels = face_levels(&state.h);
    for (j, (h, v)) in levels.iter().zip(&state.v).enumerate() {
        writer
            .write_record([grid.face(j).to_string(), h.to_string(), v.to_string()])
            .map_err(io::Error::other)?;
    }
    let bytes = writer.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

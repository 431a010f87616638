//! On-disk formats: the per-step series CSV and raw `f64` field snapshots
//! with a JSON sidecar.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TimeSeriesRecord;
use crate::spectral::{Grid, RealField};

pub const SERIES_HEADER: &str = "t,dt,mass,e_original,e_pseudo,e_modified,e_discrete,aux,s_active";

/// 17 significant digits; parsing the text gives back the same bits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_series<W: Write>(mut w: W, records: &[TimeSeriesRecord]) -> Result<()> {
    writeln!(w, "{SERIES_HEADER}")?;
    for r in records {
        let row = [
            r.t,
            r.dt,
            r.mass,
            r.e_original,
            r.e_pseudo,
            r.e_modified,
            r.e_discrete,
            r.aux,
            r.s_active,
        ]
        .map(format_f64)
        .join(",");
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_file(path: &Path, records: &[TimeSeriesRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_series(BufWriter::new(f), records)
}

pub fn read_series<R: BufRead>(r: R) -> Result<Vec<TimeSeriesRecord>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != SERIES_HEADER {
        return Err(Error::Io(format!(
            "series header mismatch: expected `{SERIES_HEADER}`, found `{}`",
            header.trim_end()
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(format!("series row {}: {e}", i + 1)))?;
        if v.len() != 9 {
            return Err(Error::Io(format!(
                "series row {}: expected 9 columns, found {}",
                i + 1,
                v.len()
            )));
        }
        out.push(TimeSeriesRecord {
            t: v[0],
            dt: v[1],
            mass: v[2],
            e_original: v[3],
            e_pseudo: v[4],
            e_modified: v[5],
            e_discrete: v[6],
            aux: v[7],
            s_active: v[8],
        });
    }
    Ok(out)
}

pub fn read_series_file(path: &Path) -> Result<Vec<TimeSeriesRecord>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_series(BufReader::new(f))
}

/// Sidecar of a snapshot. Together with the `.f64` file it fully describes
/// the field; nothing else about the run is needed to read it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub n: Vec<usize>,
    #[serde(rename = "L")]
    pub lengths: Vec<f64>,
    pub t: f64,
    pub scheme: String,
    pub field: String,
}

/// Tag used in snapshot file names: the requested time without trailing zeros.
pub fn snapshot_tag(t: f64) -> String {
    let s = format!("{t}");
    s.replace('-', "m")
}

/// Writes `<dir>/phi_t<tag>.f64` and `<dir>/phi_t<tag>.json`; returns the data path.
pub fn write_snapshot(
    dir: &Path,
    tag: &str,
    field: &RealField,
    t: f64,
    scheme: &str,
) -> Result<PathBuf> {
    let data = dir.join(format!("phi_t{tag}.f64"));
    let side = dir.join(format!("phi_t{tag}.json"));
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data, bytes).map_err(|e| io_err(&data, e))?;
    let g = field.grid();
    let meta = SnapshotMeta {
        dim: g.dim(),
        n: g.n().to_vec(),
        lengths: g.lengths().to_vec(),
        t,
        scheme: scheme.to_string(),
        field: "phi".to_string(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&side, json).map_err(|e| io_err(&side, e))?;
    Ok(data)
}

/// Reads a `.f64` snapshot and the `.json` sidecar next to it.
pub fn read_snapshot(path: &Path) -> Result<(RealField, SnapshotMeta)> {
    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let meta: SnapshotMeta =
        serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
    if meta.n.len() != meta.dim || meta.lengths.len() != meta.dim {
        return Err(Error::Io(format!(
            "{}: n and L must have dim = {} entries",
            side.display(),
            meta.dim
        )));
    }
    let grid = Grid::new(&meta.n, &meta.lengths)?;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::Io(format!(
            "{}: {} bytes, expected {} for grid {:?}",
            path.display(),
            bytes.len(),
            grid.len() * 8,
            meta.n
        )));
    }
    let vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((RealField::new(&grid, vals)?, meta))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

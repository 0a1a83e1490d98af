//! Binary field files (`FKRF`) and station CSV files.
//!
//! Field file layout, all little-endian:
//!
//! ```text
//! magic    "FKRF"               4 bytes
//! version  u16                  2 bytes
//! nx, ny, n_vars, n_times u32   16 bytes
//! base time_index i64           8 bytes
//! payload  f32 [time][var][y][x]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aqi::Pollutant;
use crate::error::{Error, Result};
use crate::field::GridField;

pub const FIELD_MAGIC: &[u8; 4] = b"FKRF";
pub const FIELD_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 8;

/// Serialize a contiguous field sequence into the `FKRF` byte layout.
pub fn encode_fields(fields: &[GridField]) -> Result<Vec<u8>> {
    let (nx, ny, nv, base) = match fields.first() {
        Some(f) => (f.nx, f.ny, f.n_vars, f.time_index),
        None => (0, 0, 0, 0),
    };
    for (i, f) in fields.iter().enumerate() {
        if f.nx != nx || f.ny != ny || f.n_vars != nv {
            return Err(Error::shape(format!("{nv}x{ny}x{nx}"), f.shape_string()));
        }
        if f.time_index != base + i as i64 {
            return Err(Error::InvalidInput(format!(
                "field sequence must be contiguous in time: position {i} has time_index {}, expected {}",
                f.time_index,
                base + i as i64
            )));
        }
    }
    let payload = fields.len() * nx * ny * nv * 4;
    let mut buf = Vec::with_capacity(HEADER_LEN + payload);
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    for d in [nx, ny, nv, fields.len()] {
        let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&base.to_le_bytes());
    for f in fields {
        for v in &f.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Parse `FKRF` bytes; `path` is only used for error reporting.
pub fn decode_fields(bytes: &[u8], path: &Path) -> Result<Vec<GridField>> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != FIELD_MAGIC {
        return Err(fail(0, "bad magic, expected \"FKRF\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FIELD_VERSION {
        return Err(fail(4, format!("unsupported version {version}, expected {FIELD_VERSION}")));
    }
    let dim = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (nx, ny, nv, nt) = (dim(0), dim(1), dim(2), dim(3));
    let base = i64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let per_field = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nv))
        .ok_or_else(|| fail(6, "dimension overflow".into()))?;
    let expected = per_field
        .checked_mul(nt)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(6, "dimension overflow".into()))?;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut out = Vec::with_capacity(nt);
    let mut off = HEADER_LEN;
    for t in 0..nt {
        let values: Vec<f32> = bytes[off..off + per_field * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += per_field * 4;
        out.push(GridField {
            nx,
            ny,
            n_vars: nv,
            time_index: base + t as i64,
            values,
        });
    }
    Ok(out)
}

pub fn write_field_file(path: impl AsRef<Path>, fields: &[GridField]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fields(fields)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_field_file(path: impl AsRef<Path>) -> Result<Vec<GridField>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fields(&bytes, path)
}

/// One row of a station CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecordRow {
    pub station_id: u32,
    pub x: usize,
    pub y: usize,
    pub time_index: i64,
    pub variable: String,
    pub value: f64,
}

pub fn write_station_csv(path: impl AsRef<Path>, rows: &[StationRecordRow]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["station_id", "x", "y", "time_index", "variable", "value"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_station_csv(path: impl AsRef<Path>) -> Result<Vec<StationRecordRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: StationRecordRow = row?;
        row.variable.parse::<Pollutant>()?;
        rows.push(row);
    }
    Ok(rows)
}

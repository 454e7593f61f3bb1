//! On-disk formats.
//!
//! * FRC1 snapshot directories: `meta.json` plus `data.bin`, the latter
//!   holding `count * 2N` little-endian f64 values, snapshot-major, each
//!   snapshot in state-vector order.
//! * Header+blob files: an 8-byte little-endian header length, a JSON
//!   header, then a little-endian f64 payload. Used for POD bases and models.
//! * Sensor layouts as JSON.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FlowSeries, FlowSnapshot, Grid};
use crate::sensors::SensorLayout;

pub const FRC1_DTYPE: &str = "f64";
pub const FRC1_LAYOUT: &str = "u-block,v-block,row-major";
pub const FRC1_ENDIANNESS: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frc1Meta {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub count: usize,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
    /// Optional; readers fall back to `0..count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_indices: Option<Vec<usize>>,
}

impl Frc1Meta {
    pub fn for_series(series: &FlowSeries) -> Self {
        let g = series.grid();
        Self {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx,
            dy: g.dy,
            count: series.len(),
            dtype: FRC1_DTYPE.into(),
            layout: FRC1_LAYOUT.into(),
            endianness: FRC1_ENDIANNESS.into(),
            time_indices: Some(series.iter().map(|s| s.time_index).collect()),
        }
    }
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn le_bytes_to_f64s(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub fn write_frc1(dir: &Path, series: &FlowSeries) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Frc1Meta::for_series(series);
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("data.bin"))?);
    for s in series.iter() {
        w.write_all(&f64s_to_le_bytes(&s.u))?;
        w.write_all(&f64s_to_le_bytes(&s.v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frc1(dir: &Path) -> Result<FlowSeries> {
    let meta_path = dir.join("meta.json");
    let meta: Frc1Meta =
        serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.dtype != FRC1_DTYPE || meta.layout != FRC1_LAYOUT || meta.endianness != FRC1_ENDIANNESS {
        return Err(Error::format(
            &meta_path,
            format!("unsupported encoding dtype={} layout={} endianness={}", meta.dtype, meta.layout, meta.endianness),
        ));
    }
    let grid = Grid::new(meta.nx, meta.ny, meta.dx, meta.dy)?;
    let data_path = dir.join("data.bin");
    let bytes = fs::read(&data_path)?;
    let want = meta.count * grid.state_len() * 8;
    if bytes.len() != want {
        return Err(Error::format(
            &data_path,
            format!("expected {want} bytes for {} snapshots, found {}", meta.count, bytes.len()),
        ));
    }
    let values = le_bytes_to_f64s(&bytes).expect("length checked");
    let times = match meta.time_indices {
        Some(t) if t.len() == meta.count => t,
        Some(t) => {
            return Err(Error::format(&meta_path, format!("{} time indices for {} snapshots", t.len(), meta.count)))
        }
        None => (0..meta.count).collect(),
    };
    let snaps = values
        .chunks_exact(grid.state_len())
        .zip(times)
        .map(|(x, t)| FlowSnapshot::from_state(grid, x, t))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(&data_path, e.to_string()))?;
    FlowSeries::new(grid, snaps)
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    locations: Vec<(usize, usize)>,
}

pub fn write_sensors(path: &Path, layout: &SensorLayout) -> Result<()> {
    let f = LayoutFile { locations: layout.locations().to_vec() };
    fs::write(path, serde_json::to_vec_pretty(&f)?)?;
    Ok(())
}

/// Accepts `{"locations": [[i, j], ...]}` or a bare `[[i, j], ...]` array.
pub fn read_sensors(path: &Path) -> Result<SensorLayout> {
    let bytes = fs::read(path)?;
    let locations = match serde_json::from_slice::<LayoutFile>(&bytes) {
        Ok(f) => f.locations,
        Err(_) => {
            serde_json::from_slice::<Vec<(usize, usize)>>(&bytes).map_err(|e| Error::format(path, e.to_string()))?
        }
    };
    SensorLayout::new(locations)
}

pub fn write_header_blob<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    w.write_all(&f64s_to_le_bytes(payload))?;
    w.flush()?;
    Ok(())
}

pub fn read_header_blob<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated header length"));
    }
    let head_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if head_len > body.len() {
        return Err(Error::format(path, "header length exceeds file size"));
    }
    let header = serde_json::from_slice(&body[..head_len]).map_err(|e| Error::format(path, e.to_string()))?;
    let payload = le_bytes_to_f64s(&body[head_len..])
        .ok_or_else(|| Error::format(path, "payload is not a whole number of f64 values"))?;
    Ok((header, payload))
}

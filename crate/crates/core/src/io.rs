//! On-disk format: a raw little-endian `float32` payload (`<stem>.raw`) with
//! a JSON sidecar (`<stem>.meta.json`) describing its shape.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{ConeBeamGeometry, ProjectionSet};
use crate::volume::{Volume, VolumeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metadata {
    Volume {
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        dtype: String,
        endianness: String,
    },
    Projections {
        geometry: ConeBeamGeometry,
        dtype: String,
        endianness: String,
    },
}

/// `(payload, sidecar)` paths for a stem or a `.raw` path.
pub fn paths_for(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "raw") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (stem.with_file_name(format!("{name}.raw")), stem.with_file_name(format!("{name}.meta.json")))
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::InvalidValue(format!(
            "raw payload of {} bytes is not a whole number of float32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn f32_tag() -> (String, String) {
    ("float32".to_string(), "little".to_string())
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let (raw, meta) = paths_for(path);
    let (dtype, endianness) = f32_tag();
    let g = vol.grid();
    let md = Metadata::Volume {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        dtype,
        endianness,
    };
    fs::write(raw, encode(vol.data()))?;
    fs::write(meta, serde_json::to_string_pretty(&md)?)?;
    Ok(())
}

fn check_dtype(dtype: &str, endianness: &str) -> Result<()> {
    if dtype != "float32" || endianness != "little" {
        return Err(Error::InvalidValue(format!(
            "unsupported payload {dtype}/{endianness}; expected float32/little"
        )));
    }
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (raw, meta) = paths_for(path);
    match serde_json::from_str::<Metadata>(&fs::read_to_string(meta)?)? {
        Metadata::Volume {
            dims,
            spacing,
            origin,
            dtype,
            endianness,
        } => {
            check_dtype(&dtype, &endianness)?;
            let grid = VolumeGrid::new(dims, spacing)?.with_origin(origin);
            let data = decode(&fs::read(raw)?)?;
            check_len("volume payload", grid.len(), data.len())?;
            Volume::new(grid, data)
        }
        Metadata::Projections { .. } => Err(Error::InvalidValue("sidecar describes projections, not a volume".into())),
    }
}

pub fn write_projections(path: &Path, proj: &ProjectionSet) -> Result<()> {
    let (raw, meta) = paths_for(path);
    let (dtype, endianness) = f32_tag();
    let md = Metadata::Projections {
        geometry: proj.geometry().clone(),
        dtype,
        endianness,
    };
    fs::write(raw, encode(proj.data()))?;
    fs::write(meta, serde_json::to_string_pretty(&md)?)?;
    Ok(())
}

pub fn read_projections(path: &Path) -> Result<ProjectionSet> {
    let (raw, meta) = paths_for(path);
    match serde_json::from_str::<Metadata>(&fs::read_to_string(meta)?)? {
        Metadata::Projections {
            geometry,
            dtype,
            endianness,
        } => {
            check_dtype(&dtype, &endianness)?;
            ProjectionSet::new(geometry, decode(&fs::read(raw)?)?)
        }
        Metadata::Volume { .. } => Err(Error::InvalidValue("sidecar describes a volume, not projections".into())),
    }
}

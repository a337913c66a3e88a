//! Newline-delimited JSON scenario files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::types::{Scenario, VoxelGrid};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk form of a voxel grid: features as base64 little-endian `f32`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelRecord {
    origin: [f64; 2],
    heading: f64,
    cell_size: f64,
    depth: usize,
    height: usize,
    width: usize,
    feature_channels: usize,
    semantic_classes: usize,
    shape: [usize; 4],
    features: String,
}

impl From<VoxelGrid> for VoxelRecord {
    fn from(g: VoxelGrid) -> Self {
        let mut bytes = Vec::with_capacity(g.features.len() * 4);
        for v in &g.features {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        VoxelRecord {
            origin: g.origin,
            heading: g.heading,
            cell_size: g.cell_size,
            depth: g.depth,
            height: g.height,
            width: g.width,
            feature_channels: g.feature_channels,
            semantic_classes: g.semantic_classes,
            shape: [g.depth, g.height, g.width, g.channels()],
            features: STANDARD.encode(bytes),
        }
    }
}

impl TryFrom<VoxelRecord> for VoxelGrid {
    type Error = String;

    fn try_from(r: VoxelRecord) -> std::result::Result<Self, String> {
        let channels = r.feature_channels + r.semantic_classes + 3;
        if r.shape != [r.depth, r.height, r.width, channels] {
            return Err(format!(
                "voxel shape {:?} disagrees with grid dimensions",
                r.shape
            ));
        }
        let bytes = STANDARD
            .decode(r.features.as_bytes())
            .map_err(|e| format!("voxel features: {e}"))?;
        let expected: usize = r.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(format!(
                "voxel features hold {} bytes, shape needs {expected}",
                bytes.len()
            ));
        }
        let features = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(VoxelGrid {
            origin: r.origin,
            heading: r.heading,
            cell_size: r.cell_size,
            depth: r.depth,
            height: r.height,
            width: r.width,
            feature_channels: r.feature_channels,
            semantic_classes: r.semantic_classes,
            features,
        })
    }
}

#[derive(Serialize)]
struct Line<'a> {
    schema_version: u32,
    #[serde(flatten)]
    scenario: &'a Scenario,
}

pub fn scenario_to_line(s: &Scenario) -> Result<String> {
    serde_json::to_string(&Line {
        schema_version: SCHEMA_VERSION,
        scenario: s,
    })
    .map_err(|e| Error::contract(format!("cannot serialize {}: {e}", s.scenario_id)))
}

/// Parses one file line; `line_no` is 1-based and only used in errors.
pub fn scenario_from_line(text: &str, line_no: usize) -> Result<Scenario> {
    let parse_err = |e: serde_json::Error| Error::Parse {
        line: line_no,
        message: format!("column {}: {e}", e.column()),
    };
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    let obj = value.as_object_mut().ok_or(Error::Parse {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    let version = obj
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or(Error::Parse {
            line: line_no,
            message: "missing schema_version".into(),
        })?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::Schema {
            expected: SCHEMA_VERSION,
            found: version.min(u32::MAX as u64) as u32,
        });
    }
    let scenario: Scenario = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(scenario)
}

pub fn save_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenarios {
        w.write_all(scenario_to_line(s)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(scenario_from_line(&line, i + 1)?);
    }
    Ok(out)
}

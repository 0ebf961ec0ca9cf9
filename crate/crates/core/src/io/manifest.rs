use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub raster_path: String,
    pub temperature_kelvin: f64,
}

/// Co-registered (scene, temperature) tuples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SceneManifest {
    pub fn get(&self, scene_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.scene_id == scene_id)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            // header occupies line 1
            let line = i + 2;
            if !seen.insert(e.scene_id.as_str()) {
                return Err(IoError::Validation {
                    line,
                    message: format!("duplicate scene_id `{}`", e.scene_id),
                });
            }
            if !e.temperature_kelvin.is_finite() {
                return Err(IoError::Validation {
                    line,
                    message: format!("non-finite temperature for `{}`", e.scene_id),
                });
            }
        }
        Ok(())
    }
}

const HEADER: [&str; 3] = ["scene_id", "raster_path", "temperature_kelvin"];

pub fn read_manifest<R: Read>(reader: R) -> Result<SceneManifest, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(IoError::Parse {
            line: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut entries = Vec::new();
    for rec in rdr.deserialize() {
        entries.push(rec.map_err(csv_err)?);
    }
    let manifest = SceneManifest { entries };
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest<W: Write>(manifest: &SceneManifest, writer: W) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in &manifest.entries {
        wtr.serialize(e).map_err(csv_err)?;
    }
    if manifest.entries.is_empty() {
        wtr.write_record(HEADER).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::Io(io),
        kind => IoError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

//! JSON parts file: `{"part_m": [x0,y0,x1,y1], "part_i": [...], "provenance": {...}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CanonicalParts, PartRegion, PartRole, Rect};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub part_m_seeds: Vec<u64>,
    pub part_i_seeds: Vec<u64>,
    pub config_hash: String,
    /// Free-form settings echoed by the producer.
    pub settings: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartsFile {
    pub part_m: Rect,
    pub part_i: Rect,
    #[serde(default)]
    pub provenance: Provenance,
}

impl PartsFile {
    pub fn from_parts(parts: &CanonicalParts, config_hash: String, settings: serde_json::Value) -> Self {
        Self {
            part_m: parts.part_m.rect,
            part_i: parts.part_i.rect,
            provenance: Provenance {
                part_m_seeds: parts.part_m.provenance.clone(),
                part_i_seeds: parts.part_i.provenance.clone(),
                config_hash,
                settings,
            },
        }
    }

    pub fn regions(&self) -> (PartRegion, PartRegion) {
        (
            PartRegion {
                rect: self.part_m,
                role: PartRole::PartM,
                provenance: self.provenance.part_m_seeds.clone(),
            },
            PartRegion {
                rect: self.part_i,
                role: PartRole::PartI,
                provenance: self.provenance.part_i_seeds.clone(),
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
    }
}

//! The MFX feature exchange format.
//!
//! A feature file is two files side by side: `NAME.mfx`, a JSON manifest,
//! and `NAME.mfx.bin`, the rows as little-endian `f32`, row-major
//! `[rows × dims]`. Each variant in the manifest points at its row.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::features::{STAT_DIMS, STAT_SPEC_ID};
use crate::fingerprint::MaterialId;
use crate::model::VariantInfo;
use crate::{Error, Result};

pub const MFX_VERSION: &str = "1";
pub const EMBEDDING_EXTRACTOR_ID: &str = "vitb32-concat";
pub const EMBEDDING_DIMS: usize = 1024;

/// Row width a known extractor produces.
pub fn extractor_dims(extractor_id: &str) -> Option<usize> {
    match extractor_id {
        STAT_SPEC_ID => Some(STAT_DIMS),
        EMBEDDING_EXTRACTOR_ID => Some(EMBEDDING_DIMS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVariant {
    pub tag: String,
    #[serde(default)]
    pub frame_indices: Option<[u32; 2]>,
    pub row_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMaterial {
    pub material_id: MaterialId,
    pub variants: Vec<ManifestVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub extractor_id: String,
    pub dims: usize,
    pub materials: Vec<ManifestMaterial>,
    pub byte_order: String,
    pub dtype: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVariant {
    pub tag: String,
    pub frame_indices: Option<[u32; 2]>,
    pub values: Vec<f32>,
}

impl FeatureVariant {
    pub fn info(&self) -> VariantInfo {
        VariantInfo {
            tag: self.tag.clone(),
            frame_indices: self.frame_indices,
        }
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialFeatures {
    pub material_id: MaterialId,
    pub variants: Vec<FeatureVariant>,
}

impl MaterialFeatures {
    /// The `canonical` row, or the first row when none is tagged so.
    pub fn canonical(&self) -> Option<&FeatureVariant> {
        self.variants
            .iter()
            .find(|v| v.tag == "canonical")
            .or_else(|| self.variants.first())
    }
}

/// In-memory feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub extractor_id: String,
    pub dims: usize,
    pub materials: Vec<MaterialFeatures>,
}

impl FeatureTable {
    pub fn new(extractor_id: impl Into<String>, dims: usize) -> Self {
        FeatureTable {
            extractor_id: extractor_id.into(),
            dims,
            materials: Vec::new(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.materials.iter().map(|m| m.variants.len()).sum()
    }

    pub fn get(&self, id: &MaterialId) -> Option<&MaterialFeatures> {
        self.materials.iter().find(|m| &m.material_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::invalid("feature table has zero dims"));
        }
        if let Some(d) = extractor_dims(&self.extractor_id) {
            if d != self.dims {
                return Err(Error::invalid(format!(
                    "extractor '{}' produces {d} dims, table declares {}",
                    self.extractor_id, self.dims
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for m in &self.materials {
            if !seen.insert(&m.material_id) {
                return Err(Error::invalid(format!("duplicate material '{}'", m.material_id)));
            }
            for v in &m.variants {
                if v.values.len() != self.dims {
                    return Err(Error::invalid(format!(
                        "material '{}' variant '{}' has {} values, expected {}",
                        m.material_id,
                        v.tag,
                        v.values.len(),
                        self.dims
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Path of the blob that belongs to a manifest.
pub fn blob_path(manifest_path: &Path) -> PathBuf {
    let mut s = manifest_path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

/// Manifest and blob bytes for a table. Rows are numbered in material and
/// variant order.
pub fn encode(table: &FeatureTable) -> Result<(Manifest, Vec<u8>)> {
    table.validate()?;
    let mut blob = Vec::with_capacity(4 * table.dims * table.row_count());
    let mut row = 0;
    let mut materials = Vec::with_capacity(table.materials.len());
    for m in &table.materials {
        let mut variants = Vec::with_capacity(m.variants.len());
        for v in &m.variants {
            for x in &v.values {
                blob.extend_from_slice(&x.to_le_bytes());
            }
            variants.push(ManifestVariant {
                tag: v.tag.clone(),
                frame_indices: v.frame_indices,
                row_index: row,
            });
            row += 1;
        }
        materials.push(ManifestMaterial {
            material_id: m.material_id.clone(),
            variants,
        });
    }
    let manifest = Manifest {
        version: MFX_VERSION.into(),
        extractor_id: table.extractor_id.clone(),
        dims: table.dims,
        materials,
        byte_order: "little-endian".into(),
        dtype: "f32".into(),
        extra: BTreeMap::new(),
    };
    Ok((manifest, blob))
}

pub fn decode(manifest: &Manifest, blob: &[u8], path: &Path) -> Result<FeatureTable> {
    if manifest.version != MFX_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version '{}', expected '{MFX_VERSION}'", manifest.version),
        ));
    }
    if manifest.byte_order != "little-endian" || manifest.dtype != "f32" {
        return Err(Error::format(path, "only little-endian f32 blobs are supported"));
    }
    if manifest.dims == 0 {
        return Err(Error::format(path, "dims must be positive"));
    }
    if let Some(d) = extractor_dims(&manifest.extractor_id) {
        if d != manifest.dims {
            return Err(Error::format(
                path,
                format!("extractor '{}' produces {d} dims, manifest says {}", manifest.extractor_id, manifest.dims),
            ));
        }
    }
    let rows: usize = manifest.materials.iter().map(|m| m.variants.len()).sum();
    let row_bytes = 4 * manifest.dims;
    if blob.len() != rows * row_bytes {
        return Err(Error::format(
            blob_path(path),
            format!(
                "blob size mismatch: expected {} bytes ({rows} rows × {} dims × 4), found {}",
                rows * row_bytes,
                manifest.dims,
                blob.len()
            ),
        ));
    }
    let mut used = vec![false; rows];
    let mut materials = Vec::with_capacity(manifest.materials.len());
    for m in &manifest.materials {
        let mut variants = Vec::with_capacity(m.variants.len());
        for v in &m.variants {
            if v.row_index >= rows || std::mem::replace(&mut used[v.row_index], true) {
                return Err(Error::format(
                    path,
                    format!(
                        "material '{}' variant '{}': row_index {} is out of range or reused ({rows} rows)",
                        m.material_id, v.tag, v.row_index
                    ),
                ));
            }
            let start = v.row_index * row_bytes;
            let values = blob[start..start + row_bytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            variants.push(FeatureVariant {
                tag: v.tag.clone(),
                frame_indices: v.frame_indices,
                values,
            });
        }
        materials.push(MaterialFeatures {
            material_id: m.material_id.clone(),
            variants,
        });
    }
    let table = FeatureTable {
        extractor_id: manifest.extractor_id.clone(),
        dims: manifest.dims,
        materials,
    };
    table.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(table)
}

pub fn save_mfx(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (manifest, blob) = encode(table)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bin = blob_path(path);
    std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
}

pub fn load_mfx(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::format(path, format!("manifest line {} column {}: {e}", e.line(), e.column()))
    })?;
    let bin = blob_path(path);
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    decode(&manifest, &blob, path)
}

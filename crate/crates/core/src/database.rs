//! The MFDB fingerprint database: a UTF-8 JSON document
//! `{"version": "1", "schema": ..., "materials": [...]}`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fingerprint::{typicality, MaterialId, MaterialRecord, SimilarityParams};
use crate::schema::AttributeSchema;
use crate::{Error, Result};

pub const MFDB_VERSION: &str = "1";

pub const DEFAULT_CATEGORIES: [&str; 13] = [
    "fabric", "wood", "paper", "coating", "plastic", "leather", "metal", "carpet", "ceramics",
    "glass", "sand", "soil", "other",
];

/// The closed set of labels a `MaterialRecord::category` may take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet(BTreeSet<String>);

impl Default for CategorySet {
    fn default() -> Self {
        CategorySet(DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect())
    }
}

impl CategorySet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CategorySet(labels.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Database {
    pub version: String,
    pub schema: AttributeSchema,
    pub materials: Vec<MaterialRecord>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Database {
    pub fn new(materials: Vec<MaterialRecord>) -> Self {
        Database {
            version: MFDB_VERSION.to_string(),
            schema: AttributeSchema::default(),
            materials,
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self, categories: &CategorySet) -> Result<()> {
        if self.version != MFDB_VERSION {
            return Err(Error::invalid(format!(
                "unsupported MFDB version '{}'",
                self.version
            )));
        }
        self.schema.validate()?;
        let mut seen = BTreeSet::new();
        for rec in &self.materials {
            if !seen.insert(&rec.material_id) {
                return Err(Error::invalid(format!("duplicate material id '{}'", rec.material_id)));
            }
            if rec.fingerprint.material_id != rec.material_id {
                return Err(Error::invalid(format!(
                    "record '{}' holds fingerprint for '{}'",
                    rec.material_id, rec.fingerprint.material_id
                )));
            }
            if rec.fingerprint.schema_version != self.schema.version {
                return Err(Error::invalid(format!(
                    "record '{}' uses schema '{}', database uses '{}'",
                    rec.material_id, rec.fingerprint.schema_version, self.schema.version
                )));
            }
            if !categories.contains(&rec.category) {
                return Err(Error::invalid(format!(
                    "record '{}' has unknown category '{}'",
                    rec.material_id, rec.category
                )));
            }
            rec.fingerprint.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, id: &MaterialId) -> Option<&MaterialRecord> {
        self.materials.iter().find(|r| &r.material_id == id)
    }

    /// Fills every record's `typicality` with the default 10% neighbourhood.
    pub fn compute_typicality(&mut self, params: SimilarityParams) -> Result<()> {
        if self.materials.len() < 2 {
            return Ok(());
        }
        let values = self
            .materials
            .iter()
            .map(|r| typicality(&self.materials, &r.material_id, 0.1, params))
            .collect::<Result<Vec<_>>>()?;
        for (rec, t) in self.materials.iter_mut().zip(values) {
            rec.typicality = Some(t);
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let db: Database = serde_json::from_str(text).map_err(|e| {
            Error::format(path, format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        Ok(db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    /// Loads and validates against the default category set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_categories(path, &CategorySet::default())
    }

    pub fn load_with_categories(path: impl AsRef<Path>, categories: &CategorySet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let db = Self::from_json(&text, path)?;
        db.validate(categories)?;
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

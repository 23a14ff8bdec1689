//! The fingerprint data model and the similarity measure used for retrieval.
//!
//! Similarity between two value vectors `v1`, `v2` of length `n = 16` is
//!
//! ```text
//! d = alpha * pearson(v1, v2) + (1 - alpha) * (1 - sum_i |v1[i] - v2[i]| / (2n))
//! ```
//!
//! With values in `[-1, 1]` both terms lie in `[-1, 1]` and `[0, 1]`
//! respectively, and higher means more alike.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema::{attribute_index, ATTRIBUTE_COUNT, DEFAULT_SCHEMA_VERSION};
use crate::stats::{cmp_f64, desc_then_key, pearson_unchecked};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialId(pub String);

impl MaterialId {
    pub fn new(id: impl Into<String>) -> Self {
        MaterialId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MaterialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MaterialId {
    fn from(s: &str) -> Self {
        MaterialId(s.to_string())
    }
}

impl From<String> for MaterialId {
    fn from(s: String) -> Self {
        MaterialId(s)
    }
}

pub type Values = [f64; ATTRIBUTE_COUNT];

/// 16 attribute values for one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub material_id: MaterialId,
    pub values: Values,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Values>,
    pub schema_version: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Fingerprint {
    pub fn new(material_id: impl Into<MaterialId>, values: Values) -> Result<Self> {
        let fp = Fingerprint {
            material_id: material_id.into(),
            values,
            stderr: None,
            schema_version: DEFAULT_SCHEMA_VERSION.to_string(),
            extra: BTreeMap::new(),
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn with_stderr(mut self, stderr: Values) -> Result<Self> {
        self.stderr = Some(stderr);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(v) {
                return Err(Error::invalid(format!(
                    "fingerprint {}: attribute {} value {v} outside [-1, 1]",
                    self.material_id,
                    i + 1
                )));
            }
        }
        if let Some(se) = &self.stderr {
            if let Some(bad) = se.iter().find(|s| !s.is_finite() || **s < 0.0) {
                return Err(Error::invalid(format!(
                    "fingerprint {}: negative or non-finite stderr {bad}",
                    self.material_id
                )));
            }
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }
}

/// Weight between the correlation term (`alpha = 1`) and the L1 term (`alpha = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub alpha: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams { alpha: 0.5 }
    }
}

impl SimilarityParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(SimilarityParams { alpha })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub material_id: MaterialId,
    pub category: String,
    pub fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<Media>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typicality: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl MaterialRecord {
    pub fn new(category: impl Into<String>, fingerprint: Fingerprint) -> Self {
        MaterialRecord {
            material_id: fingerprint.material_id.clone(),
            category: category.into(),
            fingerprint,
            media: None,
            typicality: None,
            extra: BTreeMap::new(),
        }
    }
}

/// References to frame images or a video; never the pixels themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Media {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMaterial {
    pub material_id: MaterialId,
    pub score: f64,
}

/// Similarity of two raw value vectors.
pub fn similarity_values(v1: &Values, v2: &Values, alpha: f64) -> f64 {
    let r = pearson_unchecked(v1, v2);
    let l1: f64 = v1.iter().zip(v2).map(|(a, b)| (a - b).abs()).sum();
    let n = ATTRIBUTE_COUNT as f64;
    alpha * r + (1.0 - alpha) * (1.0 - l1 / (2.0 * n))
}

pub fn similarity(f1: &Fingerprint, f2: &Fingerprint, params: SimilarityParams) -> Result<f64> {
    if f1.schema_version != f2.schema_version {
        return Err(Error::invalid(format!(
            "schema mismatch: '{}' vs '{}'",
            f1.schema_version, f2.schema_version
        )));
    }
    Ok(similarity_values(&f1.values, &f2.values, params.alpha))
}

/// Material ids ordered by one attribute; ties by ascending id.
pub fn rank_by_attribute(
    db: &[MaterialRecord],
    attribute_id: u8,
    descending: bool,
) -> Result<Vec<MaterialId>> {
    let idx = attribute_index(attribute_id)?;
    let mut order: Vec<&MaterialRecord> = db.iter().collect();
    order.sort_by(|a, b| {
        let (va, vb) = (a.fingerprint.values[idx], b.fingerprint.values[idx]);
        let primary = if descending {
            cmp_f64(vb, va)
        } else {
            cmp_f64(va, vb)
        };
        primary.then_with(|| a.material_id.cmp(&b.material_id))
    });
    Ok(order.into_iter().map(|r| r.material_id.clone()).collect())
}

/// Top-`k` most similar records to `query`, excluding the query's own id.
pub fn retrieve(
    db: &[MaterialRecord],
    query: &Fingerprint,
    k: usize,
    params: SimilarityParams,
) -> Result<Vec<ScoredMaterial>> {
    if db.is_empty() {
        return Err(Error::invalid("retrieve: empty database"));
    }
    if k == 0 {
        return Err(Error::invalid("retrieve: k must be at least 1"));
    }
    let mut scored = Vec::with_capacity(db.len());
    for rec in db.iter().filter(|r| r.material_id != query.material_id) {
        scored.push(ScoredMaterial {
            material_id: rec.material_id.clone(),
            score: similarity(query, &rec.fingerprint, params)?,
        });
    }
    scored.sort_by(|a, b| desc_then_key((a.score, &a.material_id), (b.score, &b.material_id)));
    scored.truncate(k);
    Ok(scored)
}

/// Number of neighbours that `typicality` averages over.
pub fn typicality_neighbor_count(db_len: usize, fraction: f64) -> usize {
    let others = db_len.saturating_sub(1);
    // tolerance absorbs products like 0.1 * 30 = 3.0000000000000004
    let m = (fraction * others as f64 - 1e-9).ceil().max(1.0) as usize;
    m.min(others)
}

/// Mean similarity to the `ceil(fraction * (n - 1))` most similar other materials.
pub fn typicality(
    db: &[MaterialRecord],
    material_id: &MaterialId,
    fraction: f64,
    params: SimilarityParams,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("typicality fraction {fraction} outside (0, 1]")));
    }
    if db.len() < 2 {
        return Err(Error::invalid("typicality needs at least two materials"));
    }
    let target = db
        .iter()
        .find(|r| &r.material_id == material_id)
        .ok_or_else(|| Error::NotFound(format!("material '{material_id}'")))?;
    let m = typicality_neighbor_count(db.len(), fraction);
    let neighbors = retrieve(db, &target.fingerprint, m, params)?;
    Ok(neighbors.iter().map(|s| s.score).sum::<f64>() / neighbors.len() as f64)
}

/// Pairwise similarities in database order.
pub fn similarity_matrix(db: &[MaterialRecord], params: SimilarityParams) -> Result<DMatrix<f64>> {
    if db.len() < 2 {
        return Err(Error::invalid("similarity matrix needs at least two materials"));
    }
    let n = db.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = similarity(&db[i].fingerprint, &db[i].fingerprint, params)?;
        for j in (i + 1)..n {
            let d = similarity(&db[i].fingerprint, &db[j].fingerprint, params)?;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(id: &str, values: Values) -> Fingerprint {
        Fingerprint::new(id, values).unwrap()
    }

    fn ramp(offset: f64) -> Values {
        std::array::from_fn(|i| -0.75 + 0.1 * i as f64 + offset)
    }

    fn record(id: &str, values: Values) -> MaterialRecord {
        MaterialRecord::new("fabric", fp(id, values))
    }

    #[test]
    fn identical_fingerprints_score_one() {
        let a = fp("a", ramp(0.0));
        let b = fp("b", ramp(0.0));
        assert_eq!(similarity(&a, &b, SimilarityParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn pure_l1_with_constant_offset() {
        let a = fp("a", std::array::from_fn(|i| -0.5 + 0.02 * i as f64));
        let b = fp("b", std::array::from_fn(|i| a.values[i] + 0.5));
        let d = similarity(&a, &b, SimilarityParams::new(0.0).unwrap()).unwrap();
        assert!((d - 0.75).abs() < 1e-12, "{d}");
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let a = fp("a", ramp(0.0));
        let mut b = fp("b", ramp(0.0));
        b.schema_version = "other".into();
        assert!(matches!(
            similarity(&a, &b, SimilarityParams::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fingerprint_range_is_enforced() {
        let mut v = ramp(0.0);
        v[3] = 1.5;
        assert!(Fingerprint::new("x", v).is_err());
        assert!(fp("x", ramp(0.0)).with_stderr([-0.1; 16]).is_err());
        assert!(SimilarityParams::new(1.2).is_err());
    }

    #[test]
    fn rank_by_brightness() {
        let mut vals = [[0.0; 16]; 3];
        vals[0][5] = 0.9;
        vals[1][5] = 0.1;
        vals[2][5] = 0.5;
        let db = vec![record("m1", vals[0]), record("m2", vals[1]), record("m3", vals[2])];
        let ids = rank_by_attribute(&db, 6, true).unwrap();
        assert_eq!(ids, vec!["m1".into(), "m3".into(), "m2".into()] as Vec<MaterialId>);
        assert!(rank_by_attribute(&db, 17, true).is_err());
    }

    #[test]
    fn rank_ties_fall_back_to_id() {
        let db = vec![record("b", [0.3; 16]), record("a", [0.3; 16])];
        let ids = rank_by_attribute(&db, 1, true).unwrap();
        assert_eq!(ids, vec![MaterialId::from("a"), MaterialId::from("b")]);
        let ids = rank_by_attribute(&db, 1, false).unwrap();
        assert_eq!(ids, vec![MaterialId::from("a"), MaterialId::from("b")]);
    }

    #[test]
    fn retrieve_exact_match_first_and_clamps_k() {
        let db = vec![
            record("a", ramp(0.0)),
            record("b", ramp(0.2)),
            record("c", ramp(-0.2)),
        ];
        let query = fp("q", ramp(0.2));
        let hits = retrieve(&db, &query, 10, SimilarityParams::default()).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].material_id.as_str(), "b");
        assert_eq!(hits[0].score, 1.0);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn retrieve_excludes_query_id() {
        let db = vec![record("a", ramp(0.0)), record("b", ramp(0.1))];
        let hits = retrieve(&db, &db[0].fingerprint, 5, SimilarityParams::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].material_id.as_str(), "b");
        assert!(retrieve(&[], &db[0].fingerprint, 5, SimilarityParams::default()).is_err());
    }

    #[test]
    fn typicality_of_identical_db_is_one() {
        let db: Vec<_> = (0..11).map(|i| record(&format!("m{i:02}"), ramp(0.0))).collect();
        let t = typicality(&db, &"m03".into(), 0.1, SimilarityParams::default()).unwrap();
        assert_eq!(t, 1.0);
        assert!(matches!(
            typicality(&db, &"zz".into(), 0.1, SimilarityParams::default()),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn typicality_of_pair_is_their_similarity() {
        let db = vec![record("a", ramp(0.0)), record("b", ramp(0.15))];
        let p = SimilarityParams::default();
        let t = typicality(&db, &"a".into(), 0.1, p).unwrap();
        assert_eq!(t, similarity(&db[0].fingerprint, &db[1].fingerprint, p).unwrap());
    }

    #[test]
    fn neighbor_count_rounding() {
        assert_eq!(typicality_neighbor_count(50, 0.1), 5);
        assert_eq!(typicality_neighbor_count(31, 0.1), 3);
        assert_eq!(typicality_neighbor_count(11, 0.1), 1);
        assert_eq!(typicality_neighbor_count(2, 0.1), 1);
        assert_eq!(typicality_neighbor_count(347, 0.1), 35);
        assert_eq!(typicality_neighbor_count(10, 1.0), 9);
    }

    #[test]
    fn matrix_of_two() {
        let db = vec![record("a", ramp(0.0)), record("b", ramp(0.15))];
        let p = SimilarityParams::default();
        let m = similarity_matrix(&db, p).unwrap();
        let d = similarity(&db[0].fingerprint, &db[1].fingerprint, p).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(0, 1)], d);
        assert_eq!(m[(1, 0)], d);
    }

    #[test]
    fn unknown_fields_survive_serde() {
        let json = r#"{"material_id":"m1","values":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0.5],
            "schema_version":"mf-16-v1","note":"kept"}"#;
        let f: Fingerprint = serde_json::from_str(json).unwrap();
        assert_eq!(f.extra["note"], "kept");
        let back = serde_json::to_value(&f).unwrap();
        assert_eq!(back["note"], "kept");
    }
}

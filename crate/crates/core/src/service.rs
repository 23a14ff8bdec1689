//! Read-only query state shared by the command line and the HTTP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::database::Database;
use crate::features::{extract_stat_features, FramePair, STAT_SPEC_ID};
use crate::fingerprint::{retrieve, similarity_matrix, Fingerprint, MaterialId, SimilarityParams};
use crate::mds::classical_mds;
use crate::mfx::{extractor_dims, EMBEDDING_EXTRACTOR_ID};
use crate::model::{predict_values, MlpModel};
use crate::{Error, Result};

pub const QUERY_ID: &str = "query";

#[derive(Debug, Clone)]
pub struct RegisteredModel {
    pub model: MlpModel,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub material_id: MaterialId,
    pub x: f64,
    pub y: f64,
}

/// Database, models keyed by extractor id, and derived tables, fixed at
/// construction.
#[derive(Debug, Clone)]
pub struct ServiceState {
    db: Database,
    models: BTreeMap<String, RegisteredModel>,
    params: SimilarityParams,
    embedding: Vec<EmbeddingPoint>,
}

impl ServiceState {
    /// Fills missing typicality scores and computes the 2-D embedding.
    pub fn new(mut db: Database, params: SimilarityParams) -> Result<Self> {
        if db.materials.iter().any(|r| r.typicality.is_none()) {
            db.compute_typicality(params)?;
        }
        let embedding = if db.materials.len() >= 2 {
            let coords = classical_mds(&similarity_matrix(&db.materials, params)?, 2)?;
            db.materials
                .iter()
                .enumerate()
                .map(|(i, r)| EmbeddingPoint {
                    material_id: r.material_id.clone(),
                    x: coords[(i, 0)],
                    y: coords[(i, 1)],
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(ServiceState {
            db,
            models: BTreeMap::new(),
            params,
            embedding,
        })
    }

    /// Registers a model under its `feature_spec_id`.
    pub fn with_model(mut self, model: MlpModel, version: impl Into<String>) -> Result<Self> {
        model.validate()?;
        let id = model.feature_spec_id.clone();
        match extractor_dims(&id) {
            Some(d) if d == model.spec.input_dim() => {}
            Some(d) => {
                return Err(Error::invalid(format!(
                    "model for '{id}' takes {} inputs, extractor produces {d}",
                    model.spec.input_dim()
                )))
            }
            None => return Err(Error::invalid(format!("model bound to unknown extractor '{id}'"))),
        }
        if model.schema_version != self.db.schema.version {
            return Err(Error::invalid(format!(
                "model schema '{}' differs from database schema '{}'",
                model.schema_version, self.db.schema.version
            )));
        }
        self.models.insert(id, RegisteredModel { model, version: version.into() });
        Ok(self)
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn params(&self) -> SimilarityParams {
        self.params
    }

    pub fn model(&self, extractor_id: &str) -> Option<&RegisteredModel> {
        self.models.get(extractor_id)
    }

    pub fn extractor_ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn embedding(&self) -> &[EmbeddingPoint] {
        &self.embedding
    }
}

#[derive(Debug, Clone)]
pub enum PredictInput {
    /// A precomputed feature vector. Without an extractor id the model is
    /// chosen by input width.
    Vector {
        extractor_id: Option<String>,
        values: Vec<f64>,
    },
    Frames {
        extractor_id: Option<String>,
        pair: FramePair,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub fingerprint: Fingerprint,
    pub extractor_id: String,
    pub model_version: String,
}

fn model_for<'a>(state: &'a ServiceState, extractor_id: &str) -> Result<&'a RegisteredModel> {
    state.model(extractor_id).ok_or_else(|| {
        Error::DependencyUnavailable(format!("no model loaded for extractor '{extractor_id}'"))
    })
}

/// Predicted fingerprint, clamped to `[-1, 1]`, with the extractor and model
/// that produced it.
pub fn predict_fingerprint(state: &ServiceState, input: &PredictInput) -> Result<Prediction> {
    let (registered, features) = match input {
        PredictInput::Vector { extractor_id, values } => {
            let registered = match extractor_id {
                Some(id) => model_for(state, id)?,
                None => state
                    .models
                    .values()
                    .find(|m| m.model.spec.input_dim() == values.len())
                    .ok_or_else(|| {
                        Error::DependencyUnavailable(format!("no model accepts {}-dimensional vectors", values.len()))
                    })?,
            };
            if values.len() != registered.model.spec.input_dim() {
                return Err(Error::invalid(format!(
                    "vector has {} values, model for '{}' expects {}",
                    values.len(),
                    registered.model.feature_spec_id,
                    registered.model.spec.input_dim()
                )));
            }
            (registered, values.clone())
        }
        PredictInput::Frames { extractor_id, pair } => {
            let id = extractor_id.as_deref().unwrap_or(STAT_SPEC_ID);
            if id == EMBEDDING_EXTRACTOR_ID {
                return Err(Error::DependencyUnavailable(format!(
                    "'{id}' needs embedding sidecar; submit a precomputed vector instead"
                )));
            }
            if id != STAT_SPEC_ID {
                return Err(Error::invalid(format!("unknown extractor '{id}'")));
            }
            let registered = model_for(state, id)?;
            (registered, extract_stat_features(pair)?.values)
        }
    };
    let values = predict_values(&registered.model, &features)?;
    let mut fingerprint = Fingerprint::new(QUERY_ID, values)?;
    fingerprint.schema_version = registered.model.schema_version.clone();
    Ok(Prediction {
        fingerprint,
        extractor_id: registered.model.feature_spec_id.clone(),
        model_version: registered.version.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub material_id: MaterialId,
    pub score: f64,
    pub typicality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RetrieveQuery {
    MaterialId(MaterialId),
    Fingerprint(Fingerprint),
}

/// Top-`k` materials for a stored material or a free fingerprint, each with
/// its stored typicality. `alpha` overrides the state's similarity weight.
pub fn retrieve_hits(
    state: &ServiceState,
    query: &RetrieveQuery,
    k: usize,
    alpha: Option<f64>,
) -> Result<Vec<RetrievalHit>> {
    let params = match alpha {
        Some(a) => SimilarityParams::new(a)?,
        None => state.params,
    };
    let fingerprint = match query {
        RetrieveQuery::MaterialId(id) => &state
            .db
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("material '{id}'")))?
            .fingerprint,
        RetrieveQuery::Fingerprint(f) => {
            f.validate()?;
            f
        }
    };
    let scored = retrieve(&state.db.materials, fingerprint, k, params)?;
    Ok(scored
        .into_iter()
        .map(|s| RetrievalHit {
            typicality: state.db.get(&s.material_id).and_then(|r| r.typicality),
            material_id: s.material_id,
            score: s.score,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::MaterialRecord;
    use crate::imaging::RgbImage;
    use crate::features::CaptureSource;
    use crate::model::MlpSpec;

    fn db() -> Database {
        Database::new(
            (0..6)
                .map(|i| {
                    let v = std::array::from_fn(|a| ((i * 7 + a * 3) as f64 * 0.41).sin() * 0.9);
                    MaterialRecord::new("other", Fingerprint::new(format!("m{i}"), v).unwrap())
                })
                .collect(),
        )
    }

    fn stat_model() -> MlpModel {
        let mut m = MlpModel::init(&MlpSpec::statistical(), 3);
        m.feature_spec_id = STAT_SPEC_ID.into();
        m
    }

    #[test]
    fn vector_prediction_is_clamped_and_deterministic() {
        let state = ServiceState::new(db(), SimilarityParams::default())
            .unwrap()
            .with_model(stat_model(), "v1")
            .unwrap();
        let input = PredictInput::Vector {
            extractor_id: None,
            values: (0..28).map(|i| i as f64 * 10.0).collect(),
        };
        let a = predict_fingerprint(&state, &input).unwrap();
        assert!(a.fingerprint.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, predict_fingerprint(&state, &input).unwrap());
        assert_eq!(a.extractor_id, STAT_SPEC_ID);
    }

    #[test]
    fn missing_extractors_are_dependency_errors() {
        let state = ServiceState::new(db(), SimilarityParams::default()).unwrap();
        let img = RgbImage::filled(8, 8, [0.5; 3]);
        let pair = FramePair::new(img.clone(), img, CaptureSource::Smartphone).unwrap();
        let sidecar = PredictInput::Frames {
            extractor_id: Some(EMBEDDING_EXTRACTOR_ID.into()),
            pair: pair.clone(),
        };
        let err = predict_fingerprint(&state, &sidecar).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("sidecar"));
        let no_model = PredictInput::Frames { extractor_id: None, pair };
        assert_eq!(predict_fingerprint(&state, &no_model).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn retrieval_carries_typicality() {
        let state = ServiceState::new(db(), SimilarityParams::default()).unwrap();
        let hits = retrieve_hits(&state, &RetrieveQuery::MaterialId(MaterialId::new("m0")), 3, None).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(hits.iter().all(|h| h.typicality.is_some()));
        assert_eq!(state.embedding().len(), 6);
    }
}

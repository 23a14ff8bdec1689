//! `.mfm` model checkpoints.
//!
//! Layout: the 4 bytes `MFM1`, a little-endian `u32` header length, a UTF-8
//! JSON header, then every parameter as a little-endian `f32`, layer by
//! layer, each layer's weight matrix row-major followed by its bias.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::mlp::{MlpModel, MlpSpec, TrainingSummary};
use crate::features::FeatureScaler;
use crate::{Error, Result};

pub const MFM_MAGIC: &[u8; 4] = b"MFM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: MlpSpec,
    pub feature_spec_id: String,
    pub schema_version: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: Option<TrainingSummary>,
    #[serde(default)]
    pub input_scaler: Option<FeatureScaler>,
    pub train_fingerprint_range: [f64; 2],
    pub param_count: usize,
    pub byte_order: String,
    pub dtype: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

pub fn encode(model: &MlpModel, extra: BTreeMap<String, Value>) -> Result<Vec<u8>> {
    model.validate()?;
    let header = CheckpointHeader {
        spec: model.spec.clone(),
        feature_spec_id: model.feature_spec_id.clone(),
        schema_version: model.schema_version.clone(),
        seed: model.seed,
        training: model.summary.clone(),
        input_scaler: model.input_scaler.clone(),
        train_fingerprint_range: model.train_fingerprint_range,
        param_count: model.param_count(),
        byte_order: "little-endian".into(),
        dtype: "f32".into(),
        extra,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * header.param_count);
    out.extend_from_slice(MFM_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(MlpModel, CheckpointHeader)> {
    if bytes.len() < 8 || &bytes[..4] != MFM_MAGIC {
        return Err(Error::format(path, "missing MFM1 magic at offset 0"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = 8 + header_len;
    if bytes.len() < body {
        return Err(Error::format(
            path,
            format!("header claims {header_len} bytes at offset 8, file has {}", bytes.len() - 8),
        ));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| Error::format(path, format!("header at offset 8: {e}")))?;
    if header.byte_order != "little-endian" || header.dtype != "f32" {
        return Err(Error::format(path, "only little-endian f32 parameters are supported"));
    }
    let spec = MlpSpec::new(header.spec.layer_dims.clone())
        .map_err(|e| Error::format(path, e.to_string()))?;
    let expected = spec.param_count();
    if header.param_count != expected {
        return Err(Error::format(
            path,
            format!("header lists {} parameters, spec implies {expected}", header.param_count),
        ));
    }
    let blob = &bytes[body..];
    if blob.len() != 4 * expected {
        return Err(Error::format(
            path,
            format!(
                "parameter blob at offset {body}: expected {} bytes, found {}",
                4 * expected,
                blob.len()
            ),
        ));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut model = MlpModel::zeros(&spec);
    model.set_params(&params)?;
    model.feature_spec_id = header.feature_spec_id.clone();
    model.schema_version = header.schema_version.clone();
    model.seed = header.seed;
    model.summary = header.training.clone();
    model.input_scaler = header.input_scaler.clone();
    model.train_fingerprint_range = header.train_fingerprint_range;
    model.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok((model, header))
}

pub fn save(model: &MlpModel, extra: BTreeMap<String, Value>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, extra)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(MlpModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MlpModel {
        let mut m = MlpModel::init(&MlpSpec::new(vec![3, 5, 16]).unwrap(), 9);
        m.round_to_storage();
        m.feature_spec_id = "S-v1".into();
        m
    }

    #[test]
    fn round_trip_is_exact_after_rounding() {
        let m = model();
        let bytes = encode(&m, BTreeMap::new()).unwrap();
        let (back, header) = decode(&bytes, Path::new("m.mfm")).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.param_count, m.param_count());
    }

    #[test]
    fn corrupted_files_are_format_errors() {
        let bytes = encode(&model(), BTreeMap::new()).unwrap();
        let p = Path::new("m.mfm");
        assert_eq!(decode(&bytes[..bytes.len() - 4], p).unwrap_err().exit_code(), 4);
        assert_eq!(decode(b"XXXX0000", p).unwrap_err().exit_code(), 4);
        let mut long = bytes.clone();
        long.push(0);
        let err = decode(&long, p).unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");
    }
}

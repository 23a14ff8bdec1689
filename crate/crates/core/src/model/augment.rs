//! Per-epoch choice among precomputed augmentation variants.
//!
//! Image-level augmentations happen where features are extracted; every
//! material arrives with one or more feature rows tagged by how they were
//! produced (`canonical`, `crop…`, `rot…`, `scale…`, `az…`). The trainer only
//! chooses which row stands in for a material in a given epoch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::features::frame_step_degrees;
use crate::{Error, Result};

pub const MAX_SCALE_JITTER: f64 = 0.05;
pub const MAX_AZIMUTH_JITTER_DEGREES: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub random_crop: bool,
    pub rotation: bool,
    pub scale_jitter: f64,
    pub azimuth_jitter_degrees: f64,
}

impl AugmentationPolicy {
    /// No augmentation: always the canonical row.
    pub fn none() -> Self {
        AugmentationPolicy {
            random_crop: false,
            rotation: false,
            scale_jitter: 0.0,
            azimuth_jitter_degrees: 0.0,
        }
    }

    /// Statistical features are rotation invariant, so rotation is off.
    pub fn statistical() -> Self {
        AugmentationPolicy {
            random_crop: true,
            rotation: false,
            scale_jitter: MAX_SCALE_JITTER,
            azimuth_jitter_degrees: MAX_AZIMUTH_JITTER_DEGREES,
        }
    }

    pub fn embedding() -> Self {
        AugmentationPolicy {
            rotation: true,
            ..Self::statistical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_SCALE_JITTER).contains(&self.scale_jitter) {
            return Err(Error::invalid(format!(
                "scale jitter {} outside [0, {MAX_SCALE_JITTER}]",
                self.scale_jitter
            )));
        }
        if !(0.0..=MAX_AZIMUTH_JITTER_DEGREES).contains(&self.azimuth_jitter_degrees) {
            return Err(Error::invalid(format!(
                "azimuth jitter {}° outside [0, {MAX_AZIMUTH_JITTER_DEGREES}]",
                self.azimuth_jitter_degrees
            )));
        }
        Ok(())
    }

    /// Largest near-specular frame offset the azimuth jitter admits.
    pub fn max_frame_offset(&self) -> u32 {
        (self.azimuth_jitter_degrees / frame_step_degrees()).ceil() as u32
    }
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::statistical()
    }
}

/// Tag and frame metadata of one feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantInfo {
    pub tag: String,
    pub frame_indices: Option<[u32; 2]>,
}

impl VariantInfo {
    pub fn canonical(frame_indices: Option<[u32; 2]>) -> Self {
        VariantInfo {
            tag: "canonical".into(),
            frame_indices,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Canonical,
    Crop,
    Rotation,
    Scale,
    Azimuth(Option<i32>),
    Unknown,
}

fn kind(tag: &str) -> Kind {
    if tag == "canonical" {
        Kind::Canonical
    } else if tag.starts_with("crop") {
        Kind::Crop
    } else if tag.starts_with("rot") {
        Kind::Rotation
    } else if tag.starts_with("scale") {
        Kind::Scale
    } else if let Some(rest) = tag.strip_prefix("az") {
        Kind::Azimuth(rest.parse().ok())
    } else {
        Kind::Unknown
    }
}

/// Eligible variant indices per material, fixed for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantPlan {
    eligible: Vec<Vec<usize>>,
}

impl VariantPlan {
    pub fn new(policy: &AugmentationPolicy, materials: &[Vec<VariantInfo>]) -> Result<(Self, Vec<Warning>)> {
        policy.validate()?;
        let max_offset = policy.max_frame_offset() as i64;
        let mut warnings = Vec::new();
        let mut eligible = Vec::with_capacity(materials.len());
        for (m, variants) in materials.iter().enumerate() {
            if variants.is_empty() {
                return Err(Error::invalid(format!("material #{m} has no feature rows")));
            }
            let canonical = match variants.iter().position(|v| v.tag == "canonical") {
                Some(c) => c,
                None => {
                    warnings.push(Warning::new(
                        "missing-canonical",
                        format!("material #{m} has no canonical row; using '{}'", variants[0].tag),
                    ));
                    0
                }
            };
            let base_frame = variants[canonical].frame_indices.map(|f| f[1] as i64);
            let mut ok = vec![canonical];
            for (i, v) in variants.iter().enumerate() {
                if i == canonical {
                    continue;
                }
                let allowed = match kind(&v.tag) {
                    Kind::Canonical => false,
                    Kind::Crop => policy.random_crop,
                    Kind::Rotation => policy.rotation,
                    Kind::Scale => policy.scale_jitter > 0.0,
                    Kind::Azimuth(parsed) => {
                        let offset = match (v.frame_indices, base_frame) {
                            (Some(f), Some(b)) => Some(f[1] as i64 - b),
                            _ => parsed.map(i64::from),
                        };
                        match offset {
                            Some(o) => max_offset > 0 && o.abs() <= max_offset,
                            None => {
                                warnings.push(Warning::new(
                                    "missing-variant",
                                    format!("material #{m}: azimuth row '{}' has no frame offset", v.tag),
                                ));
                                false
                            }
                        }
                    }
                    Kind::Unknown => {
                        warnings.push(Warning::new(
                            "unknown-variant",
                            format!("material #{m}: ignoring row tagged '{}'", v.tag),
                        ));
                        false
                    }
                };
                if allowed {
                    ok.push(i);
                }
            }
            eligible.push(ok);
        }
        Ok((VariantPlan { eligible }, warnings))
    }

    /// Single canonical row per material.
    pub fn canonical_only(materials: usize) -> Self {
        VariantPlan {
            eligible: vec![vec![0]; materials],
        }
    }

    pub fn canonical(&self, material: usize) -> usize {
        self.eligible[material][0]
    }

    /// Uniform choice per material, determined by `(seed, epoch, material)`.
    pub fn choose(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.eligible
            .iter()
            .map(|opts| {
                if opts.len() == 1 {
                    opts[0]
                } else {
                    opts[rng.random_range(0..opts.len())]
                }
            })
            .collect()
    }
}

/// Variant row index chosen for every material in one epoch.
pub fn augment_indices(
    policy: &AugmentationPolicy,
    seed: u64,
    epoch: u64,
    materials: &[Vec<VariantInfo>],
) -> Result<(Vec<usize>, Vec<Warning>)> {
    let (plan, warnings) = VariantPlan::new(policy, materials)?;
    Ok((plan.choose(seed, epoch), warnings))
}

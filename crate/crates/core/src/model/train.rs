//! Mini-batch training with adaptive-moment updates and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{AugmentationPolicy, VariantInfo, VariantPlan};
use super::mlp::{MlpModel, MlpSpec, TrainingSummary};
use crate::diagnostics::Warning;
use crate::features::FeatureScaler;
use crate::fingerprint::Values;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training samples held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    pub augmentation: AugmentationPolicy,
    /// Fit a per-dimension scaler on the training rows and store it in the model.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 2000,
            patience: 100,
            validation_fraction: 0.1,
            seed: 0,
            augmentation: AugmentationPolicy::none(),
            standardize: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("learning rate, batch size, epochs and patience must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        self.augmentation.validate()
    }
}

/// One training material: its feature rows (canonical first unless tagged
/// otherwise) and its target fingerprint values.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub rows: Vec<Vec<f64>>,
    pub variants: Vec<VariantInfo>,
    pub target: Values,
}

impl TrainingSample {
    pub fn single(features: Vec<f64>, target: Values) -> Self {
        TrainingSample {
            rows: vec![features],
            variants: vec![VariantInfo::canonical(None)],
            target,
        }
    }
}

/// Trains on one feature vector per material.
pub fn mlp_train(
    spec: &MlpSpec,
    features: &[Vec<f64>],
    fingerprints: &[Values],
    config: &TrainConfig,
) -> Result<MlpModel> {
    if features.len() != fingerprints.len() {
        return Err(Error::invalid(format!(
            "{} feature vectors but {} fingerprints",
            features.len(),
            fingerprints.len()
        )));
    }
    let samples: Vec<TrainingSample> = features
        .iter()
        .zip(fingerprints)
        .map(|(x, y)| TrainingSample::single(x.clone(), *y))
        .collect();
    Ok(mlp_train_samples(spec, &samples, config)?.0)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains with augmentation variants. Returns the model with the best
/// validation loss, its parameters rounded to checkpoint precision.
pub fn mlp_train_samples(
    spec: &MlpSpec,
    samples: &[TrainingSample],
    config: &TrainConfig,
) -> Result<(MlpModel, Vec<Warning>)> {
    config.validate()?;
    if samples.len() < 10 {
        return Err(Error::invalid(format!(
            "training needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let dim = spec.input_dim();
    for (i, s) in samples.iter().enumerate() {
        if s.rows.is_empty() || s.rows.len() != s.variants.len() {
            return Err(Error::invalid(format!("sample {i}: rows and variant tags do not line up")));
        }
        if let Some(bad) = s.rows.iter().find(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "sample {i}: feature row has {} dims, spec expects {dim}",
                bad.len()
            )));
        }
        if s.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i}: non-finite feature")));
        }
        if s.target.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("sample {i}: target outside [-1, 1]")));
        }
    }

    let variant_infos: Vec<Vec<VariantInfo>> = samples.iter().map(|s| s.variants.clone()).collect();
    let (plan, warnings) = VariantPlan::new(&config.augmentation, &variant_infos)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * config.validation_fraction).round() as usize).clamp(1, samples.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let canonical = |i: usize| &samples[i].rows[plan.canonical(i)];
    let scaler = if config.standardize {
        let rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| canonical(i).clone()).collect();
        Some(FeatureScaler::fit(&rows)?)
    } else {
        None
    };
    let scale = |x: &[f64]| match &scaler {
        Some(s) => s.transform(x),
        None => x.to_vec(),
    };
    // every row scaled once up front
    let scaled: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| s.rows.iter().map(|r| scale(r)).collect())
        .collect();
    let canon_x = |idx: &[usize]| -> Vec<&[f64]> {
        idx.iter().map(|&i| scaled[i][plan.canonical(i)].as_slice()).collect()
    };
    let targets = |idx: &[usize]| -> Vec<Values> { idx.iter().map(|&i| samples[i].target).collect() };
    let (train_x, train_y) = (canon_x(&train_idx), targets(&train_idx));
    let (val_x, val_y) = (canon_x(val_idx), targets(val_idx));

    let mut model = MlpModel::init(spec, config.seed);
    model.input_scaler = scaler.clone();
    let initial_loss = model.loss(&train_x, &train_y);
    let mut best_val = model.loss(&val_x, &val_y);
    let mut best_params = model.params();
    let mut best_epoch = 0;
    let mut params = best_params.clone();
    let mut adam = Adam::new(params.len());
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let choice = plan.choose(config.seed, epoch as u64);
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| scaled[i][choice[i]].as_slice()).collect();
            let ys = targets(batch);
            let (loss, grads) = model.loss_and_gradient(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} in epoch {epoch} (learning rate {})",
                    config.learning_rate
                )));
            }
            adam.step(&mut params, &grads.flat(), config.learning_rate);
            model.set_params(&params)?;
        }
        let val = model.loss(&val_x, &val_y);
        if !val.is_finite() {
            return Err(Error::Training(format!("validation loss became {val} in epoch {epoch}")));
        }
        if val < best_val {
            best_val = val;
            best_params.clone_from(&params);
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            stopped_early = true;
            break;
        }
    }

    model.set_params(&best_params)?;
    model.round_to_storage();
    model.seed = Some(config.seed);
    model.summary = Some(TrainingSummary {
        epochs_run,
        best_epoch,
        initial_loss,
        final_train_loss: model.loss(&train_x, &train_y),
        best_validation_loss: best_val,
        train_count: train_idx.len(),
        validation_count: val_idx.len(),
        stopped_early,
    });
    Ok((model, warnings))
}

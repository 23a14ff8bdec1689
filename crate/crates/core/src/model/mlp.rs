//! Fully connected network: rectified-linear hidden layers, identity output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureScaler;
use crate::fingerprint::Values;
use crate::schema::{ATTRIBUTE_COUNT, DEFAULT_SCHEMA_VERSION};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output layer"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if *layer_dims.last().unwrap() != ATTRIBUTE_COUNT {
            return Err(Error::invalid(format!(
                "output dimension must be {ATTRIBUTE_COUNT}, got {}",
                layer_dims.last().unwrap()
            )));
        }
        Ok(MlpSpec { layer_dims })
    }

    /// 28-16-16-16, for the statistical features.
    pub fn statistical() -> Self {
        MlpSpec {
            layer_dims: vec![28, 16, 16, 16],
        }
    }

    /// 1024-512-512-16, for concatenated image embeddings.
    pub fn embedding() -> Self {
        MlpSpec {
            layer_dims: vec![1024, 512, 512, 16],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

/// Summary written into checkpoints after training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub best_validation_loss: f64,
    pub train_count: usize,
    pub validation_count: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub feature_spec_id: String,
    pub schema_version: String,
    /// Applied to raw features before the first layer.
    pub input_scaler: Option<FeatureScaler>,
    pub train_fingerprint_range: [f64; 2],
    pub seed: Option<u64>,
    pub summary: Option<TrainingSummary>,
}

/// Per-layer `(d weights, d bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

impl MlpModel {
    fn with_layers(spec: MlpSpec, layers: Vec<Dense>) -> Self {
        MlpModel {
            spec,
            layers,
            feature_spec_id: String::new(),
            schema_version: DEFAULT_SCHEMA_VERSION.to_string(),
            input_scaler: None,
            train_fingerprint_range: [-1.0, 1.0],
            seed: None,
            summary: None,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| Dense {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::with_layers(spec.clone(), layers)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(spec);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        model.seed = Some(seed);
        model
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Rounds every parameter to `f32` precision, the checkpoint storage type.
    pub fn round_to_storage(&mut self) {
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *w as f32 as f64;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.spec.layer_dims;
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::invalid("layer count does not match spec"));
        }
        for (l, w) in self.layers.iter().zip(dims.windows(2)) {
            if l.in_dim != w[0] || l.out_dim != w[1] || l.weights.len() != w[0] * w[1] || l.bias.len() != w[1] {
                return Err(Error::invalid("layer shape does not match spec"));
            }
            if l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()) {
                return Err(Error::invalid("non-finite parameter"));
            }
        }
        if let Some(s) = &self.input_scaler {
            if s.dims() != self.spec.input_dim() {
                return Err(Error::invalid("input scaler dimension does not match spec"));
            }
        }
        Ok(())
    }

    /// Forward pass on already-scaled inputs, keeping each layer's activation.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.apply(acts.last().unwrap(), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// Network output for an input that has already been standardized.
    pub fn forward_scaled(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} dims, model expects {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        Ok(self.forward_cached(x).pop().unwrap())
    }

    /// Scales `x` with the stored scaler, if any.
    pub fn prepare_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} dims, model expects {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        Ok(match &self.input_scaler {
            Some(s) => s.transform(x),
            None => x.to_vec(),
        })
    }

    /// MSE over all `batch × 16` outputs and its parameter gradient.
    pub fn loss_and_gradient<X: AsRef<[f64]>>(&self, xs: &[X], ys: &[Values]) -> Result<(f64, Gradients)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::invalid("inputs and targets must be non-empty and aligned"));
        }
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / (xs.len() * ATTRIBUTE_COUNT) as f64;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let x = x.as_ref();
            if x.len() != self.spec.input_dim() {
                return Err(Error::invalid("input dimension mismatch"));
            }
            let acts = self.forward_cached(x);
            let out = acts.last().unwrap();
            let mut delta: Vec<f64> = out
                .iter()
                .zip(y)
                .map(|(o, t)| {
                    loss += (o - t) * (o - t);
                    2.0 * (o - t) * scale
                })
                .collect();
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let (gw, gb) = &mut grads.layers[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.in_dim];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                // relu'(z) = [z > 0] = [a > 0]
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss * scale, grads))
    }

    pub fn loss<X: AsRef<[f64]>>(&self, xs: &[X], ys: &[Values]) -> f64 {
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let out = self.forward_cached(x.as_ref()).pop().unwrap();
            total += out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        }
        total / (xs.len() * ATTRIBUTE_COUNT) as f64
    }
}

/// Applies the network to a raw feature vector; the output is not clamped.
pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<Values> {
    let scaled = model.prepare_input(x)?;
    let out = model.forward_scaled(&scaled)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("network produced a non-finite output"));
    }
    Ok(std::array::from_fn(|i| out[i]))
}

/// Network output clamped to the fingerprint range.
pub fn predict_values(model: &MlpModel, x: &[f64]) -> Result<Values> {
    Ok(mlp_forward(model, x)?.map(|v| v.clamp(-1.0, 1.0)))
}

/// Largest relative difference between `analytic` and central finite
/// differences of the loss, taken over every parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_error<X: AsRef<[f64]>>(
    model: &MlpModel,
    xs: &[X],
    ys: &[Values],
    analytic: &Gradients,
    epsilon: f64,
) -> f64 {
    let analytic = analytic.flat();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + epsilon;
        let plus = probe.loss(xs, ys);
        *probe.param_mut(i) = original - epsilon;
        let minus = probe.loss(xs, ys);
        *probe.param_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Backprop versus finite differences for `model` on `(xs, ys)`.
pub fn gradient_check<X: AsRef<[f64]>>(model: &MlpModel, xs: &[X], ys: &[Values], epsilon: f64) -> Result<f64> {
    let (_, grads) = model.loss_and_gradient(xs, ys)?;
    Ok(finite_difference_error(model, xs, ys, &grads, epsilon))
}

//! Float MLP training and its quantized counterpart.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{Code, QuantScheme};

use super::dataset::Dataset;

/// Stable `log Σ exp(z) − z[label]` and the softmax.
pub(crate) fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - z[label];
    (loss, exps.iter().map(|e| e / sum).collect())
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloatTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for FloatTrainConfig {
    fn default() -> Self {
        FloatTrainConfig {
            hidden: 32,
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Dense ReLU network in `f64`; weights of layer `l` are row-major
/// `inputs × outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatNetwork {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl FloatNetwork {
    /// He-normal weights, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract("network needs at least two non-empty layers"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let normal = Normal::new(0.0, (2.0 / pair[0] as f64).sqrt()).expect("finite std");
            weights.push((0..pair[0] * pair[1]).map(|_| normal.sample(&mut rng)).collect());
            biases.push(vec![0.0; pair[1]]);
        }
        Ok(FloatNetwork {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Layer inputs for every layer plus the final scores.
    fn activations(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut z = self.biases[l].clone();
            for (i, &hi) in h.iter().enumerate().take(n_in) {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += hi * self.weights[l][i * n_out + c];
                }
            }
            inputs.push(std::mem::take(&mut h));
            h = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
        }
        (inputs, h)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).1
    }

    /// Input of layer `l` for sample `x`.
    pub fn layer_inputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.activations(x).0
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| argmax(&self.forward(x)) == y)
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mini-batch SGD with momentum on cross-entropy.
    pub fn train(data: &Dataset, cfg: &FloatTrainConfig) -> Result<Self> {
        if data.is_empty() || data.classes < 2 {
            return Err(Error::contract(
                "training needs a non-empty dataset with at least two classes",
            ));
        }
        if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::contract("batch_size and lr must be positive"));
        }
        let dims = [data.dim(), cfg.hidden, data.classes];
        let mut net = FloatNetwork::init(&dims, cfg.seed)?;
        let mut vel_w: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut vel_b: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut gw: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
                let mut gb: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
                for &s in batch {
                    let (inputs, z) = net.activations(&data.features[s]);
                    let (loss, probs) = cross_entropy(&z, data.labels[s]);
                    total += loss;
                    let mut delta = probs;
                    delta[data.labels[s]] -= 1.0;
                    for l in (0..net.weights.len()).rev() {
                        let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
                        let x = &inputs[l];
                        for c in 0..n_out {
                            gb[l][c] += delta[c];
                        }
                        let mut back = vec![0.0; n_in];
                        for i in 0..n_in {
                            for c in 0..n_out {
                                gw[l][i * n_out + c] += x[i] * delta[c];
                                back[i] += net.weights[l][i * n_out + c] * delta[c];
                            }
                        }
                        // x = relu(previous z); x > 0 exactly where z > 0.
                        delta = back
                            .iter()
                            .zip(x)
                            .map(|(d, &xi)| if xi > 0.0 { *d } else { 0.0 })
                            .collect();
                    }
                }
                let scale = cfg.lr / batch.len() as f64;
                for l in 0..net.weights.len() {
                    for (k, g) in gw[l].iter().enumerate() {
                        vel_w[l][k] = cfg.momentum * vel_w[l][k] - scale * g;
                        net.weights[l][k] += vel_w[l][k];
                    }
                    for (k, g) in gb[l].iter().enumerate() {
                        vel_b[l][k] = cfg.momentum * vel_b[l][k] - scale * g;
                        net.biases[l][k] += vel_b[l][k];
                    }
                }
            }
            if !total.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
        Ok(net)
    }

    /// Quantizes weights and activations per layer. Scales map the largest
    /// magnitude onto the largest-magnitude level; activation ranges are
    /// calibrated on `calibration`.
    pub fn quantize(
        &self,
        calibration: &Dataset,
        weight_scheme: &QuantScheme,
        act_scheme: &QuantScheme,
    ) -> Result<ToyNetwork> {
        if calibration.dim() != self.dims[0] {
            return Err(Error::contract("calibration data does not match the input dimension"));
        }
        let peak = |s: &QuantScheme| s.levels().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (w_peak, a_peak) = (peak(weight_scheme), peak(act_scheme));
        let layers = self.weights.len();
        let mut act_max = vec![0.0f64; layers];
        for x in &calibration.features {
            for (l, input) in self.layer_inputs(x).iter().enumerate() {
                act_max[l] = input.iter().fold(act_max[l], |m, v| m.max(v.abs()));
            }
        }
        let ratio = |num: f64, den: f64| if num > 0.0 && den > 0.0 { num / den } else { 1.0 };
        let layers = (0..layers)
            .map(|l| {
                let w_max = self.weights[l].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let weight_scale = ratio(w_max, w_peak);
                DenseLayer {
                    inputs: self.dims[l],
                    outputs: self.dims[l + 1],
                    weight_scheme: weight_scheme.clone(),
                    act_scheme: act_scheme.clone(),
                    weight_scale,
                    act_scale: ratio(act_max[l], a_peak),
                    weight_codes: self.weights[l]
                        .iter()
                        .map(|w| weight_scheme.nearest_code(w / weight_scale))
                        .collect(),
                    bias: self.biases[l].clone(),
                }
            })
            .collect();
        let net = ToyNetwork { layers };
        net.validate()?;
        Ok(net)
    }

    /// Every weight divided by its layer's largest magnitude.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            out.extend(w.iter().map(|v| if m > 0.0 { v / m } else { 0.0 }));
        }
        out
    }
}

/// Dense layer with frozen quantized weights. `act_scheme`/`act_scale`
/// quantize this layer's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_scheme: QuantScheme,
    pub act_scheme: QuantScheme,
    pub weight_scale: f64,
    pub act_scale: f64,
    /// Row-major `inputs × outputs`.
    pub weight_codes: Vec<Code>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn quantize_input(&self, x: &[f64]) -> Vec<Code> {
        x.iter()
            .map(|v| self.act_scheme.nearest_code(v / self.act_scale))
            .collect()
    }
}

/// Quantized MLP: ReLU between layers, linear scores at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNetwork {
    pub layers: Vec<DenseLayer>,
}

impl ToyNetwork {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("network has no layers"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.weight_scheme.validate()?;
            layer.act_scheme.validate()?;
            if layer.weight_codes.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(Error::contract(format!("layer {l} shapes are inconsistent")));
            }
            if l > 0 && self.layers[l - 1].outputs != layer.inputs {
                return Err(Error::contract(format!(
                    "layer {l} input does not match layer {}",
                    l - 1
                )));
            }
            let n = layer.weight_scheme.num_codes();
            if let Some(&bad) = layer.weight_codes.iter().find(|&&c| c as usize >= n) {
                return Err(Error::CodeOutOfRange {
                    code: bad as u32,
                    width: layer.weight_scheme.width(),
                });
            }
            let scales = [layer.weight_scale, layer.act_scale];
            if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::contract(format!("layer {l} has invalid scales or biases")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn quantize_input(&self, x: &[f64]) -> Vec<Code> {
        self.layers[0].quantize_input(x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: ToyNetwork = serde_json::from_str(text).map_err(|e| Error::format("network json", e))?;
        net.validate()?;
        Ok(net)
    }
}

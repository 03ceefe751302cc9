//! Fine-tuning of position weights with the circuit and weight codes frozen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{Encoding, PositionWeights};
use crate::quant::build_product_table;

use super::dataset::Dataset;
use super::infer::{evaluate_codes, loss_and_gradient, quantize_dataset, reweighted, ProductLut};
use super::network::ToyNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Adam step size, in units of the initial weights' RMS.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-3,
            epochs: 20,
            batch_size: 32,
            loss: Loss::CrossEntropy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub encoding: Encoding,
    /// Mean training loss before training (index 0) and after each epoch.
    pub loss_curve: Vec<f64>,
    pub accuracy_curve: Vec<f64>,
    /// Epoch whose weights were kept (highest training accuracy, earliest
    /// on ties).
    pub best_epoch: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub fn finetune_position_weights(
    net: &ToyNetwork,
    encoding: &Encoding,
    data: &Dataset,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::contract("learning rate must be finite and non-negative"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::contract("fine-tuning needs training data"));
    }
    let codes = quantize_dataset(net, data)?;
    let exact_lut = ProductLut::encoded(encoding)?;
    let first = evaluate_codes(net, &exact_lut, &codes, &data.labels)?;
    if !first.loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }

    let s0 = encoding.weights.as_slice();
    let m = s0.len();
    let sigma = {
        let rms = (s0.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        if rms > 0.0 {
            rms
        } else {
            1.0
        }
    };
    // s = s0 + σ·δ, so a zero step leaves s0 bit-identical.
    let mut delta = vec![0.0; m];
    let (mut m1, mut m2) = (vec![0.0; m], vec![0.0; m]);
    let mut step = 0i32;
    let mut lut = exact_lut.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut loss_curve = vec![first.loss];
    let mut accuracy_curve = vec![first.accuracy];
    let mut best = (first.accuracy, 0usize, encoding.weights.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_gradient(net, &lut, &codes, &data.labels, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            step += 1;
            let (c1, c2) = (1.0 - BETA1.powi(step), 1.0 - BETA2.powi(step));
            for j in 0..m {
                let g = grad[j] * sigma;
                m1[j] = BETA1 * m1[j] + (1.0 - BETA1) * g;
                m2[j] = BETA2 * m2[j] + (1.0 - BETA2) * g * g;
                delta[j] -= cfg.lr * (m1[j] / c1) / ((m2[j] / c2).sqrt() + ADAM_EPS);
            }
            let s: Vec<f64> = s0.iter().zip(&delta).map(|(a, d)| a + sigma * d).collect();
            lut.reweight_fast(&s);
        }
        let weights = PositionWeights::new(s0.iter().zip(&delta).map(|(a, d)| a + sigma * d).collect())
            .map_err(|_| Error::TrainingDiverged { epoch })?;
        // Epoch metrics use the exactly decoded table.
        let epoch_lut = reweighted(encoding, &weights)?;
        let metrics = evaluate_codes(net, &epoch_lut, &codes, &data.labels)?;
        if !metrics.loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        loss_curve.push(metrics.loss);
        accuracy_curve.push(metrics.accuracy);
        if metrics.accuracy > best.0 {
            best = (metrics.accuracy, epoch, weights);
        }
    }

    let (_, best_epoch, weights) = best;
    let table = build_product_table(&encoding.operand_scheme.operand1, &encoding.operand_scheme.operand2)?;
    let updated = if weights == encoding.weights {
        encoding.clone()
    } else {
        Encoding::with_weights(
            encoding.circuit.clone(),
            weights,
            &table,
            encoding.seed,
            encoding.sample_index,
        )?
    };
    Ok(FinetuneResult {
        encoding: updated,
        loss_curve,
        accuracy_curve,
        best_epoch,
    })
}

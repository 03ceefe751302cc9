//! Quantized inference through a decoded-product lookup table, and the
//! gradient of the loss with respect to the position weights.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{decode_value, Encoding, PositionWeights, SchemePair};
use crate::quant::{Code, QuantScheme};

use super::dataset::Dataset;
use super::network::{argmax, cross_entropy, ToyNetwork};

/// Product value for every `(weight code, activation code)` pair, indexed by
/// `(code1 << W) | code2`.
#[derive(Debug, Clone)]
pub struct ProductLut {
    schemes: SchemePair,
    width: u32,
    values: Vec<f64>,
    /// Packed output bits per pair; present for encoded multipliers.
    bits: Option<PackedBits>,
}

#[derive(Debug, Clone)]
struct PackedBits {
    width: usize,
    words: usize,
    data: Vec<u64>,
}

impl PackedBits {
    fn row(&self, k: usize) -> &[u64] {
        &self.data[k * self.words..(k + 1) * self.words]
    }
}

fn lut_width(s1: &QuantScheme, s2: &QuantScheme) -> Result<u32> {
    if s1.width() != s2.width() {
        return Err(Error::contract("operand schemes must have the same width"));
    }
    Ok(s1.width())
}

impl ProductLut {
    /// Exact products of decoded operands.
    pub fn exact(s1: &QuantScheme, s2: &QuantScheme) -> Result<Self> {
        let width = lut_width(s1, s2)?;
        let (l1, l2) = (s1.levels(), s2.levels());
        let values = l1.iter().flat_map(|a| l2.iter().map(move |b| a * b)).collect();
        Ok(ProductLut {
            schemes: SchemePair {
                operand1: s1.clone(),
                operand2: s2.clone(),
            },
            width,
            values,
            bits: None,
        })
    }

    /// Decoded values of the encoded multiplier, bit-exact to
    /// `encoded_multiply`.
    pub fn encoded(e: &Encoding) -> Result<Self> {
        let (s1, s2) = (&e.operand_scheme.operand1, &e.operand_scheme.operand2);
        let width = lut_width(s1, s2)?;
        let pairs = 1usize << (2 * width);
        let m = e.output_width();
        let words = m.div_ceil(64);
        let mut data = vec![0u64; pairs * words];
        let mut values = Vec::with_capacity(pairs);
        for k in 0..pairs {
            let out = e
                .circuit
                .eval_codes((k >> width) as Code, (k & ((1 << width) - 1)) as Code);
            values.push(decode_value(&out, &e.weights)?);
            for (j, b) in out.into_iter().enumerate() {
                if b {
                    data[k * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Ok(ProductLut {
            schemes: e.operand_scheme.clone(),
            width,
            values,
            bits: Some(PackedBits { width: m, words, data }),
        })
    }

    pub fn schemes(&self) -> &SchemePair {
        &self.schemes
    }

    pub fn value(&self, w: Code, a: Code) -> f64 {
        self.values[((w as usize) << self.width) | a as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn output_width(&self) -> Option<usize> {
        self.bits.as_ref().map(|b| b.width)
    }

    /// Recomputes values from the stored bits with new weights, summing in
    /// ascending bit order in plain `f64` (training fast path).
    pub(crate) fn reweight_fast(&mut self, s: &[f64]) {
        let bits = self.bits.as_ref().expect("encoded lookup table");
        for (k, v) in self.values.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (wi, &word) in bits.row(k).iter().enumerate() {
                let mut b = word;
                while b != 0 {
                    acc += s[wi * 64 + b.trailing_zeros() as usize];
                    b &= b - 1;
                }
            }
            *v = acc;
        }
    }

    fn check(&self, net: &ToyNetwork) -> Result<()> {
        for (l, layer) in net.layers.iter().enumerate() {
            if layer.weight_scheme != self.schemes.operand1 || layer.act_scheme != self.schemes.operand2 {
                return Err(Error::contract(format!(
                    "layer {l} uses {} × {} but the multiplier is built for {} × {}",
                    layer.weight_scheme.describe(),
                    layer.act_scheme.describe(),
                    self.schemes.operand1.describe(),
                    self.schemes.operand2.describe()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) struct Trace {
    /// Input codes of each layer.
    codes: Vec<Vec<Code>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

fn forward(net: &ToyNetwork, lut: &ProductLut, input: &[Code]) -> Trace {
    let mut codes = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let a = &codes[l];
        let k = layer.weight_scale * layer.act_scale;
        let z: Vec<f64> = (0..layer.outputs)
            .map(|c| {
                let mut acc = 0.0;
                for (i, &ai) in a.iter().enumerate() {
                    acc += lut.value(layer.weight_codes[i * layer.outputs + c], ai);
                }
                k * acc + layer.bias[c]
            })
            .collect();
        if let Some(next) = net.layers.get(l + 1) {
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            codes.push(next.quantize_input(&h));
        }
        pre.push(z);
    }
    Trace { codes, pre }
}

fn check_inputs(net: &ToyNetwork, batch: &[Vec<Code>]) -> Result<()> {
    let layer = &net.layers[0];
    let n = layer.act_scheme.num_codes();
    for row in batch {
        if row.len() != layer.inputs {
            return Err(Error::contract(format!(
                "input has {} codes, expected {}",
                row.len(),
                layer.inputs
            )));
        }
        if let Some(&bad) = row.iter().find(|&&c| c as usize >= n) {
            return Err(Error::CodeOutOfRange {
                code: bad as u32,
                width: layer.act_scheme.width(),
            });
        }
    }
    Ok(())
}

/// Class scores for a batch of quantized inputs.
pub fn infer(net: &ToyNetwork, lut: &ProductLut, batch: &[Vec<Code>]) -> Result<Vec<Vec<f64>>> {
    net.validate()?;
    lut.check(net)?;
    check_inputs(net, batch)?;
    Ok(batch
        .par_iter()
        .map(|x| forward(net, lut, x).pre.pop().expect("at least one layer"))
        .collect())
}

pub fn infer_encoded(net: &ToyNetwork, encoding: &Encoding, batch: &[Vec<Code>]) -> Result<Vec<Vec<f64>>> {
    infer(net, &ProductLut::encoded(encoding)?, batch)
}

pub fn quantize_dataset(net: &ToyNetwork, data: &Dataset) -> Result<Vec<Vec<Code>>> {
    if data.dim() != net.input_dim() && !data.is_empty() {
        return Err(Error::contract(format!(
            "dataset has {} features, network expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    Ok(data.features.iter().map(|x| net.quantize_input(x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(net: &ToyNetwork, lut: &ProductLut, data: &Dataset) -> Result<Metrics> {
    let codes = quantize_dataset(net, data)?;
    evaluate_codes(net, lut, &codes, &data.labels)
}

pub(crate) fn evaluate_codes(
    net: &ToyNetwork,
    lut: &ProductLut,
    codes: &[Vec<Code>],
    labels: &[usize],
) -> Result<Metrics> {
    if codes.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let scores = infer(net, lut, codes)?;
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (z, &y) in scores.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        loss += cross_entropy(z, y).0;
        hits += (argmax(z) == y) as usize;
    }
    Ok(Metrics {
        loss: loss / codes.len() as f64,
        accuracy: hits as f64 / codes.len() as f64,
    })
}

/// Mean cross-entropy over `samples` and its gradient with respect to the
/// position weights.
///
/// `∂z_c/∂s_j = k·c_j` with `k = weight_scale · act_scale` and `c_j` the bit
/// count of output bit `j` over the column. Between layers the activation
/// quantizer passes gradients straight through and the product is
/// differentiated as the exact product, so `∂z_c/∂x_i` is the real weight.
pub fn loss_and_gradient(
    net: &ToyNetwork,
    lut: &ProductLut,
    codes: &[Vec<Code>],
    labels: &[usize],
    samples: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let bits = lut
        .bits
        .as_ref()
        .ok_or_else(|| Error::contract("position-weight gradients need an encoded multiplier"))?;
    if samples.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let m = bits.width;
    let mut grad = vec![0.0; m];
    let mut loss = 0.0;
    let w1 = lut.schemes.operand1.levels();
    let real_weights: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| {
            l.weight_codes
                .iter()
                .map(|&c| l.weight_scale * w1[c as usize])
                .collect()
        })
        .collect();
    for &s in samples {
        let trace = forward(net, lut, &codes[s]);
        let (sample_loss, probs) = cross_entropy(trace.pre.last().expect("layers"), labels[s]);
        loss += sample_loss;
        let mut delta = probs;
        delta[labels[s]] -= 1.0;
        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let k = layer.weight_scale * layer.act_scale;
            let a = &trace.codes[l];
            for (i, &ai) in a.iter().enumerate() {
                for (c, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let pair = ((layer.weight_codes[i * layer.outputs + c] as usize) << lut.width) | ai as usize;
                    let coef = d * k;
                    for (wi, &word) in bits.row(pair).iter().enumerate() {
                        let mut b = word;
                        while b != 0 {
                            grad[wi * 64 + b.trailing_zeros() as usize] += coef;
                            b &= b - 1;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let prev = &trace.pre[l - 1];
            delta = (0..layer.inputs)
                .map(|i| {
                    if prev[i] <= 0.0 {
                        return 0.0;
                    }
                    (0..layer.outputs)
                        .map(|c| delta[c] * real_weights[l][i * layer.outputs + c])
                        .sum()
                })
                .collect();
        }
    }
    let n = samples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Lookup table of `e` with its weights replaced.
pub fn reweighted(e: &Encoding, s: &PositionWeights) -> Result<ProductLut> {
    let mut lut = ProductLut::encoded(e)?;
    let width = lut.width;
    let bits = lut.bits.as_ref().expect("encoded");
    let m = e.output_width();
    let mut values = Vec::with_capacity(lut.values.len());
    for k in 0..lut.values.len() {
        let row = bits.row(k);
        let out: Vec<bool> = (0..m).map(|j| (row[j / 64] >> (j % 64)) & 1 == 1).collect();
        values.push(decode_value(&out, s)?);
    }
    debug_assert_eq!(values.len(), 1 << (2 * width));
    lut.values = values;
    Ok(lut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_sim::encoded_multiply;
    use crate::circuit::{GateKind, GateSpec, SampledCircuit};
    use crate::quant::build_product_table;
    use crate::search::{sample_search, SearchConfig};

    fn exact_w2_encoding() -> Encoding {
        let nand = |x, y| GateSpec::new(GateKind::Nand2, &[x, y]);
        let c = SampledCircuit::new(2, vec![GateSpec::set(), nand(0, 2), nand(0, 3), nand(1, 2), nand(1, 3)]).unwrap();
        let s = QuantScheme::uniform(2).unwrap();
        let t = build_product_table(&s, &s).unwrap();
        Encoding::with_weights(
            c,
            PositionWeights::new(vec![1.0, -1.0, 2.0, 2.0, -4.0]).unwrap(),
            &t,
            0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn lut_matches_encoded_multiply_exhaustively() {
        let s = QuantScheme::uniform(4).unwrap();
        let t = build_product_table(&s, &s).unwrap();
        let cfg = SearchConfig {
            max_samples: 30,
            ..SearchConfig::for_operand_width(4)
        };
        let (e, _) = sample_search(&t, 12, &cfg).unwrap();
        let lut = ProductLut::encoded(&e).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                assert_eq!(
                    lut.value(a, b).to_bits(),
                    encoded_multiply(&e, a, b).unwrap().1.to_bits()
                );
            }
        }
        let again = reweighted(&e, &e.weights).unwrap();
        assert_eq!(again.values(), lut.values());
    }

    #[test]
    fn exact_encoding_lut_equals_exact_lut() {
        let s = QuantScheme::uniform(2).unwrap();
        let enc = ProductLut::encoded(&exact_w2_encoding()).unwrap();
        let exact = ProductLut::exact(&s, &s).unwrap();
        assert_eq!(enc.values(), exact.values());
    }

    #[test]
    fn scheme_mismatch_is_rejected() {
        let s8 = QuantScheme::uniform(8).unwrap();
        let net = ToyNetwork {
            layers: vec![super::super::network::DenseLayer {
                inputs: 1,
                outputs: 2,
                weight_scheme: s8.clone(),
                act_scheme: s8,
                weight_scale: 1.0,
                act_scale: 1.0,
                weight_codes: vec![1, 2],
                bias: vec![0.0, 0.0],
            }],
        };
        assert!(matches!(
            infer_encoded(&net, &exact_w2_encoding(), &[vec![0]]),
            Err(Error::Contract(_))
        ));
    }
}

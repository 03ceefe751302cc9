//! Toy quantized networks running on an encoded multiplier.
//!
//! One [`Encoding`](crate::fit::Encoding) serves every layer, as a single
//! hardware array would. Only its position weights are trained; weight codes
//! and the circuit stay frozen.

pub mod dataset;
pub mod finetune;
pub mod infer;
pub mod kmeans;
pub mod network;
pub mod pipeline;

pub use dataset::{gaussian_blobs, Dataset};
pub use finetune::{finetune_position_weights, FinetuneConfig, FinetuneResult, Loss};
pub use infer::{evaluate, infer, infer_encoded, loss_and_gradient, quantize_dataset, reweighted, Metrics, ProductLut};
pub use kmeans::{kmeans_1d, learn_codebook};
pub use network::{DenseLayer, FloatNetwork, FloatTrainConfig, ToyNetwork};
pub use pipeline::{nonuniform_pipeline, PipelineReport, TargetPolicy};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{GateKind, GateSpec, SampledCircuit};
    use crate::fit::{Encoding, PositionWeights};
    use crate::quant::{build_product_table, QuantScheme};

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

    fn two_bit_net() -> (ToyNetwork, Dataset) {
        let data = gaussian_blobs(7, 60, 6, 2, 3.0);
        let f = FloatNetwork::train(
            &data,
            &FloatTrainConfig {
                epochs: 5,
                hidden: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let s = QuantScheme::uniform(2).unwrap();
        (f.quantize(&data, &s, &s).unwrap(), data)
    }

    #[test]
    fn zero_error_encoding_matches_exact_inference() {
        let (net, data) = two_bit_net();
        let codes = quantize_dataset(&net, &data).unwrap();
        let s = QuantScheme::uniform(2).unwrap();
        let exact = infer(&net, &ProductLut::exact(&s, &s).unwrap(), &codes).unwrap();
        let enc = infer_encoded(&net, &exact_w2_encoding(), &codes).unwrap();
        assert_eq!(exact, enc);
    }

    #[test]
    fn zero_input_gives_bias_path() {
        let (net, _) = two_bit_net();
        let s = QuantScheme::uniform(2).unwrap();
        let zero = vec![net.quantize_input(&vec![0.0; net.input_dim()])];
        let out = infer(&net, &ProductLut::exact(&s, &s).unwrap(), &zero).unwrap();
        // Hand computation: hidden = requantized relu(bias), then one exact layer.
        let (l0, l1) = (&net.layers[0], &net.layers[1]);
        let h: Vec<f64> = l0.bias.iter().map(|b| b.max(0.0)).collect();
        let a = l1.quantize_input(&h);
        let want: Vec<f64> = (0..l1.outputs)
            .map(|c| {
                let mut acc = 0.0;
                for (i, &ai) in a.iter().enumerate() {
                    acc += s.decode(l1.weight_codes[i * l1.outputs + c]).unwrap() * s.decode(ai).unwrap();
                }
                l1.weight_scale * l1.act_scale * acc + l1.bias[c]
            })
            .collect();
        assert_eq!(out[0], want);
    }

    #[test]
    fn lr_zero_is_a_no_op() {
        let (net, data) = two_bit_net();
        let e = exact_w2_encoding();
        let cfg = FinetuneConfig {
            lr: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let r = finetune_position_weights(&net, &e, &data, &cfg).unwrap();
        assert_eq!(r.encoding, e);
        assert!(r.loss_curve.windows(2).all(|w| w[0] == w[1]), "{:?}", r.loss_curve);
        assert_eq!(r.loss_curve.len(), 4);
        assert!(finetune_position_weights(&net, &e, &data, &FinetuneConfig { lr: f64::NAN, ..cfg }).is_err());
    }

    #[test]
    fn zero_error_encoding_starts_at_exact_loss() {
        let (net, data) = two_bit_net();
        let s = QuantScheme::uniform(2).unwrap();
        let exact = evaluate(&net, &ProductLut::exact(&s, &s).unwrap(), &data).unwrap();
        let r = finetune_position_weights(
            &net,
            &exact_w2_encoding(),
            &data,
            &FinetuneConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.loss_curve[0], exact.loss);
        assert!(r.accuracy_curve[r.best_epoch] >= r.accuracy_curve[0]);
        assert_eq!(r.encoding.circuit.to_json(), exact_w2_encoding().circuit.to_json());
    }

    #[test]
    fn target_policies() {
        let s = QuantScheme::uniform(2).unwrap();
        let t = build_product_table(&s, &s).unwrap();
        assert_eq!(TargetPolicy::Absolute { rmse: 0.5 }.target_for(&t), 0.5);
        assert_eq!(
            TargetPolicy::RelativeToTableRms { ratio: 0.5 }.target_for(&t),
            0.5 * 1.5
        );
    }
}

mod common;

use encmac::array_sim::encoded_multiply;
use encmac::fit::{Encoding, PositionWeights};
use encmac::quant::{build_product_table, Code, QuantScheme};
use encmac::search::{sample_search, SearchConfig};
use encmac::train::{
    finetune_position_weights, gaussian_blobs, loss_and_gradient, quantize_dataset, reweighted, FinetuneConfig,
    FloatNetwork, FloatTrainConfig, ProductLut, ToyNetwork,
};

fn searched_encoding(width: u32, m: usize, samples: usize) -> Encoding {
    let s = QuantScheme::uniform(width).unwrap();
    let t = build_product_table(&s, &s).unwrap();
    let cfg = SearchConfig {
        max_samples: samples,
        ..SearchConfig::for_operand_width(width)
    };
    sample_search(&t, m, &cfg).unwrap().0
}

/// Single dense layer straight to the loss, so no quantizer sits between
/// the encoded products and the loss.
fn single_layer(width: u32) -> (ToyNetwork, encmac::train::Dataset) {
    let data = gaussian_blobs(3, 20, 5, 3, 2.0);
    let s = QuantScheme::uniform(width).unwrap();
    let f = FloatNetwork::init(&[5, 3], 11).unwrap();
    (f.quantize(&data, &s, &s).unwrap(), data)
}

#[test]
fn gradient_matches_central_differences() {
    let (net, data) = single_layer(4);
    let e = searched_encoding(4, 14, 300);
    let codes = quantize_dataset(&net, &data).unwrap();
    let batch: Vec<usize> = (0..16).collect();
    let loss_at = |s: &[f64]| {
        let lut = reweighted(&e, &PositionWeights::new(s.to_vec()).unwrap()).unwrap();
        loss_and_gradient(&net, &lut, &codes, &data.labels, &batch).unwrap()
    };
    let s0 = e.weights.as_slice().to_vec();
    let (_, grad) = loss_at(&s0);
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(gmax > 0.0);
    for j in 0..s0.len() {
        let h = 1e-4 * s0[j].abs().max(1.0);
        let (mut up, mut down) = (s0.clone(), s0.clone());
        up[j] += h;
        down[j] -= h;
        let fd = (loss_at(&up).0 - loss_at(&down).0) / (2.0 * h);
        let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-3 * gmax);
        assert!(
            rel <= 1e-4,
            "s_{j}: backprop {} vs finite difference {fd} (rel {rel:e})",
            grad[j]
        );
    }
}

#[test]
fn lookup_matches_encoded_multiply_exhaustively() {
    for width in [2u32, 4] {
        let e = searched_encoding(width, 3 * width as usize, 200);
        let lut = ProductLut::encoded(&e).unwrap();
        let n = 1u32 << width;
        for w in 0..n {
            for a in 0..n {
                let (_, v) = encoded_multiply(&e, w as Code, a as Code).unwrap();
                assert_eq!(lut.value(w as Code, a as Code), v, "pair ({w},{a})");
            }
        }
    }
}

#[test]
fn finetuning_freezes_the_circuit_and_codes() {
    let data = gaussian_blobs(5, 80, 6, 2, 4.0);
    let f = FloatNetwork::train(
        &data,
        &FloatTrainConfig {
            hidden: 8,
            epochs: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let s = QuantScheme::uniform(4).unwrap();
    let net = f.quantize(&data, &s, &s).unwrap();
    let before = net.to_json();
    let e = searched_encoding(4, 16, 300);
    let r = finetune_position_weights(
        &net,
        &e,
        &data,
        &FinetuneConfig {
            epochs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(r.encoding.circuit.to_json(), e.circuit.to_json());
    assert_eq!(net.to_json(), before);
    assert_eq!(r.loss_curve.len(), 4);
    assert!(r.accuracy_curve[r.best_epoch] >= r.accuracy_curve[0]);
    let t = build_product_table(&s, &s).unwrap();
    assert_eq!(r.encoding.rmse, r.encoding.recompute_rmse(&t).unwrap());
}

#[test]
fn mismatched_scheme_is_rejected() {
    let (net, data) = single_layer(4);
    let e = searched_encoding(3, 9, 50);
    let codes = quantize_dataset(&net, &data).unwrap();
    assert!(encmac::train::infer_encoded(&net, &e, &codes).is_err());
}

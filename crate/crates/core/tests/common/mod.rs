#![allow(dead_code)]

use encmac::circuit::{GateKind, GateSpec, SampledCircuit};
use encmac::fit::{Encoding, PositionWeights};
use encmac::quant::{build_product_table, ProductTable, QuantScheme};

pub fn w2() -> QuantScheme {
    QuantScheme::uniform(2).unwrap()
}

pub fn w2_table() -> ProductTable {
    build_product_table(&w2(), &w2()).unwrap()
}

pub fn w8_table() -> ProductTable {
    let s = QuantScheme::uniform(8).unwrap();
    build_product_table(&s, &s).unwrap()
}

/// Hand-built 5-bit zero-error encoding of the 2-bit signed table, bits
/// LSB-first: SET, NAND(a0,b0), NAND(a0,b1), NAND(a1,b0), NAND(a1,b1).
/// Gate input p < W is operand-1 bit p, p ≥ W is operand-2 bit p − W.
pub fn exact_w2_circuit() -> SampledCircuit {
    let nand = |x, y| GateSpec::new(GateKind::Nand2, &[x, y]);
    SampledCircuit::new(2, vec![GateSpec::set(), nand(0, 2), nand(0, 3), nand(1, 2), nand(1, 3)]).unwrap()
}

pub fn exact_w2_encoding() -> Encoding {
    Encoding::with_weights(
        exact_w2_circuit(),
        PositionWeights::new(vec![1.0, -1.0, 2.0, 2.0, -4.0]).unwrap(),
        &w2_table(),
        0,
        0,
    )
    .unwrap()
}

/// MSB-first bit string to LSB-first bools.
pub fn bits(msb_first: &str) -> Vec<bool> {
    msb_first.chars().rev().map(|c| c == '1').collect()
}

/// Correctly rounded sum (Shewchuk partials with a half-way fix-up), an
/// oracle independent of the crate's accumulator.
pub fn fsum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[test]
fn fsum_oracle_sanity() {
    assert_eq!(fsum([1e16, 1.0, -1e16]), 1.0);
    assert_eq!(fsum([0.1; 10]), 1.0);
    assert_eq!(fsum([1.0, 1e100, 1.0, -1e100]), 2.0);
    assert_eq!(fsum(std::iter::empty()), 0.0);
}

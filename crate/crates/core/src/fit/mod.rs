//! Position-weight fitting and RMSE scoring.
//!
//! An output bit sequence `b` decodes to `Σ_j s_j · b_j`. The weights `s` are
//! the least-squares solution of `B s ≈ v` over the whole truth table.

mod exact;
mod normal;
mod solve;

pub use exact::{exact_sum, ExactSum};
pub use normal::{NormalSystem, TableMoments};

use serde::{Deserialize, Serialize};

use crate::circuit::{eval_circuit, gate_count, BitMatrix, SampledCircuit};
use crate::error::{Error, Result};
use crate::quant::{ProductTable, QuantScheme};

/// `s_j` is the weight of output bit `j` (LSB-first, matching gate order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionWeights(pub Vec<f64>);

impl PositionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::contract(format!("non-finite position weight {bad}")));
        }
        Ok(PositionWeights(weights))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Least-squares position weights for `B s ≈ v`; minimum-norm when `B` is
/// column-rank deficient.
pub fn fit_position_weights(b: &BitMatrix, v: &[f64]) -> Result<PositionWeights> {
    let system = NormalSystem::from_bits(b, v)?;
    PositionWeights::new(system.solve())
}

/// Decoded value of one bit sequence, summed in ascending bit order with a
/// single rounding.
pub fn decode_value(bits: &[bool], s: &PositionWeights) -> Result<f64> {
    if bits.len() != s.len() {
        return Err(Error::contract(format!(
            "{} bits but {} position weights",
            bits.len(),
            s.len()
        )));
    }
    let mut acc = ExactSum::new();
    for (&b, &w) in bits.iter().zip(s.as_slice()) {
        if b {
            acc.add(w);
        }
    }
    Ok(acc.value())
}

/// `sqrt(mean_k (decode(b^k) − v_k)²)`.
pub fn rmse_of(b: &BitMatrix, s: &PositionWeights, v: &[f64]) -> Result<f64> {
    if b.rows() != v.len() || b.cols() != s.len() {
        return Err(Error::contract(format!(
            "bit matrix {}x{} vs {} values and {} weights",
            b.rows(),
            b.cols(),
            v.len(),
            s.len()
        )));
    }
    if v.is_empty() {
        return Err(Error::contract("empty truth table"));
    }
    let mut sq = 0.0;
    for (k, &target) in v.iter().enumerate() {
        let e = decode_value(&b.row_bits(k), s)? - target;
        sq += e * e;
    }
    Ok((sq / v.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemePair {
    pub operand1: QuantScheme,
    pub operand2: QuantScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDescription {
    pub description: String,
    pub rows: usize,
}

/// A sampled circuit with fitted weights; the persisted search artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub circuit: SampledCircuit,
    pub weights: PositionWeights,
    pub rmse: f64,
    pub operand_scheme: SchemePair,
    /// Master seed of the search that produced this encoding.
    pub seed: u64,
    pub sample_index: u64,
    pub created_for: TableDescription,
}

impl Encoding {
    /// Evaluates, fits and scores `circuit` against `table`.
    pub fn fit(circuit: SampledCircuit, table: &ProductTable, seed: u64, sample_index: u64) -> Result<Self> {
        let b = eval_circuit(&circuit, table)?;
        let weights = fit_position_weights(&b, table.values())?;
        Self::with_weights(circuit, weights, table, seed, sample_index)
    }

    /// Builds an encoding with given weights; the RMSE is computed here.
    pub fn with_weights(
        circuit: SampledCircuit,
        weights: PositionWeights,
        table: &ProductTable,
        seed: u64,
        sample_index: u64,
    ) -> Result<Self> {
        let b = eval_circuit(&circuit, table)?;
        let rmse = rmse_of(&b, &weights, table.values())?;
        Ok(Encoding {
            circuit,
            weights,
            rmse,
            operand_scheme: SchemePair {
                operand1: table.scheme1().clone(),
                operand2: table.scheme2().clone(),
            },
            seed,
            sample_index,
            created_for: describe_table(table),
        })
    }

    pub fn output_width(&self) -> usize {
        self.circuit.output_width
    }

    pub fn gate_total(&self) -> usize {
        gate_count(&self.circuit).total
    }

    pub fn recompute_rmse(&self, table: &ProductTable) -> Result<f64> {
        let b = eval_circuit(&self.circuit, table)?;
        rmse_of(&b, &self.weights, table.values())
    }

    /// Fails unless the encoding was built for exactly these operand schemes.
    pub fn check_schemes(&self, s1: &QuantScheme, s2: &QuantScheme) -> Result<()> {
        if &self.operand_scheme.operand1 != s1 || &self.operand_scheme.operand2 != s2 {
            return Err(Error::contract(format!(
                "encoding built for {} × {}, used with {} × {}",
                self.operand_scheme.operand1.describe(),
                self.operand_scheme.operand2.describe(),
                s1.describe(),
                s2.describe()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoding serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let enc: Encoding = serde_json::from_str(text).map_err(|e| Error::format("encoding json", e))?;
        if enc.weights.len() != enc.circuit.output_width {
            return Err(Error::contract(format!(
                "{} weights for a {}-bit circuit",
                enc.weights.len(),
                enc.circuit.output_width
            )));
        }
        enc.operand_scheme.operand1.validate()?;
        enc.operand_scheme.operand2.validate()?;
        Ok(enc)
    }
}

pub(crate) fn describe_table(table: &ProductTable) -> TableDescription {
    TableDescription {
        description: format!("{} × {}", table.scheme1().describe(), table.scheme2().describe()),
        rows: table.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{GateKind, GateSpec};
    use crate::quant::{build_product_table, QuantScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w2_table() -> ProductTable {
        let s = QuantScheme::uniform(2).unwrap();
        build_product_table(&s, &s).unwrap()
    }

    fn weights(v: &[f64]) -> PositionWeights {
        PositionWeights::new(v.to_vec()).unwrap()
    }

    /// LSB-first bits from an MSB-first string.
    fn bits(msb_first: &str) -> Vec<bool> {
        msb_first.chars().rev().map(|c| c == '1').collect()
    }

    #[test]
    fn identity_system() {
        let mut rows = vec![vec![false; 4]; 4];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = true;
        }
        rows.push(vec![false; 4]);
        let b = BitMatrix::from_rows(&rows).unwrap();
        let s = fit_position_weights(&b, &[4.0, 2.0, 0.0, -2.0, 0.0]).unwrap();
        assert_eq!(s.as_slice(), &[4.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn decode_examples() {
        // s = (-4, 2, 2, -1, 1) MSB-first.
        let s = weights(&[1.0, -1.0, 2.0, 2.0, -4.0]);
        assert_eq!(decode_value(&bits("01111"), &s).unwrap(), 4.0);
        assert_eq!(decode_value(&bits("11111"), &s).unwrap(), 0.0);
        assert_eq!(decode_value(&bits("00111"), &s).unwrap(), 2.0);
        assert_eq!(decode_value(&bits("01011"), &s).unwrap(), 2.0);
        assert!(decode_value(&bits("0111"), &s).is_err());
    }

    #[test]
    fn zero_weights_rmse_is_table_rms() {
        let t = w2_table();
        let c = SampledCircuit::new(2, vec![GateSpec::set(); 3]).unwrap();
        let b = eval_circuit(&c, &t).unwrap();
        let r = rmse_of(&b, &weights(&[0.0; 3]), t.values()).unwrap();
        assert!((r - (36.0f64 / 16.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn traditional_columns_fit_exactly() {
        let t = w2_table();
        // Two's complement of the 4-bit product, b0..b3.
        let rows: Vec<Vec<bool>> = t
            .rows()
            .map(|(_, _, v)| {
                let p = (v as i64) & 0xf;
                (0..4).map(|i| (p >> i) & 1 == 1).collect()
            })
            .collect();
        let b = BitMatrix::from_rows(&rows).unwrap();
        let s = fit_position_weights(&b, t.values()).unwrap();
        assert!(rmse_of(&b, &s, t.values()).unwrap() < 1e-12);
        assert_eq!(rmse_of(&b, &weights(&[1.0, 2.0, 4.0, -8.0]), t.values()).unwrap(), 0.0);
    }

    #[test]
    fn planted_weights_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let planted = [1.0, -1.0, 2.0, 0.0, 3.0];
        let rows: Vec<Vec<bool>> = (0..16).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
        let b = BitMatrix::from_rows(&rows).unwrap();
        let v: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&planted).filter(|(b, _)| **b).map(|(_, s)| s).sum())
            .collect();
        let s = fit_position_weights(&b, &v).unwrap();
        for (k, row) in rows.iter().enumerate() {
            assert!((decode_value(row, &s).unwrap() - v[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn duplicate_columns_keep_rmse() {
        let t = build_product_table(&QuantScheme::uniform(3).unwrap(), &QuantScheme::uniform(3).unwrap()).unwrap();
        let base = vec![
            GateSpec::new(GateKind::And2, &[0, 3]),
            GateSpec::new(GateKind::Nand2, &[1, 4]),
            GateSpec::new(GateKind::Xor3, &[2, 5, 1]),
            GateSpec::set(),
        ];
        let mut dup = base.clone();
        dup.push(base[0].clone());
        dup.push(GateSpec::set());
        let a = Encoding::fit(SampledCircuit::new(3, base).unwrap(), &t, 0, 0).unwrap();
        let b = Encoding::fit(SampledCircuit::new(3, dup).unwrap(), &t, 0, 0).unwrap();
        assert!((a.rmse - b.rmse).abs() < 1e-9 * a.rmse.max(1.0));
    }

    #[test]
    fn rank_deficient_residual_is_orthogonal() {
        let t = w2_table();
        let gates = vec![
            GateSpec::set(),
            GateSpec::set(),
            GateSpec::new(GateKind::In, &[0]),
            GateSpec::new(GateKind::Not, &[0]),
            GateSpec::new(GateKind::And2, &[1, 3]),
        ];
        let c = SampledCircuit::new(2, gates).unwrap();
        let b = eval_circuit(&c, &t).unwrap();
        let s = fit_position_weights(&b, t.values()).unwrap();
        let sys = NormalSystem::from_bits(&b, t.values()).unwrap();
        let m = s.len();
        for i in 0..m {
            let gs: f64 = (0..m).map(|j| sys.gram[i * m + j] * s.0[j]).sum();
            assert!((gs - sys.rhs[i]).abs() < 1e-9);
        }
        // Duplicate SET columns share their weight under the minimum norm.
        assert!((s.0[0] - s.0[1]).abs() < 1e-9);
    }

    #[test]
    fn encoding_json_round_trip() {
        let t = w2_table();
        let c = SampledCircuit::new(2, vec![GateSpec::set(), GateSpec::new(GateKind::And2, &[0, 2])]).unwrap();
        let e = Encoding::fit(c, &t, 42, 7).unwrap();
        let back = Encoding::from_json(&e.to_json()).unwrap();
        assert_eq!(back, e);
        assert!((e.recompute_rmse(&t).unwrap() - e.rmse).abs() <= 1e-9 * e.rmse.max(1e-300));
    }
}

//! Single-level gate library, random circuit sampling and bit-exact evaluation.
//!
//! Operand-bit index convention: indices `0..W` address operand-1 bits
//! (LSB first) and `W..2W` address operand-2 bits (LSB first). Each output bit
//! `b_j` is driven by exactly one gate.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{Code, ProductTable, MAX_OPERAND_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    Set,
    In,
    Not,
    And2,
    Or2,
    Nand2,
    Nand3,
    Xor3,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::Set,
        GateKind::In,
        GateKind::Not,
        GateKind::And2,
        GateKind::Or2,
        GateKind::Nand2,
        GateKind::Nand3,
        GateKind::Xor3,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Set => 0,
            GateKind::In | GateKind::Not => 1,
            GateKind::And2 | GateKind::Or2 | GateKind::Nand2 => 2,
            GateKind::Nand3 | GateKind::Xor3 => 3,
        }
    }

    /// SET is a tie-high and IN a wire; neither synthesizes to a gate.
    pub fn is_physical(self) -> bool {
        !matches!(self, GateKind::Set | GateKind::In)
    }

    /// Bit-parallel evaluation: each word lane is one input assignment.
    /// Unused operands are ignored.
    #[inline]
    pub fn apply(self, x: u64, y: u64, z: u64) -> u64 {
        match self {
            GateKind::Set => !0,
            GateKind::In => x,
            GateKind::Not => !x,
            GateKind::And2 => x & y,
            GateKind::Or2 => x | y,
            GateKind::Nand2 => !(x & y),
            GateKind::Nand3 => !(x & y & z),
            GateKind::Xor3 => x ^ y ^ z,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GateKind::Set => "SET",
            GateKind::In => "IN",
            GateKind::Not => "NOT",
            GateKind::And2 => "AND2",
            GateKind::Or2 => "OR2",
            GateKind::Nand2 => "NAND2",
            GateKind::Nand3 => "NAND3",
            GateKind::Xor3 => "XOR3",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub inputs: Vec<u8>,
}

impl GateSpec {
    pub fn new(kind: GateKind, inputs: &[u8]) -> Self {
        GateSpec {
            kind,
            inputs: inputs.to_vec(),
        }
    }

    pub fn set() -> Self {
        GateSpec::new(GateKind::Set, &[])
    }

    fn validate(&self, operand_width: u32) -> Result<()> {
        if self.inputs.len() != self.kind.arity() {
            return Err(Error::contract(format!(
                "{} gate takes {} inputs, got {}",
                self.kind,
                self.kind.arity(),
                self.inputs.len()
            )));
        }
        if let Some(&bad) = self.inputs.iter().find(|&&i| i as u32 >= 2 * operand_width) {
            return Err(Error::contract(format!(
                "input index {bad} out of range for {operand_width}-bit operands"
            )));
        }
        Ok(())
    }

    /// Evaluates the gate on words, looking inputs up through `lane`.
    #[inline]
    pub(crate) fn apply_with(&self, lane: impl Fn(u8) -> u64) -> u64 {
        let mut ops = [0u64; 3];
        for (slot, &idx) in ops.iter_mut().zip(&self.inputs) {
            *slot = lane(idx);
        }
        self.kind.apply(ops[0], ops[1], ops[2])
    }
}

impl fmt::Display for GateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind)?;
        for (i, idx) in self.inputs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{idx}")?;
        }
        f.write_str(")")
    }
}

pub fn eval_gate(g: &GateSpec, operand_bits: &[bool]) -> bool {
    g.apply_with(|i| if operand_bits[i as usize] { !0 } else { 0 }) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCircuit")]
pub struct SampledCircuit {
    pub operand_width: u32,
    pub output_width: usize,
    pub gates: Vec<GateSpec>,
}

#[derive(Deserialize)]
struct RawCircuit {
    operand_width: u32,
    output_width: usize,
    gates: Vec<GateSpec>,
}

impl TryFrom<RawCircuit> for SampledCircuit {
    type Error = Error;

    fn try_from(raw: RawCircuit) -> Result<Self> {
        let c = SampledCircuit::new(raw.operand_width, raw.gates)?;
        if c.output_width != raw.output_width {
            return Err(Error::contract(format!(
                "output_width {} does not match {} gates",
                raw.output_width, c.output_width
            )));
        }
        Ok(c)
    }
}

impl SampledCircuit {
    pub fn new(operand_width: u32, gates: Vec<GateSpec>) -> Result<Self> {
        if operand_width == 0 || operand_width > MAX_OPERAND_WIDTH {
            return Err(Error::UnsupportedWidth(operand_width));
        }
        if gates.is_empty() {
            return Err(Error::contract("circuit needs at least one output bit"));
        }
        for g in &gates {
            g.validate(operand_width)?;
        }
        Ok(SampledCircuit {
            operand_width,
            output_width: gates.len(),
            gates,
        })
    }

    /// Output bits `b_0..b_{M-1}` for one operand pair.
    pub fn eval_codes(&self, code1: Code, code2: Code) -> Vec<bool> {
        let w = self.operand_width;
        let row = ((code1 as u64) << w) | code2 as u64;
        self.gates
            .iter()
            .map(|g| g.apply_with(|i| operand_lane(row, i as u32, w)) & 1 == 1)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuit serializes")
    }
}

/// Row-index bit position holding operand-bit `index`.
#[inline]
pub(crate) fn row_bit_of(index: u32, operand_width: u32) -> u32 {
    if index < operand_width {
        operand_width + index
    } else {
        index - operand_width
    }
}

#[inline]
fn operand_lane(row: u64, index: u32, operand_width: u32) -> u64 {
    if (row >> row_bit_of(index, operand_width)) & 1 == 1 {
        !0
    } else {
        0
    }
}

/// Draws `output_width` gates: kind uniform over the eight kinds, each input
/// index uniform over `[0, 2W)` (repeats allowed).
pub fn sample_circuit<R: Rng + ?Sized>(rng: &mut R, operand_width: u32, output_width: usize) -> Result<SampledCircuit> {
    if operand_width == 0 || operand_width > MAX_OPERAND_WIDTH {
        return Err(Error::UnsupportedWidth(operand_width));
    }
    if output_width == 0 {
        return Err(Error::contract("output width must be at least 1"));
    }
    let bits = 2 * operand_width as u8;
    let gates = (0..output_width)
        .map(|_| {
            let kind = GateKind::ALL[rng.gen_range(0..GateKind::ALL.len())];
            let inputs = (0..kind.arity()).map(|_| rng.gen_range(0..bits)).collect();
            GateSpec { kind, inputs }
        })
        .collect();
    SampledCircuit::new(operand_width, gates)
}

/// Truth-table outputs of a circuit, stored column-major as packed bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_col: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_col = rows.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            words_per_col,
            data: vec![0; words_per_col * cols],
        }
    }

    /// Builds from row-major bit rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = BitMatrix::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::contract("ragged bit rows"));
            }
            for (c, &b) in row.iter().enumerate() {
                m.set(r, c, b);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let w = self.data[col * self.words_per_col + row / 64];
        (w >> (row % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        let w = &mut self.data[col * self.words_per_col + row / 64];
        if bit {
            *w |= 1 << (row % 64);
        } else {
            *w &= !(1 << (row % 64));
        }
    }

    pub fn column(&self, col: usize) -> &[u64] {
        &self.data[col * self.words_per_col..(col + 1) * self.words_per_col]
    }

    pub fn row_bits(&self, row: usize) -> Vec<bool> {
        (0..self.cols).map(|c| self.get(row, c)).collect()
    }

    pub fn column_count(&self, col: usize) -> u64 {
        self.column(col).iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Number of rows where both columns are set; entry `(i, j)` of `BᵀB`.
    pub fn overlap(&self, i: usize, j: usize) -> u64 {
        self.column(i)
            .iter()
            .zip(self.column(j))
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    /// Same matrix with rows reordered: row `r` of the result is row `perm[r]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut out = BitMatrix::zeros(self.rows, self.cols);
        for (r, &src) in perm.iter().enumerate() {
            for c in 0..self.cols {
                out.set(r, c, self.get(src, c));
            }
        }
        out
    }
}

/// Packed column of operand-bit `index` over all `2^(2W)` rows.
fn operand_column(index: u32, operand_width: u32) -> Vec<u64> {
    const PATTERNS: [u64; 6] = [
        0xAAAA_AAAA_AAAA_AAAA,
        0xCCCC_CCCC_CCCC_CCCC,
        0xF0F0_F0F0_F0F0_F0F0,
        0xFF00_FF00_FF00_FF00,
        0xFFFF_0000_FFFF_0000,
        0xFFFF_FFFF_0000_0000,
    ];
    let rows = 1usize << (2 * operand_width);
    let words = rows.div_ceil(64);
    let bit = row_bit_of(index, operand_width);
    (0..words)
        .map(|w| {
            if bit < 6 {
                PATTERNS[bit as usize]
            } else if (w >> (bit - 6)) & 1 == 1 {
                !0
            } else {
                0
            }
        })
        .collect()
}

pub fn eval_circuit(c: &SampledCircuit, table: &ProductTable) -> Result<BitMatrix> {
    if c.operand_width != table.operand_width() {
        return Err(Error::contract(format!(
            "circuit is {}-bit but table is {}-bit",
            c.operand_width,
            table.operand_width()
        )));
    }
    let w = c.operand_width;
    let lanes: Vec<Vec<u64>> = (0..2 * w).map(|i| operand_column(i, w)).collect();
    let mut out = BitMatrix::zeros(table.len(), c.output_width);
    let tail = if table.len().is_multiple_of(64) {
        !0
    } else {
        (1u64 << (table.len() % 64)) - 1
    };
    let wpc = out.words_per_col;
    for (j, gate) in c.gates.iter().enumerate() {
        let col = &mut out.data[j * wpc..(j + 1) * wpc];
        for (word, slot) in col.iter_mut().enumerate() {
            *slot = gate.apply_with(|i| lanes[i as usize][word]);
        }
        col[wpc - 1] &= tail;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GateCount {
    pub per_kind: BTreeMap<GateKind, usize>,
    /// Physical gates only (SET and IN excluded).
    pub total: usize,
}

pub fn gate_count(c: &SampledCircuit) -> GateCount {
    let mut per_kind = BTreeMap::new();
    for g in &c.gates {
        *per_kind.entry(g.kind).or_insert(0) += 1;
    }
    let total = c.gates.iter().filter(|g| g.kind.is_physical()).count();
    GateCount { per_kind, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{build_product_table, QuantScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(w: u32) -> ProductTable {
        let s = QuantScheme::uniform(w).unwrap();
        build_product_table(&s, &s).unwrap()
    }

    #[test]
    fn gate_semantics() {
        let bits = [true, true, true, false];
        assert!(!eval_gate(&GateSpec::new(GateKind::Nand2, &[0, 1]), &bits));
        assert!(eval_gate(&GateSpec::new(GateKind::Xor3, &[0, 1, 2]), &bits));
        assert!(eval_gate(&GateSpec::set(), &[false; 4]));
        assert!(!eval_gate(&GateSpec::new(GateKind::In, &[3]), &bits));
        assert!(eval_gate(&GateSpec::new(GateKind::Not, &[3]), &bits));
        assert!(eval_gate(&GateSpec::new(GateKind::Or2, &[3, 0]), &bits));
        assert!(!eval_gate(&GateSpec::new(GateKind::And2, &[3, 0]), &bits));
        assert!(eval_gate(&GateSpec::new(GateKind::Nand3, &[0, 1, 3]), &bits));
        assert!(!eval_gate(&GateSpec::new(GateKind::Nand3, &[0, 1, 2]), &bits));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_circuit(&mut ChaCha8Rng::seed_from_u64(7), 2, 5).unwrap();
        let b = sample_circuit(&mut ChaCha8Rng::seed_from_u64(7), 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gates.len(), 5);
    }

    #[test]
    fn set_kind_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut set = 0;
        let n = 10_000;
        for _ in 0..n {
            let c = sample_circuit(&mut rng, 2, 5).unwrap();
            set += c.gates.iter().filter(|g| g.kind == GateKind::Set).count();
        }
        let frac = set as f64 / (5 * n) as f64;
        assert!((frac - 0.125).abs() < 0.02, "SET fraction {frac}");
    }

    #[test]
    fn wire_column_is_operand_lsb() {
        let t = table(2);
        let c = SampledCircuit::new(2, vec![GateSpec::new(GateKind::In, &[0])]).unwrap();
        let b = eval_circuit(&c, &t).unwrap();
        for (k, (c1, _, _)) in t.rows().enumerate() {
            assert_eq!(b.get(k, 0), c1 & 1 == 1);
        }
        let c = SampledCircuit::new(2, vec![GateSpec::new(GateKind::In, &[3])]).unwrap();
        let b = eval_circuit(&c, &t).unwrap();
        for (k, (_, c2, _)) in t.rows().enumerate() {
            assert_eq!(b.get(k, 0), c2 >> 1 == 1);
        }
    }

    #[test]
    fn all_set_rows() {
        let t = table(2);
        let c = SampledCircuit::new(2, vec![GateSpec::set(); 5]).unwrap();
        let b = eval_circuit(&c, &t).unwrap();
        for k in 0..16 {
            assert_eq!(b.row_bits(k), vec![true; 5]);
        }
        assert_eq!(b.column_count(0), 16);
    }

    #[test]
    fn packed_matches_scalar_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for w in [1, 3, 4] {
            let t = table(w);
            let c = sample_circuit(&mut rng, w, 12).unwrap();
            let b = eval_circuit(&c, &t).unwrap();
            for (k, (c1, c2, _)) in t.rows().enumerate() {
                assert_eq!(b.row_bits(k), c.eval_codes(c1, c2));
            }
        }
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let c = SampledCircuit::new(3, vec![GateSpec::set()]).unwrap();
        assert!(matches!(eval_circuit(&c, &table(2)), Err(Error::Contract(_))));
    }

    #[test]
    fn counts_exclude_wires_and_ties() {
        let wires = SampledCircuit::new(8, vec![GateSpec::new(GateKind::In, &[5]); 48]).unwrap();
        assert_eq!(gate_count(&wires).total, 0);
        assert_eq!(gate_count(&wires).per_kind[&GateKind::In], 48);
        let nands = SampledCircuit::new(8, vec![GateSpec::new(GateKind::Nand2, &[0, 9]); 48]).unwrap();
        assert_eq!(gate_count(&nands).total, 48);
    }

    #[test]
    fn invalid_gates_rejected() {
        assert!(SampledCircuit::new(2, vec![GateSpec::new(GateKind::And2, &[0])]).is_err());
        assert!(SampledCircuit::new(2, vec![GateSpec::new(GateKind::In, &[4])]).is_err());
        assert!(SampledCircuit::new(2, vec![]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = sample_circuit(&mut ChaCha8Rng::seed_from_u64(1), 4, 6).unwrap();
        let back: SampledCircuit = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"operand_width":2,"output_width":2,"gates":[{"kind":"SET","inputs":[]}]}"#;
        assert!(serde_json::from_str::<SampledCircuit>(bad).is_err());
        let bad = r#"{"operand_width":2,"output_width":1,"gates":[{"kind":"XOR3","inputs":[0,1,7]}]}"#;
        assert!(serde_json::from_str::<SampledCircuit>(bad).is_err());
    }
}

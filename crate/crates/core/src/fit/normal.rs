//! Normal-equation data `(BᵀB, Bᵀv, vᵀv)` for the position-weight fit.
//!
//! Two independent routes build the same system:
//!
//! * [`NormalSystem::from_bits`] reads an evaluated [`BitMatrix`] with
//!   popcounts and row scans.
//! * [`TableMoments::normal_system`] never materializes `B`. Truth-table rows
//!   enumerate every operand-bit assignment exactly once, and every gate reads
//!   at most three operand bits, so each Gram entry depends on at most six
//!   bits and can be counted on a 64-lane local truth table. `Bᵀv` factors
//!   because `v = d1(code1) · d2(code2)`.
//!
//! The second route is what makes 10^5-sample searches on 8-bit tables
//! affordable; the first is the reference it is tested against.

use crate::circuit::{BitMatrix, SampledCircuit};
use crate::error::{Error, Result};
use crate::quant::ProductTable;

use super::solve;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    /// Row-major `M × M` Gram matrix.
    pub gram: Vec<f64>,
    pub rhs: Vec<f64>,
    pub vtv: f64,
    pub rows: usize,
}

impl NormalSystem {
    pub fn from_bits(b: &BitMatrix, v: &[f64]) -> Result<Self> {
        if b.rows() != v.len() {
            return Err(Error::contract(format!(
                "bit matrix has {} rows but value vector has {}",
                b.rows(),
                v.len()
            )));
        }
        if b.rows() == 0 {
            return Err(Error::contract("empty bit matrix"));
        }
        let m = b.cols();
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let c = b.overlap(i, j) as f64;
                gram[i * m + j] = c;
                gram[j * m + i] = c;
            }
        }
        let rhs = (0..m)
            .map(|j| {
                let mut acc = 0.0;
                for (w, &word) in b.column(j).iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        acc += v[w * 64 + bits.trailing_zeros() as usize];
                        bits &= bits - 1;
                    }
                }
                acc
            })
            .collect();
        let vtv = v.iter().map(|x| x * x).sum();
        Ok(NormalSystem {
            gram,
            rhs,
            vtv,
            rows: b.rows(),
        })
    }

    pub fn width(&self) -> usize {
        self.rhs.len()
    }

    /// Least-squares weights: Cholesky when `BᵀB` is well conditioned,
    /// otherwise the minimum-norm solution.
    pub fn solve(&self) -> Vec<f64> {
        solve::cholesky_solve(&self.gram, &self.rhs).unwrap_or_else(|| solve::min_norm_solve(&self.gram, &self.rhs))
    }

    /// RMSE of the best achievable fit, computed without forming weights.
    pub fn min_rmse(&self) -> f64 {
        (solve::min_residual_sq(&self.gram, &self.rhs, self.vtv) / self.rows as f64).sqrt()
    }
}

/// Lane patterns: lane `l` of slot `t` is bit `t` of `l`.
const SLOT_PATTERNS: [u64; 6] = [
    0xAAAA_AAAA_AAAA_AAAA,
    0xCCCC_CCCC_CCCC_CCCC,
    0xF0F0_F0F0_F0F0_F0F0,
    0xFF00_FF00_FF00_FF00,
    0xFFFF_0000_FFFF_0000,
    0xFFFF_FFFF_0000_0000,
];

/// Table statistics needed to assemble normal equations from gate structure.
#[derive(Debug, Clone)]
pub struct TableMoments {
    operand_width: u32,
    rows: usize,
    /// `sums1[mask << W | val]` = Σ d1(a) over codes with `a & mask == val`.
    sums1: Vec<f64>,
    sums2: Vec<f64>,
    vtv: f64,
}

fn masked_sums(levels: &[f64], width: u32) -> Vec<f64> {
    let n = 1usize << width;
    let mut sums = vec![0.0; n * n];
    for mask in 0..n {
        // Gates read at most three bits of one operand.
        if mask.count_ones() > 3 {
            continue;
        }
        for (a, &d) in levels.iter().enumerate() {
            sums[(mask << width) | (a & mask)] += d;
        }
    }
    sums
}

impl TableMoments {
    pub fn new(table: &ProductTable) -> Self {
        let w = table.operand_width();
        let d1 = table.operand1_levels();
        let d2 = table.operand2_levels();
        let sq = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>();
        TableMoments {
            operand_width: w,
            rows: table.len(),
            sums1: masked_sums(d1, w),
            sums2: masked_sums(d2, w),
            vtv: sq(d1) * sq(d2),
        }
    }

    pub fn operand_width(&self) -> u32 {
        self.operand_width
    }

    pub fn normal_system(&self, circuit: &SampledCircuit) -> Result<NormalSystem> {
        let w = self.operand_width;
        if circuit.operand_width != w {
            return Err(Error::contract(format!(
                "circuit is {}-bit but table is {}-bit",
                circuit.operand_width, w
            )));
        }
        let gates = &circuit.gates;
        let m = gates.len();
        // Distinct operand-bit indices read by each gate.
        let vars: Vec<Vec<u8>> = gates
            .iter()
            .map(|g| {
                let mut v = g.inputs.clone();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let lane_scale = self.rows as f64 / 64.0;

        let mut gram = vec![0.0; m * m];
        let mut union: Vec<u8> = Vec::with_capacity(6);
        for i in 0..m {
            for j in i..m {
                union.clear();
                union.extend_from_slice(&vars[i]);
                for &x in &vars[j] {
                    if !union.contains(&x) {
                        union.push(x);
                    }
                }
                let slot = |x: u8| SLOT_PATTERNS[union.iter().position(|&u| u == x).unwrap()];
                let ti = gates[i].apply_with(slot);
                let tj = gates[j].apply_with(slot);
                let c = (ti & tj).count_ones() as f64 * lane_scale;
                gram[i * m + j] = c;
                gram[j * m + i] = c;
            }
        }

        let rhs = gates
            .iter()
            .zip(&vars)
            .map(|(g, vs)| {
                let slot = |x: u8| SLOT_PATTERNS[vs.iter().position(|&u| u == x).unwrap()];
                let tt = g.apply_with(slot);
                let mut acc = 0.0;
                for lane in 0..(1u32 << vs.len()) {
                    if (tt >> lane) & 1 == 0 {
                        continue;
                    }
                    let (mut m1, mut v1, mut m2, mut v2) = (0usize, 0usize, 0usize, 0usize);
                    for (t, &x) in vs.iter().enumerate() {
                        let bit = ((lane >> t) & 1) as usize;
                        let x = x as u32;
                        if x < w {
                            m1 |= 1 << x;
                            v1 |= bit << x;
                        } else {
                            m2 |= 1 << (x - w);
                            v2 |= bit << (x - w);
                        }
                    }
                    acc += self.sums1[(m1 << w) | v1] * self.sums2[(m2 << w) | v2];
                }
                acc
            })
            .collect();

        Ok(NormalSystem {
            gram,
            rhs,
            vtv: self.vtv,
            rows: self.rows,
        })
    }
}

//! Cycle-level simulation of an N×N encoded MAC array and the conventional
//! weight-stationary systolic baseline.
//!
//! Weights `W[i][c]` sit in PE `(i, c)`. Activation vectors stream in one per
//! cycle; vector `t` is consumed by row `i` at cycle `t + i + 1` (row skew so
//! partial results meet their operands). In the encoded array the activation
//! reaches every column of a row in the same cycle and each PE adds its
//! product bits into per-bit-position counters flowing down the column; the
//! bottom row feeds a combinational decoder. In the systolic array the
//! activation additionally moves one column per cycle and PEs add exact
//! products into a flowing partial sum.

use serde::{Deserialize, Serialize};

use crate::circuit::gate_count;
use crate::error::{Error, Result};
use crate::fit::{decode_value, Encoding, ExactSum, SchemePair};
use crate::quant::{Code, QuantScheme};

/// Gates of a conventional 8-bit multiplier, the baseline anchor.
pub const TRADITIONAL_MULTIPLIER_GATES_8BIT: usize = 417;

#[derive(Debug, Clone, PartialEq)]
pub enum Multiplier {
    Encoded(Box<Encoding>),
    Exact(SchemePair),
}

impl Multiplier {
    fn schemes(&self) -> (&QuantScheme, &QuantScheme) {
        match self {
            Multiplier::Encoded(e) => (&e.operand_scheme.operand1, &e.operand_scheme.operand2),
            Multiplier::Exact(p) => (&p.operand1, &p.operand2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub n: usize,
    pub multiplier: Multiplier,
    /// Clock period in abstract time units.
    pub clock_period: f64,
    pub accumulator_width: u32,
}

/// `⌈log₂(n+1)⌉`: bits for a counter of `n` one-bit addends.
pub fn min_accumulator_width(n: usize) -> u32 {
    usize::BITS - n.leading_zeros()
}

impl ArrayConfig {
    pub fn encoded(n: usize, encoding: Encoding) -> Self {
        ArrayConfig {
            n,
            multiplier: Multiplier::Encoded(Box::new(encoding)),
            clock_period: 1.0,
            accumulator_width: min_accumulator_width(n),
        }
    }

    pub fn exact(n: usize, operand1: QuantScheme, operand2: QuantScheme) -> Self {
        ArrayConfig {
            n,
            multiplier: Multiplier::Exact(SchemePair { operand1, operand2 }),
            clock_period: 1.0,
            accumulator_width: min_accumulator_width(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::contract("array size must be at least 1"));
        }
        if self.accumulator_width < min_accumulator_width(self.n) {
            return Err(Error::contract(format!(
                "accumulator width {} cannot count {} addends",
                self.accumulator_width, self.n
            )));
        }
        if !(self.clock_period > 0.0 && self.clock_period.is_finite()) {
            return Err(Error::contract("clock period must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProxy {
    pub multiplier_gates_total: usize,
    pub accumulator_bits: usize,
    pub decoder_ops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArraySimReport {
    pub array: &'static str,
    pub n: usize,
    pub matrices: usize,
    /// `outputs[k][t][c]`: matrix `k`, activation vector `t`, column `c`.
    #[serde(skip)]
    pub outputs: Vec<Vec<Vec<f64>>>,
    pub first_result_latency: u64,
    pub total_cycles: u64,
    pub latency_time: f64,
    pub total_time: f64,
    /// Matrices per time unit.
    pub throughput: f64,
    pub max_counter: u32,
    /// `count_histograms[c][k]`: final bit counters equal to `k` in column `c`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub count_histograms: Vec<Vec<u64>>,
    pub cost: CostProxy,
}

impl ArraySimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_outputs_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::format("outputs csv", e);
        w.write_record(["matrix", "row", "column", "value"]).map_err(e)?;
        for (k, m) in self.outputs.iter().enumerate() {
            for (t, row) in m.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    w.write_record([k.to_string(), t.to_string(), c.to_string(), format!("{v:.9}")])
                        .map_err(e)?;
                }
            }
        }
        w.flush().map_err(|e| Error::format("outputs csv", e))
    }
}

fn check_code(scheme: &QuantScheme, code: Code) -> Result<()> {
    if code as usize >= scheme.num_codes() {
        return Err(Error::CodeOutOfRange {
            code: code as u32,
            width: scheme.width(),
        });
    }
    Ok(())
}

/// Output bits and decoded value of one encoded multiplier.
pub fn encoded_multiply(encoding: &Encoding, code1: Code, code2: Code) -> Result<(Vec<bool>, f64)> {
    check_code(&encoding.operand_scheme.operand1, code1)?;
    check_code(&encoding.operand_scheme.operand2, code2)?;
    let bits = encoding.circuit.eval_codes(code1, code2);
    let value = decode_value(&bits, &encoding.weights)?;
    Ok((bits, value))
}

/// Decoder: `Σ_j s_j·c_j` over ascending `j`, exactly accumulated and rounded
/// once.
pub fn decode_counts(counts: &[u32], weights: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for (&c, &s) in counts.iter().zip(weights) {
        acc.add_times(s, c as u64);
    }
    acc.value()
}

/// Bit-wise weighted accumulation of one column: counts first, weights once.
pub fn column_mac(encoding: &Encoding, weight_codes: &[Code], activation_codes: &[Code]) -> Result<f64> {
    if weight_codes.len() != activation_codes.len() {
        return Err(Error::contract(format!(
            "{} weights but {} activations",
            weight_codes.len(),
            activation_codes.len()
        )));
    }
    let mut counts = vec![0u32; encoding.output_width()];
    for (&w, &a) in weight_codes.iter().zip(activation_codes) {
        let (bits, _) = encoded_multiply(encoding, w, a)?;
        for (c, b) in counts.iter_mut().zip(bits) {
            *c += b as u32;
        }
    }
    Ok(decode_counts(&counts, encoding.weights.as_slice()))
}

pub fn array_cost_proxy(cfg: &ArrayConfig) -> CostProxy {
    let n = cfg.n;
    match &cfg.multiplier {
        Multiplier::Encoded(e) => {
            let m = e.output_width();
            CostProxy {
                multiplier_gates_total: n * n * gate_count(&e.circuit).total,
                accumulator_bits: n * m * cfg.accumulator_width as usize,
                decoder_ops: n * (2 * m).saturating_sub(1),
            }
        }
        Multiplier::Exact(p) => {
            let w = p.operand1.width().max(p.operand2.width()) as usize;
            let gates = (TRADITIONAL_MULTIPLIER_GATES_8BIT * w * w).div_ceil(64);
            let log_n = (usize::BITS - (n - 1).leading_zeros()) as usize;
            CostProxy {
                multiplier_gates_total: n * n * gates,
                accumulator_bits: n * n * (2 * w + log_n),
                decoder_ops: 0,
            }
        }
    }
}

struct Shapes {
    n: usize,
    m: usize,
}

fn check_shapes(cfg: &ArrayConfig, wmat: &[Vec<Code>], inputs: &[Vec<Vec<Code>>]) -> Result<Shapes> {
    cfg.validate()?;
    let n = cfg.n;
    let square = |m: &[Vec<Code>]| m.len() == n && m.iter().all(|r| r.len() == n);
    if !square(wmat) {
        return Err(Error::contract(format!("weight matrix must be {n}×{n}")));
    }
    if inputs.is_empty() {
        return Err(Error::contract("at least one input matrix is required"));
    }
    if let Some(k) = inputs.iter().position(|x| !square(x)) {
        return Err(Error::contract(format!("input matrix {k} must be {n}×{n}")));
    }
    let (s1, s2) = cfg.multiplier.schemes();
    for &w in wmat.iter().flatten() {
        check_code(s1, w)?;
    }
    for &a in inputs.iter().flatten().flatten() {
        check_code(s2, a)?;
    }
    Ok(Shapes { n, m: inputs.len() })
}

/// Vector `t` of the concatenated input stream.
fn activation(inputs: &[Vec<Vec<Code>>], n: usize, t: usize, i: usize) -> Code {
    inputs[t / n][t % n][i]
}

struct Timing {
    latency: u64,
    total: u64,
}

fn finish(
    array: &'static str,
    cfg: &ArrayConfig,
    shapes: &Shapes,
    outputs: Vec<Vec<Vec<f64>>>,
    timing: Timing,
    max_counter: u32,
    count_histograms: Vec<Vec<u64>>,
) -> ArraySimReport {
    let t = cfg.clock_period;
    ArraySimReport {
        array,
        n: shapes.n,
        matrices: shapes.m,
        outputs,
        first_result_latency: timing.latency,
        total_cycles: timing.total,
        latency_time: timing.latency as f64 * t,
        total_time: timing.total as f64 * t,
        throughput: shapes.m as f64 / (timing.total as f64 * t),
        max_counter,
        count_histograms,
        cost: array_cost_proxy(cfg),
    }
}

/// Output bits of every operand pair, row-major by `(code1 << W) | code2`,
/// packed into `words` u64 per pair.
struct BitsLut {
    width: u32,
    words: usize,
    bits: Vec<u64>,
}

impl BitsLut {
    fn new(e: &Encoding) -> Self {
        let w = e.circuit.operand_width;
        let m = e.output_width();
        let words = m.div_ceil(64);
        let pairs = 1usize << (2 * w);
        let mut bits = vec![0u64; pairs * words];
        for k in 0..pairs {
            let out = e.circuit.eval_codes((k >> w) as Code, (k & ((1 << w) - 1)) as Code);
            for (j, b) in out.into_iter().enumerate() {
                if b {
                    bits[k * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        BitsLut { width: w, words, bits }
    }

    fn get(&self, c1: Code, c2: Code) -> &[u64] {
        let k = ((c1 as usize) << self.width) | c2 as usize;
        &self.bits[k * self.words..(k + 1) * self.words]
    }
}

pub fn simulate_encoded_array(
    cfg: &ArrayConfig,
    wmat: &[Vec<Code>],
    inputs: &[Vec<Vec<Code>>],
) -> Result<ArraySimReport> {
    let Multiplier::Encoded(enc) = &cfg.multiplier else {
        return Err(Error::contract("encoded array needs an encoded multiplier"));
    };
    let shapes = check_shapes(cfg, wmat, inputs)?;
    let (n, m_out) = (shapes.n, enc.output_width());
    let vectors = n * shapes.m;
    let lut = BitsLut::new(enc);
    let counter_limit = if cfg.accumulator_width >= 32 {
        u32::MAX
    } else {
        (1u32 << cfg.accumulator_width) - 1
    };

    // Pipeline registers between PE (i, c) and (i+1, c).
    let mut tag: Vec<Option<usize>> = vec![None; n * n];
    let mut counts = vec![0u32; n * n * m_out];
    let mut outputs = vec![vec![vec![0.0; n]; n]; shapes.m];
    let mut ready = vec![0u64; vectors];
    let mut histograms = vec![vec![0u64; n + 1]; n];
    let mut max_counter = 0u32;
    let mut emitted = 0usize;
    let mut cycle = 0u64;
    while emitted < vectors {
        cycle += 1;
        if cycle > (3 * n + vectors) as u64 {
            return Err(Error::contract("encoded array simulation did not drain"));
        }
        // Bottom-up so every PE reads the register value of the previous cycle.
        for i in (0..n).rev() {
            let t = cycle as i64 - i as i64 - 1;
            let active = t >= 0 && (t as usize) < vectors;
            for c in 0..n {
                let pe = i * n + c;
                if !active {
                    tag[pe] = None;
                    continue;
                }
                let t = t as usize;
                let a = activation(inputs, n, t, i);
                let (head, tail) = counts.split_at_mut(pe * m_out);
                let reg = &mut tail[..m_out];
                if i == 0 {
                    reg.fill(0);
                } else {
                    let above = (i - 1) * n + c;
                    if tag[above] != Some(t) {
                        return Err(Error::contract(format!("vector {t} missing above PE ({i},{c})")));
                    }
                    reg.copy_from_slice(&head[above * m_out..(above + 1) * m_out]);
                }
                for (wi, &word) in lut.get(wmat[i][c], a).iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let j = wi * 64 + bits.trailing_zeros() as usize;
                        reg[j] += 1;
                        bits &= bits - 1;
                    }
                }
                tag[pe] = Some(t);
                if i == n - 1 {
                    for &v in reg.iter() {
                        if v > counter_limit || v as usize > n {
                            return Err(Error::contract(format!("bit counter overflow: {v}")));
                        }
                        max_counter = max_counter.max(v);
                        histograms[c][v as usize] += 1;
                    }
                    outputs[t / n][t % n][c] = decode_counts(reg, enc.weights.as_slice());
                    ready[t] = cycle;
                    if c == n - 1 {
                        emitted += 1;
                    }
                }
            }
        }
    }
    let timing = Timing {
        latency: ready[..n].iter().copied().max().unwrap_or(0),
        total: cycle,
    };
    Ok(finish(
        "encoded",
        cfg,
        &shapes,
        outputs,
        timing,
        max_counter,
        histograms,
    ))
}

pub fn simulate_traditional_array(
    cfg: &ArrayConfig,
    wmat: &[Vec<Code>],
    inputs: &[Vec<Vec<Code>>],
) -> Result<ArraySimReport> {
    let shapes = check_shapes(cfg, wmat, inputs)?;
    let (s1, s2) = cfg.multiplier.schemes();
    let (l1, l2) = (s1.levels(), s2.levels());
    let n = shapes.n;
    let vectors = n * shapes.m;

    // Activation registers move right, partial sums move down.
    let mut act: Vec<Option<(usize, Code)>> = vec![None; n * n];
    let mut psum: Vec<Option<(usize, ExactSum)>> = vec![None; n * n];
    let mut outputs = vec![vec![vec![0.0; n]; n]; shapes.m];
    let mut last_ready = vec![0u64; shapes.m];
    let mut emitted = 0usize;
    let mut cycle = 0u64;
    while emitted < vectors * n {
        cycle += 1;
        if cycle > (4 * n + vectors) as u64 {
            return Err(Error::contract("systolic simulation did not drain"));
        }
        for i in (0..n).rev() {
            for c in (0..n).rev() {
                let pe = i * n + c;
                let incoming = if c == 0 {
                    let t = cycle as i64 - i as i64 - 1;
                    (t >= 0 && (t as usize) < vectors).then(|| (t as usize, activation(inputs, n, t as usize, i)))
                } else {
                    act[pe - 1]
                };
                act[pe] = incoming;
                let Some((t, a)) = incoming else {
                    psum[pe] = None;
                    continue;
                };
                let mut acc = if i == 0 {
                    ExactSum::new()
                } else {
                    match psum[pe - n].take() {
                        Some((tt, acc)) if tt == t => acc,
                        _ => return Err(Error::contract(format!("partial sum {t} missing above PE ({i},{c})"))),
                    }
                };
                acc.add(l1[wmat[i][c] as usize] * l2[a as usize]);
                if i == n - 1 {
                    outputs[t / n][t % n][c] = acc.value();
                    last_ready[t / n] = last_ready[t / n].max(cycle);
                    emitted += 1;
                } else {
                    psum[pe] = Some((t, acc));
                }
            }
        }
    }
    let timing = Timing {
        latency: last_ready[0],
        total: cycle,
    };
    Ok(finish("traditional", cfg, &shapes, outputs, timing, 0, Vec::new()))
}

/// Closed forms: encoded `(2N−1) + N(m−1)`, systolic `(3N−2) + N(m−1)`.
pub fn expected_cycles(n: usize, m: usize, encoded: bool) -> (u64, u64) {
    let first = if encoded { 2 * n - 1 } else { 3 * n - 2 };
    (first as u64, (first + n * (m - 1)) as u64)
}

//! Best-of-N circuit sampling and binary search over the output bit width.
//!
//! Every random draw is derived from the master seed: sample `i` at width `M`
//! uses [`sample_seed`]`(seed, M, i)`. Samples are scored in parallel batches
//! and reduced in index order, so results do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{eval_circuit, gate_count, sample_circuit, GateKind, GateSpec, SampledCircuit};
use crate::error::{Error, Result};
use crate::fit::{Encoding, NormalSystem, TableMoments};
use crate::quant::ProductTable;

const BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub max_samples: usize,
    /// Stop once the best RMSE improved by a relative amount below
    /// `stability_epsilon` over the last `stability_window` samples.
    pub stability_window: usize,
    pub stability_epsilon: f64,
    pub min_width: usize,
    pub max_width: usize,
    pub target_rmse: Option<f64>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig::for_operand_width(8)
    }
}

impl SearchConfig {
    /// Defaults: 10^4 samples, window 1000, ε = 0.5%, width bounds 16..128
    /// for 8-bit operands and 4W..32W below that.
    pub fn for_operand_width(w: u32) -> Self {
        let (min_width, max_width) = default_width_bounds(w);
        SearchConfig {
            max_samples: 10_000,
            stability_window: 1000,
            stability_epsilon: 0.005,
            min_width,
            max_width,
            target_rmse: None,
            seed: 0,
        }
    }

    /// Runs the full sample budget with no early stop.
    pub fn without_early_stop(mut self) -> Self {
        self.stability_epsilon = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_samples == 0 {
            return Err(Error::contract("max_samples must be at least 1"));
        }
        if self.stability_window == 0 {
            return Err(Error::contract("stability_window must be at least 1"));
        }
        if self.stability_epsilon.is_nan() || self.stability_epsilon < 0.0 {
            return Err(Error::contract("stability_epsilon must be non-negative"));
        }
        if self.min_width == 0 || self.min_width > self.max_width {
            return Err(Error::contract(format!(
                "invalid width bounds {}..{}",
                self.min_width, self.max_width
            )));
        }
        Ok(())
    }
}

pub fn default_width_bounds(operand_width: u32) -> (usize, usize) {
    if operand_width >= 8 {
        (16, 128)
    } else {
        (4 * operand_width as usize, 32 * operand_width as usize)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sample `index` at output width `width`:
/// `splitmix(splitmix(splitmix(master) ^ width) ^ index)`.
pub fn sample_seed(master: u64, width: usize, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ width as u64) ^ index)
}

/// Seed of an auxiliary random stream (datasets, initialisation, shuffling)
/// derived from the master seed: `splitmix(splitmix(master) ^ !stream)`.
/// The complemented tag keeps these streams apart from sample seeds.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ !stream)
}

pub fn sample_at(table_width: u32, output_width: usize, master: u64, index: u64) -> Result<SampledCircuit> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(master, output_width, index));
    sample_circuit(&mut rng, table_width, output_width)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthProbe {
    pub width: usize,
    pub best_rmse: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// Best-so-far RMSE after each sample at the chosen width.
    pub best_so_far: Vec<f64>,
    /// Every probed width, in probe order.
    pub per_width: Vec<WidthProbe>,
    pub chosen_width: usize,
    pub samples_evaluated: usize,
    pub wall_time: Duration,
}

impl SearchTrace {
    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::format("trace csv", e);
        w.write_record(["sample_index", "best_rmse"]).map_err(e)?;
        for (i, r) in self.best_so_far.iter().enumerate() {
            w.write_record([i.to_string(), format!("{r:.9}")]).map_err(e)?;
        }
        w.flush().map_err(|e| Error::format("trace csv", e))
    }

    pub fn write_widths_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::format("trace csv", e);
        w.write_record(["width", "best_rmse"]).map_err(e)?;
        for p in &self.per_width {
            w.write_record([p.width.to_string(), format!("{:.9}", p.best_rmse)])
                .map_err(e)?;
        }
        w.flush().map_err(|e| Error::format("trace csv", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    rmse: f64,
    gates: usize,
    index: u64,
}

impl Scored {
    /// Lower RMSE, then fewer physical gates, then lower sample index.
    fn beats(&self, other: &Scored) -> bool {
        (self.rmse, self.gates, self.index) < (other.rmse, other.gates, other.index)
    }
}

/// Reusable sampler for one table; keeps the precomputed moments around
/// across widths.
pub struct Sampler<'a> {
    table: &'a ProductTable,
    moments: TableMoments,
}

impl<'a> Sampler<'a> {
    pub fn new(table: &'a ProductTable) -> Self {
        Sampler {
            table,
            moments: TableMoments::new(table),
        }
    }

    fn score(&self, width: usize, master: u64, index: u64) -> Result<Scored> {
        let c = sample_at(self.table.operand_width(), width, master, index)?;
        let rmse = self.moments.normal_system(&c)?.min_rmse();
        Ok(Scored {
            rmse,
            gates: gate_count(&c).total,
            index,
        })
    }

    pub fn sample_search(&self, width: usize, cfg: &SearchConfig) -> Result<(Encoding, SearchTrace)> {
        let start = Instant::now();
        if width == 0 {
            return Err(Error::contract("output width must be at least 1"));
        }
        if cfg.max_samples == 0 || cfg.stability_window == 0 {
            return Err(Error::contract("max_samples and stability_window must be at least 1"));
        }
        let mut best: Option<Scored> = None;
        let mut series: Vec<f64> = Vec::new();
        let mut next = 0usize;
        'outer: while next < cfg.max_samples {
            let end = (next + BATCH).min(cfg.max_samples);
            let batch: Vec<Scored> = (next..end)
                .into_par_iter()
                .map(|i| self.score(width, cfg.seed, i as u64))
                .collect::<Result<_>>()?;
            for s in batch {
                if best.is_none_or(|b| s.beats(&b)) {
                    best = Some(s);
                }
                let current = best.expect("at least one sample").rmse;
                series.push(current);
                if is_stable(&series, cfg) {
                    break 'outer;
                }
            }
            next = end;
        }
        let best = best.expect("max_samples >= 1");
        let circuit = sample_at(self.table.operand_width(), width, cfg.seed, best.index)?;
        let encoding = Encoding::fit(circuit, self.table, cfg.seed, best.index)?;
        let trace = SearchTrace {
            samples_evaluated: series.len(),
            per_width: vec![WidthProbe {
                width,
                best_rmse: encoding.rmse,
                samples: series.len(),
            }],
            best_so_far: series,
            chosen_width: width,
            wall_time: start.elapsed(),
        };
        Ok((encoding, trace))
    }

    pub fn width_binary_search(&self, cfg: &SearchConfig) -> Result<(Encoding, SearchTrace)> {
        let start = Instant::now();
        cfg.validate()?;
        let target = match cfg.target_rmse {
            Some(t) if t > 0.0 => t,
            _ => return Err(Error::contract("width search needs a positive target RMSE")),
        };
        let mut results: BTreeMap<usize, (Encoding, SearchTrace)> = BTreeMap::new();
        let mut order = Vec::new();
        let outcome = bisect_width(cfg.min_width, cfg.max_width, target, |m| {
            let (enc, trace) = self.sample_search(m, cfg)?;
            let rmse = enc.rmse;
            order.push(m);
            results.insert(m, (enc, trace));
            Ok(rmse)
        })?;
        let samples_evaluated = results.values().map(|(_, t)| t.samples_evaluated).sum();
        let per_width: Vec<WidthProbe> = order.iter().map(|m| results[m].1.per_width[0].clone()).collect();
        match outcome {
            Some(width) => {
                let (enc, trace) = results.remove(&width).expect("chosen width was probed");
                debug_assert!(enc.rmse <= target);
                Ok((
                    enc,
                    SearchTrace {
                        best_so_far: trace.best_so_far,
                        per_width,
                        chosen_width: width,
                        samples_evaluated,
                        wall_time: start.elapsed(),
                    },
                ))
            }
            None => {
                let best = results
                    .into_values()
                    .map(|(e, _)| e)
                    .min_by(|a, b| a.rmse.total_cmp(&b.rmse))
                    .expect("at least one probe");
                Err(Error::TargetUnreachable {
                    target,
                    best: Box::new(best),
                })
            }
        }
    }
}

fn is_stable(series: &[f64], cfg: &SearchConfig) -> bool {
    let n = series.len();
    let now = series[n - 1];
    if now == 0.0 {
        return true;
    }
    if n <= cfg.stability_window {
        return false;
    }
    let then = series[n - 1 - cfg.stability_window];
    (then - now) / then < cfg.stability_epsilon
}

pub fn sample_search(table: &ProductTable, width: usize, cfg: &SearchConfig) -> Result<(Encoding, SearchTrace)> {
    Sampler::new(table).sample_search(width, cfg)
}

pub fn width_binary_search(table: &ProductTable, cfg: &SearchConfig) -> Result<(Encoding, SearchTrace)> {
    Sampler::new(table).width_binary_search(cfg)
}

/// Binary search over `[min, max]` with `probe(width) -> achieved RMSE`.
///
/// At `mid = ⌊(lo+hi)/2⌋`: RMSE above target moves `lo` up, otherwise `hi`
/// down, until `hi − lo ≤ 1`. An unprobed lower bound (still `min`) is then
/// probed and returned if it meets the target; otherwise `hi` is probed if
/// needed and returned if it meets the target. `None` means even the answer
/// candidate fails.
pub fn bisect_width<F>(min: usize, max: usize, target: f64, mut probe: F) -> Result<Option<usize>>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut seen: BTreeMap<usize, f64> = BTreeMap::new();
    let mut run = |m: usize, seen: &mut BTreeMap<usize, f64>| -> Result<f64> {
        if let Some(&r) = seen.get(&m) {
            return Ok(r);
        }
        let r = probe(m)?;
        seen.insert(m, r);
        Ok(r)
    };
    let (mut lo, mut hi) = (min, max);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if run(mid, &mut seen)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !seen.contains_key(&lo) && run(lo, &mut seen)? <= target {
        return Ok(Some(lo));
    }
    if run(hi, &mut seen)? <= target {
        return Ok(Some(hi));
    }
    Ok(None)
}

/// Exhaustive search for a zero-error circuit of `width` gates, for tables
/// of at most 2-bit operands. Each output bit ranges over every distinct
/// single-level gate function; combinations are tried in lexicographic order.
pub fn exhaustive_exact_search(table: &ProductTable, width: usize) -> Result<Option<Encoding>> {
    let w = table.operand_width();
    if w > 2 {
        return Err(Error::contract("exhaustive enumeration is limited to 2-bit operands"));
    }
    let bits = 2 * w as u8;
    let mut functions: BTreeSet<u64> = BTreeSet::new();
    let mut distinct = Vec::new();
    for kind in GateKind::ALL {
        let arity = kind.arity() as u32;
        for code in 0..(bits as u32).pow(arity) {
            let inputs: Vec<u8> = (0..arity)
                .map(|p| ((code / (bits as u32).pow(p)) % bits as u32) as u8)
                .collect();
            let g = GateSpec::new(kind, &inputs);
            let c = SampledCircuit::new(w, vec![g.clone()])?;
            let col = eval_circuit(&c, table)?.column(0)[0];
            if functions.insert(col) {
                distinct.push(g);
            }
        }
    }
    if distinct.len() < width {
        return Ok(None);
    }
    let tol = 1e-9 * table.rms().max(1.0);
    let mut idx: Vec<usize> = (0..width).collect();
    loop {
        let gates: Vec<GateSpec> = idx.iter().map(|&i| distinct[i].clone()).collect();
        let c = SampledCircuit::new(w, gates)?;
        let b = eval_circuit(&c, table)?;
        if NormalSystem::from_bits(&b, table.values())?.min_rmse() <= tol {
            return Ok(Some(Encoding::fit(c, table, 0, 0)?));
        }
        // Next combination.
        let n = distinct.len();
        let mut i = width;
        while i > 0 && idx[i - 1] == n - width + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return Ok(None);
        }
        idx[i - 1] += 1;
        for j in i..width {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub grid_rmse: f64,
    pub achieved_rmse: f64,
    pub width: usize,
    pub accuracy: f64,
    pub keeps_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub target_rmse: f64,
    pub points: Vec<CalibrationPoint>,
}

/// Picks the largest grid RMSE whose encoding keeps accuracy within
/// `max_drop` of `baseline_accuracy`.
///
/// For each grid value a width search is run with that target; when the
/// target is unreachable the best encoding found is evaluated instead.
pub fn calibrate_target_rmse<F>(
    table: &ProductTable,
    cfg: &SearchConfig,
    rmse_grid: &[f64],
    baseline_accuracy: f64,
    max_drop: f64,
    mut accuracy: F,
) -> Result<Calibration>
where
    F: FnMut(&Encoding) -> Result<f64>,
{
    if rmse_grid.is_empty() {
        return Err(Error::contract("empty RMSE grid"));
    }
    let sampler = Sampler::new(table);
    let mut points = Vec::with_capacity(rmse_grid.len());
    for &r in rmse_grid {
        let probe_cfg = SearchConfig {
            target_rmse: Some(r),
            ..cfg.clone()
        };
        let enc = match sampler.width_binary_search(&probe_cfg) {
            Ok((enc, _)) => enc,
            Err(Error::TargetUnreachable { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        let acc = accuracy(&enc)?;
        points.push(CalibrationPoint {
            grid_rmse: r,
            achieved_rmse: enc.rmse,
            width: enc.output_width(),
            accuracy: acc,
            keeps_accuracy: baseline_accuracy - acc <= max_drop,
        });
    }
    let target = points
        .iter()
        .filter(|p| p.keeps_accuracy)
        .map(|p| p.grid_rmse)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    match target {
        Some(target_rmse) => Ok(Calibration { target_rmse, points }),
        None => Err(Error::CalibrationFailed(format!(
            "no grid RMSE keeps accuracy within {max_drop} of {baseline_accuracy}"
        ))),
    }
}

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::array_sim::{
    array_cost_proxy, expected_cycles, simulate_encoded_array, simulate_traditional_array, ArrayConfig, ArraySimReport,
};
use crate::error::{Error, Result};
use crate::fit::Encoding;
use crate::quant::{build_product_table, Code, ProductTable};
use crate::search::{stream_seed, Sampler, SearchTrace, WidthProbe};
use crate::train::{
    evaluate, finetune_position_weights, gaussian_blobs, Dataset, FinetuneConfig, FloatNetwork, FloatTrainConfig,
    Metrics, ProductLut, ToyNetwork,
};

use super::config::ExperimentConfig;
use super::{STREAM_DATASET, STREAM_FINETUNE, STREAM_FLOAT_TRAIN, STREAM_SIMULATE};

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, std::io::Error::from(e.kind())))?;
    fill(&mut tmp)?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_encoding(path: Option<&PathBuf>, command: &str) -> Result<Encoding> {
    let path = path.ok_or_else(|| Error::contract(format!("{command} needs an encoding file (--encoding)")))?;
    Encoding::from_json(&read_text(path)?)
}

fn table_of(cfg: &ExperimentConfig) -> Result<ProductTable> {
    build_product_table(&cfg.operand1, &cfg.operand2)
}

/// Writes `table.csv`.
pub fn cmd_table(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let table = table_of(cfg)?;
    let path = cfg.out.join("table.csv");
    write_atomic(&path, |w| table.write_csv(w))?;
    Ok(path)
}

/// Writes `encoding.json`, `rmse_vs_samples.csv` and `rmse_vs_width.csv`.
///
/// With a target RMSE the width binary search runs; otherwise one search at
/// the configured output width. An unreachable target still writes the best
/// encoding before the error is returned.
pub fn cmd_search(cfg: &ExperimentConfig) -> Result<(Encoding, SearchTrace)> {
    let table = table_of(cfg)?;
    let scfg = cfg.search_config();
    let sampler = Sampler::new(&table);
    let result = match scfg.target_rmse {
        Some(_) => sampler.width_binary_search(&scfg),
        None => sampler.sample_search(cfg.output_width(), &scfg),
    };
    let enc_path = cfg.out.join("encoding.json");
    match result {
        Ok((encoding, trace)) => {
            write_text(&enc_path, &encoding.to_json())?;
            write_atomic(&cfg.out.join("rmse_vs_samples.csv"), |w| trace.write_samples_csv(w))?;
            write_atomic(&cfg.out.join("rmse_vs_width.csv"), |w| trace.write_widths_csv(w))?;
            Ok((encoding, trace))
        }
        Err(Error::TargetUnreachable { target, best }) => {
            write_text(&enc_path, &best.to_json())?;
            Err(Error::TargetUnreachable { target, best })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub encoded: ArraySimReport,
    pub traditional: ArraySimReport,
    /// Largest |encoded − exact| over all outputs.
    pub max_abs_error: f64,
    pub output_rmse: f64,
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, codes: usize) -> Vec<Vec<Code>> {
    (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(0..codes) as Code).collect())
        .collect()
}

/// Runs both arrays on one random weight matrix and `matrices` random input
/// matrices; writes `simulate_report.json` and optionally the output CSVs.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateSummary> {
    let encoding = load_encoding(cfg.simulate.encoding.as_ref(), "simulate")?;
    let (s1, s2) = (
        encoding.operand_scheme.operand1.clone(),
        encoding.operand_scheme.operand2.clone(),
    );
    let n = cfg.simulate.array_size;
    if cfg.simulate.matrices == 0 {
        return Err(Error::contract("at least one input matrix is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_SIMULATE));
    let wmat = random_matrix(&mut rng, n, s1.num_codes());
    let inputs: Vec<_> = (0..cfg.simulate.matrices)
        .map(|_| random_matrix(&mut rng, n, s2.num_codes()))
        .collect();

    let mut enc_cfg = ArrayConfig::encoded(n, encoding);
    enc_cfg.clock_period = cfg.simulate.clock_period;
    let mut exact_cfg = ArrayConfig::exact(n, s1, s2);
    exact_cfg.clock_period = cfg.simulate.clock_period;
    let encoded = simulate_encoded_array(&enc_cfg, &wmat, &inputs)?;
    let traditional = simulate_traditional_array(&exact_cfg, &wmat, &inputs)?;

    let diffs: Vec<f64> = encoded
        .outputs
        .iter()
        .flatten()
        .flatten()
        .zip(traditional.outputs.iter().flatten().flatten())
        .map(|(a, b)| a - b)
        .collect();
    let max_abs_error = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let output_rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let summary = SimulateSummary {
        encoded,
        traditional,
        max_abs_error,
        output_rmse,
    };
    write_text(&cfg.out.join("simulate_report.json"), &to_json(&summary))?;
    if cfg.simulate.write_outputs {
        write_atomic(&cfg.out.join("encoded_outputs.csv"), |w| {
            summary.encoded.write_outputs_csv(w)
        })?;
        write_atomic(&cfg.out.join("traditional_outputs.csv"), |w| {
            summary.traditional.write_outputs_csv(w)
        })?;
    }
    Ok(summary)
}

struct Prepared {
    net: ToyNetwork,
    train: Dataset,
    test: Dataset,
}

/// Loads or generates the dataset and loads or trains the quantized network
/// for `encoding`'s operand schemes. A freshly trained network is written to
/// `network.json`.
fn prepare_network(cfg: &ExperimentConfig, encoding: &Encoding) -> Result<Prepared> {
    let t = &cfg.train;
    let data = match &t.dataset {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            Dataset::from_csv(f)?
        }
        None => gaussian_blobs(
            stream_seed(cfg.seed, STREAM_DATASET),
            t.blobs_per_class,
            t.blobs_dim,
            t.blobs_classes,
            t.blobs_separation,
        ),
    };
    let (train, test) = data.split(t.train_fraction);
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    let net = match &t.network {
        Some(p) => ToyNetwork::from_json(&read_text(p)?)?,
        None => {
            let fcfg = FloatTrainConfig {
                hidden: t.hidden,
                epochs: t.float_epochs,
                batch_size: t.batch_size,
                lr: t.float_lr,
                seed: stream_seed(cfg.seed, STREAM_FLOAT_TRAIN),
                ..FloatTrainConfig::default()
            };
            let float = FloatNetwork::train(&train, &fcfg)?;
            let (s1, s2) = (&encoding.operand_scheme.operand1, &encoding.operand_scheme.operand2);
            let net = float.quantize(&train, s1, s2)?;
            write_text(&cfg.out.join("network.json"), &net.to_json())?;
            net
        }
    };
    Ok(Prepared { net, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub encoding_rmse: f64,
    pub output_width: usize,
    pub exact: SplitMetrics,
    pub encoded: SplitMetrics,
}

fn split_metrics(p: &Prepared, lut: &ProductLut) -> Result<SplitMetrics> {
    let test = if p.test.is_empty() {
        Metrics {
            loss: 0.0,
            accuracy: 0.0,
        }
    } else {
        evaluate(&p.net, lut, &p.test)?
    };
    Ok(SplitMetrics {
        train: evaluate(&p.net, lut, &p.train)?,
        test,
    })
}

fn eval_report(p: &Prepared, encoding: &Encoding) -> Result<EvalReport> {
    let (s1, s2) = (&encoding.operand_scheme.operand1, &encoding.operand_scheme.operand2);
    Ok(EvalReport {
        encoding_rmse: encoding.rmse,
        output_width: encoding.output_width(),
        exact: split_metrics(p, &ProductLut::exact(s1, s2)?)?,
        encoded: split_metrics(p, &ProductLut::encoded(encoding)?)?,
    })
}

/// Writes `metrics.json` with exact and encoded loss and accuracy.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let encoding = load_encoding(cfg.train.encoding.as_ref(), "eval")?;
    let p = prepare_network(cfg, &encoding)?;
    let report = eval_report(&p, &encoding)?;
    write_text(&cfg.out.join("metrics.json"), &to_json(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneReport {
    pub lr: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub before: EvalReport,
    pub after: EvalReport,
}

/// Writes `encoding_finetuned.json`, `loss.csv` and `metrics.json`.
pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<FinetuneReport> {
    let encoding = load_encoding(cfg.train.encoding.as_ref(), "finetune")?;
    let p = prepare_network(cfg, &encoding)?;
    let fcfg = FinetuneConfig {
        lr: cfg.train.finetune_lr,
        epochs: cfg.train.finetune_epochs,
        batch_size: cfg.train.batch_size,
        seed: stream_seed(cfg.seed, STREAM_FINETUNE),
        ..FinetuneConfig::default()
    };
    let result = finetune_position_weights(&p.net, &encoding, &p.train, &fcfg)?;
    let report = FinetuneReport {
        lr: fcfg.lr,
        epochs: fcfg.epochs,
        best_epoch: result.best_epoch,
        before: eval_report(&p, &encoding)?,
        after: eval_report(&p, &result.encoding)?,
    };
    write_text(&cfg.out.join("encoding_finetuned.json"), &result.encoding.to_json())?;
    write_atomic(&cfg.out.join("loss.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::format("loss csv", e);
        c.write_record(["epoch", "loss", "train_accuracy"]).map_err(e)?;
        for (i, (l, a)) in result.loss_curve.iter().zip(&result.accuracy_curve).enumerate() {
            c.write_record([i.to_string(), format!("{l:.9}"), format!("{a:.9}")])
                .map_err(e)?;
        }
        c.flush().map_err(|e| Error::format("loss csv", e))
    })?;
    write_text(&cfg.out.join("metrics.json"), &to_json(&report))?;
    Ok(report)
}

/// Writes `rmse_vs_width.csv` (`width,best_rmse,gate_total`),
/// `rmse_vs_samples.csv` (`width,sample_index,best_rmse`) and
/// `array_sweep.csv`; with `sweep.accuracy` also `accuracy_vs_width.csv`.
///
/// Each width is searched independently with the configured budget. The
/// array table uses the encoding at the configured output width.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<WidthProbe>> {
    let table = table_of(cfg)?;
    let scfg = cfg.search_config();
    let sampler = Sampler::new(&table);
    let mut runs = Vec::with_capacity(cfg.sweep.widths.len());
    for &w in &cfg.sweep.widths {
        runs.push(sampler.sample_search(w, &scfg)?);
    }
    let probes: Vec<WidthProbe> = runs.iter().flat_map(|(_, t)| t.per_width.clone()).collect();

    write_atomic(&cfg.out.join("rmse_vs_width.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::format("sweep csv", e);
        c.write_record(["width", "best_rmse", "gate_total"]).map_err(e)?;
        for (enc, _) in &runs {
            c.write_record([
                enc.output_width().to_string(),
                format!("{:.9}", enc.rmse),
                enc.gate_total().to_string(),
            ])
            .map_err(e)?;
        }
        c.flush().map_err(|e| Error::format("sweep csv", e))
    })?;
    write_atomic(&cfg.out.join("rmse_vs_samples.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::format("sweep csv", e);
        c.write_record(["width", "sample_index", "best_rmse"]).map_err(e)?;
        for (_, t) in &runs {
            for (i, r) in t.best_so_far.iter().enumerate() {
                c.write_record([t.chosen_width.to_string(), i.to_string(), format!("{r:.9}")])
                    .map_err(e)?;
            }
        }
        c.flush().map_err(|e| Error::format("sweep csv", e))
    })?;

    let out_width = cfg.output_width();
    let reference = match runs.iter().find(|(e, _)| e.output_width() == out_width) {
        Some((e, _)) => e.clone(),
        None => sampler.sample_search(out_width, &scfg)?.0,
    };
    let m = cfg.simulate.matrices.max(1);
    write_atomic(&cfg.out.join("array_sweep.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::format("sweep csv", e);
        c.write_record([
            "n",
            "matrices",
            "encoded_latency",
            "traditional_latency",
            "encoded_total_cycles",
            "traditional_total_cycles",
            "encoded_multiplier_gates",
            "traditional_multiplier_gates",
            "encoded_accumulator_bits",
            "traditional_accumulator_bits",
            "decoder_ops",
        ])
        .map_err(e)?;
        for &n in &cfg.sweep.array_sizes {
            if n == 0 {
                return Err(Error::contract("array size must be at least 1"));
            }
            let (el, et) = expected_cycles(n, m, true);
            let (tl, tt) = expected_cycles(n, m, false);
            let ec = array_cost_proxy(&ArrayConfig::encoded(n, reference.clone()));
            let tc = array_cost_proxy(&ArrayConfig::exact(n, cfg.operand1.clone(), cfg.operand2.clone()));
            c.write_record([
                n.to_string(),
                m.to_string(),
                el.to_string(),
                tl.to_string(),
                et.to_string(),
                tt.to_string(),
                ec.multiplier_gates_total.to_string(),
                tc.multiplier_gates_total.to_string(),
                ec.accumulator_bits.to_string(),
                tc.accumulator_bits.to_string(),
                ec.decoder_ops.to_string(),
            ])
            .map_err(e)?;
        }
        c.flush().map_err(|e| Error::format("sweep csv", e))
    })?;

    if cfg.sweep.accuracy {
        let p = prepare_network(cfg, &reference)?;
        let exact = split_metrics(&p, &ProductLut::exact(&cfg.operand1, &cfg.operand2)?)?;
        let mut rows = Vec::with_capacity(runs.len());
        for (enc, _) in &runs {
            rows.push((
                enc.output_width(),
                enc.rmse,
                split_metrics(&p, &ProductLut::encoded(enc)?)?,
            ));
        }
        write_atomic(&cfg.out.join("accuracy_vs_width.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            let e = |e: csv::Error| Error::format("sweep csv", e);
            c.write_record(["width", "best_rmse", "test_accuracy", "exact_test_accuracy"])
                .map_err(e)?;
            for (width, rmse, m) in &rows {
                c.write_record([
                    width.to_string(),
                    format!("{rmse:.9}"),
                    format!("{:.9}", m.test.accuracy),
                    format!("{:.9}", exact.test.accuracy),
                ])
                .map_err(e)?;
            }
            c.flush().map_err(|e| Error::format("sweep csv", e))
        })?;
    }
    Ok(probes)
}

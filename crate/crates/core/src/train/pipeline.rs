//! Encoding search on a non-uniform (codebook) product table, end to end.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fit::Encoding;
use crate::quant::{build_product_table, ProductTable, QuantScheme};
use crate::search::{width_binary_search, SearchConfig};

use super::dataset::Dataset;
use super::infer::{evaluate, ProductLut};
use super::network::FloatNetwork;

/// How the width search target is derived from a product table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetPolicy {
    Absolute {
        rmse: f64,
    },
    /// `ratio × RMS(table values)`.
    RelativeToTableRms {
        ratio: f64,
    },
}

impl TargetPolicy {
    pub fn target_for(&self, table: &ProductTable) -> f64 {
        match *self {
            TargetPolicy::Absolute { rmse } => rmse,
            // An all-zero table still needs a positive target.
            TargetPolicy::RelativeToTableRms { ratio } => (ratio * table.rms()).max(f64::MIN_POSITIVE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub table_rows: usize,
    pub target_rmse: f64,
    pub chosen_width: usize,
    pub achieved_rmse: f64,
    pub gate_total: usize,
    pub float_accuracy: f64,
    pub exact_accuracy: f64,
    pub encoded_accuracy: f64,
}

/// Quantizes `net` with `codebook` weights and uniform activations of the
/// same width, searches an encoding for that table, and evaluates it on
/// `test`.
pub fn nonuniform_pipeline(
    codebook: &QuantScheme,
    net: &FloatNetwork,
    calibration: &Dataset,
    test: &Dataset,
    search: &SearchConfig,
    policy: TargetPolicy,
) -> Result<(Encoding, PipelineReport)> {
    let act = QuantScheme::uniform(codebook.width())?;
    let qnet = net.quantize(calibration, codebook, &act)?;
    let table = build_product_table(codebook, &act)?;
    let target = policy.target_for(&table);
    let cfg = SearchConfig {
        target_rmse: Some(target),
        ..search.clone()
    };
    let (encoding, trace) = width_binary_search(&table, &cfg)?;
    let exact = evaluate(&qnet, &ProductLut::exact(codebook, &act)?, test)?;
    let encoded = evaluate(&qnet, &ProductLut::encoded(&encoding)?, test)?;
    let report = PipelineReport {
        table_rows: table.len(),
        target_rmse: target,
        chosen_width: trace.chosen_width,
        achieved_rmse: encoding.rmse,
        gate_total: encoding.gate_total(),
        float_accuracy: net.accuracy(test),
        exact_accuracy: exact.accuracy,
        encoded_accuracy: encoded.accuracy,
    };
    Ok((encoding, report))
}

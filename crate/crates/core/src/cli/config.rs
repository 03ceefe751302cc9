//! Experiment configuration file (TOML). Every field has a default, and
//! command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantScheme;
use crate::search::{default_width_bounds, SearchConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Weight operand scheme.
    pub operand1: QuantScheme,
    /// Activation operand scheme.
    pub operand2: QuantScheme,
    pub search: SearchSection,
    pub simulate: SimulateSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = QuantScheme::UniformSigned { width: 8 };
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("."),
            jobs: 0,
            operand1: s.clone(),
            operand2: s,
            search: SearchSection::default(),
            simulate: SimulateSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub max_samples: usize,
    pub stability_window: usize,
    pub stability_epsilon: f64,
    /// Defaults to the operand-width bounds when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_width: Option<usize>,
    /// Runs the width binary search when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_rmse: Option<f64>,
    /// Output width for a single-width search; defaults to `6·W`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_width: Option<usize>,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::for_operand_width(8);
        SearchSection {
            max_samples: d.max_samples,
            stability_window: d.stability_window,
            stability_epsilon: d.stability_epsilon,
            min_width: None,
            max_width: None,
            target_rmse: None,
            output_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub array_size: usize,
    pub matrices: usize,
    pub clock_period: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<PathBuf>,
    /// Also write every output matrix as CSV.
    pub write_outputs: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            array_size: 16,
            matrices: 1,
            clock_period: 1.0,
            encoding: None,
            write_outputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<PathBuf>,
    /// CSV dataset; generated blobs are used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Quantized network checkpoint; trained from the dataset when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<PathBuf>,
    pub blobs_per_class: usize,
    pub blobs_dim: usize,
    pub blobs_classes: usize,
    pub blobs_separation: f64,
    pub train_fraction: f64,
    pub hidden: usize,
    pub float_epochs: usize,
    pub float_lr: f64,
    pub batch_size: usize,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            encoding: None,
            dataset: None,
            network: None,
            blobs_per_class: 600,
            blobs_dim: 16,
            blobs_classes: 2,
            blobs_separation: 8.0,
            train_fraction: 2.0 / 3.0,
            hidden: 32,
            float_epochs: 30,
            float_lr: 0.01,
            batch_size: 32,
            finetune_lr: 1e-3,
            finetune_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Output widths for the width-vs-RMSE curve.
    pub widths: Vec<usize>,
    /// Array sizes for the latency and cost table.
    pub array_sizes: Vec<usize>,
    /// Also evaluate a toy network at every width.
    pub accuracy: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            widths: (2..=16).map(|k| 8 * k).collect(),
            array_sizes: vec![4, 8, 16, 32, 64, 128, 256],
            accuracy: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.operand1.validate()?;
        self.operand2.validate()?;
        if self.operand1.width() != self.operand2.width() {
            return Err(Error::contract("operand schemes must have the same width"));
        }
        self.search_config().validate()
    }

    pub fn operand_width(&self) -> u32 {
        self.operand1.width()
    }

    pub fn search_config(&self) -> SearchConfig {
        let (lo, hi) = default_width_bounds(self.operand_width());
        SearchConfig {
            max_samples: self.search.max_samples,
            stability_window: self.search.stability_window,
            stability_epsilon: self.search.stability_epsilon,
            min_width: self.search.min_width.unwrap_or(lo),
            max_width: self.search.max_width.unwrap_or(hi),
            target_rmse: self.search.target_rmse,
            seed: self.seed,
        }
    }

    pub fn output_width(&self) -> usize {
        self.search.output_width.unwrap_or(6 * self.operand_width() as usize)
    }
}

//! Operand quantization schemes and the reference product truth table.
//!
//! A [`QuantScheme`] maps a raw `width`-bit operand code to the real value it
//! represents. Uniform schemes use two's complement; codebook schemes look the
//! value up by the code read as an unsigned index.
//!
//! [`ProductTable`] enumerates every `(code1, code2)` pair in ascending
//! lexicographic order, i.e. row `k` holds `code1 = k >> W`,
//! `code2 = k & (2^W - 1)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_OPERAND_WIDTH: u32 = 8;

/// Raw operand code. Widths are capped at 8 bits so every code fits.
pub type Code = u16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuantScheme {
    UniformSigned { width: u32 },
    NonuniformCodebook { width: u32, codebook: Vec<f64> },
}

impl QuantScheme {
    pub fn uniform(width: u32) -> Result<Self> {
        let scheme = QuantScheme::UniformSigned { width };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn codebook(width: u32, codebook: Vec<f64>) -> Result<Self> {
        let scheme = QuantScheme::NonuniformCodebook { width, codebook };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn width(&self) -> u32 {
        match self {
            QuantScheme::UniformSigned { width } | QuantScheme::NonuniformCodebook { width, .. } => *width,
        }
    }

    pub fn num_codes(&self) -> usize {
        1 << self.width()
    }

    /// Checks the width cap and codebook shape. Schemes read from config files
    /// go through here before use.
    pub fn validate(&self) -> Result<()> {
        let width = self.width();
        if width == 0 || width > MAX_OPERAND_WIDTH {
            return Err(Error::UnsupportedWidth(width));
        }
        if let QuantScheme::NonuniformCodebook { codebook, .. } = self {
            if codebook.len() != 1 << width {
                return Err(Error::InvalidScheme(format!(
                    "codebook has {} entries, expected {}",
                    codebook.len(),
                    1usize << width
                )));
            }
            if let Some(bad) = codebook.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidScheme(format!("non-finite codebook value {bad}")));
            }
        }
        Ok(())
    }

    pub fn decode(&self, code: Code) -> Result<f64> {
        decode_operand(self, code as u32)
    }

    /// All decoded values, indexed by code.
    pub fn levels(&self) -> Vec<f64> {
        (0..self.num_codes() as u32)
            .map(|c| decode_operand(self, c).expect("code within range"))
            .collect()
    }

    /// Code whose level is closest to `value` (lowest code on ties).
    pub fn nearest_code(&self, value: f64) -> Code {
        match self {
            QuantScheme::UniformSigned { width } => {
                let half = 1i64 << (width - 1);
                let level = (value.round() as i64).clamp(-half, half - 1);
                (level & ((1i64 << width) - 1)) as Code
            }
            QuantScheme::NonuniformCodebook { codebook, .. } => {
                let mut best = 0;
                for (code, level) in codebook.iter().enumerate() {
                    if (level - value).abs() < (codebook[best] - value).abs() {
                        best = code;
                    }
                }
                best as Code
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            QuantScheme::UniformSigned { width } => format!("uniform-signed {width}-bit"),
            QuantScheme::NonuniformCodebook { width, .. } => {
                format!("nonuniform-codebook {width}-bit")
            }
        }
    }
}

pub fn decode_operand(scheme: &QuantScheme, code: u32) -> Result<f64> {
    let width = scheme.width();
    if code >= 1 << width {
        return Err(Error::CodeOutOfRange { code, width });
    }
    Ok(match scheme {
        QuantScheme::UniformSigned { width } => {
            let half = 1i64 << (width - 1);
            let c = code as i64;
            (if c >= half { c - (1 << width) } else { c }) as f64
        }
        QuantScheme::NonuniformCodebook { codebook, .. } => codebook[code as usize],
    })
}

/// Exhaustive multiplication truth table. Immutable once built.
#[derive(Debug, Clone)]
pub struct ProductTable {
    operand_width: u32,
    scheme1: QuantScheme,
    scheme2: QuantScheme,
    operand1: Vec<f64>,
    operand2: Vec<f64>,
    values: Vec<f64>,
}

pub fn build_product_table(s1: &QuantScheme, s2: &QuantScheme) -> Result<ProductTable> {
    s1.validate()?;
    s2.validate()?;
    if s1.width() != s2.width() {
        return Err(Error::contract(format!(
            "operand widths differ ({} vs {})",
            s1.width(),
            s2.width()
        )));
    }
    let operand1 = s1.levels();
    let operand2 = s2.levels();
    let values = operand1
        .iter()
        // `+ 0.0` turns a signed zero into +0.
        .flat_map(|a| operand2.iter().map(move |b| a * b + 0.0))
        .collect();
    Ok(ProductTable {
        operand_width: s1.width(),
        scheme1: s1.clone(),
        scheme2: s2.clone(),
        operand1,
        operand2,
        values,
    })
}

impl ProductTable {
    pub fn operand_width(&self) -> u32 {
        self.operand_width
    }

    pub fn scheme1(&self) -> &QuantScheme {
        &self.scheme1
    }

    pub fn scheme2(&self) -> &QuantScheme {
        &self.scheme2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The value vector `v`, in row order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Decoded operand-1 levels indexed by code.
    pub fn operand1_levels(&self) -> &[f64] {
        &self.operand1
    }

    pub fn operand2_levels(&self) -> &[f64] {
        &self.operand2
    }

    pub fn row_index(&self, code1: Code, code2: Code) -> usize {
        ((code1 as usize) << self.operand_width) | code2 as usize
    }

    pub fn row(&self, k: usize) -> (Code, Code, f64) {
        let mask = (1usize << self.operand_width) - 1;
        ((k >> self.operand_width) as Code, (k & mask) as Code, self.values[k])
    }

    pub fn rows(&self) -> impl Iterator<Item = (Code, Code, f64)> + '_ {
        (0..self.len()).map(|k| self.row(k))
    }

    pub fn value(&self, code1: Code, code2: Code) -> f64 {
        self.values[self.row_index(code1, code2)]
    }

    /// Root mean square of the table values; the RMSE of the all-zero encoding.
    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// Writes `code1,code2,value` rows with MSB-first binary codes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let width = self.operand_width as usize;
        let map = |e: csv::Error| Error::format("truth-table csv", e);
        wtr.write_record(["code1", "code2", "value"]).map_err(map)?;
        for (c1, c2, v) in self.rows() {
            wtr.write_record([format!("{c1:0width$b}"), format!("{c2:0width$b}"), format!("{v}")])
                .map_err(map)?;
        }
        wtr.flush().map_err(|e| Error::format("truth-table csv", e))?;
        Ok(())
    }
}

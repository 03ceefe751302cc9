//! One-dimensional k-means for learning non-uniform codebooks.

use crate::error::{Error, Result};
use crate::quant::QuantScheme;

/// Lloyd's algorithm on scalars, initialised at evenly spaced quantiles.
/// Returns `k` centres in ascending order; empty clusters keep their centre.
pub fn kmeans_1d(values: &[f64], k: usize, max_iters: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if values.is_empty() {
        return Err(Error::contract("k-means needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("k-means input must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centres: Vec<f64> = (0..k).map(|i| sorted[((2 * i + 1) * n / (2 * k)).min(n - 1)]).collect();
    for _ in 0..max_iters {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        // Centres stay sorted, so assignment is a sweep over sorted values.
        let mut c = 0;
        for &v in &sorted {
            while c + 1 < k && (centres[c + 1] - v).abs() < (centres[c] - v).abs() {
                c += 1;
            }
            sum[c] += v;
            count[c] += 1;
        }
        let next: Vec<f64> = (0..k)
            .map(|i| {
                if count[i] > 0 {
                    sum[i] / count[i] as f64
                } else {
                    centres[i]
                }
            })
            .collect();
        if next == centres {
            break;
        }
        centres = next;
        centres.sort_by(f64::total_cmp);
    }
    Ok(centres)
}

/// `2^width`-level codebook scheme; code `i` maps to the `i`-th smallest level.
pub fn learn_codebook(values: &[f64], width: u32) -> Result<QuantScheme> {
    let levels = kmeans_1d(values, 1usize << width, 100)?;
    QuantScheme::codebook(width, levels)
}

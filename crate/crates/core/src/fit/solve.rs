//! Small dense solvers for the normal equations `G s = r` with `G = BᵀB`.
//!
//! `G` is symmetric positive semi-definite and stored row-major. Sampled
//! circuits routinely yield constant or duplicated columns, so every solver
//! here has to cope with exact rank deficiency.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a column is treated as dependent.
pub const PIVOT_TOL: f64 = 1e-9;

/// Plain Cholesky solve. Returns `None` as soon as a pivot falls to
/// `PIVOT_TOL · max(diag)` or below.
pub fn cholesky_solve(gram: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rhs.len();
    let scale = max_diag(gram, m);
    if scale <= 0.0 {
        return None;
    }
    let tol = PIVOT_TOL * scale;
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let mut d = gram[j * m + j];
        for k in 0..j {
            d -= l[j * m + k] * l[j * m + k];
        }
        if d <= tol {
            return None;
        }
        let d = d.sqrt();
        l[j * m + j] = d;
        for i in j + 1..m {
            let mut s = gram[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = s / d;
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s -= l[k * m + i] * x[k];
        }
        x[i] = s / l[i * m + i];
    }
    Some(x)
}

/// Minimum-norm solution via the SVD pseudo-inverse, with one step of
/// iterative refinement.
pub fn min_norm_solve(gram: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = rhs.len();
    let g = DMatrix::from_row_slice(m, m, gram);
    let r = DVector::from_column_slice(rhs);
    let svd = g.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 {
        return vec![0.0; m];
    }
    let eps = PIVOT_TOL * sigma_max;
    let mut x = svd.solve(&r, eps).expect("U and Vᵀ were computed");
    let residual = &r - &g * &x;
    x += svd.solve(&residual, eps).expect("U and Vᵀ were computed");
    x.iter().copied().collect()
}

/// Rank-revealing Cholesky with diagonal pivoting. Returns the minimum of
/// `‖Bs − v‖²` given `vᵀv`, without forming `s`; dependent columns are
/// dropped, which leaves the minimum unchanged.
pub fn min_residual_sq(gram: &[f64], rhs: &[f64], vtv: f64) -> f64 {
    let m = rhs.len();
    let mut a = gram.to_vec();
    let mut r = rhs.to_vec();
    let scale = max_diag(gram, m);
    if scale <= 0.0 {
        return vtv.max(0.0);
    }
    let tol = PIVOT_TOL * scale;
    let mut explained = 0.0;
    for k in 0..m {
        let mut p = k;
        for i in k + 1..m {
            if a[i * m + i] > a[p * m + p] {
                p = i;
            }
        }
        let pivot = a[p * m + p];
        if pivot <= tol {
            break;
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            for row in 0..m {
                a.swap(row * m + k, row * m + p);
            }
            r.swap(k, p);
        }
        let d = pivot.sqrt();
        // Column k of L is a[i*m+k]/d; y_k = r_k / d.
        let y = r[k] / d;
        explained += y * y;
        for i in k + 1..m {
            let lik = a[i * m + k] / d;
            r[i] -= lik * y;
            for j in k + 1..=i {
                let ljk = a[j * m + k] / d;
                a[i * m + j] -= lik * ljk;
            }
            for j in k + 1..i {
                a[j * m + i] = a[i * m + j];
            }
        }
    }
    let rss = vtv - explained;
    // Cancellation noise from an exact fit.
    if rss <= ZERO_RSS_REL * vtv {
        0.0
    } else {
        rss
    }
}

const ZERO_RSS_REL: f64 = 1e-12;

fn max_diag(gram: &[f64], m: usize) -> f64 {
    (0..m).map(|i| gram[i * m + i]).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_of(b: &[Vec<f64>]) -> (Vec<f64>, usize) {
        let m = b[0].len();
        let mut g = vec![0.0; m * m];
        for row in b {
            for i in 0..m {
                for j in 0..m {
                    g[i * m + j] += row[i] * row[j];
                }
            }
        }
        (g, m)
    }

    #[test]
    fn cholesky_identity() {
        let g = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(cholesky_solve(&g, &[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let b = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        let (g, _) = gram_of(&b);
        assert!(cholesky_solve(&g, &[2.0, 2.0]).is_none());
        assert!(cholesky_solve(&[0.0], &[0.0]).is_none());
    }

    #[test]
    fn min_norm_splits_duplicates() {
        // Two identical columns: the minimum-norm solution shares the weight.
        let b = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        let (g, _) = gram_of(&b);
        let s = min_norm_solve(&g, &[4.0, 4.0]);
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn min_residual_with_dependent_columns() {
        // v = (1, 2, 3) against columns [1,1,1] and a duplicate: best is the mean.
        let b = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let (g, _) = gram_of(&b);
        let rss = min_residual_sq(&g, &[6.0, 6.0], 14.0);
        assert!((rss - 2.0).abs() < 1e-12, "{rss}");
        assert_eq!(min_residual_sq(&[0.0], &[0.0], 5.0), 5.0);
    }
}

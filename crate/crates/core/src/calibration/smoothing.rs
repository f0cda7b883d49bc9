//! Least-squares kernel smoothing with multiquadric radial basis functions
//! placed evenly in log-lag.

use nalgebra::{DMatrix, DVector};

/// Lags at or below this value are never smoothed.
pub const DEFAULT_CUTOFF: usize = 10;

const MIN_POINTS: usize = 6;
const MAX_CENTERS: usize = 12;

/// Replaces the kernel tail beyond `cutoff` by a least-squares fit of
/// multiquadric RBFs in `u = ln(lag)` plus a constant.
///
/// Returns the smoothed kernel and whether a fit was applied. Tails with too
/// few points are passed through unchanged.
pub fn smooth_kernel(kernel: &[f64], cutoff: usize) -> (Vec<f64>, bool) {
    let first = cutoff + 1;
    if kernel.len() <= first || kernel.len() - first < MIN_POINTS {
        log::warn!(
            "kernel of length {} too short to smooth beyond lag {cutoff}; left unchanged",
            kernel.len()
        );
        return (kernel.to_vec(), false);
    }
    let lags: Vec<f64> = (first..kernel.len()).map(|j| (j as f64).ln()).collect();
    let values = &kernel[first..];
    let n_centers = (lags.len() / 4).clamp(2, MAX_CENTERS);
    let (lo, hi) = (lags[0], lags[lags.len() - 1]);
    let spacing = (hi - lo) / (n_centers - 1) as f64;
    let centers: Vec<f64> = (0..n_centers).map(|k| lo + spacing * k as f64).collect();
    let basis = |u: f64, col: usize| -> f64 {
        if col == 0 {
            1.0
        } else {
            let d = u - centers[col - 1];
            (d * d + spacing * spacing).sqrt()
        }
    };
    let design = DMatrix::from_fn(lags.len(), n_centers + 1, |i, c| basis(lags[i], c));
    let rhs = DVector::from_column_slice(values);
    let coef = match design.svd(true, true).solve(&rhs, 1e-12) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("kernel smoothing fit failed ({e}); left unchanged");
            return (kernel.to_vec(), false);
        }
    };
    let mut out = kernel.to_vec();
    for (i, &u) in lags.iter().enumerate() {
        out[first + i] = (0..=n_centers).map(|c| coef[c] * basis(u, c)).sum();
    }
    (out, true)
}

//! Diffusion diagnostics of mid-price paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt, mean_stderr, ols, write_tidy};
use crate::error::{Error, Result};

/// Shortest path accepted by [`hurst_exponent`].
pub const HURST_MIN_LEN: usize = 512;

/// Smallest window of the Hurst regression.
const HURST_MIN_WINDOW: usize = 16;

/// `D(l) = <(m(t + l) - m(t))^2> / l` for `l = 1..=L`, averaged over days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignaturePlot {
    pub lags: Vec<usize>,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    /// Day-to-day standard error of each `D(l)`.
    pub stderr: Vec<f64>,
    /// Mean of `D` over the top decade of lags `[L / 10, L]`.
    #[serde(rename = "D_LF")]
    pub d_lf: f64,
}

impl SignaturePlot {
    pub fn subtracted(&self) -> Vec<f64> {
        self.d.iter().map(|v| v - self.d_lf).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let sub = self.subtracted();
        let rows = self.lags.iter().enumerate().map(|(i, l)| {
            vec![
                l.to_string(),
                fmt(self.d[i]),
                fmt(sub[i]),
                fmt(self.stderr[i]),
            ]
        });
        write_tidy(writer, &["lag", "value", "subtracted", "stderr"], rows)
    }
}

fn day_signature(path: &[f64], max_lag: usize) -> Vec<f64> {
    (1..=max_lag)
        .map(|l| {
            let n = path.len() - l;
            let sq: f64 = (0..n).map(|t| (path[t + l] - path[t]).powi(2)).sum();
            sq / (n as f64 * l as f64)
        })
        .collect()
}

/// Signature plot from per-day log-mid paths, every day weighted equally.
pub fn signature_plot(paths: &[Vec<f64>], max_lag: usize) -> Result<SignaturePlot> {
    if paths.is_empty() {
        return Err(Error::Empty("no days".into()));
    }
    let shortest = paths.iter().map(Vec::len).min().unwrap_or(0);
    if max_lag == 0 || max_lag >= shortest {
        return Err(Error::LagTooLarge {
            max_lag,
            len: shortest,
        });
    }
    let per_day: Vec<Vec<f64>> = paths.par_iter().map(|p| day_signature(p, max_lag)).collect();
    let (mut d, mut stderr) = (Vec::with_capacity(max_lag), Vec::with_capacity(max_lag));
    for i in 0..max_lag {
        let vals: Vec<f64> = per_day.iter().map(|v| v[i]).collect();
        let (m, se) = mean_stderr(&vals);
        d.push(m);
        stderr.push(se);
    }
    let lo = (max_lag / 10).max(1);
    let top = &d[lo - 1..];
    let d_lf = top.iter().sum::<f64>() / top.len() as f64;
    Ok(SignaturePlot {
        lags: (1..=max_lag).collect(),
        d,
        stderr,
        d_lf,
    })
}

/// Mean absolute deviation of the path from its window mean, over
/// non-overlapping windows of length `s`.
fn window_deviation(path: &[f64], s: usize) -> f64 {
    let windows = path.len() / s;
    let mut total = 0.0;
    for w in path.chunks_exact(s) {
        let m = w.iter().sum::<f64>() / s as f64;
        total += w.iter().map(|v| (v - m).abs()).sum::<f64>() / s as f64;
    }
    total / windows as f64
}

fn day_hurst(path: &[f64]) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut s = HURST_MIN_WINDOW;
    while s <= path.len() / 4 {
        let dev = window_deviation(path, s);
        if !(dev > 0.0) {
            return Err(Error::Undefined(format!("path is constant on windows of {s}")));
        }
        xs.push((s as f64).ln());
        ys.push(dev.ln());
        s *= 2;
    }
    ols(&xs, &ys)
        .map(|(h, _)| h)
        .ok_or_else(|| Error::Undefined("fewer than two window sizes".into()))
}

/// Hurst exponent of cumulative paths: slope of `log` mean absolute
/// deviation within windows against `log` window size, over dyadic sizes from
/// 16 to a quarter of the day, averaged over days.
pub fn hurst_exponent(paths: &[Vec<f64>]) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Empty("no days".into()));
    }
    if let Some(p) = paths.iter().find(|p| p.len() < HURST_MIN_LEN) {
        return Err(Error::InvalidInput(format!(
            "Hurst estimation needs {HURST_MIN_LEN} points per day, got {}",
            p.len()
        )));
    }
    let hs = paths.par_iter().map(|p| day_hurst(p)).collect::<Result<Vec<_>>>()?;
    Ok(hs.iter().sum::<f64>() / hs.len() as f64)
}

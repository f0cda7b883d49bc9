//! Conditional aggregate impact, curvature, slope scaling and N-trade
//! prediction correlations.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{fmt, mean_stderr, ols, write_tidy};
use crate::error::{Error, Result};
use crate::events::InstrumentData;

pub const DEFAULT_BINS: usize = 31;

/// Grid resolution for curvature integrals.
const CURVATURE_GRID: usize = 1024;

/// Conditioning variable of an impact curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactVariable {
    /// Summed order signs.
    Sign,
    /// Summed signed volume, normalised by the day's total volume.
    Volume,
}

/// Per-event values of `variable` for every day.
pub fn impact_inputs(data: &InstrumentData, variable: ImpactVariable) -> Result<Vec<Vec<f64>>> {
    data.days
        .iter()
        .map(|d| match variable {
            ImpactVariable::Sign => Ok(d.signs()),
            ImpactVariable::Volume => {
                let total: f64 = d.events.iter().map(|e| e.volume).sum();
                if !(total > 0.0) {
                    return Err(Error::Undefined(format!("day {} has no volume", d.date)));
                }
                Ok(d.signed_volumes().into_iter().map(|q| q / total).collect())
            }
        })
        .collect()
}

/// Mean N-trade return per quantile bin of the aggregate imbalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub n: usize,
    pub variable: ImpactVariable,
    /// Mean imbalance within each bin.
    pub bin_centers: Vec<f64>,
    pub means: Vec<f64>,
    /// Naive standard error of each bin mean (windows overlap, so this understates).
    pub stderr: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ImpactCurve {
    /// Largest `a` such that the bin centres cover `[-a, a]`.
    pub fn half_range(&self) -> f64 {
        let lo = self.bin_centers.first().copied().unwrap_or(0.0);
        let hi = self.bin_centers.last().copied().unwrap_or(0.0);
        (-lo).min(hi).max(0.0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_curves_csv(std::slice::from_ref(self), writer)
    }
}

/// Writes several curves, typically one per `N`, under a single header.
pub fn write_curves_csv<W: Write>(curves: &[ImpactCurve], writer: W) -> Result<()> {
    let rows = curves.iter().flat_map(|c| {
        (0..c.means.len()).map(move |i| {
            vec![
                c.n.to_string(),
                i.to_string(),
                fmt(c.bin_centers[i]),
                c.counts[i].to_string(),
                fmt(c.means[i]),
                fmt(c.stderr[i]),
            ]
        })
    });
    write_tidy(writer, &["N", "bin", "x", "count", "value", "stderr"], rows)
}

/// Bin boundaries over `n` sorted points, mirror-symmetric: `b[B - k] = n - b[k]`.
fn quantile_bounds(n: usize, bins: usize) -> Vec<usize> {
    let mut b = vec![0; bins + 1];
    for k in 0..=bins / 2 {
        b[k] = k * n / bins;
        b[bins - k] = n - b[k];
    }
    b
}

/// Conditional aggregate impact `R_N(X)` from overlapping N-trade windows
/// within each day, binned by quantiles of `X`.
pub fn aggregate_impact(
    returns: &[Vec<f64>],
    x: &[Vec<f64>],
    n: usize,
    bins: usize,
    variable: ImpactVariable,
) -> Result<ImpactCurve> {
    if returns.len() != x.len() || returns.iter().zip(x).any(|(r, v)| r.len() != v.len()) {
        return Err(Error::ShapeMismatch("returns and imbalance series differ".into()));
    }
    let shortest = returns.iter().map(Vec::len).min().unwrap_or(0);
    if n == 0 || n >= shortest {
        return Err(Error::InvalidInput(format!(
            "bin size {n} must be positive and below the shortest day ({shortest} events)"
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (r, v) in returns.iter().zip(x) {
        let (mut sr, mut sx): (f64, f64) = (r[..n].iter().sum(), v[..n].iter().sum());
        points.push((sx, sr));
        for t in n..r.len() {
            sr += r[t] - r[t - n];
            sx += v[t] - v[t - n];
            points.push((sx, sr));
        }
    }
    if points.len() < bins {
        return Err(Error::InvalidInput(format!(
            "{} windows cannot fill {bins} bins",
            points.len()
        )));
    }
    points.sort_by(|a, b| match a.0.total_cmp(&b.0) {
        Ordering::Equal => a.1.total_cmp(&b.1),
        o => o,
    });
    let bounds = quantile_bounds(points.len(), bins);
    let mut curve = ImpactCurve {
        n,
        variable,
        bin_centers: Vec::with_capacity(bins),
        means: Vec::with_capacity(bins),
        stderr: Vec::with_capacity(bins),
        counts: Vec::with_capacity(bins),
    };
    for w in bounds.windows(2) {
        let slice = &points[w[0]..w[1]];
        if slice.is_empty() {
            continue;
        }
        let xs: Vec<f64> = slice.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = slice.iter().map(|p| p.1).collect();
        let (mx, _) = mean_stderr(&xs);
        let (my, se) = mean_stderr(&ys);
        curve.bin_centers.push(mx);
        curve.means.push(my);
        curve.stderr.push(se);
        curve.counts.push(slice.len());
    }
    Ok(curve)
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    if x1 == x0 {
        return 0.5 * (ys[i - 1] + ys[i]);
    }
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

/// Curvature `chi = 1/3 - (I[-a/2,0] / I[-a,-a/2] + I[0,a/2] / I[a/2,a]) / 2`
/// of a sampled function, linearly interpolated and integrated by the
/// trapezoid rule. `xs` must be increasing and cover `[-a, a]`.
pub fn curvature_of(xs: &[f64], ys: &[f64], a: f64) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("curve coordinates differ in length".into()));
    }
    if xs.len() < 8 {
        return Err(Error::InvalidInput("curvature needs at least 8 points".into()));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("curve abscissae must be sorted".into()));
    }
    let tol = 1e-12 * a.abs().max(1.0);
    if !(a > 0.0) || xs[0] > -a + tol || xs[xs.len() - 1] < a - tol {
        return Err(Error::InvalidInput(format!("curve does not cover [-{a}, {a}]")));
    }
    let h = 2.0 * a / CURVATURE_GRID as f64;
    let f: Vec<f64> = (0..=CURVATURE_GRID)
        .map(|i| interp(xs, ys, -a + h * i as f64))
        .collect();
    let q = CURVATURE_GRID / 4;
    let integral = |k: usize| -> f64 {
        let seg = &f[k * q..=(k + 1) * q];
        h * (seg.iter().sum::<f64>() - 0.5 * (seg[0] + seg[q]))
    };
    let (i0, i1, i2, i3) = (integral(0), integral(1), integral(2), integral(3));
    if i0 == 0.0 || i3 == 0.0 {
        return Err(Error::Undefined("curvature denominator integral is zero".into()));
    }
    Ok(1.0 / 3.0 - 0.5 * (i1 / i0 + i2 / i3))
}

/// Curvature of an impact curve over `[-a, a]`, by default its full symmetric range.
pub fn curvature(curve: &ImpactCurve, a: Option<f64>) -> Result<f64> {
    curvature_of(
        &curve.bin_centers,
        &curve.means,
        a.unwrap_or_else(|| curve.half_range()),
    )
}

/// Central slopes of impact curves across `N` and the exponent of `slope ~ N^-kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeScaling {
    pub n_values: Vec<usize>,
    pub slopes: Vec<f64>,
    pub kappa: f64,
}

fn central_slope(curve: &ImpactCurve) -> Result<f64> {
    let window = 0.25 * curve.half_range();
    let mut idx: Vec<usize> = (0..curve.bin_centers.len())
        .filter(|&i| curve.bin_centers[i].abs() <= window)
        .collect();
    if idx.len() < 2 {
        let mut by_dist: Vec<usize> = (0..curve.bin_centers.len()).collect();
        by_dist.sort_by(|&a, &b| curve.bin_centers[a].abs().total_cmp(&curve.bin_centers[b].abs()));
        idx = by_dist.into_iter().take(2).collect();
    }
    let xs: Vec<f64> = idx.iter().map(|&i| curve.bin_centers[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| curve.means[i]).collect();
    ols(&xs, &ys)
        .map(|(s, _)| s)
        .ok_or_else(|| Error::Undefined(format!("no central slope for N = {}", curve.n)))
}

/// Fits the central slope of each curve (bins within the innermost quarter of
/// the imbalance range) and regresses `log slope` on `log N`.
pub fn slope_scaling(curves: &[ImpactCurve]) -> Result<SlopeScaling> {
    if curves.len() < 4 {
        return Err(Error::InvalidInput("slope scaling needs at least 4 values of N".into()));
    }
    let slopes = curves.iter().map(central_slope).collect::<Result<Vec<_>>>()?;
    if let Some(s) = slopes.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Undefined(format!("non-positive central slope {s}")));
    }
    let n_values: Vec<usize> = curves.iter().map(|c| c.n).collect();
    let lx: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = slopes.iter().map(|s| s.ln()).collect();
    let (b, _) = ols(&lx, &ly).ok_or_else(|| Error::Undefined("all N equal".into()))?;
    Ok(SlopeScaling {
        n_values,
        slopes,
        kappa: -b,
    })
}

/// Pearson correlation of overlapping N-trade sums, per day, averaged over days.
pub fn model_correlation(truth: &[Vec<f64>], predicted: &[Vec<f64>], n: usize) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch("days of truth and prediction differ".into()));
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(predicted) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch("day lengths differ".into()));
        }
        if n == 0 || n >= a.len() {
            return Err(Error::InvalidInput(format!("bin size {n} too large for a day of {}", a.len())));
        }
        let sums = |x: &[f64]| -> Vec<f64> {
            let mut s: f64 = x[..n].iter().sum();
            let mut out = vec![s];
            for t in n..x.len() {
                s += x[t] - x[t - n];
                out.push(s);
            }
            out
        };
        let (sa, sb) = (sums(a), sums(b));
        let m = sa.len() as f64;
        let (ma, mb) = (sa.iter().sum::<f64>() / m, sb.iter().sum::<f64>() / m);
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in sa.iter().zip(&sb) {
            cov += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        if va == 0.0 || vb == 0.0 {
            return Err(Error::Undefined("N-trade returns with zero variance".into()));
        }
        total += cov / (va * vb).sqrt();
    }
    Ok(total / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pm1(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
    }

    fn sampled(f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        (xs, ys)
    }

    #[test]
    fn curvature_anchors() {
        let (x, y) = sampled(|x| x);
        assert!(curvature_of(&x, &y, 1.0).unwrap().abs() < 0.01);
        let (x, y) = sampled(|x| (std::f64::consts::PI * x).sin());
        assert!((curvature_of(&x, &y, 1.0).unwrap() + 2.0 / 3.0).abs() < 0.02);
        let (x, y) = sampled(|x| x.signum() * (1.0 - (2.0 * x.abs() - 1.0).abs()) / 2.0 * 2.0);
        assert!((curvature_of(&x, &y, 1.0).unwrap() + 2.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn curvature_errors() {
        let (x, y) = sampled(|_| 0.0);
        assert!(matches!(curvature_of(&x, &y, 1.0), Err(Error::Undefined(_))));
        let (x, y) = sampled(|x| x);
        assert!(curvature_of(&x[..5], &y[..5], 0.1).is_err());
        assert!(curvature_of(&x, &y, 2.0).is_err());
    }

    #[test]
    fn zero_returns_give_flat_curve() {
        let x = vec![pm1(500, 1), pm1(500, 2)];
        let r = vec![vec![0.0; 500]; 2];
        let c = aggregate_impact(&r, &x, 10, 11, ImpactVariable::Sign).unwrap();
        assert!(c.means.iter().all(|m| *m == 0.0));
        assert_eq!(c.counts.iter().sum::<usize>(), 2 * 491);
    }

    #[test]
    fn returns_equal_to_signs_give_identity() {
        let x = vec![pm1(5_000, 3)];
        let c = aggregate_impact(&x, &x, 50, 31, ImpactVariable::Sign).unwrap();
        for (a, b) in c.bin_centers.iter().zip(&c.means) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bin_size_must_fit() {
        let x = vec![pm1(20, 4)];
        assert!(aggregate_impact(&x, &x, 20, 3, ImpactVariable::Sign).is_err());
        assert!(aggregate_impact(&x, &x, 0, 3, ImpactVariable::Sign).is_err());
    }

    #[test]
    fn bounds_are_mirror_symmetric() {
        for (n, b) in [(100, 31), (7, 3), (1000, 10), (31, 31)] {
            let bounds = quantile_bounds(n, b);
            assert_eq!((bounds[0], bounds[b]), (0, n));
            for k in 0..=b {
                assert_eq!(bounds[b - k], n - bounds[k]);
            }
            assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn slope_scaling_fixtures() {
        let curve = |n: usize, slope: f64| ImpactCurve {
            n,
            variable: ImpactVariable::Sign,
            bin_centers: (-10..=10).map(f64::from).collect(),
            means: (-10..=10).map(|x| slope * f64::from(x)).collect(),
            stderr: vec![0.0; 21],
            counts: vec![1; 21],
        };
        let ns = [10usize, 30, 100, 300, 1000];
        let half: Vec<_> = ns.iter().map(|&n| curve(n, (n as f64).powf(-0.5))).collect();
        assert!((slope_scaling(&half).unwrap().kappa - 0.5).abs() < 1e-12);
        let flat: Vec<_> = ns.iter().map(|&n| curve(n, 0.2)).collect();
        assert!(slope_scaling(&flat).unwrap().kappa.abs() < 1e-12);
        let neg: Vec<_> = ns.iter().map(|&n| curve(n, -0.2)).collect();
        assert!(slope_scaling(&neg).is_err());
        assert!(slope_scaling(&flat[..3]).is_err());
    }

    #[test]
    fn correlation_fixtures() {
        let t = vec![pm1(300, 5), pm1(300, 6)];
        let neg: Vec<Vec<f64>> = t.iter().map(|d| d.iter().map(|v| -v).collect()).collect();
        assert!((model_correlation(&t, &t, 50).unwrap() - 1.0).abs() < 1e-12);
        assert!((model_correlation(&t, &neg, 50).unwrap() + 1.0).abs() < 1e-12);
        let flat = vec![vec![1.0; 300]; 2];
        assert!(matches!(model_correlation(&t, &flat, 50), Err(Error::Undefined(_))));
    }

    proptest! {
        #[test]
        fn flipping_reflects_the_curve(seed in 0u64..500, scale in 0.1f64..10.0) {
            let x = vec![pm1(400, seed), pm1(300, seed + 1)];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<Vec<f64>> = x
                .iter()
                .map(|d| d.iter().map(|s| s * rng.random::<f64>()).collect())
                .collect();
            let flip = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                v.iter().map(|d| d.iter().map(|a| -a).collect()).collect()
            };
            let a = aggregate_impact(&r, &x, 20, 31, ImpactVariable::Sign).unwrap();
            let b = aggregate_impact(&flip(&r), &flip(&x), 20, 31, ImpactVariable::Sign).unwrap();
            let k = a.means.len();
            for i in 0..k {
                prop_assert_eq!(a.counts[i], b.counts[k - 1 - i]);
                prop_assert!((a.means[i] + b.means[k - 1 - i]).abs() < 1e-12);
                prop_assert!((a.bin_centers[i] + b.bin_centers[k - 1 - i]).abs() < 1e-12);
            }
            // Curvature is invariant under positive rescaling of the curve.
            let ys: Vec<f64> = a.means.iter().map(|m| m * scale).collect();
            let h = a.half_range();
            if let (Ok(c1), Ok(c2)) = (curvature_of(&a.bin_centers, &a.means, h), curvature_of(&a.bin_centers, &ys, h)) {
                prop_assert!((c1 - c2).abs() < 1e-9 * c1.abs().max(1.0));
            }
        }

        #[test]
        fn self_correlation_is_one(seed in 0u64..500) {
            let t = vec![pm1(200, seed)];
            prop_assert!((model_correlation(&t, &t, 10).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

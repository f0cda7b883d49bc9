//! Spectral estimation of two- and three-point cross-correlations.
//!
//! Two-point correlations go through the convolution theorem: zero-pad,
//! FFT, multiply `conj(F) * G`, inverse FFT. Three-point correlations go
//! through the cross-bispectrum
//!
//! ```text
//! B(v', v'') = conj(F(v' + v'')) * G(v') * H(v'')
//! ```
//!
//! whose two-dimensional inverse transform is the triple sum
//! `sum_t f(t) g(t + l) h(t + j)`. Every lag is divided by its true number
//! of summands, so short segments and padded short days stay unbiased.
//!
//! Long days are cut into segments of a fixed length that cover the day with
//! the smallest possible overlap. Segments of one day are averaged with equal
//! weight, then days are averaged with equal weight. Because all segments of
//! a day share one length (and therefore one divisor per lag), spectra are
//! accumulated per day and inverted once.

use std::ops::RangeInclusive;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Smallest length `>= min` whose only prime factors are 2, 3 and 5.
pub fn fft_len(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// Two-point cross-correlation `C_fg(l) = mean_t f(t) g(t + l)` for `l` in `[-L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorr2 {
    max_lag: usize,
    values: Vec<f64>,
    counts: Vec<u64>,
}

impl CrossCorr2 {
    pub fn new(max_lag: usize, values: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        let len = 2 * max_lag + 1;
        if values.len() != len || counts.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "cross-correlation over [-{max_lag}, {max_lag}] needs {len} entries"
            )));
        }
        Ok(Self {
            max_lag,
            values,
            counts,
        })
    }

    pub fn zeros(max_lag: usize) -> Self {
        Self {
            max_lag,
            values: vec![0.0; 2 * max_lag + 1],
            counts: vec![0; 2 * max_lag + 1],
        }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn lags(&self) -> RangeInclusive<isize> {
        -(self.max_lag as isize)..=self.max_lag as isize
    }

    fn index(&self, lag: isize) -> usize {
        assert!(
            lag.unsigned_abs() <= self.max_lag,
            "lag {lag} outside [-{0}, {0}]",
            self.max_lag
        );
        (lag + self.max_lag as isize) as usize
    }

    /// Value at `lag`. Panics outside `[-L, L]`.
    pub fn at(&self, lag: isize) -> f64 {
        self.values[self.index(lag)]
    }

    /// Total number of summands behind `lag`.
    pub fn count(&self, lag: isize) -> u64 {
        self.counts[self.index(lag)]
    }

    /// Values ordered from lag `-L` to `L`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values at lags `0..=L`.
    pub fn positive(&self) -> &[f64] {
        &self.values[self.max_lag..]
    }
}

/// Three-point cross-correlation `C_fgh(l, j) = mean_t f(t) g(t + l) h(t + j)`
/// on `[-L, L]^2`, stored row-major in `l`.
///
/// Entries with `|l - j| > L` are masked: that is the blind spot left by the
/// zero padding and those values are never exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorr3 {
    max_lag: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    counts: Vec<u64>,
}

impl CrossCorr3 {
    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    fn width(&self) -> usize {
        2 * self.max_lag + 1
    }

    fn index(&self, l: isize, j: isize) -> Option<usize> {
        let lmax = self.max_lag as isize;
        if l.abs() > lmax || j.abs() > lmax {
            return None;
        }
        Some((l + lmax) as usize * self.width() + (j + lmax) as usize)
    }

    /// Value at `(l, j)`, or `None` outside the range or inside the blind spot.
    pub fn get(&self, l: isize, j: isize) -> Option<f64> {
        let i = self.index(l, j)?;
        self.mask[i].then_some(self.values[i])
    }

    pub fn is_valid(&self, l: isize, j: isize) -> bool {
        self.index(l, j).is_some_and(|i| self.mask[i])
    }

    pub fn count(&self, l: isize, j: isize) -> u64 {
        self.index(l, j).map_or(0, |i| self.counts[i])
    }

    /// Swaps the roles of `g` and `h`: `C_fhg(l, j) = C_fgh(j, l)`.
    pub fn transposed(&self) -> Self {
        let w = self.width();
        let mut out = self.clone();
        for a in 0..w {
            for b in 0..w {
                out.values[a * w + b] = self.values[b * w + a];
                out.mask[a * w + b] = self.mask[b * w + a];
                out.counts[a * w + b] = self.counts[b * w + a];
            }
        }
        out
    }

    /// Iterates `(l, j, value, valid)` over the whole square, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (isize, isize, f64, bool)> + '_ {
        let lmax = self.max_lag as isize;
        let w = self.width();
        (0..w * w).map(move |i| {
            let l = (i / w) as isize - lmax;
            let j = (i % w) as isize - lmax;
            (l, j, self.values[i], self.mask[i])
        })
    }

    /// Writes the tensor as CSV with columns `l,j,value,valid`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["l", "j", "value", "valid"])?;
        for (l, j, v, ok) in self.entries() {
            wtr.write_record([
                l.to_string(),
                j.to_string(),
                if ok { v.to_string() } else { String::new() },
                u8::from(ok).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Number of `t` with `t`, `t + l`, `t + j` all inside `[0, len)`.
pub fn triple_count(len: usize, l: isize, j: isize) -> usize {
    let span = l.max(j).max(0) - l.min(j).min(0);
    len.saturating_sub(span as usize)
}

// ---------------------------------------------------------------------------
// FFT helpers
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Transforms {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }
}

/// Forward FFT of `x` zero-padded to length `n`.
pub fn spectrum(x: &[f64], n: usize) -> Result<Vec<Complex64>> {
    if x.len() > n {
        return Err(Error::ShapeMismatch(format!(
            "series of length {} does not fit a transform of length {n}",
            x.len()
        )));
    }
    Ok(Transforms::new(n).spectrum(x))
}

/// Cross-bispectrum `B(v', v'') = conj(F(v' + v'')) G(v') H(v'')` as an
/// `n x n` row-major matrix indexed by FFT bins; frequency sums wrap modulo `n`.
pub fn bispectrum(f: &[Complex64], g: &[Complex64], h: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = f.len();
    if g.len() != n || h.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "spectra of lengths {}, {}, {}",
            n,
            g.len(),
            h.len()
        )));
    }
    let f_conj: Vec<Complex64> = f.iter().map(|c| c.conj()).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        accumulate_bispectrum_row(&mut out[a * n..(a + 1) * n], &f_conj, g[a], h, a, 1.0);
    }
    Ok(out)
}

/// `row[b] += w * conj_f[(a + b) mod n] * ga * h[b]`.
#[inline]
fn accumulate_bispectrum_row(
    row: &mut [Complex64],
    f_conj: &[Complex64],
    ga: Complex64,
    h: &[Complex64],
    a: usize,
    w: f64,
) {
    let n = row.len();
    let ga = ga * w;
    let split = n - a;
    let (row_lo, row_hi) = row.split_at_mut(split);
    let (h_lo, h_hi) = h.split_at(split);
    for ((r, &fv), &hv) in row_lo.iter_mut().zip(&f_conj[a..]).zip(h_lo) {
        *r += fv * ga * hv;
    }
    for ((r, &fv), &hv) in row_hi.iter_mut().zip(&f_conj[..a]).zip(h_hi) {
        *r += fv * ga * hv;
    }
}

// ---------------------------------------------------------------------------
// Single-series estimators
// ---------------------------------------------------------------------------

fn check_series(lens: &[usize], max_lag: usize) -> Result<usize> {
    let t = lens[0];
    if lens.iter().any(|&l| l != t) {
        return Err(Error::ShapeMismatch(format!("series lengths {lens:?}")));
    }
    if t == 0 {
        return Err(Error::Empty("series is empty".into()));
    }
    if max_lag >= t {
        return Err(Error::LagTooLarge { max_lag, len: t });
    }
    Ok(t)
}

/// Unbiased two-point cross-correlation of a single series pair.
pub fn xcorr2(f: &[f64], g: &[f64], max_lag: usize) -> Result<CrossCorr2> {
    let t = check_series(&[f.len(), g.len()], max_lag)?;
    let plan = SpectralPlan::new(max_lag, t).with_pair(0, 1);
    Ok(plan.estimate_day(&[f, g])?.pairs.remove(0))
}

/// Unbiased three-point cross-correlation of a single series triple.
///
/// Memory grows with the square of the series length; long series should go
/// through a segmented [`SpectralPlan`].
pub fn xcorr3(f: &[f64], g: &[f64], h: &[f64], max_lag: usize) -> Result<CrossCorr3> {
    let t = check_series(&[f.len(), g.len(), h.len()], max_lag)?;
    let plan = SpectralPlan::new(max_lag, t).with_triple(0, 1, 2);
    Ok(plan.estimate_day(&[f, g, h])?.triples.remove(0))
}

// ---------------------------------------------------------------------------
// Segmented, per-day estimation
// ---------------------------------------------------------------------------

/// Start offsets of `seg_len` windows covering `len` points with the smallest
/// possible overlap. A day no longer than `seg_len` is one (shorter) segment.
pub fn segment_starts(len: usize, seg_len: usize) -> Vec<usize> {
    if len <= seg_len || seg_len == 0 {
        return vec![0];
    }
    let k = len.div_ceil(seg_len);
    let room = len - seg_len;
    (0..k)
        .map(|i| (i * room + (k - 1) / 2) / (k - 1))
        .collect()
}

/// Which correlations to estimate and how to segment each day.
///
/// Series are referred to by their position in the slice handed to
/// [`SpectralPlan::estimate_day`]. A pair `(f, g)` yields `C_fg(l)`, a triple
/// `(f, g, h)` yields `C_fgh(l, j)`.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    pub max_lag: usize,
    pub segment_len: usize,
    pub pairs: Vec<(usize, usize)>,
    pub triples: Vec<(usize, usize, usize)>,
}

/// Estimates produced by a [`SpectralPlan`], in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub pairs: Vec<CrossCorr2>,
    pub triples: Vec<CrossCorr3>,
}

impl SpectralPlan {
    pub fn new(max_lag: usize, segment_len: usize) -> Self {
        Self {
            max_lag,
            segment_len: segment_len.max(max_lag + 1),
            pairs: Vec::new(),
            triples: Vec::new(),
        }
    }

    pub fn with_pair(mut self, f: usize, g: usize) -> Self {
        self.pairs.push((f, g));
        self
    }

    pub fn with_triple(mut self, f: usize, g: usize, h: usize) -> Self {
        self.triples.push((f, g, h));
        self
    }

    fn transform_len(&self) -> usize {
        fft_len(self.segment_len + self.max_lag)
    }

    /// Per-day estimate: segment, accumulate spectra, invert once, normalise.
    pub fn estimate_day(&self, series: &[&[f64]]) -> Result<Estimates> {
        let used = self
            .pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .chain(self.triples.iter().flat_map(|&(a, b, c)| [a, b, c]));
        let mut n_series = 0;
        for i in used {
            if i >= series.len() {
                return Err(Error::InvalidInput(format!("series index {i} out of range")));
            }
            n_series = n_series.max(i + 1);
        }
        let lens: Vec<usize> = series.iter().map(|s| s.len()).collect();
        if lens.is_empty() {
            return Err(Error::Empty("no series".into()));
        }
        let len = check_series(&lens, self.max_lag)?;
        let seg = len.min(self.segment_len);
        let starts = segment_starts(len, self.segment_len);
        let tr = Transforms::new(self.transform_len());
        let n = tr.n;
        let weight = 1.0 / starts.len() as f64;

        let mut acc2 = vec![vec![Complex64::new(0.0, 0.0); n]; self.pairs.len()];
        let mut acc3 = vec![vec![Complex64::new(0.0, 0.0); n * n]; self.triples.len()];
        let mut spectra: Vec<Option<Vec<Complex64>>> = vec![None; n_series];

        for &start in &starts {
            for s in spectra.iter_mut() {
                *s = None;
            }
            let mut spec = |i: usize| -> Vec<Complex64> {
                spectra[i]
                    .get_or_insert_with(|| tr.spectrum(&series[i][start..start + seg]))
                    .clone()
            };
            for (acc, &(a, b)) in acc2.iter_mut().zip(&self.pairs) {
                let (fa, fb) = (spec(a), spec(b));
                for ((x, p), q) in acc.iter_mut().zip(&fa).zip(&fb) {
                    *x += p.conj() * q * weight;
                }
            }
            for (acc, &(a, b, c)) in acc3.iter_mut().zip(&self.triples) {
                let (fa, fb, fc) = (spec(a), spec(b), spec(c));
                let fa_conj: Vec<Complex64> = fa.iter().map(|z| z.conj()).collect();
                for (k, row) in acc.chunks_exact_mut(n).enumerate() {
                    accumulate_bispectrum_row(row, &fa_conj, fb[k], &fc, k, weight);
                }
            }
        }

        let pairs = acc2
            .into_iter()
            .map(|mut acc| {
                tr.inverse.process(&mut acc);
                self.finish_pair(&acc, seg, starts.len())
            })
            .collect();
        let triples = acc3
            .into_iter()
            .map(|acc| self.finish_triple(acc, &tr, seg, starts.len()))
            .collect();
        Ok(Estimates { pairs, triples })
    }

    fn finish_pair(&self, circ: &[Complex64], seg: usize, n_seg: usize) -> CrossCorr2 {
        let n = circ.len();
        let lmax = self.max_lag as isize;
        let mut values = Vec::with_capacity(2 * self.max_lag + 1);
        let mut counts = Vec::with_capacity(2 * self.max_lag + 1);
        for lag in -lmax..=lmax {
            let idx = lag.rem_euclid(n as isize) as usize;
            let count = seg - lag.unsigned_abs();
            values.push(circ[idx].re / n as f64 / count as f64);
            counts.push((count * n_seg) as u64);
        }
        CrossCorr2 {
            max_lag: self.max_lag,
            values,
            counts,
        }
    }

    fn finish_triple(
        &self,
        mut acc: Vec<Complex64>,
        tr: &Transforms,
        seg: usize,
        n_seg: usize,
    ) -> CrossCorr3 {
        let n = tr.n;
        let lmax = self.max_lag as isize;
        let w = 2 * self.max_lag + 1;
        // Inverse along v'' for every row, keep only the lags we need, then
        // inverse along v' on those columns.
        tr.inverse.process(&mut acc);
        let mut cols = vec![Complex64::new(0.0, 0.0); w * n];
        for (jj, j) in (-lmax..=lmax).enumerate() {
            let jn = j.rem_euclid(n as isize) as usize;
            for a in 0..n {
                cols[jj * n + a] = acc[a * n + jn];
            }
        }
        drop(acc);
        tr.inverse.process(&mut cols);
        let scale = 1.0 / (n as f64 * n as f64);
        let mut values = vec![0.0; w * w];
        let mut mask = vec![false; w * w];
        let mut counts = vec![0u64; w * w];
        for (ll, l) in (-lmax..=lmax).enumerate() {
            let ln = l.rem_euclid(n as isize) as usize;
            for (jj, j) in (-lmax..=lmax).enumerate() {
                let count = triple_count(seg, l, j);
                let i = ll * w + jj;
                if (l - j).unsigned_abs() <= self.max_lag && count > 0 {
                    values[i] = cols[jj * n + ln].re * scale / count as f64;
                    mask[i] = true;
                    counts[i] = (count * n_seg) as u64;
                }
            }
        }
        CrossCorr3 {
            max_lag: self.max_lag,
            values,
            mask,
            counts,
        }
    }

    /// Estimates every day (in parallel) and reduces them in day order into
    /// `n_groups` contiguous blocks of days.
    pub fn estimate_days(
        &self,
        days: &[Vec<Vec<f64>>],
        n_groups: usize,
    ) -> Result<DayAverage<Estimates>> {
        if days.is_empty() {
            return Err(Error::Empty("no days to estimate".into()));
        }
        let n_groups = n_groups.clamp(1, days.len());
        let mut out = DayAverage::new(n_groups);
        let chunk = (rayon::current_num_threads() * 2).max(1);
        for (c, block) in days.chunks(chunk).enumerate() {
            let estimates: Vec<Estimates> = block
                .par_iter()
                .map(|d| {
                    let refs: Vec<&[f64]> = d.iter().map(Vec::as_slice).collect();
                    self.estimate_day(&refs)
                })
                .collect::<Result<_>>()?;
            for (k, e) in estimates.into_iter().enumerate() {
                let day = c * chunk + k;
                out.push(day * n_groups / days.len(), e)?;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Equal-weight averaging
// ---------------------------------------------------------------------------

/// Element-wise summation and scaling for estimates that can be averaged.
pub trait Averageable: Clone {
    fn add_assign(&mut self, other: &Self) -> Result<()>;
    fn scale(&mut self, factor: f64);
}

impl Averageable for CrossCorr2 {
    fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.max_lag != other.max_lag {
            return Err(Error::ShapeMismatch(format!(
                "lag bounds {} and {}",
                self.max_lag, other.max_lag
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Averageable for CrossCorr3 {
    fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.max_lag != other.max_lag || self.mask != other.mask {
            return Err(Error::ShapeMismatch(
                "three-point estimates with different lag bounds or masks".into(),
            ));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Averageable for Estimates {
    fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.pairs.len() != other.pairs.len() || self.triples.len() != other.triples.len() {
            return Err(Error::ShapeMismatch("estimate sets of different shape".into()));
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            a.add_assign(b)?;
        }
        for (a, b) in self.triples.iter_mut().zip(&other.triples) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        self.pairs.iter_mut().for_each(|p| p.scale(factor));
        self.triples.iter_mut().for_each(|t| t.scale(factor));
    }
}

impl Averageable for Vec<f64> {
    fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "arrays of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.iter_mut().zip(other) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Equal-weight mean of per-day estimates.
pub fn welch_average<T: Averageable>(per_day: &[T]) -> Result<T> {
    let (first, rest) = per_day
        .split_first()
        .ok_or_else(|| Error::Empty("nothing to average".into()))?;
    let mut sum = first.clone();
    for item in rest {
        sum.add_assign(item)?;
    }
    sum.scale(1.0 / per_day.len() as f64);
    Ok(sum)
}

/// Running per-group sums of per-day estimates, for the overall equal-weight
/// mean and for delete-one-group jackknife means.
#[derive(Debug, Clone)]
pub struct DayAverage<T> {
    sums: Vec<Option<T>>,
    days: Vec<usize>,
}

impl<T: Averageable> DayAverage<T> {
    pub fn new(n_groups: usize) -> Self {
        Self {
            sums: vec![None; n_groups.max(1)],
            days: vec![0; n_groups.max(1)],
        }
    }

    pub fn push(&mut self, group: usize, value: T) -> Result<()> {
        match &mut self.sums[group] {
            Some(s) => s.add_assign(&value)?,
            slot => *slot = Some(value),
        }
        self.days[group] += 1;
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.sums.iter().filter(|s| s.is_some()).count()
    }

    pub fn n_days(&self) -> usize {
        self.days.iter().sum()
    }

    fn mean_where(&self, keep: impl Fn(usize) -> bool) -> Result<T> {
        let mut total: Option<T> = None;
        let mut days = 0;
        for (g, s) in self.sums.iter().enumerate() {
            if let (Some(s), true) = (s, keep(g)) {
                match &mut total {
                    Some(t) => t.add_assign(s)?,
                    None => total = Some(s.clone()),
                }
                days += self.days[g];
            }
        }
        let mut t = total.ok_or_else(|| Error::Empty("no days in average".into()))?;
        t.scale(1.0 / days as f64);
        Ok(t)
    }

    /// Equal-weight mean over all days.
    pub fn mean(&self) -> Result<T> {
        self.mean_where(|_| true)
    }

    /// Mean over all days outside `group`.
    pub fn mean_excluding(&self, group: usize) -> Result<T> {
        self.mean_where(|g| g != group)
    }

    /// Indices of non-empty groups.
    pub fn groups(&self) -> Vec<usize> {
        (0..self.sums.len()).filter(|&g| self.sums[g].is_some()).collect()
    }
}

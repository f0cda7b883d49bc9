//! Synthetic order flow with known ground-truth impact.
//!
//! Signs are thresholded fractional Gaussian noise (long memory with a chosen
//! Hurst exponent). Labels are drawn with a probability of changing the price
//! that may depend on the trailing sign imbalance. Returns follow a given
//! model exactly, optionally with Gaussian noise on price-changing events.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibratedModel, ModelKind};
use crate::error::{Error, Result};
use crate::events::{DaySeries, InstrumentData, Label, Sign, TradeEvent};
use crate::simulate::run_model_day;

/// Probability that an event changes the price, as a function of the trailing
/// mean sign `imb` in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChangeProb {
    Constant { p: f64 },
    /// `p0 * (1 - |imb|^gamma)` clipped to `[0.01, 1]`.
    Pinning { p0: f64, gamma: f64 },
}

impl Default for ChangeProb {
    fn default() -> Self {
        ChangeProb::Pinning { p0: 0.4, gamma: 2.0 }
    }
}

impl ChangeProb {
    pub fn eval(&self, imbalance: f64) -> f64 {
        match *self {
            ChangeProb::Constant { p } => p,
            ChangeProb::Pinning { p0, gamma } => {
                (p0 * (1.0 - imbalance.abs().powf(gamma))).clamp(0.01, 1.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ChangeProb::Constant { p } if !(p > 0.0 && p <= 1.0) => Err(Error::InvalidInput(
                format!("constant change probability {p} outside (0, 1]"),
            )),
            ChangeProb::Pinning { p0, gamma } if !(p0 > 0.0 && p0 <= 1.0 && gamma > 0.0) => {
                Err(Error::InvalidInput(format!(
                    "pinning parameters p0 = {p0}, gamma = {gamma} invalid"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Which events receive return noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    PriceChanging,
    /// Rejected: noise on `n` events would break the label invariant.
    All,
}

fn default_model() -> CalibratedModel {
    CalibratedModel::cim2(5e-5).expect("positive constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub instrument_id: String,
    /// Events per day.
    pub events_per_day: usize,
    pub days: usize,
    /// Hurst exponent of the latent fractional Gaussian noise behind the signs.
    pub sign_memory: f64,
    pub change_prob: ChangeProb,
    /// Trailing window for the sign imbalance, current event included.
    pub window: usize,
    #[serde(default = "default_model")]
    pub model: CalibratedModel,
    /// Standard deviation of Gaussian return noise.
    pub noise: f64,
    pub noise_target: NoiseTarget,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub initial_price: f64,
    /// Parameters of the lognormal volume placeholder.
    pub volume_mu: f64,
    pub volume_sigma: f64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            instrument_id: "SYNTH".into(),
            events_per_day: 10_000,
            days: 10,
            sign_memory: 0.5,
            change_prob: ChangeProb::default(),
            window: 50,
            model: default_model(),
            noise: 0.0,
            noise_target: NoiseTarget::PriceChanging,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            initial_price: 100.0,
            volume_mu: 100f64.ln(),
            volume_sigma: 1.0,
        }
    }
}

impl FlowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.events_per_day < 2 || self.days == 0 {
            return Err(Error::InvalidInput(
                "need at least one day of two events".into(),
            ));
        }
        if !(self.sign_memory > 0.0 && self.sign_memory < 1.0) {
            return Err(Error::InvalidInput(format!(
                "sign memory {} unreachable: Hurst exponent must lie in (0, 1)",
                self.sign_memory
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidInput("imbalance window must be positive".into()));
        }
        if !(self.noise >= 0.0) || (self.noise > 0.0 && self.noise_target == NoiseTarget::All) {
            return Err(Error::InvalidInput(
                "return noise must be non-negative and confined to price-changing events".into(),
            ));
        }
        if !(self.initial_price > 0.0) || !(self.volume_sigma >= 0.0) {
            return Err(Error::InvalidInput("invalid price or volume parameters".into()));
        }
        self.change_prob.validate()?;
        self.model.validate()
    }
}

// ---------------------------------------------------------------------------
// Signs
// ---------------------------------------------------------------------------

/// Autocovariance of unit-variance fractional Gaussian noise.
pub fn fgn_autocov(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Circulant-embedding generator for fractional Gaussian noise of length `n`.
#[derive(Clone)]
pub struct FgnGenerator {
    n: usize,
    sqrt_eig: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FgnGenerator {
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) || n == 0 {
            return Err(Error::InvalidInput(format!(
                "no fractional Gaussian noise with Hurst exponent {hurst}"
            )));
        }
        let m = 2 * n;
        let mut c: Vec<Complex64> = (0..m)
            .map(|i| Complex64::new(fgn_autocov(i.min(m - i), hurst), 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut c);
        let scale = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let mut sqrt_eig = Vec::with_capacity(m);
        for z in &c {
            if z.re < -1e-9 * scale {
                return Err(Error::InvalidInput(format!(
                    "circulant embedding not positive for Hurst exponent {hurst}"
                )));
            }
            sqrt_eig.push((z.re.max(0.0) / m as f64).sqrt());
        }
        Ok(Self { n, sqrt_eig, fft })
    }

    /// One sample path of length `n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w: Vec<Complex64> = self
            .sqrt_eig
            .iter()
            .map(|s| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re, im) * *s
            })
            .collect();
        self.fft.process(&mut w);
        w[..self.n].iter().map(|z| z.re).collect()
    }
}

/// Long-memory signs: the signs of a fractional Gaussian noise path.
pub fn gen_signs<R: Rng + ?Sized>(gen: &FgnGenerator, rng: &mut R) -> Vec<Sign> {
    gen.sample(rng)
        .into_iter()
        .map(|x| if x >= 0.0 { Sign::Buy } else { Sign::Sell })
        .collect()
}

/// Sign series for every day of `spec`, each seeded from the master seed and day index.
pub fn gen_sign_flow(spec: &FlowSpec) -> Result<Vec<Vec<Sign>>> {
    spec.validate()?;
    let gen = FgnGenerator::new(spec.events_per_day, spec.sign_memory)?;
    Ok((0..spec.days)
        .into_par_iter()
        .map(|d| gen_signs(&gen, &mut day_rng(spec.seed, d)))
        .collect())
}

fn day_rng(seed: u64, day: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(day as u64);
    rng
}

// ---------------------------------------------------------------------------
// Labels and returns
// ---------------------------------------------------------------------------

/// Draws labels with `P(c) = change_prob(imbalance)`, the imbalance being the
/// mean sign over the trailing `window` events including the current one.
pub fn gen_labels<R: Rng + ?Sized>(
    signs: &[Sign],
    change_prob: &ChangeProb,
    window: usize,
    rng: &mut R,
) -> Vec<Label> {
    let mut sum = 0.0;
    signs
        .iter()
        .enumerate()
        .map(|(t, s)| {
            sum += s.value();
            if t >= window {
                sum -= signs[t - window].value();
            }
            let imb = sum / (t + 1).min(window) as f64;
            if rng.random::<f64>() < change_prob.eval(imb) {
                Label::C
            } else {
                Label::N
            }
        })
        .collect()
}

/// Returns from `model` applied to the flow, plus Gaussian noise of standard
/// deviation `noise` on price-changing events.
pub fn gen_returns<R: Rng + ?Sized>(
    signs: &[Sign],
    labels: &[Label],
    model: &CalibratedModel,
    noise: f64,
    target: NoiseTarget,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if signs.len() != labels.len() {
        return Err(Error::ShapeMismatch("signs and labels differ in length".into()));
    }
    if noise > 0.0 && target == NoiseTarget::All {
        return Err(Error::InvalidInput(
            "noise on non-price-changing events breaks the label invariant".into(),
        ));
    }
    let day = DaySeries::new(
        NaiveDate::default(),
        signs
            .iter()
            .zip(labels)
            .map(|(&sign, &label)| TradeEvent {
                timestamp: 0,
                sign,
                label,
                log_mid: 0.0,
                ret: 0.0,
                volume: 0.0,
            })
            .collect(),
    );
    let mut ret = run_model_day(model, &day)?;
    if noise > 0.0 {
        for (r, l) in ret.iter_mut().zip(labels) {
            if *l == Label::C {
                let z: f64 = StandardNormal.sample(rng);
                *r += noise * z;
            }
        }
    }
    Ok(ret)
}

const SESSION_MS: i64 = 23_400_000;

fn gen_day(spec: &FlowSpec, gen: &FgnGenerator, day: usize) -> Result<DaySeries> {
    let mut rng = day_rng(spec.seed, day);
    let signs = gen_signs(gen, &mut rng);
    let labels = gen_labels(&signs, &spec.change_prob, spec.window, &mut rng);
    let ret = gen_returns(
        &signs,
        &labels,
        &spec.model,
        spec.noise,
        spec.noise_target,
        &mut rng,
    )?;
    let volume = LogNormal::new(spec.volume_mu, spec.volume_sigma)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let step = (SESSION_MS / spec.events_per_day as i64).max(1);
    let mut log_mid = spec.initial_price.ln();
    let events = (0..signs.len())
        .map(|t| {
            let e = TradeEvent {
                timestamp: t as i64 * step,
                sign: signs[t],
                label: labels[t],
                log_mid,
                ret: ret[t],
                volume: volume.sample(&mut rng),
            };
            log_mid += ret[t];
            e
        })
        .collect();
    let date = spec.start_date + chrono::Days::new(day as u64);
    Ok(DaySeries::new(date, events))
}

/// Full synthetic dataset. Identical specs give identical data.
pub fn generate(spec: &FlowSpec) -> Result<InstrumentData> {
    spec.validate()?;
    let gen = FgnGenerator::new(spec.events_per_day, spec.sign_memory)?;
    let days: Vec<DaySeries> = (0..spec.days)
        .into_par_iter()
        .map(|d| gen_day(spec, &gen, d))
        .collect::<Result<_>>()?;
    let data = InstrumentData::new(spec.instrument_id.clone(), days)?;
    if !data.labels_consistent() {
        if spec.model.kind.label_consistent() {
            return Err(Error::Undefined(
                "generated returns vanished on a price-changing event".into(),
            ));
        }
        log::warn!(
            "{} returns are nonzero on non-price-changing events; the data is not label-consistent",
            spec.model.kind
        );
    }
    Ok(data)
}

/// Power-law kernel `amplitude * (1 + j)^(-exponent)` over `0..=max_lag`.
pub fn power_law_kernel(amplitude: f64, exponent: f64, max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|j| amplitude * (1.0 + j as f64).powf(-exponent))
        .collect()
}

/// Ground-truth model with power-law kernels; `amp_n` scales the kernel of
/// non-price-changing events (unused for TIM1).
pub fn power_law_model(
    kind: ModelKind,
    max_lag: usize,
    amp_n: f64,
    amp_c: f64,
    exponent: f64,
) -> Result<CalibratedModel> {
    let k_c = power_law_kernel(amp_c, exponent, max_lag);
    let k_n = power_law_kernel(amp_n, exponent, max_lag);
    match kind {
        ModelKind::Tim1 => CalibratedModel::tim1(k_c),
        ModelKind::Tim2 => CalibratedModel::tim2(k_n, k_c),
        ModelKind::Hdim2 | ModelKind::Hdim2Star => {
            let mut k_n = k_n;
            k_n[0] = 0.0;
            let mut m = CalibratedModel::hdim2(k_n, k_c)?;
            m.kind = kind;
            Ok(m)
        }
        ModelKind::Cim2 => CalibratedModel::cim2(amp_c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len() - lag;
        x[..n].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    }

    #[test]
    fn fgn_has_target_covariance() {
        let gen = FgnGenerator::new(4096, 0.8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut acc = [0.0; 3];
        let reps = 200;
        for _ in 0..reps {
            let x = gen.sample(&mut rng);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += autocorr(&x, k) / reps as f64;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            assert!((a - fgn_autocov(k, 0.8)).abs() < 0.02, "lag {k}: {a}");
        }
    }

    #[test]
    fn white_signs_have_no_memory() {
        let gen = FgnGenerator::new(100_000, 0.5).unwrap();
        let s: Vec<f64> = gen_signs(&gen, &mut ChaCha20Rng::seed_from_u64(2))
            .iter()
            .map(|s| s.value())
            .collect();
        // Standard error of a lag-10 autocorrelation is 1/sqrt(T).
        assert!(autocorr(&s, 10).abs() < 3.0 / (s.len() as f64).sqrt());
    }

    #[test]
    fn invalid_hurst_is_rejected() {
        assert!(FgnGenerator::new(10, 1.0).is_err());
        assert!(FgnGenerator::new(10, 0.0).is_err());
        let spec = FlowSpec {
            sign_memory: 1.2,
            ..FlowSpec::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn constant_change_probability() {
        let signs = vec![Sign::Buy; 20_000];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let all_c = gen_labels(&signs, &ChangeProb::Constant { p: 1.0 }, 50, &mut rng);
        assert!(all_c.iter().all(|l| *l == Label::C));
        let p = 0.3;
        let labels = gen_labels(&signs, &ChangeProb::Constant { p }, 50, &mut rng);
        let frac = labels.iter().filter(|l| **l == Label::C).count() as f64 / 20_000.0;
        assert!((frac - p).abs() < 3.0 * (p * (1.0 - p) / 20_000.0).sqrt());
    }

    #[test]
    fn pinning_lowers_change_probability_at_high_imbalance() {
        let spec = FlowSpec {
            sign_memory: 0.8,
            events_per_day: 50_000,
            days: 1,
            ..FlowSpec::default()
        };
        let data = generate(&spec).unwrap();
        let ev = &data.days[0].events;
        let (mut hi, mut lo) = ((0usize, 0usize), (0usize, 0usize));
        for t in 50..ev.len() {
            let imb: f64 = ev[t - 49..=t].iter().map(|e| e.sign.value()).sum::<f64>() / 50.0;
            let slot = if imb.abs() > 0.6 { &mut hi } else if imb.abs() < 0.2 { &mut lo } else { continue };
            slot.1 += 1;
            if ev[t].label == Label::C {
                slot.0 += 1;
            }
        }
        let p_hi = hi.0 as f64 / hi.1 as f64;
        let p_lo = lo.0 as f64 / lo.1 as f64;
        assert!(p_hi < p_lo, "{p_hi} vs {p_lo}");
    }

    #[test]
    fn constant_impact_returns_and_invariants() {
        let spec = FlowSpec {
            events_per_day: 2_000,
            days: 3,
            model: CalibratedModel::cim2(0.01).unwrap(),
            ..FlowSpec::default()
        };
        let data = generate(&spec).unwrap();
        data.validate(true).unwrap();
        for e in data.days.iter().flat_map(|d| &d.events) {
            match e.label {
                Label::C => assert_eq!(e.ret, 0.01 * e.sign.value()),
                Label::N => assert_eq!(e.ret, 0.0),
            }
        }
    }

    #[test]
    fn history_dependent_data_is_label_consistent() {
        let spec = FlowSpec {
            events_per_day: 3_000,
            days: 2,
            sign_memory: 0.7,
            model: power_law_model(ModelKind::Hdim2, 20, 0.002, 0.01, 0.5).unwrap(),
            noise: 0.001,
            ..FlowSpec::default()
        };
        generate(&spec).unwrap().validate(true).unwrap();
    }

    #[test]
    fn noise_adds_variance_on_price_changing_events() {
        let spec = FlowSpec {
            events_per_day: 100_000,
            days: 1,
            change_prob: ChangeProb::Constant { p: 0.5 },
            model: CalibratedModel::cim2(0.01).unwrap(),
            noise: 0.02,
            ..FlowSpec::default()
        };
        let data = generate(&spec).unwrap();
        let r: Vec<f64> = data.days[0]
            .events
            .iter()
            .filter(|e| e.label == Label::C)
            .map(|e| e.ret)
            .collect();
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let want = 0.01f64.powi(2) + 0.02f64.powi(2);
        // Relative standard error of a sample variance is about sqrt(2 / n).
        assert!((var / want - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        let bad = FlowSpec {
            noise_target: NoiseTarget::All,
            ..spec
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = FlowSpec {
            events_per_day: 1_000,
            days: 3,
            sign_memory: 0.7,
            seed: 42,
            ..FlowSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = FlowSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
        assert_eq!(gen_sign_flow(&spec).unwrap()[1], generate(&spec).unwrap().days[1].events.iter().map(|e| e.sign).collect::<Vec<_>>());
    }

    #[test]
    fn tim_data_is_flagged_not_rejected() {
        let spec = FlowSpec {
            events_per_day: 1_000,
            days: 1,
            model: power_law_model(ModelKind::Tim1, 10, 0.0, 0.01, 0.5).unwrap(),
            ..FlowSpec::default()
        };
        let data = generate(&spec).unwrap();
        assert!(!data.labels_consistent());
        data.validate(false).unwrap();
    }
}

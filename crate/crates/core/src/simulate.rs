//! Calibrated models run as dynamical systems on an order flow.
//!
//! Convolutions restart at every day boundary: no sign from a previous day
//! enters a prediction.

use std::io::Write;

use rayon::prelude::*;

use crate::calibration::{CalibratedModel, ModelKind};
use crate::error::{Error, Result};
use crate::events::{DaySeries, InstrumentData, Label};
use crate::spectral::{CrossCorr2, SpectralPlan};

/// Predicted returns aligned to the days of the source flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSeries {
    pub kind: ModelKind,
    pub days: Vec<Vec<f64>>,
}

/// Kernels indexed by the label of the lagged event, plus whether the
/// prediction is gated on the current event changing the price.
struct Propagator<'a> {
    by_label: [&'a [f64]; 2],
    gate_on_change: bool,
}

fn propagator(model: &CalibratedModel) -> Result<Propagator<'_>> {
    Ok(match model.kind {
        ModelKind::Tim1 => {
            let g = model.kernel("g")?;
            Propagator {
                by_label: [g, g],
                gate_on_change: false,
            }
        }
        ModelKind::Tim2 => Propagator {
            by_label: [model.kernel("g_n")?, model.kernel("g_c")?],
            gate_on_change: false,
        },
        ModelKind::Hdim2 | ModelKind::Hdim2Star => Propagator {
            by_label: [model.kernel("kappa_nc")?, model.kernel("kappa_cc")?],
            gate_on_change: true,
        },
        ModelKind::Cim2 => {
            return Err(Error::UnsupportedModel("cim2 has no propagator".into()));
        }
    })
}

/// Predicted returns for one day.
pub fn run_model_day(model: &CalibratedModel, day: &DaySeries) -> Result<Vec<f64>> {
    if model.kind == ModelKind::Cim2 {
        let delta = model.delta_c()?;
        return Ok(day
            .events
            .iter()
            .map(|e| match e.label {
                Label::C => delta * e.sign.value(),
                Label::N => 0.0,
            })
            .collect());
    }
    let p = propagator(model)?;
    let masked = [day.masked_signs(Label::N), day.masked_signs(Label::C)];
    let labels = day.labels();
    let l_max = model.max_lag;
    let mut out = vec![0.0; day.len()];
    for (t, slot) in out.iter_mut().enumerate() {
        if p.gate_on_change && labels[t] == Label::N {
            continue;
        }
        let depth = t.min(l_max);
        let mut acc = 0.0;
        for (b, k) in masked.iter().zip(p.by_label) {
            let past = &b[t - depth..=t];
            for (j, &kv) in k[..=depth].iter().enumerate() {
                acc += kv * past[depth - j];
            }
        }
        *slot = acc;
    }
    Ok(out)
}

/// Predicted returns for every day, computed in parallel.
pub fn run_model(model: &CalibratedModel, data: &InstrumentData) -> Result<PredictedSeries> {
    model.validate()?;
    let days = data
        .days
        .par_iter()
        .map(|d| run_model_day(model, d))
        .collect::<Result<_>>()?;
    Ok(PredictedSeries {
        kind: model.kind,
        days,
    })
}

/// Prediction error `nu(t) = r(t) - r_hat(t)` per day.
pub fn prediction_error(data: &InstrumentData, pred: &PredictedSeries) -> Result<Vec<Vec<f64>>> {
    if data.days.len() != pred.days.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} days of data, {} of predictions",
            data.days.len(),
            pred.days.len()
        )));
    }
    data.days
        .iter()
        .zip(&pred.days)
        .map(|(d, p)| {
            if d.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "day {}: {} events, {} predictions",
                    d.date,
                    d.len(),
                    p.len()
                )));
            }
            Ok(d.events.iter().zip(p).map(|(e, r)| e.ret - r).collect())
        })
        .collect()
}

/// Mean over days with the standard error of that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LagProfile {
    pub max_lag: usize,
    /// Values for lags `-L..=L`.
    pub mean: Vec<f64>,
    /// Day-to-day standard error; NaN with a single day.
    pub stderr: Vec<f64>,
}

impl LagProfile {
    pub fn at(&self, lag: isize) -> f64 {
        self.mean[(lag + self.max_lag as isize) as usize]
    }

    pub fn stderr_at(&self, lag: isize) -> f64 {
        self.stderr[(lag + self.max_lag as isize) as usize]
    }

    /// `mean / stderr` per lag.
    pub fn z_scores(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.stderr).map(|(m, s)| m / s).collect()
    }

    pub(crate) fn from_days(per_day: &[&CrossCorr2]) -> Result<Self> {
        let first = per_day
            .first()
            .ok_or_else(|| Error::Empty("no days".into()))?;
        let n = per_day.len() as f64;
        let width = first.values().len();
        let mut mean = vec![0.0; width];
        for c in per_day {
            for (m, v) in mean.iter_mut().zip(c.values()) {
                *m += v / n;
            }
        }
        let stderr = (0..width)
            .map(|i| {
                if per_day.len() < 2 {
                    return f64::NAN;
                }
                let ss: f64 = per_day.iter().map(|c| (c.values()[i] - mean[i]).powi(2)).sum();
                (ss / (n - 1.0) / n).sqrt()
            })
            .collect();
        Ok(Self {
            max_lag: first.max_lag(),
            mean,
            stderr,
        })
    }
}

/// Calibration bias `<nu(t) b_pi(t - l)>` with `b_pi = 1[pi = label] eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    /// Indexed by the lagged label.
    pub by_lagged: [LagProfile; 2],
    /// `<1[pi(t) = current] nu(t) b_pi(t - l)>`, indexed `[lagged][current]`;
    /// summing over `current` gives `by_lagged`.
    pub by_current: [[LagProfile; 2]; 2],
}

impl BiasEstimate {
    /// Rows `lag, lagged_label, current_label, value, stderr`; `all` marks a
    /// label summed over.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        use crate::diagnostics::{fmt, write_tidy};
        let l = self.by_lagged[0].max_lag as isize;
        let mut rows = Vec::new();
        for lag in -l..=l {
            for a in Label::ALL {
                let p = &self.by_lagged[a.index()];
                rows.push(vec![lag.to_string(), a.to_string(), "all".into(), fmt(p.at(lag)), fmt(p.stderr_at(lag))]);
                for c in Label::ALL {
                    let p = &self.by_current[a.index()][c.index()];
                    rows.push(vec![lag.to_string(), a.to_string(), c.to_string(), fmt(p.at(lag)), fmt(p.stderr_at(lag))]);
                }
            }
        }
        write_tidy(writer, &["lag", "lagged_label", "current_label", "value", "stderr"], rows)
    }

    /// Largest `|mean / stderr|` of `profile` over `lo..=hi`, ignoring `0 / 0`.
    pub fn max_abs_z(profile: &LagProfile, lo: isize, hi: isize) -> f64 {
        (lo..=hi)
            .map(|l| (profile.at(l) / profile.stderr_at(l)).abs())
            .filter(|z| !z.is_nan())
            .fold(0.0, f64::max)
    }
}

/// Bias of the prediction errors `nu` against lagged labelled signs of `flow`.
pub fn calibration_bias(
    nu: &[Vec<f64>],
    flow: &InstrumentData,
    max_lag: usize,
    segment_len: usize,
) -> Result<BiasEstimate> {
    if nu.len() != flow.days.len() || flow.days.iter().zip(nu).any(|(d, v)| d.len() != v.len()) {
        return Err(Error::ShapeMismatch("errors not aligned with days".into()));
    }
    // Series: b_n, b_c, nu, 1[n] nu, 1[c] nu.
    let plan = SpectralPlan::new(max_lag, segment_len)
        .with_pair(0, 2)
        .with_pair(1, 2)
        .with_pair(0, 3)
        .with_pair(0, 4)
        .with_pair(1, 3)
        .with_pair(1, 4);
    let per_day: Vec<Vec<CrossCorr2>> = flow
        .days
        .par_iter()
        .zip(nu)
        .map(|(d, v)| {
            let b_n = d.masked_signs(Label::N);
            let b_c = d.masked_signs(Label::C);
            let is_c = d.indicator(Label::C);
            let nu_n: Vec<f64> = v.iter().zip(&is_c).map(|(x, c)| x * (1.0 - c)).collect();
            let nu_c: Vec<f64> = v.iter().zip(&is_c).map(|(x, c)| x * c).collect();
            Ok(plan.estimate_day(&[&b_n, &b_c, v, &nu_n, &nu_c])?.pairs)
        })
        .collect::<Result<_>>()?;
    let profile = |k: usize| -> Result<LagProfile> {
        let refs: Vec<&CrossCorr2> = per_day.iter().map(|p| &p[k]).collect();
        LagProfile::from_days(&refs)
    };
    Ok(BiasEstimate {
        by_lagged: [profile(0)?, profile(1)?],
        by_current: [[profile(2)?, profile(3)?], [profile(4)?, profile(5)?]],
    })
}

/// Writes the canonical event columns plus one `r_hat_<kind>` column per prediction.
pub fn write_predictions_csv<W: Write>(
    data: &InstrumentData,
    preds: &[PredictedSeries],
    writer: W,
) -> Result<()> {
    for p in preds {
        if p.days.len() != data.days.len()
            || p.days.iter().zip(&data.days).any(|(a, d)| a.len() != d.len())
        {
            return Err(Error::ShapeMismatch(format!("{} predictions not aligned", p.kind)));
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["date", "t", "sign", "label", "log_mid", "ret", "volume"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(preds.iter().map(|p| format!("r_hat_{}", p.kind)));
    wtr.write_record(&header)?;
    for (di, day) in data.days.iter().enumerate() {
        for (t, e) in day.events.iter().enumerate() {
            let mut row = vec![
                day.date.to_string(),
                e.timestamp.to_string(),
                e.sign.as_int().to_string(),
                e.label.to_string(),
                e.log_mid.to_string(),
                e.ret.to_string(),
                e.volume.to_string(),
            ];
            row.extend(preds.iter().map(|p| p.days[di][t].to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

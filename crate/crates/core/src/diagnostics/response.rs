//! Price responses `R(l) = <(m(t + l) - m(t)) eps(t)>`, measured or implied
//! by a calibrated model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{fmt, write_tidy};
use crate::calibration::{CalibratedModel, CorrelationSample, Correlations, ModelKind, ResponseSet};
use crate::error::{Error, Result};
use crate::events::{InstrumentData, Label};
use crate::spectral::CrossCorr2;

/// Responses over `lags`, split by the label of the initiating (lagged) event
/// and by the label of the responding (current) event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurves {
    pub lags: Vec<isize>,
    pub total: Vec<f64>,
    /// `R_pi`, indexed by [`Label::index`].
    pub by_lagged: [Vec<f64>; 2],
    /// `R^(pi')`: only returns of events labelled `pi'` contribute.
    pub by_current: [Vec<f64>; 2],
}

/// `R(l) = sum_{k<l} S(k)` for `l > 0`, `-sum_{l<=k<0} S(k)` for `l < 0`, `R(0) = 0`.
/// `s[i]` is `S(lo + i)`; `lo <= 0 <= lo + s.len() - 1`.
fn integrate(lo: isize, s: &[f64]) -> Vec<f64> {
    let hi = lo + s.len() as isize - 1;
    let at = |k: isize| s[(k - lo) as usize];
    let mut out = vec![0.0; s.len()];
    let mut acc = 0.0;
    for l in 1..=hi {
        acc += at(l - 1);
        out[(l - lo) as usize] = acc;
    }
    acc = 0.0;
    for l in (lo..0).rev() {
        acc -= at(l);
        out[(l - lo) as usize] = acc;
    }
    out
}

impl ResponseCurves {
    /// Integrates label-pair responses `s[lagged][current]`, each sampled at lags `lo..`.
    fn from_pairs(lo: isize, s: &[[Vec<f64>; 2]; 2]) -> Self {
        let len = s[0][0].len();
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let s_lagged = [add(&s[0][0], &s[0][1]), add(&s[1][0], &s[1][1])];
        let s_current = [add(&s[0][0], &s[1][0]), add(&s[0][1], &s[1][1])];
        let s_total = add(&s_lagged[0], &s_lagged[1]);
        Self {
            lags: (lo..lo + len as isize).collect(),
            total: integrate(lo, &s_total),
            by_lagged: [integrate(lo, &s_lagged[0]), integrate(lo, &s_lagged[1])],
            by_current: [integrate(lo, &s_current[0]), integrate(lo, &s_current[1])],
        }
    }

    pub fn at(&self, lag: isize) -> Option<f64> {
        let i = lag - self.lags.first()?;
        self.total.get(usize::try_from(i).ok()?).copied()
    }

    /// Largest `|R - sum_pi R_pi|` over all lags.
    pub fn identity_residual(&self) -> f64 {
        (0..self.total.len())
            .map(|i| (self.total[i] - self.by_lagged[0][i] - self.by_lagged[1][i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut rows = Vec::new();
        for (i, l) in self.lags.iter().enumerate() {
            rows.push(vec![l.to_string(), "all".into(), "all".into(), fmt(self.total[i]), String::new()]);
            for p in Label::ALL {
                rows.push(vec![
                    l.to_string(),
                    p.to_string(),
                    "all".into(),
                    fmt(self.by_lagged[p.index()][i]),
                    String::new(),
                ]);
                rows.push(vec![
                    l.to_string(),
                    "all".into(),
                    p.to_string(),
                    fmt(self.by_current[p.index()][i]),
                    String::new(),
                ]);
            }
        }
        write_tidy(writer, &["lag", "lagged_label", "current_label", "value", "stderr"], rows)
    }
}

/// Response curves from measured label-pair responses over `[-L, L]`.
pub fn responses_from_set(set: &ResponseSet) -> ResponseCurves {
    let vals = |c: &CrossCorr2| c.values().to_vec();
    let s = [
        [vals(&set.by_labels[0][0]), vals(&set.by_labels[0][1])],
        [vals(&set.by_labels[1][0]), vals(&set.by_labels[1][1])],
    ];
    ResponseCurves::from_pairs(-(set.max_lag() as isize), &s)
}

/// Measured response of `returns` (the data's own when `None`) to the flow of `data`.
pub fn response_function(
    data: &InstrumentData,
    returns: Option<&[Vec<f64>]>,
    max_lag: usize,
    segment_len: usize,
) -> Result<ResponseCurves> {
    let sample = match returns {
        Some(r) => CorrelationSample::estimate_with(data, r, max_lag, segment_len, false, 1)?,
        None => CorrelationSample::estimate(data, max_lag, segment_len, false, 1)?,
    };
    Ok(responses_from_set(&sample.correlations()?.responses))
}

/// Response implied by a model's kernels and a set of flow correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormResponse {
    pub kind: ModelKind,
    /// Implied `S_{pi,pi'}(l)` over `curves.lags`, `[lagged][current]`.
    pub s: [[Vec<f64>; 2]; 2],
    pub curves: ResponseCurves,
}

/// `S_{pi,pi'}(l) = sum_{pi''} sum_j k_{pi''}(j) X_{pi pi'' pi'}(l, j)` with the
/// correlation `X` each model's own linear system uses. Valid over
/// `l in [-(Lc - L), Lc]` where `Lc` is the correlations' lag range and `L` the
/// model's.
pub fn closed_form_response(model: &CalibratedModel, corr: &Correlations) -> Result<ClosedFormResponse> {
    model.validate()?;
    let l_model = model.max_lag as isize;
    let lc = corr.max_lag as isize;
    if l_model > lc {
        return Err(Error::ShapeMismatch(format!(
            "model lag {l_model} exceeds correlation lag {lc}"
        )));
    }
    let lo = -(lc - l_model);
    let lags: Vec<isize> = (lo..=lc).collect();
    let zeros = || vec![0.0; lags.len()];
    let mut s = [[zeros(), zeros()], [zeros(), zeros()]];
    // Ungated propagators respond on every current label; two-point
    // correlations only resolve the sum over it, stored under `c` and
    // reported as NaN in `by_current`.
    let two_point = |kernels: [Vec<f64>; 2], s: &mut [[Vec<f64>; 2]; 2], current: Option<Label>| {
        for a in Label::ALL {
            for (i, &l) in lags.iter().enumerate() {
                let mut acc = 0.0;
                for b in Label::ALL {
                    for (j, &k) in kernels[b.index()].iter().enumerate() {
                        acc += k * corr.labeled_signs[a.index()][b.index()].at(l - j as isize);
                    }
                }
                s[a.index()][current.unwrap_or(Label::C).index()][i] = acc;
            }
        }
    };
    match model.kind {
        ModelKind::Tim1 => {
            let g = model.kernel("g")?.to_vec();
            two_point([g.clone(), g], &mut s, None);
        }
        ModelKind::Tim2 => {
            two_point([model.kernel("g_n")?.to_vec(), model.kernel("g_c")?.to_vec()], &mut s, None);
        }
        ModelKind::Cim2 => {
            two_point([vec![0.0], vec![model.delta_c()?]], &mut s, Some(Label::C));
        }
        ModelKind::Hdim2Star => {
            let p_c = corr.p_c;
            let k = [model.kernel("kappa_nc")?.to_vec(), model.kernel("kappa_cc")?.to_vec()];
            two_point(k, &mut s, Some(Label::C));
            for row in s.iter_mut() {
                row[Label::C.index()].iter_mut().for_each(|v| *v *= p_c);
            }
        }
        ModelKind::Hdim2 => {
            let k = [model.kernel("kappa_nc")?.to_vec(), model.kernel("kappa_cc")?.to_vec()];
            for a in Label::ALL {
                for (i, &l) in lags.iter().enumerate() {
                    let mut acc = 0.0;
                    for b in Label::ALL {
                        for (j, &kv) in k[b.index()].iter().enumerate() {
                            if kv == 0.0 {
                                continue;
                            }
                            acc += kv
                                * corr.hdim_entry(a, b, l, j as isize).ok_or_else(|| {
                                    Error::ShapeMismatch(format!(
                                        "three-point correlations missing at ({l}, {j})"
                                    ))
                                })?;
                        }
                    }
                    s[a.index()][Label::C.index()][i] = acc;
                }
            }
        }
    }
    let mut curves = ResponseCurves::from_pairs(lo, &s);
    if matches!(model.kind, ModelKind::Tim1 | ModelKind::Tim2) {
        curves.by_current = [vec![f64::NAN; lags.len()], vec![f64::NAN; lags.len()]];
    }
    Ok(ClosedFormResponse {
        kind: model.kind,
        s,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{solve_model, CalibrationConfig};
    use crate::synth::{generate, FlowSpec};

    fn cim_data(days: usize, seed: u64) -> InstrumentData {
        let spec = FlowSpec {
            events_per_day: 3_000,
            days,
            sign_memory: 0.5,
            seed,
            ..FlowSpec::default()
        };
        generate(&spec).unwrap()
    }

    #[test]
    fn integration_conventions() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(integrate(-2, &s), vec![-3.0, -2.0, 0.0, 3.0, 7.0]);
    }

    #[test]
    fn zero_returns_give_zero_response() {
        let data = cim_data(2, 1);
        let zeros: Vec<Vec<f64>> = data.days.iter().map(|d| vec![0.0; d.len()]).collect();
        let r = response_function(&data, Some(&zeros), 20, 40).unwrap();
        assert!(r.total.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_holds_and_cim_response_is_flat() {
        let data = cim_data(4, 2);
        let delta = crate::calibration::estimate_cim2(&data).unwrap().delta_c().unwrap();
        let p_c = data.days.iter().flat_map(|d| &d.events).filter(|e| e.label == Label::C).count()
            as f64
            / data.n_events() as f64;
        let r = response_function(&data, None, 20, 40).unwrap();
        assert!(r.identity_residual() < 1e-14);
        for (i, &l) in r.lags.iter().enumerate() {
            if l <= 0 {
                assert!(r.total[i].abs() < 5.0 * delta * 0.02, "lag {l}: {}", r.total[i]);
            } else {
                assert!((r.total[i] / (delta * p_c) - 1.0).abs() < 0.1, "lag {l}: {}", r.total[i]);
            }
        }
    }

    #[test]
    fn zero_kernels_give_zero_response() {
        let data = cim_data(2, 3);
        let corr = CorrelationSample::estimate(&data, 20, 40, true, 1).unwrap().correlations().unwrap();
        for m in [
            CalibratedModel::tim1(vec![0.0; 6]).unwrap(),
            CalibratedModel::tim2(vec![0.0; 6], vec![0.0; 6]).unwrap(),
            CalibratedModel::hdim2(vec![0.0; 6], vec![0.0; 6]).unwrap(),
        ] {
            let c = closed_form_response(&m, &corr).unwrap();
            assert!(c.curves.total.iter().all(|v| *v == 0.0));
            assert_eq!(c.curves.lags.first(), Some(&-15));
        }
        let long = CalibratedModel::tim1(vec![0.0; 30]).unwrap();
        assert!(closed_form_response(&long, &corr).is_err());
    }

    #[test]
    fn in_sample_closed_form_matches_measured_response() {
        let data = cim_data(4, 4);
        let cfg = CalibrationConfig {
            smooth: Some(false),
            ..CalibrationConfig::default()
        };
        let lc = 20;
        let sample = CorrelationSample::estimate(&data, lc, 40, true, 1).unwrap();
        let corr = sample.correlations().unwrap();
        let measured = responses_from_set(&corr.responses);
        for kind in [ModelKind::Tim1, ModelKind::Tim2, ModelKind::Hdim2, ModelKind::Hdim2Star] {
            let model = solve_model(kind, &corr, lc, &cfg).unwrap();
            let closed = closed_form_response(&model, &corr).unwrap();
            let scale = measured.total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, &l) in closed.curves.lags.iter().enumerate() {
                if l >= 0 {
                    let m = measured.at(l).unwrap();
                    assert!(
                        (closed.curves.total[i] - m).abs() < 1e-8 * scale,
                        "{kind} lag {l}: {} vs {m}",
                        closed.curves.total[i]
                    );
                }
            }
        }
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every check runs on synthetic data with fixed seeds.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proplab_core::calibration::{
    calibrate, solve_model, CalibrationConfig, CorrelationSample, ModelKind,
};
use proplab_core::diagnostics::{
    aggregate_impact, closed_form_response, curvature, curvature_of, hurst_exponent,
    impact_inputs, response_function, responses_from_set, signature_plot, ImpactVariable,
    DEFAULT_BINS,
};
use proplab_core::events::{InstrumentData, Label};
use proplab_core::simulate::{calibration_bias, prediction_error, run_model, BiasEstimate};
use proplab_core::spectral::{xcorr2, xcorr3, SpectralPlan};
use proplab_core::synth::{generate, power_law_model, ChangeProb, FlowSpec};
use proplab_core::CalibratedModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn flow(events_per_day: usize, days: usize, sign_memory: f64, seed: u64) -> FlowSpec {
    FlowSpec {
        events_per_day,
        days,
        sign_memory,
        seed,
        ..FlowSpec::default()
    }
}

fn pm1(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Two-sided standard normal quantile `z` with `P(|Z| > z) = p`.
fn normal_two_sided(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erfc(mid / std::f64::consts::SQRT_2) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// Direct-sum oracles, independent of the spectral code.

fn direct2(f: &[f64], g: &[f64], l: isize) -> (f64, usize) {
    let n = f.len() as isize;
    let (mut sum, mut count) = (0.0, 0);
    for s in 0..n {
        let t = s + l;
        if (0..n).contains(&t) {
            sum += f[s as usize] * g[t as usize];
            count += 1;
        }
    }
    (sum, count)
}

fn direct3(f: &[f64], g: &[f64], h: &[f64], l: isize, j: isize) -> (f64, usize) {
    let n = f.len() as isize;
    let (mut sum, mut count) = (0.0, 0);
    for t in 0..n {
        if (0..n).contains(&(t + l)) && (0..n).contains(&(t + j)) {
            sum += f[t as usize] * g[(t + l) as usize] * h[(t + j) as usize];
            count += 1;
        }
    }
    (sum, count)
}

fn rel_err(est: f64, oracle: f64, count: usize) -> f64 {
    (est - oracle).abs() / oracle.abs().max(1.0 / count as f64)
}

fn estimator_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut masked_ok = true;
    for rep in 0..100 {
        let t = if rep % 2 == 0 { 32 } else { 64 };
        let max_lag = t - 1;
        let (f, g, h) = (pm1(&mut rng, t), pm1(&mut rng, t), pm1(&mut rng, t));
        let c2 = xcorr2(&f, &g, max_lag).unwrap();
        let c3 = xcorr3(&f, &g, &h, max_lag).unwrap();
        let l = max_lag as isize;
        for a in -l..=l {
            let (s, n) = direct2(&f, &g, a);
            worst = worst.max(rel_err(c2.at(a), s / n as f64, n));
            checked += 1;
            for b in -l..=l {
                match c3.get(a, b) {
                    Some(v) => {
                        let (s, n) = direct3(&f, &g, &h, a, b);
                        worst = worst.max(rel_err(v, s / n as f64, n));
                        checked += 1;
                    }
                    None => masked_ok &= (a - b).abs() > l,
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 5.0 && masked_ok,
        format!("{checked} lags, worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn blind_spot_and_padding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let max_lag = 16usize;
    let seg = 2 * max_lag;
    let lens = [17usize, 19, 23, 26, 29, 32, 18, 31];
    let days: Vec<Vec<Vec<f64>>> = lens
        .iter()
        .map(|&n| (0..3).map(|_| pm1(&mut rng, n)).collect())
        .collect();
    let plan = SpectralPlan::new(max_lag, seg).with_triple(0, 1, 2);
    let est = plan.estimate_days(&days, 1).unwrap().mean().unwrap().triples.remove(0);
    let l = max_lag as isize;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut mask_ok = true;
    for a in -l..=l {
        for b in -l..=l {
            let Some(v) = est.get(a, b) else {
                mask_ok &= (a - b).abs() > l;
                continue;
            };
            // Equal-weight day average of per-day unbiased means.
            let oracle = days
                .iter()
                .map(|d| {
                    let (s, n) = direct3(&d[0], &d[1], &d[2], a, b);
                    s / n as f64
                })
                .sum::<f64>()
                / days.len() as f64;
            worst = worst.max((v - oracle).abs() / oracle.abs().max(1e-3));
            checked += 1;
        }
    }
    outcome(
        worst <= 1e-10 && mask_ok,
        format!("{checked} (l, j) entries over {} days of 17..32 events, worst relative error {worst:.2e}", lens.len()),
    )
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for kind in [ModelKind::Tim1, ModelKind::Tim2, ModelKind::Hdim2] {
        let truth = power_law_model(kind, 64, 2e-5, 5e-5, 0.5).unwrap();
        let spec = FlowSpec {
            model: truth.clone(),
            ..flow(50_000, 20, 0.6, 30)
        };
        let data = generate(&spec).unwrap();
        let cfg = CalibrationConfig {
            max_lag: Some(64),
            ..CalibrationConfig::default()
        };
        let fit = calibrate(&data, &[kind], &cfg).unwrap().remove(0);
        let mut worst = 0.0f64;
        for (name, k) in &truth.kernels {
            let got = fit.kernel(name).unwrap();
            for j in 0..=32 {
                if k[j] == 0.0 {
                    pass &= got[j] == 0.0;
                } else {
                    worst = worst.max((got[j] / k[j] - 1.0).abs());
                }
            }
        }
        pass &= worst <= 0.05;
        details.push(format!("{kind} {:.2}%", 100.0 * worst));
        if kind == ModelKind::Hdim2 {
            let k0 = fit.kernel("kappa_nc").unwrap()[0];
            pass &= k0 == 0.0;
            details.push(format!("kappa_nc(0) = {k0}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    outcome(pass, format!("worst relative error at lags <= 32: {}; {secs:.1} s", details.join(", ")))
}

fn cim2_limit() -> Outcome {
    let delta = 5e-5;
    let max_lag = 20;
    let spec = FlowSpec {
        model: CalibratedModel::cim2(delta).unwrap(),
        noise: 5e-5,
        ..flow(50_000, 20, 0.7, 40)
    };
    let data = generate(&spec).unwrap();
    let cfg = CalibrationConfig {
        max_lag: Some(max_lag),
        jackknife_groups: 10,
        ..CalibrationConfig::default()
    };
    let fit = calibrate(&data, &[ModelKind::Hdim2], &cfg).unwrap().remove(0);
    let cc = fit.kernel("kappa_cc").unwrap();
    let nc = fit.kernel("kappa_nc").unwrap();
    let (se_cc, se_nc) = (&fit.meta.stderr["kappa_cc"], &fit.meta.stderr["kappa_nc"]);
    let z0 = (cc[0] - delta) / se_cc[0];
    let mut zs: Vec<f64> = (1..=max_lag).map(|j| cc[j] / se_cc[j]).collect();
    zs.extend((1..=max_lag).map(|j| nc[j] / se_nc[j]));
    let bound = normal_two_sided(0.0027 / zs.len() as f64);
    let zmax = zs.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    outcome(
        z0.abs() <= 3.0 && zmax <= bound && zs.iter().all(|z| z.is_finite()),
        format!(
            "kappa_cc(0) = {:.4e} vs {delta:.1e} (z = {z0:.2}); other {} entries max |z| = {zmax:.2} <= {bound:.2} (family-wise 3 sigma)",
            cc[0],
            zs.len()
        ),
    )
}

fn bias_diagnostic() -> Outcome {
    let max_lag = 20usize;
    let spec = FlowSpec {
        model: power_law_model(ModelKind::Hdim2, max_lag, 2e-5, 5e-5, 0.5).unwrap(),
        noise: 5e-5,
        ..flow(50_000, 20, 0.7, 50)
    };
    let data = generate(&spec).unwrap();
    let cfg = CalibrationConfig {
        max_lag: Some(max_lag),
        ..CalibrationConfig::default()
    };
    let fits = calibrate(&data, &[ModelKind::Hdim2, ModelKind::Tim2], &cfg).unwrap();
    let bias = |m: &CalibratedModel| {
        let nu = prediction_error(&data, &run_model(m, &data).unwrap()).unwrap();
        calibration_bias(&nu, &data, max_lag, 2 * max_lag).unwrap()
    };
    let (hd, tim) = (bias(&fits[0]), bias(&fits[1]));
    let l = max_lag as isize;
    let hd_z = Label::ALL
        .iter()
        .map(|a| BiasEstimate::max_abs_z(&hd.by_lagged[a.index()], 0, l))
        .fold(0.0f64, f64::max);
    let tim_z = Label::ALL
        .iter()
        .map(|a| BiasEstimate::max_abs_z(&tim.by_current[a.index()][Label::N.index()], 0, 10))
        .fold(0.0f64, f64::max);
    let tim_lagged = Label::ALL
        .iter()
        .map(|a| BiasEstimate::max_abs_z(&tim.by_lagged[a.index()], 0, l))
        .fold(0.0f64, f64::max);
    outcome(
        hd_z <= 3.0 && tim_z > 5.0,
        format!(
            "HDIM2 max |z| over lags 0..{max_lag} = {hd_z:.2}; TIM2 on n events max |z| over lags 0..10 = {tim_z:.1} (label-summed TIM2 bias max |z| = {tim_lagged:.2})"
        ),
    )
}

fn curvature_fixtures() -> Outcome {
    let xs: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
    let chi = |f: &dyn Fn(f64) -> f64| {
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        curvature_of(&xs, &ys, 1.0).unwrap()
    };
    let line = chi(&|x| x);
    let sine = chi(&|x| (std::f64::consts::PI * x).sin());
    let tent = chi(&|x| x.signum() * (1.0 - (2.0 * x.abs() - 1.0).abs()));
    outcome(
        line.abs() <= 0.01 && (sine + 2.0 / 3.0).abs() <= 0.02 && (tent + 2.0 / 3.0).abs() <= 0.02,
        format!("line {line:.4}, sine {sine:.4}, tent {tent:.4}"),
    )
}

fn sign_impact_curvature(change_prob: ChangeProb) -> f64 {
    let spec = FlowSpec {
        change_prob,
        ..flow(50_000, 20, 0.9, 70)
    };
    let data = generate(&spec).unwrap();
    let x = impact_inputs(&data, ImpactVariable::Sign).unwrap();
    let r: Vec<Vec<f64>> = data.days.iter().map(|d| d.returns()).collect();
    let c = aggregate_impact(&r, &x, 50, DEFAULT_BINS, ImpactVariable::Sign).unwrap();
    curvature(&c, None).unwrap()
}

fn sinusoidal_impact() -> Outcome {
    let pinned = sign_impact_curvature(ChangeProb::default());
    let constant = sign_impact_curvature(ChangeProb::Constant { p: 0.4 });
    outcome(
        pinned <= -0.2 && constant.abs() <= 0.05,
        format!("N = 50, sign memory 0.9: pinning chi = {pinned:.3}, constant chi = {constant:.3}"),
    )
}

fn cumulative(r: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(r.iter().map(|v| {
            acc += v;
            acc
        }))
        .collect()
}

fn diffusivity() -> Outcome {
    // i.i.d. returns: white signs, constant change probability, CIM2.
    let delta = 5e-5;
    let p = 0.4;
    let iid = generate(&FlowSpec {
        change_prob: ChangeProb::Constant { p },
        ..flow(50_000, 20, 0.5, 80)
    })
    .unwrap();
    let paths: Vec<Vec<f64>> = iid.days.iter().map(|d| d.mid_path()).collect();
    let sp = signature_plot(&paths, 500).unwrap();
    let var = delta * delta * p;
    let flat_z = (0..sp.d.len())
        .map(|i| ((sp.d[i] - var) / sp.stderr[i]).abs())
        .fold(0.0f64, f64::max);

    // CIM2 run on long-memory signs.
    let memory = generate(&FlowSpec {
        change_prob: ChangeProb::Constant { p },
        ..flow(50_000, 20, 0.7, 81)
    })
    .unwrap();
    let cim = calibrate(&memory, &[ModelKind::Cim2], &CalibrationConfig::default())
        .unwrap()
        .remove(0);
    let pred = run_model(&cim, &memory).unwrap();
    let sim: Vec<Vec<f64>> = pred.days.iter().map(|r| cumulative(r)).collect();
    let sup = signature_plot(&sim, 500).unwrap();
    let increasing = (10..500).all(|l| sup.d[l] > sup.d[l - 1]);

    let walk: Vec<Vec<f64>> = generate(&flow(100_000, 4, 0.5, 82))
        .unwrap()
        .days
        .iter()
        .map(|d| cumulative(&d.signs()))
        .collect();
    let h = hurst_exponent(&walk).unwrap();
    outcome(
        flat_z <= 3.0 && increasing && (h - 0.5).abs() <= 0.03,
        format!(
            "i.i.d. D(l) max |z| vs sigma^2 = {flat_z:.2}; CIM2 D(10) = {:.3e} -> D(500) = {:.3e}, increasing: {increasing}; i.i.d. walk H = {h:.3}",
            sup.d[9], sup.d[499]
        ),
    )
}

fn response_identity() -> Outcome {
    let max_lag = 20usize;
    let spec = FlowSpec {
        model: power_law_model(ModelKind::Hdim2, max_lag, 2e-5, 5e-5, 0.5).unwrap(),
        noise: 5e-5,
        ..flow(50_000, 10, 0.7, 90)
    };
    let data: InstrumentData = generate(&spec).unwrap();
    let seg = 2 * max_lag;
    let sample = CorrelationSample::estimate(&data, max_lag, seg, true, 1).unwrap();
    let corr = sample.correlations().unwrap();
    let measured = responses_from_set(&corr.responses);
    let identity = measured.identity_residual();

    // Closed form from unsmoothed in-sample kernels reproduces positive lags.
    let cfg = CalibrationConfig {
        smooth: Some(false),
        ..CalibrationConfig::default()
    };
    let scale = measured.total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut closed_dev = 0.0f64;
    let mut models = Vec::new();
    for kind in [ModelKind::Tim1, ModelKind::Tim2, ModelKind::Hdim2] {
        let m = solve_model(kind, &corr, max_lag, &cfg).unwrap();
        let closed = closed_form_response(&m, &corr).unwrap();
        for (i, &l) in closed.curves.lags.iter().enumerate() {
            if l > 0 {
                closed_dev = closed_dev.max((closed.curves.total[i] - measured.at(l).unwrap()).abs() / scale);
            }
        }
        models.push(m);
    }

    // Simulated responses, split by the label of the responding event.
    let simulated = |m: &CalibratedModel| {
        let pred = run_model(m, &data).unwrap();
        response_function(&data, Some(&pred.days), max_lag, seg).unwrap()
    };
    let (tim2, hdim2) = (simulated(&models[1]), simulated(&models[2]));
    let n = Label::N.index();
    let c = Label::C.index();
    // At l = 1 only the event's own impact enters and both models agree.
    let lags = 2..=max_lag as isize;
    let idx = |l: isize| (l + max_lag as isize) as usize;
    // TIM2 moves the price on events that cannot move it and undershoots on
    // those that do; HDIM2 respects the labels exactly.
    let tim_overshoot = lags.clone().all(|l| tim2.by_current[n][idx(l)] > 0.05 * measured.total[idx(l)]);
    let tim_undershoot = lags.clone().all(|l| tim2.by_current[c][idx(l)] < measured.by_current[c][idx(l)]);
    let hd_exact = (1..=max_lag as isize).all(|l| hdim2.by_current[n][idx(l)] == 0.0 && measured.by_current[n][idx(l)] == 0.0);
    let rel_n = tim2.by_current[n][idx(max_lag as isize)] / measured.total[idx(max_lag as isize)];
    outcome(
        identity <= 1e-14 && closed_dev <= 1e-8 && tim_overshoot && tim_undershoot && hd_exact,
        format!(
            "identity residual {identity:.1e}; closed-form vs measured (l > 0) {closed_dev:.1e} of max |R|; simulated TIM2 R^(n)(L) = {:.0}% of R(L) while measured and HDIM2 R^(n) = 0",
            100.0 * rel_n
        ),
    )
}

fn run_pipeline(bin: &str, dir: &Path) -> Result<(), String> {
    let config = "seed = 5\n[synth]\ndays = 4\nevents_per_day = 4000\nsign_memory = 0.7\nnoise = 3e-5\n\
                  [calibration]\nmax_lag = 25\n[diagnose]\nn_values = [10, 20, 50, 100]\nmax_lag = 50\n";
    fs::write(dir.join("cfg.toml"), config).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 4] = [
        &["synth", "--output", "flow.csv"],
        &["calibrate", "--input", "flow.csv", "--split", "odd", "--out-dir", "models"],
        &["simulate", "--input", "flow.csv", "--model-dir", "models", "--output", "pred.csv"],
        &["diagnose", "--input", "flow.csv", "--model-dir", "models", "--out-dir", "diag", "--plot-data"],
    ];
    for args in steps {
        let out = Command::new(bin)
            .current_dir(dir)
            .arg("--config")
            .arg("cfg.toml")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for sub in ["", "models", "diag"] {
        let d = dir.join(sub);
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if name.ends_with(".csv") || name.ends_with(".json") {
                out.push(if sub.is_empty() { name } else { format!("{sub}/{name}") });
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_proplab");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = run_pipeline(bin, d.path()) {
            return outcome(false, format!("pipeline failed: {e}"));
        }
    }
    let files = csv_files(a.path());
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .collect();
    let same_list = files == csv_files(b.path());
    outcome(
        differing.is_empty() && same_list && files.len() > 20,
        format!("{} output files compared, {} differ", files.len(), differing.len()),
    )
}

fn main() {
    // Libtest flags such as `--nocapture` are accepted and ignored.
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 estimator exactness", estimator_exactness),
        ("2 blind spot and padding", blind_spot_and_padding),
        ("3 round-trip calibration", round_trip),
        ("4 CIM2-limit identity", cim2_limit),
        ("5 calibration bias", bias_diagnostic),
        ("6 curvature fixtures", curvature_fixtures),
        ("7 sinusoidal impact", sinusoidal_impact),
        ("8 diffusivity", diffusivity),
        ("9 response identity", response_identity),
        ("10 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} [{name}] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

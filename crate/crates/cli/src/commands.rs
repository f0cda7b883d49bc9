//! Subcommand implementations. Outputs are written in a fixed order by a
//! single writer, so identical inputs give identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use proplab_core::calibration::{self, CalibratedModel, CorrelationSample, ModelKind};
use proplab_core::diagnostics::{
    aggregate_impact, closed_form_response, curvature, hurst_exponent, impact_inputs,
    model_correlation, response_function, signature_plot, slope_scaling, write_curves_csv,
    ImpactCurve, ResponseCurves, SignaturePlot,
};
use proplab_core::events::{self, compute_eta, select_split, InstrumentData, Split};
use proplab_core::simulate::{
    calibration_bias, prediction_error, run_model, write_predictions_csv, BiasEstimate,
    PredictedSeries,
};
use proplab_core::synth;
use serde_json::{json, Value};

use crate::config::{Metric, RunConfig};
use crate::error::{CliError, CliResult};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).map_err(proplab_core::Error::from)?;
    writeln!(w, "{text}").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn with_file<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> proplab_core::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Odd => "odd",
        Split::Even => "even",
        Split::None => "none",
    }
}

pub fn load_flow(path: &Path, instrument: Option<&str>) -> CliResult<InstrumentData> {
    let id = instrument.map(str::to_string).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "UNKNOWN".into())
    });
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(events::read_events_csv(std::io::BufReader::new(file), &id, false)?)
}

pub fn parse_models(spec: &str) -> CliResult<Vec<ModelKind>> {
    if spec.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for s in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: ModelKind = s.parse()?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::Usage("no model kind given".into()));
    }
    Ok(kinds)
}

// ---------------------------------------------------------------------------
// ingest, synth, calibrate, simulate
// ---------------------------------------------------------------------------

pub fn ingest(cfg: &RunConfig, input: &Path, output: &Path, summary: Option<&Path>) -> CliResult<()> {
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let (data, report) = events::parse_trades(std::io::BufReader::new(file), &cfg.ingest)?;
    with_file(output, |w| events::write_events_csv(&data, w))?;
    let eta = compute_eta(&data).ok();
    let summary_path = summary.map(Path::to_path_buf).unwrap_or_else(|| output.with_extension("json"));
    write_json(
        &summary_path,
        &json!({
            "instrument_id": data.instrument_id,
            "days": data.days.len(),
            "events": data.n_events(),
            "max_lag": data.max_lag,
            "eta": eta,
            "report": report,
        }),
    )?;
    eprintln!(
        "ingest: {} records, {} unparseable, {} irregular, {} at mid, {} trimmed, {} merged; {} days, {} events",
        report.records,
        report.unparseable,
        report.irregular,
        report.at_mid,
        report.trimmed,
        report.merged,
        report.days,
        report.events
    );
    Ok(())
}

pub fn synth(cfg: &mut RunConfig, output: &Path, generator: Option<&Path>) -> CliResult<()> {
    if let Some(path) = generator {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.synth.model = CalibratedModel::from_json(&text)?;
    }
    let data = synth::generate(&cfg.synth)?;
    with_file(output, |w| events::write_events_csv(&data, w))?;
    write_json(&output.with_extension("json"), &json!({ "flow": cfg.synth, "events": data.n_events() }))?;
    Ok(())
}

pub fn calibrate(
    cfg: &RunConfig,
    flow: &InstrumentData,
    split: Split,
    kinds: &[ModelKind],
    out_dir: &Path,
) -> CliResult<()> {
    let data = select_split(flow, split)?;
    let models = calibration::calibrate(&data, kinds, &cfg.calibration)?;
    let mut entries = Vec::new();
    for mut m in models {
        m.meta.window = Some(split_name(split).into());
        let path = out_dir.join(format!("{}.json", m.kind));
        write_json(&path, &m)?;
        println!(
            "{}: L = {}, condition {}, ridge {}",
            m.kind,
            m.max_lag,
            m.meta.condition.map_or("n/a".into(), |c| format!("{c:.3e}")),
            m.meta.ridge_lambda
        );
        entries.push(json!({
            "kind": m.kind,
            "L": m.max_lag,
            "condition": m.meta.condition,
            "ridge_lambda": m.meta.ridge_lambda,
            "smoothed": m.meta.smoothed,
            "p_c": m.meta.p_c,
        }));
    }
    write_json(
        &out_dir.join("calibration_report.json"),
        &json!({
            "instrument_id": data.instrument_id,
            "split": split_name(split),
            "days": data.days.len(),
            "events": data.n_events(),
            "eta": compute_eta(&data).ok(),
            "config": cfg.calibration,
            "models": entries,
        }),
    )
}

/// Models of the requested kinds found in `dir`. Explicitly requested kinds
/// must exist; `all` loads whichever are present.
fn load_models(dir: &Path, kinds: &[ModelKind]) -> CliResult<Vec<CalibratedModel>> {
    let explicit = kinds.len() < ModelKind::ALL.len();
    let mut out = Vec::new();
    for &k in kinds {
        let path = dir.join(format!("{k}.json"));
        if !path.exists() {
            if explicit {
                return Err(CliError::Usage(format!("missing model file {}", path.display())));
            }
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m = CalibratedModel::from_json(&text)?;
        if m.kind != k {
            return Err(CliError::Usage(format!("{} holds a {} model", path.display(), m.kind)));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no model files in {}", dir.display())));
    }
    Ok(out)
}

/// Explicit split, else the complement of the models' calibration window.
fn evaluation_split(explicit: Option<Split>, models: &[CalibratedModel]) -> Split {
    if let Some(s) = explicit {
        return s;
    }
    let windows: Vec<Option<Split>> = models
        .iter()
        .map(|m| m.meta.window.as_deref().and_then(|w| w.parse().ok()))
        .collect();
    match windows.first() {
        Some(Some(w)) if windows.iter().all(|x| *x == Some(*w)) => w.complement(),
        _ => Split::None,
    }
}

pub fn simulate(
    flow: &InstrumentData,
    split: Option<Split>,
    model_dir: &Path,
    kinds: &[ModelKind],
    output: &Path,
) -> CliResult<()> {
    let models = load_models(model_dir, kinds)?;
    let data = select_split(flow, evaluation_split(split, &models))?;
    let preds = models
        .iter()
        .map(|m| run_model(m, &data))
        .collect::<proplab_core::Result<Vec<_>>>()?;
    with_file(output, |w| write_predictions_csv(&data, &preds, w))
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

/// A return series to diagnose: the data itself or a model's prediction.
struct Source {
    name: String,
    returns: Vec<Vec<f64>>,
}

fn cumulative(returns: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(returns.iter().map(|r| {
            acc += r;
            acc
        }))
        .collect()
}

fn write_dat(path: &Path, blocks: &[(String, Vec<Vec<f64>>)]) -> CliResult<()> {
    let mut w = create(path)?;
    let mut text = String::new();
    for (title, rows) in blocks {
        text.push_str(&format!("# {title}\n"));
        for r in rows {
            let cols: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            text.push_str(&cols.join(" "));
            text.push('\n');
        }
        text.push_str("\n\n");
    }
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn error_value(e: &proplab_core::Error) -> Value {
    log::warn!("{e}");
    json!({ "error": e.to_string() })
}

pub fn diagnose(
    cfg: &RunConfig,
    flow: &InstrumentData,
    split: Option<Split>,
    model_dir: &Path,
    kinds: &[ModelKind],
    out_dir: &Path,
) -> CliResult<()> {
    let d = &cfg.diagnose;
    let models = load_models(model_dir, kinds)?;
    let split = evaluation_split(split, &models);
    let data = select_split(flow, split)?;
    let preds: Vec<PredictedSeries> = models
        .iter()
        .map(|m| run_model(m, &data))
        .collect::<proplab_core::Result<_>>()?;
    let truth: Vec<Vec<f64>> = data.days.iter().map(|day| day.returns()).collect();
    let mut sources = vec![Source {
        name: "data".into(),
        returns: truth.clone(),
    }];
    for p in &preds {
        sources.push(Source {
            name: p.kind.to_string(),
            returns: p.days.clone(),
        });
    }
    let max_lag = d.max_lag.min(data.max_lag);
    let out = |name: &str| -> PathBuf { out_dir.join(name) };
    let mut summary = BTreeMap::<String, Value>::new();
    summary.insert("split".into(), json!(split_name(split)));
    summary.insert("days".into(), json!(data.days.len()));
    summary.insert("events".into(), json!(data.n_events()));
    summary.insert("max_lag".into(), json!(max_lag));

    for metric in Metric::ALL.iter().filter(|m| d.metrics.contains(m)) {
        match metric {
            Metric::Impact => {
                let x = impact_inputs(&data, d.variable)?;
                let mut all = BTreeMap::new();
                for s in &sources {
                    let curves = d
                        .n_values
                        .iter()
                        .map(|&n| aggregate_impact(&s.returns, &x, n, d.bins, d.variable))
                        .collect::<proplab_core::Result<Vec<ImpactCurve>>>()?;
                    with_file(&out(&format!("impact_{}.csv", s.name)), |w| write_curves_csv(&curves, w))?;
                    let chis: Vec<Value> = curves
                        .iter()
                        .map(|c| match curvature(c, None) {
                            Ok(chi) => json!({ "N": c.n, "chi": chi, "half_range": c.half_range() }),
                            Err(e) => json!({ "N": c.n, "chi": Value::Null, "error": e.to_string() }),
                        })
                        .collect();
                    let scaling = if curves.len() >= 4 {
                        match slope_scaling(&curves) {
                            Ok(k) => json!(k),
                            Err(e) => error_value(&e),
                        }
                    } else {
                        Value::Null
                    };
                    let entry = json!({
                        "source": s.name,
                        "variable": d.variable,
                        "bins": d.bins,
                        "curvature": chis,
                        "slope_scaling": scaling,
                    });
                    write_json(&out(&format!("impact_{}.json", s.name)), &entry)?;
                    if d.plot_data {
                        let blocks: Vec<(String, Vec<Vec<f64>>)> = curves
                            .iter()
                            .map(|c| {
                                let rows = (0..c.means.len())
                                    .map(|i| vec![c.bin_centers[i], c.means[i], c.stderr[i]])
                                    .collect();
                                (format!("N = {}: x mean stderr", c.n), rows)
                            })
                            .collect();
                        write_dat(&out(&format!("impact_{}.dat", s.name)), &blocks)?;
                    }
                    all.insert(s.name.clone(), entry);
                }
                summary.insert("impact".into(), json!(all));
            }
            Metric::Signature => {
                let mut all = BTreeMap::new();
                for s in &sources {
                    let paths: Vec<Vec<f64>> = s.returns.iter().map(|r| cumulative(r)).collect();
                    let sp: SignaturePlot = signature_plot(&paths, max_lag)?;
                    with_file(&out(&format!("signature_{}.csv", s.name)), |w| sp.write_csv(w))?;
                    let entry = json!({ "source": s.name, "max_lag": max_lag, "D_LF": sp.d_lf });
                    write_json(&out(&format!("signature_{}.json", s.name)), &entry)?;
                    if d.plot_data {
                        let sub = sp.subtracted();
                        let rows = (0..sp.d.len())
                            .map(|i| vec![sp.lags[i] as f64, sp.d[i], sub[i], sp.stderr[i]])
                            .collect();
                        write_dat(
                            &out(&format!("signature_{}.dat", s.name)),
                            &[("lag D D_minus_D_LF stderr".into(), rows)],
                        )?;
                    }
                    all.insert(s.name.clone(), entry);
                }
                summary.insert("signature".into(), json!(all));
            }
            Metric::Hurst => {
                let mut all = BTreeMap::new();
                for s in &sources {
                    let paths: Vec<Vec<f64>> = s.returns.iter().map(|r| cumulative(r)).collect();
                    let h = match hurst_exponent(&paths) {
                        Ok(h) => json!(h),
                        Err(e) if e.is_numerical() => error_value(&e),
                        Err(e) => return Err(e.into()),
                    };
                    all.insert(s.name.clone(), h);
                }
                with_file(&out("hurst.csv"), |w| {
                    let mut wtr = csv::Writer::from_writer(w);
                    wtr.write_record(["source", "value", "stderr"])?;
                    for (name, h) in &all {
                        let v = h.as_f64().map(|v| v.to_string()).unwrap_or_default();
                        wtr.write_record([name.as_str(), v.as_str(), ""])?;
                    }
                    wtr.flush()?;
                    Ok(())
                })?;
                write_json(&out("hurst.json"), &all)?;
                summary.insert("hurst".into(), json!(all));
            }
            Metric::Response => {
                let seg = cfg.calibration.segment_for(max_lag);
                let mut all = BTreeMap::new();
                for s in &sources {
                    let r: ResponseCurves = response_function(&data, Some(&s.returns), max_lag, seg)?;
                    with_file(&out(&format!("response_{}.csv", s.name)), |w| r.write_csv(w))?;
                    if d.plot_data {
                        write_dat(&out(&format!("response_{}.dat", s.name)), &[response_block(&r)])?;
                    }
                    all.insert(
                        s.name.clone(),
                        json!({ "identity_residual": r.identity_residual(), "R_at_max_lag": r.at(max_lag as isize) }),
                    );
                }
                for m in &models {
                    let lc = max_lag.max(m.max_lag);
                    if lc > data.max_lag {
                        return Err(CliError::Usage(format!(
                            "{} lag {} exceeds the evaluation data's maximum lag {}",
                            m.kind, m.max_lag, data.max_lag
                        )));
                    }
                    let three_point = m.kind == ModelKind::Hdim2;
                    let corr = CorrelationSample::estimate(&data, lc, cfg.calibration.segment_for(lc), three_point, 1)?
                        .correlations()?;
                    let closed = closed_form_response(m, &corr)?;
                    with_file(&out(&format!("response_closed_{}.csv", m.kind)), |w| closed.curves.write_csv(w))?;
                    if d.plot_data {
                        write_dat(&out(&format!("response_closed_{}.dat", m.kind)), &[response_block(&closed.curves)])?;
                    }
                }
                write_json(&out("response.json"), &all)?;
                summary.insert("response".into(), json!(all));
            }
            Metric::Bias => {
                let seg = cfg.calibration.segment_for(max_lag);
                let mut all = BTreeMap::new();
                for p in &preds {
                    let nu = prediction_error(&data, p)?;
                    let b = calibration_bias(&nu, &data, max_lag, seg)?;
                    with_file(&out(&format!("bias_{}.csv", p.kind)), |w| b.write_csv(w))?;
                    let l = max_lag as isize;
                    let z = |prof| BiasEstimate::max_abs_z(prof, 0, l);
                    let entry = json!({
                        "kind": p.kind,
                        "max_abs_z_lagged": [z(&b.by_lagged[0]), z(&b.by_lagged[1])],
                        "max_abs_z_current_n": [z(&b.by_current[0][0]), z(&b.by_current[1][0])],
                        "max_abs_z_current_c": [z(&b.by_current[0][1]), z(&b.by_current[1][1])],
                    });
                    write_json(&out(&format!("bias_{}.json", p.kind)), &entry)?;
                    all.insert(p.kind.to_string(), entry);
                }
                summary.insert("bias".into(), json!(all));
            }
            Metric::Correlation => {
                let mut all = BTreeMap::new();
                let mut rows = Vec::new();
                for p in &preds {
                    let mut per_n = BTreeMap::new();
                    for &n in &d.n_values {
                        let v = match model_correlation(&truth, &p.days, n) {
                            Ok(v) => json!(v),
                            Err(e) if e.is_numerical() => error_value(&e),
                            Err(e) => return Err(e.into()),
                        };
                        rows.push([p.kind.to_string(), n.to_string(), v.as_f64().map(|v| v.to_string()).unwrap_or_default()]);
                        per_n.insert(n.to_string(), v);
                    }
                    all.insert(p.kind.to_string(), per_n);
                }
                with_file(&out("correlation.csv"), |w| {
                    let mut wtr = csv::Writer::from_writer(w);
                    wtr.write_record(["source", "N", "value", "stderr"])?;
                    for r in &rows {
                        wtr.write_record([r[0].as_str(), r[1].as_str(), r[2].as_str(), ""])?;
                    }
                    wtr.flush()?;
                    Ok(())
                })?;
                write_json(&out("correlation.json"), &all)?;
                summary.insert("correlation".into(), json!(all));
            }
        }
    }
    write_json(&out("summary.json"), &summary)
}

fn response_block(r: &ResponseCurves) -> (String, Vec<Vec<f64>>) {
    let rows = (0..r.lags.len())
        .map(|i| {
            vec![
                r.lags[i] as f64,
                r.total[i],
                r.by_lagged[0][i],
                r.by_lagged[1][i],
                r.by_current[0][i],
                r.by_current[1][i],
            ]
        })
        .collect();
    ("lag R R_n R_c R^(n) R^(c)".into(), rows)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn read_json(path: &Path) -> CliResult<Option<Value>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Some(serde_json::from_str(&text).map_err(proplab_core::Error::from)?))
}

fn num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn report(dir: &Path, output: Option<&Path>) -> CliResult<()> {
    let calib = read_json(&dir.join("calibration_report.json"))?;
    let diag = read_json(&dir.join("summary.json"))?;
    if calib.is_none() && diag.is_none() {
        return Err(CliError::Usage(format!(
            "{} holds neither calibration_report.json nor summary.json",
            dir.display()
        )));
    }
    let mut md = String::new();
    if let Some(c) = calib {
        md.push_str(&format!(
            "# Calibration: {} ({} split, {} days, {} events)\n\n| model | L | condition | ridge | smoothed |\n|---|---|---|---|---|\n",
            c["instrument_id"].as_str().unwrap_or("?"),
            c["split"].as_str().unwrap_or("?"),
            c["days"],
            c["events"]
        ));
        for m in c["models"].as_array().into_iter().flatten() {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                m["kind"].as_str().unwrap_or("?"),
                m["L"],
                num(&m["condition"]),
                m["ridge_lambda"],
                m["smoothed"]
            ));
        }
        md.push('\n');
    }
    if let Some(s) = diag {
        md.push_str(&format!(
            "# Diagnostics ({} split, {} days)\n\n",
            s["split"].as_str().unwrap_or("?"),
            s["days"]
        ));
        if let Some(imp) = s["impact"].as_object() {
            md.push_str("## Curvature and slope scaling\n\n| source | N | chi |\n|---|---|---|\n");
            for (name, e) in imp {
                for c in e["curvature"].as_array().into_iter().flatten() {
                    md.push_str(&format!("| {name} | {} | {} |\n", c["N"], num(&c["chi"])));
                }
            }
            md.push_str("\n| source | kappa |\n|---|---|\n");
            for (name, e) in imp {
                md.push_str(&format!("| {name} | {} |\n", num(&e["slope_scaling"]["kappa"])));
            }
            md.push('\n');
        }
        if let Some(h) = s["hurst"].as_object() {
            md.push_str("## Hurst exponents\n\n| source | H |\n|---|---|\n");
            for (name, v) in h {
                md.push_str(&format!("| {name} | {} |\n", num(v)));
            }
            md.push('\n');
        }
        if let Some(sig) = s["signature"].as_object() {
            md.push_str("## Low-frequency diffusion constants\n\n| source | D_LF |\n|---|---|\n");
            for (name, e) in sig {
                md.push_str(&format!("| {name} | {:e} |\n", e["D_LF"].as_f64().unwrap_or(f64::NAN)));
            }
            md.push('\n');
        }
        if let Some(corr) = s["correlation"].as_object() {
            md.push_str("## N-trade prediction correlations\n\n| model | N | rho |\n|---|---|---|\n");
            for (name, per_n) in corr {
                let mut entries: Vec<(usize, &Value)> = per_n
                    .as_object()
                    .into_iter()
                    .flatten()
                    .filter_map(|(n, v)| Some((n.parse().ok()?, v)))
                    .collect();
                entries.sort_by_key(|e| e.0);
                for (n, v) in entries {
                    md.push_str(&format!("| {name} | {n} | {} |\n", num(v)));
                }
            }
            md.push('\n');
        }
        if let Some(b) = s["bias"].as_object() {
            md.push_str("## Calibration bias, largest |z| over lags 0..L\n\n| model | lagged n | lagged c | current n | current c |\n|---|---|---|---|---|\n");
            for (name, e) in b {
                let pair = |k: &str| {
                    let a = &e[k];
                    num(&a[0]).to_string() + " / " + &num(&a[1])
                };
                md.push_str(&format!(
                    "| {name} | {} | {} | {} | {} |\n",
                    num(&e["max_abs_z_lagged"][0]),
                    num(&e["max_abs_z_lagged"][1]),
                    pair("max_abs_z_current_n"),
                    pair("max_abs_z_current_c")
                ));
            }
            md.push('\n');
        }
    }
    match output {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(md.as_bytes()).map_err(|e| CliError::io(path, e))?;
            w.flush().map_err(|e| CliError::io(path, e))
        }
        None => {
            print!("{md}");
            Ok(())
        }
    }
}

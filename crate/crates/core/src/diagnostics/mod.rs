//! Observables used to judge impact models: aggregate impact curves and their
//! curvature and slope scaling, signature plots and Hurst exponents, price
//! responses (measured and closed-form) and N-trade prediction correlations.
//!
//! Every result can be written as a tidy CSV, one row per point with a value
//! and a standard error column.

mod diffusion;
mod impact;
mod response;

use std::io::Write;

pub use diffusion::{hurst_exponent, signature_plot, SignaturePlot, HURST_MIN_LEN};
pub use impact::{
    aggregate_impact, curvature, curvature_of, impact_inputs, model_correlation, slope_scaling,
    write_curves_csv, ImpactCurve, ImpactVariable, SlopeScaling, DEFAULT_BINS,
};
pub use response::{
    closed_form_response, response_function, responses_from_set, ClosedFormResponse,
    ResponseCurves,
};

use crate::error::Result;

/// Writes rows of `(keys..., value, stderr)` with the given header.
pub(crate) fn write_tidy<W: Write>(
    writer: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Formats a float for CSV output; NaN becomes an empty field.
pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Mean and standard error of the mean; the error is NaN below two samples.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

//! Run configuration, read from TOML. Every table is optional; command-line
//! flags override the file.

use std::path::Path;

use proplab_core::calibration::CalibrationConfig;
use proplab_core::events::IngestConfig;
use proplab_core::synth::FlowSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `synth.seed` when set.
    pub seed: Option<u64>,
    pub ingest: IngestConfig,
    pub synth: FlowSpec,
    pub calibration: CalibrationConfig,
    pub diagnose: DiagnoseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Impact,
    Signature,
    Hurst,
    Response,
    Bias,
    Correlation,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Impact,
        Metric::Signature,
        Metric::Hurst,
        Metric::Response,
        Metric::Bias,
        Metric::Correlation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub metrics: Vec<Metric>,
    /// Bin sizes for impact curves and prediction correlations.
    pub n_values: Vec<usize>,
    pub bins: usize,
    pub variable: proplab_core::diagnostics::ImpactVariable,
    /// Largest lag of signature plots, responses and biases; capped by the shortest day.
    pub max_lag: usize,
    pub plot_data: bool,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            metrics: Metric::ALL.to_vec(),
            n_values: vec![10, 20, 50, 100, 200, 500, 1000],
            bins: proplab_core::diagnostics::DEFAULT_BINS,
            variable: proplab_core::diagnostics::ImpactVariable::Sign,
            max_lag: 500,
            plot_data: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(toml::from_str::<RunConfig>("").unwrap(), RunConfig::default());
    }

    #[test]
    fn tables_parse_and_unknown_keys_fail() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 9
            [synth]
            days = 3
            events_per_day = 2000
            change_prob = { kind = "constant", p = 0.5 }
            [calibration]
            max_lag = 40
            [diagnose]
            metrics = ["impact", "hurst"]
            n_values = [10, 50]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.synth.days, 3);
        assert_eq!(cfg.calibration.max_lag, Some(40));
        assert_eq!(cfg.diagnose.metrics, vec![Metric::Impact, Metric::Hurst]);
        assert!(toml::from_str::<RunConfig>("[diagnose]\nfoo = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}

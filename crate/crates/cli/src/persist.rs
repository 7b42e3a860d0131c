//! Model and manifest files: pretty-printed JSON with a mandatory
//! `format_version` and no unknown fields.

use std::path::Path;

use funcreg_core::fkamfr::{fit_fkamfr, FkamfrModel};
use funcreg_core::flmfr::{fit_flmfr, FlmfrModel};
use funcreg_core::fsamfr::{fit_fsamfr, FsamfrModel};
use funcreg_core::{FunctionalRegressor, FunctionalSample, Grid, Result as FdaResult};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::csv_io::write_text;
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "parameters", rename_all = "lowercase")]
pub enum FittedModel {
    Flmfr(FlmfrModel),
    Fsamfr(FsamfrModel),
    Fkamfr(FkamfrModel),
}

impl FittedModel {
    pub fn fit(
        config: &RunConfig,
        y: &FunctionalSample,
        xs: &[FunctionalSample],
    ) -> CliResult<Self> {
        config.validate(xs.len())?;
        Ok(match config.method {
            Method::Flmfr => FittedModel::Flmfr(fit_flmfr(y, xs, &config.basis_config())?),
            Method::Fsamfr => FittedModel::Fsamfr(fit_fsamfr(y, xs, &config.fsamfr_config())?),
            Method::Fkamfr => FittedModel::Fkamfr(fit_fkamfr(y, xs, &config.fkamfr_config())?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            FittedModel::Flmfr(_) => Method::Flmfr,
            FittedModel::Fsamfr(_) => Method::Fsamfr,
            FittedModel::Fkamfr(_) => Method::Fkamfr,
        }
    }

    fn inner(&self) -> &dyn FunctionalRegressor {
        match self {
            FittedModel::Flmfr(m) => m,
            FittedModel::Fsamfr(m) => m,
            FittedModel::Fkamfr(m) => m,
        }
    }
}

impl FunctionalRegressor for FittedModel {
    fn n_covariates(&self) -> usize {
        self.inner().n_covariates()
    }

    fn covariate_grid(&self, j: usize) -> &Grid {
        self.inner().covariate_grid(j)
    }

    fn response_grid(&self) -> &Grid {
        self.inner().response_grid()
    }

    fn predict(&self, xs: &[FunctionalSample]) -> FdaResult<FunctionalSample> {
        self.inner().predict(xs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub n_train: usize,
    pub n_covariates: usize,
    /// Paths the training data was read from, when it came from files.
    #[serde(default)]
    pub response_file: Option<String>,
    #[serde(default)]
    pub covariate_files: Vec<String>,
    pub config: RunConfig,
    pub r2_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: FittedModel,
    pub training: TrainingInfo,
}

impl ModelFile {
    pub fn new(model: FittedModel, training: TrainingInfo) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model,
            training,
        }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Reads a versioned JSON file; errors name the offending field path.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let format_err = |message: String| CliError::Format {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format_err(format!("not valid JSON: {e}")))?;
    match value.get("format_version").map(|v| v.as_u64()) {
        None => return Err(format_err("missing field 'format_version'".into())),
        Some(Some(v)) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(format_err(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                v.map(|v| v.to_string())
                    .unwrap_or_else(|| value["format_version"].to_string())
            )))
        }
    }
    // parse from the text, not the Value, so floats keep their exact bits
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        format_err(format!("in section '{at}': {}", e.into_inner()))
    })
}

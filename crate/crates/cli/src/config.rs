use std::fmt;
use std::str::FromStr;

use funcreg_core::basis::{BasisConfig, BasisSpec};
use funcreg_core::fkamfr::{FkamfrConfig, Kernel};
use funcreg_core::fsamfr::FsamfrConfig;
use funcreg_core::smoother::SmootherConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Flmfr,
    Fsamfr,
    Fkamfr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Flmfr, Method::Fsamfr, Method::Fkamfr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Flmfr => "flmfr",
            Method::Fsamfr => "fsamfr",
            Method::Fkamfr => "fkamfr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Flmfr => "FLMFR",
            Method::Fsamfr => "FSAMFR",
            Method::Fkamfr => "FKAMFR",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "flmfr" => Ok(Method::Flmfr),
            "fsamfr" => Ok(Method::Fsamfr),
            "fkamfr" => Ok(Method::Fkamfr),
            _ => Err(format!(
                "unknown method '{s}' (expected flmfr, fsamfr or fkamfr)"
            )),
        }
    }
}

pub fn parse_kernel(s: &str) -> Result<Kernel, String> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(Kernel::Gaussian),
        "epanechnikov" => Ok(Kernel::Epanechnikov),
        "triangular" => Ok(Kernel::Triangular),
        "uniform" => Ok(Kernel::Uniform),
        _ => Err(format!(
            "unknown kernel '{s}' (expected gaussian, epanechnikov, triangular or uniform)"
        )),
    }
}

/// Estimator settings shared by `fit` and `benchmark`.
///
/// `pve` and `k` hold either one value for every variable or one value for the
/// response followed by one per covariate. At most one of them may be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub pve: Vec<f64>,
    pub k: Vec<usize>,
    pub kernel: Kernel,
    pub grid_size: usize,
    pub prob_range: (f64, f64),
    pub tolerance: f64,
    pub max_iter: usize,
    pub df_cap: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fk = FkamfrConfig::default();
        Self {
            method: Method::Flmfr,
            pve: Vec::new(),
            k: Vec::new(),
            kernel: fk.kernel,
            grid_size: fk.grid_size,
            prob_range: fk.prob_range,
            tolerance: fk.tolerance,
            max_iter: fk.max_iter,
            df_cap: SmootherConfig::default().df_cap,
        }
    }
}

impl RunConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self, n_covariates: usize) -> CliResult<()> {
        let mut problems = Vec::new();
        if !self.pve.is_empty() && !self.k.is_empty() {
            problems.push("--pve and --k are mutually exclusive".to_string());
        }
        let list_ok = |len: usize| len <= 1 || len == n_covariates + 1;
        if !list_ok(self.pve.len()) {
            problems.push(format!(
                "--pve takes 1 value or {} (response then covariates), got {}",
                n_covariates + 1,
                self.pve.len()
            ));
        }
        if !list_ok(self.k.len()) {
            problems.push(format!(
                "--k takes 1 value or {} (response then covariates), got {}",
                n_covariates + 1,
                self.k.len()
            ));
        }
        for p in &self.pve {
            if !(*p > 0.0 && *p <= 1.0) {
                problems.push(format!("--pve values must lie in (0, 1], got {p}"));
            }
        }
        if self.k.contains(&0) {
            problems.push("--k values must be at least 1".to_string());
        }
        if self.grid_size == 0 {
            problems.push("--grid-size must be at least 1".to_string());
        }
        let (lo, hi) = self.prob_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            problems.push(format!(
                "--prob-range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            problems.push(format!(
                "--tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if self.max_iter == 0 {
            problems.push("--max-iter must be at least 1".to_string());
        }
        if !(self.df_cap > 0.0 && self.df_cap.is_finite()) {
            problems.push(format!("--df-cap must be positive, got {}", self.df_cap));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn basis_config(&self) -> BasisConfig {
        let specs: Vec<BasisSpec> = if !self.k.is_empty() {
            self.k.iter().map(|&k| BasisSpec::Fixed(k)).collect()
        } else {
            self.pve.iter().map(|&p| BasisSpec::Pve(p)).collect()
        };
        match specs.len() {
            0 => BasisConfig::default(),
            1 => BasisConfig::uniform(specs[0]),
            _ => BasisConfig {
                response: specs[0],
                covariates: specs[1..].to_vec(),
            },
        }
    }

    pub fn fsamfr_config(&self) -> FsamfrConfig {
        FsamfrConfig {
            basis: self.basis_config(),
            smoother: SmootherConfig {
                df_cap: self.df_cap,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn fkamfr_config(&self) -> FkamfrConfig {
        FkamfrConfig {
            kernel: self.kernel,
            grid_size: self.grid_size,
            prob_range: self.prob_range,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_problems_are_reported_together() {
        let cfg = RunConfig {
            pve: vec![1.5, 0.9],
            k: vec![0],
            tolerance: -1.0,
            ..Default::default()
        };
        match cfg.validate(2) {
            Err(CliError::Validation(p)) => assert_eq!(p.len(), 5, "{p:?}"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::default().validate(2).is_ok());
    }

    #[test]
    fn basis_lists_broadcast_or_split() {
        let one = RunConfig {
            pve: vec![0.9],
            ..Default::default()
        };
        assert_eq!(
            one.basis_config(),
            BasisConfig::uniform(BasisSpec::Pve(0.9))
        );
        let split = RunConfig {
            k: vec![3, 2, 4],
            ..Default::default()
        };
        let b = split.basis_config();
        assert_eq!(b.response, BasisSpec::Fixed(3));
        assert_eq!(b.covariate(1), BasisSpec::Fixed(4));
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
        assert!(parse_kernel("Epanechnikov").is_ok());
    }
}

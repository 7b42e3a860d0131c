//! Spectral additive model with functional response.
//!
//! Response and covariates are reduced to principal-component scores. Each
//! response score is then modelled as an intercept plus a sum of smooth
//! univariate functions, one per covariate score, fitted by backfitting
//! penalized splines.

use serde::{Deserialize, Serialize};

use crate::basis::{
    fit_pc, project, project_curve, reconstruct, Basis, BasisConfig, PCBasis, ScoreMatrix,
};
use crate::error::{FdaError, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::smoother::{PenalizedSpline, Smoother1D, SmootherConfig};
use crate::{check_covariates, check_training_inputs, FunctionalRegressor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackfitConfig {
    pub max_cycles: usize,
    /// Stop when the summed squared change of all components, relative to
    /// their summed squared size, falls below this.
    pub tolerance: f64,
}

impl Default for BackfitConfig {
    fn default() -> Self {
        Self {
            max_cycles: 50,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FsamfrConfig {
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub smoother: SmootherConfig,
    #[serde(default)]
    pub backfit: BackfitConfig,
}

/// Additive model for one response score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub intercept: f64,
    /// One component per covariate score, covariates first, then components.
    pub components: Vec<Smoother1D>,
    pub cycles: usize,
    pub converged: bool,
}

impl ScoreModel {
    fn eval(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .components
                .iter()
                .zip(x)
                .map(|(c, &v)| c.eval(v))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsamfrModel {
    response_basis: PCBasis,
    covariate_bases: Vec<PCBasis>,
    score_models: Vec<ScoreModel>,
}

impl FsamfrModel {
    pub fn response_basis(&self) -> &PCBasis {
        &self.response_basis
    }

    pub fn covariate_bases(&self) -> &[PCBasis] {
        &self.covariate_bases
    }

    pub fn score_models(&self) -> &[ScoreModel] {
        &self.score_models
    }

    /// True when backfitting converged for every response score.
    pub fn converged(&self) -> bool {
        self.score_models.iter().all(|m| m.converged)
    }

    /// Component `f_{j,k}^{(l)}` evaluated at the given score values.
    pub fn component(&self, l: usize, j: usize, k: usize, at: &[f64]) -> Result<Vec<f64>> {
        let model = self.score_models.get(l).ok_or(FdaError::IndexOutOfRange {
            index: l,
            len: self.score_models.len(),
        })?;
        let basis = self
            .covariate_bases
            .get(j)
            .ok_or(FdaError::IndexOutOfRange {
                index: j,
                len: self.covariate_bases.len(),
            })?;
        if k >= basis.size() {
            return Err(FdaError::IndexOutOfRange {
                index: k,
                len: basis.size(),
            });
        }
        let offset: usize = self.covariate_bases[..j].iter().map(|b| b.size()).sum();
        Ok(model.components[offset + k].eval_many(at))
    }

    fn stacked_scores(&self, xs: &[FunctionalSample], i: usize) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (x, b) in xs.iter().zip(&self.covariate_bases) {
            out.extend(project_curve(x.curve(i), b)?);
        }
        Ok(out)
    }
}

impl FunctionalRegressor for FsamfrModel {
    fn n_covariates(&self) -> usize {
        self.covariate_bases.len()
    }

    fn covariate_grid(&self, j: usize) -> &Grid {
        self.covariate_bases[j].grid()
    }

    fn response_grid(&self) -> &Grid {
        self.response_basis.grid()
    }

    fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample> {
        let n = check_covariates(self, xs)?;
        let l = self.score_models.len();
        let mut scores = Vec::with_capacity(n * l);
        for i in 0..n {
            let x = self.stacked_scores(xs, i)?;
            scores.extend(self.score_models.iter().map(|m| m.eval(&x)));
        }
        reconstruct(&ScoreMatrix::new(n, l, scores)?, &self.response_basis)
    }
}

pub fn fit_fsamfr(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    config: &FsamfrConfig,
) -> Result<FsamfrModel> {
    let n = check_training_inputs(y, xs)?;
    config.basis.validate(xs.len())?;
    config.smoother.validate()?;
    if config.backfit.max_cycles == 0 || !(config.backfit.tolerance > 0.0) {
        return Err(FdaError::InvalidArgument(
            "backfitting needs at least one cycle and a positive tolerance".into(),
        ));
    }

    let response_basis = fit_pc(y, config.basis.response)?;
    let covariate_bases = xs
        .iter()
        .enumerate()
        .map(|(j, x)| fit_pc(x, config.basis.covariate(j)))
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (x, b) in xs.iter().zip(&covariate_bases) {
        let s = project(x, b)?;
        columns.extend((0..s.ncols()).map(|k| s.column(k)));
    }
    let smoothers = columns
        .iter()
        .map(|c| PenalizedSpline::new(c, config.smoother))
        .collect::<Result<Vec<_>>>()?;

    let y_scores = project(y, &response_basis)?;
    let score_models = (0..response_basis.size())
        .map(|l| backfit(&y_scores.column(l), &smoothers, n, config.backfit))
        .collect::<Result<Vec<_>>>()?;

    Ok(FsamfrModel {
        response_basis,
        covariate_bases,
        score_models,
    })
}

/// Gauss–Seidel backfitting of `y ≈ α + Σ_m f_m(x_m)` starting from zero components.
fn backfit(
    y: &[f64],
    smoothers: &[PenalizedSpline],
    n: usize,
    config: BackfitConfig,
) -> Result<ScoreModel> {
    let intercept = y.iter().sum::<f64>() / n as f64;
    let m = smoothers.len();
    let mut fitted = vec![vec![0.0; n]; m];
    let mut components = vec![Smoother1D::zero(); m];
    // residual = y - α - Σ f_m
    let mut residual: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    let mut converged = false;
    let mut cycles = 0;

    while cycles < config.max_cycles {
        cycles += 1;
        let mut change = 0.0;
        let mut size = 0.0;
        for (idx, sp) in smoothers.iter().enumerate() {
            let partial: Vec<f64> = residual
                .iter()
                .zip(&fitted[idx])
                .map(|(r, f)| r + f)
                .collect();
            let fit = sp.fit(&partial)?;
            for i in 0..n {
                let delta = fit.fitted[i] - fitted[idx][i];
                change += delta * delta;
                size += fit.fitted[i] * fit.fitted[i];
                residual[i] = partial[i] - fit.fitted[i];
            }
            fitted[idx] = fit.fitted;
            components[idx] = fit.smoother;
        }
        if change <= config.tolerance * size || size == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("backfitting stopped after {cycles} cycles without converging");
    }

    Ok(ScoreModel {
        intercept,
        components,
        cycles,
        converged,
    })
}

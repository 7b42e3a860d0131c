//! Function-on-function regression.
//!
//! Three estimators share one data model ([`fdata::FunctionalSample`]):
//!
//! * [`flmfr`]: functional linear model, least squares on principal-component scores;
//! * [`fsamfr`]: spectral additive model, one additive spline model per response score;
//! * [`fkamfr`]: kernel additive model fitted by backfitting Nadaraya–Watson components
//!   that only look at L2 distances between curves.
//!
//! [`simgen`] reproduces the simulation scenarios used to compare them and
//! [`metrics`] holds the functional R², distance correlation and PC score maps.

// `!(x > 0.0)` is used on purpose so that NaN fails the check too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod fdata;
pub mod fkamfr;
pub mod flmfr;
pub mod fsamfr;
pub mod metrics;
pub mod simgen;
pub mod smoother;

pub use error::{FdaError, Result};
pub use fdata::{BivariateSurface, FunctionalSample, Grid};

/// A fitted regression from `J` functional covariates to a functional response.
pub trait FunctionalRegressor {
    fn n_covariates(&self) -> usize;

    fn covariate_grid(&self, j: usize) -> &Grid;

    fn response_grid(&self) -> &Grid;

    /// Predicted response curves, one per row of the covariate samples.
    fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample>;
}

/// Checks that `xs` has one sample per covariate, on the training grids, with a shared `n`.
pub(crate) fn check_covariates<M: FunctionalRegressor + ?Sized>(
    model: &M,
    xs: &[FunctionalSample],
) -> Result<usize> {
    if xs.len() != model.n_covariates() {
        return Err(FdaError::DimensionMismatch(format!(
            "model has {} covariates, got {}",
            model.n_covariates(),
            xs.len()
        )));
    }
    let n = xs.first().map(|x| x.n()).unwrap_or(0);
    for (j, x) in xs.iter().enumerate() {
        x.grid()
            .ensure_matches(model.covariate_grid(j), &format!("covariate {j}"))?;
        if x.n() != n {
            return Err(FdaError::DimensionMismatch(format!(
                "covariate {j} has {} curves, covariate 0 has {n}",
                x.n()
            )));
        }
    }
    Ok(n)
}

/// Shared sample size of a response and its covariates.
pub(crate) fn check_training_inputs(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
) -> Result<usize> {
    if xs.is_empty() {
        return Err(FdaError::InvalidArgument(
            "at least one covariate is required".into(),
        ));
    }
    let n = y.n();
    for (j, x) in xs.iter().enumerate() {
        if x.n() != n {
            return Err(FdaError::DimensionMismatch(format!(
                "covariate {j} has {} curves but the response has {n}",
                x.n()
            )));
        }
    }
    Ok(n)
}

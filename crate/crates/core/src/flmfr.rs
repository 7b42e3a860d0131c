//! Functional linear model with functional response.
//!
//! Every variable is centered and represented by its principal-component
//! scores; the operator is then a multivariate least-squares problem from the
//! stacked covariate scores (`n × ΣK_j`) to the response scores (`n × L`),
//! solved by QR. The intercept is carried by the centering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{
    fit_pc, project, project_curve, reconstruct, Basis, BasisConfig, PCBasis, ScoreMatrix,
};
use crate::error::{FdaError, Result};
use crate::fdata::{BivariateSurface, FunctionalSample, Grid};
use crate::{check_covariates, check_training_inputs, FunctionalRegressor};

/// Largest accepted condition number of the stacked score design.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlmfrModel {
    response_basis: PCBasis,
    covariate_bases: Vec<PCBasis>,
    /// `B_j` as `K_j` rows of `L` coefficients.
    coef_blocks: Vec<Vec<Vec<f64>>>,
    /// Offset in response-score coordinates; zero because the response is centered.
    intercept_scores: Vec<f64>,
    /// `σ̂²_(l)` with denominator `n - ΣK_j`.
    residual_score_variance: Vec<f64>,
    train_n: usize,
    /// Covariate scores of the training sample.
    train_scores: Vec<ScoreMatrix>,
}

impl FlmfrModel {
    pub fn response_basis(&self) -> &PCBasis {
        &self.response_basis
    }

    pub fn covariate_bases(&self) -> &[PCBasis] {
        &self.covariate_bases
    }

    pub fn coef_block(&self, j: usize) -> Option<&[Vec<f64>]> {
        self.coef_blocks.get(j).map(|b| b.as_slice())
    }

    pub fn intercept_scores(&self) -> &[f64] {
        &self.intercept_scores
    }

    pub fn residual_score_variance(&self) -> &[f64] {
        &self.residual_score_variance
    }

    pub fn train_n(&self) -> usize {
        self.train_n
    }

    pub fn train_scores(&self) -> &[ScoreMatrix] {
        &self.train_scores
    }

    /// Predicted response scores for stacked covariate scores.
    fn response_scores(&self, covariate_scores: &[&[f64]]) -> Vec<f64> {
        let l = self.response_basis.size();
        let mut out = self.intercept_scores.clone();
        for (block, scores) in self.coef_blocks.iter().zip(covariate_scores) {
            for (row, x) in block.iter().zip(scores.iter()) {
                for (o, b) in out.iter_mut().zip(row) {
                    *o += x * b;
                }
            }
        }
        debug_assert_eq!(out.len(), l);
        out
    }

    /// `β̂_j(s, t) = Σ_k Σ_l b_kl η_k(s) θ_l(t)` on the covariate × response grid.
    pub fn beta_surface(&self, j: usize) -> Result<BivariateSurface> {
        let block = self.coef_blocks.get(j).ok_or(FdaError::IndexOutOfRange {
            index: j,
            len: self.coef_blocks.len(),
        })?;
        let eta = &self.covariate_bases[j];
        let theta = &self.response_basis;
        let rs = eta.grid().len();
        let rt = theta.grid().len();
        let mut values = vec![0.0; rs * rt];
        for (k, row) in block.iter().enumerate() {
            for (l, &b) in row.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let ek = eta.function(k);
                let tl = theta.function(l);
                for s in 0..rs {
                    let bs = b * ek[s];
                    for t in 0..rt {
                        values[s * rt + t] += bs * tl[t];
                    }
                }
            }
        }
        BivariateSurface::new(eta.grid().clone(), theta.grid().clone(), values)
    }

    /// Conditional mean-square prediction error at covariate scores `x0`,
    /// without the two truncation remainders (not estimable from data).
    ///
    /// Only defined for single-covariate models.
    pub fn cmspe(&self, x0_scores: &[Vec<f64>]) -> Result<f64> {
        if self.covariate_bases.len() != 1 {
            return Err(FdaError::Unsupported(format!(
                "CMSPE is defined for one covariate, model has {}",
                self.covariate_bases.len()
            )));
        }
        if x0_scores.len() != 1 {
            return Err(FdaError::DimensionMismatch(format!(
                "expected scores for 1 covariate, got {}",
                x0_scores.len()
            )));
        }
        let x0 = &x0_scores[0];
        let lambdas = self.covariate_bases[0].eigenvalues();
        if x0.len() != lambdas.len() {
            return Err(FdaError::DimensionMismatch(format!(
                "{} scores for a {}-component covariate basis",
                x0.len(),
                lambdas.len()
            )));
        }
        let leverage: f64 = x0.iter().zip(lambdas).map(|(x, l)| x * x / l).sum();
        let n = self.train_n as f64;
        Ok(self
            .residual_score_variance
            .iter()
            .map(|s2| s2 + s2 / n * (1.0 + leverage))
            .sum())
    }
}

impl FunctionalRegressor for FlmfrModel {
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
        let l = self.response_basis.size();
        let mut scores = Vec::with_capacity(n * l);
        for i in 0..n {
            let per_cov = xs
                .iter()
                .zip(&self.covariate_bases)
                .map(|(x, b)| project_curve(x.curve(i), b))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = per_cov.iter().map(|v| v.as_slice()).collect();
            scores.extend(self.response_scores(&refs));
        }
        reconstruct(&ScoreMatrix::new(n, l, scores)?, &self.response_basis)
    }
}

/// Least-squares fit of the functional linear model.
pub fn fit_flmfr(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    config: &BasisConfig,
) -> Result<FlmfrModel> {
    let n = check_training_inputs(y, xs)?;
    config.validate(xs.len())?;

    let response_basis = fit_pc(y, config.response)?;
    let covariate_bases = xs
        .iter()
        .enumerate()
        .map(|(j, x)| fit_pc(x, config.covariate(j)))
        .collect::<Result<Vec<_>>>()?;
    let train_scores = xs
        .iter()
        .zip(&covariate_bases)
        .map(|(x, b)| project(x, b))
        .collect::<Result<Vec<_>>>()?;
    let response_scores = project(y, &response_basis)?.to_matrix();

    let sizes: Vec<usize> = covariate_bases.iter().map(|b| b.size()).collect();
    let p: usize = sizes.iter().sum();
    if n <= p {
        return Err(FdaError::InsufficientData {
            needed: p + 1,
            got: n,
            context: format!("linear model with {p} covariate scores"),
        });
    }

    let design = stack_scores(&train_scores);
    let coef = least_squares(&design, &response_scores)?;

    let residuals = &response_scores - &design * &coef;
    let dof = (n - p) as f64;
    let residual_score_variance = (0..residuals.ncols())
        .map(|l| residuals.column(l).norm_squared() / dof)
        .collect();

    let mut coef_blocks = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &k in &sizes {
        let block = (offset..offset + k)
            .map(|row| coef.row(row).iter().copied().collect())
            .collect();
        coef_blocks.push(block);
        offset += k;
    }

    Ok(FlmfrModel {
        intercept_scores: vec![0.0; response_basis.size()],
        response_basis,
        covariate_bases,
        coef_blocks,
        residual_score_variance,
        train_n: n,
        train_scores,
    })
}

/// Column-wise concatenation of score matrices.
pub(crate) fn stack_scores(blocks: &[ScoreMatrix]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = DMatrix::zeros(n, p);
    let mut col = 0;
    for b in blocks {
        for k in 0..b.ncols() {
            for i in 0..n {
                m[(i, col)] = b.get(i, k);
            }
            col += 1;
        }
    }
    m
}

/// Minimizes `‖design · coef - rhs‖_F` through a thin QR factorization.
pub(crate) fn least_squares(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = design.singular_values();
    let max = sv.max();
    let min = sv.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(FdaError::IllConditioned {
            condition,
            limit: MAX_CONDITION,
        });
    }
    let qr = design.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * rhs;
    r.solve_upper_triangular(&qty)
        .ok_or(FdaError::IllConditioned {
            condition: f64::INFINITY,
            limit: MAX_CONDITION,
        })
}

//! Goodness-of-fit measures, distance correlation and PC score maps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{fit_pc, project, project_curve, Basis, BasisSpec, PCBasis};
use crate::error::{FdaError, Result};
use crate::fdata::{pairwise_distances, FunctionalSample};
use crate::FunctionalRegressor;

/// `1 - Σ‖Y_i - Ŷ_i‖² / Σ‖Y_i - m‖²` with `m` the reference mean curve.
pub fn r2_functional(
    y: &FunctionalSample,
    yhat: &FunctionalSample,
    reference_mean: &[f64],
) -> Result<f64> {
    y.ensure_same_shape(yhat, "R² evaluation")?;
    let denom = y.energy_about(reference_mean)?;
    if !(denom > 0.0) {
        return Err(FdaError::Degenerate(
            "responses coincide with the reference mean; R² is undefined".into(),
        ));
    }
    let num = y.sub(yhat)?.total_energy();
    Ok(1.0 - num / denom)
}

/// `1 - Σ‖ε_i‖² / Σ‖Y_i - Ȳ‖²` from a response sample and its noise component.
pub fn empirical_rho2(y: &FunctionalSample, noise: &FunctionalSample) -> Result<f64> {
    y.ensure_same_shape(noise, "empirical rho²")?;
    let denom = y.energy_about(&y.mean_curve())?;
    if !(denom > 0.0) {
        return Err(FdaError::Degenerate("response has no variability".into()));
    }
    Ok(1.0 - noise.total_energy() / denom)
}

/// Estimation and prediction R² across Monte Carlo replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct R2Report {
    /// Mean over replications.
    pub r2_e: f64,
    /// Mean over replications.
    pub r2_p: f64,
    pub per_replication: Vec<(f64, f64)>,
    pub n_replications: usize,
}

impl R2Report {
    pub fn from_replications(per_replication: Vec<(f64, f64)>) -> Result<Self> {
        let n = per_replication.len();
        if n == 0 {
            return Err(FdaError::InsufficientData {
                needed: 1,
                got: 0,
                context: "R² report".into(),
            });
        }
        let r2_e = per_replication.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let r2_p = per_replication.iter().map(|p| p.1).sum::<f64>() / n as f64;
        Ok(Self {
            r2_e,
            r2_p,
            per_replication,
            n_replications: n,
        })
    }

    pub fn median_r2_e(&self) -> f64 {
        median(self.per_replication.iter().map(|p| p.0).collect())
    }

    pub fn median_r2_p(&self) -> f64 {
        median(self.per_replication.iter().map(|p| p.1).collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn double_center(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|j| d.column(j).sum() / n as f64).collect();
    let grand = d.sum() / (n * n) as f64;
    DMatrix::from_fn(n, n, |i, j| d[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Distance correlation (V-statistic) from the L2 distances within each sample.
pub fn distance_correlation(a: &FunctionalSample, b: &FunctionalSample) -> Result<f64> {
    let n = a.n();
    if b.n() != n {
        return Err(FdaError::DimensionMismatch(format!(
            "samples have {n} and {} curves",
            b.n()
        )));
    }
    if n < 4 {
        return Err(FdaError::InsufficientData {
            needed: 4,
            got: n,
            context: "distance correlation".into(),
        });
    }
    let ca = double_center(&pairwise_distances(a));
    let cb = double_center(&pairwise_distances(b));
    let dcov = ca.component_mul(&cb).mean();
    let va = ca.component_mul(&ca).mean();
    let vb = cb.component_mul(&cb).mean();
    if !(va > 0.0 && vb > 0.0) {
        return Err(FdaError::Degenerate(
            "a sample with all curves equal has zero distance variance".into(),
        ));
    }
    let r2 = dcov / (va * vb).sqrt();
    Ok(r2.clamp(0.0, 1.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMapOptions {
    /// Response PC whose score is mapped (0-based).
    pub response_component: usize,
    /// Covariate whose first two PCs span the map (0-based).
    pub covariate: usize,
    /// Points per axis.
    pub resolution: usize,
    /// Score ranges for the two axes; defaults to the training score ranges.
    #[serde(default)]
    pub ranges: Option<[(f64, f64); 2]>,
    /// Hold the remaining covariates at their training means (required when J > 1).
    #[serde(default)]
    pub fix_others: bool,
}

impl Default for ScoreMapOptions {
    fn default() -> Self {
        Self {
            response_component: 0,
            covariate: 0,
            resolution: 25,
            ranges: None,
            fix_others: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMap {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `values[a * x2.len() + b]` is the response score predicted at `(x1[a], x2[b])`.
    pub values: Vec<f64>,
    /// Convex hull of the training scores, counter-clockwise.
    pub hull: Vec<(f64, f64)>,
}

impl ScoreMap {
    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.x2.len() + b]
    }
}

/// Predicted response-PC score over a grid of synthetic covariates
/// `μ + x₁ η₁ + x₂ η₂`, together with the hull of the training scores.
///
/// `train_xs` and `train_y` are the training data of `model`; the PC bases
/// are refitted from them (two components for the covariate, the default PVE
/// rule for the response).
pub fn pc_score_map<M: FunctionalRegressor + ?Sized>(
    model: &M,
    train_xs: &[FunctionalSample],
    train_y: &FunctionalSample,
    options: &ScoreMapOptions,
) -> Result<ScoreMap> {
    let j_count = model.n_covariates();
    if train_xs.len() != j_count {
        return Err(FdaError::DimensionMismatch(format!(
            "model has {j_count} covariates, got {} training samples",
            train_xs.len()
        )));
    }
    if j_count > 1 && !options.fix_others {
        return Err(FdaError::Unsupported(
            "score maps of multi-covariate models need the other covariates fixed at their means"
                .into(),
        ));
    }
    if options.covariate >= j_count {
        return Err(FdaError::IndexOutOfRange {
            index: options.covariate,
            len: j_count,
        });
    }
    if options.resolution < 2 {
        return Err(FdaError::InvalidArgument(
            "score map resolution must be at least 2".into(),
        ));
    }
    let x = &train_xs[options.covariate];
    let x_basis = fit_pc(x, BasisSpec::Fixed(2))?;
    if x_basis.size() < 2 {
        return Err(FdaError::Degenerate(
            "covariate has fewer than two principal components".into(),
        ));
    }
    let y_basis: PCBasis = fit_pc(train_y, BasisSpec::default())?;
    if options.response_component >= y_basis.size() {
        return Err(FdaError::IndexOutOfRange {
            index: options.response_component,
            len: y_basis.size(),
        });
    }
    let scores = project(x, &x_basis)?;
    let points: Vec<(f64, f64)> = (0..scores.nrows())
        .map(|i| (scores.get(i, 0), scores.get(i, 1)))
        .collect();
    let ranges = options.ranges.unwrap_or_else(|| {
        let r = |k: usize| {
            let c = scores.column(k);
            (
                c.iter().cloned().fold(f64::INFINITY, f64::min),
                c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        [r(0), r(1)]
    });
    let g = options.resolution;
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..g)
            .map(|a| lo + (hi - lo) * a as f64 / (g - 1) as f64)
            .collect()
    };
    let x1 = axis(ranges[0]);
    let x2 = axis(ranges[1]);

    let mut rows = Vec::with_capacity(g * g);
    for &a in &x1 {
        for &b in &x2 {
            rows.push(x_basis.curve_from_scores(&[a, b])?);
        }
    }
    let synthetic = FunctionalSample::from_rows(x.grid().clone(), &rows)?;
    let inputs: Vec<FunctionalSample> = train_xs
        .iter()
        .enumerate()
        .map(|(j, xj)| {
            if j == options.covariate {
                Ok(synthetic.clone())
            } else {
                FunctionalSample::repeat(xj.grid().clone(), &xj.mean_curve(), g * g)
            }
        })
        .collect::<Result<_>>()?;
    let pred = model.predict(&inputs)?;
    let values = pred
        .curves()
        .map(|c| project_curve(c, &y_basis).map(|s| s[options.response_component]))
        .collect::<Result<Vec<_>>>()?;

    Ok(ScoreMap {
        x1,
        x2,
        values,
        hull: convex_hull(&points),
    })
}

/// Monotone-chain convex hull, counter-clockwise, without repeated endpoints.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for &pt in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    let lower_len = hull.len() + 1;
    for &pt in p.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0
        {
            hull.pop();
        }
        hull.push(pt);
    }
    hull.pop();
    hull
}

/// Largest absolute residual of the least-squares plane through a score map,
/// and the map's range (max - min).
pub fn plane_fit_residual(map: &ScoreMap) -> (f64, f64) {
    let (g1, g2) = (map.x1.len(), map.x2.len());
    let design = DMatrix::from_fn(g1 * g2, 3, |r, c| match c {
        0 => 1.0,
        1 => map.x1[r / g2],
        _ => map.x2[r % g2],
    });
    let z = nalgebra::DVector::from_column_slice(&map.values);
    let svd = design.clone().svd(true, true);
    let coef = svd
        .solve(&z, 1e-12)
        .expect("SVD computed with both factors");
    let resid = &z - design * coef;
    let max = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min);
    (resid.amax(), max - min)
}

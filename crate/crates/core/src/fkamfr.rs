//! Functional kernel additive model with functional response.
//!
//! `Y = α + Σ_j Φ_j(X^j) + ε`, each `Φ_j` a Nadaraya–Watson smoother driven
//! only by L2 distances between covariate curves. Components are fitted by
//! backfitting; bandwidths are chosen by leave-one-out cross-validation over
//! per-covariate grids of distance quantiles, searched coordinate-wise.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};
use crate::fdata::{cross_distances, distances_to, pairwise_distances, FunctionalSample, Grid};
use crate::{check_covariates, check_training_inputs, FunctionalRegressor};

/// Weights below this everywhere mean the query has no neighbours at this bandwidth.
pub const ISOLATION_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-u²/2)`
    #[default]
    Gaussian,
    /// `1 - u²` on `[0, 1]`
    Epanechnikov,
    /// `1 - u` on `[0, 1]`
    Triangular,
    /// `1` on `[0, 1]`
    Uniform,
}

impl Kernel {
    /// Kernel weight at scaled distance `u >= 0`.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => (1.0 - u * u).max(0.0),
            Kernel::Triangular => (1.0 - u).max(0.0),
            Kernel::Uniform => {
                if u <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkamfrConfig {
    #[serde(default)]
    pub kernel: Kernel,
    /// Number of quantiles in each bandwidth grid.
    pub grid_size: usize,
    /// Probability range of the distance quantiles.
    pub prob_range: (f64, f64),
    /// Coordinate-descent sweeps over the covariates.
    pub max_sweeps: usize,
    /// Backfitting stops when every component moves less than this fraction
    /// of the root-mean-square response norm.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Skip the search and use these bandwidths.
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
}

impl Default for FkamfrConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Gaussian,
            grid_size: 15,
            prob_range: (0.02, 0.50),
            max_sweeps: 3,
            tolerance: 1e-4,
            max_iter: 50,
            bandwidths: None,
        }
    }
}

impl FkamfrConfig {
    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.grid_size == 0 {
            problems.push("grid_size must be at least 1".to_string());
        }
        let (lo, hi) = self.prob_range;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            problems.push(format!(
                "prob_range must satisfy 0 < lo < hi <= 1, got ({lo}, {hi})"
            ));
        }
        if self.max_sweeps == 0 {
            problems.push("max_sweeps must be at least 1".to_string());
        }
        if !(self.tolerance > 0.0) {
            problems.push(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if self.max_iter == 0 {
            problems.push("max_iter must be at least 1".to_string());
        }
        if let Some(h) = &self.bandwidths {
            if h.len() != n_covariates {
                problems.push(format!(
                    "{} bandwidths for {n_covariates} covariates",
                    h.len()
                ));
            }
            if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                problems.push("bandwidths must be positive and finite".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FdaError::InvalidArgument(problems.join("; ")))
        }
    }
}

/// One Nadaraya–Watson evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NwEstimate {
    pub curve: Vec<f64>,
    /// Set when every weight was below [`ISOLATION_THRESHOLD`] and the plain mean was used.
    pub isolated: bool,
}

/// `Σ w_i Y_i / Σ w_i` with `w_i = K(d(query, X_i)/h)`.
pub fn nw_component(
    query: &[f64],
    train_x: &FunctionalSample,
    pseudo_y: &FunctionalSample,
    h: f64,
    kernel: Kernel,
) -> Result<NwEstimate> {
    if !(h > 0.0) {
        return Err(FdaError::InvalidArgument(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    if train_x.n() != pseudo_y.n() {
        return Err(FdaError::DimensionMismatch(format!(
            "{} training curves but {} pseudo-responses",
            train_x.n(),
            pseudo_y.n()
        )));
    }
    let d = distances_to(query, train_x)?;
    let (w, isolated) = normalized_weights(&d, h, kernel);
    let mut curve = vec![0.0; pseudo_y.r()];
    for (wi, row) in w.iter().zip(pseudo_y.curves()) {
        for (c, v) in curve.iter_mut().zip(row) {
            *c += wi * v;
        }
    }
    Ok(NwEstimate { curve, isolated })
}

/// Kernel weights summing to one; uniform if the query is isolated.
fn normalized_weights(d: &[f64], h: f64, kernel: Kernel) -> (Vec<f64>, bool) {
    let mut w: Vec<f64> = d.iter().map(|&di| kernel.eval(di / h)).collect();
    let max = w.iter().cloned().fold(0.0f64, f64::max);
    if max < ISOLATION_THRESHOLD {
        let u = 1.0 / d.len() as f64;
        return (vec![u; d.len()], true);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (w, false)
}

/// Row-stochastic smoother matrix. With `leave_one_out` the diagonal is zeroed
/// before normalizing, so row `i` never sees observation `i`.
fn smoother_matrix(
    dist: &DMatrix<f64>,
    h: f64,
    kernel: Kernel,
    leave_one_out: bool,
) -> (DMatrix<f64>, usize) {
    let n = dist.nrows();
    let mut s = DMatrix::zeros(n, n);
    let mut isolated = 0;
    for i in 0..n {
        let mut d: Vec<f64> = dist.row(i).iter().copied().collect();
        if leave_one_out {
            d.remove(i);
        }
        let (w, iso) = normalized_weights(&d, h, kernel);
        isolated += iso as usize;
        let mut it = w.into_iter();
        for k in 0..n {
            if leave_one_out && k == i {
                continue;
            }
            s[(i, k)] = it.next().unwrap_or(0.0);
        }
    }
    (s, isolated)
}

/// Empirical quantiles of the positive lower-triangle distances at `count`
/// equally spaced probabilities in `prob_range`; ascending, without duplicates.
pub fn bandwidth_grid(
    distances: &DMatrix<f64>,
    count: usize,
    prob_range: (f64, f64),
) -> Result<Vec<f64>> {
    let (lo, hi) = prob_range;
    if count == 0 || !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return Err(FdaError::InvalidArgument(format!(
            "bandwidth grid needs count >= 1 and 0 < lo < hi <= 1, got {count} and ({lo}, {hi})"
        )));
    }
    let n = distances.nrows();
    let mut lower: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |k| (i, k)))
        .map(|(i, k)| distances[(i, k)])
        .filter(|&d| d > 0.0)
        .collect();
    if lower.is_empty() {
        return Err(FdaError::Degenerate(
            "all pairwise distances are zero".into(),
        ));
    }
    lower.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = (0..count)
        .map(|k| {
            let p = if count == 1 {
                lo
            } else {
                lo + (hi - lo) * k as f64 / (count - 1) as f64
            };
            crate::smoother::quantile(&lower, p)
        })
        .collect();
    grid.dedup();
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthCandidate {
    pub bandwidths: Vec<f64>,
    pub loo_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkamfrModel {
    train_xs: Vec<FunctionalSample>,
    train_y: FunctionalSample,
    kernel: Kernel,
    bandwidths: Vec<f64>,
    alpha: Vec<f64>,
    /// Pseudo-responses used in the final update of each component.
    pseudo_responses: Vec<FunctionalSample>,
    /// `Φ̂_j` at the training curves.
    component_fits: Vec<FunctionalSample>,
    fitted: FunctionalSample,
    iterations_used: usize,
    converged: bool,
    bandwidth_grids: Vec<Vec<f64>>,
    candidates: Vec<BandwidthCandidate>,
}

impl FkamfrModel {
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn component_fits(&self) -> &[FunctionalSample] {
        &self.component_fits
    }

    pub fn pseudo_responses(&self) -> &[FunctionalSample] {
        &self.pseudo_responses
    }

    pub fn fitted(&self) -> &FunctionalSample {
        &self.fitted
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn train_xs(&self) -> &[FunctionalSample] {
        &self.train_xs
    }

    pub fn train_y(&self) -> &FunctionalSample {
        &self.train_y
    }

    pub fn bandwidth_grids(&self) -> &[Vec<f64>] {
        &self.bandwidth_grids
    }

    /// Every bandwidth vector evaluated during selection, in evaluation order.
    pub fn candidates(&self) -> &[BandwidthCandidate] {
        &self.candidates
    }

    /// Leave-one-out objective of the selected bandwidths (`NaN` if they were fixed).
    pub fn loo_objective(&self) -> f64 {
        self.candidates
            .iter()
            .find(|c| c.bandwidths == self.bandwidths)
            .map_or(f64::NAN, |c| c.loo_objective)
    }

    /// Predictions plus the number of (query, covariate) pairs that fell back to the plain mean.
    pub fn predict_detailed(&self, xs: &[FunctionalSample]) -> Result<(FunctionalSample, usize)> {
        let n = check_covariates(self, xs)?;
        let r = self.alpha.len();
        let mut out = DMatrix::from_fn(n, r, |_, t| self.alpha[t]);
        let mut isolated = 0;
        for (j, x) in xs.iter().enumerate() {
            let d = cross_distances(x, &self.train_xs[j])?;
            let mut w = DMatrix::zeros(n, d.ncols());
            for i in 0..n {
                let row: Vec<f64> = d.row(i).iter().copied().collect();
                let (wi, iso) = normalized_weights(&row, self.bandwidths[j], self.kernel);
                isolated += iso as usize;
                for (k, v) in wi.into_iter().enumerate() {
                    w[(i, k)] = v;
                }
            }
            out += w * self.pseudo_responses[j].to_matrix();
        }
        if isolated > 0 {
            log::warn!("{isolated} isolated queries fell back to the unweighted mean");
        }
        Ok((
            FunctionalSample::from_matrix(self.train_y.grid().clone(), &out)?,
            isolated,
        ))
    }
}

impl FunctionalRegressor for FkamfrModel {
    fn n_covariates(&self) -> usize {
        self.train_xs.len()
    }

    fn covariate_grid(&self, j: usize) -> &Grid {
        self.train_xs[j].grid()
    }

    fn response_grid(&self) -> &Grid {
        self.train_y.grid()
    }

    fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample> {
        self.predict_detailed(xs).map(|(p, _)| p)
    }
}

/// Backfitting state after convergence or the iteration cap.
struct Backfit {
    components: Vec<DMatrix<f64>>,
    pseudo: Vec<DMatrix<f64>>,
    iterations: usize,
    converged: bool,
}

/// Backfitting with fixed smoother matrices; `alpha` is subtracted from `y` up front.
fn backfit(
    yc: &DMatrix<f64>,
    smoothers: &[&DMatrix<f64>],
    w: &[f64],
    delta: f64,
    max_iter: usize,
) -> Backfit {
    let (n, r) = yc.shape();
    let j_count = smoothers.len();
    let mut components = vec![DMatrix::zeros(n, r); j_count];
    let mut pseudo = vec![DMatrix::zeros(n, r); j_count];
    let mut total = DMatrix::<f64>::zeros(n, r);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let previous = components.clone();
        for j in 0..j_count {
            // Y - α - Σ_{k≠j} Φ_k, using the freshest Φ_k available
            let p = yc - (&total - &components[j]);
            let new = smoothers[j] * &p;
            total += &new - &components[j];
            components[j] = new;
            pseudo[j] = p;
        }
        // Every smoother reproduces constants, so a constant curve can move
        // between components without changing the fit. Park it in the first
        // component; otherwise the components drift linearly forever.
        for j in 1..j_count {
            let shift = components[j].row_mean();
            for mut row in components[j].row_iter_mut() {
                row -= &shift;
            }
            for mut row in pseudo[j].row_iter_mut() {
                row -= &shift;
            }
            for mut row in components[0].row_iter_mut() {
                row += &shift;
            }
            for mut row in pseudo[0].row_iter_mut() {
                row += &shift;
            }
        }
        let max_change = components
            .iter()
            .zip(&previous)
            .map(|(c, p)| mean_row_norm(&(c - p), w))
            .fold(0.0f64, f64::max);
        if max_change < delta {
            converged = true;
            break;
        }
    }
    Backfit {
        components,
        pseudo,
        iterations,
        converged,
    }
}

fn mean_row_norm(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = m.nrows();
    (0..n)
        .map(|i| {
            m.row(i)
                .iter()
                .zip(w)
                .map(|(v, wt)| wt * v * v)
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64
}

fn sum_row_energy(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    m.row_iter()
        .map(|row| row.iter().zip(w).map(|(v, wt)| wt * v * v).sum::<f64>())
        .sum()
}

pub fn fit_fkamfr(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    config: &FkamfrConfig,
) -> Result<FkamfrModel> {
    let n = check_training_inputs(y, xs)?;
    config.validate(xs.len())?;
    if n < 5 {
        return Err(FdaError::InsufficientData {
            needed: 5,
            got: n,
            context: "kernel additive model".into(),
        });
    }
    let w = y.grid().weights().to_vec();
    let alpha = y.mean_curve();
    let ym = y.to_matrix();
    let yc = DMatrix::from_fn(n, y.r(), |i, t| ym[(i, t)] - alpha[t]);
    let rms = (sum_row_energy(&ym, &w) / n as f64).sqrt();
    let delta = config.tolerance * if rms > 0.0 { rms } else { 1.0 };

    let distances: Vec<DMatrix<f64>> = xs.par_iter().map(pairwise_distances).collect();
    let grids = match &config.bandwidths {
        Some(h) => h.iter().map(|&v| vec![v]).collect::<Vec<_>>(),
        None => distances
            .iter()
            .enumerate()
            .map(|(j, d)| {
                bandwidth_grid(d, config.grid_size, config.prob_range).map_err(|e| match e {
                    FdaError::Degenerate(m) => FdaError::Degenerate(format!("covariate {j}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let (selected, candidates) = if config.bandwidths.is_some() {
        (vec![0; xs.len()], Vec::new())
    } else {
        let smoothers: Vec<Vec<DMatrix<f64>>> = distances
            .iter()
            .zip(&grids)
            .map(|(d, g)| {
                g.par_iter()
                    .map(|&h| smoother_matrix(d, h, config.kernel, true).0)
                    .collect()
            })
            .collect();
        coordinate_search(&yc, &smoothers, &grids, &w, delta, config)
    };

    let bandwidths: Vec<f64> = selected.iter().zip(&grids).map(|(&i, g)| g[i]).collect();
    let full: Vec<DMatrix<f64>> = distances
        .iter()
        .zip(&bandwidths)
        .map(|(d, &h)| smoother_matrix(d, h, config.kernel, false).0)
        .collect();
    let refs: Vec<&DMatrix<f64>> = full.iter().collect();
    let fit = backfit(&yc, &refs, &w, delta, config.max_iter);
    if !fit.converged {
        log::warn!(
            "kernel backfitting did not converge in {} iterations",
            fit.iterations
        );
    }

    let grid = y.grid().clone();
    let mut fitted = DMatrix::from_fn(n, y.r(), |_, t| alpha[t]);
    for c in &fit.components {
        fitted += c;
    }
    let to_sample = |m: &DMatrix<f64>| FunctionalSample::from_matrix(grid.clone(), m);
    Ok(FkamfrModel {
        train_xs: xs.to_vec(),
        train_y: y.clone(),
        kernel: config.kernel,
        bandwidths,
        alpha,
        pseudo_responses: fit.pseudo.iter().map(to_sample).collect::<Result<_>>()?,
        component_fits: fit
            .components
            .iter()
            .map(to_sample)
            .collect::<Result<_>>()?,
        fitted: to_sample(&fitted)?,
        iterations_used: fit.iterations,
        converged: fit.converged,
        bandwidth_grids: grids,
        candidates,
    })
}

/// Coordinate descent over grid indices minimizing the leave-one-out objective.
fn coordinate_search(
    yc: &DMatrix<f64>,
    loo_smoothers: &[Vec<DMatrix<f64>>],
    grids: &[Vec<f64>],
    w: &[f64],
    delta: f64,
    config: &FkamfrConfig,
) -> (Vec<usize>, Vec<BandwidthCandidate>) {
    let objective = |idx: &[usize]| -> f64 {
        let refs: Vec<&DMatrix<f64>> = idx.iter().zip(loo_smoothers).map(|(&i, s)| &s[i]).collect();
        let fit = backfit(yc, &refs, w, delta, config.max_iter);
        let mut resid = yc.clone();
        for c in &fit.components {
            resid -= c;
        }
        sum_row_energy(&resid, w)
    };

    let mut current: Vec<usize> = grids.iter().map(|g| (g.len() - 1) / 2).collect();
    let mut seen: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    for _ in 0..config.max_sweeps {
        let mut moved = false;
        for j in 0..grids.len() {
            let trials: Vec<Vec<usize>> = (0..grids[j].len())
                .map(|i| {
                    let mut v = current.clone();
                    v[j] = i;
                    v
                })
                .collect();
            let fresh: Vec<&Vec<usize>> =
                trials.iter().filter(|t| !seen.contains_key(*t)).collect();
            let values: Vec<f64> = fresh.par_iter().map(|t| objective(t)).collect();
            for (t, v) in fresh.into_iter().zip(values) {
                seen.insert(t.clone(), v);
                order.push(t.clone());
            }
            // smallest objective, ties to the smallest grid index
            let mut best = current[j];
            let mut best_val = seen[&current];
            for (i, t) in trials.iter().enumerate() {
                let v = seen[t];
                if v < best_val || (v == best_val && i < best) {
                    best = i;
                    best_val = v;
                }
            }
            if best != current[j] {
                current[j] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let candidates = order
        .into_iter()
        .map(|idx| BandwidthCandidate {
            bandwidths: idx.iter().zip(grids).map(|(&i, g)| g[i]).collect(),
            loo_objective: seen[&idx],
        })
        .collect();
    (current, candidates)
}

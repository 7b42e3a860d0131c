//! Principal-component and Fourier bases: fitting, truncation, projection and
//! reconstruction.
//!
//! The covariance eigenproblem is discretized as `W^{1/2} C W^{1/2}` with `W`
//! the diagonal trapezoid weights, so the mapped-back eigenfunctions
//! `η_k = W^{-1/2} v_k` are orthonormal under the grid inner product.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FdaError, Result};
use crate::fdata::{center, weighted_dot, FunctionalSample, Grid};

/// Relative eigenvalue floor below which components are discarded.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Default proportion of variability explained used to truncate PC bases.
pub const DEFAULT_PVE: f64 = 0.95;

/// How many principal components to keep for one functional variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// Smallest count whose cumulative PVE reaches the target in `(0, 1]`.
    Pve(f64),
    /// Exactly this many components (subject to the eigenvalue floor).
    Fixed(usize),
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::Pve(DEFAULT_PVE)
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSpec::Pve(p) if !(p > 0.0 && p <= 1.0) => Err(FdaError::InvalidArgument(format!(
                "PVE target must lie in (0, 1], got {p}"
            ))),
            BasisSpec::Fixed(0) => Err(FdaError::InvalidArgument(
                "fixed basis size must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Basis sizes for the response and each covariate of a regression.
///
/// `covariates` may be empty (default for every covariate), hold a single entry
/// (broadcast), or hold one entry per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub response: BasisSpec,
    #[serde(default)]
    pub covariates: Vec<BasisSpec>,
}

impl BasisConfig {
    pub fn uniform(spec: BasisSpec) -> Self {
        Self {
            response: spec,
            covariates: vec![spec],
        }
    }

    pub fn covariate(&self, j: usize) -> BasisSpec {
        match self.covariates.len() {
            0 => BasisSpec::default(),
            1 => self.covariates[0],
            _ => self.covariates[j],
        }
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        self.response.validate()?;
        if self.covariates.len() > 1 && self.covariates.len() != n_covariates {
            return Err(FdaError::InvalidArgument(format!(
                "{} covariate basis specs for {n_covariates} covariates",
                self.covariates.len()
            )));
        }
        self.covariates.iter().try_for_each(|c| c.validate())
    }
}

/// Common view over an orthonormal basis evaluated on a grid.
pub trait Basis {
    fn grid(&self) -> &Grid;
    fn size(&self) -> usize;
    fn function(&self, k: usize) -> &[f64];
    /// Curve subtracted before projecting; `None` means zero.
    fn mean(&self) -> Option<&[f64]>;
}

/// Functional principal components of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PCBasis {
    grid: Grid,
    mean: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// Cumulative proportion of variance explained by the first `k+1` components.
    pve: Vec<f64>,
    total_variance: f64,
}

impl PCBasis {
    pub fn mean_curve(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.eigenfunctions
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn pve(&self) -> &[f64] {
        &self.pve
    }

    /// `(1/(n-1)) Σ ‖X_i - X̄‖²` of the training sample.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// The first `k` components of this basis.
    pub fn truncated(&self, k: usize) -> Result<PCBasis> {
        if k == 0 || k > self.eigenvalues.len() {
            return Err(FdaError::InvalidArgument(format!(
                "cannot truncate a {}-component basis to {k}",
                self.eigenvalues.len()
            )));
        }
        Ok(PCBasis {
            grid: self.grid.clone(),
            mean: self.mean.clone(),
            eigenfunctions: self.eigenfunctions[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            pve: self.pve[..k].to_vec(),
            total_variance: self.total_variance,
        })
    }

    #[cfg(test)]
    pub(crate) fn eigenfunctions_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.eigenfunctions
    }

    /// Synthesizes `mean + Σ_k scores[k] η_k`.
    pub fn curve_from_scores(&self, scores: &[f64]) -> Result<Vec<f64>> {
        reconstruct_curve(scores, self)
    }
}

impl Basis for PCBasis {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn size(&self) -> usize {
        self.eigenfunctions.len()
    }
    fn function(&self, k: usize) -> &[f64] {
        &self.eigenfunctions[k]
    }
    fn mean(&self) -> Option<&[f64]> {
        Some(&self.mean)
    }
}

/// Fits the functional principal components of `sample`.
pub fn fit_pc(sample: &FunctionalSample, spec: BasisSpec) -> Result<PCBasis> {
    spec.validate()?;
    let n = sample.n();
    if n < 2 {
        return Err(FdaError::InsufficientData {
            needed: 2,
            got: n,
            context: "principal components".into(),
        });
    }
    let grid = sample.grid().clone();
    let r = grid.len();
    if let BasisSpec::Fixed(k) = spec {
        let max_k = (n - 1).min(r);
        if k > max_k {
            return Err(FdaError::InvalidArgument(format!(
                "fixed basis size {k} exceeds min(n-1, r) = {max_k}"
            )));
        }
    }

    let (mean, centered) = center(sample);
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut a = centered.to_matrix();
    for (j, sw) in sqrt_w.iter().enumerate() {
        a.column_mut(j).scale_mut(*sw);
    }
    let cov: DMatrix<f64> = a.transpose() * &a / (n - 1) as f64;
    let total_variance = cov.trace();
    if !(total_variance > 0.0) {
        return Err(FdaError::Degenerate(
            "sample has zero variance; no principal components exist".into(),
        ));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lead = eig.eigenvalues[order[0]];
    let usable = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] >= EIGENVALUE_FLOOR * lead)
        .count()
        .min(n - 1)
        .max(1);

    let k = match spec {
        BasisSpec::Fixed(k) => k.min(usable),
        BasisSpec::Pve(target) => {
            let mut cum = 0.0;
            let mut k = usable;
            for (idx, &i) in order.iter().take(usable).enumerate() {
                cum += eig.eigenvalues[i];
                if cum / total_variance >= target - 1e-12 {
                    k = idx + 1;
                    break;
                }
            }
            k
        }
    };

    let mut eigenfunctions = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut pve = Vec::with_capacity(k);
    let mut cum = 0.0;
    for &i in order.iter().take(k) {
        let lambda = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        let mut eta: Vec<f64> = v.iter().zip(&sqrt_w).map(|(x, sw)| x / sw).collect();
        fix_sign(&mut eta);
        cum += lambda;
        eigenfunctions.push(eta);
        eigenvalues.push(lambda);
        pve.push((cum / total_variance).min(1.0));
    }

    Ok(PCBasis {
        grid,
        mean,
        eigenfunctions,
        eigenvalues,
        pve,
        total_variance,
    })
}

/// Flips `f` so its entry of largest magnitude is positive.
fn fix_sign(f: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &v in f.iter() {
        if v.abs() > best.abs() {
            best = v;
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        f.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Constant plus sine/cosine pairs, each with unit L2 norm on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    grid: Grid,
    functions: Vec<Vec<f64>>,
}

impl FourierBasis {
    /// Order: constant, sin(ωt), cos(ωt), sin(2ωt), cos(2ωt), ... with period `b - a`.
    pub fn new(grid: Grid, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(FdaError::InvalidArgument(
                "Fourier basis needs at least one function".into(),
            ));
        }
        let a = grid.start();
        let period = grid.range();
        let c0 = 1.0 / period.sqrt();
        let c = (2.0 / period).sqrt();
        let mut functions = Vec::with_capacity(size);
        functions.push(vec![c0; grid.len()]);
        for idx in 1..size {
            let freq = idx.div_ceil(2) as f64;
            let f: Vec<f64> = grid
                .points()
                .iter()
                .map(|&t| {
                    let x = 2.0 * PI * freq * (t - a) / period;
                    if idx % 2 == 1 {
                        c * x.sin()
                    } else {
                        c * x.cos()
                    }
                })
                .collect();
            functions.push(f);
        }
        Ok(Self { grid, functions })
    }
}

impl Basis for FourierBasis {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn size(&self) -> usize {
        self.functions.len()
    }
    fn function(&self, k: usize) -> &[f64] {
        &self.functions[k]
    }
    fn mean(&self) -> Option<&[f64]> {
        None
    }
}

/// Basis coefficients, one row per curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * k {
            return Err(FdaError::DimensionMismatch(format!(
                "{} scores for a {n}x{k} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FdaError::InvalidArgument("non-finite score".into()));
        }
        Ok(Self { n, k, values })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            values: vec![0.0; n * k],
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            values.extend(m.row(i).iter());
        }
        Self::new(m.nrows(), m.ncols(), values)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.values)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.k + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, k)).collect()
    }
}

/// Coefficients of one curve: `⟨curve - mean, φ_k⟩`.
pub fn project_curve<B: Basis + ?Sized>(curve: &[f64], basis: &B) -> Result<Vec<f64>> {
    let grid = basis.grid();
    if curve.len() != grid.len() {
        return Err(FdaError::DimensionMismatch(format!(
            "curve has {} values, basis grid has {}",
            curve.len(),
            grid.len()
        )));
    }
    let w = grid.weights();
    let centered: Vec<f64> = match basis.mean() {
        Some(m) => curve.iter().zip(m).map(|(c, m)| c - m).collect(),
        None => curve.to_vec(),
    };
    Ok((0..basis.size())
        .map(|k| weighted_dot(w, &centered, basis.function(k)))
        .collect())
}

pub fn project<B: Basis + ?Sized>(sample: &FunctionalSample, basis: &B) -> Result<ScoreMatrix> {
    sample
        .grid()
        .ensure_matches(basis.grid(), "projection onto basis")?;
    let mut values = Vec::with_capacity(sample.n() * basis.size());
    for c in sample.curves() {
        values.extend(project_curve(c, basis)?);
    }
    ScoreMatrix::new(sample.n(), basis.size(), values)
}

pub fn reconstruct_curve<B: Basis + ?Sized>(scores: &[f64], basis: &B) -> Result<Vec<f64>> {
    if scores.len() != basis.size() {
        return Err(FdaError::DimensionMismatch(format!(
            "{} scores for a basis of size {}",
            scores.len(),
            basis.size()
        )));
    }
    let mut out = match basis.mean() {
        Some(m) => m.to_vec(),
        None => vec![0.0; basis.grid().len()],
    };
    for (k, s) in scores.iter().enumerate() {
        for (o, f) in out.iter_mut().zip(basis.function(k)) {
            *o += s * f;
        }
    }
    Ok(out)
}

pub fn reconstruct<B: Basis + ?Sized>(scores: &ScoreMatrix, basis: &B) -> Result<FunctionalSample> {
    if scores.ncols() != basis.size() {
        return Err(FdaError::DimensionMismatch(format!(
            "score matrix has {} columns, basis has {} functions",
            scores.ncols(),
            basis.size()
        )));
    }
    let mut values = Vec::with_capacity(scores.nrows() * basis.grid().len());
    for i in 0..scores.nrows() {
        values.extend(reconstruct_curve(scores.row(i), basis)?);
    }
    FunctionalSample::new(basis.grid().clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::{inner_product, l2_norm};
    use proptest::prelude::*;

    fn unit_grid(r: usize) -> Grid {
        Grid::uniform(0.0, 1.0, r).unwrap()
    }

    /// Deterministic pseudo-random sample without touching the simulation module.
    fn wiggly_sample(n: usize, r: usize, seed: u64) -> FunctionalSample {
        let g = unit_grid(r);
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..6).map(|_| next()).collect();
                g.points()
                    .iter()
                    .map(|&t| {
                        c.iter()
                            .enumerate()
                            .map(|(k, ck)| ck * ((k + 1) as f64 * PI * t).sin() / (k + 1) as f64)
                            .sum::<f64>()
                            + 0.01 * next()
                    })
                    .collect()
            })
            .collect();
        FunctionalSample::from_rows(g, &rows).unwrap()
    }

    #[test]
    fn rank_one_sample_keeps_one_component() {
        let g = unit_grid(51);
        let rows: Vec<Vec<f64>> = [0.5, -1.0, 2.0, 0.3, -0.7]
            .iter()
            .map(|c| {
                g.points()
                    .iter()
                    .map(|&t| c * (2.0 * PI * t).sin())
                    .collect()
            })
            .collect();
        let s = FunctionalSample::from_rows(g, &rows).unwrap();
        let b = fit_pc(&s, BasisSpec::Pve(0.95)).unwrap();
        assert_eq!(b.size(), 1);
        assert!((b.pve()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn insufficient_and_degenerate() {
        let g = unit_grid(5);
        let one = FunctionalSample::from_rows(g.clone(), &[vec![1.0; 5]]).unwrap();
        assert!(matches!(
            fit_pc(&one, BasisSpec::default()),
            Err(FdaError::InsufficientData { .. })
        ));
        let flat = FunctionalSample::from_rows(g, &[vec![1.0; 5], vec![1.0; 5]]).unwrap();
        assert!(matches!(
            fit_pc(&flat, BasisSpec::default()),
            Err(FdaError::Degenerate(_))
        ));
        assert!(fit_pc(&flat, BasisSpec::Pve(1.5)).is_err());
    }

    #[test]
    fn orthonormal_sorted_signed() {
        let s = wiggly_sample(40, 51, 3);
        let b = fit_pc(&s, BasisSpec::Fixed(6)).unwrap();
        let g = s.grid();
        for i in 0..b.size() {
            for j in 0..b.size() {
                let ip = inner_product(g, b.function(i), b.function(j)).unwrap();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-8);
            }
            let f = b.function(i);
            let max = f
                .iter()
                .cloned()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(max > 0.0);
        }
        assert!(b.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        assert!(b.eigenvalues().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn eigenvalue_budget_matches_total_variance() {
        let s = wiggly_sample(30, 41, 9);
        let b = fit_pc(&s, BasisSpec::Pve(1.0)).unwrap();
        let (mean, _) = center(&s);
        let direct = s.energy_about(&mean).unwrap() / (s.n() - 1) as f64;
        assert!((b.total_variance() - direct).abs() <= 1e-10 * direct);
        // the discarded tail is below the eigenvalue floor
        let sum: f64 = b.eigenvalues().iter().sum();
        assert!((sum - direct).abs() <= 1e-8 * direct);
    }

    #[test]
    fn project_mean_and_eigenfunction() {
        let s = wiggly_sample(25, 31, 5);
        let b = fit_pc(&s, BasisSpec::Fixed(4)).unwrap();
        let z = project_curve(b.mean_curve(), &b).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-10));
        let c: Vec<f64> = b
            .mean_curve()
            .iter()
            .zip(b.function(1))
            .map(|(m, e)| m + 3.0 * e)
            .collect();
        let z = project_curve(&c, &b).unwrap();
        for (k, v) in z.iter().enumerate() {
            let target = if k == 1 { 3.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction_error_is_orthogonal_complement() {
        // oracle: full-rank PC basis, complement energy = sum of discarded squared scores
        // plus the part outside the full sample span
        let s = wiggly_sample(30, 41, 11);
        let full = fit_pc(&s, BasisSpec::Fixed(29)).unwrap();
        let part = full.truncated(3).unwrap();
        let g = s.grid();
        let probe = s.curve(7).to_vec();
        let z_full = project_curve(&probe, &full).unwrap();
        let z_part = project_curve(&probe, &part).unwrap();
        let rec = reconstruct_curve(&z_part, &part).unwrap();
        let diff: Vec<f64> = probe.iter().zip(&rec).map(|(a, b)| a - b).collect();
        let err = l2_norm(g, &diff).unwrap().powi(2);
        let complement: f64 = z_full[full.size().min(3)..].iter().map(|v| v * v).sum();
        let rec_full = reconstruct_curve(&z_full, &full).unwrap();
        let outside: Vec<f64> = probe.iter().zip(&rec_full).map(|(a, b)| a - b).collect();
        let outside = l2_norm(g, &outside).unwrap().powi(2);
        assert!(
            (err - complement - outside).abs() < 1e-10,
            "{err} {complement} {outside}"
        );
    }

    #[test]
    fn zero_scores_reconstruct_mean() {
        let s = wiggly_sample(10, 21, 1);
        let b = fit_pc(&s, BasisSpec::Fixed(3)).unwrap();
        let rec = reconstruct(&ScoreMatrix::zeros(4, 3), &b).unwrap();
        for c in rec.curves() {
            assert_eq!(c, b.mean_curve());
        }
        assert!(reconstruct(&ScoreMatrix::zeros(4, 2), &b).is_err());
    }

    #[test]
    fn in_span_round_trip() {
        let s = wiggly_sample(20, 21, 2);
        let b = fit_pc(&s, BasisSpec::Fixed(3)).unwrap();
        let z = ScoreMatrix::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 0.3, 4.0]).unwrap();
        let curves = reconstruct(&z, &b).unwrap();
        let back = reconstruct(&project(&curves, &b).unwrap(), &b).unwrap();
        for (a, c) in curves.values().iter().zip(back.values()) {
            assert!((a - c).abs() < 1e-8);
        }
    }

    #[test]
    fn row_order_invariance() {
        let s = wiggly_sample(20, 31, 4);
        let rev: Vec<usize> = (0..20).rev().collect();
        let b1 = fit_pc(&s, BasisSpec::Fixed(4)).unwrap();
        let b2 = fit_pc(&s.select(&rev).unwrap(), BasisSpec::Fixed(4)).unwrap();
        for k in 0..4 {
            assert!((b1.eigenvalues()[k] - b2.eigenvalues()[k]).abs() < 1e-10);
            for (a, b) in b1.function(k).iter().zip(b2.function(k)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fourier_orthonormal() {
        let g = unit_grid(40);
        let f = FourierBasis::new(g.clone(), 9).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let ip = inner_product(&g, f.function(i), f.function(j)).unwrap();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-6, "{i} {j} {ip}");
            }
        }
    }

    #[test]
    fn fixed_size_bounds() {
        let s = wiggly_sample(5, 21, 8);
        assert!(fit_pc(&s, BasisSpec::Fixed(5)).is_err());
        assert!(fit_pc(&s, BasisSpec::Fixed(0)).is_err());
        assert_eq!(fit_pc(&s, BasisSpec::Fixed(4)).unwrap().size(), 4);
    }

    proptest! {
        #[test]
        fn project_after_reconstruct_is_identity(
            vals in prop::collection::vec(-10.0f64..10.0, 12)
        ) {
            let s = wiggly_sample(30, 31, 21);
            let b = fit_pc(&s, BasisSpec::Fixed(4)).unwrap();
            let z = ScoreMatrix::new(3, 4, vals).unwrap();
            let back = project(&reconstruct(&z, &b).unwrap(), &b).unwrap();
            for (a, c) in z.to_matrix().iter().zip(back.to_matrix().iter()) {
                prop_assert!((a - c).abs() < 1e-10 * a.abs().max(1.0));
            }
            let fb = FourierBasis::new(s.grid().clone(), 4).unwrap();
            let back = project(&reconstruct(&z, &fb).unwrap(), &fb).unwrap();
            for (a, c) in z.to_matrix().iter().zip(back.to_matrix().iter()) {
                prop_assert!((a - c).abs() < 1e-10 * a.abs().max(1.0));
            }
        }
    }
}

//! Penalized cubic regression splines for one-dimensional additive components.
//!
//! A [`PenalizedSpline`] holds everything that depends only on the abscissae:
//! the clamped B-spline basis with interior knots at sample quantiles, the
//! roughness penalty `∫ f''²`, and the Demmler–Reinsch diagonalization that
//! turns every fit into a diagonal shrinkage of `Qᵀy`. Fitting a response is
//! then `O(n · p)` per smoothing parameter, so the GCV search is cheap enough
//! to repeat inside backfitting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};

const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;
/// Relative ridge added to `BᵀB` before factorization; keeps sparse knot intervals solvable.
const GRAM_RIDGE: f64 = 1e-10;
const GCV_GRID: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    /// Number of cubic B-spline functions (at least 4).
    pub n_basis: usize,
    /// Upper bound on the effective degrees of freedom, intercept included.
    /// Values at or below 2 force a straight line.
    pub df_cap: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            n_basis: 10,
            df_cap: 5.0,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis < ORDER {
            return Err(FdaError::InvalidArgument(format!(
                "spline smoother needs at least {ORDER} basis functions, got {}",
                self.n_basis
            )));
        }
        if !(self.df_cap > 0.0) {
            return Err(FdaError::InvalidArgument(format!(
                "degrees-of-freedom cap must be positive, got {}",
                self.df_cap
            )));
        }
        Ok(())
    }
}

/// A fitted one-dimensional component: zero mean over its training abscissae,
/// linear continuation outside the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smoother1D {
    knots: Vec<f64>,
    coefficients: Vec<f64>,
    /// Subtracted so the training fitted values average to zero.
    offset: f64,
    /// `None` encodes an infinite smoothing parameter (straight line).
    lambda: Option<f64>,
    edf: f64,
    degenerate: bool,
}

impl Smoother1D {
    /// The identically-zero component used when the abscissae are constant.
    pub fn zero() -> Self {
        Self {
            knots: Vec::new(),
            coefficients: Vec::new(),
            offset: 0.0,
            lambda: None,
            edf: 0.0,
            degenerate: true,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn edf(&self) -> f64 {
        self.edf
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn lower(&self) -> f64 {
        self.knots[0]
    }

    fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let span = find_span(&self.knots, x);
        let (n0, n1, _) = basis_derivatives(&self.knots, span, x);
        let mut v = 0.0;
        let mut d = 0.0;
        for r in 0..ORDER {
            let c = self.coefficients[span - DEGREE + r];
            v += c * n0[r];
            d += c * n1[r];
        }
        (v, d)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let (a, b) = (self.lower(), self.upper());
        let raw = if x < a {
            let (v, d) = self.value_and_slope(a);
            v + d * (x - a)
        } else if x > b {
            let (v, d) = self.value_and_slope(b);
            v + d * (x - b)
        } else {
            self.value_and_slope(x).0
        };
        raw - self.offset
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Basis, penalty and spectral decomposition for fixed abscissae.
#[derive(Debug, Clone)]
pub struct PenalizedSpline {
    knots: Vec<f64>,
    n: usize,
    /// Orthonormal columns `B R⁻¹ U`.
    q: DMatrix<f64>,
    /// `R⁻¹ U`, maps shrunk spectral coordinates to spline coefficients.
    coef_map: DMatrix<f64>,
    /// Penalty eigenvalues, ascending; the first two are exactly zero.
    d: Vec<f64>,
    lambda_min: f64,
    linear_only: bool,
    degenerate: bool,
}

/// Result of smoothing one response vector.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub smoother: Smoother1D,
    /// Centered fitted values at the training abscissae.
    pub fitted: Vec<f64>,
    pub gcv: f64,
}

impl PenalizedSpline {
    pub fn new(x: &[f64], config: SmootherConfig) -> Result<Self> {
        config.validate()?;
        let n = x.len();
        if n < ORDER {
            return Err(FdaError::InsufficientData {
                needed: ORDER,
                got: n,
                context: "spline smoother".into(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FdaError::InvalidArgument("non-finite abscissa".into()));
        }
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (a, b) = (sorted[0], sorted[n - 1]);
        if b - a <= 1e-12 * a.abs().max(b.abs()).max(1.0) {
            return Ok(Self {
                knots: Vec::new(),
                n,
                q: DMatrix::zeros(n, 0),
                coef_map: DMatrix::zeros(0, 0),
                d: Vec::new(),
                lambda_min: 0.0,
                linear_only: true,
                degenerate: true,
            });
        }

        let mut distinct = sorted.clone();
        distinct.dedup();
        let p = config.n_basis.min(distinct.len()).max(ORDER);
        let knots = clamped_knots(&sorted, p);

        let mut design = DMatrix::zeros(n, p);
        for (i, &xi) in x.iter().enumerate() {
            let span = find_span(&knots, xi);
            let (n0, _, _) = basis_derivatives(&knots, span, xi);
            for r in 0..ORDER {
                design[(i, span - DEGREE + r)] = n0[r];
            }
        }
        let penalty = penalty_matrix(&knots, p);

        let mut gram = design.transpose() * &design;
        let ridge = GRAM_RIDGE * gram.trace() / p as f64;
        for k in 0..p {
            gram[(k, k)] += ridge;
        }
        let chol = gram.cholesky().ok_or_else(|| {
            FdaError::Degenerate("spline Gram matrix is not positive definite".into())
        })?;
        // Bᵀ B = Rᵀ R with R = Lᵀ
        let r = chol.l().transpose();
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| FdaError::Degenerate("singular spline Gram factor".into()))?;
        let mut m = r_inv.transpose() * &penalty * &r_inv;
        m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut u = DMatrix::zeros(p, p);
        let mut d = Vec::with_capacity(p);
        for (col, &i) in order.iter().enumerate() {
            u.set_column(col, &eig.eigenvectors.column(i));
            // straight lines are unpenalized
            d.push(if col < 2 {
                0.0
            } else {
                eig.eigenvalues[i].max(0.0)
            });
        }
        let coef_map = &r_inv * &u;
        let q = &design * &coef_map;

        let linear_only = config.df_cap <= 2.0;
        let lambda_min = if linear_only || config.df_cap >= p as f64 {
            0.0
        } else {
            solve_edf(&d, config.df_cap)
        };

        Ok(Self {
            knots,
            n,
            q,
            coef_map,
            d,
            lambda_min,
            linear_only,
            degenerate: false,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Effective degrees of freedom `Σ 1/(1 + λ d_i)`; `None` means `λ = ∞`.
    pub fn edf(&self, lambda: Option<f64>) -> f64 {
        edf(&self.d, lambda)
    }

    /// Smallest admissible smoothing parameter (set by the df cap).
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Fit with the smoothing parameter chosen by GCV above the df-cap bound.
    pub fn fit(&self, y: &[f64]) -> Result<SmoothFit> {
        self.check(y)?;
        if self.degenerate {
            return Ok(self.zero_fit());
        }
        let z = self.q.transpose() * DVector::from_column_slice(y);
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let zz = z.norm_squared();

        let mut best = (None, self.gcv(&z, yy, zz, None));
        if !self.linear_only {
            let lo = if self.lambda_min > 0.0 {
                self.lambda_min
            } else {
                solve_edf(&self.d, self.d.len() as f64 - 0.05)
            };
            let hi = solve_edf(&self.d, 2.05).max(lo * 10.0);
            let (llo, lhi) = (lo.ln(), hi.ln());
            let step = (lhi - llo) / (GCV_GRID - 1) as f64;
            let mut best_idx = None;
            for g in 0..GCV_GRID {
                let lam = (llo + step * g as f64).exp();
                let score = self.gcv(&z, yy, zz, Some(lam));
                if score < best.1 {
                    best = (Some(lam), score);
                    best_idx = Some(g);
                }
            }
            if let Some(g) = best_idx {
                // golden-section refinement between the neighbouring grid points
                let mut a = llo + step * (g as f64 - 1.0).max(0.0);
                let mut b = llo + step * ((g + 1).min(GCV_GRID - 1) as f64);
                let phi = 0.5 * (5f64.sqrt() - 1.0);
                let f = |t: f64| self.gcv(&z, yy, zz, Some(t.exp()));
                let mut c = b - phi * (b - a);
                let mut e = a + phi * (b - a);
                let (mut fc, mut fe) = (f(c), f(e));
                for _ in 0..40 {
                    if fc < fe {
                        b = e;
                        e = c;
                        fe = fc;
                        c = b - phi * (b - a);
                        fc = f(c);
                    } else {
                        a = c;
                        c = e;
                        fc = fe;
                        e = a + phi * (b - a);
                        fe = f(e);
                    }
                }
                let (t, ft) = if fc < fe { (c, fc) } else { (e, fe) };
                if ft < best.1 {
                    best = (Some(t.exp()), ft);
                }
            }
        }
        Ok(self.fit_with(&z, best.0, best.1))
    }

    /// Fit at a fixed smoothing parameter; `None` means `λ = ∞`.
    pub fn fit_lambda(&self, y: &[f64], lambda: Option<f64>) -> Result<SmoothFit> {
        self.check(y)?;
        if self.degenerate {
            return Ok(self.zero_fit());
        }
        if let Some(l) = lambda {
            if !(l >= 0.0) {
                return Err(FdaError::InvalidArgument(format!(
                    "smoothing parameter must be non-negative, got {l}"
                )));
            }
        }
        let z = self.q.transpose() * DVector::from_column_slice(y);
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let score = self.gcv(&z, yy, z.norm_squared(), lambda);
        Ok(self.fit_with(&z, lambda, score))
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n {
            return Err(FdaError::DimensionMismatch(format!(
                "smoother built on {} points, got {} responses",
                self.n,
                y.len()
            )));
        }
        Ok(())
    }

    fn zero_fit(&self) -> SmoothFit {
        SmoothFit {
            smoother: Smoother1D::zero(),
            fitted: vec![0.0; self.n],
            gcv: f64::NAN,
        }
    }

    fn gcv(&self, z: &DVector<f64>, yy: f64, zz: f64, lambda: Option<f64>) -> f64 {
        let mut rss = (yy - zz).max(0.0);
        for (zi, &di) in z.iter().zip(&self.d) {
            let keep = shrink(di, lambda);
            rss += (zi * (1.0 - keep)).powi(2);
        }
        let n = self.n as f64;
        let denom = n - edf(&self.d, lambda);
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        n * rss / (denom * denom)
    }

    fn fit_with(&self, z: &DVector<f64>, lambda: Option<f64>, gcv: f64) -> SmoothFit {
        let shrunk = DVector::from_iterator(
            z.len(),
            z.iter()
                .zip(&self.d)
                .map(|(zi, &di)| zi * shrink(di, lambda)),
        );
        let coef = &self.coef_map * &shrunk;
        let raw = &self.q * &shrunk;
        let offset = raw.mean();
        let fitted = raw.iter().map(|v| v - offset).collect();
        SmoothFit {
            smoother: Smoother1D {
                knots: self.knots.clone(),
                coefficients: coef.iter().copied().collect(),
                offset,
                lambda,
                edf: edf(&self.d, lambda),
                degenerate: false,
            },
            fitted,
            gcv,
        }
    }
}

/// Fraction of a spectral coordinate retained at smoothing level `lambda`.
fn shrink(d: f64, lambda: Option<f64>) -> f64 {
    match lambda {
        Some(l) => 1.0 / (1.0 + l * d),
        None if d == 0.0 => 1.0,
        None => 0.0,
    }
}

fn edf(d: &[f64], lambda: Option<f64>) -> f64 {
    d.iter().map(|&di| shrink(di, lambda)).sum()
}

/// `λ` with `edf(λ) = target`, for `2 < target < p`.
fn solve_edf(d: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if edf(d, Some(mid.exp())) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Clamped knot vector for `p` cubic functions with interior knots at quantiles.
fn clamped_knots(sorted: &[f64], p: usize) -> Vec<f64> {
    let n = sorted.len();
    let (a, b) = (sorted[0], sorted[n - 1]);
    let n_interior = p - ORDER;
    let mut interior: Vec<f64> = (1..=n_interior)
        .map(|i| quantile(sorted, i as f64 / (n_interior + 1) as f64))
        .collect();
    let min_gap = 1e-8 * (b - a);
    let well_spread = interior
        .iter()
        .zip(std::iter::once(&a).chain(interior.iter()))
        .all(|(k, prev)| k - prev > min_gap)
        && interior.last().is_none_or(|&k| b - k > min_gap);
    if !well_spread {
        // heavy ties: fall back to equally spaced interior knots
        interior = (1..=n_interior)
            .map(|i| a + (b - a) * i as f64 / (n_interior + 1) as f64)
            .collect();
    }
    let mut knots = vec![a; ORDER];
    knots.extend(interior);
    knots.extend(std::iter::repeat_n(b, ORDER));
    knots
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Index `m` with `knots[m] <= x < knots[m+1]`, clamped to the valid range.
fn find_span(knots: &[f64], x: f64) -> usize {
    let last = knots.len() - ORDER - 1;
    if x >= knots[last + 1] {
        return last;
    }
    if x <= knots[DEGREE] {
        return DEGREE;
    }
    let mut m = DEGREE;
    while m < last && knots[m + 1] <= x {
        m += 1;
    }
    m
}

/// Values, first and second derivatives of the four cubic B-splines
/// `N_{span-3..=span}` at `x`.
fn basis_derivatives(
    knots: &[f64],
    span: usize,
    x: f64,
) -> ([f64; ORDER], [f64; ORDER], [f64; ORDER]) {
    // Cox–de Boor triangle: ndu[d][r] = N_{span-d+r, d}(x)
    let mut ndu = [[0.0f64; ORDER]; ORDER];
    ndu[0][0] = 1.0;
    for deg in 1..=DEGREE {
        for r in 0..=deg {
            let i = span + r - deg;
            let mut v = 0.0;
            if r > 0 {
                let (ti, tid) = (knots[i], knots[i + deg]);
                if tid > ti {
                    v += (x - ti) / (tid - ti) * ndu[deg - 1][r - 1];
                }
            }
            if r < deg {
                let (ti1, tid1) = (knots[i + 1], knots[i + deg + 1]);
                if tid1 > ti1 {
                    v += (tid1 - x) / (tid1 - ti1) * ndu[deg - 1][r];
                }
            }
            ndu[deg][r] = v;
        }
    }
    // derivative of N_{i,p}: p/(t_{i+p}-t_i) N_{i,p-1} - p/(t_{i+p+1}-t_{i+1}) N_{i+1,p-1}
    let lower = |deg: usize, r: usize, coeffs: &[f64]| -> f64 {
        // combine degree-(deg-1) quantities `coeffs` (indexed like ndu[deg-1]) into degree deg
        let i = span + r - deg;
        let mut v = 0.0;
        if r > 0 {
            let den = knots[i + deg] - knots[i];
            if den > 0.0 {
                v += deg as f64 / den * coeffs[r - 1];
            }
        }
        if r < deg {
            let den = knots[i + deg + 1] - knots[i + 1];
            if den > 0.0 {
                v -= deg as f64 / den * coeffs[r];
            }
        }
        v
    };
    let mut d1_deg2 = [0.0f64; ORDER];
    for (r, slot) in d1_deg2.iter_mut().enumerate().take(DEGREE) {
        *slot = lower(2, r, &ndu[1]);
    }
    let mut n1 = [0.0f64; ORDER];
    let mut n2 = [0.0f64; ORDER];
    for r in 0..ORDER {
        n1[r] = lower(3, r, &ndu[2]);
        n2[r] = lower(3, r, &d1_deg2);
    }
    (ndu[DEGREE], n1, n2)
}

/// `P_ij = ∫ B_i'' B_j''`; exact by Simpson's rule since `B''` is piecewise linear.
fn penalty_matrix(knots: &[f64], p: usize) -> DMatrix<f64> {
    let mut pen = DMatrix::zeros(p, p);
    for span in DEGREE..p {
        let (a, b) = (knots[span], knots[span + 1]);
        if b <= a {
            continue;
        }
        let nodes = [(a, 1.0), (0.5 * (a + b), 4.0), (b, 1.0)];
        for (x, w) in nodes {
            let (_, _, d2) = basis_derivatives(knots, span, x);
            let w = w * (b - a) / 6.0;
            for r in 0..ORDER {
                for s in 0..ORDER {
                    pen[(span - DEGREE + r, span - DEGREE + s)] += w * d2[r] * d2[s];
                }
            }
        }
    }
    pen
}

//! Simulated function-on-function regression data.
//!
//! Covariates are Gaussian processes (Ornstein–Uhlenbeck for the first,
//! exponential covariance for the second); the signal is a linear operator of
//! the covariates (linear scenarios) or of a pointwise transform of them
//! (nonlinear scenarios); noise is an exponential-covariance process rescaled
//! to a target signal-to-noise ratio.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FdaError, Result};
use crate::fdata::{BivariateSurface, FunctionalSample, Grid};

/// Covariate grid size.
pub const COVARIATE_POINTS: usize = 51;
/// Response and noise grid size.
pub const RESPONSE_POINTS: usize = 71;
const NOISE_SIGMA2: f64 = 0.5;
const NOISE_THETA: f64 = 0.3;
const JITTERS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// `Σ₁(u,v) = σ²/(2θ) · e^{-θ(u+v)} · (e^{2θ min(u,v)} - 1)`
pub fn ou_covariance(grid: &Grid, sigma: f64, theta1: f64) -> DMatrix<f64> {
    let p = grid.points();
    DMatrix::from_fn(p.len(), p.len(), |i, j| {
        let (u, v) = (p[i], p[j]);
        sigma * sigma / (2.0 * theta1)
            * (-theta1 * (u + v)).exp()
            * ((2.0 * theta1 * u.min(v)).exp() - 1.0)
    })
}

/// `Σ₂(u,v) = σ² e^{-|u-v|/θ}`
pub fn exp_covariance(grid: &Grid, sigma2: f64, theta2: f64) -> DMatrix<f64> {
    let p = grid.points();
    DMatrix::from_fn(p.len(), p.len(), |i, j| {
        sigma2 * (-(p[i] - p[j]).abs() / theta2).exp()
    })
}

/// Lower Cholesky factor, adding diagonal jitter (relative to the mean variance) when needed.
fn factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let r = cov.nrows();
    let scale = (cov.trace() / r as f64).abs().max(f64::MIN_POSITIVE);
    for jitter in JITTERS {
        let mut m = cov.clone();
        for i in 0..r {
            m[(i, i)] += jitter * scale;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.l());
        }
    }
    Err(FdaError::NotPositiveDefinite {
        jitter: JITTERS[JITTERS.len() - 1],
    })
}

/// `n` independent zero-mean Gaussian curves with covariance `cov` on `grid`.
pub fn sample_gp<R: Rng + ?Sized>(
    grid: &Grid,
    cov: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<FunctionalSample> {
    let r = grid.len();
    if cov.nrows() != r || cov.ncols() != r {
        return Err(FdaError::DimensionMismatch(format!(
            "{}x{} covariance for a {r}-point grid",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if n == 0 {
        return Err(FdaError::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    if cov.iter().all(|&v| v == 0.0) {
        return FunctionalSample::new(grid.clone(), vec![0.0; n * r]);
    }
    let l = factor(cov)?;
    let mut values = Vec::with_capacity(n * r);
    let mut z = vec![0.0; r];
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..r {
            let row = l.row(i);
            values.push((0..=i).map(|k| row[k] * z[k]).sum());
        }
    }
    FunctionalSample::new(grid.clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Surface {
    #[serde(rename = "LS1")]
    Ls1,
    #[serde(rename = "LS2")]
    Ls2,
    #[serde(rename = "LNS1")]
    Lns1,
    #[serde(rename = "LNS2")]
    Lns2,
}

impl Surface {
    pub fn eval(self, u: f64, v: f64) -> f64 {
        match self {
            Surface::Ls1 => 6.0 * (u * v).sqrt() * (4.0 * PI * v).sin(),
            Surface::Ls2 => -(u * v + 1.0) * (2.0 * PI * (u * v).sqrt()).cos(),
            Surface::Lns1 => {
                if v < 1.0 / 3.0 {
                    5.6 * (u * u * u).exp() * ((v - 0.1) / 0.25).powi(3)
                } else if v < 0.75 {
                    6.3 * ((v - 0.6) / 0.25).powi(5)
                } else {
                    -28.0 * ((v - 1.0) / 0.5).powi(2) * (PI * u / 2.0).cos()
                }
            }
            Surface::Lns2 => {
                if v < 0.5 {
                    -20.0 * v * v * (2.0 * PI * (2.0 * u - 1.0) * (2.0 * v - 1.0)).cos()
                } else {
                    (2.0 - 3.0 * v).powi(2)
                }
            }
        }
    }
}

pub fn beta_surface_eval(kind: Surface, grid_s: &Grid, grid_t: &Grid) -> BivariateSurface {
    BivariateSurface::from_fn(grid_s.clone(), grid_t.clone(), |u, v| kind.eval(u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    #[serde(rename = "PHI1")]
    Phi1,
    #[serde(rename = "PHI2")]
    Phi2,
}

impl Transform {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Transform::Phi1 => (0.5 * (1.0 - x * x)).exp(),
            Transform::Phi2 => {
                let a = 2.0 * PI * (x / 2.0 - 1.0);
                1.0 + x * x / 5.0 + a.cos() * a.sin()
            }
        }
    }
}

pub fn phi_transform(kind: Transform, x: &FunctionalSample) -> FunctionalSample {
    x.map_values(|v| kind.eval(v))
        .expect("pointwise transform of finite values stays finite")
}

/// `Δ ∫ X(s) β(s,t) ds` for every curve and every `t`.
pub fn apply_linear_operator(
    x: &FunctionalSample,
    beta: &BivariateSurface,
    delta: f64,
) -> Result<FunctionalSample> {
    x.grid().ensure_matches(beta.grid_s(), "linear operator")?;
    let w = x.grid().weights();
    let rt = beta.grid_t().len();
    let mut values = Vec::with_capacity(x.n() * rt);
    for curve in x.curves() {
        let mut out = vec![0.0; rt];
        for (s, (xs, ws)) in curve.iter().zip(w).enumerate() {
            let c = delta * xs * ws;
            if c == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(beta.row(s)) {
                *o += c * b;
            }
        }
        values.extend(out);
    }
    FunctionalSample::new(beta.grid_t().clone(), values)
}

/// Multiplies `eps` by `C_ρ` so that `Σ‖C_ρ ε_i‖² = (1-ρ²)/ρ² · Σ‖M_i - M̄‖²`.
pub fn scale_noise(
    signal: &FunctionalSample,
    eps: &FunctionalSample,
    rho2: f64,
) -> Result<(FunctionalSample, f64)> {
    signal.ensure_same_shape(eps, "noise scaling")?;
    let c = noise_scale(signal, eps, rho2)?;
    Ok((eps.map_values(|v| c * v)?, c))
}

fn noise_scale(signal: &FunctionalSample, eps: &FunctionalSample, rho2: f64) -> Result<f64> {
    if !(rho2 > 0.0 && rho2 < 1.0) {
        return Err(FdaError::InvalidArgument(format!(
            "rho2 must lie in (0, 1), got {rho2}"
        )));
    }
    let signal_energy = signal.energy_about(&signal.mean_curve())?;
    let noise_energy = eps.total_energy();
    if !(signal_energy > 0.0) {
        return Err(FdaError::Degenerate("signal has no variability".into()));
    }
    if !(noise_energy > 0.0) {
        return Err(FdaError::Degenerate("noise has zero energy".into()));
    }
    Ok(((1.0 - rho2) / rho2 * signal_energy / noise_energy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Linear, smooth surfaces.
    #[serde(rename = "LS")]
    Ls,
    /// Linear, non-smooth surfaces.
    #[serde(rename = "LNS")]
    Lns,
    /// Nonlinear, smooth surfaces.
    #[serde(rename = "NLS")]
    Nls,
    /// Nonlinear, non-smooth surfaces.
    #[serde(rename = "NLNS")]
    Nlns,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Ls,
        ScenarioKind::Lns,
        ScenarioKind::Nls,
        ScenarioKind::Nlns,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Ls => "LS",
            ScenarioKind::Lns => "LNS",
            ScenarioKind::Nls => "NLS",
            ScenarioKind::Nlns => "NLNS",
        }
    }

    fn surfaces(self) -> [Surface; 2] {
        match self {
            ScenarioKind::Ls | ScenarioKind::Nls => [Surface::Ls1, Surface::Ls2],
            ScenarioKind::Lns | ScenarioKind::Nlns => [Surface::Lns1, Surface::Lns2],
        }
    }

    fn is_nonlinear(self) -> bool {
        matches!(self, ScenarioKind::Nls | ScenarioKind::Nlns)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioKind {
    type Err = FdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LS" => Ok(ScenarioKind::Ls),
            "LNS" => Ok(ScenarioKind::Lns),
            "NLS" => Ok(ScenarioKind::Nls),
            "NLNS" => Ok(ScenarioKind::Nlns),
            _ => Err(FdaError::InvalidArgument(format!(
                "unknown scenario '{s}' (expected LS, LNS, NLS or NLNS)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_covariates: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rho2: f64,
    pub seed: u64,
    pub covariate_points: usize,
    pub response_points: usize,
    pub delta: f64,
}

impl ScenarioSpec {
    /// Default protocol: two covariates, 100 training and 100 test curves, ρ² = 0.8.
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            n_covariates: 2,
            n_train: 100,
            n_test: 100,
            rho2: 0.8,
            seed,
            covariate_points: COVARIATE_POINTS,
            response_points: RESPONSE_POINTS,
            delta: 1.0 / RESPONSE_POINTS as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(1..=2).contains(&self.n_covariates) {
            problems.push(format!(
                "n_covariates must be 1 or 2, got {}",
                self.n_covariates
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            problems.push("n_train and n_test must be at least 1".to_string());
        }
        if !(self.rho2 > 0.0 && self.rho2 < 1.0) {
            problems.push(format!("rho2 must lie in (0, 1), got {}", self.rho2));
        }
        if self.covariate_points < 2 || self.response_points < 2 {
            problems.push("grids need at least 2 points".to_string());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            problems.push(format!("delta must be positive, got {}", self.delta));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FdaError::InvalidArgument(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedDataset {
    pub xs_train: Vec<FunctionalSample>,
    pub xs_test: Vec<FunctionalSample>,
    pub y_train: FunctionalSample,
    pub y_test: FunctionalSample,
    pub signal_train: FunctionalSample,
    pub signal_test: FunctionalSample,
    pub c_rho: f64,
}

/// Independent seed for replication `rep` of a study seeded with `base`.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    let mut z = base ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one dataset. Random draws happen in a fixed order: training
/// covariates, training noise, test covariates, test noise.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    let xgrid = Grid::uniform(0.0, 1.0, spec.covariate_points)?;
    let ygrid = Grid::uniform(0.0, 1.0, spec.response_points)?;
    let covs = [
        ou_covariance(&xgrid, 1.0, 0.2),
        exp_covariance(&xgrid, 0.5, 0.7),
    ];
    let noise_cov = exp_covariance(&ygrid, NOISE_SIGMA2, NOISE_THETA);
    let surfaces: Vec<BivariateSurface> = spec.kind.surfaces()[..spec.n_covariates]
        .iter()
        .map(|&s| beta_surface_eval(s, &xgrid, &ygrid))
        .collect();
    let transforms = [Transform::Phi1, Transform::Phi2];

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| -> Result<(Vec<FunctionalSample>, FunctionalSample)> {
        let xs = covs[..spec.n_covariates]
            .iter()
            .map(|c| sample_gp(&xgrid, c, n, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let eps = sample_gp(&ygrid, &noise_cov, n, &mut rng)?;
        Ok((xs, eps))
    };
    let (xs_train, eps_train) = draw(spec.n_train)?;
    let (xs_test, eps_test) = draw(spec.n_test)?;

    let signal = |xs: &[FunctionalSample]| -> Result<FunctionalSample> {
        let mut total: Option<FunctionalSample> = None;
        for (j, x) in xs.iter().enumerate() {
            let input = if spec.kind.is_nonlinear() {
                phi_transform(transforms[j], x)
            } else {
                x.clone()
            };
            let term = apply_linear_operator(&input, &surfaces[j], spec.delta)?;
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one covariate"))
    };
    let signal_train = signal(&xs_train)?;
    let signal_test = signal(&xs_test)?;

    let (noise_train, c_rho) = scale_noise(&signal_train, &eps_train, spec.rho2)?;
    let noise_test = eps_test.map_values(|v| c_rho * v)?;

    Ok(SimulatedDataset {
        y_train: signal_train.add(&noise_train)?,
        y_test: signal_test.add(&noise_test)?,
        xs_train,
        xs_test,
        signal_train,
        signal_test,
        c_rho,
    })
}

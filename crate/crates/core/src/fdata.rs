//! Grid-based functional data.
//!
//! Every curve is stored as its values on a shared [`Grid`]. Integrals use the
//! composite trapezoid rule with weights derived from the (possibly non-uniform)
//! grid spacing, so inner products are exact for piecewise-linear integrands.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FdaError, Result};

/// Ordered sample locations `a = t_1 < ... < t_r = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FdaError::InsufficientData {
                needed: 2,
                got: points.len(),
                context: "grid points".into(),
            });
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(FdaError::InvalidArgument(format!(
                "grid point {p} is not finite"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(FdaError::InvalidArgument(format!(
                "grid is not strictly increasing at position {} ({} >= {})",
                i + 1,
                points[i],
                points[i + 1]
            )));
        }
        let weights = trapezoid_weights(&points);
        Ok(Self { points, weights })
    }

    /// `r` equally spaced points covering `[a, b]`.
    pub fn uniform(a: f64, b: f64, r: usize) -> Result<Self> {
        if r < 2 {
            return Err(FdaError::InsufficientData {
                needed: 2,
                got: r,
                context: "grid points".into(),
            });
        }
        if !(b > a) {
            return Err(FdaError::InvalidArgument(format!(
                "uniform grid needs a < b, got [{a}, {b}]"
            )));
        }
        let step = (b - a) / (r - 1) as f64;
        let mut points: Vec<f64> = (0..r).map(|i| a + step * i as f64).collect();
        points[r - 1] = b;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Trapezoid quadrature weights; they sum to `b - a`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn range(&self) -> f64 {
        self.end() - self.start()
    }

    /// Grids compare equal when they have the same length and agree point by point
    /// up to a relative tolerance of 1e-12 of the domain length.
    pub fn matches(&self, other: &Grid) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let tol = 1e-12 * self.range().abs().max(1.0);
        self.points
            .iter()
            .zip(&other.points)
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn ensure_matches(&self, other: &Grid, context: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(FdaError::GridMismatch(format!(
                "{context}: grid of {} points on [{}, {}] vs {} points on [{}, {}]",
                self.len(),
                self.start(),
                self.end(),
                other.len(),
                other.start(),
                other.end()
            )))
        }
    }

    /// Integral of `f` over the grid's domain.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(self.weights.iter().zip(f).map(|(w, v)| w * v).sum())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(FdaError::DimensionMismatch(format!(
                "curve has {len} values but the grid has {} points",
                self.len()
            )));
        }
        Ok(())
    }
}

fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let r = points.len();
    let mut w = vec![0.0; r];
    for i in 0..r - 1 {
        let h = 0.5 * (points[i + 1] - points[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.points.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let points = Vec::<f64>::deserialize(deserializer)?;
        Grid::new(points).map_err(serde::de::Error::custom)
    }
}

/// Trapezoid approximation of `∫ f g` on `grid`.
pub fn inner_product(grid: &Grid, f: &[f64], g: &[f64]) -> Result<f64> {
    grid.check_len(f.len())?;
    grid.check_len(g.len())?;
    Ok(weighted_dot(grid.weights(), f, g))
}

pub fn l2_norm(grid: &Grid, f: &[f64]) -> Result<f64> {
    Ok(inner_product(grid, f, f)?.max(0.0).sqrt())
}

pub fn l2_distance(grid: &Grid, f: &[f64], g: &[f64]) -> Result<f64> {
    grid.check_len(f.len())?;
    grid.check_len(g.len())?;
    Ok(squared_distance(grid.weights(), f, g).sqrt())
}

#[inline]
pub(crate) fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
}

#[inline]
pub(crate) fn squared_distance(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter()
        .zip(f)
        .zip(g)
        .map(|((w, a), b)| {
            let d = a - b;
            w * d * d
        })
        .sum()
}

/// `n` curves observed on a shared grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Grid,
    values: Vec<f64>,
    n: usize,
    ids: Option<Vec<String>>,
}

impl FunctionalSample {
    /// Builds a sample from row-major values (`n * grid.len()` entries).
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let r = grid.len();
        if values.is_empty() || !values.len().is_multiple_of(r) {
            return Err(FdaError::DimensionMismatch(format!(
                "{} values do not form whole curves of length {r}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(FdaError::InvalidArgument(format!(
                "non-finite value in curve {} at grid index {}",
                pos / r,
                pos % r
            )));
        }
        let n = values.len() / r;
        Ok(Self {
            grid,
            values,
            n,
            ids: None,
        })
    }

    pub fn from_rows(grid: Grid, rows: &[Vec<f64>]) -> Result<Self> {
        let r = grid.len();
        if let Some(i) = rows.iter().position(|row| row.len() != r) {
            return Err(FdaError::DimensionMismatch(format!(
                "curve {i} has {} values but the grid has {r} points",
                rows[i].len()
            )));
        }
        Self::new(grid, rows.concat())
    }

    /// `n` copies of one curve.
    pub fn repeat(grid: Grid, curve: &[f64], n: usize) -> Result<Self> {
        grid.check_len(curve.len())?;
        let mut values = Vec::with_capacity(n * curve.len());
        for _ in 0..n {
            values.extend_from_slice(curve);
        }
        Self::new(grid, values)
    }

    pub fn from_matrix(grid: Grid, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != grid.len() {
            return Err(FdaError::DimensionMismatch(format!(
                "matrix has {} columns but the grid has {} points",
                m.ncols(),
                grid.len()
            )));
        }
        let mut values = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            values.extend(m.row(i).iter());
        }
        Self::new(grid, values)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(FdaError::DimensionMismatch(format!(
                "{} ids for {} curves",
                ids.len(),
                self.n
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points per curve.
    pub fn r(&self) -> usize {
        self.grid.len()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn curve(&self, i: usize) -> &[f64] {
        let r = self.r();
        &self.values[i * r..(i + 1) * r]
    }

    pub fn curves(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.r())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.r(), &self.values)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.r());
        for &i in indices {
            if i >= self.n {
                return Err(FdaError::IndexOutOfRange {
                    index: i,
                    len: self.n,
                });
            }
            values.extend_from_slice(self.curve(i));
        }
        let mut out = Self::new(self.grid.clone(), values)?;
        if let Some(ids) = &self.ids {
            out.ids = Some(indices.iter().map(|&i| ids[i].clone()).collect());
        }
        Ok(out)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Self::new(self.grid.clone(), values)?;
        out.ids = self.ids.clone();
        Ok(out)
    }

    pub fn ensure_same_shape(&self, other: &FunctionalSample, context: &str) -> Result<()> {
        self.grid.ensure_matches(&other.grid, context)?;
        if self.n != other.n {
            return Err(FdaError::DimensionMismatch(format!(
                "{context}: {} curves vs {} curves",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &FunctionalSample) -> Result<Self> {
        self.ensure_same_shape(other, "add")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.grid.clone(), values)
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &FunctionalSample) -> Result<Self> {
        self.ensure_same_shape(other, "sub")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(self.grid.clone(), values)
    }

    /// Pointwise mean curve.
    pub fn mean_curve(&self) -> Vec<f64> {
        let r = self.r();
        let mut mean = vec![0.0; r];
        for row in self.curves() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv = 1.0 / self.n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// Sum over curves of the squared L2 norm.
    pub fn total_energy(&self) -> f64 {
        let w = self.grid.weights();
        self.curves().map(|c| weighted_dot(w, c, c)).sum()
    }

    /// Sum over curves of `‖curve - reference‖²`.
    pub fn energy_about(&self, reference: &[f64]) -> Result<f64> {
        self.grid.check_len(reference.len())?;
        let w = self.grid.weights();
        Ok(self
            .curves()
            .map(|c| squared_distance(w, c, reference))
            .sum())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRepr {
    grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
    curves: Vec<Vec<f64>>,
}

impl Serialize for FunctionalSample {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SampleRepr {
            grid: self.grid.clone(),
            ids: self.ids.clone(),
            curves: self.curves().map(|c| c.to_vec()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FunctionalSample {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SampleRepr::deserialize(deserializer)?;
        let sample = FunctionalSample::from_rows(repr.grid, &repr.curves)
            .map_err(serde::de::Error::custom)?;
        match repr.ids {
            Some(ids) => sample.with_ids(ids).map_err(serde::de::Error::custom),
            None => Ok(sample),
        }
    }
}

/// A function of two variables evaluated on the product grid `grid_s × grid_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateSurface {
    grid_s: Grid,
    grid_t: Grid,
    /// Row-major `r_S × r_T`.
    values: Vec<f64>,
}

impl BivariateSurface {
    pub fn new(grid_s: Grid, grid_t: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid_s.len() * grid_t.len() {
            return Err(FdaError::DimensionMismatch(format!(
                "surface has {} values, expected {}x{}",
                values.len(),
                grid_s.len(),
                grid_t.len()
            )));
        }
        Ok(Self {
            grid_s,
            grid_t,
            values,
        })
    }

    pub fn from_fn(grid_s: Grid, grid_t: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid_s.len() * grid_t.len());
        for &s in grid_s.points() {
            for &t in grid_t.points() {
                values.push(f(s, t));
            }
        }
        Self {
            grid_s,
            grid_t,
            values,
        }
    }

    pub fn grid_s(&self) -> &Grid {
        &self.grid_s
    }

    pub fn grid_t(&self) -> &Grid {
        &self.grid_t
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid_t.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row `i`: the surface as a function of `t` at `s = s_i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.grid_t.len();
        &self.values[i * c..(i + 1) * c]
    }
}

/// Pointwise mean and the centered sample.
pub fn center(sample: &FunctionalSample) -> (Vec<f64>, FunctionalSample) {
    let mean = sample.mean_curve();
    let r = sample.r();
    let mut values = sample.values().to_vec();
    for row in values.chunks_exact_mut(r) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let centered = FunctionalSample {
        grid: sample.grid().clone(),
        values,
        n: sample.n(),
        ids: sample.ids.clone(),
    };
    (mean, centered)
}

/// Full symmetric `n × n` array of L2 distances between curves.
pub fn pairwise_distances(sample: &FunctionalSample) -> DMatrix<f64> {
    let n = sample.n();
    let mut d = DMatrix::zeros(n, n);
    for (i, k, dist) in lower_triangle_distances(sample) {
        d[(i, k)] = dist;
        d[(k, i)] = dist;
    }
    d
}

/// Streams `(i, k, d(X_i, X_k))` for `i > k` without materializing the array.
pub fn lower_triangle_distances(
    sample: &FunctionalSample,
) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let w = sample.grid().weights();
    (1..sample.n()).flat_map(move |i| {
        (0..i).map(move |k| {
            (
                i,
                k,
                squared_distance(w, sample.curve(i), sample.curve(k)).sqrt(),
            )
        })
    })
}

/// Distances from `query` to every curve of `sample`.
pub fn distances_to(query: &[f64], sample: &FunctionalSample) -> Result<Vec<f64>> {
    sample.grid().check_len(query.len())?;
    let w = sample.grid().weights();
    Ok(sample
        .curves()
        .map(|c| squared_distance(w, query, c).sqrt())
        .collect())
}

/// `n_new × n_train` distances between two samples on the same grid.
pub fn cross_distances(new: &FunctionalSample, train: &FunctionalSample) -> Result<DMatrix<f64>> {
    new.grid().ensure_matches(train.grid(), "cross distances")?;
    let w = new.grid().weights();
    let mut d = DMatrix::zeros(new.n(), train.n());
    for (i, q) in new.curves().enumerate() {
        for (k, c) in train.curves().enumerate() {
            d[(i, k)] = squared_distance(w, q, c).sqrt();
        }
    }
    Ok(d)
}

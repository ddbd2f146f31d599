//! Periodic-grid calculus on the flat n-torus `[0, 2π)^n`.
//!
//! Fields are sampled at `θ_i = 2π k / N_i` and stored row-major, axis 0
//! slowest. All differential operators are periodic central finite
//! differences; quadrature is the uniform periodic rule, which is exact for
//! constants and trigonometric modes below the Nyquist band.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Smallest per-axis sample count accepted by the finite-difference stencils.
pub const MIN_SAMPLES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridSpec {
    res: Vec<usize>,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dim: usize,
    res: Vec<usize>,
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        if r.dim != r.res.len() {
            return Err(Error::DimensionMismatch {
                expected: r.dim,
                found: r.res.len(),
            });
        }
        GridSpec::new(r.res)
    }
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr {
            dim: g.dim(),
            res: g.res,
        }
    }
}

impl GridSpec {
    pub fn new(res: Vec<usize>) -> Result<Self> {
        if res.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be at least 2, got {}",
                res.len()
            )));
        }
        for (axis, &n) in res.iter().enumerate() {
            if n < MIN_SAMPLES {
                return Err(Error::GridTooCoarse {
                    axis,
                    samples: n,
                    required: MIN_SAMPLES,
                });
            }
            if n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has an odd sample count {n}"
                )));
            }
        }
        let mut strides = vec![1; res.len()];
        for a in (0..res.len() - 1).rev() {
            strides[a] = strides[a + 1] * res[a + 1];
        }
        Ok(GridSpec { res, strides })
    }

    /// `n` samples along each of `dim` axes.
    pub fn cubic(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn res(&self) -> &[usize] {
        &self.res
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        TWO_PI / self.res[axis] as f64
    }

    /// Largest grid spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.spacing(a))
            .fold(0.0, f64::max)
    }

    /// Coordinate volume of one cell, `Π 2π/N_i`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut k = vec![0; self.dim()];
        for a in 0..self.dim() {
            k[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        k
    }

    pub fn index(&self, k: &[usize]) -> usize {
        k.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .into_iter()
            .enumerate()
            .map(|(a, k)| k as f64 * self.spacing(a))
            .collect()
    }

    /// Index of the grid node closest (coordinate-wise, with wraparound) to `point`.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        assert_eq!(point.len(), self.dim(), "point dimension");
        let k: Vec<usize> = point
            .iter()
            .enumerate()
            .map(|(a, &x)| {
                let n = self.res[a] as i64;
                let k = (x.rem_euclid(TWO_PI) / self.spacing(a)).round() as i64;
                k.rem_euclid(n) as usize
            })
            .collect();
        self.index(&k)
    }

    /// Node reached from `idx` by moving `delta[a]` samples along every axis `a`.
    pub fn shifted(&self, idx: usize, delta: &[isize]) -> usize {
        let mut out = 0;
        let mut rest = idx;
        for a in 0..self.dim() {
            let k = (rest / self.strides[a]) as isize;
            rest %= self.strides[a];
            let n = self.res[a] as isize;
            out += ((k + delta[a]).rem_euclid(n) as usize) * self.strides[a];
        }
        out
    }
}

/// Real-valued samples on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(ScalarField { spec, values })
    }

    /// Internal constructor for operator outputs built from finite inputs.
    pub(crate) fn from_raw(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        ScalarField { spec, values }
    }

    pub fn constant(spec: &GridSpec, c: f64) -> Result<Self> {
        Self::new(spec.clone(), vec![c; spec.len()])
    }

    /// Samples `f(θ)` at every node.
    pub fn from_fn(spec: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..spec.len()).map(|i| f(&spec.coords(i))).collect();
        Self::new(spec.clone(), values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.spec.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.spec.clone(), values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first node attaining the minimum.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Whether every sample equals the first one.
    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    pub(crate) fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::InvalidField("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Constant symmetric positive-definite metric `(g_0)_{ik}` in the coordinates `θ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricRepr", into = "MetricRepr")]
pub struct FlatMetric {
    dim: usize,
    entries: Vec<f64>,
    inverse: Vec<f64>,
    sqrt_det: f64,
    eig_min: f64,
    eig_max: f64,
}

#[derive(Serialize, Deserialize)]
struct MetricRepr {
    dim: usize,
    entries: Vec<f64>,
}

impl TryFrom<MetricRepr> for FlatMetric {
    type Error = Error;

    fn try_from(r: MetricRepr) -> Result<Self> {
        FlatMetric::new(r.dim, r.entries)
    }
}

impl From<FlatMetric> for MetricRepr {
    fn from(m: FlatMetric) -> Self {
        MetricRepr {
            dim: m.dim,
            entries: m.entries,
        }
    }
}

impl FlatMetric {
    /// `entries` is the row-major `dim × dim` matrix.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidMetric(format!(
                "expected {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let (inverse, sqrt_det, eig_min, eig_max) = analyze_spd(&m)?;
        Ok(FlatMetric {
            dim,
            entries,
            inverse,
            sqrt_det,
            eig_min,
            eig_max,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity is positive definite")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut entries = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * n + i] = d;
        }
        Self::new(n, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.dim + k]
    }

    /// Row-major entries of the inverse metric `g^{ik}`.
    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    pub fn sqrt_det(&self) -> f64 {
        self.sqrt_det
    }

    /// `[λ_min, λ_max]` of the matrix.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.dim, self.entries.iter().map(|v| v * c).collect())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    /// `vᵀ g v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                s += v[i] * self.entries[i * n + k] * v[k];
            }
        }
        s
    }

    /// Coordinate volume of the torus, `(2π)^n √det g`.
    pub fn torus_volume(&self) -> f64 {
        TWO_PI.powi(self.dim as i32) * self.sqrt_det
    }

    /// First nonzero eigenvalue of `-Δ` on `([0,2π)^n, g)`: the minimum of
    /// `kᵀ g⁻¹ k` over nonzero integer vectors `k`.
    pub fn first_laplace_eigenvalue(&self) -> f64 {
        let n = self.dim;
        // Any k with |k|² > λ_max / λ_min · 1 cannot beat e_1, so a window of
        // ceil(sqrt(λ_max/λ_min)) per axis is exhaustive.
        let w = (self.eig_max / self.eig_min).sqrt().ceil() as i64;
        let mut best = f64::INFINITY;
        let mut k = vec![-w; n];
        loop {
            if k.iter().any(|&c| c != 0) {
                let mut q = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        q += k[i] as f64 * self.inverse[i * n + j] * k[j] as f64;
                    }
                }
                best = best.min(q);
            }
            let mut a = 0;
            while a < n {
                k[a] += 1;
                if k[a] <= w {
                    break;
                }
                k[a] = -w;
                a += 1;
            }
            if a == n {
                break;
            }
        }
        best
    }
}

/// Inverse, √det and extreme eigenvalues of a symmetric positive-definite matrix.
pub(crate) fn analyze_spd(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64, f64, f64)> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMetric("non-finite entry".into()));
    }
    for i in 0..n {
        for k in 0..i {
            if (m[(i, k)] - m[(k, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidMetric(format!(
                    "entries ({i},{k}) and ({k},{i}) differ"
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let eig_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let eig_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if eig_min <= 0.0 {
        return Err(Error::InvalidMetric(format!(
            "smallest eigenvalue {eig_min} is not positive"
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidMetric("singular matrix".into()))?;
    let mut inverse = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            inverse[i * n + k] = inv[(i, k)];
        }
    }
    let sqrt_det = m.determinant().sqrt();
    Ok((inverse, sqrt_det, eig_min, eig_max))
}

/// Consistency order of the finite-difference stencils.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accuracy {
    Second,
    #[default]
    Fourth,
}

impl Accuracy {
    pub fn order(self) -> i32 {
        match self {
            Accuracy::Second => 2,
            Accuracy::Fourth => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

fn check_axis(spec: &GridSpec, axis: usize) -> Result<()> {
    if axis >= spec.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dim: spec.dim(),
        });
    }
    if spec.res[axis] < MIN_SAMPLES {
        return Err(Error::GridTooCoarse {
            axis,
            samples: spec.res[axis],
            required: MIN_SAMPLES,
        });
    }
    Ok(())
}

/// Periodic central difference along one axis of raw row-major samples.
///
/// Differences of symmetric neighbours are formed first so constant data
/// differentiates to exactly zero.
pub(crate) fn diff_axis(
    spec: &GridSpec,
    values: &[f64],
    axis: usize,
    order: DerivativeOrder,
    acc: Accuracy,
) -> Vec<f64> {
    let n = spec.res[axis];
    let stride = spec.strides[axis];
    let h = spec.spacing(axis);
    let mut out = vec![0.0; values.len()];
    let block = n * stride;
    let mut line = vec![0.0; n];
    for outer in (0..values.len()).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = values[base + k * stride];
            }
            for k in 0..n {
                let p1 = line[(k + 1) % n];
                let m1 = line[(k + n - 1) % n];
                let d = match (order, acc) {
                    (DerivativeOrder::First, Accuracy::Second) => (p1 - m1) / (2.0 * h),
                    (DerivativeOrder::First, Accuracy::Fourth) => {
                        let p2 = line[(k + 2) % n];
                        let m2 = line[(k + n - 2) % n];
                        ((p1 - m1) * 8.0 - (p2 - m2)) / (12.0 * h)
                    }
                    (DerivativeOrder::Second, Accuracy::Second) => {
                        ((p1 + m1) - 2.0 * line[k]) / (h * h)
                    }
                    (DerivativeOrder::Second, Accuracy::Fourth) => {
                        let p2 = line[(k + 2) % n];
                        let m2 = line[(k + n - 2) % n];
                        (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * line[k]) / (12.0 * h * h)
                    }
                };
                out[base + k * stride] = d;
            }
        }
    }
    out
}

/// `∂_axis f` or `∂²_axis f` with the default fourth-order stencil.
pub fn derivative(field: &ScalarField, axis: usize, order: DerivativeOrder) -> Result<ScalarField> {
    derivative_with(field, axis, order, Accuracy::default())
}

pub fn derivative_with(
    field: &ScalarField,
    axis: usize,
    order: DerivativeOrder,
    acc: Accuracy,
) -> Result<ScalarField> {
    check_axis(&field.spec, axis)?;
    Ok(ScalarField::from_raw(
        field.spec.clone(),
        diff_axis(&field.spec, &field.values, axis, order, acc),
    ))
}

/// Inverse-metric coefficients `g^{lm}`, either constant or one matrix per node.
#[derive(Clone, Copy)]
pub(crate) enum Coefficients<'a> {
    Uniform(&'a [f64]),
    Pointwise(&'a [f64]),
}

impl Coefficients<'_> {
    #[inline]
    fn at(&self, idx: usize, n: usize, l: usize, m: usize) -> f64 {
        match self {
            Coefficients::Uniform(c) => c[l * n + m],
            Coefficients::Pointwise(c) => c[idx * n * n + l * n + m],
        }
    }

    fn vanishes(&self, n: usize, l: usize, m: usize) -> bool {
        match self {
            Coefficients::Uniform(c) => c[l * n + m] == 0.0,
            Coefficients::Pointwise(c) => c.chunks(n * n).all(|g| g[l * n + m] == 0.0),
        }
    }
}

/// `g^{lm} ∂_l ∂_m u`: pure second differences on the diagonal, composed first
/// differences off it.
pub(crate) fn contract_hessian(
    spec: &GridSpec,
    u: &[f64],
    coeff: Coefficients<'_>,
    acc: Accuracy,
) -> Vec<f64> {
    let n = spec.dim();
    let mut out = vec![0.0; u.len()];
    for l in 0..n {
        let d2 = diff_axis(spec, u, l, DerivativeOrder::Second, acc);
        for (i, o) in out.iter_mut().enumerate() {
            *o += coeff.at(i, n, l, l) * d2[i];
        }
    }
    let mut first: Vec<Option<Vec<f64>>> = vec![None; n];
    for l in 0..n {
        for m in (l + 1)..n {
            if coeff.vanishes(n, l, m) {
                continue;
            }
            let dl = first[l]
                .get_or_insert_with(|| diff_axis(spec, u, l, DerivativeOrder::First, acc))
                .clone();
            let dlm = diff_axis(spec, &dl, m, DerivativeOrder::First, acc);
            for (i, o) in out.iter_mut().enumerate() {
                *o += 2.0 * coeff.at(i, n, l, m) * dlm[i];
            }
        }
    }
    out
}

/// `g^{lm} a_l b_m` for gradient component arrays `a`, `b`.
pub(crate) fn contract_gradients(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    coeff: Coefficients<'_>,
) -> Vec<f64> {
    let n = a.len();
    let len = a[0].len();
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for l in 0..n {
            s += coeff.at(i, n, l, l) * a[l][i] * b[l][i];
        }
        for l in 0..n {
            for m in (l + 1)..n {
                let c = coeff.at(i, n, l, m);
                if c != 0.0 {
                    s += c * (a[l][i] * b[m][i] + a[m][i] * b[l][i]);
                }
            }
        }
        *o = s;
    }
    out
}

pub(crate) fn gradient_components(spec: &GridSpec, u: &[f64], acc: Accuracy) -> Vec<Vec<f64>> {
    (0..spec.dim())
        .map(|a| diff_axis(spec, u, a, DerivativeOrder::First, acc))
        .collect()
}

fn check_metric(spec: &GridSpec, metric: &FlatMetric) -> Result<()> {
    if metric.dim != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: metric.dim,
        });
    }
    Ok(())
}

/// `Δ^{g_0} f = g_0^{lm} ∂_l ∂_m f` (div-grad sign: `Δ sin θ_1 = -sin θ_1`).
pub fn laplacian(field: &ScalarField, metric: &FlatMetric) -> Result<ScalarField> {
    laplacian_with(field, metric, Accuracy::default())
}

pub fn laplacian_with(field: &ScalarField, metric: &FlatMetric, acc: Accuracy) -> Result<ScalarField> {
    check_metric(&field.spec, metric)?;
    let out = contract_hessian(
        &field.spec,
        &field.values,
        Coefficients::Uniform(&metric.inverse),
        acc,
    );
    Ok(ScalarField::from_raw(field.spec.clone(), out))
}

/// `|∇^{g_0} f|² = g_0^{lm} ∂_l f ∂_m f`.
pub fn gradient_norm_sq(field: &ScalarField, metric: &FlatMetric) -> Result<ScalarField> {
    gradient_norm_sq_with(field, metric, Accuracy::default())
}

pub fn gradient_norm_sq_with(
    field: &ScalarField,
    metric: &FlatMetric,
    acc: Accuracy,
) -> Result<ScalarField> {
    check_metric(&field.spec, metric)?;
    let d = gradient_components(&field.spec, &field.values, acc);
    let out = contract_gradients(&d, &d, Coefficients::Uniform(&metric.inverse));
    Ok(ScalarField::from_raw(field.spec.clone(), out))
}

/// `⟨∇f, ∇g⟩_{g_0}`.
pub fn gradient_inner(f: &ScalarField, g: &ScalarField, metric: &FlatMetric) -> Result<ScalarField> {
    f.same_grid(g)?;
    check_metric(&f.spec, metric)?;
    let acc = Accuracy::default();
    let df = gradient_components(&f.spec, &f.values, acc);
    let dg = gradient_components(&g.spec, &g.values, acc);
    let out = contract_gradients(&df, &dg, Coefficients::Uniform(&metric.inverse));
    Ok(ScalarField::from_raw(f.spec.clone(), out))
}

/// `∫ f dV_{g_0} ≈ Σ f · √det g_0 · Π 2π/N_i`.
pub fn integrate(field: &ScalarField, metric: &FlatMetric) -> Result<f64> {
    check_metric(&field.spec, metric)?;
    Ok(sum(&field.values) * metric.sqrt_det * field.spec.cell_volume())
}

pub(crate) fn sum(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// Flat distance on the torus: the shortest `g_0`-length over lattice
/// translates of `y`, searching one period either side of the wrapped difference.
pub fn flat_distance(metric: &FlatMetric, x: &[f64], y: &[f64]) -> f64 {
    let n = metric.dim;
    assert!(x.len() == n && y.len() == n, "point dimension");
    let base: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let d = (a - b).rem_euclid(TWO_PI);
            if d >= PI {
                d - TWO_PI
            } else {
                d
            }
        })
        .collect();
    let mut shift = vec![-1i32; n];
    let mut d = vec![0.0; n];
    let mut best = f64::INFINITY;
    loop {
        for a in 0..n {
            d[a] = base[a] + shift[a] as f64 * TWO_PI;
        }
        best = best.min(metric.quad_form(&d));
        let mut a = 0;
        while a < n {
            shift[a] += 1;
            if shift[a] <= 1 {
                break;
            }
            shift[a] = -1;
            a += 1;
        }
        if a == n {
            break;
        }
    }
    best.sqrt()
}

fn in_ball(d: f64, r: f64) -> bool {
    d <= r * (1.0 + 1e-12)
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= PI) {
        return Err(Error::InvalidArgument(format!(
            "ball radius {r} must lie in (0, π]"
        )));
    }
    Ok(())
}

/// Mean of `field` over the grid nodes within flat distance `r` of `center`.
///
/// Membership is by node inclusion; there is no partial-cell weighting, so the
/// boundary contributes an `O(h)` error.
pub fn ball_average(field: &ScalarField, metric: &FlatMetric, center: &[f64], r: f64) -> Result<f64> {
    check_metric(&field.spec, metric)?;
    check_radius(r)?;
    let members: Vec<f64> = field
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| in_ball(flat_distance(metric, center, &field.spec.coords(*i)), r))
        .map(|(_, &v)| v)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyBall { radius: r });
    }
    Ok(shifted_mean(members.into_iter()))
}

/// Mean accumulated relative to the first value, exact on constant data.
fn shifted_mean(mut values: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = values.next() else {
        return f64::NAN;
    };
    let mut s = 0.0;
    let mut count = 1usize;
    for v in values {
        s += v - first;
        count += 1;
    }
    first + s / count as f64
}

/// Node offsets of a flat ball centred on a grid node, reusable at every node.
#[derive(Clone, Debug)]
pub struct BallStencil {
    spec: GridSpec,
    radius: f64,
    offsets: Vec<Vec<isize>>,
}

impl BallStencil {
    pub fn new(spec: &GridSpec, metric: &FlatMetric, r: f64) -> Result<Self> {
        check_metric(spec, metric)?;
        check_radius(r)?;
        let origin = vec![0.0; spec.dim()];
        let mut offsets = Vec::new();
        for i in 0..spec.len() {
            if in_ball(flat_distance(metric, &origin, &spec.coords(i)), r) {
                let off = spec
                    .unravel(i)
                    .into_iter()
                    .enumerate()
                    .map(|(a, k)| {
                        let n = spec.res[a];
                        if k <= n / 2 {
                            k as isize
                        } else {
                            k as isize - n as isize
                        }
                    })
                    .collect();
                offsets.push(off);
            }
        }
        if offsets.is_empty() {
            return Err(Error::EmptyBall { radius: r });
        }
        Ok(BallStencil {
            spec: spec.clone(),
            radius: r,
            offsets,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Number of nodes in the ball.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn members(&self, center: usize) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().map(move |o| self.spec.shifted(center, o))
    }

    /// Coordinate volume of the ball under node inclusion.
    pub fn coordinate_volume(&self, metric: &FlatMetric) -> f64 {
        self.len() as f64 * self.spec.cell_volume() * metric.sqrt_det
    }

    /// Maximal runs of consecutive last-axis residues: `(offset of run start, length)`.
    fn runs(&self) -> Vec<(Vec<isize>, usize)> {
        let nl = *self.spec.res.last().expect("nonempty grid");
        let d = self.spec.dim();
        let mut groups: std::collections::BTreeMap<Vec<isize>, Vec<usize>> = Default::default();
        for o in &self.offsets {
            groups
                .entry(o[..d - 1].to_vec())
                .or_default()
                .push(o[d - 1].rem_euclid(nl as isize) as usize);
        }
        let mut runs = Vec::new();
        for (lead, mut res) in groups {
            res.sort_unstable();
            let mut start = 0;
            for k in 1..=res.len() {
                if k == res.len() || res[k] != res[k - 1] + 1 {
                    let mut shift = lead.clone();
                    shift.push(res[start] as isize);
                    runs.push((shift, k - start));
                    start = k;
                }
            }
        }
        runs
    }

    pub fn average_at(&self, values: &[f64], center: usize) -> f64 {
        shifted_mean(self.members(center).map(|i| values[i]))
    }

    /// Largest ball average over all grid-node centres, with the first maximising node.
    ///
    /// The ball is split into runs along the last axis, each summed from
    /// per-line prefix sums, so the cost per centre is the number of runs.
    pub fn max_average(&self, field: &ScalarField) -> (f64, usize) {
        assert_eq!(field.spec, self.spec, "field grid");
        let nl = *self.spec.res.last().expect("nonempty grid");
        let lines = self.spec.len() / nl;
        // shift by one sample so constant data averages exactly
        let v0 = field.values[0];
        let mut prefix = vec![0.0; lines * (nl + 1)];
        for l in 0..lines {
            let mut s = 0.0;
            for k in 0..nl {
                s += field.values[l * nl + k] - v0;
                prefix[l * (nl + 1) + k + 1] = s;
            }
        }
        let runs = self.runs();
        let count = self.offsets.len() as f64;
        let avgs: Vec<f64> = (0..self.spec.len())
            .into_par_iter()
            .map(|c| {
                let mut s = 0.0;
                for (shift, len) in &runs {
                    let node = self.spec.shifted(c, shift);
                    let p = &prefix[(node / nl) * (nl + 1)..];
                    let st = node % nl;
                    s += if st + len <= nl {
                        p[st + len] - p[st]
                    } else {
                        p[nl] - p[st] + p[st + len - nl]
                    };
                }
                v0 + s / count
            })
            .collect();
        let mut best = 0;
        for (i, &a) in avgs.iter().enumerate() {
            if a > avgs[best] {
                best = i;
            }
        }
        (avgs[best], best)
    }
}

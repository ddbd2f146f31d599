//! Conformal metrics `g = e^{2f} g_0` over a flat torus.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{self, FlatMetric, ScalarField};
use crate::mask::RegionMask;

/// Largest `|a · f|` accepted before evaluating `e^{a f}`.
pub const EXP_GUARD: f64 = 600.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalMetric {
    background: FlatMetric,
    f: ScalarField,
}

impl ConformalMetric {
    pub fn new(background: FlatMetric, f: ScalarField) -> Result<Self> {
        if background.dim() != f.spec().dim() {
            return Err(Error::DimensionMismatch {
                expected: f.spec().dim(),
                found: background.dim(),
            });
        }
        // e^{f} must be finite and positive at every node
        guard(&f, 1.0)?;
        Ok(ConformalMetric { background, f })
    }

    pub fn flat(background: FlatMetric, spec: &grid::GridSpec) -> Result<Self> {
        let f = ScalarField::constant(spec, 0.0)?;
        Self::new(background, f)
    }

    pub fn background(&self) -> &FlatMetric {
        &self.background
    }

    /// The conformal exponent `f`.
    pub fn exponent(&self) -> &ScalarField {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.background.dim()
    }

    /// `e^{a f}` as a field, subject to the overflow guard.
    pub fn exp_field(&self, a: f64) -> Result<ScalarField> {
        exp_scaled(&self.f, a)
    }

    /// `∫ e^{a f} dV_{g_0}`.
    pub fn integral_of_power(&self, a: f64) -> Result<f64> {
        grid::integrate(&self.exp_field(a)?, &self.background)
    }

    /// Same exponent over the background rescaled by a constant.
    pub fn with_background(&self, background: FlatMetric) -> Result<Self> {
        Self::new(background, self.f.clone())
    }
}

fn guard(f: &ScalarField, a: f64) -> Result<()> {
    let value = f.max_abs() * a.abs();
    if value > EXP_GUARD {
        return Err(Error::Overflow {
            exponent: a,
            value,
            limit: EXP_GUARD,
        });
    }
    Ok(())
}

pub(crate) fn exp_scaled(f: &ScalarField, a: f64) -> Result<ScalarField> {
    guard(f, a)?;
    Ok(ScalarField::from_raw(
        f.spec().clone(),
        f.values().iter().map(|&v| (a * v).exp()).collect(),
    ))
}

/// Scalar curvature of `e^{2f} g_0` for a flat background:
/// `R = e^{-2f}(-2(n-1) Δf - (n-2)(n-1) |∇f|²)`.
pub fn scalar_curvature(m: &ConformalMetric) -> Result<ScalarField> {
    let lap = grid::laplacian(&m.f, &m.background)?;
    let grad = grid::gradient_norm_sq(&m.f, &m.background)?;
    Ok(curvature_from_parts(m.dim(), &m.f, &lap, &grad))
}

pub(crate) fn curvature_from_parts(
    n: usize,
    f: &ScalarField,
    lap: &ScalarField,
    grad: &ScalarField,
) -> ScalarField {
    let n = n as f64;
    let values = f
        .values()
        .iter()
        .zip(lap.values())
        .zip(grad.values())
        .map(|((&f, &l), &g)| (-2.0 * f).exp() * (-2.0 * (n - 1.0) * l - (n - 2.0) * (n - 1.0) * g))
        .collect();
    ScalarField::from_raw(f.spec().clone(), values)
}

/// Discrete residual of a pointwise identity whose continuum value is zero.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdentityResidual {
    /// Max over nodes of the absolute residual.
    pub residual: f64,
    /// Max over nodes of the largest term, for relative tolerances.
    pub scale: f64,
}

/// `Δe^{-2f} = -2e^{-2f}Δf + 4e^{-2f}|∇f|²`.
pub fn product_rule_residual(m: &ConformalMetric) -> Result<IdentityResidual> {
    let u = m.exp_field(-2.0)?;
    let lap_u = grid::laplacian(&u, &m.background)?;
    let lap = grid::laplacian(&m.f, &m.background)?;
    let grad = grid::gradient_norm_sq(&m.f, &m.background)?;
    Ok(identity_residual(&[&lap_u, &u, &lap, &grad], |v| {
        [v[0], -2.0 * v[1] * v[2], 4.0 * v[1] * v[3]]
    }))
}

/// `(2/α)Δe^{αf} = 2α|∇f|²e^{αf} + 2e^{αf}Δf`.
pub fn alpha_identity_residual(m: &ConformalMetric, alpha: f64) -> Result<IdentityResidual> {
    if !(alpha.is_finite() && alpha != 0.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be finite and nonzero")));
    }
    let u = m.exp_field(alpha)?;
    let lap_u = grid::laplacian(&u, &m.background)?;
    let lap = grid::laplacian(&m.f, &m.background)?;
    let grad = grid::gradient_norm_sq(&m.f, &m.background)?;
    Ok(identity_residual(&[&lap_u, &u, &lap, &grad], |v| {
        [2.0 / alpha * v[0], 2.0 * alpha * v[3] * v[1], 2.0 * v[1] * v[2]]
    }))
}

// terms[0] = terms[1] + terms[2]
fn identity_residual(fields: &[&ScalarField; 4], terms: impl Fn([f64; 4]) -> [f64; 3]) -> IdentityResidual {
    let mut out = IdentityResidual {
        residual: 0.0,
        scale: 0.0,
    };
    for i in 0..fields[0].len() {
        let t = terms(fields.map(|f| f.values()[i]));
        out.residual = out.residual.max((t[0] - t[1] - t[2]).abs());
        out.scale = t.iter().fold(out.scale, |s, v| s.max(v.abs()));
    }
    out
}

/// `Vol(M) = ∫ e^{n f} dV_{g_0}`.
pub fn volume(m: &ConformalMetric) -> Result<f64> {
    m.integral_of_power(m.dim() as f64)
}

/// `∫_E e^{n f} dV_{g_0}`; an empty mask has volume zero.
pub fn volume_of_region(m: &ConformalMetric, mask: &RegionMask) -> Result<f64> {
    if mask.spec() != m.f.spec() {
        return Err(Error::InvalidArgument("mask lives on a different grid".into()));
    }
    let e = m.exp_field(m.dim() as f64)?;
    Ok(mask.masked_sum(e.values()) * m.background.sqrt_det() * m.f.spec().cell_volume())
}

/// `⨍ e^{a f} dV_{g_0}`.
pub fn weighted_average(m: &ConformalMetric, exponent: f64) -> Result<f64> {
    if !exponent.is_finite() {
        return Err(Error::InvalidArgument("exponent must be finite".into()));
    }
    let e = m.exp_field(exponent)?;
    Ok(grid::sum(e.values()) / e.len() as f64)
}

/// Largest `λ ≥ 0` with `g(v,v) ≥ λ · reference(v,v)` everywhere:
/// `min e^{2f} · λ_min(reference^{-1/2} g_0 reference^{-1/2})`.
pub fn metric_lower_bound_constant(m: &ConformalMetric, reference: &FlatMetric) -> Result<f64> {
    if reference.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: reference.dim(),
        });
    }
    let pencil = generalized_eigenvalues(&m.background.matrix(), &reference.matrix())?;
    let lam = pencil.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((2.0 * m.f.min()).exp() * lam)
}

/// Eigenvalues of the pencil `(a, b)`, i.e. of `L⁻¹ a L⁻ᵀ` with `b = L Lᵀ`.
pub(crate) fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidMetric("reference is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidMetric("reference is singular".into()))?;
    let c = &l_inv * a * l_inv.transpose();
    let sym = (&c + c.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.iter().copied().collect())
}

//! Position-dependent background metrics `g̃` close to a flat metric in C¹.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::conformal::{exp_scaled, generalized_eigenvalues, ConformalMetric};
use crate::error::{Error, Result};
use crate::estimates::HypothesisBudget;
use crate::grid::{
    analyze_spd, contract_gradients, contract_hessian, diff_axis, gradient_components, Accuracy,
    Coefficients, DerivativeOrder, FlatMetric, GridSpec, ScalarField,
};
use crate::report::{CheckReport, Tolerance, REL_TOL};

/// A symmetric positive-definite matrix at every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    spec: GridSpec,
    dim: usize,
    entries: Vec<f64>,
    inverse: Vec<f64>,
    sqrt_det: Vec<f64>,
}

impl MetricField {
    /// `entries` holds one row-major `n × n` matrix per node, nodes in grid order.
    pub fn new(spec: GridSpec, entries: Vec<f64>) -> Result<Self> {
        let n = spec.dim();
        let nn = n * n;
        if entries.len() != spec.len() * nn {
            return Err(Error::InvalidMetric(format!(
                "expected {} entries, got {}",
                spec.len() * nn,
                entries.len()
            )));
        }
        let analysed: Vec<(Vec<f64>, f64)> = entries
            .par_chunks(nn)
            .enumerate()
            .map(|(i, m)| {
                analyze_spd(&DMatrix::from_row_slice(n, n, m))
                    .map(|(inv, sd, _, _)| (inv, sd))
                    .map_err(|e| Error::InvalidMetric(format!("node {i}: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut inverse = Vec::with_capacity(entries.len());
        let mut sqrt_det = Vec::with_capacity(spec.len());
        for (inv, sd) in analysed {
            inverse.extend(inv);
            sqrt_det.push(sd);
        }
        Ok(MetricField {
            spec,
            dim: n,
            entries,
            inverse,
            sqrt_det,
        })
    }

    pub fn constant(spec: &GridSpec, metric: &FlatMetric) -> Result<Self> {
        if metric.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: metric.dim(),
            });
        }
        let entries = metric.entries().repeat(spec.len());
        Self::new(spec.clone(), entries)
    }

    /// Samples a row-major matrix-valued function at every node.
    pub fn from_fn(spec: &GridSpec, g: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let n = spec.dim();
        let mut entries = Vec::with_capacity(spec.len() * n * n);
        for i in 0..spec.len() {
            let m = g(&spec.coords(i));
            if m.len() != n * n {
                return Err(Error::InvalidMetric(format!(
                    "node {i}: expected {} entries, got {}",
                    n * n,
                    m.len()
                )));
            }
            entries.extend(m);
        }
        Self::new(spec.clone(), entries)
    }

    /// `g_0 + scale · P(θ)` for a matrix-valued perturbation `P`.
    pub fn perturbed(
        spec: &GridSpec,
        g0: &FlatMetric,
        scale: f64,
        p: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let base = g0.entries().to_vec();
        Self::from_fn(spec, |t| {
            base.iter()
                .zip(p(t))
                .map(|(b, d)| b + scale * d)
                .collect()
        })
    }

    /// Components `g_{lm}`, `l ≤ m`, interleaved node by node.
    pub fn packed(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = Vec::with_capacity(self.spec.len() * n * (n + 1) / 2);
        for m in self.entries.chunks(n * n) {
            for l in 0..n {
                for k in l..n {
                    out.push(m[l * n + k]);
                }
            }
        }
        out
    }

    /// Inverse of [`packed`](Self::packed).
    pub fn from_packed(spec: GridSpec, packed: &[f64]) -> Result<Self> {
        let n = spec.dim();
        let per = n * (n + 1) / 2;
        if packed.len() != spec.len() * per {
            return Err(Error::InvalidMetric(format!(
                "expected {} packed components, got {}",
                spec.len() * per,
                packed.len()
            )));
        }
        let mut entries = vec![0.0; spec.len() * n * n];
        for (node, c) in packed.chunks(per).enumerate() {
            let m = &mut entries[node * n * n..(node + 1) * n * n];
            let mut it = c.iter();
            for l in 0..n {
                for k in l..n {
                    let v = *it.next().expect("chunk length");
                    m[l * n + k] = v;
                    m[k * n + l] = v;
                }
            }
        }
        Self::new(spec, entries)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn matrix_at(&self, idx: usize) -> &[f64] {
        let nn = self.dim * self.dim;
        &self.entries[idx * nn..(idx + 1) * nn]
    }

    /// The field of one component `g_{lm}`.
    pub fn component(&self, l: usize, m: usize) -> ScalarField {
        let n = self.dim;
        let v = self.entries.chunks(n * n).map(|g| g[l * n + m]).collect();
        ScalarField::from_raw(self.spec.clone(), v)
    }

    fn check_field(&self, u: &ScalarField) -> Result<()> {
        if u.spec() != &self.spec {
            return Err(Error::InvalidField("field and metric live on different grids".into()));
        }
        Ok(())
    }

    fn check_flat(&self, g0: &FlatMetric) -> Result<()> {
        if g0.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: g0.dim(),
            });
        }
        Ok(())
    }
}

/// Drift `b^m = (1/√det g) ∂_l(√det g · g^{lm})` of the Laplace–Beltrami operator.
pub(crate) fn drift(g: &MetricField, acc: Accuracy) -> Vec<Vec<f64>> {
    let n = g.dim;
    let len = g.spec.len();
    let mut b = vec![vec![0.0; len]; n];
    for (m, bm) in b.iter_mut().enumerate() {
        for l in 0..n {
            let w: Vec<f64> = (0..len)
                .map(|i| g.sqrt_det[i] * g.inverse[i * n * n + l * n + m])
                .collect();
            let d = diff_axis(&g.spec, &w, l, DerivativeOrder::First, acc);
            for (o, v) in bm.iter_mut().zip(d) {
                *o += v;
            }
        }
        for (o, sd) in bm.iter_mut().zip(&g.sqrt_det) {
            *o /= sd;
        }
    }
    b
}

/// `Δ^g u = (1/√det g) ∂_l(√det g g^{lm} ∂_m u)`, evaluated in the expanded
/// form `g^{lm} ∂_l ∂_m u + b^m ∂_m u`.
pub fn laplace_beltrami(g: &MetricField, u: &ScalarField) -> Result<ScalarField> {
    laplace_beltrami_with(g, u, Accuracy::default())
}

pub fn laplace_beltrami_with(g: &MetricField, u: &ScalarField, acc: Accuracy) -> Result<ScalarField> {
    g.check_field(u)?;
    let mut out = contract_hessian(&g.spec, u.values(), Coefficients::Pointwise(&g.inverse), acc);
    let b = drift(g, acc);
    let du = gradient_components(&g.spec, u.values(), acc);
    for (bm, dm) in b.iter().zip(&du) {
        for ((o, x), y) in out.iter_mut().zip(bm).zip(dm) {
            *o += x * y;
        }
    }
    Ok(ScalarField::from_raw(g.spec.clone(), out))
}

/// `|∇u|²_g = g^{lm} ∂_l u ∂_m u`.
pub fn gradient_norm_sq(g: &MetricField, u: &ScalarField) -> Result<ScalarField> {
    g.check_field(u)?;
    let d = gradient_components(&g.spec, u.values(), Accuracy::default());
    Ok(ScalarField::from_raw(
        g.spec.clone(),
        contract_gradients(&d, &d, Coefficients::Pointwise(&g.inverse)),
    ))
}

/// `∫ u dV_g` with the pointwise volume density.
pub fn integrate(g: &MetricField, u: &ScalarField) -> Result<f64> {
    g.check_field(u)?;
    let s: f64 = u.values().iter().zip(&g.sqrt_det).map(|(a, b)| a * b).sum();
    Ok(s * g.spec.cell_volume())
}

/// Value part and derivative part of the C¹ distance.
pub fn c1_parts(g: &MetricField, g0: &FlatMetric) -> Result<(f64, f64)> {
    g.check_flat(g0)?;
    let n = g.dim;
    let mut value = 0.0_f64;
    let mut deriv = 0.0_f64;
    for l in 0..n {
        for m in l..n {
            let c = g.component(l, m);
            let target = g0.entry(l, m);
            value = c.values().iter().fold(value, |a, v| a.max((v - target).abs()));
            for k in 0..n {
                let d = diff_axis(&g.spec, c.values(), k, DerivativeOrder::First, Accuracy::default());
                deriv = d.iter().fold(deriv, |a, v| a.max(v.abs()));
            }
        }
    }
    Ok((value, deriv))
}

/// `max(sup |g̃_{lm} - (g_0)_{lm}|, sup |∂_k g̃_{lm}|)`.
pub fn c1_distance(g: &MetricField, g0: &FlatMetric) -> Result<f64> {
    let (v, d) = c1_parts(g, g0)?;
    Ok(v.max(d))
}

/// Smallest `c` with `(1-c) g_0 ≤ g̃ ≤ (1+c) g_0` at every node.
pub fn closeness_constant(g: &MetricField, g0: &FlatMetric) -> Result<f64> {
    g.check_flat(g0)?;
    let n = g.dim;
    let b = g0.matrix();
    let per: Vec<f64> = g
        .entries
        .par_chunks(n * n)
        .map(|m| {
            generalized_eigenvalues(&DMatrix::from_row_slice(n, n, m), &b)
                .map(|ev| ev.iter().fold(0.0_f64, |a, l| a.max((l - 1.0).abs())))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

/// The conformal part of the scalar curvature of `e^{2f} g̃`:
/// `e^{-2f}(-2(n-1) Δ^{g̃} f - (n-2)(n-1) |∇f|²_{g̃})`, omitting `e^{-2f} R_{g̃}`.
pub fn conformal_curvature_part(g: &MetricField, f: &ScalarField) -> Result<ScalarField> {
    let lap = laplace_beltrami(g, f)?;
    let grad = gradient_norm_sq(g, f)?;
    Ok(crate::conformal::curvature_from_parts(g.dim, f, &lap, &grad))
}

/// `2 sup |b̃|_{g_0} sup e^{-f}`, which bounds the drift term `b̃^m ∂_m e^{-2f}`
/// by a multiple of `|∇e^{-f}|_{g_0}`.
pub fn drift_coefficient(g: &MetricField, g0: &FlatMetric, f: &ScalarField) -> Result<f64> {
    g.check_flat(g0)?;
    g.check_field(f)?;
    let b = drift(g, Accuracy::default());
    let n = g.dim;
    let mut sup_b = 0.0_f64;
    let mut v = vec![0.0; n];
    for i in 0..g.spec.len() {
        for (m, vm) in v.iter_mut().enumerate() {
            *vm = b[m][i];
        }
        sup_b = sup_b.max(g0.quad_form(&v).sqrt());
    }
    Ok(2.0 * sup_b * (-f.min()).exp())
}

/// Measured constants of a perturbed background at index `j`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerturbationConstants {
    pub c1_distance: f64,
    pub closeness: f64,
    /// `j · max(c1_distance, closeness)`.
    pub c_metric: f64,
    /// `j · drift_coefficient`.
    pub c1: f64,
}

pub fn measure_constants(
    g: &MetricField,
    g0: &FlatMetric,
    f: &ScalarField,
    j: u64,
) -> Result<PerturbationConstants> {
    let jf = j as f64;
    let c1d = c1_distance(g, g0)?;
    let close = closeness_constant(g, g0)?;
    Ok(PerturbationConstants {
        c1_distance: c1d,
        closeness: close,
        c_metric: jf * c1d.max(close),
        c1: jf * drift_coefficient(g, g0, f)?,
    })
}

/// Elliptic inequality for `e^{-2f}` over a C¹-perturbed background, first
/// in `g̃` itself, then transferred to `g_0` with the `(1 ± C/j)` factors taken
/// on their unfavourable side, and finally integrated.
///
/// `C` and `C1` come from the budget when given, otherwise they are measured
/// (see [`measure_constants`]). The hypotheses are `c1_distance ≤ C/j`,
/// `closeness ≤ C/j`, and the conformal part of the curvature `≥ -1/j`.
pub fn check_perturbed_pde(
    g: &MetricField,
    g0: &FlatMetric,
    m: &ConformalMetric,
    budget: &HypothesisBudget,
) -> Result<Vec<CheckReport>> {
    let n = g.dim;
    budget.validate(n)?;
    if m.background() != g0 {
        return Err(Error::InvalidArgument(
            "conformal metric must be taken over the flat limit".into(),
        ));
    }
    let f = m.exponent();
    g.check_field(f)?;
    let nf = n as f64;
    let j = budget.j as f64;
    let measured = measure_constants(g, g0, f, budget.j)?;
    let c = budget.c_metric.unwrap_or(measured.c_metric);
    let c1 = budget.c1.unwrap_or(measured.c1);

    let mut reasons = Vec::new();
    let slack = 1.0 + REL_TOL;
    if measured.c1_distance > c / j * slack {
        reasons.push(format!("C1 distance {:e} exceeds C/j = {:e}", measured.c1_distance, c / j));
    }
    if measured.closeness > c / j * slack {
        reasons.push(format!("metric closeness {:e} exceeds C/j = {:e}", measured.closeness, c / j));
    }
    let r = conformal_curvature_part(g, f)?;
    if r.min() < -(1.0 / j) * slack {
        reasons.push(format!("conformal curvature min {:e} < -1/j", r.min()));
    }
    let prereq = (!reasons.is_empty()).then(|| reasons.join(", "));
    let tol = Tolerance::cross_route(&g.spec, Accuracy::default());
    let constants = format!("C = {c:e}, C1 = {c1:e}");

    let u = exp_scaled(f, -2.0)?;
    let v = exp_scaled(f, -1.0)?;

    // in g̃
    let lb = laplace_beltrami(g, &u)?;
    let gv = gradient_norm_sq(g, &v)?;
    let (mut worst, mut scale) = (f64::NEG_INFINITY, 1.0 / j);
    for i in 0..g.spec.len() {
        let a = -(nf - 1.0) * lb.values()[i];
        let b = (nf - 1.0) * (nf + 2.0) * gv.values()[i];
        worst = worst.max(a + b);
        scale = scale.max(a.abs() + b.abs());
    }
    let essential = CheckReport::evaluate(
        "perturbed_pde",
        "perturbed-elliptic-inequality",
        worst,
        1.0 / j,
        tol.absolute(scale),
    )
    .gated(&prereq);

    // transferred to g_0
    let lap0 = crate::grid::laplacian(&u, g0)?;
    let gv0 = crate::grid::gradient_norm_sq(&v, g0)?;
    let coef = (nf - 1.0) * (nf + 2.0) * (1.0 + c / j) - c1 / j;
    let rhs = (1.0 + c1) / j;
    let (mut worst, mut scale) = (f64::NEG_INFINITY, rhs);
    for i in 0..g.spec.len() {
        let l = lap0.values()[i];
        let a = -(nf - 1.0) * l + (nf - 1.0) * l.abs() * c / j;
        let b = coef * gv0.values()[i];
        worst = worst.max(a + b);
        scale = scale.max(a.abs() + b.abs());
    }
    let rewrite = CheckReport::evaluate(
        "perturbed_pde_flat",
        "perturbed-elliptic-inequality-flat",
        worst,
        rhs,
        tol.absolute(scale),
    )
    .with_note(constants.clone())
    .gated(&prereq);

    let vol0 = g.spec.len() as f64 * g.spec.cell_volume() * g0.sqrt_det();
    let lhs = crate::grid::integrate(&gv0, g0)?;
    let mut sobolev = if coef > 0.0 {
        let rhs = (1.0 + c1) * vol0 / (j * coef);
        CheckReport::evaluate(
            "perturbed_sobolev_bound",
            "perturbed-sobolev",
            lhs,
            rhs,
            tol.absolute(lhs.max(rhs)),
        )
        .with_note(constants)
    } else {
        CheckReport::evaluate("perturbed_sobolev_bound", "perturbed-sobolev", lhs, 0.0, 0.0)
            .prerequisite_failed(format!("j too small: gradient coefficient {coef:e} ≤ 0"))
    };
    sobolev = sobolev.gated(&prereq);
    Ok(vec![essential, rewrite, sobolev])
}

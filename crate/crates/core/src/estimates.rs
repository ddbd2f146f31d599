//! Inequality checkers for conformal tori with almost nonnegative scalar curvature.
//!
//! Every checker returns [`CheckReport`]s carrying both sides of the
//! inequality. Implications whose hypothesis fails are reported as
//! [`Status::Prereq`](crate::report::Status) rather than pass or fail.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::conformal::{self, exp_scaled, ConformalMetric};
use crate::error::{Error, Result};
use crate::grid::{self, BallStencil};
use crate::mask::RegionMask;
use crate::report::{CheckReport, Tolerance};

/// Cap value meaning "no constraint" for budget fields a caller leaves unset.
pub const UNCONSTRAINED: f64 = 1e300;

/// Constants of the hypotheses being checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBudget {
    pub j: u64,
    #[serde(rename = "V0")]
    pub v0: f64,
    #[serde(rename = "D0")]
    pub d0: f64,
    #[serde(rename = "Cneg")]
    pub cneg: f64,
    #[serde(rename = "Cui")]
    pub cui: f64,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, rename = "Cp", skip_serializing_if = "Option::is_none")]
    pub cp: Option<f64>,
    pub alpha: f64,
    /// Metric closeness constant: `(1 ± C/j)` two-sided bound of a perturbed background.
    #[serde(default, rename = "C", skip_serializing_if = "Option::is_none")]
    pub c_metric: Option<f64>,
    /// First-order coefficient of the background expansion; measured when absent.
    #[serde(default, rename = "C1", skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
}

impl HypothesisBudget {
    /// Unconstrained caps, `q = 1` and `α = (n-2)/4`.
    pub fn new(j: u64, n: usize) -> Self {
        HypothesisBudget {
            j,
            v0: UNCONSTRAINED,
            d0: UNCONSTRAINED,
            cneg: UNCONSTRAINED,
            cui: UNCONSTRAINED,
            q: 1.0,
            p: None,
            cp: None,
            alpha: default_alpha(n),
            c_metric: None,
            c1: None,
        }
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.j as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBudget(msg));
        if self.j == 0 {
            return bad("j must be at least 1".into());
        }
        for (name, v) in [
            ("V0", self.v0),
            ("D0", self.d0),
            ("Cneg", self.cneg),
            ("Cui", self.cui),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q = {} must lie in (0, 1]", self.q));
        }
        if let Some(p) = self.p {
            if p <= n as f64 {
                return bad(format!("p = {p} must exceed n = {n}"));
            }
        }
        for (name, v) in [("Cp", self.cp), ("C", self.c_metric), ("C1", self.c1)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("{name} = {v} must be nonnegative"));
                }
            }
        }
        if n >= 3 {
            check_alpha(self.alpha, n)?;
        }
        Ok(())
    }
}

pub fn default_alpha(n: usize) -> f64 {
    (n as f64 - 2.0) / 4.0
}

fn check_alpha(alpha: f64, n: usize) -> Result<()> {
    let hi = (n as f64 - 2.0) / 2.0;
    if !(alpha > 0.0 && alpha < hi) {
        return Err(Error::InvalidBudget(format!(
            "alpha = {alpha} must lie in (0, {hi})"
        )));
    }
    Ok(())
}

fn same_route(scale: f64) -> f64 {
    Tolerance::same_route().absolute(scale)
}

/// Reason the scalar-curvature hypothesis `R ≥ -eps` fails, if it does.
pub(crate) fn scalar_prerequisite(m: &ConformalMetric, eps: f64) -> Result<Option<String>> {
    let r = check_scalar_lower_bound(m, eps)?;
    Ok((!r.pass).then(|| format!("min R = {:e} < -{eps:e}", -r.lhs)))
}

/// `R ≥ -eps`: `lhs = -min R`, `rhs = eps`.
pub fn check_scalar_lower_bound(m: &ConformalMetric, eps: f64) -> Result<CheckReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let r = conformal::scalar_curvature(m)?;
    let at = r.argmin();
    let lhs = -r.values()[at];
    let tol = same_route(lhs.abs().max(eps));
    Ok(
        CheckReport::evaluate("scalar_lower_bound", "scalar-curvature-floor", lhs, eps, tol)
            .with_note(format!("min at node {at}")),
    )
}

/// Pointwise elliptic inequalities implied by `R ≥ -1/j`: the base inequality
/// for `f`, its `e^{-2f}` form, and the `e^{αf}` family (n ≥ 3).
pub fn check_conformal_pde(m: &ConformalMetric, budget: &HypothesisBudget) -> Result<Vec<CheckReport>> {
    let n = m.dim();
    budget.validate(n)?;
    let nf = n as f64;
    let j = budget.j as f64;
    let g0 = m.background();
    let f = m.exponent();
    let spec = f.spec().clone();
    let prereq = scalar_prerequisite(m, budget.eps())?;
    let cross = Tolerance::cross_route(&spec, Default::default());

    let lap = grid::laplacian(f, g0)?;
    let grad = grid::gradient_norm_sq(f, g0)?;
    let e2 = exp_scaled(f, 2.0)?;

    let mut reports = Vec::new();

    // 2Δf + (n-2)|∇f|² ≤ e^{2f}/((n-1)j)
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    let mut scale = 0.0_f64;
    for i in 0..spec.len() {
        let a = 2.0 * lap.values()[i];
        let b = (nf - 2.0) * grad.values()[i];
        let c = e2.values()[i] / ((nf - 1.0) * j);
        if a + b - c > worst {
            worst = a + b - c;
            at = i;
        }
        scale = scale.max(a.abs() + b.abs() + c.abs());
    }
    reports.push(
        CheckReport::evaluate("conformal_pde", "elliptic-inequality", worst, 0.0, same_route(scale))
            .with_note(format!("sup residual at node {at}"))
            .gated(&prereq),
    );

    // -(n-1)Δe^{-2f} + (n-1)(n+2)|∇e^{-f}|² ≤ 1/j, through the discrete product rule
    let u = exp_scaled(f, -2.0)?;
    let v = exp_scaled(f, -1.0)?;
    let lap_u = grid::laplacian(&u, g0)?;
    let grad_v = grid::gradient_norm_sq(&v, g0)?;
    let mut worst = f64::NEG_INFINITY;
    let mut scale = 1.0 / j;
    for i in 0..spec.len() {
        let a = -(nf - 1.0) * lap_u.values()[i];
        let b = (nf - 1.0) * (nf + 2.0) * grad_v.values()[i];
        worst = worst.max(a + b);
        scale = scale.max(a.abs() + b.abs());
    }
    reports.push(
        CheckReport::evaluate(
            "conformal_pde_exponential",
            "elliptic-inequality-exponential",
            worst,
            1.0 / j,
            cross.absolute(scale),
        )
        .gated(&prereq),
    );

    if n >= 3 {
        let alpha = budget.alpha;
        check_alpha(alpha, n)?;
        // (2/α)Δe^{αf} + (n-2-2α)|∇f|² e^{αf} ≤ e^{(2+α)f}/((n-1)j)
        let ea = exp_scaled(f, alpha)?;
        let lap_ea = grid::laplacian(&ea, g0)?;
        let mut worst = f64::NEG_INFINITY;
        let mut scale = 0.0_f64;
        for i in 0..spec.len() {
            let a = 2.0 / alpha * lap_ea.values()[i];
            let b = (nf - 2.0 - 2.0 * alpha) * grad.values()[i] * ea.values()[i];
            let c = ((2.0 + alpha) * f.values()[i]).exp() / ((nf - 1.0) * j);
            worst = worst.max(a + b - c);
            scale = scale.max(a.abs() + b.abs() + c.abs());
        }
        reports.push(
            CheckReport::evaluate(
                format!("conformal_pde_alpha({alpha})"),
                "elliptic-inequality-alpha-family",
                worst,
                0.0,
                cross.absolute(scale),
            )
            .gated(&prereq),
        );
    }
    Ok(reports)
}

/// Coordinate volume of the background torus under the grid quadrature.
pub(crate) fn background_volume(m: &ConformalMetric) -> f64 {
    let spec = m.exponent().spec();
    spec.len() as f64 * spec.cell_volume() * m.background().sqrt_det()
}

/// Integrated gradient bounds for `f`, `e^{-f}` and `e^{αf/2}`.
pub fn check_sobolev_triple(m: &ConformalMetric, budget: &HypothesisBudget) -> Result<Vec<CheckReport>> {
    let n = m.dim();
    budget.validate(n)?;
    let nf = n as f64;
    let j = budget.j as f64;
    let g0 = m.background();
    let f = m.exponent();
    let spec = f.spec().clone();
    let vol0 = background_volume(m);
    let volj = conformal::volume(m)?;

    let mut reasons = Vec::new();
    if let Some(r) = scalar_prerequisite(m, budget.eps())? {
        reasons.push(r);
    }
    if volj > budget.v0 * (1.0 + crate::report::REL_TOL) {
        reasons.push(format!("Vol = {volj:e} exceeds V0 = {:e}", budget.v0));
    }
    let prereq = (!reasons.is_empty()).then(|| reasons.join(", "));
    let cross = Tolerance::cross_route(&spec, Default::default());

    let mut reports = Vec::new();
    let l1 = grid::integrate(&grid::gradient_norm_sq(f, g0)?, g0)?;
    let r1 = budget.v0.powf(2.0 / nf) * vol0.powf((nf - 2.0) / nf) / ((nf - 1.0) * j);
    reports.push(
        CheckReport::evaluate("sobolev_gradient_f", "sobolev-f", l1, r1, cross.absolute(l1.max(r1)))
            .gated(&prereq),
    );

    let v = exp_scaled(f, -1.0)?;
    let l2 = grid::integrate(&grid::gradient_norm_sq(&v, g0)?, g0)?;
    let r2 = vol0 / (j * (nf - 1.0) * (nf + 2.0));
    reports.push(
        CheckReport::evaluate(
            "sobolev_gradient_exp_neg_f",
            "sobolev-exp-neg-f",
            l2,
            r2,
            cross.absolute(l2.max(r2)),
        )
        .gated(&prereq),
    );

    if n >= 3 {
        let a = budget.alpha;
        let w = exp_scaled(f, a / 2.0)?;
        let l3 = grid::integrate(&grid::gradient_norm_sq(&w, g0)?, g0)?;
        let r3 = a * a * budget.v0.powf((2.0 + a) / nf) * vol0.powf((nf - 2.0 - a) / nf)
            / (4.0 * (nf - 2.0 - 2.0 * a) * (nf - 1.0) * j);
        reports.push(
            CheckReport::evaluate(
                format!("sobolev_gradient_exp_alpha({a})"),
                "sobolev-exp-alpha",
                l3,
                r3,
                cross.absolute(l3.max(r3)),
            )
            .gated(&prereq),
        );
    }
    Ok(reports)
}

/// Jensen lower bounds and `Cneg` upper bounds for `∫e^{-2f}` and `∫e^{-f}`.
pub fn jensen_sandwich(m: &ConformalMetric, budget: &HypothesisBudget) -> Result<Vec<CheckReport>> {
    let nf = m.dim() as f64;
    let vol0 = background_volume(m);
    let volj = conformal::volume(m)?;
    let i2 = m.integral_of_power(-2.0)?;
    let i1 = m.integral_of_power(-1.0)?;
    let rep = |name: &str, tag: &str, lhs: f64, rhs: f64| {
        CheckReport::evaluate(name, tag, lhs, rhs, same_route(lhs.abs().max(rhs.abs())))
    };
    Ok(vec![
        rep(
            "jensen_lower_exp_neg_2f",
            "jensen-lower",
            vol0.powf((nf + 2.0) / nf) / volj.powf(2.0 / nf),
            i2,
        ),
        rep("jensen_upper_exp_neg_2f", "integral-cap", i2, budget.cneg),
        rep(
            "jensen_lower_exp_neg_f",
            "jensen-lower",
            vol0.powf((nf + 1.0) / nf) / volj.powf(1.0 / nf),
            i1,
        ),
        rep(
            "jensen_upper_exp_neg_f",
            "integral-cap-holder",
            i1,
            budget.cneg.sqrt() * vol0.sqrt(),
        ),
    ])
}

/// Output of [`c0_lower_bound`]: the corrected bound and the uncorrected
/// variant side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C0Bounds {
    pub corrected: CheckReport,
    pub displayed: CheckReport,
    /// `max_x ⨍_{B(x,r)} e^{-2f}`.
    pub ball_max_average: f64,
    pub kappa: f64,
    pub kappa_displayed: f64,
    pub radius: f64,
}

/// Pointwise lower bound on `e^{2f}` from ball averages of the subharmonic
/// function `e^{-2f} + e^{α θ_1}`, with `α = (g_0)_{11}/√((n-1)j)`.
///
/// The radius is clamped to the injectivity estimate `π √λ_min`.
pub fn c0_lower_bound(m: &ConformalMetric, r: f64, j: u64) -> Result<C0Bounds> {
    if !(r > 0.0 && r <= PI) {
        return Err(Error::InvalidArgument(format!("radius {r} must lie in (0, π]")));
    }
    if j == 0 {
        return Err(Error::InvalidArgument("j must be at least 1".into()));
    }
    let n = m.dim() as f64;
    let g0 = m.background();
    let f = m.exponent();
    let prereq = scalar_prerequisite(m, 1.0 / j as f64)?;
    let inj = PI * g0.eigen_bounds().0.sqrt();
    let radius = r.min(inj);
    let stencil = BallStencil::new(f.spec(), g0, radius)?;
    let u = exp_scaled(f, -2.0)?;
    let (a, center) = stencil.max_average(&u);

    let alpha = g0.entry(0, 0) / ((n - 1.0) * j as f64).sqrt();
    let kappa = (2.0 * PI * alpha).exp() - (PI * alpha).exp();
    let kappa_displayed = (2.0 * PI * alpha).exp();
    let rhs = (2.0 * f.min()).exp();
    let mk = |name: &str, k: f64| {
        let lhs = 1.0 / (a + k);
        let mut rep = CheckReport::evaluate(name, "subharmonic-c0", lhs, rhs, same_route(lhs.max(rhs)))
            .with_note(format!("max ball average at node {center}"));
        if radius < r {
            rep = rep.with_note(format!("radius clamped from {r} to injectivity estimate {radius}"));
        }
        rep.gated(&prereq)
    };
    Ok(C0Bounds {
        corrected: mk("c0_lower_bound", kappa),
        displayed: mk("c0_lower_bound_displayed", kappa_displayed),
        ball_max_average: a,
        kappa,
        kappa_displayed,
        radius,
    })
}

/// Uniform-integrability certificate `Vol_g(E) ≤ Cp Vol_{g0}(E)^q` from an `L^p` bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpCertificate {
    pub p: f64,
    #[serde(rename = "Cp")]
    pub cp: f64,
    pub q: f64,
}

/// `Cp = ∫e^{pf}` and `q = (p-n)/p`. Hölder with the conjugate pair
/// `(p/n, p/(p-n))` gives `Vol_g(E) ≤ Cp^{n/p} Vol_{g0}(E)^q`, so the returned
/// constant is valid for the stated inequality whenever `Cp ≥ 1`.
pub fn ui_from_lp(m: &ConformalMetric, p: f64) -> Result<LpCertificate> {
    let n = m.dim() as f64;
    if !(p > n && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p = {p} must exceed n = {n}")));
    }
    let cp = m.integral_of_power(p)?;
    Ok(LpCertificate {
        p,
        cp,
        q: (p - n) / p,
    })
}

/// Worst ratio `Vol_g(E) / Vol_{g0}(E)^q` over `masks` against `Cui`.
pub fn ui_fit(m: &ConformalMetric, masks: &[RegionMask], budget: &HypothesisBudget) -> Result<CheckReport> {
    budget.validate(m.dim())?;
    let (worst, at) = worst_ui_ratio(m, masks, budget.q)?;
    let rhs = budget.cui;
    Ok(
        CheckReport::evaluate("uniform_integrability", "uniform-integrability", worst, rhs, same_route(worst.max(rhs)))
            .with_note(format!("worst mask: {}", masks[at].label())),
    )
}

/// Largest `Vol_g(E) / Vol_{g0}(E)^q` over the nonempty masks, with its index.
pub fn worst_ui_ratio(m: &ConformalMetric, masks: &[RegionMask], q: f64) -> Result<(f64, usize)> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("no masks supplied".into()));
    }
    let spec = m.exponent().spec();
    let en = m.exp_field(m.dim() as f64)?;
    let w = spec.cell_volume() * m.background().sqrt_det();
    let mut best: Option<(f64, usize)> = None;
    for (k, mask) in masks.iter().enumerate() {
        if mask.spec() != spec {
            return Err(Error::InvalidArgument("mask lives on a different grid".into()));
        }
        if mask.is_empty() {
            continue;
        }
        let vg = mask.masked_sum(en.values()) * w;
        let ratio = vg / mask.flat_volume(m.background()).powf(q);
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, k));
        }
    }
    best.ok_or(Error::EmptyMask)
}

/// Negative-scalar obstruction: a metric with `R ≡ -1` and volume `vol0`
/// admits a conformal factor with `R ≥ -1/j` and volume ≤ V0 only if
/// `vol0^{(n-2)/n} (V0^{2/n}/j - vol0^{2/n}) ≥ 0`.
///
/// `lhs = 0` and `rhs` is that quantity, so a failed report is a contradiction.
pub fn negative_scalar_obstruction(vol0: f64, budget: &HypothesisBudget, n: usize) -> Result<CheckReport> {
    if !(vol0 > 0.0 && vol0.is_finite()) {
        return Err(Error::InvalidArgument(format!("vol0 = {vol0} must be positive")));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("the obstruction needs n ≥ 3".into()));
    }
    if budget.j == 0 || !(budget.v0 > 0.0) {
        return Err(Error::InvalidBudget("need j ≥ 1 and V0 > 0".into()));
    }
    let nf = n as f64;
    let j = budget.j as f64;
    let a = budget.v0.powf(2.0 / nf) / j;
    let b = vol0.powf(2.0 / nf);
    let rhs = vol0.powf((nf - 2.0) / nf) * (a - b);
    // rounding in the two powers only
    let tol = 1e-12 * vol0.powf((nf - 2.0) / nf) * a.max(b);
    let rep = CheckReport::evaluate("negative_scalar_obstruction", "negative-scalar-sign", 0.0, rhs, tol);
    let note = if rep.pass {
        format!(
            "consistent; gradient cap ∫|∇f|² ≤ {:e}",
            rhs.max(0.0) / ((nf - 2.0) * (nf - 1.0))
        )
    } else {
        "CONTRADICTION: no conformal factor with R ≥ -1/j fits under V0".to_string()
    };
    Ok(rep.with_note(note))
}

/// Boundary volume `V0 / j^{n/2}` at which the obstruction changes sign.
pub fn obstruction_threshold(budget: &HypothesisBudget, n: usize) -> f64 {
    budget.v0 / (budget.j as f64).powf(n as f64 / 2.0)
}

/// Hypothesis caps on volume and diameter.
pub fn check_caps(volume: f64, diameter: f64, budget: &HypothesisBudget) -> Vec<CheckReport> {
    vec![
        CheckReport::evaluate("volume_cap", "volume-cap", volume, budget.v0, same_route(budget.v0)),
        CheckReport::evaluate("diameter_cap", "diameter-cap", diameter, budget.d0, same_route(budget.d0)),
    ]
}

/// Poincaré inequality `∫|u - ū|² ≤ (1/λ₁) ∫|∇u|²` for `u = e^{-f}`, with `λ₁`
/// the first nonzero Laplace eigenvalue of the background.
pub fn poincare_check(m: &ConformalMetric) -> Result<CheckReport> {
    let g0 = m.background();
    let v = exp_scaled(m.exponent(), -1.0)?;
    let mean = grid::sum(v.values()) / v.len() as f64;
    let dev = v.map(|x| (x - mean) * (x - mean))?;
    let lhs = grid::integrate(&dev, g0)?;
    let lam = g0.first_laplace_eigenvalue();
    let rhs = grid::integrate(&grid::gradient_norm_sq(&v, g0)?, g0)? / lam;
    let tol = Tolerance::cross_route(v.spec(), Default::default()).absolute(lhs.max(rhs));
    Ok(CheckReport::evaluate("poincare", "poincare", lhs, rhs, tol).with_note(format!("lambda_1 = {lam}")))
}

/// `∫ e^{-2f} dV_0`, the quantity the `Cneg` cap bounds.
pub fn negative_power_integral(m: &ConformalMetric) -> Result<f64> {
    m.integral_of_power(-2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FlatMetric, GridSpec, ScalarField};
    use crate::report::Status;
    use approx::assert_relative_eq;

    fn flat(n: usize, res: usize) -> ConformalMetric {
        ConformalMetric::flat(FlatMetric::identity(n), &GridSpec::cubic(n, res).unwrap()).unwrap()
    }

    fn sine(n: usize, res: usize, amp: f64) -> ConformalMetric {
        let spec = GridSpec::cubic(n, res).unwrap();
        let f = ScalarField::from_fn(&spec, |t| amp * t[0].sin()).unwrap();
        ConformalMetric::new(FlatMetric::identity(n), f).unwrap()
    }

    #[test]
    fn scalar_bound_examples() {
        assert!(check_scalar_lower_bound(&flat(3, 8), 1.0).unwrap().pass);
        // min over s of e^{-0.2s}(0.4s - 0.02(1-s²)) by dense 1-d search
        let oracle = (0..=200_000)
            .map(|k| -1.0 + 2.0 * k as f64 / 200_000.0)
            .map(|s: f64| (-0.2 * s).exp() * (0.4 * s - 0.02 * (1.0 - s * s)))
            .fold(f64::INFINITY, f64::min);
        let rep = check_scalar_lower_bound(&sine(3, 32, 0.1), 0.05).unwrap();
        assert!(!rep.pass);
        assert!((-rep.lhs - oracle).abs() < 1e-4, "{} vs {oracle}", -rep.lhs);
        assert!(check_scalar_lower_bound(&flat(3, 8), 0.0).is_err());
    }

    #[test]
    fn flat_field_passes_everything() {
        let m = flat(3, 8);
        let b = HypothesisBudget {
            v0: 300.0,
            ..HypothesisBudget::new(5, 3)
        };
        let pde = check_conformal_pde(&m, &b).unwrap();
        assert_eq!(pde.len(), 3);
        assert!(pde.iter().all(|r| r.pass));
        assert_relative_eq!(pde[0].lhs, -1.0 / (2.0 * 5.0));
        let sob = check_sobolev_triple(&m, &b).unwrap();
        assert!(sob.iter().all(|r| r.pass && r.lhs == 0.0));
    }

    #[test]
    fn overscaled_field_is_flagged_as_prerequisite() {
        let m = sine(3, 16, 0.5);
        let b = HypothesisBudget::new(10, 3);
        let pde = check_conformal_pde(&m, &b).unwrap();
        assert!(pde.iter().all(|r| r.status == Status::Prereq));
        // the base inequality itself is violated at the minimising point
        assert!(pde[0].lhs > 0.0);
    }

    #[test]
    fn alpha_out_of_range_is_an_error() {
        let b = HypothesisBudget {
            alpha: 0.5,
            ..HypothesisBudget::new(3, 3)
        };
        assert!(check_conformal_pde(&flat(3, 8), &b).is_err());
    }

    #[test]
    fn jensen_is_tight_for_constants() {
        let spec = GridSpec::cubic(3, 8).unwrap();
        for c in [0.0, 0.4, -0.7] {
            let m = ConformalMetric::new(FlatMetric::identity(3), ScalarField::constant(&spec, c).unwrap())
                .unwrap();
            let r = jensen_sandwich(&m, &HypothesisBudget::new(1, 3)).unwrap();
            for k in [0, 2] {
                assert!(r[k].pass);
                assert!(r[k].slack.abs() < 1e-10 * r[k].rhs, "{:?}", r[k]);
            }
        }
        let r = jensen_sandwich(&sine(3, 16, 0.5), &HypothesisBudget::new(1, 3)).unwrap();
        assert!(r[0].slack > 0.0 && r[2].slack > 0.0);
    }

    #[test]
    fn c0_bound_for_constants() {
        let spec = GridSpec::cubic(2, 16).unwrap();
        for c in [0.0, 0.3] {
            let m = ConformalMetric::new(FlatMetric::identity(2), ScalarField::constant(&spec, c).unwrap())
                .unwrap();
            let b = c0_lower_bound(&m, 1.0, 10).unwrap();
            assert_relative_eq!(b.ball_max_average, (-2.0 * c).exp(), max_relative = 1e-14);
            assert_relative_eq!(b.corrected.lhs, 1.0 / ((-2.0 * c).exp() + b.kappa));
            assert!(b.corrected.pass && b.displayed.pass);
            assert!(b.displayed.lhs < b.corrected.lhs);
        }
    }

    #[test]
    fn c0_radius_clamped_for_small_backgrounds() {
        let spec = GridSpec::cubic(2, 32).unwrap();
        let g0 = FlatMetric::diagonal(&[0.25, 1.0]).unwrap();
        let m = ConformalMetric::flat(g0, &spec).unwrap();
        let b = c0_lower_bound(&m, PI, 10).unwrap();
        assert_relative_eq!(b.radius, PI * 0.5);
        assert!(b.corrected.note.as_deref().unwrap().contains("clamped"));
    }

    #[test]
    fn lp_certificate_examples() {
        let m = flat(3, 8);
        let c = ui_from_lp(&m, 6.0).unwrap();
        assert_relative_eq!(c.cp, crate::grid::TWO_PI.powi(3), max_relative = 1e-14);
        assert_eq!(c.q, 0.5);
        assert!(ui_from_lp(&m, 3.0).is_err());
    }

    #[test]
    fn ui_fit_constant_factor_is_tight() {
        let spec = GridSpec::cubic(2, 16).unwrap();
        let id = FlatMetric::identity(2);
        let c = 0.3;
        let m = ConformalMetric::new(id.clone(), ScalarField::constant(&spec, c).unwrap()).unwrap();
        let masks = crate::mask::ball_family(&spec, &id, &Default::default(), &[]).unwrap();
        let b = HypothesisBudget {
            cui: (2.0 * c).exp(),
            ..HypothesisBudget::new(1, 2)
        };
        let rep = ui_fit(&m, &masks, &b).unwrap();
        assert!(rep.pass);
        assert_relative_eq!(rep.lhs, (2.0 * c).exp(), max_relative = 1e-12);
        assert!(ui_fit(&m, &[], &b).is_err());
    }

    #[test]
    fn obstruction_examples() {
        let b = HypothesisBudget {
            v0: 1.0,
            ..HypothesisBudget::new(4, 3)
        };
        let r = negative_scalar_obstruction(1.0, &b, 3).unwrap();
        assert_relative_eq!(r.rhs, -0.75, max_relative = 1e-14);
        assert!(!r.pass);
        assert!(r.note.unwrap().contains("CONTRADICTION"));

        let b = HypothesisBudget {
            v0: 1.0,
            ..HypothesisBudget::new(100, 3)
        };
        let r = negative_scalar_obstruction(1e-4, &b, 3).unwrap();
        assert!(r.pass && r.rhs > 0.0);

        let t = obstruction_threshold(&b, 3);
        let r = negative_scalar_obstruction(t, &b, 3).unwrap();
        assert!(r.pass && r.rhs.abs() < 1e-15);
    }

    #[test]
    fn poincare_for_single_mode() {
        let m = sine(2, 32, 0.2);
        let r = poincare_check(&m).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.lhs > 0.0);
    }
}

//! Metric sequence generators, scale calibration, and the end-to-end sweeps.
//!
//! A [`SequenceSpec`] is read from TOML:
//!
//! ```toml
//! kind = "scaled_mode"          # or "bubble", "perturbed_background"
//! dim = 3
//! res = 32                      # or one count per axis
//! indices = [10, 20, 40, 80]
//! seed = 0
//! background = [1, 0, 0, 0, 1, 0, 0, 0, 1]   # optional, row-major
//!
//! [budget]                      # optional overrides
//! V0 = 300.0
//!
//! [[scaled_mode.modes]]         # amplitude · sin(k·θ + phase)
//! k = [1, 0, 0]
//!
//! [bubble]
//! amplitude = 1.0
//! width = 1.0                   # ρ_j = width / j
//!
//! [perturbed_background]
//! epsilon = 0.1
//! decay = 1.0                   # g̃_j = g_0 + j^{-decay} P
//!
//! [pipeline]
//! radius = 1.0
//! diameter_sources = 16
//! pairs = 512
//! ```

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{self, MetricField, PerturbationConstants};
use crate::conformal::{self, ConformalMetric, EXP_GUARD};
use crate::distances::{self, SamplingPlan, StencilGraph};
use crate::error::{Error, Result};
use crate::estimates::{self, HypothesisBudget, UNCONSTRAINED};
use crate::fit::{loglog_fit, TrendFit};
use crate::grid::{flat_distance, BallStencil, FlatMetric, GridSpec, ScalarField};
use crate::mask::{ball_family, BallFamily, RegionMask};
use crate::report::{CheckReport, Status, REL_TOL};

/// Bisection tolerance on the calibrated scale.
pub const CALIBRATION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    ScaledMode,
    Bubble,
    PerturbedBackground,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

/// `amplitude · sin(k·θ + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: Vec<i64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

impl Mode {
    fn eval(&self, t: &[f64]) -> f64 {
        let arg: f64 = self.k.iter().zip(t).map(|(k, x)| *k as f64 * x).sum();
        self.amplitude * (arg + self.phase).sin()
    }
}

/// Random band-limited shape with wavenumbers `|k_i| ≤ max_wavenumber`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomShape {
    #[serde(default = "two")]
    pub max_wavenumber: i64,
}

fn two() -> i64 {
    2
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledModeParams {
    /// Empty means `sin θ_1`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleParams {
    /// Defaults to `(π, …, π)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// `ρ_j = width / j`.
    #[serde(default = "one")]
    pub width: f64,
}

impl Default for BubbleParams {
    fn default() -> Self {
        BubbleParams {
            center: None,
            amplitude: 1.0,
            width: 1.0,
        }
    }
}

/// One symmetric term `amplitude · sin(k·θ + phase) (E_lm + E_ml)/(1 + δ_lm)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationTerm {
    pub l: usize,
    pub m: usize,
    pub k: Vec<i64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbedParams {
    /// Shape of the conformal exponent; empty means `sin θ_1`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    /// Overall size of the perturbation field.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Empty means `sin θ_{a+1}` or `cos θ_{a+1}` on each diagonal entry `a`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<PerturbationTerm>,
    #[serde(default = "one")]
    pub decay: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for PerturbedParams {
    fn default() -> Self {
        PerturbedParams {
            modes: Vec::new(),
            epsilon: default_epsilon(),
            terms: Vec::new(),
            decay: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "default_sources")]
    pub diameter_sources: usize,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_centers")]
    pub ball_centers: usize,
    #[serde(default = "default_radii")]
    pub ball_radii: usize,
    #[serde(default = "default_consistency_radii")]
    pub consistency_radii: Vec<f64>,
}

fn default_sources() -> usize {
    16
}
fn default_pairs() -> usize {
    512
}
fn default_centers() -> usize {
    24
}
fn default_radii() -> usize {
    8
}
fn default_consistency_radii() -> Vec<f64> {
    vec![0.5, 1.0]
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            radius: 1.0,
            diameter_sources: default_sources(),
            pairs: default_pairs(),
            ball_centers: default_centers(),
            ball_radii: default_radii(),
            consistency_radii: default_consistency_radii(),
        }
    }
}

/// Optional budget entries; unset ones take the defaults of [`SequenceSpec::budget_for`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    #[serde(rename = "V0", default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(rename = "D0", default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(rename = "Cneg", default, skip_serializing_if = "Option::is_none")]
    pub cneg: Option<f64>,
    #[serde(rename = "Cui", default, skip_serializing_if = "Option::is_none")]
    pub cui: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c_metric: Option<f64>,
    #[serde(rename = "C1", default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub dim: usize,
    pub res: Resolution,
    pub indices: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Row-major background matrix; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Vec<f64>>,
    #[serde(default)]
    pub budget: BudgetOverrides,
    #[serde(default)]
    pub scaled_mode: ScaledModeParams,
    #[serde(default)]
    pub bubble: BubbleParams,
    #[serde(default)]
    pub perturbed_background: PerturbedParams,
    #[serde(default)]
    pub pipeline: PipelineParams,
}

impl SequenceSpec {
    /// A `sin θ_1` scaled-mode family over the identity background.
    pub fn scaled_mode(dim: usize, res: usize, indices: Vec<u64>) -> Self {
        SequenceSpec {
            kind: SequenceKind::ScaledMode,
            dim,
            res: Resolution::Uniform(res),
            indices,
            seed: 0,
            background: None,
            budget: BudgetOverrides::default(),
            scaled_mode: ScaledModeParams::default(),
            bubble: BubbleParams::default(),
            perturbed_background: PerturbedParams::default(),
            pipeline: PipelineParams::default(),
        }
    }

    pub fn with_kind(mut self, kind: SequenceKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SequenceSpec = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        match &self.res {
            Resolution::Uniform(n) => GridSpec::cubic(self.dim, *n),
            Resolution::PerAxis(r) => {
                if r.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: r.len(),
                    });
                }
                GridSpec::new(r.clone())
            }
        }
    }

    pub fn background_metric(&self) -> Result<FlatMetric> {
        match &self.background {
            None => Ok(FlatMetric::identity(self.dim)),
            Some(e) => FlatMetric::new(self.dim, e.clone()),
        }
    }

    /// Budget at index `j`. Unset caps default to `V0 = 1.2 Vol(g_0)`,
    /// `D0 = 1.5 π √tr g_0`, `Cneg = 2 Vol(g_0)`; `Cui` stays unconstrained.
    pub fn budget_for(&self, j: u64) -> Result<HypothesisBudget> {
        let g0 = self.background_metric()?;
        let vol0 = g0.torus_volume();
        let trace: f64 = (0..self.dim).map(|i| g0.entry(i, i)).sum();
        let o = &self.budget;
        let b = HypothesisBudget {
            j,
            v0: o.v0.unwrap_or(1.2 * vol0),
            d0: o.d0.unwrap_or(1.5 * PI * trace.sqrt()),
            cneg: o.cneg.unwrap_or(2.0 * vol0),
            cui: o.cui.unwrap_or(UNCONSTRAINED),
            q: o.q.unwrap_or(1.0),
            p: o.p,
            cp: None,
            alpha: o.alpha.unwrap_or(estimates::default_alpha(self.dim)),
            c_metric: o.c_metric,
            c1: o.c1,
        };
        b.validate(self.dim)?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let spec = self.grid()?;
        let g0 = self.background_metric()?;
        if self.indices.is_empty() {
            return bad("index list is empty".into());
        }
        if self.indices[0] == 0 || self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("indices must be strictly increasing positive integers".into());
        }
        self.budget_for(self.indices[0])?;
        for m in self.scaled_mode.modes.iter().chain(&self.perturbed_background.modes) {
            if m.k.len() != self.dim {
                return bad(format!("mode {:?} does not have {} components", m.k, self.dim));
            }
        }
        if let Some(r) = &self.scaled_mode.random {
            if r.max_wavenumber < 1 {
                return bad("max_wavenumber must be at least 1".into());
            }
        }
        match self.kind {
            SequenceKind::Bubble => {
                let b = &self.bubble;
                if let Some(c) = &b.center {
                    if c.len() != self.dim {
                        return bad("bubble center has the wrong dimension".into());
                    }
                }
                if !(b.amplitude > 0.0 && b.width > 0.0) {
                    return bad("bubble amplitude and width must be positive".into());
                }
                let min = 2.0 * spec.max_spacing();
                for &j in &self.indices {
                    let rho = b.width / j as f64;
                    if rho <= min {
                        return bad(format!(
                            "bubble width {rho} at j = {j} is not resolvable (needs > 2h = {min})"
                        ));
                    }
                }
                if rho_monotone(b, &self.indices).is_none() {
                    return bad("bubble widths must decrease".into());
                }
                if self.budget.cui.is_none() {
                    return bad("bubble runs need budget.Cui, the smooth family's certificate".into());
                }
            }
            SequenceKind::PerturbedBackground => {
                let p = &self.perturbed_background;
                if !(p.epsilon >= 0.0 && p.decay > 0.0) {
                    return bad("perturbation needs epsilon ≥ 0 and decay > 0".into());
                }
                for t in &p.terms {
                    if t.l >= self.dim || t.m >= self.dim || t.k.len() != self.dim {
                        return bad(format!("perturbation term {t:?} does not fit dimension {}", self.dim));
                    }
                }
                // the background at the smallest index must stay positive definite
                perturbation_field(self, &spec, &g0, self.indices[0])?;
            }
            SequenceKind::ScaledMode => {}
        }
        let p = &self.pipeline;
        if !(p.radius > 0.0 && p.radius <= PI) || p.consistency_radii.iter().any(|r| !(*r > 0.0 && *r <= PI)) {
            return bad("ball radii must lie in (0, π]".into());
        }
        if p.diameter_sources == 0 || p.pairs == 0 || p.ball_radii == 0 {
            return bad("pipeline sample counts must be positive".into());
        }
        Ok(())
    }
}

fn rho_monotone(b: &BubbleParams, indices: &[u64]) -> Option<()> {
    let rhos: Vec<f64> = indices.iter().map(|&j| b.width / j as f64).collect();
    rhos.windows(2).all(|w| w[1] < w[0]).then_some(())
}

fn shape_from_modes(spec: &GridSpec, modes: &[Mode]) -> Result<ScalarField> {
    if modes.is_empty() {
        return ScalarField::from_fn(spec, |t| t[0].sin());
    }
    ScalarField::from_fn(spec, |t| modes.iter().map(|m| m.eval(t)).sum())
}

/// Seeded random trigonometric polynomial with `|k_i| ≤ max_k`, coefficients
/// decaying like `|k|^{-2}`, normalised to `max |f| = 1`.
pub fn random_band_limited(spec: &GridSpec, max_k: i64, seed: u64) -> Result<ScalarField> {
    if max_k < 1 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let n = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut k = vec![-max_k; n];
    loop {
        // one representative of each ±k pair
        let first = k.iter().find(|&&c| c != 0);
        if matches!(first, Some(&c) if c > 0) {
            let norm2: i64 = k.iter().map(|c| c * c).sum();
            let w = 1.0 / norm2 as f64;
            let a = rng.gen_range(-1.0..1.0) * w;
            let b = rng.gen_range(-1.0..1.0) * w;
            terms.push((k.iter().map(|&c| c as f64).collect(), a, b));
        }
        let mut a = 0;
        while a < n {
            k[a] += 1;
            if k[a] <= max_k {
                break;
            }
            k[a] = -max_k;
            a += 1;
        }
        if a == n {
            break;
        }
    }
    let f = ScalarField::from_fn(spec, |t| {
        terms
            .iter()
            .map(|(k, a, b)| {
                let arg: f64 = k.iter().zip(t).map(|(k, x)| k * x).sum();
                a * arg.cos() + b * arg.sin()
            })
            .sum()
    })?;
    let m = f.max_abs();
    f.map(|v| v / m)
}

/// Largest scale admitted by `feasible`, by doubling then bisection to
/// [`CALIBRATION_TOL`]. Returns the feasible end of the final bracket.
pub fn calibrate_with(s_max: f64, mut feasible: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0_f64.min(s_max);
    while feasible(hi)? {
        lo = hi;
        if hi >= s_max {
            return Err(Error::Calibration(format!(
                "scale {hi} is still admissible at the overflow guard"
            )));
        }
        hi = (2.0 * hi).min(s_max);
    }
    while hi - lo > CALIBRATION_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn scale_cap(shape: &ScalarField) -> f64 {
    EXP_GUARD / (shape.spec().dim() as f64 * shape.max_abs())
}

/// Largest `s ≥ 0` with `min R(e^{2 s·shape} g_0) ≥ -1/j`.
pub fn calibrate_scale(shape: &ScalarField, background: &FlatMetric, j: u64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be at least 1".into()));
    }
    if shape.is_constant() {
        return Err(Error::Calibration("constant shape: every scale is admissible".into()));
    }
    let eps = 1.0 / j as f64;
    calibrate_with(scale_cap(shape), |s| {
        let m = ConformalMetric::new(background.clone(), shape.map(|v| s * v)?)?;
        Ok(conformal::scalar_curvature(&m)?.min() >= -eps)
    })
}

/// As [`calibrate_scale`], with the conformal part of the curvature taken
/// over a position-dependent background.
pub fn calibrate_scale_over(shape: &ScalarField, g: &MetricField, j: u64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be at least 1".into()));
    }
    if shape.is_constant() {
        return Err(Error::Calibration("constant shape: every scale is admissible".into()));
    }
    let eps = 1.0 / j as f64;
    calibrate_with(scale_cap(shape), |s| {
        let f = shape.map(|v| s * v)?;
        Ok(background::conformal_curvature_part(g, &f)?.min() >= -eps)
    })
}

/// Smooth bump `exp(1 - 1/(1-t²))` on `|t| < 1`, zero outside; `φ(0) = 1`.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

fn perturbation_terms(spec: &SequenceSpec) -> Vec<PerturbationTerm> {
    let p = &spec.perturbed_background;
    if !p.terms.is_empty() {
        return p.terms.clone();
    }
    let n = spec.dim;
    (0..n)
        .map(|a| {
            let mut k = vec![0; n];
            k[(a + 1) % n] = 1;
            PerturbationTerm {
                l: a,
                m: a,
                k,
                amplitude: 1.0,
                phase: if a % 2 == 0 { 0.0 } else { PI / 2.0 },
            }
        })
        .collect()
}

fn perturbation_field(spec: &SequenceSpec, grid: &GridSpec, g0: &FlatMetric, j: u64) -> Result<MetricField> {
    let p = &spec.perturbed_background;
    let terms = perturbation_terms(spec);
    let n = spec.dim;
    let scale = p.epsilon / (j as f64).powf(p.decay);
    MetricField::perturbed(grid, g0, scale, |t| {
        let mut m = vec![0.0; n * n];
        for term in &terms {
            let arg: f64 = term.k.iter().zip(t).map(|(k, x)| *k as f64 * x).sum();
            let v = term.amplitude * (arg + term.phase).sin();
            m[term.l * n + term.m] += v;
            if term.l != term.m {
                m[term.m * n + term.l] += v;
            }
        }
        m
    })
}

/// One member of a sequence.
#[derive(Clone, Debug)]
pub struct Generated {
    pub j: u64,
    pub metric: ConformalMetric,
    /// The perturbed background `g̃_j`, for that kind only.
    pub background_field: Option<MetricField>,
    /// Calibrated scale of the shape, for calibrated kinds.
    pub scale: Option<f64>,
}

fn base_shape(spec: &SequenceSpec, grid: &GridSpec) -> Result<ScalarField> {
    match spec.kind {
        SequenceKind::PerturbedBackground => shape_from_modes(grid, &spec.perturbed_background.modes),
        _ => match &spec.scaled_mode.random {
            Some(r) => random_band_limited(grid, r.max_wavenumber, spec.seed),
            None => shape_from_modes(grid, &spec.scaled_mode.modes),
        },
    }
}

pub fn generate(spec: &SequenceSpec, j: u64) -> Result<Generated> {
    if !spec.indices.contains(&j) {
        return Err(Error::InvalidArgument(format!("j = {j} is not in the index list")));
    }
    let grid = spec.grid()?;
    let g0 = spec.background_metric()?;
    match spec.kind {
        SequenceKind::ScaledMode => {
            let shape = base_shape(spec, &grid)?;
            let s = calibrate_scale(&shape, &g0, j)?;
            Ok(Generated {
                j,
                metric: ConformalMetric::new(g0, shape.map(|v| s * v)?)?,
                background_field: None,
                scale: Some(s),
            })
        }
        SequenceKind::Bubble => {
            let b = &spec.bubble;
            let rho = b.width / j as f64;
            if rho <= 2.0 * grid.max_spacing() {
                return Err(Error::InvalidSpec(format!("bubble width {rho} is not resolvable")));
            }
            let center = b.center.clone().unwrap_or_else(|| vec![PI; spec.dim]);
            let f = ScalarField::from_fn(&grid, |t| {
                let d = flat_distance(&g0, &center, t);
                (1.0 + b.amplitude / rho * bump(d / rho)).ln()
            })?;
            Ok(Generated {
                j,
                metric: ConformalMetric::new(g0, f)?,
                background_field: None,
                scale: None,
            })
        }
        SequenceKind::PerturbedBackground => {
            let shape = base_shape(spec, &grid)?;
            let g = perturbation_field(spec, &grid, &g0, j)?;
            let s = calibrate_scale_over(&shape, &g, j)?;
            Ok(Generated {
                j,
                metric: ConformalMetric::new(g0, shape.map(|v| s * v)?)?,
                background_field: Some(g),
                scale: Some(s),
            })
        }
    }
}

/// Measured quantities of one pipeline row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub volume: f64,
    /// Farthest-point lower bound on the graph diameter.
    pub diameter: f64,
    pub neg_power_integral: f64,
    /// `c_j = (⨍ e^{-f_j})^{-2}`.
    pub c_estimate: f64,
    /// Largest `λ` with `g_j ≥ λ ḡ`.
    pub lower_bound_constant: f64,
    /// `j · max(0, 1 - λ)`: the per-row constant of `(1 - C/j) ḡ ≤ g_j`.
    pub lower_bound_deficit: f64,
    /// Empirical `δ` against `min(1, λ) ḡ`.
    pub delta: f64,
    pub flat_distance_bound: f64,
    pub ui_worst_ratio: f64,
    /// `max e^{n f_j}`, the `q = 1` certificate of this row.
    pub max_volume_density: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConstants>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub j: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RowMetrics>,
    pub reports: Vec<CheckReport>,
}

impl PipelineRow {
    /// No error and no report with a failed prerequisite.
    pub fn prerequisites_hold(&self) -> bool {
        self.error.is_none() && self.reports.iter().all(|r| r.status != Status::Prereq)
    }

    pub fn report(&self, name: &str) -> Option<&CheckReport> {
        self.reports.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLimit {
    /// `c_J` from the largest generated index.
    pub c_infinity: f64,
    pub from_j: u64,
    /// `ḡ = c_J g_0`, row-major.
    pub metric: Vec<f64>,
    /// `(max c_j - min c_j) / c_J` over the sweep.
    pub oscillation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubblingSummary {
    pub detected: bool,
    /// First index whose uniform-integrability check fails.
    pub j_star: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub spec: SequenceSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_limit: Option<CandidateLimit>,
    /// `(Cui, q)` used by the uniform-integrability check.
    pub ui_constant: f64,
    pub ui_exponent: f64,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c_metric: Option<f64>,
    #[serde(rename = "C1", skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    pub rows: Vec<PipelineRow>,
    pub fits: Vec<TrendFit>,
    pub bubbling: BubblingSummary,
}

impl PipelineReport {
    pub fn all_reports(&self) -> impl Iterator<Item = (u64, &CheckReport)> {
        self.rows.iter().flat_map(|r| r.reports.iter().map(move |c| (r.j, c)))
    }

    pub fn row(&self, j: u64) -> Option<&PipelineRow> {
        self.rows.iter().find(|r| r.j == j)
    }

    pub fn fit(&self, quantity: &str) -> Option<&TrendFit> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }

    /// Per-row metrics as CSV.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "j,scale,volume,diameter,neg_power_integral,c_estimate,lower_bound_constant,lower_bound_deficit,delta,flat_distance_bound,ui_worst_ratio,error\n",
        );
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            match &r.metrics {
                Some(m) => out.push_str(&format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                    r.j,
                    m.scale.map(|s| format!("{s:e}")).unwrap_or_default(),
                    m.volume,
                    m.diameter,
                    m.neg_power_integral,
                    m.c_estimate,
                    m.lower_bound_constant,
                    m.lower_bound_deficit,
                    m.delta,
                    m.flat_distance_bound,
                    m.ui_worst_ratio,
                    err
                )),
                None => out.push_str(&format!("{},,,,,,,,,,,{}\n", r.j, err)),
            }
        }
        out
    }
}

struct Stage1 {
    generated: Generated,
    c_estimate: f64,
    max_density: f64,
    constants: Option<PerturbationConstants>,
}

fn stage1(spec: &SequenceSpec, j: u64) -> Result<Stage1> {
    let generated = generate(spec, j)?;
    let m = &generated.metric;
    let c_estimate = conformal::weighted_average(m, -1.0)?.powi(-2);
    let max_density = m.exp_field(spec.dim as f64)?.max();
    let constants = match &generated.background_field {
        Some(g) => Some(background::measure_constants(g, m.background(), m.exponent(), j)?),
        None => None,
    };
    Ok(Stage1 {
        generated,
        c_estimate,
        max_density,
        constants,
    })
}

struct Shared {
    g0: FlatMetric,
    reference: FlatMetric,
    budget_c: Option<f64>,
    budget_c1: Option<f64>,
    cui: f64,
}

fn stage2(spec: &SequenceSpec, s1: &Stage1, shared: &Shared) -> Result<(RowMetrics, Vec<CheckReport>)> {
    let j = s1.generated.j;
    let m = &s1.generated.metric;
    let grid = m.exponent().spec().clone();
    let p = &spec.pipeline;
    let mut budget = spec.budget_for(j)?;
    budget.cui = shared.cui;
    budget.c_metric = shared.budget_c;
    budget.c1 = shared.budget_c1;

    let mut reports = Vec::new();
    let volume = conformal::volume(m)?;
    let graph = StencilGraph::new(m)?;
    let diam = distances::diameter_on(&graph, SamplingPlan::FarthestPoint { k: p.diameter_sources })?;
    reports.extend(estimates::check_caps(volume, diam.value, &budget));

    match &s1.generated.background_field {
        Some(g) => {
            let r = background::conformal_curvature_part(g, m.exponent())?;
            let lhs = -r.min();
            reports.push(CheckReport::evaluate(
                "perturbed_scalar_lower_bound",
                "scalar-curvature-floor",
                lhs,
                budget.eps(),
                REL_TOL * lhs.abs().max(budget.eps()),
            ));
            reports.extend(background::check_perturbed_pde(g, &shared.g0, m, &budget)?);
        }
        None => {
            reports.push(estimates::check_scalar_lower_bound(m, budget.eps())?);
            reports.extend(estimates::check_conformal_pde(m, &budget)?);
            reports.extend(estimates::check_sobolev_triple(m, &budget)?);
            let c0 = estimates::c0_lower_bound(m, p.radius, j)?;
            reports.push(c0.corrected);
            reports.push(c0.displayed);
        }
    }
    reports.extend(estimates::jensen_sandwich(m, &budget)?);

    let density = m.exp_field(spec.dim as f64)?;
    let family = BallFamily {
        centers: p.ball_centers,
        radii: p.ball_radii,
        seed: spec.seed,
    };
    let masks = ball_family(&grid, &shared.g0, &family, &[density.argmax()])?;
    let (ui_worst, _) = estimates::worst_ui_ratio(m, &masks, budget.q)?;
    reports.push(estimates::ui_fit(m, &masks, &budget)?);

    let lambda = conformal::metric_lower_bound_constant(m, &shared.reference)?;
    let reference = shared.reference.scaled(lambda.min(1.0))?;
    let excess = distances::distance_excess_on(
        &graph,
        &reference,
        &RegionMask::full(&grid),
        p.pairs,
        spec.seed.wrapping_add(j),
    )?;
    let bound = distances::flat_distance_bound(budget.d0, budget.v0, 0.0, excess.delta)?;

    Ok((
        RowMetrics {
            scale: s1.generated.scale,
            volume,
            diameter: diam.value,
            neg_power_integral: m.integral_of_power(-2.0)?,
            c_estimate: s1.c_estimate,
            lower_bound_constant: lambda,
            lower_bound_deficit: j as f64 * (1.0 - lambda).max(0.0),
            delta: excess.delta,
            flat_distance_bound: bound,
            ui_worst_ratio: ui_worst,
            max_volume_density: s1.max_density,
            perturbation: s1.constants,
        },
        reports,
    ))
}

/// Runs every applicable checker at each index, against the candidate limit
/// `ḡ = c_J g_0` from the largest index. Row failures are recorded, never fatal.
pub fn run_pipeline(spec: &SequenceSpec) -> Result<PipelineReport> {
    spec.validate()?;
    let g0 = spec.background_metric()?;
    let first: Vec<(u64, Result<Stage1>)> = spec
        .indices
        .par_iter()
        .map(|&j| (j, stage1(spec, j)))
        .collect();

    let ok: Vec<&Stage1> = first.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let candidate = ok.last().map(|s| {
        let c = s.c_estimate;
        let cs: Vec<f64> = ok.iter().map(|s| s.c_estimate).collect();
        let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
        CandidateLimit {
            c_infinity: c,
            from_j: s.generated.j,
            metric: g0.entries().iter().map(|v| v * c).collect(),
            oscillation: (hi - lo) / c,
        }
    });

    let cui = match spec.budget.cui {
        Some(c) => c,
        None => ok.iter().map(|s| s.max_density).fold(f64::NEG_INFINITY, f64::max).max(1.0),
    };
    let measured_c = ok
        .iter()
        .filter_map(|s| s.constants.map(|c| c.c_metric))
        .reduce(f64::max);
    let measured_c1 = ok.iter().filter_map(|s| s.constants.map(|c| c.c1)).reduce(f64::max);
    let budget_c = spec.budget.c_metric.or(measured_c);
    let budget_c1 = spec.budget.c1.or(measured_c1);

    let rows: Vec<PipelineRow> = match &candidate {
        None => first
            .into_iter()
            .map(|(j, r)| PipelineRow {
                j,
                error: r.err().map(|e| e.to_string()),
                metrics: None,
                reports: Vec::new(),
            })
            .collect(),
        Some(cand) => {
            let shared = Shared {
                g0: g0.clone(),
                reference: FlatMetric::new(spec.dim, cand.metric.clone())?,
                budget_c,
                budget_c1,
                cui,
            };
            first
                .par_iter()
                .map(|(j, r)| match r {
                    Err(e) => PipelineRow {
                        j: *j,
                        error: Some(e.to_string()),
                        metrics: None,
                        reports: Vec::new(),
                    },
                    Ok(s1) => match stage2(spec, s1, &shared) {
                        Ok((metrics, reports)) => PipelineRow {
                            j: *j,
                            error: None,
                            metrics: Some(metrics),
                            reports,
                        },
                        Err(e) => PipelineRow {
                            j: *j,
                            error: Some(e.to_string()),
                            metrics: None,
                            reports: Vec::new(),
                        },
                    },
                })
                .collect()
        }
    };

    let fits = pipeline_fits(&rows, spec, &g0);
    let j_star = rows
        .iter()
        .find(|r| r.report("uniform_integrability").is_some_and(|u| !u.pass))
        .map(|r| r.j);
    Ok(PipelineReport {
        spec: spec.clone(),
        candidate_limit: candidate,
        ui_constant: cui,
        ui_exponent: spec.budget.q.unwrap_or(1.0),
        c_metric: budget_c,
        c1: budget_c1,
        rows,
        fits,
        bubbling: BubblingSummary {
            detected: j_star.is_some(),
            j_star,
        },
    })
}

fn pipeline_fits(rows: &[PipelineRow], spec: &SequenceSpec, g0: &FlatMetric) -> Vec<TrendFit> {
    let good: Vec<&PipelineRow> = rows.iter().filter(|r| r.prerequisites_hold()).collect();
    let js: Vec<f64> = good.iter().map(|r| r.j as f64).collect();
    let mut fits = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for r in &good {
        for c in &r.reports {
            let sobolev = c.name.starts_with("sobolev_") || c.name == "perturbed_sobolev_bound";
            if sobolev && !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    for name in names {
        let ys: Vec<f64> = good
            .iter()
            .map(|r| r.report(&name).map(|c| c.lhs).unwrap_or(f64::NAN))
            .collect();
        fits.extend(loglog_fit(name, &js, &ys));
    }
    let metric = |f: fn(&RowMetrics) -> f64| -> Vec<f64> {
        good.iter()
            .map(|r| r.metrics.as_ref().map(f).unwrap_or(f64::NAN))
            .collect()
    };
    fits.extend(loglog_fit("flat_distance_bound", &js, &metric(|m| m.flat_distance_bound)));
    fits.extend(loglog_fit("delta", &js, &metric(|m| m.delta)));
    if let Some(last) = good.last().and_then(|r| r.metrics.as_ref()) {
        let nf = spec.dim as f64;
        let limit_volume = last.c_estimate.powf(nf / 2.0) * g0.torus_volume();
        let ys: Vec<f64> = good
            .iter()
            .map(|r| r.metrics.as_ref().map(|m| (m.volume - limit_volume).abs()).unwrap_or(f64::NAN))
            .collect();
        fits.extend(loglog_fit("volume_residual", &js, &ys));
    }
    fits
}

/// Residuals of the volume and ball-average identities at one index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub j: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// `|⨍e^{nf} - (⨍e^{-f})^{-n}|`.
    pub r1: f64,
    /// `(r, |max_x ⨍_{B(x,r)} e^{-2f} - (⨍e^{-f})²|)`.
    pub r2: Vec<(f64, f64)>,
    pub reports: Vec<CheckReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub fits: Vec<TrendFit>,
}

impl ConsistencyReport {
    pub fn fit(&self, quantity: &str) -> Option<&TrendFit> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }
}

fn consistency_row(spec: &SequenceSpec, j: u64) -> Result<ConsistencyRow> {
    let g = generate(spec, j)?;
    let m = &g.metric;
    let n = spec.dim as f64;
    let mean_neg = conformal::weighted_average(m, -1.0)?;
    let r1 = (conformal::weighted_average(m, n)? - mean_neg.powf(-n)).abs();
    let u = m.exp_field(-2.0)?;
    let mut r2 = Vec::new();
    for &r in &spec.pipeline.consistency_radii {
        let stencil = BallStencil::new(m.exponent().spec(), m.background(), r)?;
        let (a, _) = stencil.max_average(&u);
        r2.push((r, (a - mean_neg * mean_neg).abs()));
    }
    let mut reports = vec![estimates::check_scalar_lower_bound(m, 1.0 / j as f64)?];
    let prereq = (!reports[0].pass).then(|| "scalar curvature bound fails".to_string());
    reports.push(estimates::poincare_check(m)?.gated(&prereq));
    Ok(ConsistencyRow {
        j,
        error: None,
        r1,
        r2,
        reports,
    })
}

/// Per-index residuals of the limit identities and a Poincaré check, with
/// log-log decay fits of the residuals.
pub fn convergence_consistency(spec: &SequenceSpec) -> Result<ConsistencyReport> {
    spec.validate()?;
    let rows: Vec<ConsistencyRow> = spec
        .indices
        .par_iter()
        .map(|&j| {
            consistency_row(spec, j).unwrap_or_else(|e| ConsistencyRow {
                j,
                error: Some(e.to_string()),
                r1: 0.0,
                r2: Vec::new(),
                reports: Vec::new(),
            })
        })
        .collect();
    let good: Vec<&ConsistencyRow> = rows
        .iter()
        .filter(|r| r.error.is_none() && r.reports.iter().all(|c| c.status != Status::Prereq))
        .collect();
    let js: Vec<f64> = good.iter().map(|r| r.j as f64).collect();
    let mut fits = Vec::new();
    fits.extend(loglog_fit("r1", &js, &good.iter().map(|r| r.r1).collect::<Vec<_>>()));
    for (k, &radius) in spec.pipeline.consistency_radii.iter().enumerate() {
        let ys: Vec<f64> = good.iter().map(|r| r.r2[k].1).collect();
        fits.extend(loglog_fit(format!("r2({radius})"), &js, &ys));
    }
    Ok(ConsistencyReport { rows, fits })
}

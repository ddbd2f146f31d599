//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 8`.

use std::f64::consts::PI;
use std::time::Instant;

use conftorus::conformal::{self, ConformalMetric};
use conftorus::distances::{self, SamplingPlan, StencilGraph};
use conftorus::estimates::{self, HypothesisBudget};
use conftorus::fit::loglog_fit;
use conftorus::grid::{FlatMetric, GridSpec, ScalarField};
use conftorus::report::DISCRETIZATION_K;
use conftorus::sequences::{self, RandomShape, SequenceKind, SequenceSpec};

// criterion 1
const CURVATURE_REL_ERR: f64 = 5e-3;
const CURVATURE_SECONDS: f64 = 10.0;
// criterion 2
const IDENTITY_RESOLUTIONS: [usize; 4] = [16, 24, 32, 48];
const IDENTITY_FIELDS: u64 = 20;
const IDENTITY_MIN_ORDER: f64 = 3.5;
// criterion 3
const SOBOLEV_SLOPE: f64 = -1.0;
const SOBOLEV_SLOPE_TOL: f64 = 0.15;
// criterion 4
const JENSEN_EQUALITY_REL: f64 = 1e-10;
const JENSEN_RANDOM_FIELDS: u64 = 100;
// criterion 5
const C0_MONOTONE_TOL: f64 = 0.02;
// criterion 6
const OBSTRUCTION_RHS: f64 = -0.75;
const OBSTRUCTION_BISECTION_TOL: f64 = 1e-12;
// criterion 7
const DIAMETER_2D_TOL: f64 = 0.03;
const DIAMETER_3D_TOL: f64 = 0.05;
const SCALING_REL: f64 = 1e-13;
// criterion 8
const APS_RATIO: f64 = 0.25;
const PIPELINE_SECONDS: f64 = 300.0;
// criterion 9
const BUBBLE_J_STAR_MAX: u64 = 32;
// criterion 10
const CONSISTENCY_SLOPE: f64 = -0.7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn identity(n: usize) -> FlatMetric {
    FlatMetric::identity(n)
}

fn curvature_oracle() -> Outcome {
    let t = Instant::now();
    let spec = GridSpec::cubic(3, 48).unwrap();
    let f = ScalarField::from_fn(&spec, |x| 0.1 * x[0].sin()).unwrap();
    let m = ConformalMetric::new(identity(3), f).unwrap();
    let r = conformal::scalar_curvature(&m).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let oracle = ScalarField::from_fn(&spec, |x| {
        let (s, c) = x[0].sin_cos();
        (-0.2 * s).exp() * (0.4 * s - 0.02 * c * c)
    })
    .unwrap();
    let err = r
        .values()
        .iter()
        .zip(oracle.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let rel = err / oracle.max_abs();
    outcome(
        rel <= CURVATURE_REL_ERR && secs < CURVATURE_SECONDS,
        format!("max relative error {rel:.3e} (≤ {CURVATURE_REL_ERR:e}), {secs:.2}s"),
    )
}

fn identity_suite() -> Outcome {
    let alphas = [0.1, 0.25, 0.5 - 0.01];
    let mut worst_ratio = 0.0_f64;
    let mut worst_order = f64::INFINITY;
    let mut failures = 0;
    for seed in 0..IDENTITY_FIELDS {
        // per identity: residual at each resolution
        let mut series: Vec<Vec<f64>> = vec![Vec::new(); 1 + alphas.len()];
        let mut hs = Vec::new();
        for res in IDENTITY_RESOLUTIONS {
            let spec = GridSpec::cubic(3, res).unwrap();
            let h4 = spec.max_spacing().powi(4);
            hs.push(spec.max_spacing());
            let f = sequences::random_band_limited(&spec, 2, seed).unwrap();
            let m = ConformalMetric::new(identity(3), f).unwrap();
            let mut rs = vec![conformal::product_rule_residual(&m).unwrap()];
            rs.extend(alphas.iter().map(|&a| conformal::alpha_identity_residual(&m, a).unwrap()));
            for (k, r) in rs.iter().enumerate() {
                let ratio = r.residual / (DISCRETIZATION_K * h4 * r.scale);
                worst_ratio = worst_ratio.max(ratio);
                if ratio > 1.0 {
                    failures += 1;
                }
                series[k].push(r.residual);
            }
        }
        for s in &series {
            let order = loglog_fit("residual", &hs, s).unwrap().slope;
            worst_order = worst_order.min(order);
        }
    }
    outcome(
        failures == 0 && worst_order >= IDENTITY_MIN_ORDER,
        format!(
            "worst residual / (K h⁴ · scale) = {worst_ratio:.3} with K = {DISCRETIZATION_K}, \
             lowest fitted order {worst_order:.3} (≥ {IDENTITY_MIN_ORDER})"
        ),
    )
}

fn sobolev_implication() -> Outcome {
    let js: Vec<u64> = (1..=100).collect();
    let sine = SequenceSpec::scaled_mode(3, 24, js.clone());
    let mut random = sine.clone();
    random.scaled_mode.random = Some(RandomShape { max_wavenumber: 2 });
    random.seed = 1;
    let mut failed = Vec::new();
    let mut slopes = Vec::new();
    for (label, spec) in [("sin", &sine), ("random", &random)] {
        let rows: Vec<Vec<conftorus::CheckReport>> = js
            .iter()
            .map(|&j| {
                let m = sequences::generate(spec, j).unwrap().metric;
                let budget = spec.budget_for(j).unwrap();
                let mut reps = estimates::check_conformal_pde(&m, &budget).unwrap();
                reps.extend(estimates::check_sobolev_triple(&m, &budget).unwrap());
                reps
            })
            .collect();
        for (j, reps) in js.iter().zip(&rows) {
            for r in reps.iter().filter(|r| !r.pass) {
                failed.push(format!("{label} j={j} {}", r.name));
            }
        }
        let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
        for name in rows[0].iter().map(|r| r.name.clone()).filter(|n| n.starts_with("sobolev_")) {
            let ys: Vec<f64> = rows
                .iter()
                .map(|reps| reps.iter().find(|r| r.name == name).unwrap().lhs)
                .collect();
            slopes.push((format!("{label}:{name}"), loglog_fit(&name, &xs, &ys).unwrap().slope));
        }
    }
    let slopes_ok = slopes
        .iter()
        .all(|(_, s)| (s - SOBOLEV_SLOPE).abs() <= SOBOLEV_SLOPE_TOL);
    let shown: Vec<String> = slopes.iter().map(|(n, s)| format!("{n} {s:+.3}")).collect();
    outcome(
        failed.is_empty() && slopes_ok,
        format!(
            "200 instances, {} failing reports{}; slopes [{}] vs {SOBOLEV_SLOPE} ± {SOBOLEV_SLOPE_TOL}",
            failed.len(),
            failed.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            shown.join(", ")
        ),
    )
}

fn jensen() -> Outcome {
    let spec = GridSpec::cubic(3, 16).unwrap();
    let mut worst_eq = 0.0_f64;
    for c in [0.0, 0.3, -0.7, 1.5] {
        let m = ConformalMetric::new(identity(3), ScalarField::constant(&spec, c).unwrap()).unwrap();
        let b = HypothesisBudget::new(1, 3);
        for r in estimates::jensen_sandwich(&m, &b).unwrap() {
            if r.name.starts_with("jensen_lower") {
                worst_eq = worst_eq.max(r.slack.abs() / r.rhs.abs());
            }
        }
    }
    let mut min_slack = f64::INFINITY;
    let mut upper_failures = 0;
    for seed in 0..JENSEN_RANDOM_FIELDS {
        let f = sequences::random_band_limited(&spec, 2, seed).unwrap();
        let m = ConformalMetric::new(identity(3), f).unwrap();
        let mut b = HypothesisBudget::new(1, 3);
        b.cneg = m.integral_of_power(-2.0).unwrap();
        for r in estimates::jensen_sandwich(&m, &b).unwrap() {
            if r.name.starts_with("jensen_lower") {
                min_slack = min_slack.min(r.slack);
            } else if !r.pass {
                upper_failures += 1;
            }
        }
    }
    outcome(
        worst_eq < JENSEN_EQUALITY_REL && min_slack > 0.0 && upper_failures == 0,
        format!(
            "constant f: worst relative slack {worst_eq:.2e}; random: min lower slack {min_slack:.3e}, \
             {upper_failures} upper-bound failures with Cneg = measured ∫e^(-2f)"
        ),
    )
}

fn c0_control() -> Outcome {
    let js = vec![10, 100, 1000];
    let spec = SequenceSpec::scaled_mode(3, 32, js.clone());
    let mut corrected = Vec::new();
    let mut displayed = Vec::new();
    for &j in &js {
        let m = sequences::generate(&spec, j).unwrap().metric;
        let c0 = estimates::c0_lower_bound(&m, 1.0, j).unwrap();
        corrected.push(c0.corrected.lhs / c0.corrected.rhs);
        displayed.push(c0.displayed.lhs / c0.displayed.rhs);
    }
    let monotone = |r: &[f64]| r.windows(2).all(|w| w[1] >= w[0] * (1.0 - C0_MONOTONE_TOL));
    let bounded = |r: &[f64]| r.iter().all(|&x| x <= 1.0 + C0_MONOTONE_TOL);
    outcome(
        monotone(&corrected) && bounded(&corrected) && monotone(&displayed) && bounded(&displayed),
        format!("ratios corrected {corrected:.4?}, displayed {displayed:.4?}"),
    )
}

fn obstruction() -> Outcome {
    let mut b = HypothesisBudget::new(4, 3);
    b.v0 = 1.0;
    let r = estimates::negative_scalar_obstruction(1.0, &b, 3).unwrap();
    let contradiction = r.note.as_deref().unwrap_or("").contains("CONTRADICTION");
    let rhs_ok = (r.rhs - OBSTRUCTION_RHS).abs() <= 1e-12;
    // sign change of rhs in vol0
    let sign = |v: f64| estimates::negative_scalar_obstruction(v, &b, 3).unwrap().rhs >= 0.0;
    let (mut lo, mut hi) = (1e-6, 1.0);
    while hi - lo > OBSTRUCTION_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if sign(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let boundary = 0.5 * (lo + hi);
    let expected = estimates::obstruction_threshold(&b, 3);
    let located = (boundary - expected).abs() <= OBSTRUCTION_BISECTION_TOL && (expected - 0.125).abs() < 1e-15;
    outcome(
        rhs_ok && contradiction && !r.pass && located,
        format!(
            "rhs {:.15} (expect {OBSTRUCTION_RHS}), contradiction flagged: {contradiction}, \
             boundary {boundary:.15} vs V0/j^(n/2) = {expected}",
            r.rhs
        ),
    )
}

fn geodesics() -> Outcome {
    let s2 = GridSpec::cubic(2, 64).unwrap();
    let d2 = distances::diameter(&ConformalMetric::flat(identity(2), &s2).unwrap(), SamplingPlan::Exact).unwrap();
    let e2 = (d2.value - PI * 2f64.sqrt()).abs() / (PI * 2f64.sqrt());
    let s3 = GridSpec::cubic(3, 32).unwrap();
    let d3 = distances::diameter(
        &ConformalMetric::flat(identity(3), &s3).unwrap(),
        SamplingPlan::FarthestPoint { k: 16 },
    )
    .unwrap();
    let e3 = (d3.value - PI * 3f64.sqrt()).abs() / (PI * 3f64.sqrt());

    let s = GridSpec::cubic(2, 32).unwrap();
    let c = 0.7;
    let g0 = StencilGraph::new(&ConformalMetric::flat(identity(2), &s).unwrap()).unwrap();
    let gc = StencilGraph::new(&ConformalMetric::new(identity(2), ScalarField::constant(&s, c).unwrap()).unwrap())
        .unwrap();
    let a = g0.single_source(0);
    let b = gc.single_source(0);
    let scaling = a
        .iter()
        .zip(&b)
        .skip(1)
        .map(|(x, y)| (y / (c.exp() * x) - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        e2 <= DIAMETER_2D_TOL && e3 <= DIAMETER_3D_TOL && scaling <= SCALING_REL,
        format!(
            "64² exact {:.5} (err {:.2}%), 32³ sampled {:.5} (err {:.2}%), constant-f scaling error {scaling:.1e}",
            d2.value,
            100.0 * e2,
            d3.value,
            100.0 * e3
        ),
    )
}

fn aps_pipeline() -> Outcome {
    let t = Instant::now();
    let spec = SequenceSpec::scaled_mode(3, 32, vec![10, 20, 40, 80]);
    let report = sequences::run_pipeline(&spec).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let bounds: Vec<f64> = report
        .rows
        .iter()
        .map(|r| r.metrics.as_ref().map(|m| m.flat_distance_bound).unwrap_or(f64::NAN))
        .collect();
    let decreasing = bounds.windows(2).all(|w| w[1] < w[0]);
    let ratio = bounds[3] / bounds[0];
    let slope = report.fit("flat_distance_bound").map(|f| f.slope).unwrap_or(f64::NAN);
    outcome(
        decreasing && ratio < APS_RATIO && secs < PIPELINE_SECONDS,
        format!(
            "bounds {bounds:.4?}, strictly decreasing: {decreasing}, j=80/j=10 ratio {ratio:.4} (< {APS_RATIO}), \
             fitted slope {slope:+.3}, {secs:.1}s"
        ),
    )
}

fn bubbling() -> Outcome {
    // ρ_32 = 1/32 must exceed 2h, which needs more than 402 samples per axis
    let js = vec![1, 2, 4, 8, 16, 32];
    let smooth = SequenceSpec::scaled_mode(2, 416, js.clone());
    let smooth_report = sequences::run_pipeline(&smooth).unwrap();
    let smooth_ui_ok = smooth_report
        .rows
        .iter()
        .all(|r| r.report("uniform_integrability").is_some_and(|u| u.pass));
    let mut bubble = smooth.clone().with_kind(SequenceKind::Bubble);
    bubble.budget.cui = Some(smooth_report.ui_constant);
    let report = sequences::run_pipeline(&bubble).unwrap();
    let v0 = bubble.budget_for(1).unwrap().v0;
    let volumes: Vec<f64> = report
        .rows
        .iter()
        .map(|r| r.metrics.as_ref().map(|m| m.volume).unwrap_or(f64::NAN))
        .collect();
    let capped = volumes.iter().all(|&v| v <= v0);
    let j_star = report.bubbling.j_star;
    outcome(
        smooth_ui_ok && capped && j_star.is_some_and(|j| j <= BUBBLE_J_STAR_MAX),
        format!(
            "n = 2 at 416²: bubble volumes {volumes:.3?} ≤ V0 = {v0:.3}: {capped}; j* = {j_star:?} \
             against Cui = {:.4}, q = 1; smooth family passes at all j: {smooth_ui_ok}",
            smooth_report.ui_constant
        ),
    )
}

fn consistency() -> Outcome {
    let spec = SequenceSpec::scaled_mode(3, 32, vec![10, 20, 40, 80, 160, 320]);
    let c = sequences::convergence_consistency(&spec).unwrap();
    let poincare_ok = c
        .rows
        .iter()
        .all(|r| r.error.is_none() && r.reports.iter().any(|x| x.name == "poincare" && x.pass));
    let slopes: Vec<(String, f64)> = c.fits.iter().map(|f| (f.quantity.clone(), f.slope)).collect();
    let expected = 1 + spec.pipeline.consistency_radii.len();
    let slopes_ok = slopes.len() == expected && slopes.iter().all(|(_, s)| *s <= CONSISTENCY_SLOPE);
    let shown: Vec<String> = slopes.iter().map(|(n, s)| format!("{n} {s:+.3}")).collect();
    outcome(
        poincare_ok && slopes_ok,
        format!("slopes [{}] (≤ {CONSISTENCY_SLOPE}); Poincaré at every j: {poincare_ok}", shown.join(", ")),
    )
}

fn perturbed() -> Outcome {
    let spec = SequenceSpec::scaled_mode(3, 32, vec![10, 20, 40, 80]).with_kind(SequenceKind::PerturbedBackground);
    let report = sequences::run_pipeline(&spec).unwrap();
    let c = report.c_metric.unwrap_or(f64::NAN);
    let mut failing = Vec::new();
    let mut c1_ok = true;
    for row in &report.rows {
        if let Some(e) = &row.error {
            failing.push(format!("j={} error {e}", row.j));
            continue;
        }
        for name in ["perturbed_pde", "perturbed_pde_flat", "perturbed_sobolev_bound"] {
            match row.report(name) {
                Some(r) if r.pass => {}
                _ => failing.push(format!("j={} {name}", row.j)),
            }
        }
        let pc = row.metrics.as_ref().and_then(|m| m.perturbation).unwrap();
        c1_ok &= pc.c1_distance <= c / row.j as f64;
    }
    outcome(
        failing.is_empty() && c1_ok,
        format!(
            "C = {c:.4}, C1 = {:.4}; C¹ distance ≤ C/j at every j: {c1_ok}; failing: {failing:?}",
            report.c1.unwrap_or(f64::NAN)
        ),
    )
}

fn determinism() -> Outcome {
    let mut specs = vec![SequenceSpec::scaled_mode(3, 16, vec![10, 20])];
    let mut random = SequenceSpec::scaled_mode(2, 32, vec![5, 50]);
    random.scaled_mode.random = Some(RandomShape { max_wavenumber: 2 });
    random.seed = 9;
    specs.push(random);
    let mut bubble = SequenceSpec::scaled_mode(2, 64, vec![1, 2, 4]).with_kind(SequenceKind::Bubble);
    bubble.budget.cui = Some(1.1);
    specs.push(bubble);
    specs.push(SequenceSpec::scaled_mode(3, 16, vec![10, 20]).with_kind(SequenceKind::PerturbedBackground));
    let mut identical = 0;
    for spec in &specs {
        let a = serde_json::to_string_pretty(&sequences::run_pipeline(spec).unwrap()).unwrap();
        let b = serde_json::to_string_pretty(&sequences::run_pipeline(spec).unwrap()).unwrap();
        if a == b {
            identical += 1;
        }
    }
    outcome(
        identical == specs.len(),
        format!("{identical}/{} pipelines byte-identical across two runs", specs.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "conformal curvature oracle", curvature_oracle),
        (2, "product-rule and alpha identities", identity_suite),
        (3, "Sobolev implication on calibrated families", sobolev_implication),
        (4, "Jensen sandwich", jensen),
        (5, "C0 lower bound trend", c0_control),
        (6, "obstruction arithmetic", obstruction),
        (7, "geodesic accuracy", geodesics),
        (8, "flat distance bound pipeline", aps_pipeline),
        (9, "bubbling detector", bubbling),
        (10, "convergence consistency", consistency),
        (11, "perturbed background path", perturbed),
        (12, "determinism", determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, name, run) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let label = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {k:>2} {label} {name}: {} [{:.1}s]",
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}

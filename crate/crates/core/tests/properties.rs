use std::f64::consts::PI;

use proptest::prelude::*;

use conftorus::background::{c1_distance, MetricField};
use conftorus::conformal::{self, ConformalMetric};
use conftorus::distances::StencilGraph;
use conftorus::estimates::{self, HypothesisBudget};
use conftorus::grid::{self, flat_distance, FlatMetric, GridSpec, ScalarField};
use conftorus::mask::RegionMask;
use conftorus::report::DISCRETIZATION_K;
use conftorus::sequences::random_band_limited;

fn grid2(n: usize) -> GridSpec {
    GridSpec::cubic(2, n).unwrap()
}

fn spd2() -> impl Strategy<Value = FlatMetric> {
    (0.5..2.0f64, 0.5..2.0f64, -0.4..0.4f64).prop_map(|(a, b, c)| {
        let off = c * (a * b).sqrt();
        FlatMetric::new(2, vec![a, off, off, b]).unwrap()
    })
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..2.0 * PI, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_product_rule(seed_f in 0u64..1000, seed_g in 1000u64..2000, g0 in spd2()) {
        let spec = grid2(32);
        let f = random_band_limited(&spec, 2, seed_f).unwrap();
        let g = random_band_limited(&spec, 2, seed_g).unwrap();
        let fg = f.zip_map(&g, |a, b| a * b).unwrap();
        let lhs = grid::laplacian(&fg, &g0).unwrap();
        let lf = grid::laplacian(&f, &g0).unwrap();
        let lg = grid::laplacian(&g, &g0).unwrap();
        let ip = grid::gradient_inner(&f, &g, &g0).unwrap();
        let mut res = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..spec.len() {
            let t = [lhs.values()[i], f.values()[i] * lg.values()[i], g.values()[i] * lf.values()[i], 2.0 * ip.values()[i]];
            res = res.max((t[0] - t[1] - t[2] - t[3]).abs());
            scale = t.iter().fold(scale, |s, v| s.max(v.abs()));
        }
        prop_assert!(res <= DISCRETIZATION_K * spec.max_spacing().powi(4) * scale, "{res} vs scale {scale}");
    }

    #[test]
    fn laplacian_integrates_to_zero(seed in 0u64..10_000, g0 in spd2()) {
        let spec = grid2(24);
        let f = random_band_limited(&spec, 3, seed).unwrap();
        let lap = grid::laplacian(&f, &g0).unwrap();
        let total = grid::integrate(&lap, &g0).unwrap();
        prop_assert!(total.abs() <= 1e-10 * lap.max_abs().max(1.0));
    }

    #[test]
    fn flat_distance_is_a_metric(g0 in spd2(), x in point(2), y in point(2), z in point(2)) {
        let dxy = flat_distance(&g0, &x, &y);
        prop_assert!((dxy - flat_distance(&g0, &y, &x)).abs() <= 1e-12);
        prop_assert!(flat_distance(&g0, &x, &x) == 0.0);
        prop_assert!(flat_distance(&g0, &x, &z) <= dxy + flat_distance(&g0, &y, &z) + 1e-12);
    }

    #[test]
    fn graph_distance_symmetry_and_triangle(seed in 0u64..1000, a in 0usize..256, b in 0usize..256, c in 0usize..256) {
        let spec = grid2(16);
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| 0.5 * v).unwrap();
        let g = StencilGraph::new(&ConformalMetric::new(FlatMetric::identity(2), f).unwrap()).unwrap();
        let da = g.single_source(a);
        let db = g.single_source(b);
        prop_assert!((da[b] - db[a]).abs() <= 1e-12 * da[b].max(1.0));
        prop_assert!(da[c] <= da[b] + db[c] + 1e-12);
    }

    #[test]
    fn distances_grow_with_the_conformal_factor(seed in 0u64..1000, bump in 0.0..0.5f64, src in 0usize..256) {
        let spec = grid2(16);
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| 0.4 * v).unwrap();
        let big = f.zip_map(&random_band_limited(&spec, 1, seed + 1).unwrap(), |a, b| a + bump * b.abs()).unwrap();
        let small = StencilGraph::new(&ConformalMetric::new(FlatMetric::identity(2), f).unwrap()).unwrap();
        let large = StencilGraph::new(&ConformalMetric::new(FlatMetric::identity(2), big).unwrap()).unwrap();
        let ds = small.single_source(src);
        let dl = large.single_source(src);
        prop_assert!(ds.iter().zip(&dl).all(|(s, l)| *s <= *l + 1e-12));
    }

    #[test]
    fn c1_distance_triangle(eps in 0.0..0.2f64, shift in -0.3..0.3f64) {
        let spec = grid2(16);
        let a = FlatMetric::identity(2);
        let b = FlatMetric::diagonal(&[1.0 + shift, 1.0]).unwrap();
        let g = MetricField::perturbed(&spec, &a, eps, |t| vec![t[1].sin(), 0.0, 0.0, t[0].cos()]).unwrap();
        prop_assert!(c1_distance(&g, &a).unwrap() <= c1_distance(&g, &b).unwrap() + shift.abs() + 1e-14);
    }

    #[test]
    fn lp_certificate_bounds_masked_volumes(seed in 0u64..1000, p in 3.5..8.0f64) {
        let spec = GridSpec::cubic(3, 12).unwrap();
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| 0.3 * v).unwrap();
        let m = ConformalMetric::new(FlatMetric::identity(3), f.clone()).unwrap();
        let cert = estimates::ui_from_lp(&m, p).unwrap();
        let k = cert.cp.powf(3.0 / p);
        // 50 masks: super-level sets of a second random field, plus balls
        let h = random_band_limited(&spec, 2, seed + 7).unwrap();
        let mut masks: Vec<RegionMask> = (0..40)
            .map(|i| RegionMask::threshold(&h, |v| v > -1.0 + 0.05 * i as f64))
            .collect();
        for i in 0..10 {
            masks.push(RegionMask::ball(&spec, m.background(), &spec.coords(i * 97 % spec.len()), 0.3 + 0.28 * i as f64));
        }
        for mask in masks.iter().filter(|m| !m.is_empty()) {
            let vg = conformal::volume_of_region(&m, mask).unwrap();
            let v0 = mask.flat_volume(m.background());
            prop_assert!(vg <= k * v0.powf(cert.q) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn obstruction_boundary_by_bisection(j in 2u64..200, v0 in 0.1..50.0f64) {
        let mut b = HypothesisBudget::new(j, 3);
        b.v0 = v0;
        let sign = |v: f64| estimates::negative_scalar_obstruction(v, &b, 3).unwrap().rhs >= 0.0;
        let expected = estimates::obstruction_threshold(&b, 3);
        let (mut lo, mut hi) = (expected * 1e-3, expected * 1e3);
        while (hi - lo) > 1e-12 * expected {
            let mid = 0.5 * (lo + hi);
            if sign(mid) { lo = mid } else { hi = mid }
        }
        prop_assert!((0.5 * (lo + hi) - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn identities_hold_to_discretisation_order(seed in 0u64..1000, alpha in prop::sample::select(vec![0.1, 0.25, 0.49])) {
        let spec = GridSpec::cubic(3, 24).unwrap();
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| 0.5 * v).unwrap();
        let m = ConformalMetric::new(FlatMetric::identity(3), f).unwrap();
        let h4 = spec.max_spacing().powi(4);
        let p = conformal::product_rule_residual(&m).unwrap();
        let a = conformal::alpha_identity_residual(&m, alpha).unwrap();
        prop_assert!(p.residual <= DISCRETIZATION_K * h4 * p.scale);
        prop_assert!(a.residual <= DISCRETIZATION_K * h4 * a.scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jensen_lower_bounds_hold(seed in 0u64..100_000, amp in 0.05..1.5f64) {
        let spec = GridSpec::cubic(3, 10).unwrap();
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| amp * v).unwrap();
        let m = ConformalMetric::new(FlatMetric::identity(3), f).unwrap();
        let reps = estimates::jensen_sandwich(&m, &HypothesisBudget::new(1, 3)).unwrap();
        for r in reps.iter().filter(|r| r.name.starts_with("jensen_lower")) {
            prop_assert!(r.pass && r.slack > 0.0, "{r:?}");
        }
    }

    #[test]
    fn constant_shift_rescales_curvature(seed in 0u64..100_000, c in -2.0..2.0f64) {
        let spec = grid2(16);
        let f = random_band_limited(&spec, 2, seed).unwrap().map(|v| 0.3 * v).unwrap();
        let shifted = f.map(|v| v + c).unwrap();
        let r0 = conformal::scalar_curvature(&ConformalMetric::new(FlatMetric::identity(2), f).unwrap()).unwrap();
        let r1 = conformal::scalar_curvature(&ConformalMetric::new(FlatMetric::identity(2), shifted).unwrap()).unwrap();
        let k = (-2.0 * c).exp();
        let scale = r0.max_abs().max(1e-300);
        for (a, b) in r0.values().iter().zip(r1.values()) {
            prop_assert!((b - k * a).abs() <= 1e-9 * k * scale);
        }
    }
}

#[test]
fn scalar_field_rejects_nan() {
    let spec = grid2(8);
    let mut v = vec![0.0; spec.len()];
    v[3] = f64::NAN;
    assert!(ScalarField::new(spec, v).is_err());
}

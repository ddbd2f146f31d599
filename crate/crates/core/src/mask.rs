//! Measurable subsets of the torus, represented by node membership.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{flat_distance, BallStencil, FlatMetric, GridSpec, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    spec: GridSpec,
    membership: Vec<bool>,
    label: String,
}

impl RegionMask {
    pub fn new(spec: GridSpec, membership: Vec<bool>) -> Result<Self> {
        if membership.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries, grid has {}",
                membership.len(),
                spec.len()
            )));
        }
        Ok(RegionMask {
            spec,
            membership,
            label: "mask".into(),
        })
    }

    pub fn full(spec: &GridSpec) -> Self {
        RegionMask {
            spec: spec.clone(),
            membership: vec![true; spec.len()],
            label: "all".into(),
        }
    }

    pub fn empty(spec: &GridSpec) -> Self {
        RegionMask {
            spec: spec.clone(),
            membership: vec![false; spec.len()],
            label: "empty".into(),
        }
    }

    /// Nodes within flat distance `r` of an arbitrary point.
    pub fn ball(spec: &GridSpec, metric: &FlatMetric, center: &[f64], r: f64) -> Self {
        let membership = (0..spec.len())
            .map(|i| flat_distance(metric, center, &spec.coords(i)) <= r * (1.0 + 1e-12))
            .collect();
        RegionMask {
            spec: spec.clone(),
            membership,
            label: format!("ball(center={center:?}, r={r})"),
        }
    }

    /// Ball around a grid node, using a precomputed stencil.
    pub fn ball_at_node(stencil: &BallStencil, spec: &GridSpec, center: usize) -> Self {
        let mut membership = vec![false; spec.len()];
        for i in stencil.members(center) {
            membership[i] = true;
        }
        RegionMask {
            spec: spec.clone(),
            membership,
            label: format!("ball(node={center}, r={:.6})", stencil.radius()),
        }
    }

    /// Nodes where `pred(field value)` holds.
    pub fn threshold(field: &ScalarField, pred: impl Fn(f64) -> bool) -> Self {
        RegionMask {
            spec: field.spec().clone(),
            membership: field.values().iter().map(|&v| pred(v)).collect(),
            label: "threshold".into(),
        }
    }

    pub fn union(&self, other: &RegionMask) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::InvalidArgument("masks live on different grids".into()));
        }
        Ok(RegionMask {
            spec: self.spec.clone(),
            membership: self
                .membership
                .iter()
                .zip(&other.membership)
                .map(|(a, b)| *a || *b)
                .collect(),
            label: format!("{} ∪ {}", self.label, other.label),
        })
    }

    pub fn complement(&self) -> Self {
        RegionMask {
            spec: self.spec.clone(),
            membership: self.membership.iter().map(|b| !b).collect(),
            label: format!("complement({})", self.label),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.membership[idx]
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn nodes(&self) -> Vec<usize> {
        (0..self.membership.len()).filter(|&i| self.membership[i]).collect()
    }

    pub(crate) fn masked_sum(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.membership)
            .filter(|(_, &b)| b)
            .map(|(v, _)| v)
            .sum()
    }

    /// `Vol_{g_0}(E)` under node inclusion.
    pub fn flat_volume(&self, metric: &FlatMetric) -> f64 {
        self.count() as f64 * self.spec.cell_volume() * metric.sqrt_det()
    }
}

/// Parameters of the default ball family used to probe uniform integrability.
#[derive(Clone, Debug, Serialize)]
pub struct BallFamily {
    pub centers: usize,
    pub radii: usize,
    pub seed: u64,
}

impl Default for BallFamily {
    fn default() -> Self {
        BallFamily {
            centers: 24,
            radii: 8,
            seed: 0,
        }
    }
}

/// Geodesic radii `2h · (π / 2h)^{k/(count-1)}`, from twice the grid spacing up to `π`.
pub fn geometric_radii(spec: &GridSpec, count: usize) -> Vec<f64> {
    let lo = 2.0 * spec.max_spacing();
    if count <= 1 {
        return vec![PI];
    }
    (0..count)
        .map(|k| lo * (PI / lo).powf(k as f64 / (count - 1) as f64))
        .map(|r| r.min(PI))
        .collect()
}

/// Balls of [`geometric_radii`] around seeded random grid nodes plus any `extra_centers`.
pub fn ball_family(
    spec: &GridSpec,
    metric: &FlatMetric,
    family: &BallFamily,
    extra_centers: &[usize],
) -> Result<Vec<RegionMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
    let mut centers: Vec<usize> = extra_centers.to_vec();
    for _ in 0..family.centers {
        centers.push(rng.gen_range(0..spec.len()));
    }
    let mut masks = Vec::with_capacity(centers.len() * family.radii);
    for r in geometric_radii(spec, family.radii) {
        let stencil = BallStencil::new(spec, metric, r)?;
        for &c in &centers {
            masks.push(RegionMask::ball_at_node(&stencil, spec, c));
        }
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{volume_of_region, ConformalMetric};

    #[test]
    fn radii_span_two_h_to_pi() {
        let spec = GridSpec::cubic(3, 16).unwrap();
        let r = geometric_radii(&spec, 6);
        assert!((r[0] - 2.0 * spec.max_spacing()).abs() < 1e-15);
        assert!((r[5] - PI).abs() < 1e-12);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn family_is_seeded() {
        let spec = GridSpec::cubic(2, 16).unwrap();
        let id = FlatMetric::identity(2);
        let fam = BallFamily {
            centers: 20,
            radii: 4,
            seed: 9,
        };
        let a = ball_family(&spec, &id, &fam, &[3]).unwrap();
        let b = ball_family(&spec, &id, &fam, &[3]).unwrap();
        assert_eq!(a.len(), 84);
        assert_eq!(a, b);
    }

    #[test]
    fn flat_ball_volume_converges_to_disc_area() {
        // node-inclusion error is O(h): check the refinement trend
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let spec = GridSpec::cubic(2, n).unwrap();
            let id = FlatMetric::identity(2);
            let m = ConformalMetric::flat(id.clone(), &spec).unwrap();
            let ball = RegionMask::ball(&spec, &id, &[PI, PI], 1.0);
            errs.push((volume_of_region(&m, &ball).unwrap() - PI).abs());
        }
        assert!(errs[2] < 0.05, "{errs:?}");
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn complement_and_union() {
        let spec = GridSpec::cubic(2, 8).unwrap();
        let id = FlatMetric::identity(2);
        let b = RegionMask::ball(&spec, &id, &[1.0, 1.0], 1.0);
        let u = b.union(&b.complement()).unwrap();
        assert_eq!(u.count(), spec.len());
        assert!(RegionMask::empty(&spec).is_empty());
    }
}

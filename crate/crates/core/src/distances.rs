//! Geodesic distances on a stencil graph, diameter estimates, and the
//! intrinsic-flat upper bound `2 V_j + √(δD + δ²) V`.

use petgraph::algo::dijkstra;
use petgraph::csr::Csr;
use petgraph::Directed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conformal::ConformalMetric;
use crate::error::{Error, Result};
use crate::grid::{FlatMetric, GridSpec};
use crate::mask::RegionMask;

/// Integer offsets with max-norm ≤ 2 whose components have gcd 1.
pub fn stencil_offsets(dim: usize) -> Vec<Vec<isize>> {
    fn gcd(a: isize, b: isize) -> isize {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let mut out = Vec::new();
    let mut k = vec![-2isize; dim];
    loop {
        if k.iter().fold(0, |g, &c| gcd(g, c)) == 1 {
            out.push(k.clone());
        }
        let mut a = 0;
        while a < dim {
            k[a] += 1;
            if k[a] <= 2 {
                break;
            }
            k[a] = -2;
            a += 1;
        }
        if a == dim {
            return out;
        }
    }
}

/// Grid nodes joined along [`stencil_offsets`], each edge weighted by the
/// trapezoid average of `e^f` at its ends times its flat length.
pub struct StencilGraph {
    spec: GridSpec,
    offsets: Vec<Vec<isize>>,
    graph: Csr<(), f64, Directed, u32>,
}

impl StencilGraph {
    pub fn new(m: &ConformalMetric) -> Result<Self> {
        let spec = m.exponent().spec().clone();
        let ef = m.exp_field(1.0)?;
        Self::build(&spec, m.background(), ef.values())
    }

    /// Graph of the flat metric itself (`f ≡ 0`).
    pub fn flat(spec: &GridSpec, g0: &FlatMetric) -> Result<Self> {
        Self::build(spec, g0, &vec![1.0; spec.len()])
    }

    fn build(spec: &GridSpec, g0: &FlatMetric, ef: &[f64]) -> Result<Self> {
        if g0.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: g0.dim(),
            });
        }
        if spec.len() > u32::MAX as usize {
            return Err(Error::InvalidGrid("too many nodes for the distance graph".into()));
        }
        let offsets = stencil_offsets(spec.dim());
        let lengths: Vec<f64> = offsets
            .iter()
            .map(|o| {
                let d: Vec<f64> = o
                    .iter()
                    .enumerate()
                    .map(|(a, &k)| k as f64 * spec.spacing(a))
                    .collect();
                g0.quad_form(&d).sqrt()
            })
            .collect();
        let mut edges: Vec<(u32, u32, f64)> = (0..spec.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut row: Vec<(u32, u32, f64)> = offsets
                    .iter()
                    .zip(&lengths)
                    .map(|(o, &len)| {
                        let t = spec.shifted(i, o);
                        (i as u32, t as u32, 0.5 * (ef[i] + ef[t]) * len)
                    })
                    .collect();
                row.sort_by_key(|e| e.1);
                row
            })
            .collect();
        edges.dedup_by_key(|e| (e.0, e.1));
        let graph = Csr::from_sorted_edges(&edges)
            .map_err(|_| Error::InvalidGrid("stencil edges out of order".into()))?;
        Ok(StencilGraph {
            spec: spec.clone(),
            offsets,
            graph,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn offsets(&self) -> &[Vec<isize>] {
        &self.offsets
    }

    /// Shortest-path distances from `source` to every node.
    pub fn single_source(&self, source: usize) -> Vec<f64> {
        let scores = dijkstra(&self.graph, source as u32, None, |e| *e.weight());
        let mut out = vec![f64::INFINITY; self.spec.len()];
        for (node, d) in scores {
            out[node as usize] = d;
        }
        out
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let scores = dijkstra(&self.graph, a as u32, Some(b as u32), |e| *e.weight());
        scores[&(b as u32)]
    }
}

/// A point-to-point distance with the grid nodes actually used.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Geodesic {
    pub distance: f64,
    pub source: usize,
    pub target: usize,
    /// Whether either endpoint was moved to its nearest grid node.
    pub snapped: bool,
}

fn snap(spec: &GridSpec, p: &[f64]) -> Result<(usize, bool)> {
    if p.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: p.len(),
        });
    }
    let idx = spec.nearest_node(p);
    let moved = spec
        .coords(idx)
        .iter()
        .zip(p)
        .any(|(a, b)| (a - b.rem_euclid(crate::grid::TWO_PI)).abs() > 1e-12);
    Ok((idx, moved))
}

pub fn geodesic_distance(m: &ConformalMetric, x: &[f64], y: &[f64]) -> Result<Geodesic> {
    let graph = StencilGraph::new(m)?;
    let (source, sx) = snap(graph.spec(), x)?;
    let (target, sy) = snap(graph.spec(), y)?;
    Ok(Geodesic {
        distance: graph.distance(source, target),
        source,
        target,
        snapped: sx || sy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplingPlan {
    /// Every node is a source: the true graph diameter.
    Exact,
    /// `k` farthest-point sources seeded at the grid origin: a lower bound.
    FarthestPoint { k: usize },
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan::FarthestPoint { k: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiameterEstimate {
    pub value: f64,
    /// `true` for [`SamplingPlan::Exact`]; otherwise `value` is a lower bound.
    pub exact: bool,
    pub sources: Vec<usize>,
    pub endpoints: (usize, usize),
}

pub fn diameter(m: &ConformalMetric, plan: SamplingPlan) -> Result<DiameterEstimate> {
    let graph = StencilGraph::new(m)?;
    diameter_on(&graph, plan)
}

fn farthest(d: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &v) in d.iter().enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

pub fn diameter_on(graph: &StencilGraph, plan: SamplingPlan) -> Result<DiameterEstimate> {
    let len = graph.spec().len();
    match plan {
        SamplingPlan::Exact => {
            let (value, a, b) = (0..len)
                .into_par_iter()
                .map(|s| {
                    let (d, t) = farthest(&graph.single_source(s));
                    (d, s, t)
                })
                .reduce(
                    || (f64::NEG_INFINITY, 0, 0),
                    |x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x },
                );
            Ok(DiameterEstimate {
                value,
                exact: true,
                sources: (0..len).collect(),
                endpoints: (a, b),
            })
        }
        SamplingPlan::FarthestPoint { k } => {
            if k == 0 {
                return Err(Error::InvalidArgument("need at least one source".into()));
            }
            let mut nearest = vec![f64::INFINITY; len];
            let mut sources = Vec::with_capacity(k);
            let mut best = (f64::NEG_INFINITY, 0, 0);
            let mut next = 0;
            for _ in 0..k.min(len) {
                sources.push(next);
                let d = graph.single_source(next);
                let (v, t) = farthest(&d);
                if v > best.0 {
                    best = (v, next, t);
                }
                for (n, x) in nearest.iter_mut().zip(&d) {
                    *n = n.min(*x);
                }
                next = farthest(&nearest).1;
            }
            Ok(DiameterEstimate {
                value: best.0,
                exact: false,
                sources,
                endpoints: (best.1, best.2),
            })
        }
    }
}

/// Sampled estimate of the smallest `δ` with `d_{g_j} ≤ d_ref + 2δ` on a mask.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceExcess {
    pub delta: f64,
    pub pair: (usize, usize),
    pub pairs_sampled: usize,
    /// Always `true`: `δ` is an empirical estimate from sampled pairs.
    pub empirical: bool,
}

/// `δ = ½ max(0, d_{g_j}(p,q) - d_ref(p,q))` over about `pairs` seeded pairs in `w`.
///
/// Both distances are stencil-graph distances, so the metrication error of
/// the graph largely cancels. Pairs are drawn as a product of `⌈√pairs⌉`
/// sources with enough targets to reach `pairs`.
pub fn distance_excess(
    m: &ConformalMetric,
    reference: &FlatMetric,
    w: &RegionMask,
    pairs: usize,
    seed: u64,
) -> Result<DistanceExcess> {
    let graph = StencilGraph::new(m)?;
    distance_excess_on(&graph, reference, w, pairs, seed)
}

pub fn distance_excess_on(
    graph: &StencilGraph,
    reference: &FlatMetric,
    w: &RegionMask,
    pairs: usize,
    seed: u64,
) -> Result<DistanceExcess> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let spec = graph.spec();
    if w.spec() != spec {
        return Err(Error::InvalidArgument("mask lives on a different grid".into()));
    }
    let nodes = w.nodes();
    if nodes.is_empty() {
        return Err(Error::EmptyMask);
    }
    // constant weights: the reference distance depends only on q - p
    let from_origin = StencilGraph::flat(spec, reference)?.single_source(0);
    let n_src = (pairs as f64).sqrt().ceil() as usize;
    let n_tgt = pairs.div_ceil(n_src);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<usize> = (0..n_src).map(|_| nodes[rng.gen_range(0..nodes.len())]).collect();
    let targets: Vec<usize> = (0..n_tgt).map(|_| nodes[rng.gen_range(0..nodes.len())]).collect();

    let per_source: Vec<(f64, usize, usize)> = sources
        .par_iter()
        .map(|&p| {
            let d = graph.single_source(p);
            let kp = spec.unravel(p);
            let mut best = (0.0_f64, p, p);
            for &q in &targets {
                let delta: Vec<isize> = kp.iter().map(|&k| -(k as isize)).collect();
                let rel = spec.shifted(q, &delta);
                let excess = d[q] - from_origin[rel];
                if excess > best.0 {
                    best = (excess, p, q);
                }
            }
            best
        })
        .collect();
    let mut best = (0.0, nodes[0], nodes[0]);
    for b in per_source {
        if b.0 > best.0 {
            best = b;
        }
    }
    Ok(DistanceExcess {
        delta: 0.5 * best.0,
        pair: (best.1, best.2),
        pairs_sampled: n_src * n_tgt,
        empirical: true,
    })
}

/// `2 V_j + √(δD + δ²) V`.
pub fn flat_distance_bound(d: f64, v: f64, vj: f64, delta: f64) -> Result<f64> {
    for (name, x) in [("D", d), ("V", v), ("Vj", vj), ("delta", delta)] {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} = {x} must be nonnegative")));
        }
    }
    Ok(2.0 * vj + (delta * d + delta * delta).sqrt() * v)
}

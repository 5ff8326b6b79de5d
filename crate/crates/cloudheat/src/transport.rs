//! Transport maps, the TL2 metric, spectral projection onto the cloud, and
//! sample-based distances between measures over functions.
//!
//! A [`TransportMap`] pushes the uniform measure forward onto the empirical
//! measure of a cloud. On the circle the map is the monotone rearrangement
//! sending the i-th quantile arc to the i-th sorted point, with the rotation
//! chosen to minimize the sup displacement `t_n`; this is the optimal
//! infinity-transport map up to rotation and its pushforward is exact by
//! construction. On the torus the map is the nearest-point (Voronoi)
//! assignment on a quadrature grid, an upper-bound surrogate whose mass
//! defect is reported.
//!
//! [`tl2_distance`] evaluates the TL2 metric between two measure/function
//! pairs, either exactly (discrete optimal transport with ground cost
//! `d_M(x,y)^2 + |f(x) - g(y)|^2`) or as the upper bound induced by a
//! transport map.

use crate::error::{Error, Result};
use crate::graph::GraphSpectrum;
use crate::manifold::{ContinuumSpectrum, Manifold, PointCloud, QuadratureGrid};
use crate::measures::{FunctionMeasure, FunctionOnCloud, FunctionOnManifold};
use crate::rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

/// Default atom budget for the exact OT solver; beyond this the assignment
/// cost dominates and the map-bound estimator should be used.
pub const DEFAULT_MAX_ATOMS: usize = 512;

/// Support of a transport map's source measure.
#[derive(Debug, Clone)]
enum TransportSource {
    /// The uniform measure gamma discretized on a quadrature grid.
    Grid(QuadratureGrid),
    /// An empirical measure gamma_n (used by identity maps).
    Cloud { cloud: Arc<PointCloud>, params: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// Circle quantile-arc rearrangement (pushforward exact).
    QuantileArc,
    /// Torus nearest-point assignment (upper-bound surrogate).
    Voronoi,
    /// Identity on a cloud.
    Identity,
}

/// A measure-preserving assignment from the source support onto a cloud,
/// with its realized sup displacement `t_n`.
#[derive(Debug, Clone)]
pub struct TransportMap {
    pub manifold: Manifold,
    pub cloud: Arc<PointCloud>,
    source: TransportSource,
    assignment: Vec<u32>,
    pub t_n: f64,
    pub kind: MapKind,
    /// Largest deviation of per-point received mass from `1/n` (zero on the
    /// circle where arcs give the exact mass; grid-count defect on the torus).
    pub pushforward_mass_error: f64,
    /// Precomputed measure part of the map-bound cost:
    /// the integral of `d_M(x, T(x))^2` over the source.
    transport_cost_sq: f64,
}

impl TransportMap {
    pub fn source_len(&self) -> usize {
        match &self.source {
            TransportSource::Grid(g) => g.len,
            TransportSource::Cloud { cloud, .. } => cloud.n,
        }
    }

    /// Kept for symmetry with [`compose_cloud_values`].
    pub fn compose_cloud_values_len(&self) -> usize {
        self.source_len()
    }

    pub fn source_param(&self, g: usize) -> &[f64] {
        match &self.source {
            TransportSource::Grid(grid) => grid.param(g),
            TransportSource::Cloud { cloud, params } => {
                let d = cloud.manifold.param_dim();
                &params[g * d..(g + 1) * d]
            }
        }
    }

    pub fn source_point(&self, g: usize) -> &[f64] {
        match &self.source {
            TransportSource::Grid(grid) => grid.point(g),
            TransportSource::Cloud { cloud, .. } => cloud.point(g),
        }
    }

    pub fn target_index(&self, g: usize) -> usize {
        self.assignment[g] as usize
    }

    /// Pull a vector of values over the cloud back to the source support:
    /// `(v o T)(x_g) = v[T(g)]`.
    pub fn compose_cloud_values(&self, values: &[f64]) -> Vec<f64> {
        self.assignment.iter().map(|&t| values[t as usize]).collect()
    }

    /// Mass received by each cloud point under the discretized map.
    pub fn target_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cloud.n];
        let w = 1.0 / self.source_len() as f64;
        for &t in &self.assignment {
            m[t as usize] += w;
        }
        m
    }

    /// The map-bound TL2 cost between a function on the source support and
    /// a function on the target cloud:
    /// `sqrt( int d_M(x,T x)^2 dgamma + int |f(x) - g(T x)|^2 dgamma )`.
    pub fn map_bound_distance(&self, f_source: &[f64], g_target: &[f64]) -> f64 {
        debug_assert_eq!(f_source.len(), self.source_len());
        debug_assert_eq!(g_target.len(), self.cloud.n);
        let mut acc = 0.0;
        for (g, &fs) in f_source.iter().enumerate() {
            let d = fs - g_target[self.assignment[g] as usize];
            acc += d * d;
        }
        (self.transport_cost_sq + acc / self.source_len() as f64).sqrt()
    }

    /// Identity map on a cloud: `t_n = 0`, pushforward exact; map-bound then
    /// reduces to the plain `L^2(gamma_n)` distance.
    pub fn identity(cloud: Arc<PointCloud>) -> TransportMap {
        let params: Vec<f64> = (0..cloud.n)
            .flat_map(|i| cloud.manifold.param_from_ambient(cloud.point(i)))
            .collect();
        let assignment = (0..cloud.n as u32).collect();
        TransportMap {
            manifold: cloud.manifold,
            cloud: Arc::clone(&cloud),
            source: TransportSource::Cloud { cloud, params },
            assignment,
            t_n: 0.0,
            kind: MapKind::Identity,
            pushforward_mass_error: 0.0,
            transport_cost_sq: 0.0,
        }
    }
}

fn wrap_tau(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = wrap_tau(a - b);
    d.min(TAU - d)
}

/// Sup of the circle distance to `theta` over the closed arc
/// `[left, left + width]`.
fn sup_dist_on_arc(theta: f64, left: f64, width: f64) -> f64 {
    let dl = circle_dist(theta, left);
    let dr = circle_dist(theta, left + width);
    // if the antipode lies inside the arc the sup is pi
    if wrap_tau(theta + PI - left) <= width {
        PI
    } else {
        dl.max(dr)
    }
}

/// Build the transport map from gamma onto the empirical measure of `cloud`,
/// discretized on a grid of `resolution` cells per parameter axis.
pub fn transport_map(
    manifold: Manifold,
    cloud: Arc<PointCloud>,
    resolution: usize,
) -> Result<TransportMap> {
    if cloud.manifold != manifold {
        return Err(Error::InvalidArgument(format!(
            "cloud lives on {} but the map source is {}",
            cloud.manifold, manifold
        )));
    }
    if cloud.n == 0 {
        return Err(Error::InvalidArgument("cannot transport onto an empty cloud".into()));
    }
    let grid = QuadratureGrid::new(manifold, resolution);
    match manifold {
        Manifold::Circle => {
            let n = cloud.n;
            let mut order: Vec<usize> = (0..n).collect();
            let thetas: Vec<f64> = (0..n)
                .map(|i| manifold.param_from_ambient(cloud.point(i))[0])
                .collect();
            order.sort_by(|&a, &b| thetas[a].total_cmp(&thetas[b]));
            let sorted: Vec<f64> = order.iter().map(|&i| thetas[i]).collect();
            let h = TAU / n as f64;

            let t_of = |phi: f64| -> f64 {
                let mut worst: f64 = 0.0;
                for (i, &th) in sorted.iter().enumerate() {
                    let left = wrap_tau(phi + i as f64 * h);
                    worst = worst.max(sup_dist_on_arc(th, left, h));
                }
                worst
            };
            // the sup displacement is piecewise linear and h-periodic in the
            // rotation; coarse scan plus local ternary refinement
            let coarse = 2048usize.max(4 * n);
            let mut best_phi = 0.0;
            let mut best_t = f64::INFINITY;
            for s in 0..coarse {
                let phi = h * s as f64 / coarse as f64;
                let t = t_of(phi);
                if t < best_t {
                    best_t = t;
                    best_phi = phi;
                }
            }
            let (mut lo, mut hi) = (best_phi - h / coarse as f64, best_phi + h / coarse as f64);
            for _ in 0..80 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if t_of(m1) <= t_of(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let phi = 0.5 * (lo + hi);
            let t_n = t_of(phi);

            let mut assignment = Vec::with_capacity(grid.len);
            for g in 0..grid.len {
                let rel = wrap_tau(grid.param(g)[0] - phi);
                let idx = ((rel / h) as usize).min(n - 1);
                assignment.push(order[idx] as u32);
            }
            let transport_cost_sq = (0..grid.len)
                .map(|g| {
                    let d = manifold
                        .geodesic_unchecked(grid.point(g), cloud.point(assignment[g] as usize));
                    d * d
                })
                .sum::<f64>()
                / grid.len as f64;
            Ok(TransportMap {
                manifold,
                cloud,
                source: TransportSource::Grid(grid),
                assignment,
                t_n,
                kind: MapKind::QuantileArc,
                pushforward_mass_error: 0.0,
                transport_cost_sq,
            })
        }
        Manifold::FlatTorus => {
            let n = cloud.n;
            let mut assignment = Vec::with_capacity(grid.len);
            let mut t_n: f64 = 0.0;
            let mut cost = 0.0;
            for g in 0..grid.len {
                let x = grid.point(g);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for j in 0..n {
                    let d = manifold.geodesic_unchecked(x, cloud.point(j));
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                assignment.push(best as u32);
                t_n = t_n.max(best_d);
                cost += best_d * best_d;
            }
            let mut counts = vec![0usize; n];
            for &t in &assignment {
                counts[t as usize] += 1;
            }
            let glen = grid.len;
            let mass_err = counts
                .iter()
                .map(|&c| (c as f64 / glen as f64 - 1.0 / n as f64).abs())
                .fold(0.0, f64::max);
            Ok(TransportMap {
                manifold,
                cloud,
                source: TransportSource::Grid(grid),
                assignment,
                t_n,
                kind: MapKind::Voronoi,
                pushforward_mass_error: mass_err,
                transport_cost_sq: cost / glen as f64,
            })
        }
    }
}

/// An element of TL2: a probability measure on the manifold paired with a
/// square-integrable function on it.
#[derive(Debug, Clone)]
pub struct Tl2Point {
    pub manifold: Manifold,
    pub repr: Tl2Repr,
}

#[derive(Debug, Clone)]
pub enum Tl2Repr {
    /// (gamma, f) with f given by spectral coefficients.
    Continuum(FunctionOnManifold),
    /// (gamma_n, v) with v a vector over the cloud.
    Cloud(FunctionOnCloud),
    /// Explicit atoms: flat ambient positions, masses, and values.
    Atoms {
        points: Vec<f64>,
        masses: Vec<f64>,
        values: Vec<f64>,
    },
}

/// Discrete atom list form of a TL2 point.
#[derive(Debug, Clone)]
pub struct AtomSet {
    pub manifold: Manifold,
    pub points: Vec<f64>,
    pub masses: Vec<f64>,
    pub values: Vec<f64>,
}

impl AtomSet {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.manifold.ambient_dim();
        &self.points[i * d..(i + 1) * d]
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "atom masses must sum to 1, got {total}"
            )));
        }
        if self.masses.iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidArgument("atom masses must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.manifold.ambient_dim();
        let atoms: Vec<Vec<f64>> = self.points.chunks_exact(d).map(|p| p.to_vec()).collect();
        serde_json::json!({
            "manifold": self.manifold.to_string(),
            "atoms": atoms,
            "masses": self.masses,
            "values": self.values,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<AtomSet> {
        use serde::Deserialize;
        #[derive(Deserialize)]
        struct Wire {
            manifold: Manifold,
            atoms: Vec<Vec<f64>>,
            #[serde(default)]
            masses: Option<Vec<f64>>,
            values: Vec<f64>,
        }
        let w: Wire = serde_json::from_value(v.clone())?;
        if w.atoms.len() != w.values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} atoms but {} values",
                w.atoms.len(),
                w.values.len()
            )));
        }
        let n = w.atoms.len();
        let masses = w.masses.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if masses.len() != n {
            return Err(Error::InvalidArgument("masses length mismatch".into()));
        }
        let mut points = Vec::with_capacity(n * w.manifold.ambient_dim());
        for a in &w.atoms {
            if a.len() != w.manifold.ambient_dim() {
                return Err(Error::InvalidArgument("atom dimension mismatch".into()));
            }
            points.extend_from_slice(a);
        }
        let set = AtomSet {
            manifold: w.manifold,
            points,
            masses,
            values: w.values,
        };
        set.validate()?;
        Ok(set)
    }
}

impl Tl2Point {
    pub fn from_atoms(set: AtomSet) -> Result<Tl2Point> {
        set.validate()?;
        Ok(Tl2Point {
            manifold: set.manifold,
            repr: Tl2Repr::Atoms {
                points: set.points,
                masses: set.masses,
                values: set.values,
            },
        })
    }

    /// Discretize to an explicit atom list. Continuum functions are sampled
    /// on the quadrature grid of `resolution` cells per axis.
    pub fn atomize(&self, resolution: usize) -> AtomSet {
        match &self.repr {
            Tl2Repr::Continuum(f) => {
                let grid = QuadratureGrid::new(self.manifold, resolution);
                let values = f.values_on_grid(&grid);
                let mut points = Vec::with_capacity(grid.len * self.manifold.ambient_dim());
                for g in 0..grid.len {
                    points.extend_from_slice(grid.point(g));
                }
                AtomSet {
                    manifold: self.manifold,
                    points,
                    masses: vec![1.0 / grid.len as f64; grid.len],
                    values,
                }
            }
            Tl2Repr::Cloud(v) => {
                let n = v.cloud.n;
                let mut points = Vec::with_capacity(n * self.manifold.ambient_dim());
                for i in 0..n {
                    points.extend_from_slice(v.cloud.point(i));
                }
                AtomSet {
                    manifold: self.manifold,
                    points,
                    masses: vec![1.0 / n as f64; n],
                    values: v.values.clone(),
                }
            }
            Tl2Repr::Atoms {
                points,
                masses,
                values,
            } => AtomSet {
                manifold: self.manifold,
                points: points.clone(),
                masses: masses.clone(),
                values: values.clone(),
            },
        }
    }
}

/// How to evaluate a TL2 distance.
#[derive(Clone, Copy)]
pub enum Tl2Method<'a> {
    /// Exact discrete optimal transport; continuum sides are discretized at
    /// `resolution` first and the total atom count is capped.
    Exact { max_atoms: usize, resolution: usize },
    /// Evaluate the coupling induced by a transport map (an upper bound).
    MapBound(&'a TransportMap),
}

impl Tl2Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Tl2Method::Exact { .. } => "exact_ot",
            Tl2Method::MapBound(_) => "map_bound",
        }
    }
}

/// TL2 distance between two measure/function pairs.
pub fn tl2_distance(a: &Tl2Point, b: &Tl2Point, method: Tl2Method) -> Result<f64> {
    if a.manifold != b.manifold {
        return Err(Error::InvalidArgument(format!(
            "cannot compare TL2 points on {} and {}",
            a.manifold, b.manifold
        )));
    }
    match method {
        Tl2Method::Exact {
            max_atoms,
            resolution,
        } => {
            let sa = a.atomize(resolution);
            let sb = b.atomize(resolution);
            if sa.len() > max_atoms || sb.len() > max_atoms {
                return Err(Error::AtomBudget {
                    atoms: sa.len().max(sb.len()),
                    budget: max_atoms,
                });
            }
            // canonical argument order makes the distance exactly symmetric
            if atom_order(&sb, &sa) == std::cmp::Ordering::Less {
                exact_ot_cost(&sb, &sa).map(f64::sqrt)
            } else {
                exact_ot_cost(&sa, &sb).map(f64::sqrt)
            }
        }
        Tl2Method::MapBound(map) => {
            let f_source = values_on_source(a, map)?;
            let g_target = values_on_target(b, map)?;
            Ok(map.map_bound_distance(&f_source, &g_target))
        }
    }
}

fn values_on_source(p: &Tl2Point, map: &TransportMap) -> Result<Vec<f64>> {
    match (&p.repr, &map.source) {
        (Tl2Repr::Continuum(f), TransportSource::Grid(grid)) => Ok(f.values_on_grid(grid)),
        (Tl2Repr::Cloud(v), TransportSource::Cloud { cloud, .. }) => {
            if v.cloud.id() != cloud.id() {
                return Err(Error::InvalidArgument(
                    "first TL2 point lives on a different cloud than the map source".into(),
                ));
            }
            Ok(v.values.clone())
        }
        _ => Err(Error::InvalidArgument(
            "map-bound needs the first point on the map's source measure".into(),
        )),
    }
}

fn values_on_target(p: &Tl2Point, map: &TransportMap) -> Result<Vec<f64>> {
    match &p.repr {
        Tl2Repr::Cloud(v) => {
            if v.cloud.id() != map.cloud.id() {
                return Err(Error::InvalidArgument(
                    "second TL2 point lives on a different cloud than the map target".into(),
                ));
            }
            Ok(v.values.clone())
        }
        _ => Err(Error::InvalidArgument(
            "map-bound needs the second point on the map's target cloud".into(),
        )),
    }
}

fn atom_order(a: &AtomSet, b: &AtomSet) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    a.len()
        .cmp(&b.len())
        .then_with(|| {
            for (x, y) in a.points.iter().zip(&b.points) {
                match x.total_cmp(y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
        .then_with(|| {
            for (x, y) in a.values.iter().zip(&b.values) {
                match x.total_cmp(y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
}

fn exact_ot_cost(a: &AtomSet, b: &AtomSet) -> Result<f64> {
    let (na, nb) = (a.len(), b.len());
    let mut cost = vec![0.0; na * nb];
    for i in 0..na {
        for j in 0..nb {
            let d = a.manifold.geodesic_unchecked(a.point(i), b.point(j));
            let df = a.values[i] - b.values[j];
            cost[i * nb + j] = d * d + df * df;
        }
    }
    solve_transport(&cost, na, nb, &a.masses, &b.masses)
}

/// Exact transportation problem by successive shortest paths with node
/// potentials (Hungarian-class; the equal-count uniform-mass case reduces to
/// the assignment problem). Verifies dual feasibility and complementary
/// slackness to 1e-9 before returning the optimal cost.
fn solve_transport(
    cost: &[f64],
    na: usize,
    nb: usize,
    supply: &[f64],
    demand: &[f64],
) -> Result<f64> {
    const MASS_TOL: f64 = 1e-15;
    let nn = na + nb;
    let mut pi = vec![0.0f64; nn];
    let mut flow = vec![0.0f64; na * nb];
    let mut a_rem = supply.to_vec();
    let mut b_rem = demand.to_vec();

    #[derive(PartialEq)]
    struct HeapItem(f64, usize);
    impl Eq for HeapItem {}
    impl PartialOrd for HeapItem {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for HeapItem {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }

    let max_iters = 4 * (na * nb + nn) + 16;
    let mut iters = 0;
    loop {
        let remaining: f64 = a_rem.iter().sum();
        if remaining <= MASS_TOL * na as f64 {
            break;
        }
        iters += 1;
        if iters > max_iters {
            return Err(Error::Numerical(format!(
                "transport solver exceeded {max_iters} augmentations"
            )));
        }

        // Dijkstra over reduced costs from all sources with remaining supply
        let mut dist = vec![f64::INFINITY; nn];
        let mut parent = vec![usize::MAX; nn];
        let mut done = vec![false; nn];
        let mut heap = std::collections::BinaryHeap::new();
        for i in 0..na {
            if a_rem[i] > MASS_TOL {
                dist[i] = 0.0;
                heap.push(HeapItem(0.0, i));
            }
        }
        while let Some(HeapItem(d, v)) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            if v < na {
                for j in 0..nb {
                    let w = na + j;
                    let rc = (cost[v * nb + j] + pi[v] - pi[w]).max(0.0);
                    if d + rc < dist[w] {
                        dist[w] = d + rc;
                        parent[w] = v;
                        heap.push(HeapItem(dist[w], w));
                    }
                }
            } else {
                let j = v - na;
                for i in 0..na {
                    if flow[i * nb + j] > MASS_TOL {
                        let rc = (-cost[i * nb + j] + pi[v] - pi[i]).max(0.0);
                        if d + rc < dist[i] {
                            dist[i] = d + rc;
                            parent[i] = v;
                            heap.push(HeapItem(dist[i], i));
                        }
                    }
                }
            }
        }
        let sink = (0..nb)
            .filter(|&j| b_rem[j] > MASS_TOL && dist[na + j].is_finite())
            .min_by(|&x, &y| dist[na + x].total_cmp(&dist[na + y]));
        let Some(sink) = sink else {
            return Err(Error::Numerical(
                "transport solver found no augmenting path".into(),
            ));
        };
        let d_sink = dist[na + sink];
        for v in 0..nn {
            pi[v] += dist[v].min(d_sink);
        }
        // bottleneck along the path
        let mut bottleneck = b_rem[sink];
        let mut v = na + sink;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < na {
                // forward arc u -> v, infinite capacity; constrain by supply at path root
            } else {
                let j = u - na;
                let i = v;
                bottleneck = bottleneck.min(flow[i * nb + j]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(a_rem[v]);
        let root = v;
        // apply augmentation
        let mut v = na + sink;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < na {
                flow[u * nb + (v - na)] += bottleneck;
            } else {
                flow[v * nb + (u - na)] -= bottleneck;
            }
            v = u;
        }
        a_rem[root] -= bottleneck;
        b_rem[sink] -= bottleneck;
    }

    // dual feasibility and complementary slackness residuals
    let scale = 1.0 + cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    for i in 0..na {
        for j in 0..nb {
            let rc = cost[i * nb + j] + pi[i] - pi[na + j];
            if rc < -1e-9 * scale {
                return Err(Error::Numerical(format!(
                    "transport dual infeasible: reduced cost {rc:.3e}"
                )));
            }
            if flow[i * nb + j] > 1e-12 && rc.abs() > 1e-9 * scale {
                return Err(Error::Numerical(format!(
                    "transport complementary slackness violated: {rc:.3e}"
                )));
            }
        }
    }
    Ok(flow
        .iter()
        .zip(cost)
        .map(|(f, c)| f * c)
        .sum::<f64>()
        .max(0.0))
}

/// Spectral projection of a continuum function onto the cloud:
/// coefficient `a_i` maps to `((alpha + lambda_i)/(alpha + lambda_i^n))^{s/4} a_i`
/// on the graph mode `psi_i^n`. Pushes the continuum prior forward to the
/// graph prior exactly in coefficient law.
pub fn projection_coefficients(
    cont_eigenvalues: &[f64],
    graph_eigenvalues: &[f64],
    coeffs: &[f64],
    alpha: f64,
    s: f64,
) -> Result<Vec<f64>> {
    let k = coeffs.len();
    if k > cont_eigenvalues.len() || k > graph_eigenvalues.len() {
        return Err(Error::InvalidArgument(format!(
            "projection needs {k} aligned modes on both sides"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let denom = alpha + graph_eigenvalues[i];
        if denom <= 0.0 {
            return Err(Error::DegenerateCovariance(format!(
                "alpha + lambda_{i}^n = {denom} is not positive"
            )));
        }
        let ratio = (alpha + cont_eigenvalues[i]) / denom;
        out.push(ratio.powf(s / 4.0) * coeffs[i]);
    }
    Ok(out)
}

/// Apply [`projection_coefficients`] and synthesize the cloud function.
pub fn project_to_cloud(
    u: &FunctionOnManifold,
    graph_spec: &GraphSpectrum,
    alpha: f64,
    s: f64,
) -> Result<FunctionOnCloud> {
    let coeffs = projection_coefficients(
        &u.spectrum.eigenvalues(),
        &graph_spec.eigenvalues,
        &u.coeffs,
        alpha,
        s,
    )?;
    Ok(FunctionOnCloud {
        cloud: Arc::clone(&graph_spec.cloud),
        values: graph_spec.synthesize(&coeffs),
    })
}

/// Evaluate continuum spectral modes once on a grid so that repeated samples
/// only cost a coefficient combination.
pub struct GridEvaluator {
    pub spectrum: Arc<ContinuumSpectrum>,
    mode_values: Vec<f64>,
    pub len: usize,
    pub k: usize,
}

impl GridEvaluator {
    pub fn new(spectrum: Arc<ContinuumSpectrum>, map: &TransportMap, k: usize) -> GridEvaluator {
        let len = map.source_len();
        let mut mode_values = Vec::with_capacity(k * len);
        for i in 0..k {
            for g in 0..len {
                mode_values.push(spectrum.eval_param(i, map.source_param(g)));
            }
        }
        GridEvaluator {
            spectrum,
            mode_values,
            len,
            k,
        }
    }

    pub fn values(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (i, &c) in coeffs.iter().enumerate().take(self.k) {
            if c == 0.0 {
                continue;
            }
            let row = &self.mode_values[i * self.len..(i + 1) * self.len];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += c * m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Reuse the same standard normals for both measures (the proof's
    /// Karhunen–Loeve coupling); an upper bound with low variance.
    SharedXi,
    Independent,
}

/// Monte-Carlo estimate of the expected TL2 distance between samples of two
/// measures over functions, with its standard error.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub coupling: Coupling,
    pub method: String,
}

/// Estimate `E[d_TL2(X_n, X)]` over sampled pairs; `shared_xi` couples the
/// Karhunen–Loeve coordinates of the two draws. Any coupling bounds the
/// Wasserstein distance over TL2 from above, so the estimate is an upper
/// bound in expectation.
pub fn measure_distance_tl2(
    mu_n: &dyn FunctionMeasure,
    mu: &dyn FunctionMeasure,
    n_pairs: usize,
    seed: u64,
    coupling: Coupling,
    method: Tl2Method,
) -> Result<DistanceEstimate> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one sample pair".into()));
    }
    let xi_len = mu_n.xi_len().max(mu.xi_len());
    let distances: Result<Vec<f64>> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|p| {
            let (xa, xb) = match coupling {
                Coupling::SharedXi => {
                    let mut r = rng::stream(seed, "tl2-pair", &[p]);
                    let xi = rng::standard_normals(&mut r, xi_len);
                    (xi.clone(), xi)
                }
                Coupling::Independent => {
                    let mut ra = rng::stream(seed, "tl2-pair-a", &[p]);
                    let mut rb = rng::stream(seed, "tl2-pair-b", &[p]);
                    (
                        rng::standard_normals(&mut ra, xi_len),
                        rng::standard_normals(&mut rb, xi_len),
                    )
                }
            };
            let fa = mu_n.sample_tl2(&xa);
            let fb = mu.sample_tl2(&xb);
            // the graph-side sample is the map target, the continuum side the source
            tl2_distance(&fb, &fa, method)
        })
        .collect();
    let distances = distances?;
    let mean = distances.iter().sum::<f64>() / n_pairs as f64;
    let var = if n_pairs > 1 {
        distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_pairs as f64 - 1.0)
    } else {
        0.0
    };
    Ok(DistanceEstimate {
        estimate: mean,
        stderr: (var / n_pairs as f64).sqrt(),
        n_pairs,
        coupling,
        method: method.name().to_string(),
    })
}

//! Analytic ground-truth geometries.
//!
//! Two closed manifolds with uniform probability measure, explicit geodesics,
//! i.i.d. sampling, periodic-trapezoid quadrature, and closed-form
//! Laplace–Beltrami spectra:
//!
//! * the unit circle embedded in R^2;
//! * the flat (Clifford) torus in R^4, each factor circle of radius
//!   `1/sqrt(2)`, so eigenvalues are `2(k^2 + l^2)` over the integer lattice.
//!
//! Ambient Euclidean distance is used for all delta-balls; geodesic distance
//! is the intrinsic metric. Points are stored as flat ambient coordinates.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

/// Radius of each factor circle of the Clifford torus.
pub const TORUS_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Tolerance for the on-manifold check in operations that require it.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    Circle,
    FlatTorus,
}

impl std::fmt::Display for Manifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Manifold::Circle => write!(f, "circle"),
            Manifold::FlatTorus => write!(f, "flat_torus"),
        }
    }
}

impl Manifold {
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Manifold::Circle => 1,
            Manifold::FlatTorus => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Circle => 2,
            Manifold::FlatTorus => 4,
        }
    }

    /// Riemannian volume (total length / area). The uniform probability
    /// gamma has density `1/volume` with respect to the volume measure.
    pub fn volume(&self) -> f64 {
        match self {
            Manifold::Circle => TAU,
            // (2 pi r)^2 with r = 1/sqrt(2)
            Manifold::FlatTorus => 2.0 * PI * PI,
        }
    }

    /// Geodesic diameter. Both geometries have diameter pi.
    pub fn diameter(&self) -> f64 {
        PI
    }

    /// Number of angle parameters (1 for the circle, 2 for the torus).
    pub fn param_dim(&self) -> usize {
        self.intrinsic_dim()
    }

    /// Map angle parameters to ambient coordinates.
    pub fn ambient_from_param(&self, param: &[f64]) -> Vec<f64> {
        match self {
            Manifold::Circle => vec![param[0].cos(), param[0].sin()],
            Manifold::FlatTorus => {
                let r = TORUS_RADIUS;
                vec![
                    r * param[0].cos(),
                    r * param[0].sin(),
                    r * param[1].cos(),
                    r * param[1].sin(),
                ]
            }
        }
    }

    /// Recover angle parameters in `[0, 2pi)` from an ambient point.
    pub fn param_from_ambient(&self, point: &[f64]) -> Vec<f64> {
        let wrap = |a: f64| a.rem_euclid(TAU);
        match self {
            Manifold::Circle => vec![wrap(point[1].atan2(point[0]))],
            Manifold::FlatTorus => vec![
                wrap(point[1].atan2(point[0])),
                wrap(point[3].atan2(point[2])),
            ],
        }
    }

    /// Residual of the defining equations of the embedding at `point`.
    pub fn embedding_residual(&self, point: &[f64]) -> f64 {
        match self {
            Manifold::Circle => (point[0].hypot(point[1]) - 1.0).abs(),
            Manifold::FlatTorus => {
                let r1 = (point[0].hypot(point[1]) - TORUS_RADIUS).abs();
                let r2 = (point[2].hypot(point[3]) - TORUS_RADIUS).abs();
                r1.max(r2)
            }
        }
    }

    fn check_on_manifold(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.ambient_dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} ambient coordinates, got {}",
                self.ambient_dim(),
                point.len()
            )));
        }
        let residual = self.embedding_residual(point);
        if residual > ON_MANIFOLD_TOL {
            return Err(Error::OffManifold {
                manifold: match self {
                    Manifold::Circle => "circle",
                    Manifold::FlatTorus => "flat_torus",
                },
                point: point.to_vec(),
                residual,
            });
        }
        Ok(())
    }

    /// Geodesic distance between two on-manifold points.
    ///
    /// Circle: arc length, computed as `2 asin(chord/2)` which is exact and
    /// well conditioned near zero. Torus: flat metric, the Euclidean norm of
    /// the per-factor arc lengths with wraparound.
    pub fn geodesic(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_on_manifold(x)?;
        self.check_on_manifold(y)?;
        Ok(self.geodesic_unchecked(x, y))
    }

    /// Geodesic distance without the on-manifold validation; used in inner
    /// loops over trusted points.
    pub fn geodesic_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Manifold::Circle => {
                let chord = (x[0] - y[0]).hypot(x[1] - y[1]);
                2.0 * (0.5 * chord).clamp(-1.0, 1.0).asin()
            }
            Manifold::FlatTorus => {
                let r = TORUS_RADIUS;
                let c1 = (x[0] - y[0]).hypot(x[1] - y[1]);
                let c2 = (x[2] - y[2]).hypot(x[3] - y[3]);
                let a1 = r * 2.0 * (0.5 * c1 / r).clamp(-1.0, 1.0).asin();
                let a2 = r * 2.0 * (0.5 * c2 / r).clamp(-1.0, 1.0).asin();
                a1.hypot(a2)
            }
        }
    }

    /// Euclidean (chordal) distance in the ambient space.
    pub fn chordal(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Approximate the integral of `f` against gamma by a uniform grid of
    /// `resolution` cells per parameter axis (periodic trapezoid rule, which
    /// is spectrally accurate for smooth periodic integrands).
    pub fn quadrature<F: Fn(&[f64]) -> f64>(&self, f: F, resolution: usize) -> f64 {
        assert!(resolution >= 2, "quadrature resolution must be >= 2");
        match self {
            Manifold::Circle => {
                let mut acc = 0.0;
                for i in 0..resolution {
                    let theta = TAU * i as f64 / resolution as f64;
                    acc += f(&self.ambient_from_param(&[theta]));
                }
                acc / resolution as f64
            }
            Manifold::FlatTorus => {
                let mut acc = 0.0;
                for i in 0..resolution {
                    let u = TAU * i as f64 / resolution as f64;
                    for j in 0..resolution {
                        let v = TAU * j as f64 / resolution as f64;
                        acc += f(&self.ambient_from_param(&[u, v]));
                    }
                }
                acc / (resolution * resolution) as f64
            }
        }
    }

    /// Rigorous lower bound on the i-th (1-based) Laplace–Beltrami
    /// eigenvalue; used for spectral tail bounds.
    pub fn eigenvalue_lower_bound(&self, i: usize) -> f64 {
        match self {
            // lambda_i = ceil((i-1)/2)^2 >= ((i-1)/2)^2
            Manifold::Circle => {
                let t = (i as f64 - 1.0) / 2.0;
                t * t
            }
            // counting lattice points in a disk: i <= pi (rho + 1/sqrt(2))^2
            // with lambda_i = 2 rho^2
            Manifold::FlatTorus => {
                let rho = ((i as f64) / PI).sqrt() - std::f64::consts::FRAC_1_SQRT_2;
                if rho <= 0.0 {
                    0.0
                } else {
                    2.0 * rho * rho
                }
            }
        }
    }
}

/// A point cloud of i.i.d. samples from the uniform measure, together with
/// the implied empirical measure (mass `1/n` per point).
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub manifold: Manifold,
    /// Flat row-major ambient coordinates, `n * ambient_dim` entries.
    coords: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl PointCloud {
    /// Draw `n` i.i.d. uniform samples. Deterministic given the seed, and
    /// prefix-stable: the first `m` points of `sample(.., n, seed)` equal
    /// `sample(.., m, seed)` for `m <= n`, so clouds of increasing size can
    /// share their leading points (and hence observation centers).
    pub fn sample(manifold: Manifold, n: usize, seed: u64) -> PointCloud {
        assert!(n >= 1, "need at least one sample point");
        let mut rng = rng::stream(seed, "sample-points", &[manifold as u64]);
        let dim = manifold.ambient_dim();
        let mut coords = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let param: Vec<f64> = (0..manifold.param_dim())
                .map(|_| TAU * rng.gen::<f64>())
                .collect();
            coords.extend(manifold.ambient_from_param(&param));
        }
        PointCloud {
            manifold,
            coords,
            n,
            seed,
        }
    }

    /// Build a cloud from explicit points, validating each against the
    /// embedding equations.
    pub fn from_points(manifold: Manifold, points: Vec<Vec<f64>>, seed: u64) -> Result<PointCloud> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud cannot be empty".into()));
        }
        let n = points.len();
        let mut coords = Vec::with_capacity(n * manifold.ambient_dim());
        for p in &points {
            manifold.check_on_manifold(p)?;
            coords.extend_from_slice(p);
        }
        Ok(PointCloud {
            manifold,
            coords,
            n,
            seed,
        })
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.manifold.ambient_dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.manifold.ambient_dim())
    }

    /// First `n` points of this cloud as a cloud of their own.
    pub fn prefix(&self, n: usize) -> PointCloud {
        assert!(n >= 1 && n <= self.n);
        let d = self.manifold.ambient_dim();
        PointCloud {
            manifold: self.manifold,
            coords: self.coords[..n * d].to_vec(),
            n,
            seed: self.seed,
        }
    }

    /// Structural identity: clouds are interchangeable iff these match.
    pub fn id(&self) -> (Manifold, usize, u64) {
        (self.manifold, self.n, self.seed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pts: Vec<Vec<f64>> = self.points().map(|p| p.to_vec()).collect();
        serde_json::json!({
            "manifold": self.manifold.to_string(),
            "n": self.n,
            "seed": self.seed,
            "points": pts,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<PointCloud> {
        #[derive(Deserialize)]
        struct Wire {
            manifold: Manifold,
            n: usize,
            seed: u64,
            points: Vec<Vec<f64>>,
        }
        let w: Wire = serde_json::from_value(v.clone())?;
        if w.points.len() != w.n {
            return Err(Error::InvalidArgument(format!(
                "cloud declares n={} but has {} points",
                w.n,
                w.points.len()
            )));
        }
        let mut coords = Vec::with_capacity(w.n * w.manifold.ambient_dim());
        for p in &w.points {
            w.manifold.check_on_manifold(p)?;
            coords.extend_from_slice(p);
        }
        Ok(PointCloud {
            manifold: w.manifold,
            coords,
            n: w.n,
            seed: w.seed,
        })
    }
}

/// Shape of a continuum eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeShape {
    /// The constant function 1.
    Const,
    /// `sqrt(2) cos(j theta)` on the circle.
    CircleCos(u32),
    /// `sqrt(2) sin(j theta)` on the circle.
    CircleSin(u32),
    /// `sqrt(2) cos(k u + l v)` on the torus.
    TorusCos(i32, i32),
    /// `sqrt(2) sin(k u + l v)` on the torus.
    TorusSin(i32, i32),
}

#[derive(Debug, Clone)]
pub struct ContinuumMode {
    pub eigenvalue: f64,
    pub shape: ModeShape,
}

/// The first `k` eigenpairs of minus the Laplace–Beltrami operator, with
/// eigenfunctions orthonormal in `L^2(gamma)`.
///
/// Ordering is deterministic: eigenvalues nondecreasing; within a repeated
/// eigenvalue, circle modes put cosine before sine, and torus modes order
/// lattice representatives `(k, l)` lexicographically (representatives are
/// the half-lattice with `k > 0`, or `k == 0 && l > 0`), cosine before sine.
#[derive(Debug, Clone)]
pub struct ContinuumSpectrum {
    pub manifold: Manifold,
    pub modes: Vec<ContinuumMode>,
}

impl ContinuumSpectrum {
    /// Build the first `k` continuum eigenpairs.
    pub fn new(manifold: Manifold, k: usize) -> Arc<ContinuumSpectrum> {
        assert!(k >= 1, "need at least one mode");
        let modes = match manifold {
            Manifold::Circle => {
                let mut modes = vec![ContinuumMode {
                    eigenvalue: 0.0,
                    shape: ModeShape::Const,
                }];
                let mut j = 1u32;
                while modes.len() < k {
                    let lambda = (j as f64) * (j as f64);
                    modes.push(ContinuumMode {
                        eigenvalue: lambda,
                        shape: ModeShape::CircleCos(j),
                    });
                    modes.push(ContinuumMode {
                        eigenvalue: lambda,
                        shape: ModeShape::CircleSin(j),
                    });
                    j += 1;
                }
                modes.truncate(k);
                modes
            }
            Manifold::FlatTorus => {
                // enumerate lattice representatives until we have enough modes
                let mut reps: Vec<(i32, i32)> = Vec::new();
                let mut radius = 1i32;
                loop {
                    reps.clear();
                    for kk in -radius..=radius {
                        for ll in -radius..=radius {
                            if kk > 0 || (kk == 0 && ll > 0) {
                                reps.push((kk, ll));
                            }
                        }
                    }
                    // each representative yields two modes (cos, sin); +1 for the constant;
                    // only reps with k^2+l^2 <= radius^2 are guaranteed complete shells
                    let complete = reps
                        .iter()
                        .filter(|(a, b)| a * a + b * b <= radius * radius)
                        .count();
                    if 1 + 2 * complete >= k {
                        break;
                    }
                    radius += 1;
                }
                reps.retain(|(a, b)| a * a + b * b <= radius * radius);
                reps.sort_by(|a, b| {
                    let qa = a.0 * a.0 + a.1 * a.1;
                    let qb = b.0 * b.0 + b.1 * b.1;
                    qa.cmp(&qb).then(a.cmp(b))
                });
                let mut modes = vec![ContinuumMode {
                    eigenvalue: 0.0,
                    shape: ModeShape::Const,
                }];
                for (kk, ll) in reps {
                    let lambda = 2.0 * ((kk * kk + ll * ll) as f64);
                    modes.push(ContinuumMode {
                        eigenvalue: lambda,
                        shape: ModeShape::TorusCos(kk, ll),
                    });
                    modes.push(ContinuumMode {
                        eigenvalue: lambda,
                        shape: ModeShape::TorusSin(kk, ll),
                    });
                }
                modes.truncate(k);
                modes
            }
        };
        Arc::new(ContinuumSpectrum { manifold, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.modes[i].eigenvalue
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// Evaluate mode `i` at angle parameters.
    pub fn eval_param(&self, i: usize, param: &[f64]) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        match self.modes[i].shape {
            ModeShape::Const => 1.0,
            ModeShape::CircleCos(j) => s2 * (j as f64 * param[0]).cos(),
            ModeShape::CircleSin(j) => s2 * (j as f64 * param[0]).sin(),
            ModeShape::TorusCos(k, l) => {
                s2 * (k as f64 * param[0] + l as f64 * param[1]).cos()
            }
            ModeShape::TorusSin(k, l) => {
                s2 * (k as f64 * param[0] + l as f64 * param[1]).sin()
            }
        }
    }

    /// Evaluate mode `i` at an ambient point assumed on the manifold.
    pub fn eval_point(&self, i: usize, point: &[f64]) -> f64 {
        let param = self.manifold.param_from_ambient(point);
        self.eval_param(i, &param)
    }
}

/// A fixed uniform parameter grid with equal weights; the discretization of
/// gamma used for quadrature, transport maps, and continuum atomizations.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub manifold: Manifold,
    /// Cells per parameter axis.
    pub resolution: usize,
    /// Angle parameters per cell, row-major.
    params: Vec<f64>,
    /// Ambient coordinates per cell, row-major.
    points: Vec<f64>,
    pub len: usize,
}

impl QuadratureGrid {
    pub fn new(manifold: Manifold, resolution: usize) -> QuadratureGrid {
        assert!(resolution >= 2);
        let (params, points, len) = match manifold {
            Manifold::Circle => {
                let mut params = Vec::with_capacity(resolution);
                let mut points = Vec::with_capacity(2 * resolution);
                for i in 0..resolution {
                    let theta = TAU * i as f64 / resolution as f64;
                    params.push(theta);
                    points.extend(manifold.ambient_from_param(&[theta]));
                }
                (params, points, resolution)
            }
            Manifold::FlatTorus => {
                let len = resolution * resolution;
                let mut params = Vec::with_capacity(2 * len);
                let mut points = Vec::with_capacity(4 * len);
                for i in 0..resolution {
                    let u = TAU * i as f64 / resolution as f64;
                    for j in 0..resolution {
                        let v = TAU * j as f64 / resolution as f64;
                        params.push(u);
                        params.push(v);
                        points.extend(manifold.ambient_from_param(&[u, v]));
                    }
                }
                (params, points, len)
            }
        };
        QuadratureGrid {
            manifold,
            resolution,
            params,
            points,
            len,
        }
    }

    /// Mass of each cell under gamma.
    pub fn weight(&self) -> f64 {
        1.0 / self.len as f64
    }

    pub fn param(&self, i: usize) -> &[f64] {
        let d = self.manifold.param_dim();
        &self.params[i * d..(i + 1) * d]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.manifold.ambient_dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Evaluate a spectrum mode on every grid cell.
    pub fn eval_mode(&self, spectrum: &ContinuumSpectrum, mode: usize) -> Vec<f64> {
        (0..self.len)
            .map(|i| spectrum.eval_param(mode, self.param(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma_is_a_probability_measure() {
        for m in [Manifold::Circle, Manifold::FlatTorus] {
            let total = m.quadrature(|_| 1.0, 64);
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_points_lie_on_the_manifold() {
        let cloud = PointCloud::sample(Manifold::Circle, 1, 0);
        let p = cloud.point(0);
        assert_abs_diff_eq!(p[0].hypot(p[1]), 1.0, epsilon = 1e-12);

        let cloud = PointCloud::sample(Manifold::FlatTorus, 50, 3);
        for p in cloud.points() {
            assert!(cloud.manifold.embedding_residual(p) < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let a = PointCloud::sample(Manifold::FlatTorus, 5, 7);
        let b = PointCloud::sample(Manifold::FlatTorus, 5, 7);
        assert_eq!(a.coords, b.coords);

        let big = PointCloud::sample(Manifold::FlatTorus, 20, 7);
        assert_eq!(&big.coords[..a.coords.len()], &a.coords[..]);
    }

    #[test]
    fn empirical_mean_concentrates() {
        // CLT bound: the mean of n uniform points on the circle has norm
        // O(1/sqrt(n)); 0.05 is ~3 sigma at n = 10^4 (per-coordinate variance 1/2).
        let n = 10_000;
        let cloud = PointCloud::sample(Manifold::Circle, n, 1);
        let mut mean = [0.0f64; 2];
        for p in cloud.points() {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        assert!(mean[0].hypot(mean[1]) < 0.05);
    }

    #[test]
    fn geodesic_matches_known_values() {
        let m = Manifold::Circle;
        assert_abs_diff_eq!(
            m.geodesic(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(),
            PI,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(m.geodesic(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);

        // torus: parameters (0,0) and (0.5, 0.5) of the unit square, i.e.
        // angles (0,0) and (pi,pi); flat metric gives r*pi*sqrt(2) = pi
        let t = Manifold::FlatTorus;
        let x = t.ambient_from_param(&[0.0, 0.0]);
        let y = t.ambient_from_param(&[PI, PI]);
        let expect = arc_length_oracle(&t, &[0.0, 0.0], &[PI, PI]);
        let got = t.geodesic(&x, &y).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-6);
        assert_abs_diff_eq!(got, PI, epsilon = 1e-12);
    }

    /// Independent oracle: integrate the speed of the straight parameter
    /// path through the embedding.
    fn arc_length_oracle(m: &Manifold, a: &[f64], b: &[f64]) -> f64 {
        let steps = 200_000;
        let mut len = 0.0;
        let mut prev = m.ambient_from_param(a);
        for s in 1..=steps {
            let t = s as f64 / steps as f64;
            let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
            let cur = m.ambient_from_param(&p);
            len += prev
                .iter()
                .zip(&cur)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            prev = cur;
        }
        len
    }

    #[test]
    fn geodesic_rejects_off_manifold_points() {
        let m = Manifold::Circle;
        assert!(matches!(
            m.geodesic(&[1.1, 0.0], &[1.0, 0.0]),
            Err(Error::OffManifold { .. })
        ));
    }

    #[test]
    fn geodesic_dominates_chordal() {
        let m = Manifold::FlatTorus;
        let cloud = PointCloud::sample(m, 40, 11);
        for i in 0..cloud.n {
            for j in 0..cloud.n {
                let g = m.geodesic_unchecked(cloud.point(i), cloud.point(j));
                let c = m.chordal(cloud.point(i), cloud.point(j));
                assert!(g >= c - 1e-12);
                if i != j {
                    assert!(g > 0.0);
                }
            }
        }
    }

    #[test]
    fn geodesic_is_a_metric_on_random_triples() {
        for m in [Manifold::Circle, Manifold::FlatTorus] {
            let cloud = PointCloud::sample(m, 30, 5);
            for t in 0..10 {
                let (a, b, c) = (
                    cloud.point(3 * t),
                    cloud.point(3 * t + 1),
                    cloud.point(3 * t + 2),
                );
                let ab = m.geodesic_unchecked(a, b);
                let ba = m.geodesic_unchecked(b, a);
                let ac = m.geodesic_unchecked(a, c);
                let cb = m.geodesic_unchecked(c, b);
                assert_abs_diff_eq!(ab, ba, epsilon = 1e-14);
                assert!(ab <= ac + cb + 1e-12);
            }
        }
    }

    #[test]
    fn circle_spectrum_first_modes() {
        let spec = ContinuumSpectrum::new(Manifold::Circle, 3);
        assert_eq!(spec.eigenvalues(), vec![0.0, 1.0, 1.0]);
        assert_eq!(spec.modes[1].shape, ModeShape::CircleCos(1));
        assert_eq!(spec.modes[2].shape, ModeShape::CircleSin(1));
        // finite-difference check of psi'' = -lambda psi at assorted angles
        let h = 1e-5;
        for i in 0..3 {
            for &theta in &[0.3, 1.1, 2.9, 5.0] {
                let f = |t: f64| spec.eval_param(i, &[t]);
                let second = (f(theta + h) - 2.0 * f(theta) + f(theta - h)) / (h * h);
                assert_abs_diff_eq!(
                    second,
                    -spec.eigenvalue(i) * f(theta),
                    epsilon = 1e-4
                );
            }
        }
    }

    #[test]
    fn torus_spectrum_constant_mode_and_eigenrelation() {
        let spec = ContinuumSpectrum::new(Manifold::FlatTorus, 9);
        assert_eq!(spec.eigenvalue(0), 0.0);
        assert_eq!(spec.modes[0].shape, ModeShape::Const);
        // four modes at lambda = 2, then lambda = 4
        assert_eq!(spec.eigenvalues()[1..5], [2.0, 2.0, 2.0, 2.0]);
        assert_eq!(spec.eigenvalues()[5..9], [4.0, 4.0, 4.0, 4.0]);
        // -Delta = -2(d^2/du^2 + d^2/dv^2) on the scaled torus
        let h = 1e-5;
        for i in [1, 4, 6, 8] {
            let (u, v) = (0.7, 2.3);
            let f = |a: f64, b: f64| spec.eval_param(i, &[a, b]);
            let duu = (f(u + h, v) - 2.0 * f(u, v) + f(u - h, v)) / (h * h);
            let dvv = (f(u, v + h) - 2.0 * f(u, v) + f(u, v - h)) / (h * h);
            assert_abs_diff_eq!(
                -2.0 * (duu + dvv),
                spec.eigenvalue(i) * f(u, v),
                epsilon = 1e-3
            );
        }
    }

    #[test]
    fn spectrum_is_orthonormal_under_quadrature() {
        let k = 7;
        for m in [Manifold::Circle, Manifold::FlatTorus] {
            let spec = ContinuumSpectrum::new(m, k);
            let res = if m == Manifold::Circle { 64 * k } else { 128 };
            for i in 0..k {
                for j in i..k {
                    let ip = m.quadrature(
                        |p| spec.eval_point(i, p) * spec.eval_point(j, p),
                        res,
                    );
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(ip, expect, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn quadrature_of_low_modes_is_machine_precise() {
        let m = Manifold::Circle;
        assert_abs_diff_eq!(m.quadrature(|_| 2.5, 16), 2.5, epsilon = 1e-12);
        let spec = ContinuumSpectrum::new(m, 2);
        assert_abs_diff_eq!(
            m.quadrature(|p| spec.eval_point(1, p), 128),
            0.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            m.quadrature(|p| spec.eval_point(1, p).powi(2), 128),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn cloud_json_round_trip() {
        let cloud = PointCloud::sample(Manifold::FlatTorus, 6, 9);
        let v = cloud.to_json();
        let back = PointCloud::from_json(&v).unwrap();
        assert_eq!(back.id(), cloud.id());
        assert_eq!(back.coords, cloud.coords);
    }
}

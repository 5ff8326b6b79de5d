//! Gaussian measures over functions, represented in a spectral basis.
//!
//! Both tracks share one representation: a reference basis (continuum
//! eigenfunctions or graph Laplacian eigenvectors), per-mode means, and
//! per-mode standard deviations. Priors use `std_i = (alpha + lambda_i)^{-s/4}`,
//! i.e. covariance `(alpha I + L)^{-s/2}` where `L` is minus the Laplacian
//! (continuum) or the graph Laplacian; the exponent convention matches the
//! Karhunen–Loeve coupling `X = sum (alpha + lambda_i)^{-s/4} xi_i psi_i`
//! used throughout for coupled sampling.
//!
//! Continuum measures are truncated at a working mode count with an analytic
//! bound on the discarded spectral tail attached as metadata.

use crate::error::{Error, Result};
use crate::graph::{eigenvalue_clusters, GraphSpectrum};
use crate::manifold::{ContinuumSpectrum, Manifold, PointCloud, QuadratureGrid};
use crate::rng;
use crate::transport::{Tl2Point, Tl2Repr};
use nalgebra::DMatrix;
use serde::Serialize;
use std::sync::Arc;

/// A function on the cloud: a vector of values, one per point, under the
/// empirical measure.
#[derive(Debug, Clone)]
pub struct FunctionOnCloud {
    pub cloud: Arc<PointCloud>,
    pub values: Vec<f64>,
}

impl FunctionOnCloud {
    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.cloud.n as f64).sqrt()
    }

    pub fn inner(&self, other: &FunctionOnCloud) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.cloud.n as f64
    }
}

/// A function on the manifold, stored as coefficients in a continuum
/// spectrum; Parseval makes the coefficient norm the `L^2(gamma)` norm.
#[derive(Debug, Clone)]
pub struct FunctionOnManifold {
    pub spectrum: Arc<ContinuumSpectrum>,
    pub coeffs: Vec<f64>,
}

impl FunctionOnManifold {
    pub fn norm_l2(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn eval_param(&self, param: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.spectrum.eval_param(i, param))
            .sum()
    }

    pub fn eval_point(&self, point: &[f64]) -> f64 {
        let param = self.spectrum.manifold.param_from_ambient(point);
        self.eval_param(&param)
    }

    pub fn values_on_grid(&self, grid: &QuadratureGrid) -> Vec<f64> {
        (0..grid.len).map(|g| self.eval_param(grid.param(g))).collect()
    }
}

/// Identity of a spectral basis; measures on mismatched bases cannot be
/// compared mode by mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisId {
    pub kind: &'static str,
    pub manifold: String,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub k: usize,
    pub aligned: bool,
}

/// The shared language of priors, forward maps, and projections: an ordered
/// orthonormal eigensystem, either continuum or graph.
#[derive(Clone)]
pub enum SpectralBasis {
    Continuum(Arc<ContinuumSpectrum>),
    Graph(Arc<GraphSpectrum>),
}

impl std::fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.id())
    }
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        match self {
            SpectralBasis::Continuum(s) => s.len(),
            SpectralBasis::Graph(s) => s.k(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        match self {
            SpectralBasis::Continuum(s) => s.eigenvalue(i),
            SpectralBasis::Graph(s) => s.eigenvalues[i],
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.eigenvalue(i)).collect()
    }

    pub fn manifold(&self) -> Manifold {
        match self {
            SpectralBasis::Continuum(s) => s.manifold,
            SpectralBasis::Graph(s) => s.cloud.manifold,
        }
    }

    pub fn id(&self) -> BasisId {
        match self {
            SpectralBasis::Continuum(s) => BasisId {
                kind: "continuum",
                manifold: s.manifold.to_string(),
                n: None,
                seed: None,
                k: s.len(),
                aligned: false,
            },
            SpectralBasis::Graph(s) => BasisId {
                kind: "graph",
                manifold: s.cloud.manifold.to_string(),
                n: Some(s.cloud.n),
                seed: Some(s.cloud.seed),
                k: s.k(),
                aligned: s.aligned,
            },
        }
    }

    /// Wrap expansion coefficients as a TL2 point on the basis's measure.
    pub fn function_from_coeffs(&self, coeffs: Vec<f64>) -> Tl2Point {
        match self {
            SpectralBasis::Continuum(s) => Tl2Point {
                manifold: s.manifold,
                repr: Tl2Repr::Continuum(FunctionOnManifold {
                    spectrum: Arc::clone(s),
                    coeffs,
                }),
            },
            SpectralBasis::Graph(s) => Tl2Point {
                manifold: s.cloud.manifold,
                repr: Tl2Repr::Cloud(FunctionOnCloud {
                    cloud: Arc::clone(&s.cloud),
                    values: s.synthesize(&coeffs),
                }),
            },
        }
    }
}

/// A measure over functions that can be sampled through a vector of standard
/// normals; sharing that vector across two measures is the coupling used for
/// all TL2 distance estimates.
pub trait FunctionMeasure: Sync {
    fn basis(&self) -> &SpectralBasis;
    fn xi_len(&self) -> usize;
    fn coeffs_from_xi(&self, xi: &[f64]) -> Vec<f64>;
    fn sample_tl2(&self, xi: &[f64]) -> Tl2Point {
        self.basis().function_from_coeffs(self.coeffs_from_xi(xi))
    }
}

/// Gaussian measure with diagonal covariance in its basis.
#[derive(Debug, Clone)]
pub struct DiagonalGaussianMeasure {
    pub basis: SpectralBasis,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Upper bound on `sum_{i > k} (alpha + lambda_i)^{-s/2}`, the variance
    /// mass of the discarded tail (zero for full graph spectra).
    pub tail_bound: f64,
}

impl DiagonalGaussianMeasure {
    pub fn truncation(&self) -> usize {
        self.means.len()
    }

    pub fn same_basis(&self, other: &DiagonalGaussianMeasure) -> bool {
        self.basis.id() == other.basis.id() && self.truncation() == other.truncation()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "basis_ref": self.basis.id(),
            "means": self.means,
            "stds": self.stds,
            "truncation": self.truncation(),
            "tail_bound": self.tail_bound,
        })
    }
}

impl FunctionMeasure for DiagonalGaussianMeasure {
    fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    fn xi_len(&self) -> usize {
        self.truncation()
    }

    fn coeffs_from_xi(&self, xi: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.stds)
            .zip(xi)
            .map(|((m, s), x)| m + s * x)
            .collect()
    }
}

/// The Gaussian prior `N(0, (alpha I + L)^{-s/2})` truncated to the first
/// `k` basis modes: `std_i = (alpha + lambda_i)^{-s/4}`.
pub fn gaussian_prior(
    basis: SpectralBasis,
    alpha: f64,
    s: f64,
    k: usize,
) -> Result<DiagonalGaussianMeasure> {
    let m = basis.manifold().intrinsic_dim() as f64;
    if s <= m {
        return Err(Error::InvalidArgument(format!(
            "prior regularity s = {s} must exceed the intrinsic dimension m = {m}"
        )));
    }
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be nonnegative")));
    }
    if k == 0 || k > basis.len() {
        return Err(Error::InvalidArgument(format!(
            "truncation k = {k} must lie in 1..={}",
            basis.len()
        )));
    }
    let mut stds = Vec::with_capacity(k);
    for i in 0..k {
        let shifted = alpha + basis.eigenvalue(i);
        if shifted <= 0.0 {
            return Err(Error::DegenerateCovariance(format!(
                "mode {i} has alpha + lambda = {shifted}; the prior needs alpha > 0 when the \
                 basis contains a zero eigenvalue"
            )));
        }
        stds.push(shifted.powf(-s / 4.0));
    }
    let tail_bound = match &basis {
        SpectralBasis::Continuum(spec) => prior_tail_bound(spec.manifold, alpha, s, k),
        SpectralBasis::Graph(spec) => {
            // exact over the stored modes; a graph has finitely many
            let stored: f64 = (k..spec.k())
                .map(|i| (alpha + spec.eigenvalues[i]).powf(-s / 2.0))
                .sum();
            let missing = spec.n().saturating_sub(spec.k());
            let lam_max = spec.eigenvalues.last().copied().unwrap_or(0.0);
            stored + missing as f64 * (alpha + lam_max).powf(-s / 2.0)
        }
    };
    Ok(DiagonalGaussianMeasure {
        basis,
        means: vec![0.0; k],
        stds,
        tail_bound,
    })
}

/// Upper bound on the continuum spectral tail
/// `sum_{i > k} (alpha + lambda_i)^{-s/2}`, via eigenvalue lower bounds and
/// an integral comparison for the far tail.
pub fn prior_tail_bound(manifold: Manifold, alpha: f64, s: f64, k: usize) -> f64 {
    let mut acc = 0.0;
    let mut i = k + 1;
    // sum lower-bounded terms until they are negligible or the closed-form
    // remainder is tiny relative to the accumulated mass
    let max_terms = 2_000_000usize;
    let start = i;
    while i < start + max_terms {
        let term = (alpha + manifold.eigenvalue_lower_bound(i)).powf(-s / 2.0);
        acc += term;
        if term < 1e-18 * acc.max(1e-300) && i > start + 64 {
            break;
        }
        i += 1;
    }
    // integral remainder beyond index i
    let remainder = match manifold {
        // term(t) <= ((t-1)/2)^{-s}
        Manifold::Circle => {
            let u = (i as f64 - 1.0) / 2.0;
            2.0 * u.powf(1.0 - s) / (s - 1.0)
        }
        // term(t) <= 2^{-s/2} (sqrt(t/pi) - 1/sqrt 2)^{-s}; s > 2 for m = 2
        Manifold::FlatTorus => {
            let c = std::f64::consts::FRAC_1_SQRT_2;
            let w = (i as f64 / std::f64::consts::PI).sqrt() - c;
            let two: f64 = 2.0;
            two.powf(-s / 2.0)
                * 2.0
                * std::f64::consts::PI
                * (w.powf(2.0 - s) / (s - 2.0) + c * w.powf(1.0 - s) / (s - 1.0))
        }
    };
    acc + remainder.max(0.0)
}

/// Smallest truncation whose tail bound is below `tol`, rounded up so it
/// does not split an eigenvalue cluster.
pub fn continuum_truncation(manifold: Manifold, alpha: f64, s: f64, tol: f64) -> usize {
    let mut k = 4usize;
    while prior_tail_bound(manifold, alpha, s, k) >= tol {
        k = k * 3 / 2 + 1;
        if k > 1_000_000 {
            break;
        }
    }
    // refine downward to the smallest admissible k
    let mut lo = 1usize;
    let mut hi = k;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if prior_tail_bound(manifold, alpha, s, mid) < tol {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let k = lo;
    // extend to the end of the cluster containing mode k
    let spec = ContinuumSpectrum::new(manifold, k + 8);
    let eigs = spec.eigenvalues();
    for (s0, e0) in eigenvalue_clusters(&eigs, 1e-6) {
        if k > s0 && k < e0 {
            return e0;
        }
    }
    k
}

/// Draw one sample; deterministic per seed.
pub fn sample_measure(mu: &dyn FunctionMeasure, seed: u64) -> Tl2Point {
    let mut r = rng::stream(seed, "measure-sample", &[]);
    let xi = rng::standard_normals(&mut r, mu.xi_len());
    mu.sample_tl2(&xi)
}

/// Draw a coupled pair reusing identical normals for both measures.
pub fn sample_coupled(
    mu_n: &dyn FunctionMeasure,
    mu: &dyn FunctionMeasure,
    seed: u64,
) -> (Tl2Point, Tl2Point) {
    let mut r = rng::stream(seed, "measure-sample", &[]);
    let xi = rng::standard_normals(&mut r, mu_n.xi_len().max(mu.xi_len()));
    (mu_n.sample_tl2(&xi), mu.sample_tl2(&xi))
}

/// Kullback–Leibler divergence between diagonal Gaussians on the same basis:
/// `1/2 sum_i [ s_nu^2/s_pi^2 - 1 - log(s_nu^2/s_pi^2) + (m_nu - m_pi)^2 / s_pi^2 ]`.
///
/// Infinite when `nu` charges a mode where `pi` is degenerate, and also when
/// `nu` is degenerate on a mode where `pi` is not (a point mass is not
/// absolutely continuous with respect to a nondegenerate Gaussian; the 1-d
/// closed form diverges through its log term).
pub fn kl_divergence(
    nu: &DiagonalGaussianMeasure,
    pi: &DiagonalGaussianMeasure,
) -> Result<f64> {
    if !nu.same_basis(pi) {
        return Err(Error::BasisMismatch(format!(
            "KL needs a common basis and truncation: {:?} vs {:?}",
            nu.basis.id(),
            pi.basis.id()
        )));
    }
    let mut acc = 0.0;
    for i in 0..nu.truncation() {
        let (mv, sv) = (nu.means[i], nu.stds[i]);
        let (mp, sp) = (pi.means[i], pi.stds[i]);
        if sp == 0.0 {
            if sv == 0.0 && mv == mp {
                continue;
            }
            return Ok(f64::INFINITY);
        }
        if sv == 0.0 {
            return Ok(f64::INFINITY);
        }
        let r = (sv / sp) * (sv / sp);
        acc += r - 1.0 - r.ln() + ((mv - mp) / sp).powi(2);
    }
    Ok(0.5 * acc)
}

/// Closed-form Wasserstein-2 distance between diagonal Gaussians on a shared
/// basis: `sqrt( |m1 - m2|^2 + |s1 - s2|^2 )`.
pub fn wasserstein2_gaussian(
    a: &DiagonalGaussianMeasure,
    b: &DiagonalGaussianMeasure,
) -> Result<f64> {
    if !a.same_basis(b) {
        return Err(Error::BasisMismatch(
            "W2 closed form needs a shared basis".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..a.truncation() {
        acc += (a.means[i] - b.means[i]).powi(2) + (a.stds[i] - b.stds[i]).powi(2);
    }
    Ok(acc.sqrt())
}

/// The linear-Gaussian data model `y = G u + eta`, `eta ~ N(0, sigma^2 I)`,
/// with `G` acting on basis coefficients.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    /// p-by-k observation-forward matrix.
    pub g: DMatrix<f64>,
    pub y: Vec<f64>,
    pub sigma_noise: f64,
}

impl LinearGaussianModel {
    /// `phi(u; y) = |y - G u|^2 / (2 sigma^2)`.
    pub fn potential(&self, coeffs: &[f64]) -> f64 {
        let p = self.g.nrows();
        let mut acc = 0.0;
        for j in 0..p {
            let mut pred = 0.0;
            for i in 0..self.g.ncols().min(coeffs.len()) {
                pred += self.g[(j, i)] * coeffs[i];
            }
            acc += (self.y[j] - pred).powi(2);
        }
        acc / (2.0 * self.sigma_noise * self.sigma_noise)
    }
}

/// A Gaussian argument for the variational functional: diagonal or with a
/// dense covariance (the conjugate posterior).
pub enum GaussianMeasureRef<'a> {
    Diagonal(&'a DiagonalGaussianMeasure),
    Dense(&'a crate::inversion::PosteriorGaussian),
}

/// The functional `J(nu) = KL(nu || prior) + E_nu[ phi(u; y) ]`, evaluated
/// exactly for Gaussian noise and linear forward map (both terms in closed
/// form; no Monte-Carlo error). The posterior is its unique minimizer.
pub fn j_functional_exact(
    nu: GaussianMeasureRef,
    prior: &DiagonalGaussianMeasure,
    model: &LinearGaussianModel,
) -> Result<f64> {
    let k = prior.truncation();
    let sigma2 = model.sigma_noise * model.sigma_noise;
    match nu {
        GaussianMeasureRef::Diagonal(nu) => {
            let kl = kl_divergence(nu, prior)?;
            if !kl.is_finite() {
                return Ok(f64::INFINITY);
            }
            let resid2 = residual_norm2(&model.g, &model.y, &nu.means);
            let mut var_term = 0.0;
            for j in 0..model.g.nrows() {
                for i in 0..k {
                    var_term += (model.g[(j, i)] * nu.stds[i]).powi(2);
                }
            }
            Ok(kl + (resid2 + var_term) / (2.0 * sigma2))
        }
        GaussianMeasureRef::Dense(post) => {
            if post.basis.id() != prior.basis.id() || post.mean.len() != k {
                return Err(Error::BasisMismatch(
                    "J needs the posterior on the prior's basis".into(),
                ));
            }
            let cov = post.covariance();
            // KL(N(m, S) || N(0, C)) with diagonal C
            let mut trace_term = 0.0;
            let mut mean_term = 0.0;
            let mut logdet_c = 0.0;
            for i in 0..k {
                let c = prior.stds[i] * prior.stds[i];
                trace_term += cov[(i, i)] / c;
                mean_term += post.mean[i] * post.mean[i] / c;
                logdet_c += c.ln();
            }
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("posterior covariance not PD".into()))?;
            let logdet_s: f64 = (0..k).map(|i| chol.l()[(i, i)].ln() * 2.0).sum();
            let kl = 0.5 * (trace_term + mean_term - k as f64 - logdet_s + logdet_c);
            let resid2 = residual_norm2(&model.g, &model.y, &post.mean);
            // E|y - G u|^2 = |y - G m|^2 + tr(G S G^T)
            let mut var_term = 0.0;
            for j in 0..model.g.nrows() {
                let row = model.g.row(j);
                let mut gs = vec![0.0; k];
                for b in 0..k {
                    let mut acc = 0.0;
                    for a in 0..k {
                        acc += row[a] * cov[(a, b)];
                    }
                    gs[b] = acc;
                }
                var_term += gs.iter().zip(row.iter()).map(|(x, y)| x * y).sum::<f64>();
            }
            Ok(kl + (resid2 + var_term) / (2.0 * sigma2))
        }
    }
}

fn residual_norm2(g: &DMatrix<f64>, y: &[f64], mean: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..g.nrows() {
        let mut pred = 0.0;
        for i in 0..g.ncols().min(mean.len()) {
            pred += g[(j, i)] * mean[i];
        }
        acc += (y[j] - pred).powi(2);
    }
    acc
}

/// Monte-Carlo evaluation of `J` for a general potential: the KL term is
/// closed-form, the integral term averaged over `n_mc` draws. Returns the
/// value and the standard error of the integral term.
pub fn j_functional_mc<F: Fn(&[f64]) -> f64 + Sync>(
    nu: &DiagonalGaussianMeasure,
    prior: &DiagonalGaussianMeasure,
    potential: F,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    let kl = kl_divergence(nu, prior)?;
    let vals: Vec<f64> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "j-mc", &[i]);
            let xi = rng::standard_normals(&mut r, nu.xi_len());
            potential(&nu.coeffs_from_xi(&xi))
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n_mc as f64;
    let var = if n_mc > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_mc as f64 - 1.0)
    } else {
        0.0
    };
    Ok((kl + mean, (var / n_mc as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, graph_spectrum};
    use approx::assert_abs_diff_eq;

    fn circle_basis(k: usize) -> SpectralBasis {
        SpectralBasis::Continuum(ContinuumSpectrum::new(Manifold::Circle, k))
    }

    #[test]
    fn prior_std_formula() {
        let prior = gaussian_prior(circle_basis(3), 1.0, 4.0, 3).unwrap();
        assert_eq!(prior.means, vec![0.0; 3]);
        assert_abs_diff_eq!(prior.stds[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(prior.stds[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(prior.stds[2], 0.5, epsilon = 1e-14);
        // stds strictly decreasing in lambda for s > 0
        let prior9 = gaussian_prior(circle_basis(9), 1.0, 4.0, 9).unwrap();
        for w in [1usize, 3, 5] {
            assert!(prior9.stds[w + 2] < prior9.stds[w]);
        }
    }

    #[test]
    fn degenerate_prior_is_rejected() {
        let err = gaussian_prior(circle_basis(3), 0.0, 4.0, 3);
        assert!(matches!(err, Err(Error::DegenerateCovariance(_))));
        // s <= m is invalid
        assert!(gaussian_prior(circle_basis(3), 1.0, 0.9, 3).is_err());
    }

    #[test]
    fn std_ratio_decreases_with_s() {
        let mut prev = 1.0;
        for s in [2.0, 4.0, 8.0, 16.0] {
            let p = gaussian_prior(circle_basis(2), 1.0, s, 2).unwrap();
            let ratio = p.stds[1] / p.stds[0];
            assert!(ratio < prev);
            prev = ratio;
        }
    }

    #[test]
    fn tail_bound_dominates_true_tail() {
        for (m, s) in [(Manifold::Circle, 4.0), (Manifold::FlatTorus, 6.0)] {
            let k = 12;
            let bound = prior_tail_bound(m, 1.0, s, k);
            // true tail summed far out using exact eigenvalues
            let spec = ContinuumSpectrum::new(m, 4000);
            let truth: f64 = (k..4000)
                .map(|i| (1.0 + spec.eigenvalue(i)).powf(-s / 2.0))
                .sum();
            assert!(bound >= truth);
            assert!(bound < 50.0 * truth + 1e-12); // not absurdly loose
        }
    }

    #[test]
    fn truncation_meets_tolerance_and_cluster_boundary() {
        let k = continuum_truncation(Manifold::Circle, 1.0, 4.0, 1e-6);
        assert!(prior_tail_bound(Manifold::Circle, 1.0, 4.0, k) < 1e-6);
        // circle clusters have size 2 beyond the constant: k must be odd
        assert_eq!(k % 2, 1);
    }

    #[test]
    fn deterministic_sampling_and_zero_variance_mean() {
        let basis = circle_basis(5);
        let mut mu = gaussian_prior(basis, 1.0, 4.0, 5).unwrap();
        mu.means = vec![0.3, -1.0, 0.0, 2.0, 0.1];
        let a = sample_measure(&mu, 11);
        let b = sample_measure(&mu, 11);
        match (&a.repr, &b.repr) {
            (Tl2Repr::Continuum(fa), Tl2Repr::Continuum(fb)) => {
                assert_eq!(fa.coeffs, fb.coeffs);
            }
            _ => panic!("expected continuum functions"),
        }
        mu.stds = vec![0.0; 5];
        let det = sample_measure(&mu, 7);
        match det.repr {
            Tl2Repr::Continuum(f) => assert_eq!(f.coeffs, mu.means),
            _ => panic!(),
        }
    }

    #[test]
    fn coupled_sampling_shares_coefficients() {
        let mu = gaussian_prior(circle_basis(6), 1.0, 4.0, 6).unwrap();
        let (a, b) = sample_coupled(&mu, &mu.clone(), 3);
        match (a.repr, b.repr) {
            (Tl2Repr::Continuum(fa), Tl2Repr::Continuum(fb)) => assert_eq!(fa.coeffs, fb.coeffs),
            _ => panic!(),
        }
    }

    #[test]
    fn sample_variance_matches_mode_stds() {
        // Monte-Carlo oracle: empirical variance of each coefficient over
        // many draws stays within 5% of sigma_i^2 (chi-square concentration)
        let mu = gaussian_prior(circle_basis(4), 1.0, 4.0, 4).unwrap();
        let n = 10_000;
        let mut acc = vec![0.0f64; 4];
        let mut acc2 = vec![0.0f64; 4];
        for d in 0..n {
            let mut r = rng::stream(99, "var-test", &[d]);
            let xi = rng::standard_normals(&mut r, 4);
            let c = mu.coeffs_from_xi(&xi);
            for i in 0..4 {
                acc[i] += c[i];
                acc2[i] += c[i] * c[i];
            }
        }
        for i in 0..4 {
            let mean = acc[i] / n as f64;
            let var = acc2[i] / n as f64 - mean * mean;
            let target = mu.stds[i] * mu.stds[i];
            assert!(
                (var / target - 1.0).abs() < 0.05,
                "mode {i}: {var} vs {target}"
            );
        }
    }

    #[test]
    fn kl_identity_and_quadratic_shift() {
        let pi = gaussian_prior(circle_basis(4), 1.0, 4.0, 4).unwrap();
        assert_eq!(kl_divergence(&pi, &pi).unwrap(), 0.0);
        let mut nu = pi.clone();
        nu.stds = pi.stds.clone();
        nu.means[0] = 0.7; // unit-variance mode 0 (std = 1)
        assert_abs_diff_eq!(
            kl_divergence(&nu, &pi).unwrap(),
            0.7 * 0.7 / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn kl_degenerate_nu_matches_one_dim_closed_form() {
        // independent 1-d oracle
        fn kl_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
            if s1 == 0.0 {
                // point mass vs a nondegenerate Gaussian: the log term diverges
                return f64::INFINITY;
            }
            let r = (s1 / s2) * (s1 / s2);
            0.5 * (r - 1.0 - r.ln() + ((m1 - m2) / s2).powi(2))
        }
        let pi = gaussian_prior(circle_basis(1), 1.0, 4.0, 1).unwrap();
        let mut nu = pi.clone();
        nu.stds[0] = 0.0;
        nu.means[0] = 0.2;
        let ours = kl_divergence(&nu, &pi).unwrap();
        let oracle = kl_1d(0.2, 0.0, 0.0, 1.0);
        assert_eq!(ours, oracle);
        assert!(ours.is_infinite());
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut r = rng::stream(5, "kl-pairs", &[]);
        for _ in 0..40 {
            let base = gaussian_prior(circle_basis(5), 1.0, 4.0, 5).unwrap();
            let mut nu = base.clone();
            let mut pi = base.clone();
            let xs = rng::standard_normals(&mut r, 20);
            for i in 0..5 {
                nu.means[i] = 0.4 * xs[i];
                nu.stds[i] = (0.5 + 0.2 * xs[5 + i].abs()).max(0.05);
                pi.means[i] = 0.4 * xs[10 + i];
                pi.stds[i] = (0.5 + 0.2 * xs[15 + i].abs()).max(0.05);
            }
            let kl = kl_divergence(&nu, &pi).unwrap();
            assert!(kl >= 0.0);
            let equal = nu.means == pi.means && nu.stds == pi.stds;
            assert_eq!(kl == 0.0, equal);
        }
    }

    #[test]
    fn kl_invariant_under_mode_reindexing() {
        // permuting modes together leaves KL unchanged
        let base = gaussian_prior(circle_basis(4), 1.0, 4.0, 4).unwrap();
        let mut nu = base.clone();
        nu.means = vec![0.1, -0.4, 0.6, 0.0];
        nu.stds = vec![0.9, 0.5, 0.4, 0.3];
        let kl = kl_divergence(&nu, &base).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut nu_p = base.clone();
        let mut pi_p = base.clone();
        for (dst, &src) in perm.iter().enumerate() {
            nu_p.means[dst] = nu.means[src];
            nu_p.stds[dst] = nu.stds[src];
            pi_p.means[dst] = base.means[src];
            pi_p.stds[dst] = base.stds[src];
        }
        let kl_p = kl_divergence(&nu_p, &pi_p).unwrap();
        assert_abs_diff_eq!(kl, kl_p, epsilon = 1e-12);
    }

    #[test]
    fn kl_rejects_basis_mismatch() {
        let a = gaussian_prior(circle_basis(4), 1.0, 4.0, 4).unwrap();
        let b = gaussian_prior(circle_basis(5), 1.0, 4.0, 5).unwrap();
        assert!(matches!(kl_divergence(&a, &b), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn w2_translation_and_coupled_oracle() {
        let pi = gaussian_prior(circle_basis(3), 1.0, 4.0, 3).unwrap();
        assert_eq!(wasserstein2_gaussian(&pi, &pi).unwrap(), 0.0);
        let mut nu = pi.clone();
        nu.means[1] += 0.8;
        assert_abs_diff_eq!(wasserstein2_gaussian(&nu, &pi).unwrap(), 0.8, epsilon = 1e-14);

        // sample-based check: the comonotone coupling realizes the optimum
        // for diagonal Gaussians on a shared basis
        let mut nu2 = pi.clone();
        nu2.means = vec![0.3, -0.2, 0.5];
        nu2.stds = vec![0.7, 0.9, 0.2];
        let closed = wasserstein2_gaussian(&nu2, &pi).unwrap();
        let n = 1000;
        let mut acc = 0.0;
        for d in 0..n {
            let mut r = rng::stream(4, "w2-oracle", &[d]);
            let xi = rng::standard_normals(&mut r, 3);
            let a = nu2.coeffs_from_xi(&xi);
            let b = pi.coeffs_from_xi(&xi);
            acc += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        let emp = (acc / n as f64).sqrt();
        assert!((emp - closed).abs() < 0.05 * closed.max(0.1));
    }

    #[test]
    fn parseval_norm_matches_quadrature() {
        let spec = ContinuumSpectrum::new(Manifold::Circle, 5);
        let f = FunctionOnManifold {
            spectrum: Arc::clone(&spec),
            coeffs: vec![0.5, -1.0, 0.25, 0.0, 2.0],
        };
        let by_coeffs = f.norm_l2();
        let by_quad = Manifold::Circle
            .quadrature(|p| f.eval_point(p).powi(2), 512)
            .sqrt();
        assert_abs_diff_eq!(by_coeffs, by_quad, epsilon = 1e-10);
    }

    #[test]
    fn graph_basis_prior_has_zero_tail_at_full_truncation() {
        let cloud = Arc::new(PointCloud::sample(Manifold::Circle, 40, 1));
        let g = Arc::new(build_graph(cloud, 0.8).unwrap());
        let spec = Arc::new(graph_spectrum(&g.laplacian(), 40).unwrap());
        let prior = gaussian_prior(SpectralBasis::Graph(spec), 1.0, 4.0, 40).unwrap();
        assert_eq!(prior.tail_bound, 0.0);
    }

    #[test]
    fn j_mc_agrees_with_exact_for_linear_gaussian() {
        let prior = gaussian_prior(circle_basis(3), 1.0, 4.0, 3).unwrap();
        let g = DMatrix::from_row_slice(2, 3, &[0.5, 0.2, 0.0, -0.3, 0.1, 0.4]);
        let model = LinearGaussianModel {
            g: g.clone(),
            y: vec![0.4, -0.1],
            sigma_noise: 0.3,
        };
        let mut nu = prior.clone();
        nu.means = vec![0.2, 0.1, -0.3];
        let exact = j_functional_exact(GaussianMeasureRef::Diagonal(&nu), &prior, &model).unwrap();
        let (mc, se) = j_functional_mc(&nu, &prior, |c| model.potential(c), 4000, 17).unwrap();
        assert!((mc - exact).abs() < 4.0 * se + 1e-9, "{mc} vs {exact} (se {se})");
        // phi == 0 reduces J to the KL term
        let (only_kl, _) = j_functional_mc(&nu, &prior, |_| 0.0, 10, 3).unwrap();
        assert_abs_diff_eq!(only_kl, kl_divergence(&nu, &prior).unwrap(), epsilon = 1e-12);
    }
}

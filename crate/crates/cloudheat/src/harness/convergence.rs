//! The convergence sweep: for each seed and each cloud size, run the whole
//! pipeline (cloud, graph, spectrum, alignment, transport map, coupled prior
//! and posterior distances, forward and observation discrepancies) and
//! collect a report.
//!
//! Clouds of different sizes within one seed are prefixes of a single master
//! sample, so the observation centers (the first p points) and the synthetic
//! data vector are literally shared across the grid. Per-row failures are
//! recorded in the row's status and do not abort the sweep.

use super::config::ExperimentConfig;
use super::report::{
    aggregate_medians, fit_all_slopes, ConvergenceReport, RowDiagnostics, TimingEntry,
    REPORT_SCHEMA_VERSION,
};
use crate::error::Result;
use crate::graph::{
    align_spectrum, build_graph, cluster_boundary, graph_spectrum, GraphSpectrum,
    DENSE_EIGEN_LIMIT,
};
use crate::inversion::{
    conjugate_posterior, forward_heat_coeffs, forward_observation_matrix, observation_matrix_cloud,
    observation_matrix_manifold, observe_cloud, observe_manifold, synthesize_data, DataVector,
    NoiseModel, ObservationSetup, PosteriorGaussian,
};
use crate::manifold::{ContinuumSpectrum, PointCloud, QuadratureGrid};
use crate::measures::{
    continuum_truncation, gaussian_prior, DiagonalGaussianMeasure, FunctionMeasure,
    FunctionOnCloud, FunctionOnManifold, SpectralBasis,
};
use crate::rng;
use crate::transport::{transport_map, GridEvaluator, TransportMap};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;

/// Fixed test function for forward/observation stability: `psi_2 + 1/2 psi_4`.
fn fixed_test_coeffs(k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    if k > 1 {
        c[1] = 1.0;
    }
    if k > 3 {
        c[3] = 0.5;
    }
    c
}

/// Everything shared by the rows of one seed.
struct SeedContext {
    seed: u64,
    master: Arc<PointCloud>,
    setup: ObservationSetup,
    data: DataVector,
    post_c: Option<PosteriorGaussian>,
}

/// Everything shared across seeds.
struct SweepContext {
    cfg: ExperimentConfig,
    cont_spec: Arc<ContinuumSpectrum>,
    k_cont: usize,
    prior_c: DiagonalGaussianMeasure,
    grid: QuadratureGrid,
    epsilons: Vec<f64>,
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<(ConvergenceReport, Vec<TimingEntry>)> {
    cfg.validate()?;
    let k_cont = continuum_truncation(cfg.manifold, cfg.alpha, cfg.s, 1e-6);
    let cont_spec = ContinuumSpectrum::new(cfg.manifold, k_cont);
    let prior_c = gaussian_prior(
        SpectralBasis::Continuum(Arc::clone(&cont_spec)),
        cfg.alpha,
        cfg.s,
        k_cont,
    )?;
    let grid = QuadratureGrid::new(cfg.manifold, cfg.grid_resolution);
    let sweep = SweepContext {
        cfg: cfg.clone(),
        cont_spec,
        k_cont,
        prior_c,
        grid,
        epsilons: cfg.resolved_epsilons()?,
    };

    let max_n = *cfg.n_grid.last().expect("validated nonempty");
    let seed_contexts: Result<Vec<SeedContext>> = cfg
        .seeds
        .iter()
        .map(|&seed| make_seed_context(&sweep, seed, max_n))
        .collect();
    let seed_contexts = seed_contexts?;

    // rows are independent tasks; all randomness is keyed by (seed, stage, n)
    let tasks: Vec<(usize, usize)> = (0..seed_contexts.len())
        .flat_map(|si| (0..cfg.n_grid.len()).map(move |ni| (si, ni)))
        .collect();
    let mut results: Vec<(usize, usize, RowDiagnostics, Vec<TimingEntry>)> = tasks
        .par_iter()
        .map(|&(si, ni)| {
            let sc = &seed_contexts[si];
            let n = sweep.cfg.n_grid[ni];
            let eps = sweep.epsilons[ni];
            let started = Instant::now();
            let outcome = run_row(&sweep, sc, n, eps);
            match outcome {
                Ok((row, timings)) => (si, ni, row, timings),
                Err(e) => (
                    si,
                    ni,
                    RowDiagnostics::failed(sc.seed, n, eps, sweep.cfg.k_report, &e.to_string()),
                    vec![TimingEntry {
                        seed: sc.seed,
                        n,
                        stage: "failed".into(),
                        seconds: started.elapsed().as_secs_f64(),
                    }],
                ),
            }
        })
        .collect();

    // n-major, then seed order
    results.sort_by_key(|(si, ni, _, _)| (*ni, *si));
    let rows: Vec<RowDiagnostics> = results.iter().map(|(_, _, r, _)| r.clone()).collect();
    let timings: Vec<TimingEntry> = results
        .into_iter()
        .flat_map(|(_, _, _, t)| t)
        .collect();

    let medians = aggregate_medians(&rows, cfg.k_report);
    let slopes = fit_all_slopes(&medians);
    Ok((
        ConvergenceReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: cfg.clone(),
            rows,
            medians,
            slopes,
        },
        timings,
    ))
}

fn make_seed_context(sweep: &SweepContext, seed: u64, max_n: usize) -> Result<SeedContext> {
    let cfg = &sweep.cfg;
    let master = Arc::new(PointCloud::sample(cfg.manifold, max_n, seed));
    let mut setup = ObservationSetup::first_p(&master, cfg.p_observations, cfg.delta, cfg.noise)?;
    setup.normalize = cfg.normalize_observations;

    // truth drawn from the continuum prior; data shared by every n
    let mut truth_rng = rng::stream(seed, "truth", &[]);
    let xi = rng::standard_normals(&mut truth_rng, sweep.k_cont);
    let truth = FunctionOnManifold {
        spectrum: Arc::clone(&sweep.cont_spec),
        coeffs: sweep.prior_c.coeffs_from_xi(&xi),
    };
    let data = synthesize_data(&truth, &setup, &sweep.grid, cfg.heat_time, seed)?;

    // continuum conjugate posterior (Gaussian noise only)
    let post_c = match cfg.noise {
        NoiseModel::Gaussian { sigma } => {
            let obs_c =
                observation_matrix_manifold(&sweep.cont_spec, &setup, &sweep.grid, sweep.k_cont);
            let eigs = sweep.cont_spec.eigenvalues();
            let g_c = forward_observation_matrix(&obs_c, &eigs, cfg.heat_time);
            Some(conjugate_posterior(&sweep.prior_c, &g_c, &data.y, sigma)?)
        }
        NoiseModel::Laplace { .. } => None,
    };
    Ok(SeedContext {
        seed,
        master,
        setup,
        data,
        post_c,
    })
}

/// Coupled Monte-Carlo estimate of `E d_TL2` between a graph-side and a
/// continuum-side measure over functions: one shared normal vector per pair,
/// map-bound ground distance through the transport map.
#[allow(clippy::too_many_arguments)]
fn coupled_estimate<FN, FC>(
    n_pairs: usize,
    seed: u64,
    stage: &str,
    n_tag: u64,
    xi_len: usize,
    graph_coeffs: FN,
    cont_coeffs: FC,
    gspec: &GraphSpectrum,
    grid_eval: &GridEvaluator,
    map: &TransportMap,
) -> (f64, f64)
where
    FN: Fn(&[f64]) -> Vec<f64> + Sync,
    FC: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let distances: Vec<f64> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|pair| {
            let mut r = rng::stream(seed, stage, &[n_tag, pair]);
            let xi = rng::standard_normals(&mut r, xi_len);
            let values_n = gspec.synthesize(&graph_coeffs(&xi));
            let values_c = grid_eval.values(&cont_coeffs(&xi));
            map.map_bound_distance(&values_c, &values_n)
        })
        .collect();
    let mean = distances.iter().sum::<f64>() / n_pairs as f64;
    let var = if n_pairs > 1 {
        distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_pairs as f64 - 1.0)
    } else {
        0.0
    };
    (mean, (var / n_pairs as f64).sqrt())
}

fn run_row(
    sweep: &SweepContext,
    sc: &SeedContext,
    n: usize,
    eps: f64,
) -> Result<(RowDiagnostics, Vec<TimingEntry>)> {
    let cfg = &sweep.cfg;
    let seed = sc.seed;
    let mut timings = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let stage = |name: &str, t0: Instant, timings: &mut Vec<TimingEntry>| {
        timings.push(TimingEntry {
            seed,
            n,
            stage: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
    };

    let t0 = Instant::now();
    let cloud = Arc::new(sc.master.prefix(n));
    let graph = Arc::new(build_graph(Arc::clone(&cloud), eps)?);
    if let Some(w) = graph.warning() {
        warnings.push(w);
    }
    stage("graph", t0, &mut timings);

    // spectrum: full for dense-size clouds, truncated above (the paper-style
    // k_n index sets the floor of the truncation knob)
    let t0 = Instant::now();
    let k_spec = if n <= DENSE_EIGEN_LIMIT {
        n
    } else {
        n.min((4 * cfg.k_n(eps)).max(sweep.k_cont + 8).max(cfg.k_report + 8))
    };
    let raw_spec = graph_spectrum(&graph.laplacian(), k_spec)?;
    stage("eigensolve", t0, &mut timings);

    let t0 = Instant::now();
    let map = transport_map(cfg.manifold, Arc::clone(&cloud), cfg.grid_resolution)?;
    stage("transport_map", t0, &mut timings);

    let t0 = Instant::now();
    let cont_eigs = sweep.cont_spec.eigenvalues();
    let k_align = cluster_boundary(&cont_eigs, sweep.k_cont.min(k_spec));
    let aligned = Arc::new(align_spectrum(&raw_spec, &sweep.cont_spec, &map, k_align)?);
    stage("align", t0, &mut timings);

    let k_report = cfg.k_report.min(k_spec).min(sweep.k_cont);
    let mut eig_rel_err = Vec::with_capacity(cfg.k_report);
    let mut eig_abs_err = Vec::with_capacity(cfg.k_report);
    for i in 0..cfg.k_report {
        if i < k_report {
            let l = cont_eigs[i];
            let d = (aligned.eigenvalues[i] - l).abs();
            eig_abs_err.push(d);
            eig_rel_err.push(d / l.max(1.0));
        } else {
            eig_abs_err.push(f64::NAN);
            eig_rel_err.push(f64::NAN);
        }
    }

    let t0 = Instant::now();
    let grid_eval = GridEvaluator::new(Arc::clone(&sweep.cont_spec), &map, sweep.k_cont);
    stage("grid_eval", t0, &mut timings);

    // priors on both sides
    let prior_n = gaussian_prior(
        SpectralBasis::Graph(Arc::clone(&aligned)),
        cfg.alpha,
        cfg.s,
        k_spec,
    )?;
    let xi_len_prior = k_spec.max(sweep.k_cont);

    let t0 = Instant::now();
    let (prior_tl2, prior_tl2_se) = coupled_estimate(
        cfg.n_pairs,
        seed,
        "prior-pairs",
        n as u64,
        xi_len_prior,
        |xi| prior_n.coeffs_from_xi(&xi[..k_spec]),
        |xi| sweep.prior_c.coeffs_from_xi(&xi[..sweep.k_cont]),
        &aligned,
        &grid_eval,
        &map,
    );
    stage("prior_distance", t0, &mut timings);

    // forward-pushed priors (heat semigroup applied to each draw)
    let t0 = Instant::now();
    let t_heat = cfg.heat_time;
    let (fwd_prior_tl2, fwd_prior_tl2_se) = coupled_estimate(
        cfg.n_pairs,
        seed,
        "fwd-prior-pairs",
        n as u64,
        xi_len_prior,
        |xi| {
            forward_heat_coeffs(
                &prior_n.coeffs_from_xi(&xi[..k_spec]),
                &aligned.eigenvalues,
                t_heat,
            )
            .expect("t >= 0")
        },
        |xi| {
            forward_heat_coeffs(
                &sweep.prior_c.coeffs_from_xi(&xi[..sweep.k_cont]),
                &cont_eigs,
                t_heat,
            )
            .expect("t >= 0")
        },
        &aligned,
        &grid_eval,
        &map,
    );
    stage("fwd_prior_distance", t0, &mut timings);

    // fixed test function: u = psi_2 + 1/2 psi_4, u_n its restriction
    let t0 = Instant::now();
    let u_coeffs = fixed_test_coeffs(sweep.k_cont);
    let u_cont = FunctionOnManifold {
        spectrum: Arc::clone(&sweep.cont_spec),
        coeffs: u_coeffs.clone(),
    };
    let u_restricted: Vec<f64> = (0..n)
        .map(|i| {
            let p = cloud.point(i);
            sweep.cont_spec.eval_point(1, p) + 0.5 * sweep.cont_spec.eval_point(3, p)
        })
        .collect();
    let u_n = FunctionOnCloud {
        cloud: Arc::clone(&cloud),
        values: u_restricted,
    };
    let fu_n = crate::inversion::forward_heat_cloud(&u_n, &aligned, t_heat)?;
    let fu_c = forward_heat_coeffs(&u_coeffs, &cont_eigs, t_heat)?;
    let fwd_fixed_tl2 = map.map_bound_distance(&grid_eval.values(&fu_c), &fu_n.values);
    stage("fwd_fixed", t0, &mut timings);

    // observation discrepancy on the same fixed function
    let t0 = Instant::now();
    let obs_n = observe_cloud(&u_n, &sc.setup);
    if !obs_n.empty_balls.is_empty() {
        warnings.push(format!("empty observation balls: {:?}", obs_n.empty_balls));
    }
    let obs_c = observe_manifold(&u_cont, &sc.setup, &sweep.grid);
    let obs_err = obs_n
        .values
        .iter()
        .zip(&obs_c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    stage("observation", t0, &mut timings);

    // conjugate posteriors and their distances (Gaussian noise only)
    let (post_mean_tl2, post_meas, post_push) = match (cfg.noise, &sc.post_c) {
        (NoiseModel::Gaussian { sigma }, Some(post_c)) => {
            let t0 = Instant::now();
            let obs_mat = observation_matrix_cloud(&aligned, &sc.setup, k_spec);
            let g_n = forward_observation_matrix(&obs_mat, &aligned.eigenvalues, t_heat);
            let post_n = conjugate_posterior(&prior_n, &g_n, &sc.data.y, sigma)?;
            stage("conjugate_posterior", t0, &mut timings);

            let t0 = Instant::now();
            let mean_n = aligned.synthesize(&post_n.mean);
            let mean_c_grid = grid_eval.values(&post_c.mean);
            let post_mean_tl2 = map.map_bound_distance(&mean_c_grid, &mean_n);
            stage("posterior_mean", t0, &mut timings);

            let p = cfg.p_observations;
            let xi_len_post = p + k_spec.max(sweep.k_cont);
            let t0 = Instant::now();
            let post_meas = coupled_estimate(
                cfg.n_pairs,
                seed,
                "post-pairs",
                n as u64,
                xi_len_post,
                |xi| post_n.coeffs_from_xi(&xi[..p + k_spec]),
                |xi| {
                    let mut v = xi[..p].to_vec();
                    v.extend_from_slice(&xi[p..p + sweep.k_cont]);
                    post_c.coeffs_from_xi(&v)
                },
                &aligned,
                &grid_eval,
                &map,
            );
            stage("posterior_distance", t0, &mut timings);

            let t0 = Instant::now();
            let post_push = coupled_estimate(
                cfg.n_pairs,
                seed,
                "post-push-pairs",
                n as u64,
                xi_len_post,
                |xi| {
                    forward_heat_coeffs(
                        &post_n.coeffs_from_xi(&xi[..p + k_spec]),
                        &aligned.eigenvalues,
                        t_heat,
                    )
                    .expect("t >= 0")
                },
                |xi| {
                    let mut v = xi[..p].to_vec();
                    v.extend_from_slice(&xi[p..p + sweep.k_cont]);
                    forward_heat_coeffs(&post_c.coeffs_from_xi(&v), &cont_eigs, t_heat)
                        .expect("t >= 0")
                },
                &aligned,
                &grid_eval,
                &map,
            );
            stage("posterior_pushforward", t0, &mut timings);
            (post_mean_tl2, post_meas, post_push)
        }
        _ => {
            warnings.push("posterior stages skipped: conjugacy needs Gaussian noise".into());
            (f64::NAN, (f64::NAN, f64::NAN), (f64::NAN, f64::NAN))
        }
    };

    let status = if warnings.is_empty() {
        "ok".to_string()
    } else {
        format!("ok; warnings: {}", warnings.join("; "))
    };
    Ok((
        RowDiagnostics {
            seed: Some(seed),
            n,
            epsilon: eps,
            t_n: map.t_n,
            components: graph.components as f64,
            eig_rel_err,
            eig_abs_err,
            prior_tl2,
            prior_tl2_se,
            fwd_prior_tl2,
            fwd_prior_tl2_se,
            fwd_fixed_tl2,
            obs_err,
            post_mean_tl2,
            post_meas_tl2: post_meas.0,
            post_meas_tl2_se: post_meas.1,
            post_push_tl2: post_push.0,
            post_push_tl2_se: post_push.1,
            status,
        },
        timings,
    ))
}

/// Verdict of the eigenvalue-rate envelope check: the smallest constant `C`
/// with `|lambda_i - lambda_i^n| <= C (t_n/eps + sqrt(lambda_i) eps)` over
/// all reported modes and all grid sizes, refitted on grid prefixes
/// (progressively excluding the largest n); the envelope passes when the
/// refits agree within a factor of 5.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateVerdict {
    /// `(largest n included, fitted C)` per prefix refit.
    pub c_fits: Vec<(usize, f64)>,
    pub c_full: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub stable: bool,
}

pub fn check_rates(report: &ConvergenceReport, cont_eigenvalues: &[f64]) -> RateVerdict {
    let meds = &report.medians;
    let k = report.config.k_report.min(cont_eigenvalues.len());
    let fit_prefix = |len: usize| -> f64 {
        let mut c: f64 = 0.0;
        for row in &meds[..len] {
            if !row.t_n.is_finite() {
                continue;
            }
            for i in 0..k {
                let err = row.eig_abs_err[i];
                if !err.is_finite() {
                    continue;
                }
                let bound = row.t_n / row.epsilon + cont_eigenvalues[i].sqrt() * row.epsilon;
                if bound > 0.0 {
                    c = c.max(err / bound);
                }
            }
        }
        c
    };
    let mut c_fits = Vec::new();
    for len in (2..=meds.len()).rev() {
        c_fits.push((meds[len - 1].n, fit_prefix(len)));
    }
    if c_fits.is_empty() && !meds.is_empty() {
        c_fits.push((meds[0].n, fit_prefix(1)));
    }
    let c_full = c_fits.first().map(|x| x.1).unwrap_or(f64::NAN);
    let finite: Vec<f64> = c_fits
        .iter()
        .map(|x| x.1)
        .filter(|c| c.is_finite() && *c > 0.0)
        .collect();
    let ratio = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().cloned().fold(0.0f64, f64::max)
            / finite.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    RateVerdict {
        c_fits,
        c_full,
        ratio,
        threshold: 5.0,
        stable: c_full.is_finite() && c_full > 0.0 && ratio.is_finite() && ratio < 5.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::EpsilonRule;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_circle();
        cfg.n_grid = vec![40, 60];
        cfg.epsilon_rule = EpsilonRule::Explicit(vec![0.38, 0.35]);
        cfg.seeds = vec![0, 1];
        cfg.n_pairs = 8;
        cfg.grid_resolution = 512;
        cfg.p_observations = 4;
        cfg
    }

    #[test]
    fn tiny_sweep_produces_full_report() {
        let cfg = tiny_config();
        let (report, timings) = run_convergence(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.medians.len(), 2);
        assert!(!timings.is_empty());
        for r in &report.rows {
            assert!(r.status.starts_with("ok"), "{}", r.status);
            assert!(r.prior_tl2.is_finite());
            assert!(r.post_mean_tl2.is_finite());
        }
        // rows n-major
        assert!(report.rows.windows(2).all(|w| w[0].n <= w[1].n));
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = tiny_config();
        let (a, _) = run_convergence(&cfg).unwrap();
        let (b, _) = run_convergence(&cfg).unwrap();
        let ca = super::super::report::report_to_csv(&a).unwrap();
        let cb = super::super::report::report_to_csv(&b).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn rate_check_on_constructed_fixture() {
        // errors exactly equal to t_n / eps give C = 1
        let cfg = tiny_config();
        let k = cfg.k_report;
        let mk = |n: usize, eps: f64, t_n: f64| {
            let mut r = RowDiagnostics::failed(0, n, eps, k, "x");
            r.status = "ok".into();
            r.t_n = t_n;
            r.eig_abs_err = vec![t_n / eps; k];
            r.eig_rel_err = vec![t_n / eps; k];
            r
        };
        let rows = vec![mk(100, 0.2, 0.02), mk(200, 0.15, 0.012)];
        let medians = aggregate_medians(&rows, k);
        let report = ConvergenceReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: cfg,
            rows,
            medians,
            slopes: Default::default(),
        };
        let verdict = check_rates(&report, &vec![0.0; k]);
        assert!((verdict.c_full - 1.0).abs() < 1e-12);
        assert!(verdict.stable);
        // mode 1 with lambda = 0 and zero error is never binding
        let zero_err_report = {
            let mut rep = report.clone();
            for r in rep.rows.iter_mut().chain(rep.medians.iter_mut()) {
                r.eig_abs_err[0] = 0.0;
            }
            rep
        };
        let v2 = check_rates(&zero_err_report, &vec![0.0; k]);
        assert!((v2.c_full - 1.0).abs() < 1e-12);
    }
}

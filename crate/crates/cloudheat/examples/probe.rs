use cloudheat::harness::{check_rates, run_convergence, ExperimentConfig};
use cloudheat::manifold::ContinuumSpectrum;
use std::time::Instant;

fn main() {
    let cfg = ExperimentConfig::default_circle();
    let t0 = Instant::now();
    let (report, _timings) = run_convergence(&cfg).unwrap();
    println!("sweep took {:?}", t0.elapsed());
    println!("n     comps t_n      eigmax   prior    fwdprior fwdfix   obs      pmean    pmeas    ppush");
    for m in &report.medians {
        let eigmax = m.eig_rel_err.iter().cloned().fold(0.0f64, f64::max);
        println!(
            "{:5} {:4}  {:.5}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
            m.n, m.components, m.t_n, eigmax, m.prior_tl2, m.fwd_prior_tl2,
            m.fwd_fixed_tl2, m.obs_err, m.post_mean_tl2, m.post_meas_tl2, m.post_push_tl2
        );
    }
    println!("\nper-mode median rel errs:");
    for m in &report.medians {
        println!(
            "n={:5}: {}",
            m.n,
            m.eig_rel_err.iter().map(|e| format!("{:.3}", e)).collect::<Vec<_>>().join(" ")
        );
    }
    let cont = ContinuumSpectrum::new(cfg.manifold, cfg.k_report);
    let verdict = check_rates(&report, &cont.eigenvalues());
    println!("\nrates: C = {:.4}, fits = {:?}, ratio = {:.3}, stable = {}",
        verdict.c_full, verdict.c_fits, verdict.ratio, verdict.stable);
    println!("\nslopes:");
    for (k, v) in &report.slopes {
        println!("  {k}: {:.3} (residual {:.3})", v.slope, v.residual);
    }
}

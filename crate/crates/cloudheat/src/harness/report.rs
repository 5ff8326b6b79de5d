//! Convergence report: per-row diagnostics, per-n medians, slope fits, and
//! the CSV/JSON/TSV emitters.
//!
//! Reports are deterministic byte for byte given config and seeds; wall
//! times go to a separate timings file so the main artifacts stay
//! reproducible.

use super::config::ExperimentConfig;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Diagnostics of one (seed, n) pipeline run; medians reuse the same shape
/// with `seed = None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub seed: Option<u64>,
    pub n: usize,
    pub epsilon: f64,
    pub t_n: f64,
    pub components: f64,
    /// `|lambda_i^n - lambda_i| / max(lambda_i, 1)` for the first k_report modes.
    pub eig_rel_err: Vec<f64>,
    /// `|lambda_i^n - lambda_i|` for the first k_report modes.
    pub eig_abs_err: Vec<f64>,
    pub prior_tl2: f64,
    pub prior_tl2_se: f64,
    pub fwd_prior_tl2: f64,
    pub fwd_prior_tl2_se: f64,
    pub fwd_fixed_tl2: f64,
    pub obs_err: f64,
    pub post_mean_tl2: f64,
    pub post_meas_tl2: f64,
    pub post_meas_tl2_se: f64,
    pub post_push_tl2: f64,
    pub post_push_tl2_se: f64,
    pub status: String,
}

impl RowDiagnostics {
    pub fn failed(seed: u64, n: usize, epsilon: f64, k_report: usize, err: &str) -> RowDiagnostics {
        RowDiagnostics {
            seed: Some(seed),
            n,
            epsilon,
            t_n: f64::NAN,
            components: f64::NAN,
            eig_rel_err: vec![f64::NAN; k_report],
            eig_abs_err: vec![f64::NAN; k_report],
            prior_tl2: f64::NAN,
            prior_tl2_se: f64::NAN,
            fwd_prior_tl2: f64::NAN,
            fwd_prior_tl2_se: f64::NAN,
            fwd_fixed_tl2: f64::NAN,
            obs_err: f64::NAN,
            post_mean_tl2: f64::NAN,
            post_meas_tl2: f64::NAN,
            post_meas_tl2_se: f64::NAN,
            post_push_tl2: f64::NAN,
            post_push_tl2_se: f64::NAN,
            status: format!("error: {err}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Per (n, seed) rows, n-major.
    pub rows: Vec<RowDiagnostics>,
    /// Per-n medians over seeds.
    pub medians: Vec<RowDiagnostics>,
    /// Log-log slope per diagnostic, fitted on the medians of the largest
    /// three grid sizes.
    pub slopes: BTreeMap<String, SlopeFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingEntry {
    pub seed: u64,
    pub n: usize,
    pub stage: String,
    pub seconds: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Per-n medians over the per-seed rows.
pub fn aggregate_medians(rows: &[RowDiagnostics], k_report: usize) -> Vec<RowDiagnostics> {
    let mut by_n: BTreeMap<usize, Vec<&RowDiagnostics>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n
        .into_iter()
        .map(|(n, group)| {
            let col = |f: &dyn Fn(&RowDiagnostics) -> f64| -> f64 {
                median(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let vec_col = |f: &dyn Fn(&RowDiagnostics, usize) -> f64| -> Vec<f64> {
                (0..k_report)
                    .map(|i| median(&group.iter().map(|r| f(r, i)).collect::<Vec<_>>()))
                    .collect()
            };
            let ok = group.iter().filter(|r| !r.status.starts_with("error")).count();
            RowDiagnostics {
                seed: None,
                n,
                epsilon: col(&|r| r.epsilon),
                t_n: col(&|r| r.t_n),
                components: col(&|r| r.components),
                eig_rel_err: vec_col(&|r, i| r.eig_rel_err.get(i).copied().unwrap_or(f64::NAN)),
                eig_abs_err: vec_col(&|r, i| r.eig_abs_err.get(i).copied().unwrap_or(f64::NAN)),
                prior_tl2: col(&|r| r.prior_tl2),
                prior_tl2_se: col(&|r| r.prior_tl2_se),
                fwd_prior_tl2: col(&|r| r.fwd_prior_tl2),
                fwd_prior_tl2_se: col(&|r| r.fwd_prior_tl2_se),
                fwd_fixed_tl2: col(&|r| r.fwd_fixed_tl2),
                obs_err: col(&|r| r.obs_err),
                post_mean_tl2: col(&|r| r.post_mean_tl2),
                post_meas_tl2: col(&|r| r.post_meas_tl2),
                post_meas_tl2_se: col(&|r| r.post_meas_tl2_se),
                post_push_tl2: col(&|r| r.post_push_tl2),
                post_push_tl2_se: col(&|r| r.post_push_tl2_se),
                status: format!("median of {} rows ({} ok)", group.len(), ok),
            }
        })
        .collect()
}

/// Names and accessors of the scalar diagnostics that get slope fits and
/// plot series.
pub fn diagnostic_columns() -> Vec<(&'static str, fn(&RowDiagnostics) -> f64)> {
    vec![
        ("t_n", |r| r.t_n),
        ("eig_err_max", |r| {
            r.eig_rel_err.iter().copied().fold(f64::NAN, f64::max)
        }),
        ("prior_tl2", |r| r.prior_tl2),
        ("fwd_prior_tl2", |r| r.fwd_prior_tl2),
        ("fwd_fixed_tl2", |r| r.fwd_fixed_tl2),
        ("obs_err", |r| r.obs_err),
        ("post_mean_tl2", |r| r.post_mean_tl2),
        ("post_meas_tl2", |r| r.post_meas_tl2),
        ("post_push_tl2", |r| r.post_push_tl2),
    ]
}

/// OLS fit of `log value` against `log n` over the largest three grid sizes;
/// undefined (NaN) below three usable points.
pub fn fit_slope(ns: &[usize], values: &[f64]) -> SlopeFit {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(n, v)| ((*n as f64).ln(), v.ln()))
        .collect();
    let take = 3usize;
    if pts.len() < take {
        return SlopeFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            residual: f64::NAN,
            points: pts.len(),
        };
    }
    let pts = &pts[pts.len() - take..];
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum::<f64>()
        .sqrt();
    SlopeFit {
        slope,
        intercept,
        residual,
        points: pts.len(),
    }
}

pub fn fit_all_slopes(medians: &[RowDiagnostics]) -> BTreeMap<String, SlopeFit> {
    let ns: Vec<usize> = medians.iter().map(|r| r.n).collect();
    diagnostic_columns()
        .into_iter()
        .map(|(name, get)| {
            let vals: Vec<f64> = medians.iter().map(get).collect();
            (name.to_string(), fit_slope(&ns, &vals))
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

pub fn csv_header(k_report: usize) -> Vec<String> {
    let mut h = vec![
        "seed".to_string(),
        "n".to_string(),
        "epsilon".to_string(),
        "t_n".to_string(),
        "components".to_string(),
    ];
    for i in 1..=k_report {
        h.push(format!("eig_rel_err_{i}"));
    }
    for i in 1..=k_report {
        h.push(format!("eig_abs_err_{i}"));
    }
    h.extend(
        [
            "prior_tl2",
            "prior_tl2_se",
            "fwd_prior_tl2",
            "fwd_prior_tl2_se",
            "fwd_fixed_tl2",
            "obs_err",
            "post_mean_tl2",
            "post_meas_tl2",
            "post_meas_tl2_se",
            "post_push_tl2",
            "post_push_tl2_se",
            "status",
        ]
        .into_iter()
        .map(str::to_string),
    );
    h
}

fn csv_record(r: &RowDiagnostics, k_report: usize) -> Vec<String> {
    let mut rec = vec![
        r.seed.map_or_else(|| "median".to_string(), |s| s.to_string()),
        r.n.to_string(),
        fmt(r.epsilon),
        fmt(r.t_n),
        fmt(r.components),
    ];
    for i in 0..k_report {
        rec.push(fmt(r.eig_rel_err.get(i).copied().unwrap_or(f64::NAN)));
    }
    for i in 0..k_report {
        rec.push(fmt(r.eig_abs_err.get(i).copied().unwrap_or(f64::NAN)));
    }
    for v in [
        r.prior_tl2,
        r.prior_tl2_se,
        r.fwd_prior_tl2,
        r.fwd_prior_tl2_se,
        r.fwd_fixed_tl2,
        r.obs_err,
        r.post_mean_tl2,
        r.post_meas_tl2,
        r.post_meas_tl2_se,
        r.post_push_tl2,
        r.post_push_tl2_se,
    ] {
        rec.push(fmt(v));
    }
    rec.push(r.status.clone());
    rec
}

pub fn report_to_csv(report: &ConvergenceReport) -> Result<String> {
    let k = report.config.k_report;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(k))
        .map_err(|e| crate::error::Error::Numerical(format!("csv: {e}")))?;
    for r in report.rows.iter().chain(&report.medians) {
        w.write_record(csv_record(r, k))
            .map_err(|e| crate::error::Error::Numerical(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::error::Error::Numerical(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write `report.csv`, `report.json`, `plotdata/*.tsv`, and `timings.csv`
/// under `dir`.
pub fn write_report(
    report: &ConvergenceReport,
    timings: &[TimingEntry],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_to_csv(report)?)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;

    let plot = dir.join("plotdata");
    std::fs::create_dir_all(&plot)?;
    for (name, get) in diagnostic_columns() {
        let mut out = String::from("n\tvalue\tstderr\n");
        for r in &report.medians {
            let se = match name {
                "prior_tl2" => r.prior_tl2_se,
                "fwd_prior_tl2" => r.fwd_prior_tl2_se,
                "post_meas_tl2" => r.post_meas_tl2_se,
                "post_push_tl2" => r.post_push_tl2_se,
                _ => 0.0,
            };
            out.push_str(&format!("{}\t{}\t{}\n", r.n, fmt(get(r)), fmt(se)));
        }
        std::fs::write(plot.join(format!("{name}.tsv")), out)?;
    }

    let mut tm = std::fs::File::create(dir.join("timings.csv"))?;
    writeln!(tm, "seed,n,stage,seconds")?;
    for t in timings {
        writeln!(tm, "{},{},{},{:.6}", t.seed, t.n, t.stage, t.seconds)?;
    }
    Ok(())
}

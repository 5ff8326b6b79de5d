//! Experiment configuration and the connectivity-rate schedule.

use crate::error::{Error, Result};
use crate::inversion::NoiseModel;
use crate::manifold::Manifold;
use serde::{Deserialize, Serialize};

/// Exponent of the log factor in the lower connectivity bound: the
/// infinity-transport rate is `(log n)^{p_m} / n^{1/m}`.
///
/// `p_m = 3/4` for `m = 2` and `1/m` for `m >= 3`; the `m = 1` value of 1
/// (rate `log n / n`) is the standard one-dimensional rate, extrapolated
/// here since the assumption only states the others.
pub fn p_m(m: usize) -> f64 {
    match m {
        1 => 1.0,
        2 => 0.75,
        m => 1.0 / m as f64,
    }
}

/// The admissible window for the connectivity rate:
/// `(log n)^{p_m} / n^{1/m} << eps << n^{-1/s}`.
pub fn epsilon_bounds(n: usize, m: usize, s: f64) -> (f64, f64) {
    let nf = n as f64;
    let lower = nf.ln().powf(p_m(m)) / nf.powf(1.0 / m as f64);
    let upper = nf.powf(-1.0 / s);
    (lower, upper)
}

/// The geometric-mean rule: `eps(n) = sqrt(lower(n) * upper(n))`.
///
/// Errors when the window is empty (n too small for the given s and m).
/// Note that at desk-scale n this rule sits near the connectivity threshold
/// of the graph; the shipped default configuration pins an explicit schedule
/// closer to the upper bound instead (see
/// [`ExperimentConfig::default_circle`]).
pub fn epsilon_schedule(n: usize, m: usize, s: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2 for a schedule".into()));
    }
    let (lower, upper) = epsilon_bounds(n, m, s);
    if lower >= upper {
        return Err(Error::InvalidArgument(format!(
            "empty connectivity window at n = {n}: lower bound (log n)^p_m / n^(1/m) = {lower:.6} \
             >= upper bound n^(-1/s) = {upper:.6}; n is too small for m = {m}, s = {s}"
        )));
    }
    Ok((lower * upper).sqrt())
}

/// How the per-n connectivity rate is chosen.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `sqrt(lower(n) * upper(n))` per n.
    AutoGeomean,
    /// One value per entry of `n_grid`, validated against the window.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: Manifold,
    pub n_grid: Vec<usize>,
    pub epsilon_rule: EpsilonRule,
    pub alpha: f64,
    pub s: f64,
    /// Heat time of the forward map.
    pub heat_time: f64,
    /// Number of observation centers (the first p cloud points).
    pub p_observations: usize,
    /// Observation ball radius.
    pub delta: f64,
    pub noise: NoiseModel,
    /// Modes compared in eigenvalue diagnostics.
    pub k_report: usize,
    pub seeds: Vec<u64>,
    /// Monte-Carlo pairs per coupled distance estimate.
    pub n_pairs: usize,
    /// Quadrature cells per parameter axis for grids and transport maps.
    pub grid_resolution: usize,
    /// The constant c in the truncation index `k_n = c * ceil(1/eps^m)`.
    pub kn_constant: f64,
    /// Normalize ball averages by the ball mass (off: raw integrals).
    pub normalize_observations: bool,
    pub out_dir: String,
}

impl ExperimentConfig {
    /// The default circle experiment: n-grid 250..2000, explicit schedule
    /// `eps(n) = 0.95 n^{-1/4}` (inside the admissible window everywhere,
    /// clear of the connectivity threshold), s = 4, alpha = 1, heat time 1,
    /// p = 6 centers of radius 0.2, Gaussian noise 0.05.
    pub fn default_circle() -> ExperimentConfig {
        let n_grid = vec![250usize, 500, 1000, 2000];
        let s = 4.0;
        let eps = n_grid
            .iter()
            .map(|&n| 0.95 * (n as f64).powf(-1.0 / s))
            .collect();
        ExperimentConfig {
            manifold: Manifold::Circle,
            n_grid,
            epsilon_rule: EpsilonRule::Explicit(eps),
            alpha: 1.0,
            s,
            heat_time: 1.0,
            p_observations: 6,
            delta: 0.2,
            noise: NoiseModel::Gaussian { sigma: 0.05 },
            k_report: 9,
            seeds: vec![0, 1, 2, 3, 4],
            n_pairs: 200,
            grid_resolution: 8192,
            kn_constant: 0.1,
            normalize_observations: false,
            out_dir: "out".into(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Per-n epsilon values under the configured rule.
    pub fn resolved_epsilons(&self) -> Result<Vec<f64>> {
        let m = self.manifold.intrinsic_dim();
        match &self.epsilon_rule {
            EpsilonRule::AutoGeomean => self
                .n_grid
                .iter()
                .map(|&n| epsilon_schedule(n, m, self.s))
                .collect(),
            EpsilonRule::Explicit(eps) => {
                if eps.len() != self.n_grid.len() {
                    return Err(Error::InvalidArgument(format!(
                        "explicit epsilon list has {} entries for {} grid sizes",
                        eps.len(),
                        self.n_grid.len()
                    )));
                }
                Ok(eps.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::InvalidArgument("n_grid cannot be empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "n_grid must be strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("need at least one seed".into()));
        }
        if self.s <= self.manifold.intrinsic_dim() as f64 {
            return Err(Error::InvalidArgument(format!(
                "s = {} must exceed the intrinsic dimension {}",
                self.s,
                self.manifold.intrinsic_dim()
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidArgument(
                "alpha must be positive (the bases contain a zero eigenvalue)".into(),
            ));
        }
        if self.heat_time < 0.0 || self.delta <= 0.0 {
            return Err(Error::InvalidArgument(
                "heat time must be nonnegative and delta positive".into(),
            ));
        }
        self.noise.validate()?;
        if self.k_report == 0 {
            return Err(Error::InvalidArgument("k_report must be positive".into()));
        }
        if self.n_pairs == 0 {
            return Err(Error::InvalidArgument("n_pairs must be positive".into()));
        }
        if self.grid_resolution < 16 {
            return Err(Error::InvalidArgument(
                "grid_resolution must be at least 16".into(),
            ));
        }
        if !(self.kn_constant > 0.0) {
            return Err(Error::InvalidArgument("kn_constant must be positive".into()));
        }
        if self.p_observations > self.n_grid[0] {
            return Err(Error::InvalidArgument(format!(
                "p = {} observation centers exceed the smallest grid size {}",
                self.p_observations, self.n_grid[0]
            )));
        }
        let m = self.manifold.intrinsic_dim();
        let eps = self.resolved_epsilons()?;
        for (&n, &e) in self.n_grid.iter().zip(&eps) {
            let (lower, upper) = epsilon_bounds(n, m, self.s);
            if !(e > lower && e < upper) {
                return Err(Error::InvalidArgument(format!(
                    "epsilon = {e:.6} at n = {n} violates the admissible window: lower bound \
                     (log n)^p_m / n^(1/m) = {lower:.6}, upper bound n^(-1/s) = {upper:.6}"
                )));
            }
        }
        Ok(())
    }

    /// Truncation index `k_n = max(1, floor(c * ceil(1/eps^m)))`.
    pub fn k_n(&self, epsilon: f64) -> usize {
        let m = self.manifold.intrinsic_dim() as i32;
        let cells = (1.0 / epsilon.powi(m)).ceil();
        ((self.kn_constant * cells).floor() as usize).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn p_m_values() {
        assert_eq!(p_m(1), 1.0);
        assert_eq!(p_m(2), 0.75);
        assert_eq!(p_m(3), 1.0 / 3.0);
        assert_eq!(p_m(5), 0.2);
    }

    #[test]
    fn geomean_schedule_frozen_value() {
        // eps(1000; m=1, s=4) = sqrt( (ln 1000 / 1000) * 1000^(-1/4) )
        let eps = epsilon_schedule(1000, 1, 4.0).unwrap();
        let expect = ((1000.0f64.ln() / 1000.0) * 1000.0f64.powf(-0.25)).sqrt();
        assert_abs_diff_eq!(eps, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(eps, 0.03504842219301977, epsilon = 1e-15);
    }

    #[test]
    fn empty_window_is_an_error() {
        // m = 1, s = 1.2, n = 10: lower = ln(10)/10 = 0.23 > upper = 10^(-5/6)
        let err = epsilon_schedule(10, 1, 1.2);
        assert!(err.is_err());
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("lower bound") && msg.contains("upper bound"));
    }

    #[test]
    fn default_config_is_valid_and_inside_windows() {
        let cfg = ExperimentConfig::default_circle();
        cfg.validate().unwrap();
        let eps = cfg.resolved_epsilons().unwrap();
        for (&n, &e) in cfg.n_grid.iter().zip(&eps) {
            let (lo, hi) = epsilon_bounds(n, 1, cfg.s);
            assert!(e > lo && e < hi, "eps {e} outside ({lo}, {hi}) at n={n}");
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut doc = serde_json::to_value(ExperimentConfig::default_circle()).unwrap();
        doc["surprise"] = serde_json::json!(1);
        let text = serde_json::to_string(&doc).unwrap();
        assert!(ExperimentConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::default_circle();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn kn_truncation_index() {
        let cfg = ExperimentConfig::default_circle();
        // eps = 0.1: ceil(1/0.1) = 10, floor(0.1 * 10) = 1
        assert_eq!(cfg.k_n(0.1), 1);
        assert_eq!(cfg.k_n(0.01), 10);
    }
}

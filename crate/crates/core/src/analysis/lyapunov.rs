//! Lyapunov functions along recorded trajectories.
//!
//! Open road, constant leader `v_0 = v*`:
//!
//! ```text
//! V_i = ½ (v_i - v*)² + (c/2) (v_i - G(s_i))² + ∫_{s*}^{s_i} (k - g)(G - v*)
//! V   = Σ Q_i V_i,   Q_n = 1,   Q_i = 1 + Q_{i+1} (1/c + 1)
//! V̇  <= -(k/2) Σ (v_i - v*)² - (c/2)(k - g_max) Σ Q_i (v_i - G(s_i))²
//! ```
//!
//! Ring of length `L`:
//!
//! ```text
//! V = ½ Σ (s_i - s*)² + (c/2) Σ (v_i - G(s_i))²,   V̇ <= -2φ V
//! |x(t)| <= exp(-φ t) R |x(0)|,   R² = (2/c + 1 + 2 g_max²)(1 + 2c + 2c g_max²)
//! ```
//!
//! where `φ = min(α, (k - g_max)/2)`, `α = p μ_n / 2 - 2M - 2 / (c (k - g_max)) > 0`.

use std::fmt;

use super::{InequalityCheck, Tracker};
use crate::error::{config, invalid, Result};
use crate::numerics::{fit_line, LineFit};
use crate::simulator::Trajectory;
use crate::spacing_policy::{mu_n, PiecewiseG};

/// Per-step allowance for rounding in `V`.
const STEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    pub c: f64,
    /// Weights `Q_1..Q_n`.
    pub q: Vec<f64>,
}

impl LyapunovConfig {
    pub fn new(c: f64, n: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || n == 0 {
            return Err(invalid(format!("Lyapunov weight c must be positive and n >= 1 (c = {c}, n = {n})")));
        }
        let mut q = vec![1.0; n];
        for i in (0..n - 1).rev() {
            q[i] = 1.0 + q[i + 1] * (1.0 / c + 1.0);
        }
        Ok(LyapunovConfig { c, q })
    }
}

/// `Σ Q_i V_i` at one state.
pub fn open_road_lyapunov_value(
    s: &[f64],
    v: &[f64],
    policy: &PiecewiseG,
    k: f64,
    cfg: &LyapunovConfig,
    s_star: f64,
) -> f64 {
    let v_star = policy.equilibrium_speed_unchecked(s_star);
    s.iter()
        .zip(v)
        .zip(&cfg.q)
        .map(|((s, v), q)| {
            let w = v - policy.equilibrium_speed_unchecked(*s);
            q * (0.5 * (v - v_star).powi(2) + 0.5 * cfg.c * w * w + policy.potential(*s, s_star, k))
        })
        .sum()
}

fn open_road_decay_bound(s: &[f64], v: &[f64], policy: &PiecewiseG, k: f64, cfg: &LyapunovConfig, v_star: f64) -> f64 {
    let gm = policy.g_max();
    s.iter()
        .zip(v)
        .zip(&cfg.q)
        .map(|((s, v), q)| {
            let w = v - policy.equilibrium_speed_unchecked(*s);
            -0.5 * k * (v - v_star).powi(2) - 0.5 * cfg.c * (k - gm) * q * w * w
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenRoadLyapunovReport {
    pub values: Vec<f64>,
    /// Largest `V(t_{j+1}) - V(t_j)`.
    pub max_increase: f64,
    pub monotone: bool,
    /// `V(t_{j+1}) - V(t_j) <= ∫ (decay bound)` with trapezoid quadrature.
    pub decrement: InequalityCheck,
}

impl OpenRoadLyapunovReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.decrement.passed
    }
}

impl fmt::Display for OpenRoadLyapunovReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self.values.first().copied().unwrap_or(f64::NAN);
        let last = self.values.last().copied().unwrap_or(f64::NAN);
        writeln!(f, "lyapunov_initial: {first:.9e}")?;
        writeln!(f, "lyapunov_final: {last:.9e}")?;
        writeln!(
            f,
            "lyapunov_monotone: {} (max step increase {:.3e})",
            if self.monotone { "pass" } else { "FAIL" },
            self.max_increase
        )?;
        write!(f, "{}", self.decrement)
    }
}

/// Evaluates the weighted open-road Lyapunov function; the leader must hold `v*`.
pub fn lyapunov_open_road(
    traj: &Trajectory,
    policy: &PiecewiseG,
    k: f64,
    cfg: &LyapunovConfig,
    v_star: f64,
) -> Result<OpenRoadLyapunovReport> {
    if cfg.q.len() != traj.n {
        return Err(invalid(format!("{} weights for {} vehicles", cfg.q.len(), traj.n)));
    }
    let s_star = policy.equilibrium_spacing(v_star)?;
    let values: Vec<f64> = (0..traj.len())
        .map(|j| open_road_lyapunov_value(traj.s_at(j), traj.v_at(j), policy, k, cfg, s_star))
        .collect();
    let rates: Vec<f64> = (0..traj.len())
        .map(|j| open_road_decay_bound(traj.s_at(j), traj.v_at(j), policy, k, cfg, v_star))
        .collect();
    let mut max_increase = f64::NEG_INFINITY;
    let mut tr = Tracker::with_floor("lyapunov_decrement", STEP_TOL / super::REL_TOL);
    for j in 1..traj.len() {
        let inc = values[j] - values[j - 1];
        max_increase = max_increase.max(inc);
        let bound = 0.5 * (traj.times[j] - traj.times[j - 1]) * (rates[j] + rates[j - 1]);
        tr.observe(inc, bound, traj.times[j], None);
    }
    Ok(OpenRoadLyapunovReport {
        monotone: max_increase <= STEP_TOL,
        max_increase,
        values,
        decrement: tr.finish(),
    })
}

/// `½ Σ (s_i - s*)² + (c/2) Σ (v_i - G(s_i))²`.
pub fn ring_lyapunov_value(s: &[f64], v: &[f64], policy: &PiecewiseG, c: f64, s_star: f64) -> f64 {
    s.iter()
        .zip(v)
        .map(|(s, v)| {
            let w = v - policy.equilibrium_speed_unchecked(*s);
            0.5 * (s - s_star).powi(2) + 0.5 * c * w * w
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingLyapunovReport {
    pub c: f64,
    /// Smallest admissible `c`; any `c > c_min` works.
    pub c_min: f64,
    pub mu_n: f64,
    pub alpha: f64,
    /// Conservative decay constant `min(α, (k - g_max)/2)`.
    pub phi: f64,
    pub r: f64,
    pub values: Vec<f64>,
    pub max_increase: f64,
    pub monotone: bool,
    /// Least-squares fit of `ln V` against `t` over samples above `1e-9 V(0)`.
    pub fit: Option<LineFit>,
    /// Range of `ln V` over the fitted samples.
    pub log_range: f64,
    /// Fitted decay constant `-slope / 2`.
    pub fitted_phi: Option<f64>,
    /// `V(t) <= exp(-2φ t) V(0)` with the conservative `φ`.
    pub value_bound: InequalityCheck,
    /// `|x(t)| <= exp(-φ t) R |x(0)|`.
    pub norm_bound: InequalityCheck,
}

impl RingLyapunovReport {
    /// RMS residual of the log-linear fit as a fraction of the fitted log range.
    pub fn residual_fraction(&self) -> Option<f64> {
        self.fit.map(|f| f.rms_residual / self.log_range)
    }

    /// Negative slope with residual below 5% of range.
    pub fn fit_passed(&self) -> bool {
        matches!((self.fit, self.residual_fraction()), (Some(f), Some(r)) if f.slope < 0.0 && r < 0.05)
    }

    pub fn passed(&self) -> bool {
        self.monotone && self.fit_passed() && self.value_bound.passed && self.norm_bound.passed
    }
}

impl fmt::Display for RingLyapunovReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ring_c: {:.6} (c_min {:.6})", self.c, self.c_min)?;
        writeln!(f, "ring_mu_n: {:.9}", self.mu_n)?;
        writeln!(f, "ring_phi_conservative: {:.6e}", self.phi)?;
        writeln!(f, "ring_r: {:.6}", self.r)?;
        writeln!(
            f,
            "ring_lyapunov_monotone: {} (max step increase {:.3e})",
            if self.monotone { "pass" } else { "FAIL" },
            self.max_increase
        )?;
        match (self.fit, self.residual_fraction()) {
            (Some(fit), Some(frac)) => writeln!(
                f,
                "ring_log_fit: {} (slope {:.6}, rms residual {:.3}% of range)",
                if self.fit_passed() { "pass" } else { "FAIL" },
                fit.slope,
                100.0 * frac
            )?,
            _ => writeln!(f, "ring_log_fit: n/a")?,
        }
        writeln!(f, "{}", self.value_bound)?;
        write!(f, "{}", self.norm_bound)
    }
}

/// Evaluates the ring Lyapunov function and its decay certificates.
///
/// `c` defaults to twice the smallest admissible weight. Errors with a config
/// error when `m >= p μ_n / 4` (no admissible weight exists).
pub fn lyapunov_ring(
    traj: &Trajectory,
    policy: &PiecewiseG,
    k: f64,
    p: f64,
    m: f64,
    ring_length: f64,
    c: Option<f64>,
) -> Result<RingLyapunovReport> {
    let n = traj.n;
    let mu = mu_n(n)?;
    let gm = policy.g_max();
    let head = p * mu / 2.0 - 2.0 * m;
    if !(head > 0.0) {
        return Err(config(format!(
            "no Lyapunov weight exists: M = {m} must be below p mu_n / 4 = {}",
            p * mu / 4.0
        )));
    }
    if !(k > gm) {
        return Err(config(format!("k = {k} must exceed g_max = {gm}")));
    }
    let c_min = 2.0 / ((k - gm) * head);
    let c = c.unwrap_or(2.0 * c_min);
    if !(c > c_min) {
        return Err(config(format!("Lyapunov weight c = {c} must exceed {c_min}")));
    }
    let alpha = head - 2.0 / (c * (k - gm));
    let phi = alpha.min(0.5 * (k - gm));
    let r = ((2.0 / c + 1.0 + 2.0 * gm * gm) * (1.0 + 2.0 * c + 2.0 * c * gm * gm)).sqrt();

    let s_star = ring_length / n as f64;
    let v_star = policy.equilibrium_speed(s_star)?;
    let values: Vec<f64> = (0..traj.len())
        .map(|j| ring_lyapunov_value(traj.s_at(j), traj.v_at(j), policy, c, s_star))
        .collect();
    let max_increase = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);

    let norm = |j: usize| -> f64 {
        traj.s_at(j)
            .iter()
            .map(|s| (s - s_star).powi(2))
            .chain(traj.v_at(j).iter().map(|v| (v - v_star).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let (v0, x0) = (values.first().copied().unwrap_or(0.0), if traj.is_empty() { 0.0 } else { norm(0) });
    let mut value_bound = Tracker::new("ring_lyapunov_exponential_bound");
    let mut norm_bound = Tracker::new("ring_state_norm_bound");
    for (j, &value) in values.iter().enumerate() {
        let dt = traj.times[j] - t0;
        value_bound.observe(value, (-2.0 * phi * dt).exp() * v0, traj.times[j], None);
        norm_bound.observe(norm(j), (-phi * dt).exp() * r * x0, traj.times[j], None);
    }

    let (ts, logs): (Vec<f64>, Vec<f64>) = traj
        .times
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v > 1e-9 * v0 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    let fit = fit_line(&ts, &logs);
    let log_range = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - logs.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(RingLyapunovReport {
        c,
        c_min,
        mu_n: mu,
        alpha,
        phi,
        r,
        monotone: max_increase <= STEP_TOL,
        max_increase,
        fitted_phi: fit.map(|f| -f.slope / 2.0),
        fit,
        log_range,
        values,
        value_bound: value_bound.finish(),
        norm_bound: norm_bound.finish(),
    })
}

//! L2 and L∞ string-stability estimates and contraction onto the manifold `v = G(s)`.
//!
//! With `W(s, v) = (v - v*)² + 2 ∫_{s*}^{s} (k - g)(G - v*)` and `w_i(0) = v_i(0) - G(s_i(0))`:
//!
//! ```text
//! ∫ (v_i - v*)²     <= (1 + q) ∫ (v_{i-1} - v*)² + (W_i(0) + w_i(0)² / 2q) / k
//! ∫ (G(s_i) - v*)²  <= (1 + 2q) c_q ∫ (v_{i-1} - v*)² + c_q (W_i(0) + w_i(0)² / 2q) / k
//!                      where c_q = (2qk + k - g_max) / (k - g_max)
//! |v_i(t) - v*|     <= 2 |v_i(0) - v*| + |G(s_i(0)) - v*| + sup_{τ<=t} |v_{i-1}(τ) - v*|
//! Σ |w_i(t)|        <= exp(-(k - g_max) t) Σ |w_i(0)|
//! ```

use std::fmt;

use super::{InequalityCheck, Tracker};
use crate::error::Result;
use crate::numerics::{cumulative_trapezoid, fit_line};
use crate::simulator::Trajectory;
use crate::spacing_policy::PiecewiseG;

#[derive(Debug, Clone, PartialEq)]
pub struct StringStabilityParams {
    pub v_star: f64,
    pub s_star: f64,
    pub q_grid: Vec<f64>,
}

impl StringStabilityParams {
    pub const DEFAULT_Q_GRID: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

    /// Solves `G(s*) = v_star`; errors if `v_star` is outside `(0, v_max)`.
    pub fn new(policy: &PiecewiseG, v_star: f64, q_grid: Vec<f64>) -> Result<Self> {
        let s_star = policy.equilibrium_spacing(v_star)?;
        Ok(StringStabilityParams { v_star, s_star, q_grid })
    }

    /// Uses an exactly known equilibrium gap, e.g. `L / n` on a ring.
    pub fn at_spacing(policy: &PiecewiseG, s_star: f64, q_grid: Vec<f64>) -> Result<Self> {
        let v_star = policy.equilibrium_speed(s_star)?;
        Ok(StringStabilityParams { v_star, s_star, q_grid })
    }
}

struct VehicleSeries {
    /// `∫_0^t (v_i - v*)²`.
    own: Vec<f64>,
    /// `∫_0^t (v_{i-1} - v*)²`.
    pred: Vec<f64>,
    /// `W(s_i(0), v_i(0))`.
    w_state: f64,
    w0_sq: f64,
}

fn vehicle_series(traj: &Trajectory, i: usize, params: &StringStabilityParams, policy: &PiecewiseG, k: f64) -> VehicleSeries {
    let v_star = params.v_star;
    let own_dev: Vec<f64> = (0..traj.len()).map(|j| (traj.v[j * traj.n + i] - v_star).powi(2)).collect();
    let pred_dev: Vec<f64> = (0..traj.len()).map(|j| (traj.predecessor_speed(j, i) - v_star).powi(2)).collect();
    let (s0, v0) = (traj.s[i], traj.v[i]);
    let w0 = v0 - policy.equilibrium_speed_unchecked(s0);
    VehicleSeries {
        own: cumulative_trapezoid(&traj.times, &own_dev),
        pred: cumulative_trapezoid(&traj.times, &pred_dev),
        w_state: (v0 - v_star).powi(2) + 2.0 * policy.potential(s0, params.s_star, k),
        w0_sq: w0 * w0,
    }
}

/// L2 speed-deviation estimate, one check per `q`.
pub fn l2_string_check(traj: &Trajectory, params: &StringStabilityParams, policy: &PiecewiseG, k: f64) -> Vec<InequalityCheck> {
    let mut trackers: Vec<Tracker> = params.q_grid.iter().map(|q| Tracker::new(format!("l2_speed_q={q}"))).collect();
    for i in 0..traj.n {
        let vs = vehicle_series(traj, i, params, policy, k);
        for (q, tr) in params.q_grid.iter().zip(trackers.iter_mut()) {
            let offset = (vs.w_state + vs.w0_sq / (2.0 * q)) / k;
            for j in 0..traj.len() {
                tr.observe(vs.own[j], (1.0 + q) * vs.pred[j] + offset, traj.times[j], Some(i));
            }
        }
    }
    trackers.into_iter().map(Tracker::finish).collect()
}

/// L2 estimate for the equilibrium-speed deviation `G(s_i) - v*`, one check per `q`.
pub fn g_manifold_l2_check(
    traj: &Trajectory,
    params: &StringStabilityParams,
    policy: &PiecewiseG,
    k: f64,
) -> Vec<InequalityCheck> {
    let gm = policy.g_max();
    let mut trackers: Vec<Tracker> = params.q_grid.iter().map(|q| Tracker::new(format!("l2_manifold_q={q}"))).collect();
    for i in 0..traj.n {
        let vs = vehicle_series(traj, i, params, policy, k);
        let g_dev: Vec<f64> = (0..traj.len())
            .map(|j| (policy.equilibrium_speed_unchecked(traj.s[j * traj.n + i]) - params.v_star).powi(2))
            .collect();
        let lhs = cumulative_trapezoid(&traj.times, &g_dev);
        for (q, tr) in params.q_grid.iter().zip(trackers.iter_mut()) {
            let cq = (2.0 * q * k + k - gm) / (k - gm);
            let offset = cq / k * (vs.w_state + vs.w0_sq / (2.0 * q));
            for (j, &l) in lhs.iter().enumerate() {
                tr.observe(l, (1.0 + 2.0 * q) * cq * vs.pred[j] + offset, traj.times[j], Some(i));
            }
        }
    }
    trackers.into_iter().map(Tracker::finish).collect()
}

/// L∞ speed-deviation estimate with a running supremum over recorded samples.
pub fn linf_string_check(traj: &Trajectory, params: &StringStabilityParams, policy: &PiecewiseG) -> InequalityCheck {
    let v_star = params.v_star;
    let mut tr = Tracker::new("linf_speed");
    for i in 0..traj.n {
        let offset = 2.0 * (traj.v[i] - v_star).abs() + (policy.equilibrium_speed_unchecked(traj.s[i]) - v_star).abs();
        let mut sup: f64 = 0.0;
        for j in 0..traj.len() {
            sup = sup.max((traj.predecessor_speed(j, i) - v_star).abs());
            tr.observe((traj.v[j * traj.n + i] - v_star).abs(), offset + sup, traj.times[j], Some(i));
        }
    }
    tr.finish()
}

/// `Σ_i |v_i - G(s_i)|` at every sample.
pub fn manifold_deviation(traj: &Trajectory, policy: &PiecewiseG) -> Vec<f64> {
    (0..traj.len())
        .map(|j| {
            traj.s_at(j)
                .iter()
                .zip(traj.v_at(j))
                .map(|(s, v)| (v - policy.equilibrium_speed_unchecked(*s)).abs())
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldContractionReport {
    pub check: InequalityCheck,
    pub initial: f64,
    pub max_deviation: f64,
    /// `k - g_max`.
    pub guaranteed_rate: f64,
    /// Decay rate from a log-linear fit over samples above `1e-9` of the initial value;
    /// `None` when the run starts on the manifold or too few samples qualify.
    pub fitted_rate: Option<f64>,
}

impl fmt::Display for ManifoldContractionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.check)?;
        writeln!(f, "manifold_initial: {:.9e}", self.initial)?;
        writeln!(f, "manifold_max: {:.9e}", self.max_deviation)?;
        writeln!(f, "manifold_guaranteed_rate: {:.6}", self.guaranteed_rate)?;
        match self.fitted_rate {
            Some(r) => write!(f, "manifold_fitted_rate: {r:.6}"),
            None => write!(f, "manifold_fitted_rate: n/a"),
        }
    }
}

pub fn manifold_contraction_check(traj: &Trajectory, policy: &PiecewiseG, k: f64) -> ManifoldContractionReport {
    let dev = manifold_deviation(traj, policy);
    let rate = k - policy.g_max();
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let initial = dev.first().copied().unwrap_or(0.0);
    let mut tr = Tracker::new("manifold_contraction");
    for (j, d) in dev.iter().enumerate() {
        let t = traj.times[j];
        tr.observe(*d, (-rate * (t - t0)).exp() * initial, t, None);
    }
    let fitted_rate = if initial > 0.0 {
        let (ts, logs): (Vec<f64>, Vec<f64>) = traj
            .times
            .iter()
            .zip(&dev)
            .filter(|(_, d)| **d > 1e-9 * initial)
            .map(|(t, d)| (*t, d.ln()))
            .unzip();
        fit_line(&ts, &logs).map(|f| -f.slope)
    } else {
        None
    };
    ManifoldContractionReport {
        check: tr.finish(),
        initial,
        max_deviation: dev.iter().copied().fold(0.0, f64::max),
        guaranteed_rate: rate,
        fitted_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerSpec;
    use crate::simulator::{LeaderProfile, PlatoonState, SimSettings, Simulation, Topology, TrajectoryMeta};

    fn policy() -> PiecewiseG {
        PiecewiseG::ramp(5.0, 7.1, 19.0, 0.26).unwrap()
    }

    fn simulate(s: Vec<f64>, v: Vec<f64>, leader: f64, horizon: f64) -> Trajectory {
        let sim = Simulation {
            spec: ControllerSpec::nonlinear_acc(policy(), 2.0).unwrap(),
            topology: Topology::Open,
            leader: LeaderProfile::Constant { speed: leader },
            settings: SimSettings { dt: 1e-2, horizon, output_stride: 1, halt_on_violation: false },
        };
        sim.run(&PlatoonState::new(s, v).unwrap()).unwrap()
    }

    fn params(v_star: f64) -> StringStabilityParams {
        StringStabilityParams::new(&policy(), v_star, StringStabilityParams::DEFAULT_Q_GRID.to_vec()).unwrap()
    }

    /// Single follower whose speed is prescribed sample by sample.
    fn fabricated(s: f64, speeds: &[f64], leader: f64) -> Trajectory {
        let len = speeds.len();
        Trajectory {
            n: 1,
            topology: Topology::Open,
            times: (0..len).map(|j| j as f64).collect(),
            s: vec![s; len],
            v: speeds.to_vec(),
            u: vec![0.0; len],
            v0: vec![leader; len],
            meta: TrajectoryMeta::default(),
        }
    }

    #[test]
    fn equilibrium_run_passes_with_zero_deviation() {
        let p = policy();
        let v_star = p.equilibrium_speed(12.0).unwrap();
        let traj = simulate(vec![12.0; 3], vec![v_star; 3], v_star, 5.0);
        let prm = params(v_star);
        let checks: Vec<_> = l2_string_check(&traj, &prm, &p, 2.0)
            .into_iter()
            .chain(g_manifold_l2_check(&traj, &prm, &p, 2.0))
            .chain([linf_string_check(&traj, &prm, &p)])
            .collect();
        assert_eq!(checks.len(), 9);
        assert!(checks.iter().all(|c| c.passed));
        assert!(manifold_deviation(&traj, &p).iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn perturbed_run_passes() {
        let p = policy();
        let v_star = p.equilibrium_speed(12.0).unwrap();
        let traj = simulate(vec![9.0, 14.0, 11.0], vec![0.3, 1.9, 1.0], v_star, 40.0);
        let prm = params(v_star);
        for c in l2_string_check(&traj, &prm, &p, 2.0).iter().chain(&g_manifold_l2_check(&traj, &prm, &p, 2.0)) {
            assert!(c.passed, "{c}");
            assert_eq!(c.instances, 3 * traj.len());
        }
        assert!(linf_string_check(&traj, &prm, &p).passed);
        let m = manifold_contraction_check(&traj, &p, 2.0);
        assert!(m.check.passed, "{m}");
        assert!(m.fitted_rate.unwrap() >= 1.74 - 1e-3);
    }

    #[test]
    fn on_manifold_start_stays_on_manifold() {
        let p = policy();
        let s = vec![12.0, 9.0, 15.0];
        let v: Vec<f64> = s.iter().map(|x| p.equilibrium_speed_unchecked(*x)).collect();
        let traj = simulate(s, v, 1.2, 30.0);
        let dev = manifold_deviation(&traj, &p);
        assert!(dev.iter().all(|d| *d < 1e-7), "{}", dev.iter().copied().fold(0.0, f64::max));
        let m = manifold_contraction_check(&traj, &p, 2.0);
        assert_eq!(m.initial, 0.0);
        assert_eq!(m.fitted_rate, None);
    }

    #[test]
    fn l2_check_flags_unforced_deviation() {
        // Follower starts at equilibrium behind a steady leader, so every offset
        // is zero; a speed jump it could not have produced must be flagged.
        let p = policy();
        let s_star = 12.0;
        let v_star = p.equilibrium_speed(s_star).unwrap();
        let mut speeds = vec![v_star; 20];
        speeds[10..].fill(v_star + 0.5);
        let traj = fabricated(s_star, &speeds, v_star);
        let prm = params(v_star);
        assert!(l2_string_check(&traj, &prm, &p, 2.0).iter().all(|c| !c.passed));
        assert!(g_manifold_l2_check(&traj, &prm, &p, 2.0).iter().all(|c| c.passed));
        let linf = linf_string_check(&traj, &prm, &p);
        assert!(!linf.passed);
        assert_eq!(linf.worst_vehicle, Some(0));
        assert!((linf.worst_margin + 0.5).abs() < 1e-12);
    }

    #[test]
    fn linf_offset_terms() {
        // |v - v*| <= 2|v(0) - v*| + |G(s(0)) - v*| + sup|v_0 - v*|: with
        // v(0) = v* + 0.1 and G(s(0)) = v* the allowance is 0.2.
        let p = policy();
        let s_star = 12.0;
        let v_star = p.equilibrium_speed(s_star).unwrap();
        let prm = params(v_star);
        let ok = fabricated(s_star, &[v_star + 0.1, v_star + 0.2 - 1e-9], v_star);
        assert!(linf_string_check(&ok, &prm, &p).passed);
        let bad = fabricated(s_star, &[v_star + 0.1, v_star + 0.2 + 1e-3], v_star);
        assert!(!linf_string_check(&bad, &prm, &p).passed);
    }
}

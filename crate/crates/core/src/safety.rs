//! Safe-set membership, the reciprocal barrier `Φ` and trajectory monitoring.
//!
//! The safe set requires, for every vehicle `i` with predecessor speed `w`,
//!
//! ```text
//! 0 < v_i < v_max,   s_i > a + max(0, v_i - w) / k.
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::simulator::Trajectory;
use crate::spacing_policy::PiecewiseG;

/// Gap inequalities hold only with at least this much absolute slack. The
/// speed bounds use plain strictness: speeds legitimately approach 0 and, in
/// the exponential tail of `G`, come within `g_max exp(γ - s)` of `v_max`.
pub const STRICT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyParams {
    pub a: f64,
    pub k: f64,
    pub v_max: f64,
    pub lambda: Option<f64>,
    /// `r` in `v_max = k (lambda - a - r)`; the barrier bound needs `r > 0`.
    pub r_margin: Option<f64>,
}

impl SafetyParams {
    pub fn from_policy(policy: &PiecewiseG, k: f64) -> Self {
        let d = policy.derived(k);
        SafetyParams {
            a: policy.a(),
            k,
            v_max: d.v_max,
            lambda: Some(policy.lambda()),
            r_margin: Some(d.r_margin),
        }
    }

    /// Parameters for a controller without a policy (physical constraints only).
    pub fn physical(a: f64, k: f64, v_max: f64) -> Self {
        SafetyParams {
            a,
            k,
            v_max,
            lambda: None,
            r_margin: None,
        }
    }
}

/// `Full` enforces the relative-speed gap term; `PhysicalOnly` enforces
/// `s_i > a` and `0 < v_i < v_max` and merely reports the relative term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorMode {
    Full,
    PhysicalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// `s_i > a`.
    Gap,
    /// `s_i > a + max(0, v_i - v_{i-1}) / k`.
    RelativeGap,
    /// `v_i > 0`.
    SpeedPositive,
    /// `v_i < v_max`.
    SpeedLimit,
}

impl Constraint {
    pub const ALL: [Constraint; 4] = [
        Constraint::Gap,
        Constraint::RelativeGap,
        Constraint::SpeedPositive,
        Constraint::SpeedLimit,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Constraint::Gap => "gap",
            Constraint::RelativeGap => "relative_gap",
            Constraint::SpeedPositive => "speed_positive",
            Constraint::SpeedLimit => "speed_limit",
        }
    }

    fn threshold(self) -> f64 {
        match self {
            Constraint::SpeedPositive | Constraint::SpeedLimit => 0.0,
            Constraint::Gap | Constraint::RelativeGap => STRICT_SLACK,
        }
    }

    fn enforced(self, mode: MonitorMode) -> bool {
        !(mode == MonitorMode::PhysicalOnly && self == Constraint::RelativeGap)
    }
}

/// Per-family minimum slack over the platoon at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slacks {
    pub gap: f64,
    pub relative_gap: f64,
    pub speed_positive: f64,
    pub speed_limit: f64,
}

impl Slacks {
    pub fn get(&self, c: Constraint) -> f64 {
        match c {
            Constraint::Gap => self.gap,
            Constraint::RelativeGap => self.relative_gap,
            Constraint::SpeedPositive => self.speed_positive,
            Constraint::SpeedLimit => self.speed_limit,
        }
    }
}

fn vehicle_slacks(s: f64, v: f64, w: f64, p: &SafetyParams) -> Slacks {
    Slacks {
        gap: s - p.a,
        relative_gap: s - p.a - (v - w).max(0.0) / p.k,
        speed_positive: v,
        speed_limit: p.v_max - v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetCheck {
    pub inside: bool,
    pub min: Slacks,
    /// Vehicle (0-based) attaining each minimum, in `Constraint::ALL` order.
    pub argmin: [usize; 4],
}

/// Membership test. `v0` is the leader speed on an open road; pass `v[n-1]` on a ring.
pub fn in_safe_set(s: &[f64], v: &[f64], v0: f64, params: &SafetyParams, mode: MonitorMode) -> SafeSetCheck {
    let mut min = Slacks {
        gap: f64::INFINITY,
        relative_gap: f64::INFINITY,
        speed_positive: f64::INFINITY,
        speed_limit: f64::INFINITY,
    };
    let mut argmin = [0; 4];
    for i in 0..s.len() {
        let w = if i == 0 { v0 } else { v[i - 1] };
        let sl = vehicle_slacks(s[i], v[i], w, params);
        for (c, slot) in Constraint::ALL.iter().zip(argmin.iter_mut()) {
            let x = sl.get(*c);
            if x < min.get(*c) || x.is_nan() {
                *slot = i;
                match c {
                    Constraint::Gap => min.gap = x,
                    Constraint::RelativeGap => min.relative_gap = x,
                    Constraint::SpeedPositive => min.speed_positive = x,
                    Constraint::SpeedLimit => min.speed_limit = x,
                }
            }
        }
    }
    let inside = Constraint::ALL
        .iter()
        .filter(|c| c.enforced(mode))
        .all(|c| min.get(*c) > c.threshold());
    SafeSetCheck { inside, min, argmin }
}

/// `Σ_i [1/(s_i - a) + 1/(s_i - a - (v_i - v_{i-1})/k) + 1/v_i + 1/(v_max - v_i)]`.
pub fn barrier_phi(s: &[f64], v: &[f64], v0: f64, params: &SafetyParams) -> Result<f64> {
    let mut phi = 0.0;
    for i in 0..s.len() {
        let w = if i == 0 { v0 } else { v[i - 1] };
        let dens = [
            s[i] - params.a,
            s[i] - params.a - (v[i] - w) / params.k,
            v[i],
            params.v_max - v[i],
        ];
        if let Some(d) = dens.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Boundary(format!("vehicle {} has barrier denominator {d}", i + 1)));
        }
        phi += dens.iter().map(|d| 1.0 / d).sum::<f64>();
    }
    Ok(phi)
}

/// Upper bound on `Φ(t)` given `Φ(0)`, valid while the state stays in the safe set:
/// `e^{kt} Φ(0) + n v_max / (k r²) (e^{kt} - 1)`.
pub fn barrier_bound(phi0: f64, t: f64, n: usize, params: &SafetyParams, r: f64) -> f64 {
    let e = (params.k * t).exp();
    e * phi0 + n as f64 * params.v_max / (params.k * r * r) * (e - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: f64,
    /// 0-based vehicle index.
    pub vehicle: usize,
    pub constraint: Constraint,
    pub slack: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.vehicle + 1;
        let what = match self.constraint {
            Constraint::Gap => format!("collision: s_{i} <= a"),
            Constraint::RelativeGap => format!("relative gap: s_{i} <= a + max(0, v_{i} - v_{}) / k", i - 1),
            Constraint::SpeedPositive => format!("non-positive speed: v_{i} <= 0"),
            Constraint::SpeedLimit => format!("speed limit: v_{i} >= v_max"),
        };
        write!(f, "{what} at t = {:.3} (slack {:.6e})", self.t, self.slack)
    }
}

/// Extremum of one constraint family across a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackExtremum {
    pub slack: f64,
    pub t: f64,
    pub vehicle: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiBoundCheck {
    pub window_end: f64,
    pub samples: usize,
    /// Largest `Φ(t) / bound(t)` inside the window.
    pub max_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub mode: MonitorMode,
    pub samples: usize,
    pub first_violation: Option<Violation>,
    /// In `Constraint::ALL` order.
    pub min_slack: [SlackExtremum; 4],
    /// `Φ` per sample; NaN where the state is not strictly inside.
    pub phi: Vec<f64>,
    /// Per-sample minimum slacks.
    pub rows: Vec<Slacks>,
    /// `None` when not applicable (physical-only mode, a violation, or `r <= 0`).
    pub phi_bound: Option<PhiBoundCheck>,
    pub min_speed: f64,
    pub max_speed: f64,
}

impl SafetyReport {
    pub fn safe(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn min_slack_of(&self, c: Constraint) -> SlackExtremum {
        self.min_slack[Constraint::ALL.iter().position(|x| *x == c).expect("constraint listed")]
    }
}

impl fmt::Display for SafetyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            MonitorMode::Full => "full",
            MonitorMode::PhysicalOnly => "physical_only",
        };
        writeln!(f, "monitor_mode: {mode}")?;
        writeln!(f, "samples: {}", self.samples)?;
        match &self.first_violation {
            None => writeln!(f, "safety: no violation")?,
            Some(v) => writeln!(f, "safety: {v}")?,
        }
        for (c, e) in Constraint::ALL.iter().zip(&self.min_slack) {
            writeln!(
                f,
                "min_slack_{}: {:.9e} (vehicle {}, t = {:.3})",
                c.label(),
                e.slack,
                e.vehicle + 1,
                e.t
            )?;
        }
        writeln!(f, "min_speed: {:.9e}", self.min_speed)?;
        writeln!(f, "max_speed: {:.9}", self.max_speed)?;
        match &self.phi_bound {
            None => write!(f, "barrier_bound: not applicable"),
            Some(b) => write!(
                f,
                "barrier_bound: {} (max ratio {:.6e} over t <= {:.4}, {} samples)",
                if b.passed { "pass" } else { "FAIL" },
                b.max_ratio,
                b.window_end,
                b.samples
            ),
        }
    }
}

/// Checks every recorded sample against the safe set and, when the run never
/// leaves it and `r_margin > 0`, `Φ` against its growth bound on `[0, 5/k]`.
pub fn monitor_trajectory(traj: &Trajectory, params: &SafetyParams, mode: MonitorMode) -> SafetyReport {
    let mut first = None;
    let mut min_slack = [SlackExtremum {
        slack: f64::INFINITY,
        t: 0.0,
        vehicle: 0,
    }; 4];
    let mut phi = Vec::with_capacity(traj.len());
    let mut rows = Vec::with_capacity(traj.len());
    let (mut min_speed, mut max_speed) = (f64::INFINITY, f64::NEG_INFINITY);

    for j in 0..traj.len() {
        let (s, v, v0, t) = (traj.s_at(j), traj.v_at(j), traj.v0[j], traj.times[j]);
        let check = in_safe_set(s, v, v0, params, mode);
        for (idx, c) in Constraint::ALL.iter().enumerate() {
            let x = check.min.get(*c);
            if x < min_slack[idx].slack {
                min_slack[idx] = SlackExtremum {
                    slack: x,
                    t,
                    vehicle: check.argmin[idx],
                };
            }
            if first.is_none() && c.enforced(mode) && !(x > c.threshold()) {
                first = Some(Violation {
                    t,
                    vehicle: check.argmin[idx],
                    constraint: *c,
                    slack: x,
                });
            }
        }
        for &x in v {
            min_speed = min_speed.min(x);
            max_speed = max_speed.max(x);
        }
        phi.push(barrier_phi(s, v, v0, params).unwrap_or(f64::NAN));
        rows.push(check.min);
    }

    let phi_bound = match (mode, &first, params.r_margin) {
        (MonitorMode::Full, None, Some(r)) if r > 0.0 && !traj.is_empty() => {
            let t0 = traj.times[0];
            let window_end = t0 + 5.0 / params.k;
            let mut max_ratio: f64 = 0.0;
            let mut samples = 0;
            for j in 0..traj.len() {
                let t = traj.times[j];
                if t > window_end {
                    break;
                }
                let bound = barrier_bound(phi[0], t - t0, traj.n, params, r);
                max_ratio = max_ratio.max(phi[j] / bound);
                samples += 1;
            }
            Some(PhiBoundCheck {
                window_end,
                samples,
                max_ratio,
                passed: max_ratio <= 1.0 + 1e-6,
            })
        }
        _ => None,
    };

    SafetyReport {
        mode,
        samples: traj.len(),
        first_violation: first,
        min_slack,
        phi,
        rows,
        phi_bound,
        min_speed,
        max_speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_params() -> SafetyParams {
        SafetyParams::from_policy(&PiecewiseG::ramp(5.0, 7.1, 19.0, 0.26).unwrap(), 2.0)
    }

    #[test]
    fn scenario_three_start_is_inside() {
        let p = SafetyParams::physical(5.0, 1.2, 30.6);
        let chk = in_safe_set(&[25.0], &[30.0], 10.0, &p, MonitorMode::Full);
        assert!(chk.inside);
        let threshold = 5.0 + 20.0 / 1.2;
        assert!((threshold - 21.666_666_666_666_668_f64).abs() < 1e-12);
        assert!((chk.min.relative_gap - (25.0 - threshold)).abs() < 1e-12);
        assert!(!in_safe_set(&[21.0], &[30.0], 10.0, &p, MonitorMode::Full).inside);
    }

    #[test]
    fn equilibrium_and_ring_start_are_inside() {
        let p = ring_params();
        let eq = in_safe_set(&[10.75; 4], &[0.915; 4], 0.915, &p, MonitorMode::Full);
        assert!(eq.inside);
        assert!((eq.min.relative_gap - 5.75).abs() < 1e-12);
        let v = [0.8, 1.5, 1.25, 0.75];
        let chk = in_safe_set(&[10.0, 11.0, 12.0, 10.0], &v, v[3], &p, MonitorMode::Full);
        assert!(chk.inside);
        // Vehicle 1 closes on vehicle 4 at 0.05 m/s: 10 - 5 - 0.025.
        assert!((chk.min.relative_gap - 4.975).abs() < 1e-12);
        assert_eq!(chk.argmin[1], 0);
    }

    #[test]
    fn physical_mode_ignores_relative_term() {
        let p = SafetyParams::physical(5.0, 1.2, 30.6);
        assert!(in_safe_set(&[6.0], &[20.0], 5.0, &p, MonitorMode::PhysicalOnly).inside);
        assert!(!in_safe_set(&[6.0], &[20.0], 5.0, &p, MonitorMode::Full).inside);
        assert!(!in_safe_set(&[4.9], &[20.0], 25.0, &p, MonitorMode::PhysicalOnly).inside);
    }

    #[test]
    fn speed_positivity_has_no_slack_floor() {
        let p = SafetyParams::physical(5.0, 1.2, 30.6);
        assert!(in_safe_set(&[10.0], &[1e-40], 1e-40, &p, MonitorMode::Full).inside);
        assert!(!in_safe_set(&[10.0], &[0.0], 1.0, &p, MonitorMode::Full).inside);
        assert!(!in_safe_set(&[5.0 + 1e-13], &[1.0], 1.0, &p, MonitorMode::Full).inside);
    }

    #[test]
    fn barrier_at_ring_equilibrium() {
        let p = SafetyParams { v_max: 3.32, ..ring_params() };
        let phi = barrier_phi(&[10.75; 4], &[0.915; 4], 0.915, &p).unwrap();
        let oracle = 4.0 * (1.0 / 5.75 + 1.0 / 5.75 + 1.0 / 0.915 + 1.0 / 2.405);
        assert!((phi - oracle).abs() < 1e-12);
        assert!((phi - 7.426).abs() < 1e-3);
    }

    #[test]
    fn barrier_single_vehicle_and_boundary() {
        let p = ring_params();
        let vm = p.v_max;
        let phi = barrier_phi(&[6.0], &[vm / 2.0], vm / 2.0, &p).unwrap();
        assert!((phi - (2.0 + 4.0 / vm)).abs() < 1e-12);
        assert!(matches!(barrier_phi(&[6.0], &[vm], vm, &p), Err(Error::Boundary(_))));
        assert!(matches!(barrier_phi(&[5.0], &[1.0], 1.0, &p), Err(Error::Boundary(_))));
    }

    #[test]
    fn barrier_bound_at_zero_is_phi0() {
        let p = ring_params();
        assert_eq!(barrier_bound(3.5, 0.0, 4, &p, 0.44), 3.5);
        assert!(barrier_bound(3.5, 1.0, 4, &p, 0.44) > 3.5 * 2f64.exp());
    }
}

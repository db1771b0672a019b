//! Fixed-step RK4 integration of the platoon
//!
//! ```text
//! ṡ_i = v_{i-1} - v_i,   v̇_i = F(s_i, v_{i-1}, v_i),   i = 1..n
//! ```
//!
//! with `v_0` an external leader speed on an open road, or `v_0 = v_n` on a ring.

use serde::{Deserialize, Serialize};

use crate::controller::ControllerSpec;
use crate::error::{invalid, Error, Result};

/// Gaps `s_i` (to the predecessor) and speeds `v_i` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl PlatoonState {
    pub fn new(s: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if s.len() != v.len() || s.is_empty() {
            return Err(invalid(format!(
                "gap and speed vectors must be non-empty and equal length ({} vs {})",
                s.len(),
                v.len()
            )));
        }
        Ok(PlatoonState { s, v, t: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    /// All gaps `s_star`, all speeds `v_star`.
    pub fn uniform(n: usize, s_star: f64, v_star: f64) -> Self {
        PlatoonState {
            s: vec![s_star; n],
            v: vec![v_star; n],
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Open,
    Ring { length: f64 },
}

/// One leg of a piecewise leader profile: from `start` on, the speed relaxes
/// exponentially toward `target` at `rate`, starting from wherever it was.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpSegment {
    pub start: f64,
    pub target: f64,
    pub rate: f64,
}

/// Leader speed `v_0(t)` on an open road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeaderProfile {
    Constant { speed: f64 },
    /// `target + (initial - target) exp(-rate t)`.
    ExpApproach { initial: f64, target: f64, rate: f64 },
    /// Constant `initial` until the first segment starts; segments are sorted by start.
    PiecewiseExp { initial: f64, segments: Vec<ExpSegment> },
    /// Linear interpolation of recorded samples, held constant outside their span.
    Tabulated { times: Vec<f64>, speeds: Vec<f64> },
}

fn relax(from: f64, target: f64, rate: f64, dt: f64) -> (f64, f64) {
    let e = (-rate * dt).exp();
    (target + (from - target) * e, -rate * (from - target) * e)
}

impl LeaderProfile {
    /// `(v_0(t), v̇_0(t))` in closed form.
    pub fn speed(&self, t: f64) -> (f64, f64) {
        match self {
            LeaderProfile::Constant { speed } => (*speed, 0.0),
            LeaderProfile::ExpApproach { initial, target, rate } => relax(*initial, *target, *rate, t),
            LeaderProfile::PiecewiseExp { initial, segments } => {
                let mut current = (*initial, 0.0);
                for (j, seg) in segments.iter().enumerate() {
                    if t < seg.start {
                        break;
                    }
                    let end = segments.get(j + 1).map_or(f64::INFINITY, |next| next.start);
                    let span = t.min(end) - seg.start;
                    current = relax(current.0, seg.target, seg.rate, span);
                    if t < end {
                        return current;
                    }
                    current.1 = 0.0;
                }
                current
            }
            LeaderProfile::Tabulated { times, speeds } => {
                let j = times.partition_point(|x| *x <= t);
                if j == 0 {
                    return (speeds[0], 0.0);
                }
                if j == times.len() {
                    return (speeds[j - 1], 0.0);
                }
                let (t0, t1, v0, v1) = (times[j - 1], times[j], speeds[j - 1], speeds[j]);
                let slope = (v1 - v0) / (t1 - t0);
                (v0 + slope * (t - t0), slope)
            }
        }
    }

    fn check_tabulated(times: &[f64], speeds: &[f64], k: f64, v_max: f64) -> std::result::Result<(), String> {
        if times.is_empty() || times.len() != speeds.len() {
            return Err("tabulated leader needs equally long, non-empty times and speeds".into());
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("tabulated leader times must be strictly increasing".into());
        }
        if let Some(v) = speeds.iter().find(|v| !(**v > 0.0 && **v < v_max)) {
            return Err(format!("tabulated leader speed {v} outside (0, {v_max})"));
        }
        // Along a linear piece v̇ >= -k v is tightest at the lower endpoint.
        for (tw, vw) in times.windows(2).zip(speeds.windows(2)) {
            let slope = (vw[1] - vw[0]) / (tw[1] - tw[0]);
            if slope < -k * vw[1] {
                return Err(format!("tabulated leader decelerates faster than k v_0 after t = {}", tw[0]));
            }
        }
        Ok(())
    }

    fn legs(&self) -> (f64, Vec<(f64, f64)>) {
        match self {
            LeaderProfile::Constant { speed } => (*speed, vec![]),
            LeaderProfile::ExpApproach { initial, target, rate } => (*initial, vec![(*target, *rate)]),
            LeaderProfile::PiecewiseExp { initial, segments } => {
                (*initial, segments.iter().map(|s| (s.target, s.rate)).collect())
            }
            LeaderProfile::Tabulated { speeds, .. } => (speeds.first().copied().unwrap_or(f64::NAN), vec![]),
        }
    }

    /// Checks `v̇_0 >= -k v_0` and `0 < v_0 < v_max` for all `t >= 0`.
    ///
    /// Every leg relaxes monotonically toward its target, so the speed stays in
    /// the hull of the initial speed and the targets reached so far; a leg with
    /// `rate <= k` and `target >= 0` satisfies the deceleration bound.
    pub fn check_admissible(&self, k: f64, v_max: f64) -> std::result::Result<(), String> {
        if let LeaderProfile::Tabulated { times, speeds } = self {
            return Self::check_tabulated(times, speeds, k, v_max);
        }
        let (initial, legs) = self.legs();
        if !(initial > 0.0 && initial < v_max) {
            return Err(format!("initial leader speed {initial} outside (0, {v_max})"));
        }
        if let LeaderProfile::PiecewiseExp { segments, .. } = self {
            if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
                return Err("piecewise segments must have strictly increasing start times".into());
            }
            if segments.first().is_some_and(|s| s.start < 0.0) {
                return Err("piecewise segments must start at t >= 0".into());
            }
        }
        for (target, rate) in legs {
            if !(rate >= 0.0 && rate <= k) {
                return Err(format!("leader rate {rate} outside [0, k = {k}]"));
            }
            if !(target >= 0.0 && target < v_max) {
                return Err(format!("leader target {target} outside [0, {v_max})"));
            }
        }
        Ok(())
    }
}

/// Time derivative of the platoon state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub ds: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Right-hand side at `state`; `v0` is ignored on a ring, where `v_0 = v_n`.
pub fn rhs(state: &PlatoonState, spec: &ControllerSpec, topology: Topology, v0: f64) -> StateDerivative {
    let n = state.n();
    let mut ds = vec![0.0; n];
    let mut dv = vec![0.0; n];
    eval_rhs(&state.s, &state.v, spec, topology, v0, &mut ds, &mut dv);
    StateDerivative { ds, dv }
}

fn eval_rhs(s: &[f64], v: &[f64], spec: &ControllerSpec, topology: Topology, v0: f64, ds: &mut [f64], dv: &mut [f64]) {
    let n = s.len();
    let lead = match topology {
        Topology::Open => v0,
        Topology::Ring { .. } => v[n - 1],
    };
    for i in 0..n {
        let w = if i == 0 { lead } else { v[i - 1] };
        ds[i] = w - v[i];
        dv[i] = spec.accel(s[i], w, v[i]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    pub horizon: f64,
    /// Record every `output_stride`-th step; the final step is always recorded.
    pub output_stride: usize,
    pub halt_on_violation: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: 1e-3,
            horizon: 120.0,
            output_stride: 10,
            halt_on_violation: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub scenario_hash: Option<String>,
    pub dt: f64,
    pub output_stride: usize,
    /// Time of the first step whose state failed the halt predicate.
    pub halted_at: Option<f64>,
}

/// Recorded samples in row-major flat storage: sample `j`, vehicle `i` lives at `j * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub topology: Topology,
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    /// Control inputs `u_i = F(s_i, v_{i-1}, v_i)` at each sample.
    pub u: Vec<f64>,
    /// Predecessor speed of vehicle 1 (the leader, or `v_n` on a ring).
    pub v0: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    fn with_capacity(n: usize, topology: Topology, samples: usize, meta: TrajectoryMeta) -> Self {
        Trajectory {
            n,
            topology,
            times: Vec::with_capacity(samples),
            s: Vec::with_capacity(samples * n),
            v: Vec::with_capacity(samples * n),
            u: Vec::with_capacity(samples * n),
            v0: Vec::with_capacity(samples),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn s_at(&self, j: usize) -> &[f64] {
        &self.s[j * self.n..(j + 1) * self.n]
    }

    pub fn v_at(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    pub fn u_at(&self, j: usize) -> &[f64] {
        &self.u[j * self.n..(j + 1) * self.n]
    }

    pub fn state(&self, j: usize) -> PlatoonState {
        PlatoonState {
            s: self.s_at(j).to_vec(),
            v: self.v_at(j).to_vec(),
            t: self.times[j],
        }
    }

    /// Predecessor speed of vehicle `i` (0-based) at sample `j`.
    pub fn predecessor_speed(&self, j: usize, i: usize) -> f64 {
        if i == 0 {
            self.v0[j]
        } else {
            self.v[j * self.n + i - 1]
        }
    }

    /// Series of gap `i` over all samples.
    pub fn gap_series(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.s[j * self.n + i]).collect()
    }

    /// Series of speed `i` over all samples.
    pub fn speed_series(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.v[j * self.n + i]).collect()
    }

    fn push(&mut self, t: f64, s: &[f64], v: &[f64], v0: f64, spec: &ControllerSpec) {
        self.times.push(t);
        self.s.extend_from_slice(s);
        self.v.extend_from_slice(v);
        for i in 0..self.n {
            let w = if i == 0 { v0 } else { v[i - 1] };
            self.u.push(spec.accel(s[i], w, v[i]));
        }
        self.v0.push(v0);
    }
}

/// A closed-loop platoon ready to integrate.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: ControllerSpec,
    pub topology: Topology,
    /// Ignored on a ring.
    pub leader: LeaderProfile,
    pub settings: SimSettings,
}

/// Predicate on `(t, s, v, v0)`; returning `false` halts a run with `halt_on_violation`.
pub type HaltPredicate<'a> = &'a (dyn Fn(f64, &[f64], &[f64], f64) -> bool + Sync);

impl Simulation {
    fn leader_speed(&self, t: f64, v: &[f64]) -> f64 {
        match self.topology {
            Topology::Open => self.leader.speed(t).0,
            Topology::Ring { .. } => v[v.len() - 1],
        }
    }

    pub fn run(&self, initial: &PlatoonState) -> Result<Trajectory> {
        self.run_monitored(initial, None)
    }

    /// Integrates from `initial.t` over the horizon. When `halt_on_violation`
    /// is set and `inside` rejects a step, that step is recorded and the run stops.
    pub fn run_monitored(&self, initial: &PlatoonState, inside: Option<HaltPredicate<'_>>) -> Result<Trajectory> {
        let SimSettings {
            dt,
            horizon,
            output_stride,
            halt_on_violation,
        } = self.settings;
        if !(dt > 0.0 && dt.is_finite() && horizon >= 0.0 && output_stride >= 1) {
            return Err(invalid(format!(
                "need dt > 0, horizon >= 0, stride >= 1 (dt = {dt}, horizon = {horizon}, stride = {output_stride})"
            )));
        }
        if initial.s.len() != initial.v.len() || initial.s.is_empty() {
            return Err(invalid("initial state has mismatched or empty vectors"));
        }
        let n = initial.n();
        if matches!(self.topology, Topology::Ring { .. }) && n < 2 {
            return Err(invalid("a ring needs at least two vehicles"));
        }
        let steps = (horizon / dt).round() as usize;
        let meta = TrajectoryMeta {
            scenario_hash: None,
            dt,
            output_stride,
            halted_at: None,
        };
        let mut traj = Trajectory::with_capacity(n, self.topology, steps / output_stride + 2, meta);

        // The nonlinear family is integrated in (s, w) with w = v - G(s), where
        // ẇ_i = -(k - g(s_i)) w_i holds exactly; the manifold w = 0 is then
        // preserved to rounding and kinks of g only enter through w.
        let manifold = match &self.spec {
            ControllerSpec::NonlinearAcc { policy, k, .. } => Some((policy, *k)),
            _ => None,
        };
        let to_speed = |s: &[f64], y: &[f64], v: &mut [f64]| match manifold {
            Some((p, _)) => {
                for i in 0..n {
                    v[i] = p.equilibrium_speed_unchecked(s[i]) + y[i];
                }
            }
            None => v.copy_from_slice(y),
        };

        let t0 = initial.t;
        let mut s = initial.s.clone();
        let mut v = initial.v.clone();
        let mut y: Vec<f64> = match manifold {
            Some((p, _)) => s.iter().zip(&v).map(|(s, v)| v - p.equilibrium_speed_unchecked(*s)).collect(),
            None => v.clone(),
        };
        let mut stages = [(); 4].map(|_| (vec![0.0; n], vec![0.0; n]));
        let (mut ts, mut ty, mut tv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut dv = vec![0.0; n];

        traj.push(t0, &s, &v, self.leader_speed(t0, &v), &self.spec);
        if halt_on_violation && inside.is_some_and(|f| !f(t0, &s, &v, self.leader_speed(t0, &v))) {
            traj.meta.halted_at = Some(t0);
            return Ok(traj);
        }

        for step in 1..=steps {
            let t = t0 + (step - 1) as f64 * dt;
            let stage_times = [t, t + 0.5 * dt, t + 0.5 * dt, t + dt];
            let scales = [0.0, 0.5 * dt, 0.5 * dt, dt];
            for st in 0..4 {
                if st == 0 {
                    ts.copy_from_slice(&s);
                    ty.copy_from_slice(&y);
                } else {
                    let (ps, py) = &stages[st - 1];
                    for i in 0..n {
                        ts[i] = s[i] + scales[st] * ps[i];
                        ty[i] = y[i] + scales[st] * py[i];
                    }
                }
                to_speed(&ts, &ty, &mut tv);
                let lead = match self.topology {
                    Topology::Open => self.leader.speed(stage_times[st]).0,
                    Topology::Ring { .. } => tv[n - 1],
                };
                let (ks, ky) = &mut stages[st];
                match manifold {
                    Some((p, k)) => {
                        eval_rhs(&ts, &tv, &self.spec, self.topology, lead, ks, &mut dv);
                        for i in 0..n {
                            ky[i] = -(k - p.gain(ts[i])) * ty[i];
                        }
                    }
                    None => eval_rhs(&ts, &tv, &self.spec, self.topology, lead, ks, ky),
                }
            }
            for i in 0..n {
                s[i] += dt / 6.0 * (stages[0].0[i] + 2.0 * stages[1].0[i] + 2.0 * stages[2].0[i] + stages[3].0[i]);
                y[i] += dt / 6.0 * (stages[0].1[i] + 2.0 * stages[1].1[i] + 2.0 * stages[2].1[i] + stages[3].1[i]);
            }
            to_speed(&s, &y, &mut v);
            let t_new = t0 + step as f64 * dt;
            if s.iter().chain(&v).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteState { t: t_new });
            }
            let lead = self.leader_speed(t_new, &v);
            let halted = halt_on_violation && inside.is_some_and(|f| !f(t_new, &s, &v, lead));
            if step % output_stride == 0 || step == steps || halted {
                traj.push(t_new, &s, &v, lead, &self.spec);
            }
            if halted {
                traj.meta.halted_at = Some(t_new);
                break;
            }
        }
        Ok(traj)
    }
}

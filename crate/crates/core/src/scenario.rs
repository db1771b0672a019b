//! Scenario configuration (TOML), validation, the built-in scenario library and
//! the simulate → monitor → analyze pipeline.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    g_manifold_l2_check, l2_string_check, linf_string_check, lyapunov_open_road, lyapunov_ring,
    manifold_contraction_check, InequalityCheck, LyapunovConfig,
    ManifoldContractionReport, OpenRoadLyapunovReport, RingLyapunovReport, StringStabilityParams,
};
use crate::controller::ControllerSpec;
use crate::error::{config, Error, Result};
use crate::safety::{in_safe_set, monitor_trajectory, Constraint, MonitorMode, SafetyParams, SafetyReport};
use crate::simulator::{ExpSegment, LeaderProfile, PlatoonState, SimSettings, Simulation, Topology, Trajectory};
use crate::spacing_policy::{
    validate_gain_conditions, validate_ring_contraction, PiecewiseG, RingContractionReport, ScanGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyConfig {
    Open,
    Ring { length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadConfig {
    /// Vehicle length / minimum admissible gap `a`.
    pub min_gap: f64,
    /// Road speed limit; required for constant-time-gap runs, informational otherwise
    /// (the nonlinear controller derives `v_max` from its policy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PolicyConfig {
    Ramp { lambda: f64, gamma: f64, g_max: f64 },
    Tabulated { knots: Vec<[f64; 2]>, tail_rate: f64 },
}

impl PolicyConfig {
    pub fn build(&self, a: f64) -> Result<PiecewiseG> {
        match self {
            PolicyConfig::Ramp { lambda, gamma, g_max } => PiecewiseG::ramp(a, *lambda, *gamma, *g_max),
            PolicyConfig::Tabulated { knots, tail_rate } => PiecewiseG::tabulated(a, knots.clone(), *tail_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    NonlinearAcc {
        k: f64,
        /// Run even if the policy fails the gain conditions.
        #[serde(default)]
        allow_invalid: bool,
        policy: PolicyConfig,
    },
    Ctg { k: f64, gain: f64, standstill: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    /// Skip the safe-set check on the initial state.
    #[serde(default)]
    pub allow_unsafe_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to 120 s on an open road, 200 s on a ring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default)]
    pub halt_on_violation: bool,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_stride() -> usize {
    10
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: default_dt(),
            horizon: None,
            output_stride: default_stride(),
            halt_on_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    /// Open-road Lyapunov weight `c`.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Ring Lyapunov weight; defaults to twice the smallest admissible value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_c: Option<f64>,
    /// Ring sector slope `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Ring sector width `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    /// Reference equilibrium speed; defaults to the leader's final speed (open
    /// road) or `G(L / n)` (ring).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<f64>,
}

fn default_q_grid() -> Vec<f64> {
    StringStabilityParams::DEFAULT_Q_GRID.to_vec()
}

fn default_c() -> f64 {
    1.0
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            q_grid: default_q_grid(),
            c: default_c(),
            ring_c: None,
            p: None,
            m: None,
            v_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub topology: TopologyConfig,
    pub road: RoadConfig,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderProfile>,
    pub initial: InitialConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn is_ring(&self) -> bool {
        matches!(self.topology, TopologyConfig::Ring { .. })
    }

    /// Checks every structural invariant and builds the runnable scenario.
    pub fn validate(&self) -> Result<Scenario> {
        let into_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.build().map_err(into_config)
    }

    fn build(&self) -> Result<Scenario> {
        let n = self.n;
        let a = self.road.min_gap;
        if n == 0 {
            return Err(config("n must be at least 1"));
        }
        if self.initial.s.len() != n || self.initial.v.len() != n {
            return Err(config(format!(
                "initial vectors must have length n = {n} (got s: {}, v: {})",
                self.initial.s.len(),
                self.initial.v.len()
            )));
        }
        if self.initial.s.iter().chain(&self.initial.v).any(|x| !x.is_finite()) {
            return Err(config("initial state must be finite"));
        }
        if !(a > 0.0) {
            return Err(config(format!("road.min_gap must be positive, got {a}")));
        }
        let mut notes = Vec::new();

        let (spec, safety, mode) = match &self.controller {
            ControllerConfig::NonlinearAcc { k, allow_invalid, policy } => {
                let policy = policy.build(a)?;
                let report = validate_gain_conditions(&policy, *k, ScanGrid::default());
                let spec = if *allow_invalid {
                    if !report.passed() {
                        let failed: Vec<_> = report.checks().iter().filter(|c| !c.passed).map(|c| c.name).collect();
                        notes.push(format!("policy fails gain conditions ({}); run allowed", failed.join(", ")));
                    }
                    ControllerSpec::nonlinear_acc_unvalidated(policy.clone(), *k)?
                } else {
                    ControllerSpec::nonlinear_acc(policy.clone(), *k)?
                };
                if let Some(limit) = self.road.speed_limit {
                    if (limit - policy.v_max()).abs() > 1e-9 * limit {
                        notes.push(format!(
                            "stated speed limit {limit} differs from the policy's computed v_max {}; using the computed value",
                            policy.v_max()
                        ));
                    }
                }
                (spec, SafetyParams::from_policy(&policy, *k), MonitorMode::Full)
            }
            ControllerConfig::Ctg { k, gain, standstill } => {
                let spec = ControllerSpec::ctg(*k, *gain, *standstill)?;
                let limit = self
                    .road
                    .speed_limit
                    .ok_or_else(|| config("road.speed_limit is required for constant-time-gap runs"))?;
                (spec, SafetyParams::physical(a, *k, limit), MonitorMode::PhysicalOnly)
            }
        };

        let topology = match self.topology {
            TopologyConfig::Open => Topology::Open,
            TopologyConfig::Ring { length } => {
                if n < 2 {
                    return Err(config("a ring needs at least two vehicles"));
                }
                let total: f64 = self.initial.s.iter().sum();
                if (total - length).abs() > 1e-9 * length.abs().max(1.0) {
                    return Err(config(format!("initial gaps sum to {total}, ring length is {length}")));
                }
                if let Some(lambda) = safety.lambda {
                    if !(length > n as f64 * lambda) {
                        return Err(config(format!("ring length {length} must exceed n * lambda = {}", n as f64 * lambda)));
                    }
                }
                Topology::Ring { length }
            }
        };

        let leader = match (topology, &self.leader) {
            (Topology::Open, None) => return Err(config("an open-road scenario needs a [leader] table")),
            (Topology::Open, Some(l)) => {
                l.check_admissible(safety.k, safety.v_max).map_err(|e| config(format!("leader: {e}")))?;
                l.clone()
            }
            (Topology::Ring { .. }, None) => LeaderProfile::Constant { speed: 0.0 },
            (Topology::Ring { .. }, Some(_)) => return Err(config("a ring scenario takes no [leader] table")),
        };

        let initial = PlatoonState::new(self.initial.s.clone(), self.initial.v.clone())?;
        let v0 = match topology {
            Topology::Open => leader.speed(0.0).0,
            Topology::Ring { .. } => initial.v[n - 1],
        };
        let start = in_safe_set(&initial.s, &initial.v, v0, &safety, mode);
        if !start.inside {
            if self.initial.allow_unsafe_start {
                notes.push("initial state is outside the safe set; run allowed".into());
            } else {
                return Err(config(format!(
                    "initial state is outside the safe set (min slacks: gap {:.6}, relative gap {:.6}, speed {:.6}, speed limit {:.6})",
                    start.min.gap, start.min.relative_gap, start.min.speed_positive, start.min.speed_limit
                )));
            }
        }

        let horizon = self.sim.horizon.unwrap_or(match topology {
            Topology::Open => 120.0,
            Topology::Ring { .. } => 200.0,
        });
        if !(self.sim.dt > 0.0 && horizon > 0.0 && self.sim.output_stride >= 1) {
            return Err(config("sim needs dt > 0, horizon > 0 and output_stride >= 1"));
        }
        if self.analysis.q_grid.iter().any(|q| !(*q > 0.0)) {
            return Err(config("analysis.q_grid entries must be positive"));
        }
        if !(self.analysis.c > 0.0) {
            return Err(config("analysis.c must be positive"));
        }

        let v_star = match (self.analysis.v_star, topology, spec.policy()) {
            (Some(v), ..) => Some(v),
            (None, Topology::Ring { length }, Some(p)) => Some(p.equilibrium_speed(length / n as f64)?),
            (None, Topology::Open, _) => Some(final_speed(&leader)),
            _ => None,
        };

        let simulation = Simulation {
            spec,
            topology,
            leader,
            settings: SimSettings {
                dt: self.sim.dt,
                horizon,
                output_stride: self.sim.output_stride,
                halt_on_violation: self.sim.halt_on_violation,
            },
        };
        Ok(Scenario {
            config: self.clone(),
            hash: self.hash()?,
            simulation,
            initial,
            safety,
            mode,
            v_star,
            notes,
        })
    }
}

fn final_speed(leader: &LeaderProfile) -> f64 {
    match leader {
        LeaderProfile::Constant { speed } => *speed,
        LeaderProfile::ExpApproach { target, .. } => *target,
        LeaderProfile::PiecewiseExp { initial, segments } => segments.last().map_or(*initial, |s| s.target),
        LeaderProfile::Tabulated { speeds, .. } => speeds.last().copied().unwrap_or(f64::NAN),
    }
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub hash: String,
    pub simulation: Simulation,
    pub initial: PlatoonState,
    pub safety: SafetyParams,
    pub mode: MonitorMode,
    /// Reference equilibrium speed for the analyses.
    pub v_star: Option<f64>,
    pub notes: Vec<String>,
}

impl Scenario {
    pub fn spec(&self) -> &ControllerSpec {
        &self.simulation.spec
    }

    /// Equilibrium gap matching `v_star` (`L / n` on a ring).
    pub fn s_star(&self) -> Option<f64> {
        let policy = self.spec().policy()?;
        match self.simulation.topology {
            Topology::Ring { length } => Some(length / self.config.n as f64),
            Topology::Open => policy.equilibrium_spacing(self.v_star?).ok(),
        }
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        let params = self.safety;
        let mode = self.mode;
        let inside = move |_t: f64, s: &[f64], v: &[f64], v0: f64| in_safe_set(s, v, v0, &params, mode).inside;
        let mut traj = self.simulation.run_monitored(&self.initial, Some(&inside))?;
        traj.meta.scenario_hash = Some(self.hash.clone());
        Ok(traj)
    }

    /// Simulates and analyzes.
    pub fn run(&self) -> Result<RunOutcome> {
        let traj = self.simulate()?;
        self.analyze(traj)
    }

    /// Monitors and analyzes an existing trajectory of this scenario.
    pub fn analyze(&self, mut traj: Trajectory) -> Result<RunOutcome> {
        if traj.n != self.config.n {
            return Err(config(format!("trajectory has {} vehicles, scenario has {}", traj.n, self.config.n)));
        }
        traj.topology = self.simulation.topology;
        let safety = monitor_trajectory(&traj, &self.safety, self.mode);
        let analysis = self.analysis_bundle(&traj)?;
        let lyapunov = self.lyapunov_series(&traj, &analysis);
        Ok(RunOutcome {
            scenario_name: self.config.name.clone(),
            notes: self.notes.clone(),
            trajectory: traj,
            safety,
            analysis,
            lyapunov,
        })
    }

    fn analysis_bundle(&self, traj: &Trajectory) -> Result<AnalysisBundle> {
        let mut out = AnalysisBundle::default();
        if let Topology::Ring { length } = self.simulation.topology {
            let drift = (0..traj.len())
                .map(|j| (traj.s_at(j).iter().sum::<f64>() - length).abs())
                .fold(0.0, f64::max);
            out.ring_length_drift = Some((drift, length));
        }
        let (Some(policy), Some(v_star)) = (self.spec().policy(), self.v_star) else {
            return Ok(out);
        };
        let k = self.spec().k();
        if traj.is_empty() {
            return Ok(out);
        }
        let params = match self.simulation.topology {
            Topology::Ring { length } if self.config.analysis.v_star.is_none() => {
                StringStabilityParams::at_spacing(policy, length / self.config.n as f64, self.config.analysis.q_grid.clone())?
            }
            _ => StringStabilityParams::new(policy, v_star, self.config.analysis.q_grid.clone())?,
        };
        out.string_stability.extend(l2_string_check(traj, &params, policy, k));
        out.string_stability.extend(g_manifold_l2_check(traj, &params, policy, k));
        out.string_stability.push(linf_string_check(traj, &params, policy));
        out.manifold = Some(manifold_contraction_check(traj, policy, k));

        match (self.simulation.topology, &self.simulation.leader) {
            (Topology::Open, LeaderProfile::Constant { speed }) => {
                let cfg = LyapunovConfig::new(self.config.analysis.c, traj.n)?;
                out.open_road_lyapunov = Some(lyapunov_open_road(traj, policy, k, &cfg, *speed)?);
            }
            (Topology::Ring { length }, _) => {
                if let (Some(p), Some(m)) = (self.config.analysis.p, self.config.analysis.m) {
                    out.ring_condition = Some(validate_ring_contraction(policy, length, traj.n, p, m, ScanGrid::default())?);
                    out.ring_lyapunov =
                        Some(lyapunov_ring(traj, policy, k, p, m, length, self.config.analysis.ring_c)?);
                }
            }
            _ => {}
        }
        Ok(out)
    }

    fn lyapunov_series(&self, traj: &Trajectory, analysis: &AnalysisBundle) -> Vec<f64> {
        if let Some(r) = &analysis.open_road_lyapunov {
            return r.values.clone();
        }
        if let Some(r) = &analysis.ring_lyapunov {
            return r.values.clone();
        }
        vec![f64::NAN; traj.len()]
    }
}

/// Results of the analysis stage.
#[derive(Debug, Clone, Default)]
pub struct AnalysisBundle {
    pub string_stability: Vec<InequalityCheck>,
    pub manifold: Option<ManifoldContractionReport>,
    pub open_road_lyapunov: Option<OpenRoadLyapunovReport>,
    pub ring_condition: Option<RingContractionReport>,
    pub ring_lyapunov: Option<RingLyapunovReport>,
    /// `(max |Σ s_i - L|, L)`.
    pub ring_length_drift: Option<(f64, f64)>,
}

impl AnalysisBundle {
    pub fn ring_conserved(&self) -> bool {
        self.ring_length_drift.is_none_or(|(d, l)| d <= 1e-9 * l)
    }

    pub fn passed(&self) -> bool {
        self.string_stability.iter().all(|c| c.passed)
            && self.manifold.as_ref().is_none_or(|m| m.check.passed)
            && self.open_road_lyapunov.as_ref().is_none_or(|l| l.passed())
            && self.ring_condition.as_ref().is_none_or(|r| r.passed())
            && self.ring_lyapunov.as_ref().is_none_or(|r| r.passed())
            && self.ring_conserved()
    }
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Pass,
    SafetyViolation,
    CheckFailed,
}

impl RunStatus {
    pub fn code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::SafetyViolation => 2,
            RunStatus::CheckFailed => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario_name: String,
    pub notes: Vec<String>,
    pub trajectory: Trajectory,
    pub safety: SafetyReport,
    pub analysis: AnalysisBundle,
    /// Lyapunov value per sample; NaN when no Lyapunov function applies.
    pub lyapunov: Vec<f64>,
}

impl RunOutcome {
    pub fn status(&self) -> RunStatus {
        let barrier_ok = self.safety.phi_bound.as_ref().is_none_or(|b| b.passed);
        if !self.safety.safe() {
            RunStatus::SafetyViolation
        } else if !self.analysis.passed() || !barrier_ok {
            RunStatus::CheckFailed
        } else {
            RunStatus::Pass
        }
    }

    /// Structured `key: value` report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}", self.scenario_name);
        if let Some(h) = &self.trajectory.meta.scenario_hash {
            let _ = writeln!(out, "scenario_hash: {h}");
        }
        if let Some(t) = self.trajectory.meta.halted_at {
            let _ = writeln!(out, "halted_at: {t}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let _ = writeln!(out, "{}", self.safety);
        for c in &self.analysis.string_stability {
            let _ = writeln!(out, "{c}");
        }
        if let Some(m) = &self.analysis.manifold {
            let _ = writeln!(out, "{m}");
        }
        if let Some(l) = &self.analysis.open_road_lyapunov {
            let _ = writeln!(out, "{l}");
        }
        if let Some(r) = &self.analysis.ring_condition {
            let _ = writeln!(out, "{r}");
        }
        if let Some(r) = &self.analysis.ring_lyapunov {
            let _ = writeln!(out, "{r}");
        }
        if let Some((d, l)) = self.analysis.ring_length_drift {
            let _ = writeln!(
                out,
                "ring_length_drift: {d:.3e} ({})",
                if d <= 1e-9 * l { "conserved" } else { "FAIL" }
            );
        }
        let status = self.status();
        let _ = writeln!(out, "status: {status} (exit code {})", status.code());
        out
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Pass => "pass",
            RunStatus::SafetyViolation => "safety violation",
            RunStatus::CheckFailed => "check failed",
        })
    }
}

/// Identifiers of the built-in scenarios.
pub const BUILTIN_IDS: [&str; 7] = ["s1_ctg", "s1_nl", "s2_ctg", "s2_nl", "s3_ctg", "s3_nl", "ring"];

fn open_road_policy() -> PolicyConfig {
    PolicyConfig::Ramp { lambda: 30.5, gamma: 62.1, g_max: 1.0 }
}

/// Built-in scenario configuration by id.
pub fn builtin(id: &str) -> Option<ScenarioConfig> {
    let n = 5;
    let road = RoadConfig { min_gap: 5.0, speed_limit: Some(30.1) };
    let nonlinear = ControllerConfig::NonlinearAcc { k: 1.2, allow_invalid: true, policy: open_road_policy() };
    let ctg = |standstill: f64| ControllerConfig::Ctg { k: 1.2, gain: 1.0, standstill };
    let cruise = LeaderProfile::Constant { speed: 27.0 };
    let slow_down = LeaderProfile::ExpApproach { initial: 27.0, target: 5.4, rate: 1.2 };
    let crawl = LeaderProfile::PiecewiseExp {
        initial: 10.0,
        segments: vec![ExpSegment { start: 0.0, target: 1.0, rate: 1.2 }],
    };
    let initial = |s: Vec<f64>, v: Vec<f64>| InitialConfig { s, v, allow_unsafe_start: false };
    let s3_gaps = {
        let mut s = vec![15.0; n];
        s[0] = 25.0;
        s
    };
    let open = |name: &str, controller: ControllerConfig, leader: LeaderProfile, init: InitialConfig| ScenarioConfig {
        name: name.to_string(),
        n,
        topology: TopologyConfig::Open,
        road: road.clone(),
        controller,
        leader: Some(leader),
        initial: init,
        sim: SimConfig::default(),
        analysis: AnalysisConfig::default(),
    };
    Some(match id {
        "s1_ctg" => open(id, ctg(31.0), cruise, initial(vec![68.0; n], vec![27.0; n])),
        "s1_nl" => open(id, nonlinear, cruise, initial(vec![68.0; n], vec![27.0; n])),
        "s2_ctg" => open(id, ctg(31.0), slow_down, initial(vec![20.0; n], vec![27.0; n])),
        "s2_nl" => open(id, nonlinear, slow_down, initial(vec![20.0; n], vec![27.0; n])),
        "s3_ctg" => open(id, ctg(33.0), crawl, initial(s3_gaps, vec![30.0; n])),
        "s3_nl" => open(id, nonlinear, crawl, initial(s3_gaps, vec![30.0; n])),
        "ring" => ScenarioConfig {
            name: id.to_string(),
            n: 4,
            topology: TopologyConfig::Ring { length: 43.0 },
            road: RoadConfig { min_gap: 5.0, speed_limit: None },
            controller: ControllerConfig::NonlinearAcc {
                k: 2.0,
                allow_invalid: false,
                policy: PolicyConfig::Ramp { lambda: 7.1, gamma: 19.0, g_max: 0.26 },
            },
            leader: None,
            initial: initial(vec![10.0, 11.0, 12.0, 10.0], vec![0.8, 1.5, 1.25, 0.75]),
            sim: SimConfig::default(),
            analysis: AnalysisConfig { p: Some(0.26), m: Some(0.96 * 0.26 / 2.0), ..AnalysisConfig::default() },
        },
        _ => return None,
    })
}

/// One qualitative expectation for a built-in scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub description: String,
    /// Observed values backing the verdict.
    pub detail: String,
    pub passed: bool,
    /// The claim asserts that a baseline controller fails.
    pub expected_failure: bool,
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.description, if self.passed { "PASS" } else { "FAIL" })?;
        if self.expected_failure && self.passed {
            write!(f, " (expected failure reproduced)")?;
        }
        if !self.detail.is_empty() {
            write!(f, " [{}]", self.detail)?;
        }
        Ok(())
    }
}

/// Largest per-component distance of the final sample from `(s*, v*)`.
pub fn terminal_error(traj: &Trajectory, s_star: f64, v_star: f64) -> f64 {
    let last = traj.len() - 1;
    traj.s_at(last)
        .iter()
        .map(|s| (s - s_star).abs())
        .chain(traj.v_at(last).iter().map(|v| (v - v_star).abs()))
        .fold(0.0, f64::max)
}

/// Expected qualitative outcomes of a built-in scenario run.
pub fn claims(id: &str, scenario: &Scenario, outcome: &RunOutcome) -> Vec<Claim> {
    let traj = &outcome.trajectory;
    let safety = &outcome.safety;
    let claim = |description: &str, detail: String, passed: bool| Claim {
        description: description.to_string(),
        detail,
        passed,
        expected_failure: false,
    };
    let failure = |description: &str, detail: String, passed: bool| Claim {
        expected_failure: true,
        ..claim(description, detail, passed)
    };
    match id {
        "s1_ctg" => vec![failure(
            "max speed 30.1 exceeded",
            format!("max speed {:.4}", safety.max_speed),
            safety.max_speed > 30.1,
        )],
        "s2_ctg" => vec![failure(
            "negative speed reached",
            format!("min speed {:.4}", safety.min_speed),
            safety.min_speed < 0.0,
        )],
        "s3_ctg" => {
            let min_s2 = traj.gap_series(1).into_iter().fold(f64::INFINITY, f64::min);
            vec![failure("collision: s_2 < 5", format!("min s_2 {min_s2:.4}"), min_s2 < 5.0)]
        }
        "s1_nl" | "s2_nl" | "s3_nl" => {
            let v_max = scenario.safety.v_max;
            let min_gap = safety.min_slack_of(Constraint::Gap).slack + scenario.safety.a;
            let (s_star, v_star) = (scenario.s_star().unwrap_or(f64::NAN), scenario.v_star.unwrap_or(f64::NAN));
            let err = terminal_error(traj, s_star, v_star);
            vec![
                claim(
                    "all v_i in (0, v_max)",
                    format!("observed [{:.3e}, {:.4}], v_max {v_max:.4}", safety.min_speed, safety.max_speed),
                    safety.min_speed > 0.0 && safety.max_speed < v_max,
                ),
                claim("all s_i > 5", format!("min gap {min_gap:.4}"), min_gap > 5.0),
                claim(
                    "terminal state within 1e-3 of equilibrium",
                    format!("({s_star:.4}, {v_star:.4}), error {err:.3e}"),
                    err <= 1e-3,
                ),
                claim("no safety violation", String::new(), safety.safe()),
                claim("string stability and contraction estimates hold", String::new(), outcome.analysis.passed()),
            ]
        }
        "ring" => {
            let a = &outcome.analysis;
            let lyap = a.ring_lyapunov.as_ref();
            let drift = a.ring_length_drift.map_or(f64::NAN, |d| d.0);
            vec![
                claim("no safety violation", String::new(), safety.safe()),
                claim(
                    "GES: V monotone decreasing",
                    lyap.and_then(|l| l.fit).map_or(String::new(), |f| format!("log-fit slope {:.4}", f.slope)),
                    lyap.is_some_and(|l| l.monotone && l.fit.is_some_and(|f| f.slope < 0.0)),
                ),
                claim("sum of s_i = 43 conserved", format!("max drift {drift:.3e}"), a.ring_conserved()),
                claim("exponential stability certificates hold", String::new(), a.passed()),
            ]
        }
        _ => vec![],
    }
}

/// A built-in scenario run together with its claim verdicts.
#[derive(Debug, Clone)]
pub struct Reproduction {
    pub id: String,
    pub scenario: Scenario,
    pub outcome: RunOutcome,
    pub claims: Vec<Claim>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }
}

/// Runs one built-in scenario and evaluates its claims.
pub fn reproduce(id: &str) -> Result<Reproduction> {
    let cfg = builtin(id).ok_or_else(|| config(format!("unknown scenario id {id:?}; known: {}", BUILTIN_IDS.join(", "))))?;
    let scenario = cfg.validate()?;
    let outcome = scenario.run()?;
    let claims = claims(id, &scenario, &outcome);
    Ok(Reproduction { id: id.to_string(), scenario, outcome, claims })
}

/// Runs independent built-in scenarios concurrently, results in input order.
pub fn reproduce_many(ids: &[&str]) -> Vec<Result<Reproduction>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = ids.iter().map(|id| scope.spawn(move || reproduce(id))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(config("scenario worker panicked"))))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for id in BUILTIN_IDS {
            let cfg = builtin(id).unwrap();
            let sc = cfg.validate().unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(sc.config.name, id);
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn builtin_round_trips_through_toml() {
        for id in BUILTIN_IDS {
            let cfg = builtin(id).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn ring_sum_mismatch_is_config_error() {
        let mut cfg = builtin("ring").unwrap();
        cfg.initial.s[0] += 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unsafe_start_needs_flag() {
        let mut cfg = builtin("s3_nl").unwrap();
        cfg.initial.s[0] = 20.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.initial.allow_unsafe_start = true;
        let sc = cfg.validate().unwrap();
        assert!(sc.notes.iter().any(|n| n.contains("outside the safe set")));
    }

    #[test]
    fn invalid_policy_needs_flag() {
        let mut cfg = builtin("s1_nl").unwrap();
        if let ControllerConfig::NonlinearAcc { allow_invalid, .. } = &mut cfg.controller {
            *allow_invalid = false;
        }
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn inadmissible_leader_rejected() {
        let mut cfg = builtin("s2_nl").unwrap();
        cfg.leader = Some(LeaderProfile::ExpApproach { initial: 27.0, target: 5.4, rate: 1.5 });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn vector_length_mismatch_rejected() {
        let mut cfg = builtin("s1_nl").unwrap();
        cfg.initial.v.pop();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parses_minimal_toml() {
        let text = r#"
name = "mini"
n = 2

[topology]
kind = "open"

[road]
min_gap = 5.0

[controller]
kind = "nonlinear_acc"
k = 2.0

[controller.policy]
shape = "ramp"
lambda = 7.1
gamma = 19.0
g_max = 0.26

[leader]
kind = "constant"
speed = 0.9

[initial]
s = [12.0, 12.0]
v = [0.9, 0.9]
"#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let sc = cfg.validate().unwrap();
        assert_eq!(sc.simulation.settings.horizon, 120.0);
        assert_eq!(sc.simulation.settings.output_stride, 10);
        assert_eq!(sc.v_star, Some(0.9));
        assert!(ScenarioConfig::from_toml("name = 1").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = builtin("s1_nl").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.sim.dt = 2e-3;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_reproduce_id_is_config_error() {
        assert!(matches!(reproduce("s4"), Err(Error::Config(_))));
    }

    #[test]
    fn claim_display() {
        let c = Claim { description: "max speed 30.1 exceeded".into(), detail: String::new(), passed: true, expected_failure: true };
        assert_eq!(c.to_string(), "max speed 30.1 exceeded: PASS (expected failure reproduced)");
    }
}

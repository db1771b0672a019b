//! Fundamental diagram `Q(ρ) = ρ v(ρ)` induced by a controller, and the
//! macroscopic stability condition `dQ/dρ > 0`.

use std::fmt;

use crate::error::{domain, Result};
use crate::numerics::linspace;
use crate::spacing_policy::PiecewiseG;

#[derive(Debug, Clone, PartialEq)]
pub enum FdModel {
    /// `v = G(1/ρ)`.
    Nonlinear(PiecewiseG),
    /// `v = g (1 - r ρ) / ρ`; `speed_limit` sets the reference line `Q = ρ v_max`.
    Ctg { gain: f64, standstill: f64, a: f64, speed_limit: f64 },
}

impl FdModel {
    pub fn a(&self) -> f64 {
        match self {
            FdModel::Nonlinear(p) => p.a(),
            FdModel::Ctg { a, .. } => *a,
        }
    }

    pub fn v_max(&self) -> f64 {
        match self {
            FdModel::Nonlinear(p) => p.v_max(),
            FdModel::Ctg { speed_limit, .. } => *speed_limit,
        }
    }

    fn speed(&self, rho: f64) -> f64 {
        match self {
            FdModel::Nonlinear(p) => p.equilibrium_speed_unchecked(1.0 / rho),
            FdModel::Ctg { gain, standstill, .. } => gain * (1.0 - standstill * rho) / rho,
        }
    }

    fn flow(&self, rho: f64) -> f64 {
        match self {
            FdModel::Nonlinear(p) => rho * p.equilibrium_speed_unchecked(1.0 / rho),
            FdModel::Ctg { gain, standstill, .. } => gain * (1.0 - standstill * rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdPoint {
    pub rho: f64,
    pub v: f64,
    pub q: f64,
    /// Reference flow `ρ v_max`.
    pub rho_vmax: f64,
}

/// Evaluates the diagram on `rho_grid`; every density must lie in `(0, 1/a)`.
pub fn fundamental_diagram(model: &FdModel, rho_grid: &[f64]) -> Result<Vec<FdPoint>> {
    let rho_jam = 1.0 / model.a();
    let v_max = model.v_max();
    rho_grid
        .iter()
        .map(|&rho| {
            if !(rho > 0.0 && rho < rho_jam) {
                return Err(domain(format!("density {rho} outside (0, {rho_jam})")));
            }
            Ok(FdPoint {
                rho,
                v: model.speed(rho),
                q: model.flow(rho),
                rho_vmax: rho * v_max,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroscopicReport {
    /// Maximal grid sub-intervals with `dQ/dρ > 0`.
    pub holds: Vec<(f64, f64)>,
    /// Maximal grid sub-intervals with `dQ/dρ <= 0`.
    pub fails: Vec<(f64, f64)>,
    /// Largest `Q - ρ v_max` on the grid; positive means the speed line is crossed.
    pub max_excess_over_speed_line: f64,
    pub excess_at: f64,
    pub max_slope: f64,
    pub points: usize,
}

impl MacroscopicReport {
    pub fn respects_speed_line(&self) -> bool {
        self.max_excess_over_speed_line <= 1e-12
    }
}

impl fmt::Display for MacroscopicReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_iv = |ivs: &[(f64, f64)]| {
            if ivs.is_empty() {
                "none".to_string()
            } else {
                ivs.iter().map(|(a, b)| format!("[{a:.6}, {b:.6}]")).collect::<Vec<_>>().join(" ")
            }
        };
        writeln!(f, "macroscopic_stable_intervals: {}", fmt_iv(&self.holds))?;
        writeln!(f, "macroscopic_unstable_intervals: {}", fmt_iv(&self.fails))?;
        write!(
            f,
            "speed_line: {} (max excess {:.6e} at rho = {:.6})",
            if self.respects_speed_line() { "respected" } else { "crossed" },
            self.max_excess_over_speed_line,
            self.excess_at
        )
    }
}

/// Central-difference slope of `Q` on `points` uniform densities in `[lo, hi] ⊂ (0, 1/a)`.
pub fn macroscopic_stability_check(model: &FdModel, lo: f64, hi: f64, points: usize) -> Result<MacroscopicReport> {
    let rho_jam = 1.0 / model.a();
    if !(lo > 0.0 && hi < rho_jam && lo < hi && points >= 2) {
        return Err(domain(format!("density interval [{lo}, {hi}] must lie in (0, {rho_jam}) with >= 2 points")));
    }
    let grid = linspace(lo, hi, points);
    let h = 1e-7 * rho_jam;
    let v_max = model.v_max();
    let mut holds = Vec::new();
    let mut fails = Vec::new();
    let mut run: Option<(bool, f64, f64)> = None;
    let (mut max_excess, mut excess_at, mut max_slope) = (f64::NEG_INFINITY, lo, f64::NEG_INFINITY);
    for &rho in &grid {
        let (a, b) = ((rho - h).max(0.5 * rho), (rho + h).min(0.5 * (rho + rho_jam)));
        let slope = (model.flow(b) - model.flow(a)) / (b - a);
        max_slope = max_slope.max(slope);
        let excess = model.flow(rho) - rho * v_max;
        if excess > max_excess {
            max_excess = excess;
            excess_at = rho;
        }
        let ok = slope > 0.0;
        run = match run {
            Some((state, start, _)) if state == ok => Some((state, start, rho)),
            Some((state, start, end)) => {
                if state { &mut holds } else { &mut fails }.push((start, end));
                Some((ok, rho, rho))
            }
            None => Some((ok, rho, rho)),
        };
    }
    if let Some((state, start, end)) = run {
        if state { &mut holds } else { &mut fails }.push((start, end));
    }
    Ok(MacroscopicReport {
        holds,
        fails,
        max_excess_over_speed_line: max_excess,
        excess_at,
        max_slope,
        points,
    })
}

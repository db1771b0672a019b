//! Sufficient-condition validators for spacing policies and general
//! `f(s) + g(s) w - κ(s) v` feedback laws.
//!
//! Conditions quantified over every gap `s` are checked on a uniform grid plus
//! all branch knots, which is exact for piecewise-linear gains.

use std::fmt;
use std::sync::Arc;

use super::PiecewiseG;
use crate::error::{domain, Result};
use crate::numerics::linspace;

/// Sampling of the gap axis used by the validators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub points: usize,
    /// Upper end of the scan; defaults per validator when `None`.
    pub s_max: Option<f64>,
}

impl Default for ScanGrid {
    fn default() -> Self {
        ScanGrid {
            points: 10_000,
            s_max: None,
        }
    }
}

impl ScanGrid {
    fn samples(&self, lo: f64, default_hi: f64, knots: &[f64]) -> Vec<f64> {
        let hi = self.s_max.map_or(default_hi, |m| m.max(default_hi));
        let mut pts = linspace(lo, hi, self.points.max(2));
        pts.extend(knots.iter().copied().filter(|&k| k >= lo && k <= hi));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Outcome of one sufficient condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest slack observed; negative means violated.
    pub worst_margin: f64,
    /// Gap at which the worst margin occurred, if it is grid-based.
    pub worst_at: Option<f64>,
}

impl ConditionCheck {
    fn scalar(name: &'static str, margin: f64, passed: bool) -> Self {
        ConditionCheck {
            name,
            passed,
            worst_margin: margin,
            worst_at: None,
        }
    }
}

impl fmt::Display for ConditionCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (worst margin {:.6e}",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.worst_margin
        )?;
        if let Some(s) = self.worst_at {
            write!(f, " at s = {s:.6}")?;
        }
        write!(f, ")")
    }
}

/// Tracks the minimum of a margin over a scan.
struct Worst {
    margin: f64,
    at: Option<f64>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            at: None,
        }
    }

    fn update(&mut self, margin: f64, s: f64) {
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.at = Some(s);
        }
    }

    fn check(self, name: &'static str, passed: impl Fn(f64) -> bool) -> ConditionCheck {
        let margin = if self.at.is_none() { 0.0 } else { self.margin };
        ConditionCheck {
            name,
            passed: passed(margin),
            worst_margin: margin,
            worst_at: self.at,
        }
    }
}

/// Report for the conditions that make a gain `g` yield a safe, string-stable
/// controller `(k - g(s)) G(s) + g(s) w - k v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConditionsReport {
    /// `g(s) > 0` beyond the engagement distance.
    pub gain_positive: ConditionCheck,
    /// `g(s) <= g_max` beyond the engagement distance.
    pub gain_bounded: ConditionCheck,
    /// `v_max < k (lambda - a)`.
    pub speed_limit_reachable: ConditionCheck,
    /// `g = 0` on `[a, lambda]`.
    pub dead_zone: ConditionCheck,
    /// `k > g_max`.
    pub gain_dominated: ConditionCheck,
    pub v_max: f64,
    pub braking_reach: f64,
    pub r_margin: f64,
}

impl GainConditionsReport {
    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn checks(&self) -> [&ConditionCheck; 5] {
        [
            &self.gain_positive,
            &self.gain_bounded,
            &self.speed_limit_reachable,
            &self.dead_zone,
            &self.gain_dominated,
        ]
    }
}

impl fmt::Display for GainConditionsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.checks() {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "v_max: {:.6}", self.v_max)?;
        writeln!(f, "k_times_engagement: {:.6}", self.braking_reach)?;
        write!(f, "r_margin: {:.6}", self.r_margin)
    }
}

/// Checks the gain conditions for the nonlinear adaptive cruise controller.
pub fn validate_gain_conditions(policy: &PiecewiseG, k: f64, grid: ScanGrid) -> GainConditionsReport {
    let a = policy.a();
    let lambda = policy.lambda();
    let g_max = policy.g_max();
    let pts = grid.samples(a, (policy.gamma() + 30.0).max(lambda + 30.0), policy.knots());

    let mut positive = Worst::new();
    let mut bounded = Worst::new();
    let mut dead = Worst::new();
    for &s in &pts {
        let g = policy.gain(s);
        if s > lambda {
            positive.update(g, s);
            bounded.update(g_max - g, s);
        } else {
            dead.update(-g.abs(), s);
        }
    }

    let v_max = policy.v_max();
    let reach = k * (lambda - a);
    GainConditionsReport {
        gain_positive: positive.check("gain_positive_beyond_engagement", |m| m > 0.0),
        gain_bounded: bounded.check("gain_bounded_by_g_max", |m| m >= 0.0),
        speed_limit_reachable: ConditionCheck::scalar(
            "speed_limit_below_braking_reach",
            reach - v_max,
            v_max < reach,
        ),
        dead_zone: dead.check("gain_zero_on_dead_zone", |m| m == 0.0),
        gain_dominated: ConditionCheck::scalar("k_exceeds_g_max", k - g_max, k > g_max),
        v_max,
        braking_reach: reach,
        r_margin: lambda - a - v_max / k,
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A feedback law `F(s, w, v) = f(s) + g(s) w - κ(s) v` with its design constants.
#[derive(Clone)]
pub struct GeneralLaw {
    pub offset: ScalarFn,
    pub gain: ScalarFn,
    pub damping: ScalarFn,
    pub k: f64,
    pub lambda: f64,
    pub a: f64,
    pub v_max: f64,
}

impl fmt::Debug for GeneralLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralLaw")
            .field("k", &self.k)
            .field("lambda", &self.lambda)
            .field("a", &self.a)
            .field("v_max", &self.v_max)
            .finish_non_exhaustive()
    }
}

impl GeneralLaw {
    pub fn new(
        offset: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gain: impl Fn(f64) -> f64 + Send + Sync + 'static,
        damping: impl Fn(f64) -> f64 + Send + Sync + 'static,
        k: f64,
        lambda: f64,
        a: f64,
        v_max: f64,
    ) -> Self {
        GeneralLaw {
            offset: Arc::new(offset),
            gain: Arc::new(gain),
            damping: Arc::new(damping),
            k,
            lambda,
            a,
            v_max,
        }
    }

    /// The general-form representation of the nonlinear controller built on `policy`.
    pub fn from_policy(policy: &PiecewiseG, k: f64) -> Self {
        let (p1, p2) = (policy.clone(), policy.clone());
        GeneralLaw::new(
            move |s| (k - p1.gain(s)) * p1.equilibrium_speed_unchecked(s),
            move |s| p2.gain(s),
            move |_| k,
            k,
            policy.lambda(),
            policy.a(),
            policy.v_max(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralConditionsReport {
    /// `f >= 0` and `g >= 0`.
    pub nonnegative: ConditionCheck,
    /// `g < κ`.
    pub gain_below_damping: ConditionCheck,
    /// `κ <= k`.
    pub damping_below_k: ConditionCheck,
    /// `f / (κ - g) <= v_max`.
    pub offset_ratio: ConditionCheck,
    /// `v_max < k (lambda - a)`.
    pub speed_limit_reachable: ConditionCheck,
    /// `f = g = 0` and `κ = k` on `[a, lambda]`.
    pub dead_zone: ConditionCheck,
}

impl GeneralConditionsReport {
    pub fn checks(&self) -> [&ConditionCheck; 6] {
        [
            &self.nonnegative,
            &self.gain_below_damping,
            &self.damping_below_k,
            &self.offset_ratio,
            &self.speed_limit_reachable,
            &self.dead_zone,
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Checks the safety conditions of a general feedback law on `[a, s_max]`.
pub fn validate_general_conditions(law: &GeneralLaw, grid: ScanGrid) -> GeneralConditionsReport {
    let default_hi = (10.0 * law.lambda).max(law.lambda + 100.0);
    let pts = grid.samples(law.a, default_hi, &[law.lambda]);
    let mut nonneg = Worst::new();
    let mut below = Worst::new();
    let mut damp = Worst::new();
    let mut ratio = Worst::new();
    let mut dead = Worst::new();
    for &s in &pts {
        let (f, g, kappa) = ((law.offset)(s), (law.gain)(s), (law.damping)(s));
        nonneg.update(f.min(g), s);
        below.update(kappa - g, s);
        damp.update(law.k - kappa, s);
        if kappa > g {
            ratio.update(law.v_max - f / (kappa - g), s);
        } else {
            ratio.update(f64::NEG_INFINITY, s);
        }
        if s <= law.lambda {
            let dev = f.abs().max(g.abs()).max((kappa - law.k).abs());
            dead.update(-dev, s);
        }
    }
    let reach = law.k * (law.lambda - law.a);
    GeneralConditionsReport {
        nonnegative: nonneg.check("offset_and_gain_nonnegative", |m| m >= 0.0),
        gain_below_damping: below.check("gain_below_damping", |m| m > 0.0),
        damping_below_k: damp.check("damping_at_most_k", |m| m >= 0.0),
        offset_ratio: ratio.check("offset_ratio_at_most_v_max", |m| m >= 0.0),
        speed_limit_reachable: ConditionCheck::scalar(
            "speed_limit_below_braking_reach",
            reach - law.v_max,
            law.v_max < reach,
        ),
        dead_zone: dead.check("dead_zone_exact", |m| m >= -1e-12),
    }
}

/// Smallest cyclic-difference energy `Σ (x_i - x_{i-1})^2` over unit vectors with
/// zero sum and `x_0 = x_n`: the algebraic connectivity of the `n`-cycle.
pub fn mu_n(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(domain(format!("mu_n needs n >= 2, got {n}")));
    }
    Ok((1..n).map(|j| 2.0 - 2.0 * cos_turn(j, n)).fold(f64::INFINITY, f64::min))
}

/// `cos(2π j / n)`, exact at multiples of a quarter or sixth turn.
fn cos_turn(j: usize, n: usize) -> f64 {
    let j = j % n;
    if (4 * j).is_multiple_of(n) {
        [1.0, 0.0, -1.0, 0.0][4 * j / n]
    } else if (6 * j).is_multiple_of(n) {
        [1.0, 0.5, -0.5, -1.0, -0.5, 0.5][6 * j / n]
    } else {
        (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()
    }
}

/// Report for the sector condition `|G(s) - v* - p (s - s*)| <= M |s - s*|`
/// that gives exponential stability on a ring road.
#[derive(Debug, Clone, PartialEq)]
pub struct RingContractionReport {
    pub s_star: f64,
    pub v_star: f64,
    pub mu_n: f64,
    /// `p * mu_n / 4`; `M` must lie strictly below.
    pub m_ceiling: f64,
    pub m_below_ceiling: bool,
    /// Largest sector ratio over the scan (including the limit at `s*`).
    pub worst_ratio: f64,
    pub worst_at: f64,
    /// `|g(s*) - p|`, the ratio's limit at the equilibrium gap.
    pub limit_ratio: f64,
    pub sector_holds: bool,
}

impl RingContractionReport {
    pub fn passed(&self) -> bool {
        self.m_below_ceiling && self.sector_holds
    }
}

impl fmt::Display for RingContractionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "s_star: {:.9}", self.s_star)?;
        writeln!(f, "v_star: {:.9}", self.v_star)?;
        writeln!(f, "mu_n: {:.9}", self.mu_n)?;
        writeln!(f, "m_ceiling: {:.9} ({})", self.m_ceiling, if self.m_below_ceiling { "pass" } else { "FAIL" })?;
        write!(
            f,
            "sector_worst_ratio: {:.9} at s = {:.6} ({})",
            self.worst_ratio,
            self.worst_at,
            if self.sector_holds { "pass" } else { "FAIL" }
        )
    }
}

/// Checks the ring-road stability condition for `n` vehicles on a ring of length `ring_length`.
pub fn validate_ring_contraction(
    policy: &PiecewiseG,
    ring_length: f64,
    n: usize,
    p: f64,
    m: f64,
    grid: ScanGrid,
) -> Result<RingContractionReport> {
    let mu = mu_n(n)?;
    let nf = n as f64;
    if !(ring_length > nf * policy.lambda()) {
        return Err(domain(format!(
            "ring length {ring_length} must exceed n * lambda = {}",
            nf * policy.lambda()
        )));
    }
    if !(p > 0.0) {
        return Err(domain(format!("p must be positive, got {p}")));
    }
    let a = policy.a();
    let s_star = ring_length / nf;
    let v_star = policy.equilibrium_speed(s_star)?;
    let hi = ring_length - (nf - 1.0) * a;
    let pts = ScanGrid { s_max: None, ..grid }.samples(a, hi, policy.knots());

    let limit = (policy.gain(s_star) - p).abs();
    let (mut worst, mut worst_at) = (limit, s_star);
    for &s in &pts {
        let d = s - s_star;
        if d.abs() < 1e-6 {
            continue;
        }
        let ratio = (policy.equilibrium_speed_unchecked(s) - v_star - p * d).abs() / d.abs();
        if ratio > worst {
            worst = ratio;
            worst_at = s;
        }
    }
    let ceiling = p * mu / 4.0;
    Ok(RingContractionReport {
        s_star,
        v_star,
        mu_n: mu,
        m_ceiling: ceiling,
        m_below_ceiling: m < ceiling,
        worst_ratio: worst,
        worst_at,
        limit_ratio: limit,
        sector_holds: worst <= m,
    })
}

//! Spacing-policy gain `g(s)`, its integral `G(s)` (the equilibrium speed at
//! gap `s`) and the constants derived from them.
//!
//! Every supported shape is stored as a piecewise-linear gain on a finite set
//! of knots followed by an exponential tail, so `G`, `∫G` and the Lyapunov
//! potential all have exact closed forms.

mod validate;

pub use validate::{
    mu_n, validate_gain_conditions, validate_general_conditions, validate_ring_contraction,
    ConditionCheck, GainConditionsReport, GeneralConditionsReport, GeneralLaw,
    RingContractionReport, ScanGrid,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::numerics::bisect;

/// Gain-function family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Zero up to `lambda`, unit-slope ramp up to `g_max`, plateau until
    /// `gamma`, then `g_max * exp(gamma - s)`.
    Ramp,
    /// Linear interpolation through `(s, g)` knots, then
    /// `g_last * exp(-tail_rate * (s - s_last))`.
    Tabulated {
        knots: Vec<[f64; 2]>,
        tail_rate: f64,
    },
}

/// The spacing-policy gain `g` together with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseG {
    a: f64,
    lambda: f64,
    gamma: f64,
    g_max: f64,
    shape: Shape,
    profile: Profile,
}

/// Knot tables with running integrals, precomputed at construction.
#[derive(Debug, Clone, PartialEq)]
struct Profile {
    s: Vec<f64>,
    g: Vec<f64>,
    /// `G` at each knot.
    big_g: Vec<f64>,
    /// `∫_a G` at each knot.
    big_g2: Vec<f64>,
    tail_rate: f64,
}

impl Profile {
    fn build(knots: Vec<(f64, f64)>, tail_rate: f64) -> Self {
        let s: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let g: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let mut big_g = vec![0.0; s.len()];
        let mut big_g2 = vec![0.0; s.len()];
        for j in 1..s.len() {
            let h = s[j] - s[j - 1];
            big_g[j] = big_g[j - 1] + 0.5 * h * (g[j - 1] + g[j]);
            big_g2[j] =
                big_g2[j - 1] + big_g[j - 1] * h + g[j - 1] * h * h / 2.0 + (g[j] - g[j - 1]) * h * h / 6.0;
        }
        Profile {
            s,
            g,
            big_g,
            big_g2,
            tail_rate,
        }
    }

    fn last(&self) -> usize {
        self.s.len() - 1
    }

    /// Index `j` with `s[j] < x <= s[j + 1]`, or `None` when `x` is in the tail.
    fn segment(&self, x: f64) -> Option<usize> {
        let m = self.last();
        if x > self.s[m] {
            return None;
        }
        let idx = self.s.partition_point(|&k| k < x);
        Some(idx.saturating_sub(1).min(m.saturating_sub(1)))
    }

    fn g(&self, x: f64) -> f64 {
        if x <= self.s[0] {
            return 0.0;
        }
        match self.segment(x) {
            Some(j) => {
                let h = self.s[j + 1] - self.s[j];
                let w = (x - self.s[j]) / h;
                self.g[j] + w * (self.g[j + 1] - self.g[j])
            }
            None => {
                let m = self.last();
                self.g[m] * (-self.tail_rate * (x - self.s[m])).exp()
            }
        }
    }

    fn big_g(&self, x: f64) -> f64 {
        if x <= self.s[0] {
            return 0.0;
        }
        match self.segment(x) {
            Some(j) => {
                let h = self.s[j + 1] - self.s[j];
                let d = x - self.s[j];
                self.big_g[j] + self.g[j] * d + (self.g[j + 1] - self.g[j]) * d * d / (2.0 * h)
            }
            None => {
                let m = self.last();
                let d = x - self.s[m];
                self.big_g[m] - self.g[m] * (-self.tail_rate * d).exp_m1() / self.tail_rate
            }
        }
    }

    fn big_g2(&self, x: f64) -> f64 {
        if x <= self.s[0] {
            return 0.0;
        }
        match self.segment(x) {
            Some(j) => {
                let h = self.s[j + 1] - self.s[j];
                let d = x - self.s[j];
                self.big_g2[j]
                    + self.big_g[j] * d
                    + self.g[j] * d * d / 2.0
                    + (self.g[j + 1] - self.g[j]) * d * d * d / (6.0 * h)
            }
            None => {
                let m = self.last();
                let d = x - self.s[m];
                let rho = self.tail_rate;
                self.big_g2[m]
                    + (self.big_g[m] + self.g[m] / rho) * d
                    + self.g[m] / (rho * rho) * (-rho * d).exp_m1()
            }
        }
    }

    fn limit(&self) -> f64 {
        let m = self.last();
        self.big_g[m] + self.g[m] / self.tail_rate
    }
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {x}")))
    }
}

impl PiecewiseG {
    /// Ramp / plateau / exponential-tail gain.
    ///
    /// Requires `lambda >= a > 0`, `g_max > 0` and `gamma > g_max + lambda`.
    /// A policy with `lambda == a` is representable so that the validators can
    /// report it; it never satisfies the speed-limit condition.
    pub fn ramp(a: f64, lambda: f64, gamma: f64, g_max: f64) -> Result<Self> {
        for (n, x) in [("a", a), ("lambda", lambda), ("gamma", gamma), ("g_max", g_max)] {
            finite(n, x)?;
        }
        if a <= 0.0 {
            return Err(invalid(format!("a must be positive, got {a}")));
        }
        if lambda < a {
            return Err(invalid(format!("lambda ({lambda}) must be >= a ({a})")));
        }
        if g_max <= 0.0 {
            return Err(invalid(format!("g_max must be positive, got {g_max}")));
        }
        if gamma <= g_max + lambda {
            return Err(invalid(format!(
                "gamma ({gamma}) must exceed g_max + lambda ({})",
                g_max + lambda
            )));
        }
        let profile = Profile::build(
            vec![(lambda, 0.0), (lambda + g_max, g_max), (gamma, g_max)],
            1.0,
        );
        Ok(PiecewiseG {
            a,
            lambda,
            gamma,
            g_max,
            shape: Shape::Ramp,
            profile,
        })
    }

    /// Tabulated gain. The first knot fixes `lambda` and must carry `g = 0`;
    /// knots must be strictly increasing in `s` with non-negative gains.
    pub fn tabulated(a: f64, knots: Vec<[f64; 2]>, tail_rate: f64) -> Result<Self> {
        finite("a", a)?;
        finite("tail_rate", tail_rate)?;
        if a <= 0.0 {
            return Err(invalid(format!("a must be positive, got {a}")));
        }
        if knots.len() < 2 {
            return Err(invalid("tabulated gain needs at least two knots"));
        }
        if tail_rate <= 0.0 {
            return Err(invalid(format!("tail_rate must be positive, got {tail_rate}")));
        }
        for (i, [s, g]) in knots.iter().enumerate() {
            finite("knot s", *s)?;
            finite("knot g", *g)?;
            if *g < 0.0 {
                return Err(invalid(format!("knot {i} has negative gain {g}")));
            }
            if i > 0 && *s <= knots[i - 1][0] {
                return Err(invalid("knot positions must be strictly increasing"));
            }
        }
        let lambda = knots[0][0];
        if knots[0][1] != 0.0 {
            return Err(invalid("first knot must have zero gain"));
        }
        if lambda < a {
            return Err(invalid(format!("first knot ({lambda}) must be >= a ({a})")));
        }
        let gamma = knots[knots.len() - 1][0];
        let g_max = knots.iter().map(|k| k[1]).fold(0.0, f64::max);
        let profile = Profile::build(knots.iter().map(|k| (k[0], k[1])).collect(), tail_rate);
        Ok(PiecewiseG {
            a,
            lambda,
            gamma,
            g_max,
            shape: Shape::Tabulated { knots, tail_rate },
            profile,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Engagement distance: the gain vanishes on `[a, lambda]`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// End of the plateau (ramp shape) or last knot (tabulated).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Supremum of the gain.
    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Branch points of the gain; the gain is not differentiable there.
    pub fn knots(&self) -> &[f64] {
        &self.profile.s
    }

    /// Gain `g(s)`. Total on the real line.
    pub fn gain(&self, s: f64) -> f64 {
        self.profile.g(s)
    }

    /// Equilibrium speed `G(s) = ∫_a^s g`, defined for `s >= a`.
    pub fn equilibrium_speed(&self, s: f64) -> Result<f64> {
        if !(s >= self.a) {
            return Err(domain(format!("G(s) needs s >= a = {}, got {s}", self.a)));
        }
        Ok(self.profile.big_g(s))
    }

    /// `G(s)` without the domain check; `G` vanishes below `lambda`, so this
    /// is the natural continuous extension to `s < a`.
    pub fn equilibrium_speed_unchecked(&self, s: f64) -> f64 {
        self.profile.big_g(s)
    }

    /// `∫_a^s G`.
    pub fn speed_integral(&self, s: f64) -> f64 {
        self.profile.big_g2(s)
    }

    /// Road speed limit implied by the policy: `lim_{s→∞} G(s)`.
    pub fn v_max(&self) -> f64 {
        self.profile.limit()
    }

    /// `∫_{s_star}^{s} (k - g(z)) (G(z) - G(s_star)) dz`, the spacing term of the
    /// string-stability storage function. Non-negative whenever `s_star > lambda`.
    pub fn potential(&self, s: f64, s_star: f64, k: f64) -> f64 {
        let v_star = self.profile.big_g(s_star);
        let h = |z: f64| {
            let gz = self.profile.big_g(z);
            k * self.profile.big_g2(z) - k * v_star * (z - self.a) - 0.5 * gz * gz + v_star * gz
        };
        h(s) - h(s_star)
    }

    /// The unique `s* > lambda` with `G(s*) = v_star`.
    pub fn equilibrium_spacing(&self, v_star: f64) -> Result<f64> {
        let v_max = self.v_max();
        if !(v_star > 0.0 && v_star < v_max) {
            return Err(domain(format!("equilibrium speed must lie in (0, {v_max}), got {v_star}")));
        }
        let mut hi = self.gamma.max(self.lambda + 1.0);
        let mut width = 1.0;
        while self.profile.big_g(hi) < v_star {
            hi += width;
            width *= 2.0;
            if !hi.is_finite() {
                return Err(domain(format!("no finite spacing reaches speed {v_star}")));
            }
        }
        // Bisect to machine resolution; in the exponential tail the inverse is
        // conditioned like ulp(v*) / g(s*), which no residual tolerance can beat.
        Ok(bisect(|s| self.profile.big_g(s) - v_star, self.lambda, hi, 0.0))
    }

    pub fn derived(&self, k: f64) -> PolicyDerived {
        let v_max = self.v_max();
        PolicyDerived {
            v_max,
            k,
            r_margin: self.lambda - self.a - v_max / k,
        }
    }
}

/// Constants derived from a policy and a controller gain `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDerived {
    pub v_max: f64,
    pub k: f64,
    /// `r` in `v_max = k (lambda - a - r)`; positive iff the speed limit is
    /// reachable by braking before the engagement distance.
    pub r_margin: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::adaptive_simpson;

    fn ring() -> PiecewiseG {
        PiecewiseG::ramp(5.0, 7.1, 19.0, 0.26).unwrap()
    }

    fn open_road() -> PiecewiseG {
        PiecewiseG::ramp(5.0, 30.5, 62.1, 1.0).unwrap()
    }

    /// Brute-force oracle for `G`: quadrature of the gain split at the knots.
    fn quad_g(p: &PiecewiseG, s: f64) -> f64 {
        let mut pts = vec![p.a()];
        pts.extend(p.knots().iter().copied().filter(|&k| k > p.a() && k < s));
        pts.push(s);
        pts.windows(2)
            .map(|w| adaptive_simpson(|x| p.gain(x), w[0], w[1], 1e-13))
            .sum()
    }

    #[test]
    fn gain_branches() {
        let p = ring();
        assert_eq!(p.gain(7.1), 0.0);
        assert_eq!(p.gain(6.0), 0.0);
        assert!((p.gain(19.0) - 0.26).abs() < 1e-15);
        assert!((p.gain(19.0 + 2f64.ln()) - 0.13).abs() < 1e-15);
        assert!((p.gain(7.2) - 0.1).abs() < 1e-12);
        assert!((p.gain(12.0) - 0.26).abs() < 1e-15);
    }

    #[test]
    fn ring_equilibrium_speed_matches_quadrature() {
        let p = ring();
        let got = p.equilibrium_speed(10.75).unwrap();
        assert!((got - quad_g(&p, 10.75)).abs() < 1e-10);
        // 0.26^2/2 + 0.26 * (10.75 - 7.36)
        assert!((got - 0.9152).abs() < 1e-12);
        assert!((got - 0.915).abs() < 1e-3);
        assert_eq!(p.equilibrium_speed(7.1).unwrap(), 0.0);
    }

    #[test]
    fn ring_v_max() {
        let p = ring();
        let oracle = quad_g(&p, 19.0 + 40.0);
        assert!((p.v_max() - 3.3202).abs() < 1e-12);
        assert!((p.v_max() - oracle).abs() < 1e-8);
        assert!((p.v_max() - 3.32).abs() < 0.005);
    }

    #[test]
    fn open_road_v_max_is_32_1() {
        assert!((open_road().v_max() - 32.1).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_speed_rejects_below_a() {
        assert!(matches!(ring().equilibrium_speed(4.0), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn equilibrium_spacing_examples() {
        let p = ring();
        let s = p.equilibrium_spacing(p.equilibrium_speed(10.75).unwrap()).unwrap();
        assert!((s - 10.75).abs() < 1e-9);
        // The rounded speed 0.915 sits 7.7e-4 m below the exact spacing.
        let s_rounded = p.equilibrium_spacing(0.915).unwrap();
        assert!((s_rounded - (7.36 + (0.915 - 0.0338) / 0.26)).abs() < 1e-9);
        let s12 = p.equilibrium_spacing(p.equilibrium_speed(12.0).unwrap()).unwrap();
        assert!((s12 - 12.0).abs() < 1e-9);

        let q = open_road();
        let s58 = q.equilibrium_spacing(27.0).unwrap();
        assert!((s58 - 58.0).abs() < 1e-9);
        let oracle = crate::numerics::bisect(|s| quad_g(&q, s) - 27.0, 30.5, 100.0, 1e-12);
        assert!((s58 - oracle).abs() < 1e-8);
    }

    #[test]
    fn equilibrium_spacing_domain() {
        let p = ring();
        assert!(p.equilibrium_spacing(0.0).is_err());
        assert!(p.equilibrium_spacing(p.v_max()).is_err());
        assert!(p.equilibrium_spacing(-1.0).is_err());
    }

    #[test]
    fn speed_integral_matches_quadrature() {
        for p in [ring(), open_road()] {
            for s in [p.lambda() + 0.1, p.lambda() + 0.9, p.gamma() - 1.0, p.gamma() + 3.0, p.gamma() + 25.0] {
                let oracle = adaptive_simpson(|x| p.equilibrium_speed_unchecked(x), p.a(), s, 1e-12);
                let got = p.speed_integral(s);
                assert!((got - oracle).abs() < 1e-8 * (1.0 + oracle.abs()), "s={s} got={got} oracle={oracle}");
            }
        }
    }

    #[test]
    fn potential_matches_quadrature_and_is_nonnegative() {
        let p = ring();
        let k = 2.0;
        let s_star = 10.75;
        let v_star = p.equilibrium_speed(s_star).unwrap();
        for s in [5.0, 6.5, 7.2, 9.0, 10.75, 14.0, 19.5, 28.0] {
            let oracle = adaptive_simpson(
                |z| (k - p.gain(z)) * (p.equilibrium_speed_unchecked(z) - v_star),
                s_star,
                s,
                1e-12,
            );
            let got = p.potential(s, s_star, k);
            assert!((got - oracle).abs() < 1e-9, "s={s}");
            assert!(got >= -1e-12);
        }
    }

    #[test]
    fn tabulated_reproduces_ramp() {
        let r = ring();
        let t = PiecewiseG::tabulated(5.0, vec![[7.1, 0.0], [7.36, 0.26], [19.0, 0.26]], 1.0).unwrap();
        for s in [5.0, 7.2, 8.0, 12.0, 19.0, 25.0] {
            assert!((r.gain(s) - t.gain(s)).abs() < 1e-15);
            assert!((r.equilibrium_speed_unchecked(s) - t.equilibrium_speed_unchecked(s)).abs() < 1e-12);
        }
        assert!((r.v_max() - t.v_max()).abs() < 1e-12);
    }

    #[test]
    fn tabulated_rejects_bad_knots() {
        assert!(PiecewiseG::tabulated(5.0, vec![[7.0, 0.1], [8.0, 0.2]], 1.0).is_err());
        assert!(PiecewiseG::tabulated(5.0, vec![[7.0, 0.0], [6.0, 0.2]], 1.0).is_err());
        assert!(PiecewiseG::tabulated(5.0, vec![[7.0, 0.0], [8.0, -0.2]], 1.0).is_err());
        assert!(PiecewiseG::tabulated(5.0, vec![[7.0, 0.0], [8.0, 0.2]], 0.0).is_err());
        assert!(PiecewiseG::tabulated(5.0, vec![[4.0, 0.0], [8.0, 0.2]], 1.0).is_err());
    }

    #[test]
    fn ramp_rejects_bad_geometry() {
        assert!(PiecewiseG::ramp(5.0, 4.0, 19.0, 0.26).is_err());
        assert!(PiecewiseG::ramp(0.0, 7.1, 19.0, 0.26).is_err());
        assert!(PiecewiseG::ramp(5.0, 7.1, 7.2, 0.26).is_err());
        assert!(PiecewiseG::ramp(5.0, 7.1, 19.0, 0.0).is_err());
        assert!(PiecewiseG::ramp(5.0, 7.1, f64::NAN, 0.26).is_err());
        assert!(PiecewiseG::ramp(5.0, 5.0, 19.0, 0.26).is_ok());
    }

    #[test]
    fn derived_margin() {
        let d = ring().derived(2.0);
        assert!((d.r_margin - (2.1 - 3.3202 / 2.0)).abs() < 1e-12);
        assert!(d.v_max < 2.0 * (7.1 - 5.0));
        assert!(open_road().derived(1.2).r_margin < 0.0);
    }
}

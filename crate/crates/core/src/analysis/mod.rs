//! Post-hoc checks of the performance estimates along recorded trajectories.

mod linearization;
mod lyapunov;
mod macroscopic;
mod string_stability;

pub use linearization::{jacobian_eigencheck, JacobianReport};
pub use lyapunov::{
    lyapunov_open_road, lyapunov_ring, open_road_lyapunov_value, ring_lyapunov_value, LyapunovConfig,
    OpenRoadLyapunovReport, RingLyapunovReport,
};
pub use macroscopic::{fundamental_diagram, macroscopic_stability_check, FdModel, FdPoint, MacroscopicReport};
pub use string_stability::{
    g_manifold_l2_check, l2_string_check, linf_string_check, manifold_contraction_check, manifold_deviation,
    ManifoldContractionReport, StringStabilityParams,
};

use std::fmt;

/// Relative tolerance on every inequality: `rhs - lhs >= -REL_TOL * max(|rhs|, SCALE_FLOOR)`.
pub const REL_TOL: f64 = 1e-6;
pub const SCALE_FLOOR: f64 = 1e-6;

/// Worst observed margin of an inequality `lhs <= rhs` over many instances.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityCheck {
    pub name: String,
    pub instances: usize,
    /// `rhs - lhs` at the worst instance (by relative margin).
    pub worst_margin: f64,
    /// `(rhs - lhs) / max(|rhs|, floor)`.
    pub worst_relative: f64,
    pub worst_t: f64,
    pub worst_vehicle: Option<usize>,
    pub passed: bool,
}

impl fmt::Display for InequalityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (worst relative margin {:.3e} at t = {:.3}",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.worst_relative,
            self.worst_t
        )?;
        if let Some(i) = self.worst_vehicle {
            write!(f, ", vehicle {}", i + 1)?;
        }
        write!(f, ", {} instances)", self.instances)
    }
}

pub(crate) struct Tracker {
    name: String,
    floor: f64,
    instances: usize,
    worst: Option<(f64, f64, f64, Option<usize>)>,
}

impl Tracker {
    pub(crate) fn new(name: impl Into<String>) -> Self {
        Self::with_floor(name, SCALE_FLOOR)
    }

    /// `floor` is the scale below which the tolerance stops shrinking.
    pub(crate) fn with_floor(name: impl Into<String>, floor: f64) -> Self {
        Tracker {
            name: name.into(),
            floor,
            instances: 0,
            worst: None,
        }
    }

    pub(crate) fn observe(&mut self, lhs: f64, rhs: f64, t: f64, vehicle: Option<usize>) {
        self.instances += 1;
        let margin = rhs - lhs;
        let rel = margin / rhs.abs().max(self.floor);
        let worse = match self.worst {
            None => true,
            Some((r, ..)) => rel < r || rel.is_nan(),
        };
        if worse {
            self.worst = Some((rel, margin, t, vehicle));
        }
    }

    pub(crate) fn finish(self) -> InequalityCheck {
        let (rel, margin, t, vehicle) = self.worst.unwrap_or((f64::INFINITY, f64::INFINITY, 0.0, None));
        InequalityCheck {
            name: self.name,
            instances: self.instances,
            worst_margin: margin,
            worst_relative: rel,
            worst_t: t,
            worst_vehicle: vehicle,
            passed: rel >= -REL_TOL,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_uses_relative_margin_with_floor() {
        let mut t = Tracker::new("x");
        t.observe(1.0, 2.0, 0.0, None);
        t.observe(1.0 + 5e-7, 1.0, 1.0, Some(2));
        let c = t.finish();
        assert!(c.passed);
        assert_eq!(c.worst_vehicle, Some(2));
        assert!((c.worst_relative + 5e-7).abs() < 1e-15);

        let mut t = Tracker::new("y");
        t.observe(1e-11, 0.0, 0.0, None);
        assert!(!t.finish().passed);
        let mut t = Tracker::new("z");
        t.observe(1e-13, 0.0, 0.0, None);
        assert!(t.finish().passed);
    }
}

//! Predecessor-follower feedback laws `u = F(s, w, v)`, where `s` is the gap to
//! the predecessor, `w` its speed and `v` the own speed.

use std::fmt;

use crate::error::{invalid, Result};
use crate::spacing_policy::{validate_gain_conditions, validate_general_conditions, GeneralLaw, PiecewiseG, ScanGrid};

#[derive(Debug, Clone)]
pub enum ControllerSpec {
    /// `(k - g(s)) G(s) + g(s) w - k v`.
    NonlinearAcc {
        policy: PiecewiseG,
        k: f64,
        /// Whether the policy passed the gain conditions at construction.
        validated: bool,
    },
    /// `f(s) + g(s) w - κ(s) v`.
    General {
        law: GeneralLaw,
        /// Whether the law passed the general conditions at construction.
        validated: bool,
    },
    /// Constant time gap: `(k - g) g (s - r) + g w - k v`, time gap `1 / g`.
    Ctg { k: f64, gain: f64, standstill: f64 },
}

/// Worst-case magnitude of the feedback inside the safe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccelBound {
    Bounded(f64),
    Unbounded,
}

impl fmt::Display for AccelBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccelBound::Bounded(a) => write!(f, "{a}"),
            AccelBound::Unbounded => write!(f, "unbounded"),
        }
    }
}

impl ControllerSpec {
    /// Nonlinear controller; rejects policies that fail the gain conditions.
    pub fn nonlinear_acc(policy: PiecewiseG, k: f64) -> Result<Self> {
        let spec = Self::nonlinear_acc_unvalidated(policy, k)?;
        if let ControllerSpec::NonlinearAcc { validated: false, policy, .. } = &spec {
            let report = validate_gain_conditions(policy, k, ScanGrid::default());
            return Err(invalid(format!("policy fails the gain conditions:\n{report}")));
        }
        Ok(spec)
    }

    /// Nonlinear controller that records, but does not enforce, the gain
    /// conditions. Only `k > g_max` is required.
    pub fn nonlinear_acc_unvalidated(policy: PiecewiseG, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > policy.g_max()) {
            return Err(invalid(format!("k ({k}) must exceed g_max ({})", policy.g_max())));
        }
        let validated = validate_gain_conditions(&policy, k, ScanGrid::default()).passed();
        Ok(ControllerSpec::NonlinearAcc { policy, k, validated })
    }

    pub fn general(law: GeneralLaw) -> Self {
        let validated = validate_general_conditions(&law, ScanGrid::default()).passed();
        ControllerSpec::General { law, validated }
    }

    /// Constant-time-gap baseline; requires `k > gain > 0`.
    pub fn ctg(k: f64, gain: f64, standstill: f64) -> Result<Self> {
        if !(gain > 0.0 && k > gain && k.is_finite() && standstill.is_finite()) {
            return Err(invalid(format!("CTG needs k > g > 0, got k = {k}, g = {gain}")));
        }
        Ok(ControllerSpec::Ctg { k, gain, standstill })
    }

    pub fn k(&self) -> f64 {
        match self {
            ControllerSpec::NonlinearAcc { k, .. } | ControllerSpec::Ctg { k, .. } => *k,
            ControllerSpec::General { law, .. } => law.k,
        }
    }

    pub fn policy(&self) -> Option<&PiecewiseG> {
        match self {
            ControllerSpec::NonlinearAcc { policy, .. } => Some(policy),
            _ => None,
        }
    }

    /// True for the laws with a safe-set theory behind them.
    pub fn is_certified_family(&self) -> bool {
        !matches!(self, ControllerSpec::Ctg { .. })
    }

    pub fn is_validated(&self) -> bool {
        match self {
            ControllerSpec::NonlinearAcc { validated, .. } | ControllerSpec::General { validated, .. } => *validated,
            ControllerSpec::Ctg { .. } => false,
        }
    }

    /// Feedback acceleration. No clipping is applied.
    pub fn accel(&self, s: f64, w: f64, v: f64) -> f64 {
        match self {
            ControllerSpec::NonlinearAcc { policy, k, .. } => {
                let g = policy.gain(s);
                (k - g) * policy.equilibrium_speed_unchecked(s) + g * w - k * v
            }
            ControllerSpec::General { law, .. } => (law.offset)(s) + (law.gain)(s) * w - (law.damping)(s) * v,
            ControllerSpec::Ctg { k, gain, standstill } => (k - gain) * gain * (s - standstill) + gain * w - k * v,
        }
    }

    /// `k * v_max` for the bounded families, `Unbounded` for constant time gap
    /// (its feedback grows linearly in `s`) and for general laws that failed
    /// validation.
    pub fn accel_bound(&self) -> AccelBound {
        match self {
            ControllerSpec::NonlinearAcc { policy, k, .. } => AccelBound::Bounded(k * policy.v_max()),
            ControllerSpec::General { law, validated: true } => AccelBound::Bounded(law.k * law.v_max),
            _ => AccelBound::Unbounded,
        }
    }
}

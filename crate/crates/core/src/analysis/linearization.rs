//! Linearization of the open-road platoon at its equilibrium.
//!
//! In the interleaved order `(s_1, v_1, s_2, v_2, ...)` the Jacobian is block
//! lower-triangular; every diagonal block equals
//!
//! ```text
//! A = [[0, -1], [(k - g*) g*, -k]],   eig(A) = {-g*, -(k - g*)},   g* = g(s*)
//! ```
//!
//! so the full spectrum is `{-g*, -(k - g*)}`, each with multiplicity `n`.

use std::fmt;

use nalgebra::{DMatrix, Matrix2};

use crate::controller::ControllerSpec;
use crate::error::Result;
use crate::simulator::{rhs, PlatoonState, Topology};
use crate::spacing_policy::PiecewiseG;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub s_star: f64,
    pub g_star: f64,
    /// `{-g*, -(k - g*)}`, ascending.
    pub expected: [f64; 2],
    /// Eigenvalues of the analytic 2×2 block, ascending.
    pub block_eigenvalues: [f64; 2],
    /// Largest deviation of the analytic block eigenvalues from `expected`.
    pub block_error: f64,
    /// Largest entrywise gap between the analytic and finite-difference Jacobians.
    pub fd_entry_error: f64,
    /// Largest entry above the block diagonal of the finite-difference Jacobian.
    pub fd_upper_block_max: f64,
    /// Largest deviation of the finite-difference diagonal-block eigenvalues from `expected`.
    pub fd_block_eigen_error: f64,
    pub n: usize,
    pub warnings: Vec<String>,
}

impl JacobianReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.block_error <= 1e-9 && self.fd_entry_error <= tol && self.fd_upper_block_max <= tol && self.fd_block_eigen_error <= tol
    }
}

impl fmt::Display for JacobianReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "jacobian_s_star: {:.9}", self.s_star)?;
        writeln!(f, "jacobian_g_star: {:.9}", self.g_star)?;
        writeln!(
            f,
            "jacobian_eigenvalues: {:.9}, {:.9} (multiplicity {})",
            self.block_eigenvalues[0], self.block_eigenvalues[1], self.n
        )?;
        writeln!(f, "jacobian_block_error: {:.3e}", self.block_error)?;
        writeln!(f, "jacobian_fd_entry_error: {:.3e}", self.fd_entry_error)?;
        writeln!(f, "jacobian_fd_upper_block_max: {:.3e}", self.fd_upper_block_max)?;
        write!(f, "jacobian_fd_block_eigen_error: {:.3e}", self.fd_block_eigen_error)?;
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

fn sorted_real_eigenvalues(m: Matrix2<f64>) -> [f64; 2] {
    let eig = m.complex_eigenvalues();
    let mut re = [eig[0].re, eig[1].re];
    re.sort_by(f64::total_cmp);
    re
}

fn max_dev(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Compares the analytic and finite-difference linearizations of an `n`-vehicle
/// open-road platoon at `(s*, v*)`.
pub fn jacobian_eigencheck(policy: &PiecewiseG, k: f64, v_star: f64, n: usize) -> Result<JacobianReport> {
    let s_star = policy.equilibrium_spacing(v_star)?;
    let g = policy.gain(s_star);
    let mut expected = [-g, -(k - g)];
    expected.sort_by(f64::total_cmp);

    let block = Matrix2::new(0.0, -1.0, (k - g) * g, -k);
    let block_eigenvalues = sorted_real_eigenvalues(block);
    let block_error = max_dev(block_eigenvalues, expected);

    let mut warnings = Vec::new();
    if let Some(knot) = policy.knots().iter().find(|x| (**x - s_star).abs() < 1e-6) {
        warnings.push(format!("equilibrium gap {s_star} sits at a knot of g ({knot}); the gain is not C1 there"));
    }

    let analytic = analytic_jacobian(n, k, g);
    let fd = fd_jacobian(policy, k, s_star, v_star, n)?;
    let fd_entry_error = (&analytic - &fd).abs().max();
    let mut fd_upper_block_max: f64 = 0.0;
    let mut fd_block_eigen_error: f64 = 0.0;
    for bi in 0..n {
        for bj in (bi + 1)..n {
            for r in 0..2 {
                for c in 0..2 {
                    fd_upper_block_max = fd_upper_block_max.max(fd[(2 * bi + r, 2 * bj + c)].abs());
                }
            }
        }
        let b = Matrix2::new(
            fd[(2 * bi, 2 * bi)],
            fd[(2 * bi, 2 * bi + 1)],
            fd[(2 * bi + 1, 2 * bi)],
            fd[(2 * bi + 1, 2 * bi + 1)],
        );
        fd_block_eigen_error = fd_block_eigen_error.max(max_dev(sorted_real_eigenvalues(b), expected));
    }

    Ok(JacobianReport {
        s_star,
        g_star: g,
        expected,
        block_eigenvalues,
        block_error,
        fd_entry_error,
        fd_upper_block_max,
        fd_block_eigen_error,
        n,
        warnings,
    })
}

/// Interleaved-order Jacobian built from the partial derivatives of the feedback.
fn analytic_jacobian(n: usize, k: f64, g: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (si, vi) = (2 * i, 2 * i + 1);
        j[(si, vi)] = -1.0;
        j[(vi, si)] = (k - g) * g;
        j[(vi, vi)] = -k;
        if i > 0 {
            j[(si, vi - 2)] = 1.0;
            j[(vi, vi - 2)] = g;
        }
    }
    j
}

/// Central-difference Jacobian of the open-road right-hand side, interleaved order.
fn fd_jacobian(policy: &PiecewiseG, k: f64, s_star: f64, v_star: f64, n: usize) -> Result<DMatrix<f64>> {
    let spec = ControllerSpec::nonlinear_acc_unvalidated(policy.clone(), k)?;
    let base = PlatoonState::uniform(n, s_star, v_star);
    let h = 1e-6 * (1.0 + s_star.abs().max(v_star.abs()));
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    let eval = |state: &PlatoonState| {
        let d = rhs(state, &spec, Topology::Open, v_star);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[2 * i] = d.ds[i];
            out[2 * i + 1] = d.dv[i];
        }
        out
    };
    for col in 0..2 * n {
        let (i, is_speed) = (col / 2, col % 2 == 1);
        let mut plus = base.clone();
        let mut minus = base.clone();
        if is_speed {
            plus.v[i] += h;
            minus.v[i] -= h;
        } else {
            plus.s[i] += h;
            minus.s[i] -= h;
        }
        let (fp, fm) = (eval(&plus), eval(&minus));
        for row in 0..2 * n {
            j[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(j)
}

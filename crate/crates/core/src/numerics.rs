//! Small numerical kernels shared by the policy, analysis and test code.

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` to absolute tolerance `tol`.
///
/// Works for reversed intervals (returns the signed integral).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    if lo == hi {
        return 0.0;
    }
    let mid = 0.5 * (lo + hi);
    let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
    let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    simpson_step(&f, lo, hi, flo, fmid, fhi, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    flo: f64,
    fmid: f64,
    fhi: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (lo + hi);
    let lm = 0.5 * (lo + mid);
    let rm = 0.5 * (mid + hi);
    let (flm, frm) = (f(lm), f(rm));
    let left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    let right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, lo, mid, flo, flm, fmid, left, 0.5 * tol, depth - 1)
        + simpson_step(f, mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth - 1)
}

/// Bisection for the root of a monotone bracketing function.
///
/// Requires `f(lo)` and `f(hi)` of opposite sign (or zero). Stops when the
/// residual drops below `ftol` or the bracket collapses to machine precision.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, ftol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= ftol || mid <= lo || mid >= hi {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Running trapezoid integral of `values` sampled at `times`; output[0] = 0.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    debug_assert_eq!(times.len(), values.len());
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..values.len() {
        acc += 0.5 * (times[j] - times[j - 1]) * (values[j] + values[j - 1]);
        out.push(acc);
    }
    if values.is_empty() {
        out.clear();
    }
    out
}

/// Ordinary least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
    /// Largest absolute residual.
    pub max_residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (mut ss, mut worst) = (0.0_f64, 0.0_f64);
    for (xi, yi) in x.iter().zip(y) {
        let r = yi - (slope * xi + intercept);
        ss += r * r;
        worst = worst.max(r.abs());
    }
    Some(LineFit {
        slope,
        intercept,
        rms_residual: (ss / nf).sqrt(),
        max_residual: worst,
    })
}

/// `count` evenly spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_exponential() {
        let got = adaptive_simpson(|x: f64| x.exp(), 0.0, 2.0, 1e-12);
        assert!((got - (2.0_f64.exp() - 1.0)).abs() < 1e-10);
        let rev = adaptive_simpson(|x: f64| x.exp(), 2.0, 0.0, 1e-12);
        assert!((rev + got).abs() < 1e-12);
    }

    #[test]
    fn simpson_handles_kinks() {
        let got = adaptive_simpson(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-12);
        assert!((got - (0.3 * 0.3 / 2.0 + 0.7 * 0.7 / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15);
        assert!((r - 2.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let t = linspace(0.0, 1.0, 11);
        let y: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        let c = cumulative_trapezoid(&t, &y);
        assert!((c[10] - 2.5).abs() < 1e-14);
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn line_fit_recovers_line() {
        let x = linspace(0.0, 5.0, 20);
        let y: Vec<f64> = x.iter().map(|v| -0.7 * v + 2.0).collect();
        let fit = fit_line(&x, &y).unwrap();
        assert!((fit.slope + 0.7).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }
}

//! Nonlinear and linear least-squares machinery shared by the calibration
//! and release modules.
//!
//! The nonlinear path is a Levenberg-Marquardt loop with a forward-difference
//! Jacobian and multiplicative damping. Residual closures may themselves
//! fail (they often wrap ODE integrations); failures inside a trial step
//! reject the step instead of aborting the fit, failures at the current
//! point abort.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative decrease of the squared residual norm below which the fit
    /// is declared converged.
    pub rel_tolerance: f64,
    pub lambda_init: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            rel_tolerance: 1e-10,
            lambda_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Parameter covariance estimate SSR/(m−n)·(JᵀJ)⁻¹.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    /// Final sum of squared residuals.
    pub ssr: f64,
}

/// Minimizes Σ rᵢ(p)² over p starting from `initial`.
pub fn levenberg_marquardt<F>(residuals: F, initial: &[f64], opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = initial.len();
    if n == 0 {
        return Err(Error::RankDeficient("no parameters to fit".into()));
    }
    let mut p = DVector::from_column_slice(initial);
    let mut r = DVector::from_vec(residuals(p.as_slice())?);
    let m = r.len();
    if m < n {
        return Err(Error::RankDeficient(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    let mut ssr = r.norm_squared();
    let mut lambda = opts.lambda_init;

    for iter in 1..=opts.max_iterations {
        // Forward-difference Jacobian at the current point.
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = 1e-6 * p[j].abs().max(1.0);
            let mut pj = p.clone();
            pj[j] += h;
            let rj = DVector::from_vec(residuals(pj.as_slice())?);
            if rj.len() != m {
                return Err(Error::LengthMismatch {
                    context: "residual vector length changed during fit",
                    left: m,
                    right: rj.len(),
                });
            }
            for i in 0..m {
                jac[(i, j)] = (rj[i] - r[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut accepted = false;
        for _ in 0..40 {
            // Marquardt scaling: damp along diag(JᵀJ), guarding zeros.
            let mut a = jtj.clone();
            for d in 0..n {
                let diag = jtj[(d, d)];
                if diag <= 0.0 {
                    return Err(Error::RankDeficient(format!(
                        "parameter {d} has no effect on the residuals"
                    )));
                }
                a[(d, d)] = diag * (1.0 + lambda);
            }
            let chol = match a.cholesky() {
                Some(c) => c,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let delta = chol.solve(&(-&jtr));
            let p_try = &p + &delta;
            match residuals(p_try.as_slice()) {
                Ok(rv) => {
                    let r_try = DVector::from_vec(rv);
                    let ssr_try = r_try.norm_squared();
                    if ssr_try.is_finite() && ssr_try <= ssr {
                        let gain = ssr - ssr_try;
                        p = p_try;
                        r = r_try;
                        ssr = ssr_try;
                        lambda = (lambda / 10.0).max(1e-14);
                        accepted = true;
                        if gain <= opts.rel_tolerance * ssr.max(1e-300) {
                            return finish(p, jtj, ssr, m, n, iter);
                        }
                        break;
                    }
                    lambda *= 10.0;
                }
                // A trial point outside the residuals' domain rejects the
                // step rather than failing the fit.
                Err(_) => lambda *= 10.0,
            }
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            // Damping saturated: the current point is a (local) minimum to
            // within the achievable precision.
            return finish(p, jtj, ssr, m, n, iter);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual: ssr.sqrt(),
    })
}

fn finish(
    p: DVector<f64>,
    jtj: DMatrix<f64>,
    ssr: f64,
    m: usize,
    n: usize,
    iterations: usize,
) -> Result<FitResult> {
    let sigma2 = if m > n { ssr / (m - n) as f64 } else { 0.0 };
    let covariance = match jtj.clone().try_inverse() {
        Some(inv) => inv * sigma2,
        None => return Err(Error::RankDeficient("singular normal matrix at the optimum".into())),
    };
    Ok(FitResult {
        params: p.iter().cloned().collect(),
        covariance,
        iterations,
        ssr,
    })
}

/// Ordinary least-squares line y = slope·x + intercept.
/// Returns (slope, intercept).
pub fn linear_least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            context: "linear fit inputs",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::RankDeficient("need at least two points for a line".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::RankDeficient("abscissa values are degenerate".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

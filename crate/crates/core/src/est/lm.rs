//! Damped least squares (Levenberg-Marquardt) with numerical Jacobians.
//!
//! Parameters are optimized in units of caller-provided scales so that
//! quantities as disparate as rad/s frequencies and 1e-40-level spectral
//! densities condition the normal equations equally well.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative chi^2 / step convergence tolerance.
    pub tol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            tol: 1e-10,
            lambda0: 1e-3,
        }
    }
}

/// Converged fit: parameters in physical units, covariance scaled by the
/// reduced chi^2.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
}

impl LmFit {
    pub fn chi2_reduced(&self) -> f64 {
        let dof = self.n_points.saturating_sub(self.params.len()).max(1);
        self.chi2 / dof as f64
    }
}

/// Minimize `sum r_i^2` over parameters `p` starting from `p0`.
///
/// `residuals` fills the (fixed-size) residual vector for a parameter set;
/// `scales[i]` is a positive magnitude typical of `p0[i]`.
pub fn levenberg_marquardt<F>(
    mut residuals: F,
    n_resid: usize,
    p0: &[f64],
    scales: &[f64],
    opts: &LmOptions,
) -> Result<LmFit>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let k = p0.len();
    if k == 0 || scales.len() != k {
        return Err(Error::InvalidParameter(
            "parameter and scale vectors must match and be nonempty".into(),
        ));
    }
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter("scales must be > 0".into()));
    }
    if n_resid <= k {
        return Err(Error::InvalidParameter(
            "need more residuals than parameters".into(),
        ));
    }

    let to_phys = |x: &DVector<f64>| -> Vec<f64> {
        x.iter().zip(scales).map(|(xi, s)| xi * s).collect()
    };
    let mut eval = |x: &DVector<f64>, r: &mut DVector<f64>| -> Result<f64> {
        let p = to_phys(x);
        residuals(&p, r.as_mut_slice())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Nonconvergence(
                "residuals became non-finite".into(),
            ));
        }
        Ok(r.norm_squared())
    };

    let mut x = DVector::from_iterator(k, p0.iter().zip(scales).map(|(p, s)| p / s));
    let mut r = DVector::zeros(n_resid);
    let mut chi2 = eval(&x, &mut r)?;
    let mut lambda = opts.lambda0;
    let mut jac = DMatrix::zeros(n_resid, k);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        // central-difference Jacobian in scaled coordinates
        let mut r_hi = DVector::zeros(n_resid);
        let mut r_lo = DVector::zeros(n_resid);
        for j in 0..k {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            eval(&xp, &mut r_hi)?;
            xp[j] = x[j] - h;
            eval(&xp, &mut r_lo)?;
            for i in 0..n_resid {
                jac[(i, j)] = (r_hi[i] - r_lo[i]) / (2.0 * h);
            }
        }
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;

        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for j in 0..k {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-30);
            }
            let Some(delta) = damped.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let x_try = &x - &delta;
            let mut r_try = DVector::zeros(n_resid);
            match eval(&x_try, &mut r_try) {
                Ok(chi2_try) if chi2_try <= chi2 => {
                    let rel_drop = (chi2 - chi2_try) / chi2.max(1e-300);
                    let step = delta.norm() / (1.0 + x.norm());
                    x = x_try;
                    r = r_try;
                    chi2 = chi2_try;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel_drop < opts.tol || step < opts.tol.sqrt() * 1e-3 {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 5.0,
            }
        }
        if !accepted {
            // no downhill step found: treat the current point as converged
            // if the gradient is already tiny, otherwise fail
            if g.norm() < 1e-8 * (1.0 + chi2) {
                converged = true;
            } else {
                return Err(Error::Nonconvergence(format!(
                    "no downhill step after {iterations} iterations (chi2 = {chi2:.3e})"
                )));
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Nonconvergence(format!(
            "not converged after {} iterations",
            opts.max_iter
        )));
    }

    // covariance in physical units, scaled by reduced chi^2
    let a = jac.transpose() * &jac;
    let cov_scaled = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Nonconvergence("singular normal equations at optimum".into()))?;
    let chi2_red = chi2 / (n_resid - k) as f64;
    let mut covariance = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            covariance[(i, j)] = cov_scaled[(i, j)] * scales[i] * scales[j] * chi2_red;
        }
    }

    Ok(LmFit {
        params: to_phys(&x),
        covariance,
        chi2,
        n_points: n_resid,
        iterations,
    })
}

//! Kernel sandwich covariance, bandwidth selection and confidence intervals.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{norm_pdf, norm_quantile};
use crate::error::{check_probability, Error, Result};
use crate::ivqr::{IvqrEstimate, StackedRegression};
use crate::qr::{DesignMatrix, QuantileFit};

/// Hall-Sheather bandwidth.
pub fn bandwidth_hs(n_total: usize, tau: f64, alpha: f64) -> Result<f64> {
    check_probability(tau, "tau")?;
    check_probability(alpha, "alpha")?;
    if n_total < 2 {
        return Err(Error::domain("bandwidth needs at least two observations"));
    }
    let z_alpha = norm_quantile(1.0 - alpha / 2.0)?;
    let z_tau = norm_quantile(tau)?;
    let dens = norm_pdf(z_tau);
    let bracket = 1.5 * dens * dens / (2.0 * z_tau * z_tau + 1.0);
    Ok(libm::pow(n_total as f64, -1.0 / 3.0) * libm::pow(z_alpha, 2.0 / 3.0) * libm::cbrt(bracket))
}

/// `tau (1 - tau) / NT * sum psi_i psi_i'`.
pub fn estimate_omega(psi: &DesignMatrix, tau: f64) -> Result<DMatrix<f64>> {
    check_probability(tau, "tau")?;
    let m = psi.matrix();
    let gram = m.tr_mul(m);
    let mut omega = gram * (tau * (1.0 - tau) / m.nrows() as f64);
    symmetrize(&mut omega);
    Ok(omega)
}

fn symmetrize(a: &mut DMatrix<f64>) {
    for i in 0..a.nrows() {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Which residuals enter the Jacobian kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRule {
    /// `|u| <= h`.
    #[default]
    Symmetric,
    /// `u <= h`, kept for comparison only.
    OneSided,
}

impl KernelRule {
    fn selects(self, u: f64, h: f64) -> bool {
        match self {
            KernelRule::Symmetric => u.abs() <= h,
            KernelRule::OneSided => u <= h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub matrix: DMatrix<f64>,
    pub selected: usize,
    pub warning: Option<String>,
}

/// `(2 NT h)^{-1} sum 1{kernel(u_i, h)} psi_i regressors_i'`.
pub fn estimate_jacobian(
    psi: &DesignMatrix,
    regressors: &DesignMatrix,
    residuals: &[f64],
    h: f64,
    rule: KernelRule,
) -> Result<JacobianEstimate> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::domain("bandwidth must be positive"));
    }
    let n = psi.nrows();
    for found in [regressors.nrows(), residuals.len()] {
        if found != n {
            return Err(Error::Dimension { expected: n, found });
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| rule.selects(residuals[i], h)).collect();
    let scale = 1.0 / (2.0 * n as f64 * h);
    let a = psi.matrix().select_rows(&keep);
    let b = regressors.matrix().select_rows(&keep);
    let matrix = a.tr_mul(&b) * scale;
    let warning = keep
        .is_empty()
        .then(|| String::from("no residual fell inside the bandwidth; Jacobian is zero"));
    Ok(JacobianEstimate {
        matrix,
        selected: keep.len(),
        warning,
    })
}

/// Ratio of extreme singular values above which the Jacobian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `Sigma = (J'J)^{-1} J' Omega J (J'J)^{-1}` and `se = sqrt(diag(Sigma) / NT)`.
pub fn sandwich(jacobian: &DMatrix<f64>, omega: &DMatrix<f64>, n_total: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (rows, cols) = jacobian.shape();
    if omega.nrows() != rows || omega.ncols() != rows {
        return Err(Error::Dimension {
            expected: rows,
            found: omega.nrows(),
        });
    }
    if rows < cols || n_total == 0 {
        return Err(Error::Inference(String::from(
            "Jacobian has fewer rows than parameters",
        )));
    }
    let sv = jacobian.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > 0.0) || !(hi / lo < MAX_CONDITION) {
        return Err(Error::Inference(alloc::format!(
            "Jacobian is singular (condition number {:e})",
            hi / lo
        )));
    }
    let jtj = jacobian.tr_mul(jacobian);
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::Inference(String::from("J'J is not invertible")))?;
    let bread = &inv * jacobian.transpose();
    let mut sigma = &bread * omega * bread.transpose();
    symmetrize(&mut sigma);
    let se = (0..cols)
        .map(|j| libm::sqrt((sigma[(j, j)] / n_total as f64).max(0.0)))
        .collect();
    Ok((sigma, se))
}

pub fn confidence_interval(theta: &[f64], std_errors: &[f64], alpha: f64) -> Result<Vec<(f64, f64)>> {
    check_probability(alpha, "alpha")?;
    if theta.len() != std_errors.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            found: std_errors.len(),
        });
    }
    if std_errors.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::domain("standard errors must be finite and nonnegative"));
    }
    let z = norm_quantile(1.0 - alpha / 2.0)?;
    Ok(theta
        .iter()
        .zip(std_errors)
        .map(|(t, s)| (t - z * s, t + z * s))
        .collect())
}

/// Units of the kernel bandwidth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthUnits {
    /// `h_b` used directly on the residual scale.
    #[default]
    Raw,
    /// `h_b` times a robust residual scale `min(sd, IQR / 1.349)`, which
    /// makes standard errors equivariant to rescaling the response.
    Studentized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub kernel: KernelRule,
    pub bandwidth: BandwidthUnits,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            kernel: KernelRule::Symmetric,
            bandwidth: BandwidthUnits::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub omega: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub sigma_theta: DMatrix<f64>,
    pub bandwidth: f64,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub warning: Option<String>,
}

/// `min(sd, IQR / 1.349)` of the residuals.
pub fn robust_scale(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    if n < 2 {
        return 0.0;
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let sd = libm::sqrt(residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64);
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(n - 1);
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = (at(0.75) - at(0.25)) / 1.349;
    if iqr > 0.0 {
        sd.min(iqr)
    } else {
        sd
    }
}

fn covariance(
    psi: &DesignMatrix,
    regressors: &DesignMatrix,
    residuals: &[f64],
    theta: &[f64],
    tau: f64,
    opts: &InferenceOptions,
) -> Result<CovarianceEstimate> {
    let n_total = psi.nrows();
    let mut h = bandwidth_hs(n_total, tau, opts.alpha)?;
    if opts.bandwidth == BandwidthUnits::Studentized {
        h *= robust_scale(residuals);
    }
    let omega = estimate_omega(psi, tau)?;
    let jac = estimate_jacobian(psi, regressors, residuals, h, opts.kernel)?;
    let (sigma_theta, std_errors) = sandwich(&jac.matrix, &omega, n_total)?;
    let intervals = confidence_interval(theta, &std_errors, opts.alpha)?;
    Ok(CovarianceEstimate {
        omega,
        jacobian: jac.matrix,
        sigma_theta,
        bandwidth: h,
        std_errors,
        intervals,
        warning: jac.warning,
    })
}

/// Covariance of `theta = (gamma1, phi)` with `Psi = [R | X]`.
pub fn ivqr_covariance(
    s: &StackedRegression,
    est: &IvqrEstimate,
    opts: &InferenceOptions,
) -> Result<CovarianceEstimate> {
    covariance(&s.psi()?, &s.ybar_x()?, &est.residuals, &est.theta(), est.tau, opts)
}

/// Covariance of the ordinary QR fit on `[ybar | X]`, with `Psi = [ybar | X]`.
pub fn qr_covariance(s: &StackedRegression, fit: &QuantileFit, opts: &InferenceOptions) -> Result<CovarianceEstimate> {
    let design = s.ybar_x()?;
    covariance(&design, &design, &fit.residuals, &fit.coefficients, fit.tau, opts)
}

//! Linear quantile regression under the check loss.
//!
//! [`qr_fit`] runs a Frisch-Newton primal-dual interior-point method on the
//! bounded-variable dual LP, then crosses over to an optimal basic solution
//! with a few exact simplex pivots. The crossover makes `k` residuals exactly
//! zero, so the returned fit is a vertex and its objective is exact.
//!
//! [`PreparedDesign`] performs the rank check and column scaling once and can
//! then fit many responses against the same design, optionally warm-started
//! from a previous basis.

mod ipm;
mod simplex;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Dense `n x k` design, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: DMatrix<f64>,
}

impl DesignMatrix {
    /// Requires `n >= k >= 1` and finite entries.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() < data.ncols() {
            return Err(Error::domain(alloc::format!(
                "design must satisfy n >= k >= 1, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("design has non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_iterator(
            n,
            k,
            columns.iter().flat_map(|c| c.iter().copied()),
        ))
    }

    pub fn from_row_slice(n: usize, k: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * k {
            return Err(Error::Dimension {
                expected: n * k,
                found: rows.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, k, rows))
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.nrows();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// `X beta`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows()];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (o, &x) in out.iter_mut().zip(self.column(j)) {
                    *o += b * x;
                }
            }
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &DesignMatrix) -> Result<DesignMatrix> {
        if self.nrows() != other.nrows() {
            return Err(Error::Dimension {
                expected: self.nrows(),
                found: other.nrows(),
            });
        }
        let n = self.nrows();
        let mut data = DMatrix::zeros(n, self.ncols() + other.ncols());
        data.columns_mut(0, self.ncols()).copy_from(&self.data);
        data.columns_mut(self.ncols(), other.ncols()).copy_from(&other.data);
        DesignMatrix::new(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative duality gap at which the interior-point phase stops.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Center and scale columns to unit standard deviation before solving.
    pub scaling: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 200,
            scaling: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::domain("solver tolerance must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("solver max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    /// Interior-point iterations plus simplex pivots.
    pub iterations: usize,
    pub converged: bool,
    /// Observations interpolated by the fit (empty when no crossover happened).
    pub basis: Vec<usize>,
}

impl QuantileFit {
    pub fn negative_fraction(&self) -> f64 {
        self.residuals.iter().filter(|&&r| r < 0.0).count() as f64 / self.residuals.len() as f64
    }
}

/// `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    check_probability(tau, "tau")?;
    Ok(rho(u, tau))
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

pub(crate) fn total_loss(residuals: &[f64], tau: f64) -> f64 {
    residuals.iter().map(|&r| rho(r, tau)).sum()
}

/// Check-loss objective at `beta`; no fitting.
pub fn qr_objective(x: &DesignMatrix, y: &[f64], tau: f64, beta: &[f64]) -> Result<f64> {
    check_probability(tau, "tau")?;
    if y.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if beta.len() != x.ncols() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            found: beta.len(),
        });
    }
    let fitted = x.mul_vec(beta);
    Ok(y.iter().zip(&fitted).map(|(&yi, &f)| rho(yi - f, tau)).sum())
}

pub fn qr_fit(x: &DesignMatrix, y: &[f64], tau: f64, opts: &SolverOptions) -> Result<QuantileFit> {
    PreparedDesign::new(x, opts)?.fit(y, tau)
}

/// Verify full column rank. Pivoted QR decides the rank with tolerance
/// `1e-10 ||X||_F`; a sequential Gram-Schmidt sweep names the first column
/// that is dependent on the ones before it.
pub fn check_rank(x: &DesignMatrix) -> Result<()> {
    let fro = x.matrix().norm();
    if fro == 0.0 {
        return Err(Error::SingularDesign { column: 0 });
    }
    let tol = 1e-10 * fro;
    let qr = x.matrix().clone().col_piv_qr();
    let r = qr.r();
    let rank = (0..x.ncols()).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank == x.ncols() {
        return Ok(());
    }
    Err(Error::SingularDesign {
        column: first_dependent_column(x, tol).unwrap_or(rank),
    })
}

fn first_dependent_column(x: &DesignMatrix, tol: f64) -> Option<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let mut v = x.column(j).to_vec();
        // Two passes keep the projection accurate for nearly dependent columns.
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
        }
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum());
        if norm <= tol {
            return Some(j);
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    None
}

/// A rank-checked, optionally scaled design ready for repeated fits.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    n: usize,
    k: usize,
    // Column-major scaled design.
    cols: Vec<f64>,
    transform: ColumnTransform,
    opts: SolverOptions,
    original: DesignMatrix,
}

#[derive(Debug, Clone)]
struct ColumnTransform {
    // x_scaled_j = (x_j - center_j) / scale_j, with center_j = 0 unless an
    // intercept column absorbs the shift.
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: Option<usize>,
}

impl ColumnTransform {
    fn identity(k: usize) -> Self {
        Self {
            center: vec![0.0; k],
            scale: vec![1.0; k],
            intercept: None,
        }
    }

    fn fit(x: &DesignMatrix) -> Self {
        let n = x.nrows() as f64;
        let k = x.ncols();
        let intercept = (0..k).find(|&j| {
            let c = x.column(j);
            c[0] != 0.0 && c.iter().all(|&v| v == c[0])
        });
        let mut t = Self::identity(k);
        t.intercept = intercept;
        for j in 0..k {
            let c = x.column(j);
            if Some(j) == intercept {
                t.scale[j] = c[0];
                continue;
            }
            let mean = c.iter().sum::<f64>() / n;
            let center = if intercept.is_some() { mean } else { 0.0 };
            let ss: f64 = c.iter().map(|&v| (v - center) * (v - center)).sum();
            let scale = libm::sqrt(ss / n);
            t.center[j] = center;
            t.scale[j] = if scale > 0.0 { scale } else { 1.0 };
        }
        t
    }

    /// Map scaled-space coefficients back to the original columns.
    fn unscale(&self, beta_scaled: &[f64], y_scale: f64) -> Vec<f64> {
        let mut beta: Vec<f64> = beta_scaled
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| b * y_scale / s)
            .collect();
        if let Some(c) = self.intercept {
            let shift: f64 = (0..beta.len())
                .filter(|&j| j != c)
                .map(|j| beta[j] * self.center[j])
                .sum();
            beta[c] -= shift / self.scale[c];
        }
        beta
    }
}

impl PreparedDesign {
    pub fn new(x: &DesignMatrix, opts: &SolverOptions) -> Result<Self> {
        opts.validate()?;
        let (n, k) = (x.nrows(), x.ncols());
        if n <= k {
            return Err(Error::domain(alloc::format!(
                "quantile regression needs more observations than regressors, got n = {n}, k = {k}"
            )));
        }
        check_rank(x)?;
        let transform = if opts.scaling {
            ColumnTransform::fit(x)
        } else {
            ColumnTransform::identity(k)
        };
        let mut cols = Vec::with_capacity(n * k);
        for j in 0..k {
            let (c, s) = (transform.center[j], transform.scale[j]);
            cols.extend(x.column(j).iter().map(|&v| (v - c) / s));
        }
        Ok(Self {
            n,
            k,
            cols,
            transform,
            opts: *opts,
            original: x.clone(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.original
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub(crate) fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn check_response(&self, y: &[f64], tau: f64) -> Result<()> {
        check_probability(tau, "tau")?;
        if y.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("response has non-finite entries"));
        }
        Ok(())
    }

    fn response_scale(&self, y: &[f64]) -> f64 {
        if !self.opts.scaling {
            return 1.0;
        }
        let s = y.iter().map(|v| v.abs()).sum::<f64>() / self.n as f64;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn fit(&self, y: &[f64], tau: f64) -> Result<QuantileFit> {
        self.check_response(y, tau)?;
        let sy = self.response_scale(y);
        let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();
        let interior = ipm::solve(self, &ys, tau);
        if !interior.converged {
            let beta = self.transform.unscale(&interior.beta, sy);
            let best = self.finish(y, tau, beta, Vec::new(), interior.iterations, false);
            return Err(Error::NonConvergence {
                iterations: interior.iterations,
                best: Box::new(best),
            });
        }
        let start = simplex::crossover_basis(self, &interior.residuals);
        self.pivot_to_optimum(y, &ys, sy, tau, start, interior.iterations)
    }

    /// Fit starting the simplex phase from `basis`, typically the basis of a
    /// fit to a nearby response. Falls back to [`Self::fit`] when the basis
    /// is not usable.
    pub fn fit_from_basis(&self, y: &[f64], tau: f64, basis: &[usize]) -> Result<QuantileFit> {
        self.check_response(y, tau)?;
        if basis.len() != self.k || basis.iter().any(|&i| i >= self.n) {
            return self.fit(y, tau);
        }
        let sy = self.response_scale(y);
        let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();
        match self.pivot_to_optimum(y, &ys, sy, tau, basis.to_vec(), 0) {
            Err(Error::NonConvergence { .. }) | Err(Error::SingularSystem(_)) => self.fit(y, tau),
            other => other,
        }
    }

    fn pivot_to_optimum(
        &self,
        y: &[f64],
        ys: &[f64],
        sy: f64,
        tau: f64,
        basis: Vec<usize>,
        iterations: usize,
    ) -> Result<QuantileFit> {
        let max_pivots = 20 * self.k + self.opts.max_iter;
        let out = simplex::solve(self, ys, tau, basis, max_pivots)?;
        let beta = self.transform.unscale(&out.beta, sy);
        let fit = self.finish(y, tau, beta, out.basis, iterations + out.pivots, out.optimal);
        if out.optimal {
            Ok(fit)
        } else {
            Err(Error::NonConvergence {
                iterations: fit.iterations,
                best: Box::new(fit),
            })
        }
    }

    fn finish(
        &self,
        y: &[f64],
        tau: f64,
        coefficients: Vec<f64>,
        basis: Vec<usize>,
        iterations: usize,
        converged: bool,
    ) -> QuantileFit {
        let fitted = self.original.mul_vec(&coefficients);
        let mut residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        for &i in &basis {
            residuals[i] = 0.0;
        }
        let objective = total_loss(&residuals, tau);
        QuantileFit {
            tau,
            coefficients,
            residuals,
            objective,
            iterations,
            converged,
            basis,
        }
    }
}

#[cfg(test)]
mod tests;

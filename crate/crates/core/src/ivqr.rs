//! Instrumental-variable quantile regression with network instruments.
//!
//! For each candidate `g` on a grid, Step 1 regresses `y - g * ybar` on
//! `[X | R]` and keeps the instrument coefficients `lambda(g)`. Step 2 picks
//! the `g` minimizing `lambda' A lambda`. Step 3 regresses `y - g_hat * ybar`
//! on `X` alone.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::network::apply_weights;
use crate::qr::{DesignMatrix, PreparedDesign, QuantileFit, SolverOptions};
use crate::sim::{presample, PanelData};

/// Instruments `W^power Y_{t-lag}`, one column per term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub terms: Vec<(usize, usize)>,
}

impl Default for InstrumentSpec {
    fn default() -> Self {
        Self {
            terms: vec![(2, 1), (3, 1)],
        }
    }
}

impl InstrumentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::domain("at least one instrument is required"));
        }
        for &(power, lag) in &self.terms {
            if power == 0 || lag == 0 {
                return Err(Error::domain(format!(
                    "instrument W^{power} Y(t-{lag}) needs power >= 1 and lag >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        self.terms.iter().map(|t| t.1).max().unwrap_or(1)
    }
}

/// The stacked estimation problem. Rows run node-major within period.
///
/// `x` columns: `1, z_1..z_q, ybar(t-1), y(t-1), F_t, F_{t-1}, .., F_{t-p}`
/// (each `F` block holds the `m` factors in order).
#[derive(Debug, Clone)]
pub struct StackedRegression {
    pub y: Vec<f64>,
    pub ybar: Vec<f64>,
    pub x: DesignMatrix,
    pub r: DesignMatrix,
    /// `(node, period)` of each row; periods index panel columns.
    pub index: Vec<(usize, usize)>,
    pub x_names: Vec<String>,
    pub r_names: Vec<String>,
    pub q: usize,
    pub m: usize,
    pub p: usize,
}

impl StackedRegression {
    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn kx(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_instruments(&self) -> usize {
        self.r.ncols()
    }

    /// Column range of the factor block in `x`.
    pub fn factor_columns(&self) -> core::ops::Range<usize> {
        3 + self.q..self.kx()
    }

    /// Names of `theta = (gamma1, phi)` in estimator order.
    pub fn theta_names(&self) -> Vec<String> {
        let mut names = vec![String::from("ybar")];
        names.extend(self.x_names.iter().cloned());
        names
    }

    /// `[ybar | X]`.
    pub fn ybar_x(&self) -> Result<DesignMatrix> {
        let ybar = DesignMatrix::from_columns(core::slice::from_ref(&self.ybar))?;
        ybar.hstack(&self.x)
    }

    /// `[R | X]`.
    pub fn psi(&self) -> Result<DesignMatrix> {
        self.r.hstack(&self.x)
    }

    fn shifted_response(&self, gamma1: f64) -> Vec<f64> {
        self.y.iter().zip(&self.ybar).map(|(y, b)| y - gamma1 * b).collect()
    }
}

/// First usable panel column for factor lag `p` and the given instruments.
pub fn first_usable_period(p: usize, spec: &InstrumentSpec) -> usize {
    presample(p).max(spec.max_lag())
}

pub fn build_stacked(panel: &PanelData, p: usize, spec: &InstrumentSpec) -> Result<StackedRegression> {
    spec.validate()?;
    let (n, periods, q, m) = (panel.n(), panel.periods(), panel.q(), panel.m());
    let t0 = first_usable_period(p, spec);
    if periods <= t0 {
        return Err(Error::domain(format!(
            "panel has {periods} periods but estimation starts at period {t0}"
        )));
    }
    for t in 0..periods {
        if let Some(i) = panel.period(t).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i, period: t });
        }
    }
    let w = &panel.network;
    let rows = n * (periods - t0);
    let kx = 3 + q + (p + 1) * m;
    let mut y = Vec::with_capacity(rows);
    let mut ybar = Vec::with_capacity(rows);
    let mut x_cols = vec![Vec::with_capacity(rows); kx];
    let mut r_cols = vec![Vec::with_capacity(rows); spec.terms.len()];
    let mut index = Vec::with_capacity(rows);

    for t in t0..periods {
        let yt = panel.period(t);
        let prev = panel.period(t - 1);
        let wy = apply_weights(w, yt, 1)?;
        let wprev = apply_weights(w, prev, 1)?;
        let instruments: Vec<Vec<f64>> = spec
            .terms
            .iter()
            .map(|&(power, lag)| apply_weights(w, panel.period(t - lag), power))
            .collect::<Result<_>>()?;
        for i in 0..n {
            y.push(yt[i]);
            ybar.push(wy[i]);
            index.push((i, t));
            x_cols[0].push(1.0);
            for l in 0..q {
                x_cols[1 + l].push(panel.z[(i, l)]);
            }
            x_cols[1 + q].push(wprev[i]);
            x_cols[2 + q].push(prev[i]);
            for lag in 0..=p {
                for f in 0..m {
                    x_cols[3 + q + lag * m + f].push(panel.f[(t - lag, f)]);
                }
            }
            for (col, inst) in r_cols.iter_mut().zip(&instruments) {
                col.push(inst[i]);
            }
        }
    }

    let mut x_names = vec![String::from("intercept")];
    x_names.extend((1..=q).map(|l| format!("z{l}")));
    x_names.push(String::from("ybar_lag1"));
    x_names.push(String::from("y_lag1"));
    for lag in 0..=p {
        for f in 1..=m {
            x_names.push(format!("f{f}_lag{lag}"));
        }
    }
    let r_names = spec
        .terms
        .iter()
        .map(|&(power, lag)| format!("w{power}y_lag{lag}"))
        .collect();

    Ok(StackedRegression {
        y,
        ybar,
        x: DesignMatrix::from_columns(&x_cols)?,
        r: DesignMatrix::from_columns(&r_cols)?,
        index,
        x_names,
        r_names,
        q,
        m,
        p,
    })
}

/// Candidate values for `gamma1`: a coarse grid, then local refinements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub coarse_step: f64,
    pub refine_rounds: usize,
    pub refine_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: -0.98,
            upper: 0.98,
            coarse_step: 0.02,
            refine_rounds: 3,
            refine_factor: 10.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || self.lower <= -1.0 || self.upper >= 1.0 {
            return Err(Error::domain(format!(
                "grid [{}, {}] must be an increasing interval inside (-1, 1)",
                self.lower, self.upper
            )));
        }
        if !(self.coarse_step > 0.0) {
            return Err(Error::domain("grid coarse_step must be positive"));
        }
        if !(self.refine_factor > 1.0) {
            return Err(Error::domain("grid refine_factor must exceed 1"));
        }
        Ok(())
    }

    pub fn coarse_points(&self) -> Vec<f64> {
        let count = libm::floor((self.upper - self.lower) / self.coarse_step + 1e-9) as usize + 1;
        (0..count).map(|k| self.lower + k as f64 * self.coarse_step).collect()
    }

    /// Points within two current steps of `center`, at the next finer step.
    fn refined_points(&self, center: f64, step: f64) -> (Vec<f64>, f64) {
        let fine = step / self.refine_factor;
        let half = libm::round(2.0 * self.refine_factor) as i64;
        let pts = (-half..=half)
            .map(|j| center + j as f64 * fine)
            .filter(|g| *g >= self.lower - 1e-12 && *g <= self.upper + 1e-12)
            .collect();
        (pts, fine)
    }
}

/// Weighting matrix of the instrument norm; checked symmetric positive definite.
fn validate_weight(weight: &DMatrix<f64>, l: usize) -> Result<()> {
    if weight.nrows() != l || weight.ncols() != l {
        return Err(Error::Dimension {
            expected: l,
            found: weight.nrows(),
        });
    }
    if (weight - weight.transpose()).amax() > 1e-12 * (1.0 + weight.amax()) {
        return Err(Error::domain("instrument weight matrix must be symmetric"));
    }
    if weight.clone().cholesky().is_none() {
        return Err(Error::domain("instrument weight matrix must be positive definite"));
    }
    Ok(())
}

fn weighted_norm(lambda: &[f64], weight: &DMatrix<f64>) -> f64 {
    let l = lambda.len();
    let mut acc = 0.0;
    for a in 0..l {
        for b in 0..l {
            acc += lambda[a] * weight[(a, b)] * lambda[b];
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvqrEstimate {
    pub tau: f64,
    pub gamma1: f64,
    /// Coefficients on the columns of `x`.
    pub phi: Vec<f64>,
    /// Step-1 instrument coefficients at `gamma1`; near zero when the instruments are valid.
    pub lambda: Vec<f64>,
    /// `(g, lambda(g)' A lambda(g))`, sorted by `g`.
    pub profile: Vec<(f64, f64)>,
    /// Check loss of the Step-3 fit.
    pub objective: f64,
    pub residuals: Vec<f64>,
    /// Several grid points attained the minimum; the smallest was taken.
    pub tie: bool,
    pub failed_grid_points: usize,
    pub std_errors: Option<Vec<f64>>,
}

impl IvqrEstimate {
    /// `(gamma1, phi)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.gamma1];
        t.extend_from_slice(&self.phi);
        t
    }
}

/// Step-1 and Step-3 designs prepared once for a stacked regression, reused
/// across quantiles and grid points.
#[derive(Debug, Clone)]
pub struct IvqrSolver<'a> {
    stacked: &'a StackedRegression,
    step1: PreparedDesign,
    step3: PreparedDesign,
    grid: GridSpec,
    weight: DMatrix<f64>,
}

impl<'a> IvqrSolver<'a> {
    pub fn new(
        stacked: &'a StackedRegression,
        grid: GridSpec,
        weight: Option<DMatrix<f64>>,
        opts: &SolverOptions,
    ) -> Result<Self> {
        grid.validate()?;
        let l = stacked.n_instruments();
        let weight = weight.unwrap_or_else(|| DMatrix::identity(l, l));
        validate_weight(&weight, l)?;
        for j in 0..l {
            let col = stacked.r.column(j);
            if col.iter().all(|&v| v == col[0]) {
                return Err(Error::DegenerateInstrument { column: j });
            }
        }
        let full = stacked.x.hstack(&stacked.r)?;
        Ok(Self {
            stacked,
            step1: PreparedDesign::new(&full, opts)?,
            step3: PreparedDesign::new(&stacked.x, opts)?,
            grid,
            weight,
        })
    }

    pub fn stacked(&self) -> &StackedRegression {
        self.stacked
    }

    /// Step 1 at `gamma1`: returns `(eta, fit)` with `eta = (phi, lambda)`.
    pub fn step1(&self, gamma1: f64, tau: f64) -> Result<(Vec<f64>, QuantileFit)> {
        self.step1_warm(gamma1, tau, None)
    }

    fn step1_warm(&self, gamma1: f64, tau: f64, basis: Option<&[usize]>) -> Result<(Vec<f64>, QuantileFit)> {
        if !(gamma1.abs() < 1.0) {
            return Err(Error::domain(format!("gamma1 candidate {gamma1} must lie in (-1, 1)")));
        }
        let y = self.stacked.shifted_response(gamma1);
        let fit = match basis {
            Some(b) => self.step1.fit_from_basis(&y, tau, b)?,
            None => self.step1.fit(&y, tau)?,
        };
        Ok((fit.coefficients.clone(), fit))
    }

    fn lambda_norm(&self, eta: &[f64]) -> f64 {
        weighted_norm(&eta[self.stacked.kx()..], &self.weight)
    }

    /// Step 2: coarse grid, then `refine_rounds` local refinements.
    pub fn profile(&self, tau: f64) -> Result<Profile> {
        check_probability(tau, "tau")?;
        let mut trace: Vec<(f64, f64, Vec<usize>)> = Vec::new();
        let mut failed = 0;
        let mut basis: Option<Vec<usize>> = None;
        for g in self.grid.coarse_points() {
            match self.step1_warm(g, tau, basis.as_deref()) {
                Ok((eta, fit)) => {
                    trace.push((g, self.lambda_norm(&eta), fit.basis.clone()));
                    basis = Some(fit.basis);
                }
                Err(_) => failed += 1,
            }
        }
        if trace.is_empty() {
            return Err(Error::Estimation(String::from("every grid evaluation failed")));
        }
        let mut step = self.grid.coarse_step;
        for _ in 0..self.grid.refine_rounds {
            let (center, _, start) = argmin(&trace).clone();
            let (points, fine) = self.grid.refined_points(center, step);
            let mut basis = Some(start);
            for g in points {
                if trace.iter().any(|e| (e.0 - g).abs() < 1e-12) {
                    continue;
                }
                match self.step1_warm(g, tau, basis.as_deref()) {
                    Ok((eta, fit)) => {
                        trace.push((g, self.lambda_norm(&eta), fit.basis.clone()));
                        basis = Some(fit.basis);
                    }
                    Err(_) => failed += 1,
                }
            }
            step = fine;
        }
        trace.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = argmin(&trace);
        let floor = best.1;
        let ties = trace.iter().filter(|e| e.1 - floor <= 1e-12 * floor.max(1.0)).count();
        Ok(Profile {
            gamma1: best.0,
            minimum: floor,
            trace: trace.iter().map(|e| (e.0, e.1)).collect(),
            tie: ties > 1,
            failed,
        })
    }

    pub fn estimate(&self, tau: f64) -> Result<IvqrEstimate> {
        let profile = self.profile(tau)?;
        let (eta, _) = self.step1(profile.gamma1, tau)?;
        let y = self.stacked.shifted_response(profile.gamma1);
        let fit = self.step3.fit(&y, tau)?;
        Ok(IvqrEstimate {
            tau,
            gamma1: profile.gamma1,
            phi: fit.coefficients,
            lambda: eta[self.stacked.kx()..].to_vec(),
            profile: profile.trace,
            objective: fit.objective,
            residuals: fit.residuals,
            tie: profile.tie,
            failed_grid_points: profile.failed,
            std_errors: None,
        })
    }
}

/// Smallest `g` among the minimizers (the trace is kept in evaluation order,
/// so compare `g` explicitly).
fn argmin(trace: &[(f64, f64, Vec<usize>)]) -> &(f64, f64, Vec<usize>) {
    let floor = trace.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    trace
        .iter()
        .filter(|e| e.1 - floor <= 1e-12 * floor.max(1.0))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("trace is non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub gamma1: f64,
    pub minimum: f64,
    pub trace: Vec<(f64, f64)>,
    pub tie: bool,
    pub failed: usize,
}

pub fn step1_fit(
    s: &StackedRegression,
    gamma1_tilde: f64,
    tau: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, QuantileFit)> {
    if !(gamma1_tilde.abs() < 1.0) {
        return Err(Error::domain(format!(
            "gamma1 candidate {gamma1_tilde} must lie in (-1, 1)"
        )));
    }
    let full = s.x.hstack(&s.r)?;
    let fit = crate::qr::qr_fit(&full, &s.shifted_response(gamma1_tilde), tau, opts)?;
    Ok((fit.coefficients.clone(), fit))
}

pub fn profile_objective(
    s: &StackedRegression,
    tau: f64,
    grid: GridSpec,
    weight: Option<DMatrix<f64>>,
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>> {
    Ok(IvqrSolver::new(s, grid, weight, opts)?.profile(tau)?.trace)
}

pub fn ivqr_estimate(
    s: &StackedRegression,
    tau: f64,
    grid: GridSpec,
    weight: Option<DMatrix<f64>>,
    opts: &SolverOptions,
) -> Result<IvqrEstimate> {
    IvqrSolver::new(s, grid, weight, opts)?.estimate(tau)
}

/// Comparison models fitted by ordinary quantile regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictedModel {
    /// `1, Z, ybar(t-1), y(t-1)`.
    Nqar,
    /// NQAR plus the factor block; all-zero factor columns are dropped.
    Nqarf,
    /// `ybar_t` treated as exogenous: `[ybar | X]`.
    DnqrOrdinaryQr,
}

/// Design of a restricted model and the `x` columns it keeps.
pub fn restricted_design(s: &StackedRegression, model: RestrictedModel) -> Result<(DesignMatrix, Vec<usize>)> {
    match model {
        RestrictedModel::Nqar => {
            let keep: Vec<usize> = (0..3 + s.q).collect();
            Ok((select_columns(&s.x, &keep)?, keep))
        }
        RestrictedModel::Nqarf => {
            let keep: Vec<usize> = (0..s.kx())
                .filter(|&j| j < 3 + s.q || s.x.column(j).iter().any(|&v| v != 0.0))
                .collect();
            Ok((select_columns(&s.x, &keep)?, keep))
        }
        RestrictedModel::DnqrOrdinaryQr => Ok((s.ybar_x()?, (0..s.kx()).collect())),
    }
}

fn select_columns(x: &DesignMatrix, keep: &[usize]) -> Result<DesignMatrix> {
    let cols: Vec<Vec<f64>> = keep.iter().map(|&j| x.column(j).to_vec()).collect();
    DesignMatrix::from_columns(&cols)
}

pub fn fit_restricted(
    s: &StackedRegression,
    tau: f64,
    model: RestrictedModel,
    opts: &SolverOptions,
) -> Result<QuantileFit> {
    let (design, _) = restricted_design(s, model)?;
    crate::qr::qr_fit(&design, &s.y, tau, opts)
}

/// `R^2(tau) = 1 - V_hat / V_tilde`; negative values are allowed.
pub fn goodness_of_fit(unrestricted_objective: f64, restricted_objective: f64) -> Result<f64> {
    if restricted_objective == 0.0 {
        return Err(Error::DegenerateFit);
    }
    if !(restricted_objective > 0.0) || !(unrestricted_objective >= 0.0) {
        return Err(Error::domain("check-loss objectives must be nonnegative"));
    }
    Ok(1.0 - unrestricted_objective / restricted_objective)
}

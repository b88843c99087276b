//! The dynamic network quantile autoregression data-generating process.
//!
//! Each period solves `S_t Y_t = A_0t + H_t Y_{t-1} + B_t F_t` with
//! `S_t = I - diag(gamma1) W`, where every node draws its own coefficients
//! from a latent innovation `u_it`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{gamma_cdf, norm_cdf, CovariateSampler, InnovationDist};
use crate::error::{check_probability, Error, Result};
use crate::network::NetworkWeights;

const NEUMANN_TOL: f64 = 1e-12;
const NEUMANN_MAX_ITER: usize = 100_000;

/// Coefficients of one node-period. `beta` is factor-major:
/// `beta[f * (p + 1) + l]` multiplies factor `f` at lag `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDraw {
    pub gamma: [f64; 4],
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

fn gamma_at(u: f64, shape: f64, scale: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        gamma_cdf(u, shape, scale).expect("shape and scale are positive")
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

/// Which set of coefficient functions drives the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientFamily {
    /// The study design: `gamma1 = 0.1 Phi(u)`, `gamma2 = 0.4 logistic(u)`, `gamma3 = 0.4 Phi(u)`.
    #[default]
    Baseline,
    /// Strong contemporaneous spillover decreasing in the quantile:
    /// `gamma1 = 0.5 - 0.3 Phi(u)`, `gamma2 = 0.1 logistic(u)`, `gamma3 = 0.1 Phi(u)`.
    DominantSpillover,
}

/// Coefficient functions, with optional constant overrides for the three
/// autoregressive terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CoefficientModel {
    pub family: CoefficientFamily,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma3: Option<f64>,
}

impl CoefficientModel {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn dominant_spillover() -> Self {
        Self {
            family: CoefficientFamily::DominantSpillover,
            ..Self::default()
        }
    }

    /// Node covariates.
    pub fn q(&self) -> usize {
        5
    }

    /// Common factors.
    pub fn m(&self) -> usize {
        2
    }

    /// Factor lags.
    pub fn p(&self) -> usize {
        1
    }

    pub fn draw(&self, u: f64) -> CoefficientDraw {
        let phi = norm_cdf(u);
        let (g1, g2, g3) = match self.family {
            CoefficientFamily::Baseline => (0.1 * phi, 0.4 * logistic(u), 0.4 * phi),
            CoefficientFamily::DominantSpillover => (0.5 - 0.3 * phi, 0.1 * logistic(u), 0.1 * phi),
        };
        CoefficientDraw {
            gamma: [
                u,
                self.gamma1.unwrap_or(g1),
                self.gamma2.unwrap_or(g2),
                self.gamma3.unwrap_or(g3),
            ],
            alpha: vec![
                0.5 * phi,
                0.3 * gamma_at(u, 1.0, 2.0),
                0.2 * gamma_at(u, 2.0, 2.0),
                0.25 * gamma_at(u, 3.0, 2.0),
                0.2 * gamma_at(u, 2.0, 1.0),
            ],
            beta: vec![
                0.1 * phi,
                0.3 * gamma_at(u, 2.0, 2.0),
                0.2 * gamma_at(u, 1.0, 2.0),
                0.3 * gamma_at(u, 2.0, 1.0),
            ],
        }
    }

    /// `(sup |gamma1|, sup |gamma2| + sup |gamma3|)` over the innovation.
    pub fn gamma_bounds(&self) -> (f64, f64) {
        let (s1, s2, s3) = match self.family {
            CoefficientFamily::Baseline => (0.1, 0.4, 0.4),
            CoefficientFamily::DominantSpillover => (0.5, 0.1, 0.1),
        };
        let pick = |o: Option<f64>, s: f64| o.map_or(s, f64::abs);
        (pick(self.gamma1, s1), pick(self.gamma2, s2) + pick(self.gamma3, s3))
    }
}

/// The study's coefficient functions at innovation `u`.
pub fn coef_draw(u: f64) -> CoefficientDraw {
    CoefficientModel::baseline().draw(u)
}

/// Quantile coefficients in reporting order:
/// `gamma0..gamma3, alpha_1..alpha_q, beta` (factor-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub gamma: [f64; 4],
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub m: usize,
    pub p: usize,
}

impl ParamVector {
    pub fn from_draw(d: CoefficientDraw, m: usize, p: usize) -> Self {
        Self {
            gamma: d.gamma,
            alpha: d.alpha,
            beta: d.beta,
            m,
            p,
        }
    }

    /// Build from the estimator layout `(gamma1, gamma0, alpha, gamma2,
    /// gamma3, factor coefficients lag-major)`.
    pub fn from_theta(theta: &[f64], q: usize, m: usize, p: usize) -> Result<Self> {
        let len = 4 + q + (p + 1) * m;
        if theta.len() != len {
            return Err(Error::Dimension {
                expected: len,
                found: theta.len(),
            });
        }
        let f0 = 4 + q;
        let mut beta = vec![0.0; m * (p + 1)];
        for l in 0..=p {
            for f in 0..m {
                beta[f * (p + 1) + l] = theta[f0 + l * m + f];
            }
        }
        Ok(Self {
            gamma: [theta[1], theta[0], theta[2 + q], theta[3 + q]],
            alpha: theta[2..2 + q].to_vec(),
            beta,
            m,
            p,
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.gamma.to_vec();
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn names(&self) -> Vec<String> {
        param_names(self.alpha.len(), self.m, self.p)
    }
}

/// Parameter labels in reporting order, e.g. `gamma1`, `alpha3`, `beta21`
/// (factor 2, lag 1).
pub fn param_names(q: usize, m: usize, p: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..4).map(|j| format!("gamma{j}")).collect();
    names.extend((1..=q).map(|l| format!("alpha{l}")));
    for f in 1..=m {
        for l in 0..=p {
            names.push(format!("beta{f}{l}"));
        }
    }
    names
}

/// Population quantile coefficients: the coefficient functions at `u = F^-1(tau)`.
pub fn true_quantile_coefs(tau: f64, dist: &InnovationDist, model: &CoefficientModel) -> Result<ParamVector> {
    check_probability(tau, "tau")?;
    let u = dist.quantile(tau)?;
    Ok(ParamVector::from_draw(model.draw(u), model.m(), model.p()))
}

/// Simulated or loaded network panel. `y` is `n x T`, `z` is `n x q`,
/// `f` is `T x m`; the first `max(1, p)` columns only supply lags.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub network: NetworkWeights,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>, z: DMatrix<f64>, f: DMatrix<f64>, network: NetworkWeights) -> Result<Self> {
        let n = y.nrows();
        if z.nrows() != n {
            return Err(Error::Dimension {
                expected: n,
                found: z.nrows(),
            });
        }
        if f.nrows() != y.ncols() {
            return Err(Error::Dimension {
                expected: y.ncols(),
                found: f.nrows(),
            });
        }
        if network.n() != n {
            return Err(Error::Dimension {
                expected: n,
                found: network.n(),
            });
        }
        for (idx, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    node: idx % n,
                    period: idx / n,
                });
            }
        }
        if z.iter().chain(f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("covariates or factors contain non-finite values"));
        }
        Ok(Self { y, z, f, network })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn m(&self) -> usize {
        self.f.ncols()
    }

    pub fn period(&self, t: usize) -> &[f64] {
        let n = self.n();
        &self.y.as_slice()[t * n..(t + 1) * n]
    }
}

/// Leading periods reserved for lags.
pub fn presample(p: usize) -> usize {
    p.max(1)
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    /// Usable periods; the panel carries `presample(p)` extra leading periods.
    pub t: usize,
    pub network: NetworkWeights,
    pub dist: InnovationDist,
    pub coefficients: CoefficientModel,
    pub burn_in: usize,
    pub z_correlation: f64,
}

impl SimConfig {
    pub fn new(n: usize, t: usize, network: NetworkWeights, dist: InnovationDist) -> Self {
        Self {
            n,
            t,
            network,
            dist,
            coefficients: CoefficientModel::baseline(),
            burn_in: 100,
            z_correlation: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::domain("simulation needs n >= 1 and t >= 1"));
        }
        if self.network.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: self.network.n(),
            });
        }
        self.dist.validate()?;
        let report = check_stationarity(self.coefficients.gamma_bounds());
        if !report.pass {
            return Err(Error::domain(format!(
                "coefficient bounds violate stationarity: c1 = {}, c23 = {}",
                report.c1, report.c23
            )));
        }
        Ok(())
    }

    pub fn total_columns(&self) -> usize {
        self.t + presample(self.coefficients.p())
    }
}

/// A simulated panel plus the latent innovations behind every retained cell.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub panel: PanelData,
    /// `n x T` innovations aligned with `panel.y`.
    pub u: DMatrix<f64>,
    /// Responses in the period just before the first retained column.
    pub y_initial: Vec<f64>,
    /// Factor rows for the `p` periods before the first retained column, oldest first.
    pub f_initial: DMatrix<f64>,
}

pub fn simulate_panel<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<PanelData> {
    simulate_panel_traced(config, rng).map(|t| t.panel)
}

pub fn simulate_panel_traced<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimulationTrace> {
    config.validate()?;
    let model = &config.coefficients;
    let (n, q, m, p) = (config.n, model.q(), model.m(), model.p());
    let kept = config.total_columns();
    let steps = config.burn_in + kept;

    let sampler = CovariateSampler::new(q, config.z_correlation)?;
    let mut z = DMatrix::zeros(n, q);
    for i in 0..n {
        for (l, v) in sampler.sample(rng).into_iter().enumerate() {
            z[(i, l)] = v;
        }
    }
    // Row s + p holds F for simulated step s; the first p rows are pre-sample.
    let f_all = DMatrix::from_fn(steps + p, m, |_, _| StandardNormal.sample(rng));

    let w = &config.network;
    let mut y_prev = vec![0.0; n];
    let mut wy_prev = vec![0.0; n];
    let mut y = DMatrix::zeros(n, kept);
    let mut u_kept = DMatrix::zeros(n, kept);
    let mut y_initial = vec![0.0; n];
    let mut a1 = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    for s in 0..steps {
        if s == config.burn_in {
            y_initial.copy_from_slice(&y_prev);
        }
        w.apply_into(&y_prev, &mut wy_prev);
        for i in 0..n {
            let u = config.dist.sample(rng);
            let c = model.draw(u);
            a1[i] = c.gamma[1];
            let mut v = c.gamma[0] + c.gamma[2] * wy_prev[i] + c.gamma[3] * y_prev[i];
            for l in 0..q {
                v += c.alpha[l] * z[(i, l)];
            }
            for f in 0..m {
                for lag in 0..=p {
                    v += c.beta[f * (p + 1) + lag] * f_all[(s + p - lag, f)];
                }
            }
            rhs[i] = v;
            if s >= config.burn_in {
                u_kept[(i, s - config.burn_in)] = u;
            }
        }
        let y_t = solve_contemporaneous(&a1, w, &rhs).map_err(|e| Error::Simulation {
            period: s,
            reason: e.to_string(),
        })?;
        if let Some(node) = y_t.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node, period: s });
        }
        if s >= config.burn_in {
            y.column_mut(s - config.burn_in).copy_from_slice(&y_t);
        }
        y_prev = y_t;
    }

    let f = f_all.rows(config.burn_in + p, kept).into_owned();
    let f_initial = f_all.rows(config.burn_in, p).into_owned();
    Ok(SimulationTrace {
        panel: PanelData::new(y, z, f, config.network.clone())?,
        u: u_kept,
        y_initial,
        f_initial,
    })
}

/// Solve `(I - diag(a1) W) y = rhs` by the Neumann series.
pub fn solve_contemporaneous(a1: &[f64], w: &NetworkWeights, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = w.n();
    for len in [a1.len(), rhs.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                found: len,
            });
        }
    }
    let a_max = a1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let contraction = a_max * w.max_row_sum();
    if !(contraction < 1.0) {
        return Err(Error::domain(format!(
            "Neumann series needs max|a1| * ||W||_inf < 1, got {contraction}"
        )));
    }
    let mut y = rhs.to_vec();
    let mut term = rhs.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..NEUMANN_MAX_ITER {
        w.apply_into(&term, &mut next);
        let mut size = 0.0f64;
        for i in 0..n {
            term[i] = a1[i] * next[i];
            y[i] += term[i];
            size = size.max(term[i].abs());
        }
        if !(size >= NEUMANN_TOL) {
            return Ok(y);
        }
    }
    Err(Error::SingularSystem(format!(
        "Neumann series did not reach {NEUMANN_TOL} in {NEUMANN_MAX_ITER} terms"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub c1: f64,
    pub c23: f64,
    pub sum: f64,
    pub c1_below_one: bool,
    pub c23_below_one: bool,
    pub sum_below_one: bool,
    pub pass: bool,
}

/// Contraction conditions on the coefficient suprema `(c1, c23)`.
pub fn check_stationarity((c1, c23): (f64, f64)) -> StationarityReport {
    let sum = c1 + c23;
    let (a, b, c) = (c1 < 1.0, c23 < 1.0, sum < 1.0);
    StationarityReport {
        c1,
        c23,
        sum,
        c1_below_one: a,
        c23_below_one: b,
        sum_below_one: c,
        pass: a && b && c,
    }
}

/// Closed-form solution of the two-node system
/// `y1 = g0(u1) + g1(u1) a12 y2`, `y2 = g0(u2) + g1(u2) a21 y1`.
/// `gamma` maps an innovation to `(g0, g1)`.
pub fn endogeneity_demo<G>(gamma: G, a12: f64, a21: f64, u1: f64, u2: f64) -> Result<(f64, f64)>
where
    G: Fn(f64) -> (f64, f64),
{
    let (g01, g11) = gamma(u1);
    let (g02, g12) = gamma(u2);
    let den = 1.0 - a12 * a21 * g11 * g12;
    if den.abs() < 1e-10 {
        return Err(Error::SingularSystem(format!(
            "two-node system is singular (denominator {den})"
        )));
    }
    Ok(((g01 + g02 * g11 * a12) / den, (g02 + g01 * g12 * a21) / den))
}

//! Monte Carlo experiments: per-replication estimation and aggregation into
//! RMSE, bias and coverage tables (all scaled by 100).

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distributions::InnovationDist;
use crate::error::{check_probability, Error, Result};
use crate::inference::{ivqr_covariance, qr_covariance, InferenceOptions};
use crate::ivqr::{build_stacked, GridSpec, InstrumentSpec, IvqrSolver, StackedRegression};
use crate::network::{row_normalize, NetworkType, NetworkWeights};
use crate::qr::{PreparedDesign, SolverOptions};
use crate::rng::{replication_rng, SHARED_STREAM};
use crate::sim::{param_names, simulate_panel, true_quantile_coefs, CoefficientModel, ParamVector, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ivqr,
    /// Ordinary QR treating `ybar_t` as exogenous.
    OrdinaryQr,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Ivqr => "ivqr",
            Estimator::OrdinaryQr => "ordinary_qr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    pub network: NetworkType,
    pub dist: InnovationDist,
    pub taus: Vec<f64>,
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    /// Draw one network for every replication instead of one per replication.
    pub fixed_network: bool,
    pub coefficients: CoefficientModel,
    pub burn_in: usize,
    pub grid: GridSpec,
    pub instruments: InstrumentSpec,
    pub solver: SolverOptions,
    pub inference: InferenceOptions,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 100,
            t: 100,
            network: NetworkType::Dyad,
            dist: InnovationDist::StdNormal,
            taus: vec![0.1, 0.5, 0.9],
            replications: 200,
            estimators: vec![Estimator::Ivqr, Estimator::OrdinaryQr],
            seed: 0,
            fixed_network: false,
            coefficients: CoefficientModel::baseline(),
            burn_in: 100,
            grid: GridSpec::default(),
            instruments: InstrumentSpec::default(),
            solver: SolverOptions::default(),
            inference: InferenceOptions::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.taus.is_empty() || self.estimators.is_empty() {
            return Err(Error::domain("a scenario needs at least one tau and one estimator"));
        }
        for &tau in &self.taus {
            check_probability(tau, "tau")?;
        }
        check_probability(self.inference.alpha, "alpha")?;
        self.dist.validate()?;
        self.grid.validate()?;
        self.instruments.validate()?;
        self.solver.validate()?;
        if self.n < 2 || self.t == 0 {
            return Err(Error::domain("scenario needs n >= 2 and t >= 1"));
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let c = &self.coefficients;
        param_names(c.q(), c.m(), c.p())
    }

    /// Network shared by every replication when `fixed_network` is set.
    pub fn shared_network(&self) -> Result<NetworkWeights> {
        let mut rng = replication_rng(self.seed, SHARED_STREAM);
        Ok(row_normalize(&self.network.generate(self.n, &mut rng)?))
    }
}

/// Estimates and interval checks in reporting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub estimates: Vec<f64>,
    pub truth: Vec<f64>,
    pub covered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub estimator: Estimator,
    pub tau: f64,
    pub result: core::result::Result<CellEstimate, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub cells: Vec<CellOutcome>,
}

/// One replication: network (unless shared), panel, then every `(estimator, tau)` cell.
/// Failures are recorded per cell and never abort the replication.
pub fn run_replication(scenario: &Scenario, rep: usize, shared: Option<&NetworkWeights>) -> ReplicationResult {
    let failed_all = |reason: String| ReplicationResult {
        rep,
        cells: scenario
            .estimators
            .iter()
            .flat_map(|&e| {
                scenario.taus.iter().map({
                    let reason = reason.clone();
                    move |&tau| CellOutcome {
                        estimator: e,
                        tau,
                        result: Err(reason.clone()),
                    }
                })
            })
            .collect(),
    };
    let stacked = match replication_data(scenario, rep, shared) {
        Ok(s) => s,
        Err(e) => return failed_all(e.to_string()),
    };
    let c = &scenario.coefficients;
    let mut cells = Vec::with_capacity(scenario.estimators.len() * scenario.taus.len());
    for &estimator in &scenario.estimators {
        let prepared = prepare(scenario, estimator, &stacked);
        for &tau in &scenario.taus {
            let result = prepared
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|p| estimate_cell(scenario, p, &stacked, tau))
                .and_then(|(theta, ci)| {
                    let truth = true_quantile_coefs(tau, &scenario.dist, c)?.to_vec();
                    let est = ParamVector::from_theta(&theta, c.q(), c.m(), c.p())?.to_vec();
                    let lo: Vec<f64> = ci.iter().map(|x| x.0).collect();
                    let hi: Vec<f64> = ci.iter().map(|x| x.1).collect();
                    let lo = ParamVector::from_theta(&lo, c.q(), c.m(), c.p())?.to_vec();
                    let hi = ParamVector::from_theta(&hi, c.q(), c.m(), c.p())?.to_vec();
                    let covered = (0..truth.len())
                        .map(|j| lo[j] <= truth[j] && truth[j] <= hi[j])
                        .collect();
                    Ok(CellEstimate {
                        estimates: est,
                        truth,
                        covered,
                    })
                })
                .map_err(|e| e.to_string());
            cells.push(CellOutcome { estimator, tau, result });
        }
    }
    ReplicationResult { rep, cells }
}

fn replication_data(scenario: &Scenario, rep: usize, shared: Option<&NetworkWeights>) -> Result<StackedRegression> {
    scenario.validate()?;
    let mut rng = replication_rng(scenario.seed, rep as u64);
    let network = match shared {
        Some(w) => w.clone(),
        None if scenario.fixed_network => scenario.shared_network()?,
        None => row_normalize(&scenario.network.generate(scenario.n, &mut rng)?),
    };
    let config = SimConfig {
        coefficients: scenario.coefficients,
        burn_in: scenario.burn_in,
        ..SimConfig::new(scenario.n, scenario.t, network, scenario.dist)
    };
    let panel = simulate_panel(&config, &mut rng)?;
    build_stacked(&panel, scenario.coefficients.p(), &scenario.instruments)
}

enum Prepared<'a> {
    Ivqr(Box<IvqrSolver<'a>>),
    OrdinaryQr(PreparedDesign),
}

fn prepare<'a>(scenario: &Scenario, estimator: Estimator, s: &'a StackedRegression) -> Result<Prepared<'a>> {
    match estimator {
        Estimator::Ivqr => Ok(Prepared::Ivqr(Box::new(IvqrSolver::new(
            s,
            scenario.grid,
            None,
            &scenario.solver,
        )?))),
        Estimator::OrdinaryQr => Ok(Prepared::OrdinaryQr(PreparedDesign::new(
            &s.ybar_x()?,
            &scenario.solver,
        )?)),
    }
}

type ThetaWithIntervals = (Vec<f64>, Vec<(f64, f64)>);

fn estimate_cell(scenario: &Scenario, p: &Prepared<'_>, s: &StackedRegression, tau: f64) -> Result<ThetaWithIntervals> {
    match p {
        Prepared::Ivqr(solver) => {
            let est = solver.estimate(tau)?;
            let cov = ivqr_covariance(s, &est, &scenario.inference)?;
            Ok((est.theta(), cov.intervals))
        }
        Prepared::OrdinaryQr(design) => {
            let fit = design.fit(&s.y, tau)?;
            let cov = qr_covariance(s, &fit, &scenario.inference)?;
            Ok((fit.coefficients, cov.intervals))
        }
    }
}

/// One `(estimator, tau, parameter)` cell of the report. Moments are `None`
/// when no replication of the cell succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub estimator: Estimator,
    pub tau: f64,
    pub param: String,
    pub truth: f64,
    pub rmse_x100: Option<f64>,
    pub bias_x100: Option<f64>,
    pub coverage_x100: Option<f64>,
    pub replication_count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub rep: usize,
    pub estimator: Estimator,
    pub tau: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub cells: Vec<McCell>,
    pub failures: Vec<FailureRecord>,
}

impl McReport {
    pub fn cell(&self, estimator: Estimator, tau: f64, param: &str) -> Option<&McCell> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.tau == tau && c.param == param)
    }
}

#[derive(Default)]
struct Accumulator {
    sum_err: Vec<f64>,
    sum_sq: Vec<f64>,
    covered: Vec<usize>,
    truth: Vec<f64>,
    ok: usize,
    failed: usize,
}

/// Aggregate replications into a report. Results are processed in
/// replication order so the report does not depend on how they were produced.
pub fn aggregate(scenario: &Scenario, results: &[ReplicationResult]) -> McReport {
    let names = scenario.param_names();
    let k = names.len();
    let mut sorted: Vec<&ReplicationResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let mut acc: BTreeMap<(usize, usize), Accumulator> = BTreeMap::new();
    let mut failures = Vec::new();
    let key = |e: Estimator, tau: f64| {
        let ei = scenario.estimators.iter().position(|x| *x == e).unwrap_or(usize::MAX);
        let ti = scenario.taus.iter().position(|x| *x == tau).unwrap_or(usize::MAX);
        (ei, ti)
    };
    for r in sorted {
        for cell in &r.cells {
            let a = acc.entry(key(cell.estimator, cell.tau)).or_insert_with(|| Accumulator {
                sum_err: vec![0.0; k],
                sum_sq: vec![0.0; k],
                covered: vec![0; k],
                ..Default::default()
            });
            match &cell.result {
                Ok(est) if est.estimates.len() == k => {
                    for j in 0..k {
                        let e = est.estimates[j] - est.truth[j];
                        a.sum_err[j] += e;
                        a.sum_sq[j] += e * e;
                        a.covered[j] += usize::from(est.covered[j]);
                    }
                    a.truth.clone_from(&est.truth);
                    a.ok += 1;
                }
                Ok(_) => {
                    a.failed += 1;
                    failures.push(FailureRecord {
                        rep: r.rep,
                        estimator: cell.estimator,
                        tau: cell.tau,
                        reason: String::from("estimate has the wrong length"),
                    });
                }
                Err(reason) => {
                    a.failed += 1;
                    failures.push(FailureRecord {
                        rep: r.rep,
                        estimator: cell.estimator,
                        tau: cell.tau,
                        reason: reason.clone(),
                    });
                }
            }
        }
    }

    let mut cells = Vec::new();
    for (ei, &estimator) in scenario.estimators.iter().enumerate() {
        for (ti, &tau) in scenario.taus.iter().enumerate() {
            let a = acc.get(&(ei, ti));
            let truth = true_quantile_coefs(tau, &scenario.dist, &scenario.coefficients)
                .map(|p| p.to_vec())
                .unwrap_or_else(|_| vec![f64::NAN; k]);
            for (j, name) in names.iter().enumerate() {
                let (ok, failed) = a.map_or((0, 0), |a| (a.ok, a.failed));
                let moments = a.filter(|a| a.ok > 0).map(|a| {
                    let n = a.ok as f64;
                    let bias = a.sum_err[j] / n;
                    let mse = a.sum_sq[j] / n;
                    (
                        100.0 * libm::sqrt(mse.max(bias * bias)),
                        100.0 * bias,
                        100.0 * a.covered[j] as f64 / n,
                    )
                });
                cells.push(McCell {
                    estimator,
                    tau,
                    param: name.clone(),
                    truth: truth[j],
                    rmse_x100: moments.map(|m| m.0),
                    bias_x100: moments.map(|m| m.1),
                    coverage_x100: moments.map(|m| m.2),
                    replication_count: ok,
                    failures: failed,
                });
            }
        }
    }
    McReport {
        scenario: scenario.clone(),
        cells,
        failures,
    }
}

/// Run every replication sequentially. Parallel runners live in the std crate.
pub fn run_scenario(scenario: &Scenario) -> Result<McReport> {
    scenario.validate()?;
    let shared = if scenario.fixed_network {
        Some(scenario.shared_network()?)
    } else {
        None
    };
    let results: Vec<ReplicationResult> = (0..scenario.replications)
        .map(|rep| run_replication(scenario, rep, shared.as_ref()))
        .collect();
    Ok(aggregate(scenario, &results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub tau: f64,
    pub param: String,
    /// `rmse(ordinary QR) / rmse(IVQR)`.
    pub rmse_ratio: Option<f64>,
    /// `|bias(ordinary QR)| / |bias(IVQR)|`.
    pub bias_ratio: Option<f64>,
    pub ordinary_coverage_x100: Option<f64>,
    /// Ordinary-QR coverage below 90.
    pub low_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub rows: Vec<ComparisonRow>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(a), Some(b)) if a == b => Some(1.0),
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn compare_estimators(report: &McReport) -> Result<ComparisonSummary> {
    let has = |e| report.cells.iter().any(|c| c.estimator == e);
    if !has(Estimator::Ivqr) || !has(Estimator::OrdinaryQr) {
        return Err(Error::domain("comparison needs both IVQR and ordinary QR cells"));
    }
    let mut rows = Vec::new();
    for iv in report.cells.iter().filter(|c| c.estimator == Estimator::Ivqr) {
        let Some(qr) = report.cell(Estimator::OrdinaryQr, iv.tau, &iv.param) else {
            return Err(Error::domain(format!(
                "ordinary QR has no cell for tau {} and {}",
                iv.tau, iv.param
            )));
        };
        rows.push(ComparisonRow {
            tau: iv.tau,
            param: iv.param.clone(),
            rmse_ratio: ratio(qr.rmse_x100, iv.rmse_x100),
            bias_ratio: ratio(qr.bias_x100.map(f64::abs), iv.bias_x100.map(f64::abs)),
            ordinary_coverage_x100: qr.coverage_x100,
            low_coverage: qr.coverage_x100.is_some_and(|c| c < 90.0),
        });
    }
    Ok(ComparisonSummary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            n: 30,
            t: 15,
            taus: vec![0.5],
            replications: 3,
            seed: 11,
            grid: GridSpec {
                coarse_step: 0.1,
                refine_rounds: 1,
                ..GridSpec::default()
            },
            ..Scenario::default()
        }
    }

    fn cell(estimates: Vec<f64>, truth: Vec<f64>, covered: Vec<bool>) -> CellOutcome {
        CellOutcome {
            estimator: Estimator::Ivqr,
            tau: 0.5,
            result: Ok(CellEstimate {
                estimates,
                truth,
                covered,
            }),
        }
    }

    fn one_tau(k_override: Option<usize>) -> (Scenario, usize) {
        let s = Scenario {
            taus: vec![0.5],
            estimators: vec![Estimator::Ivqr],
            ..Scenario::default()
        };
        let k = k_override.unwrap_or(s.param_names().len());
        (s, k)
    }

    #[test]
    fn aggregate_exact_cases() {
        let (s, k) = one_tau(None);
        let truth = true_quantile_coefs(0.5, &s.dist, &s.coefficients).unwrap().to_vec();
        let same = ReplicationResult {
            rep: 0,
            cells: vec![cell(truth.clone(), truth.clone(), vec![true; k])],
        };
        let r = aggregate(&s, &[same.clone(), ReplicationResult { rep: 1, ..same }]);
        for c in &r.cells {
            assert_eq!(
                (c.rmse_x100, c.bias_x100, c.coverage_x100),
                (Some(0.0), Some(0.0), Some(100.0))
            );
            assert_eq!(c.replication_count, 2);
        }
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.03).collect();
        let r = aggregate(
            &s,
            &[ReplicationResult {
                rep: 0,
                cells: vec![cell(shifted, truth.clone(), vec![false; k])],
            }],
        );
        for c in &r.cells {
            assert!((c.rmse_x100.unwrap() - 3.0).abs() < 1e-9);
            assert!((c.bias_x100.unwrap() - 3.0).abs() < 1e-9);
            assert_eq!(c.coverage_x100, Some(0.0));
        }
    }

    #[test]
    fn rmse_decomposes_into_bias_and_variance() {
        let (s, k) = one_tau(None);
        let truth = vec![0.0; k];
        let errs = [0.1, -0.3, 0.25, 0.05];
        let results: Vec<ReplicationResult> = errs
            .iter()
            .enumerate()
            .map(|(rep, &e)| ReplicationResult {
                rep,
                cells: vec![cell(vec![e; k], truth.clone(), vec![true; k])],
            })
            .collect();
        let r = aggregate(&s, &results);
        let mean = errs.iter().sum::<f64>() / 4.0;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / 4.0;
        let c = &r.cells[0];
        let (rmse, bias) = (c.rmse_x100.unwrap() / 100.0, c.bias_x100.unwrap() / 100.0);
        assert!((rmse * rmse - bias * bias - var).abs() < 1e-12);
        assert!(rmse >= bias.abs());
    }

    #[test]
    fn failures_are_counted_and_cells_marked() {
        let (s, _) = one_tau(None);
        let results = vec![ReplicationResult {
            rep: 4,
            cells: vec![CellOutcome {
                estimator: Estimator::Ivqr,
                tau: 0.5,
                result: Err(String::from("singular")),
            }],
        }];
        let r = aggregate(&s, &results);
        assert!(r.cells.iter().all(|c| c.rmse_x100.is_none() && c.failures == 1));
        assert_eq!(r.failures[0].rep, 4);
    }

    #[test]
    fn degenerate_network_fails_cleanly() {
        let s = Scenario {
            network: NetworkType::Empty,
            ..small()
        };
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.failures.len(), 3 * 2);
        assert!(r.failures.iter().any(|f| f.reason.contains("instrument")));
        assert!(r.cells.iter().all(|c| c.coverage_x100.is_none()));
    }

    #[test]
    fn replications_are_deterministic_and_order_free() {
        let s = small();
        let a = run_replication(&s, 2, None);
        let b = run_replication(&s, 2, None);
        assert_eq!(a, b);
        assert_ne!(a, run_replication(&s, 1, None));
        let forward: Vec<_> = (0..3).map(|r| run_replication(&s, r, None)).collect();
        let mut backward = forward.clone();
        backward.reverse();
        assert_eq!(aggregate(&s, &forward), aggregate(&s, &backward));
        assert_eq!(run_scenario(&s).unwrap(), aggregate(&s, &forward));
    }

    #[test]
    fn fixed_network_is_shared() {
        let s = Scenario {
            fixed_network: true,
            ..small()
        };
        let w = s.shared_network().unwrap();
        assert_eq!(w, s.shared_network().unwrap());
        assert_eq!(run_replication(&s, 0, None), run_replication(&s, 0, Some(&w)));
    }

    #[test]
    fn comparison_ratios() {
        let s = small();
        let r = run_scenario(&s).unwrap();
        let cmp = compare_estimators(&r).unwrap();
        assert_eq!(cmp.rows.len(), s.param_names().len());
        let mut same = r.clone();
        for c in same.cells.iter_mut().filter(|c| c.estimator == Estimator::OrdinaryQr) {
            let iv = r.cell(Estimator::Ivqr, c.tau, &c.param).unwrap();
            c.rmse_x100 = iv.rmse_x100;
            c.bias_x100 = iv.bias_x100;
        }
        for row in compare_estimators(&same).unwrap().rows {
            assert_eq!(row.rmse_ratio, Some(1.0));
            assert_eq!(row.bias_ratio, Some(1.0));
        }
        let only_iv = McReport {
            cells: r
                .cells
                .iter()
                .filter(|c| c.estimator == Estimator::Ivqr)
                .cloned()
                .collect(),
            ..r
        };
        assert!(compare_estimators(&only_iv).is_err());
    }

    #[test]
    fn invalid_scenarios() {
        assert!(Scenario {
            replications: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(Scenario {
            taus: vec![1.0],
            ..small()
        }
        .validate()
        .is_err());
        assert!(Scenario {
            taus: vec![],
            ..small()
        }
        .validate()
        .is_err());
    }
}

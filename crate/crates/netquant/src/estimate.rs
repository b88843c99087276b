//! Estimation on a loaded panel: per-quantile IVQR estimates with standard
//! errors and goodness of fit, and the plot-ready quantile sweep table.

use netquant_core::inference::{ivqr_covariance, InferenceOptions};
use netquant_core::ivqr::{
    build_stacked, goodness_of_fit, restricted_design, GridSpec, InstrumentSpec, IvqrSolver, RestrictedModel,
    StackedRegression,
};
use netquant_core::qr::{PreparedDesign, SolverOptions};
use netquant_core::sim::{param_names, PanelData, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::par_map;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub grid: GridSpec,
    pub instruments: InstrumentSpec,
    pub solver: SolverOptions,
    pub inference: InferenceOptions,
}

/// Estimate record written as JSON. Vectors follow `theta_names`, which is
/// `(ybar, x columns)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub tau: f64,
    pub gamma1: f64,
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta_names: Vec<String>,
    pub se: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub bandwidth: Option<f64>,
    pub profile: Vec<(f64, f64)>,
    pub objective: f64,
    pub r2_vs_nqar: Option<f64>,
    pub r2_vs_nqarf: Option<f64>,
    pub tie: bool,
    pub warnings: Vec<String>,
}

impl EstimateRecord {
    /// Estimates and intervals in reporting order (`gamma0..gamma3, alpha, beta`).
    pub fn reporting(&self, q: usize, m: usize, p: usize) -> Result<Vec<ReportedParam>> {
        let mut theta = vec![self.gamma1];
        theta.extend_from_slice(&self.phi);
        let est = ParamVector::from_theta(&theta, q, m, p)?.to_vec();
        let ci = match &self.ci {
            Some(ci) => {
                let lo: Vec<f64> = ci.iter().map(|c| c.0).collect();
                let hi: Vec<f64> = ci.iter().map(|c| c.1).collect();
                let lo = ParamVector::from_theta(&lo, q, m, p)?.to_vec();
                let hi = ParamVector::from_theta(&hi, q, m, p)?.to_vec();
                lo.into_iter().zip(hi).map(Some).collect()
            }
            None => vec![None; est.len()],
        };
        Ok(param_names(q, m, p)
            .into_iter()
            .zip(est)
            .zip(ci)
            .map(|((n, e), c)| (n, e, c))
            .collect())
    }
}

/// Parameter name, estimate and optional confidence interval.
pub type ReportedParam = (String, f64, Option<(f64, f64)>);

/// Designs shared by every quantile of one panel.
pub struct PanelEstimator {
    stacked: StackedRegression,
    opts: EstimateOptions,
}

impl PanelEstimator {
    pub fn new(panel: &PanelData, p: usize, opts: EstimateOptions) -> Result<Self> {
        let stacked = build_stacked(panel, p, &opts.instruments)?;
        Ok(Self { stacked, opts })
    }

    pub fn stacked(&self) -> &StackedRegression {
        &self.stacked
    }

    /// Estimate at every `tau`, in parallel over quantiles.
    pub fn estimate_all(&self, taus: &[f64], threads: usize) -> Result<Vec<Result<EstimateRecord>>> {
        let s = &self.stacked;
        let solver = IvqrSolver::new(s, self.opts.grid, None, &self.opts.solver)?;
        let nqar = restricted(s, RestrictedModel::Nqar, &self.opts.solver);
        let nqarf = restricted(s, RestrictedModel::Nqarf, &self.opts.solver);
        par_map(taus, threads, |&tau| {
            self.estimate_one(&solver, nqar.as_ref(), nqarf.as_ref(), tau)
        })
    }

    fn estimate_one(
        &self,
        solver: &IvqrSolver<'_>,
        nqar: Option<&PreparedDesign>,
        nqarf: Option<&PreparedDesign>,
        tau: f64,
    ) -> Result<EstimateRecord> {
        let s = &self.stacked;
        let est = solver.estimate(tau)?;
        let mut warnings = Vec::new();
        if est.tie {
            warnings.push("several grid points attain the minimum; the smallest was taken".into());
        }
        if est.failed_grid_points > 0 {
            warnings.push(format!("{} grid evaluations failed", est.failed_grid_points));
        }
        let cov = match ivqr_covariance(s, &est, &self.opts.inference) {
            Ok(c) => {
                warnings.extend(c.warning.clone());
                Some(c)
            }
            Err(e) => {
                warnings.push(format!("standard errors unavailable: {e}"));
                None
            }
        };
        let r2 = |design: Option<&PreparedDesign>, label: &str, warnings: &mut Vec<String>| {
            let fit = design?.fit(&s.y, tau).ok()?;
            match goodness_of_fit(est.objective, fit.objective) {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(format!("R2 against {label}: {e}"));
                    None
                }
            }
        };
        let r2_vs_nqar = r2(nqar, "NQAR", &mut warnings);
        let r2_vs_nqarf = r2(nqarf, "NQARF", &mut warnings);
        Ok(EstimateRecord {
            tau,
            gamma1: est.gamma1,
            phi: est.phi.clone(),
            lambda: est.lambda.clone(),
            theta_names: s.theta_names(),
            se: cov.as_ref().map(|c| c.std_errors.clone()),
            ci: cov.as_ref().map(|c| c.intervals.clone()),
            bandwidth: cov.as_ref().map(|c| c.bandwidth),
            profile: est.profile,
            objective: est.objective,
            r2_vs_nqar,
            r2_vs_nqarf,
            tie: est.tie,
            warnings,
        })
    }
}

fn restricted(s: &StackedRegression, model: RestrictedModel, opts: &SolverOptions) -> Option<PreparedDesign> {
    let (design, _) = restricted_design(s, model).ok()?;
    PreparedDesign::new(&design, opts).ok()
}

/// One row of the sweep table; failures leave the numbers empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub param: String,
    pub estimate: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub reason: String,
}

pub const SWEEP_HEADER: [&str; 6] = ["tau", "param", "estimate", "lo", "hi", "reason"];

/// Evenly spaced quantiles `start, start + step, .., <= stop`.
pub fn tau_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(start > 0.0) || !(stop < 1.0) || start > stop {
        return Err(Error::Usage(format!("invalid tau grid {start}:{step}:{stop}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub fn quantile_sweep(
    panel: &PanelData,
    p: usize,
    taus: &[f64],
    opts: EstimateOptions,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    if taus.len() < 2 {
        return Err(Error::Usage("a sweep needs at least two quantiles".into()));
    }
    let (q, m) = (panel.q(), panel.m());
    let names = param_names(q, m, p);
    let estimator = PanelEstimator::new(panel, p, opts)?;
    let results = estimator.estimate_all(taus, threads)?;
    let mut rows = Vec::new();
    for (&tau, result) in taus.iter().zip(results) {
        match result.and_then(|r| Ok((r.reporting(q, m, p)?, r.se.is_some(), r.warnings))) {
            Ok((params, has_ci, warnings)) => {
                let reason = if has_ci { String::new() } else { warnings.join("; ") };
                for (param, est, ci) in params {
                    rows.push(SweepRow {
                        tau,
                        param,
                        estimate: Some(est),
                        lo: ci.map(|c| c.0),
                        hi: ci.map(|c| c.1),
                        reason: reason.clone(),
                    });
                }
            }
            Err(e) => rows.extend(names.iter().map(|param| SweepRow {
                tau,
                param: param.clone(),
                estimate: None,
                lo: None,
                hi: None,
                reason: e.to_string(),
            })),
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::parse("<sweep>", e);
    w.write_record(SWEEP_HEADER).map_err(err)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.tau.to_string(),
            r.param.clone(),
            num(r.estimate),
            num(r.lo),
            num(r.hi),
            r.reason.clone(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::parse("<sweep>", e))
}

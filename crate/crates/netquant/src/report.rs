//! Monte Carlo report files and the embedded desk-scale reference bands.

use netquant_core::mc::{Estimator, McReport};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 9] = [
    "estimator",
    "tau",
    "param",
    "truth",
    "rmse_x100",
    "bias_x100",
    "coverage_x100",
    "replications",
    "failures",
];

pub fn report_csv(report: &McReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::parse("<report>", e);
    w.write_record(REPORT_HEADER).map_err(err)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.cells {
        w.write_record([
            c.estimator.label().to_string(),
            c.tau.to_string(),
            c.param.clone(),
            c.truth.to_string(),
            num(c.rmse_x100),
            num(c.bias_x100),
            num(c.coverage_x100),
            c.replication_count.to_string(),
            c.failures.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::parse("<report>", e))
}

pub fn report_json(report: &McReport) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(report).map_err(|e| Error::parse("<report>", e))
}

/// One reference band and whether the report falls inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub observed: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl BandCheck {
    fn new(name: String, observed: Option<f64>, lo: f64, hi: f64) -> Self {
        let pass = observed.is_some_and(|v| v >= lo && v <= hi);
        Self {
            name,
            observed,
            lo,
            hi,
            pass,
        }
    }
}

impl std::fmt::Display for BandCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let obs = self.observed.map_or("unavailable".to_string(), |v| format!("{v:.3}"));
        let status = if self.pass { "pass" } else { "FAIL" };
        write!(f, "{status} {}: {obs} in [{}, {}]", self.name, self.lo, self.hi)
    }
}

/// Desk-scale bands for 200 replications of the dyad network with normal
/// innovations at `N = T = 100`.
pub fn rmse_bands(report: &McReport) -> Vec<BandCheck> {
    let rmse = |tau: f64, p: &str| report.cell(Estimator::Ivqr, tau, p).and_then(|c| c.rmse_x100);
    vec![
        BandCheck::new("ivqr rmse_x100 gamma1 tau=0.1".into(), rmse(0.1, "gamma1"), 4.0, 6.7),
        BandCheck::new("ivqr rmse_x100 gamma1 tau=0.5".into(), rmse(0.5, "gamma1"), 3.6, 5.9),
        BandCheck::new("ivqr rmse_x100 gamma3 tau=0.1".into(), rmse(0.1, "gamma3"), 2.3, 3.8),
    ]
}

pub fn coverage_bands(report: &McReport) -> Vec<BandCheck> {
    report
        .cells
        .iter()
        .filter(|c| c.estimator == Estimator::Ivqr && [0.1, 0.5, 0.9].contains(&c.tau))
        .map(|c| {
            BandCheck::new(
                format!("ivqr coverage_x100 {} tau={}", c.param, c.tau),
                c.coverage_x100,
                91.0,
                99.0,
            )
        })
        .collect()
}

pub fn bias_contrast_bands(report: &McReport) -> Vec<BandCheck> {
    let cell = |e| report.cell(e, 0.1, "gamma1");
    let qr_bias = cell(Estimator::OrdinaryQr).and_then(|c| c.bias_x100).map(f64::abs);
    let iv_bias = cell(Estimator::Ivqr).and_then(|c| c.bias_x100).map(f64::abs);
    let ratio = match (qr_bias, iv_bias) {
        (Some(q), Some(i)) if i > 0.0 => Some(q / i),
        (Some(q), Some(_)) if q > 0.0 => Some(f64::INFINITY),
        _ => None,
    };
    vec![
        BandCheck::new(
            "ordinary_qr |bias_x100| gamma1 tau=0.1".into(),
            qr_bias,
            4.0,
            f64::INFINITY,
        ),
        BandCheck::new("ivqr |bias_x100| gamma1 tau=0.1".into(), iv_bias, 0.0, 0.5),
        BandCheck::new(
            "|bias| ratio ordinary_qr / ivqr gamma1 tau=0.1".into(),
            ratio,
            8.0,
            f64::INFINITY,
        ),
        BandCheck::new(
            "ordinary_qr coverage_x100 gamma1 tau=0.1".into(),
            cell(Estimator::OrdinaryQr).and_then(|c| c.coverage_x100),
            0.0,
            60.0,
        ),
    ]
}

pub fn all_bands(report: &McReport) -> Vec<BandCheck> {
    let mut v = rmse_bands(report);
    v.extend(coverage_bands(report));
    v.extend(bias_contrast_bands(report));
    v
}

//! `netquant` command line: network generation, simulation, estimation,
//! quantile sweeps and Monte Carlo experiments.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use netquant_core::distributions::InnovationDist;
use netquant_core::mc::{compare_estimators, Scenario};
use netquant_core::network::{row_normalize, NetworkType};
use netquant_core::rng::replication_rng;
use netquant_core::sim::{simulate_panel, CoefficientModel, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimate::{quantile_sweep, sweep_csv, tau_grid, EstimateOptions, PanelEstimator};
use crate::panel_io::{load_dataset, network_csv, write_atomic, write_dataset};
use crate::report::{all_bands, report_csv, report_json};
use crate::runner::{resolve_threads, run_montecarlo};

#[derive(Debug, Parser)]
#[command(name = "netquant", version, about = "Dynamic network quantile regression")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: NETQUANT_THREADS or all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON configuration for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random network and write its edge list.
    GenerateNetwork(NetworkArgs),
    /// Simulate a panel and write it as a dataset.
    Simulate(SimulateArgs),
    /// IVQR estimates with standard errors at the given quantiles.
    Estimate(EstimateArgs),
    /// Monte Carlo experiment with RMSE, bias and coverage tables.
    Montecarlo(MonteCarloArgs),
    /// Estimates and intervals over a grid of quantiles, as plot-ready CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NetworkKind {
    Dyad,
    Sbm,
    Powerlaw,
    Empty,
}

#[derive(Debug, Clone, Args)]
pub struct NetworkSpec {
    /// Network family.
    #[arg(long = "type", value_enum)]
    pub kind: Option<NetworkKind>,
    /// Blocks of the stochastic block model.
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Power-law exponent of the in-degree distribution.
    #[arg(long, default_value_t = 2.5)]
    pub exponent: f64,
}

impl NetworkSpec {
    fn resolve(&self) -> Option<NetworkType> {
        self.kind.map(|k| match k {
            NetworkKind::Dyad => NetworkType::Dyad,
            NetworkKind::Sbm => NetworkType::Sbm { blocks: self.blocks },
            NetworkKind::Powerlaw => NetworkType::PowerLaw {
                exponent: self.exponent,
            },
            NetworkKind::Empty => NetworkType::Empty,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub network: NetworkSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistKind {
    Normal,
    T,
}

#[derive(Debug, Clone, Args)]
pub struct DistSpec {
    /// Innovation distribution.
    #[arg(long, value_enum)]
    pub dist: Option<DistKind>,
    /// Degrees of freedom for `--dist t`.
    #[arg(long, default_value_t = 5)]
    pub df: u32,
}

impl DistSpec {
    fn resolve(&self) -> Result<Option<InnovationDist>> {
        Ok(match self.dist {
            None => None,
            Some(DistKind::Normal) => Some(InnovationDist::StdNormal),
            Some(DistKind::T) => Some(InnovationDist::student_t(self.df)?),
        })
    }
}

/// Simulation settings read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n: usize,
    pub t: usize,
    pub network: NetworkType,
    pub dist: InnovationDist,
    pub coefficients: CoefficientModel,
    pub burn_in: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 100,
            t: 100,
            network: NetworkType::Dyad,
            dist: InnovationDist::StdNormal,
            coefficients: CoefficientModel::baseline(),
            burn_in: 100,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Usable periods (one more leading period is simulated for the lags).
    #[arg(long)]
    pub t: Option<usize>,
    #[command(flatten)]
    pub network: NetworkSpec,
    #[command(flatten)]
    pub dist: DistSpec,
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated quantiles.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub tau_start: f64,
    #[arg(long, default_value_t = 0.9)]
    pub tau_stop: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau_step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[command(flatten)]
    pub network: NetworkSpec,
    #[command(flatten)]
    pub dist: DistSpec,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Use 1000 replications.
    #[arg(long, conflicts_with = "replications")]
    pub full: bool,
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Reuse one network draw for every replication.
    #[arg(long)]
    pub fixed_network: bool,
    /// Compare against the embedded desk-scale bands; exit 1 when any fails.
    #[arg(long)]
    pub check: bool,
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(p, e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::parse("<json>", e))
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let threads = resolve_threads(cli.threads)?;
    let seed = cli.seed.unwrap_or(0);
    let config = cli.config.as_deref();
    match &cli.command {
        Command::GenerateNetwork(a) => generate_network(a, seed, &cli.out),
        Command::Simulate(a) => simulate(a, read_config(config)?, seed, &cli.out),
        Command::Estimate(a) => estimate(a, read_config(config)?, threads, &cli.out),
        Command::Sweep(a) => sweep(a, read_config(config)?, threads, &cli.out),
        Command::Montecarlo(a) => montecarlo(a, read_config(config)?, cli.seed, threads, &cli.out),
    }
}

fn generate_network(a: &NetworkArgs, seed: u64, out: &Path) -> Result<i32> {
    let kind = a
        .network
        .resolve()
        .ok_or_else(|| Error::Usage("--type is required".into()))?;
    let adjacency = kind.generate(a.n, &mut replication_rng(seed, 0))?;
    let path = out.join("network.csv");
    write_atomic(&path, &network_csv(&row_normalize(&adjacency))?)?;
    let summary = json!({
        "network": kind,
        "n": a.n,
        "edges": adjacency.edge_count(),
        "density": adjacency.density(),
        "path": path,
    });
    write_atomic(&out.join("network.json"), &to_json(&summary)?)?;
    println!("{summary}");
    Ok(0)
}

fn simulate(a: &SimulateArgs, mut c: SimulateConfig, seed: u64, out: &Path) -> Result<i32> {
    c.n = a.n.unwrap_or(c.n);
    c.t = a.t.unwrap_or(c.t);
    c.burn_in = a.burn_in.unwrap_or(c.burn_in);
    c.network = a.network.resolve().unwrap_or(c.network);
    c.dist = a.dist.resolve()?.unwrap_or(c.dist);
    let mut rng = replication_rng(seed, 0);
    let w = row_normalize(&c.network.generate(c.n, &mut rng)?);
    let config = SimConfig {
        coefficients: c.coefficients,
        burn_in: c.burn_in,
        ..SimConfig::new(c.n, c.t, w, c.dist)
    };
    let panel = simulate_panel(&config, &mut rng)?;
    let manifest = write_dataset(&panel, c.coefficients.p(), out)?;
    write_atomic(
        &out.join("simulation.json"),
        &to_json(&json!({ "seed": seed, "config": c }))?,
    )?;
    println!(
        "{}",
        json!({ "manifest": manifest, "n": c.n, "periods": panel.periods() })
    );
    Ok(0)
}

fn estimate(a: &EstimateArgs, opts: EstimateOptions, threads: usize, out: &Path) -> Result<i32> {
    if a.taus.is_empty() {
        return Err(Error::Usage("--taus needs at least one quantile".into()));
    }
    let (manifest, panel) = load_dataset(&a.manifest)?;
    let estimator = PanelEstimator::new(&panel, manifest.p, opts)?;
    let results = estimator.estimate_all(&a.taus, threads)?;
    let mut records = Vec::new();
    let mut failed = false;
    for (tau, r) in a.taus.iter().zip(results) {
        match r {
            Ok(rec) => records.push(serde_json::to_value(&rec).map_err(|e| Error::parse("<json>", e))?),
            Err(e) => {
                failed = true;
                records.push(json!({ "tau": tau, "error": e.to_string() }));
            }
        }
    }
    let path = out.join("estimates.json");
    write_atomic(&path, &to_json(&records)?)?;
    let summary: Vec<_> = records
        .iter()
        .map(|r| json!({ "tau": r["tau"], "gamma1": r["gamma1"], "se_gamma1": r["se"][0], "error": r["error"] }))
        .collect();
    println!("{}", json!({ "path": path, "estimates": summary }));
    Ok(i32::from(failed))
}

fn sweep(a: &SweepArgs, opts: EstimateOptions, threads: usize, out: &Path) -> Result<i32> {
    let taus = tau_grid(a.tau_start, a.tau_stop, a.tau_step)?;
    let (manifest, panel) = load_dataset(&a.manifest)?;
    let rows = quantile_sweep(&panel, manifest.p, &taus, opts, threads)?;
    let path = out.join("sweep.csv");
    write_atomic(&path, &sweep_csv(&rows)?)?;
    let missing = rows.iter().filter(|r| r.estimate.is_none()).count();
    println!("{}", json!({ "path": path, "rows": rows.len(), "missing": missing }));
    Ok(i32::from(missing > 0))
}

fn montecarlo(a: &MonteCarloArgs, mut s: Scenario, seed: Option<u64>, threads: usize, out: &Path) -> Result<i32> {
    s.n = a.n.unwrap_or(s.n);
    s.t = a.t.unwrap_or(s.t);
    s.network = a.network.resolve().unwrap_or(s.network);
    s.dist = a.dist.resolve()?.unwrap_or(s.dist);
    s.seed = seed.unwrap_or(s.seed);
    s.fixed_network |= a.fixed_network;
    if a.full {
        s.replications = 1000;
    }
    s.replications = a.replications.unwrap_or(s.replications);
    if let Some(taus) = &a.taus {
        s.taus.clone_from(taus);
    }
    s.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let report = run_montecarlo(&s, threads)?;
    write_atomic(&out.join("report.csv"), &report_csv(&report)?)?;
    write_atomic(&out.join("report.json"), &report_json(&report)?)?;
    if let Ok(cmp) = compare_estimators(&report) {
        write_atomic(&out.join("comparison.json"), &to_json(&cmp)?)?;
    }
    let mut code = 0;
    if a.check {
        let bands = all_bands(&report);
        for b in &bands {
            eprintln!("{b}");
        }
        let failed = bands.iter().filter(|b| !b.pass).count();
        write_atomic(&out.join("check.json"), &to_json(&bands)?)?;
        code = i32::from(failed > 0);
    }
    println!(
        "{}",
        json!({
            "report": out.join("report.csv"),
            "replications": s.replications,
            "failures": report.failures.len(),
        })
    );
    Ok(code)
}

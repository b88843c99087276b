//! Parallel Monte Carlo runner. Replications are independent and keyed by
//! index, so the report is identical for any thread count.

use netquant_core::mc::{aggregate, run_replication, McReport, ReplicationResult, Scenario};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Thread count: explicit value, else `NETQUANT_THREADS`, else all cores.
pub fn resolve_threads(explicit: Option<usize>) -> Result<usize> {
    if let Some(t) = explicit {
        return if t == 0 {
            Err(Error::Usage("--threads must be at least 1".into()))
        } else {
            Ok(t)
        };
    }
    match std::env::var("NETQUANT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Usage(format!("NETQUANT_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} worker threads: {e}")))
}

/// Run every replication of `scenario` on `threads` workers.
pub fn run_replications(scenario: &Scenario, threads: usize) -> Result<Vec<ReplicationResult>> {
    scenario.validate()?;
    let shared = if scenario.fixed_network {
        Some(scenario.shared_network()?)
    } else {
        None
    };
    let results = pool(threads)?.install(|| {
        (0..scenario.replications)
            .into_par_iter()
            .map(|rep| {
                let r = run_replication(scenario, rep, shared.as_ref());
                log::debug!("replication {rep} finished");
                r
            })
            .collect()
    });
    Ok(results)
}

pub fn run_montecarlo(scenario: &Scenario, threads: usize) -> Result<McReport> {
    Ok(aggregate(scenario, &run_replications(scenario, threads)?))
}

/// Apply `f` to every item on `threads` workers, keeping input order.
pub fn par_map<T, U, F>(items: &[T], threads: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    Ok(pool(threads)?.install(|| items.par_iter().map(f).collect()))
}

#![allow(dead_code)]

use netquant::core::distributions::InnovationDist;
use netquant::core::network::{gen_dyad, row_normalize};
use netquant::core::rng::replication_rng;
use netquant::core::sim::{simulate_panel, CoefficientModel, PanelData, SimConfig};

pub fn simulated(n: usize, t: usize, coefficients: CoefficientModel, seed: u64) -> PanelData {
    let mut rng = replication_rng(seed, 0);
    let w = row_normalize(&gen_dyad(n, &mut rng).unwrap());
    let config = SimConfig {
        coefficients,
        ..SimConfig::new(n, t, w, InnovationDist::StdNormal)
    };
    simulate_panel(&config, &mut rng).unwrap()
}

/// Spearman rank correlation without tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

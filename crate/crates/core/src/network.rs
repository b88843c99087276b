//! Directed follower networks, their row-normalized weight matrices, and the
//! three random-network generators used in the simulation study.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary adjacency. `a_ij = 1` means node `i` follows node `j`; self-loops are not allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    // Sorted, deduplicated followees per node.
    rows: Vec<Vec<usize>>,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    /// Build from `(src, dst)` pairs meaning "src follows dst". Duplicates collapse.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut rows = vec![Vec::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::domain(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::domain(format!("self-loop at node {i}")));
            }
            rows[i].push(j);
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn follows(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn followees(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for row in &self.rows {
            for &j in row {
                deg[j] += 1;
            }
        }
        deg
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (i, j)))
    }

    /// `|E| / (n (n - 1))`; zero for graphs with fewer than two nodes.
    pub fn density(&self) -> f64 {
        density(self)
    }
}

pub fn density(a: &AdjacencyMatrix) -> f64 {
    if a.n < 2 {
        return 0.0;
    }
    a.edge_count() as f64 / (a.n as f64 * (a.n as f64 - 1.0))
}

/// Row-normalized network matrix `W`, stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    isolated: usize,
}

pub fn row_normalize(a: &AdjacencyMatrix) -> NetworkWeights {
    let mut isolated = 0;
    let rows = a
        .rows
        .iter()
        .map(|row| {
            if row.is_empty() {
                isolated += 1;
                return Vec::new();
            }
            let w = 1.0 / row.len() as f64;
            row.iter().map(|&j| (j, w)).collect()
        })
        .collect();
    NetworkWeights { n: a.n, rows, isolated }
}

impl NetworkWeights {
    /// Arbitrary nonnegative weights without self-loops; rows need not sum to one.
    pub fn from_weighted_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                if j >= n || j == i {
                    return Err(Error::domain(format!("invalid weight entry ({i}, {j})")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::domain(format!(
                        "weight ({i}, {j}) must be finite and nonnegative"
                    )));
                }
            }
        }
        let isolated = rows.iter().filter(|r| r.is_empty()).count();
        Ok(Self { n, rows, isolated })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nodes with no followees; their rows of `W` are zero.
    pub fn isolated_count(&self) -> usize {
        self.isolated
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `||W||_inf`: 1 unless every node is isolated.
    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    /// `out = W y`. `y` and `out` must both have length `n`.
    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, w)| w * y[j]).sum();
        }
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        apply_weights(self, y, 1)
    }

    /// Dense copy, row-major `n x n`. Intended for tests and small graphs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                dense[i][j] = w;
            }
        }
        dense
    }
}

/// `W^power y`, by repeated sparse products.
pub fn apply_weights(w: &NetworkWeights, y: &[f64], power: usize) -> Result<Vec<f64>> {
    if y.len() != w.n {
        return Err(Error::Dimension {
            expected: w.n,
            found: y.len(),
        });
    }
    if power == 0 {
        return Err(Error::domain("network power must be at least 1"));
    }
    let mut cur = y.to_vec();
    let mut next = vec![0.0; w.n];
    for _ in 0..power {
        w.apply_into(&cur, &mut next);
        core::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Dyad independence model: each unordered pair is mutual with probability
/// `2/n` and one-directional (either way) with probability `0.5 n^-0.8` each.
pub fn gen_dyad<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<AdjacencyMatrix> {
    if n < 2 {
        return Err(Error::domain("dyad model needs at least two nodes"));
    }
    let nf = n as f64;
    let p_mutual = 2.0 / nf;
    let p_single = 0.5 * libm::pow(nf, -0.8);
    if p_mutual + 2.0 * p_single > 1.0 {
        return Err(Error::domain(format!("dyad probabilities exceed one for n = {n}")));
    }
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random();
            if v < p_mutual {
                rows[i].push(j);
                rows[j].push(i);
            } else if v < p_mutual + p_single {
                rows[i].push(j);
            } else if v < p_mutual + 2.0 * p_single {
                rows[j].push(i);
            }
        }
    }
    for row in &mut rows {
        row.sort_unstable();
    }
    Ok(AdjacencyMatrix { n, rows })
}

/// Stochastic block model with uniform labels over `blocks` blocks:
/// `0.3 n^-0.3` within a block, `0.3 / n` across blocks.
pub fn gen_sbm<R: Rng + ?Sized>(n: usize, blocks: usize, rng: &mut R) -> Result<AdjacencyMatrix> {
    if blocks == 0 || blocks > n {
        return Err(Error::domain(format!(
            "block count must lie in [1, n], got {blocks} for n = {n}"
        )));
    }
    let nf = n as f64;
    let p_in = 0.3 * libm::pow(nf, -0.3);
    let p_out = 0.3 / nf;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..blocks)).collect();
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                rows[i].push(j);
            }
        }
    }
    Ok(AdjacencyMatrix { n, rows })
}

/// Normalized discrete power law `P(d = k) ∝ k^-exponent` on `{1, .., n-1}`.
pub fn powerlaw_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..n).map(|k| libm::pow(k as f64, -exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Power-law in-degree network: node `i` draws an in-degree `d_i` and then
/// `d_i` distinct followers uniformly from the other nodes.
pub fn gen_powerlaw<R: Rng + ?Sized>(n: usize, exponent: f64, rng: &mut R) -> Result<AdjacencyMatrix> {
    let (adj, _) = gen_powerlaw_with_degrees(n, exponent, rng)?;
    Ok(adj)
}

/// As [`gen_powerlaw`], also returning the drawn in-degree sequence.
pub fn gen_powerlaw_with_degrees<R: Rng + ?Sized>(
    n: usize,
    exponent: f64,
    rng: &mut R,
) -> Result<(AdjacencyMatrix, Vec<usize>)> {
    if n < 2 {
        return Err(Error::domain("power-law model needs at least two nodes"));
    }
    if !exponent.is_finite() {
        return Err(Error::domain("power-law exponent must be finite"));
    }
    let weights = powerlaw_weights(n, exponent);
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut rows = vec![Vec::new(); n];
    let mut degrees = Vec::with_capacity(n);
    for i in 0..n {
        let v: f64 = rng.random::<f64>() * acc;
        let d = cumulative.partition_point(|&c| c <= v).min(n - 2) + 1;
        degrees.push(d);
        for k in index::sample(rng, n - 1, d) {
            let follower = if k >= i { k + 1 } else { k };
            rows[follower].push(i);
        }
    }
    for row in &mut rows {
        row.sort_unstable();
    }
    Ok((AdjacencyMatrix { n, rows }, degrees))
}

/// Which random-network family to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NetworkType {
    Dyad,
    Sbm {
        blocks: usize,
    },
    PowerLaw {
        exponent: f64,
    },
    /// Edgeless graph. Every instrument is zero; useful as a degenerate control.
    Empty,
}

impl NetworkType {
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<AdjacencyMatrix> {
        match *self {
            NetworkType::Dyad => gen_dyad(n, rng),
            NetworkType::Sbm { blocks } => gen_sbm(n, blocks, rng),
            NetworkType::PowerLaw { exponent } => gen_powerlaw(n, exponent, rng),
            NetworkType::Empty => Ok(AdjacencyMatrix::empty(n)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NetworkType::Dyad => "dyad",
            NetworkType::Sbm { .. } => "sbm",
            NetworkType::PowerLaw { .. } => "powerlaw",
            NetworkType::Empty => "empty",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_rng;
    use proptest::prelude::*;

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn row_normalize_examples() {
        let two = AdjacencyMatrix::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let w = row_normalize(&two);
        assert_eq!(w.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(w.isolated_count(), 0);

        let empty = row_normalize(&AdjacencyMatrix::empty(4));
        assert_eq!(empty.isolated_count(), 4);
        assert!(empty.is_zero());

        let star = AdjacencyMatrix::from_edges(5, (1..5).map(|j| (0, j))).unwrap();
        let w = row_normalize(&star);
        assert_eq!(w.row(0).len(), 4);
        assert!(w.row(0).iter().all(|&(_, x)| x == 0.25));
        assert_eq!(w.isolated_count(), 4);
    }

    #[test]
    fn loader_rejects_bad_edges() {
        assert!(AdjacencyMatrix::from_edges(3, [(1, 1)]).is_err());
        assert!(AdjacencyMatrix::from_edges(3, [(0, 3)]).is_err());
    }

    #[test]
    fn density_examples() {
        let complete = AdjacencyMatrix::from_edges(
            4,
            (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))),
        )
        .unwrap();
        assert_eq!(density(&complete), 1.0);
        assert_eq!(density(&AdjacencyMatrix::empty(10)), 0.0);
        let two = AdjacencyMatrix::from_edges(10, [(0, 1), (3, 2)]).unwrap();
        assert!((density(&two) - 2.0 / 90.0).abs() < 1e-15);
    }

    #[test]
    fn apply_examples() {
        let w = row_normalize(&AdjacencyMatrix::from_edges(2, [(0, 1), (1, 0)]).unwrap());
        assert_eq!(apply_weights(&w, &[3.0, 7.0], 1).unwrap(), vec![7.0, 3.0]);
        let w = row_normalize(&AdjacencyMatrix::from_edges(3, [(0, 1), (1, 2)]).unwrap());
        assert_eq!(w.apply(&[1.0, 2.0, 3.0]).unwrap()[2], 0.0);
        assert!(matches!(
            apply_weights(&w, &[1.0], 1),
            Err(Error::Dimension { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn second_power_matches_dense_product() {
        let mut rng = replication_rng(1, 0);
        for n in [5usize, 20, 50] {
            let adj = gen_sbm(n, 2, &mut rng).unwrap();
            let w = row_normalize(&adj);
            let y: Vec<f64> = (0..n).map(|i| libm::sin(i as f64) * 3.0).collect();
            let dense = w.to_dense();
            let mut w2 = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    w2[i][j] = (0..n).map(|k| dense[i][k] * dense[k][j]).sum();
                }
            }
            let oracle: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w2[i][j] * y[j]).sum()).collect();
            let fast = apply_weights(&w, &y, 2).unwrap();
            let twice = w.apply(&w.apply(&y).unwrap()).unwrap();
            for i in 0..n {
                assert!((fast[i] - oracle[i]).abs() < 1e-12);
                assert_eq!(fast[i], twice[i]);
            }
        }
    }

    #[test]
    fn dyad_density_and_mutual_count() {
        let n = 100;
        let mut rng = replication_rng(2, 0);
        let draws = 200;
        let mut densities = 0.0;
        for _ in 0..draws {
            let a = gen_dyad(n, &mut rng).unwrap();
            assert!((0..n).all(|i| !a.follows(i, i)));
            densities += density(&a);
        }
        let expected = 2.0 / 100.0 + 0.5 * libm::pow(100.0, -0.8);
        assert!((expected - 0.032_56).abs() < 1e-4);
        assert!((densities / draws as f64 - expected).abs() < 0.004);

        let a = gen_dyad(n, &mut rng).unwrap();
        let mutual = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| a.follows(i, j) && a.follows(j, i))
            .count() as f64;
        let pairs = binom(n, 2);
        let mean = pairs * 0.02;
        let sd = libm::sqrt(pairs * 0.02 * 0.98);
        assert!((mutual - mean).abs() < 3.0 * sd, "mutual dyads {mutual}");
    }

    #[test]
    fn dyad_rejects_tiny_graphs() {
        let mut rng = replication_rng(0, 0);
        for n in [0, 1, 2, 3] {
            assert!(gen_dyad(n, &mut rng).is_err());
        }
        assert!(gen_dyad(4, &mut rng).is_ok());
    }

    #[test]
    fn sbm_density() {
        let n = 100;
        let mut rng = replication_rng(3, 0);
        let draws = 200;
        let mean: f64 = (0..draws)
            .map(|_| density(&gen_sbm(n, 5, &mut rng).unwrap()))
            .sum::<f64>()
            / draws as f64;
        let p_in = 0.3 * libm::pow(100.0, -0.3);
        // Same-block probability for a uniformly labelled pair is 1/L.
        let expected = 0.2 * p_in + 0.8 * 0.003;
        assert!((expected - 0.017_47).abs() < 1e-4);
        assert!((mean - expected).abs() < 0.003, "sbm density {mean}");
    }

    #[test]
    fn sbm_limits() {
        let mut rng = replication_rng(4, 0);
        let n = 200;
        let one_block: f64 = (0..50).map(|_| density(&gen_sbm(n, 1, &mut rng).unwrap())).sum::<f64>() / 50.0;
        let p = 0.3 * libm::pow(n as f64, -0.3);
        assert!((one_block - p).abs() < 3.0 * libm::sqrt(p * (1.0 - p) / (50.0 * (n * (n - 1)) as f64)));
        let singleton: f64 = (0..50).map(|_| density(&gen_sbm(n, n, &mut rng).unwrap())).sum::<f64>() / 50.0;
        // With L = n some labels still collide, so the density sits just above 0.3/n.
        assert!(
            singleton > 0.3 / n as f64 * 0.9 && singleton < 0.3 / n as f64 * 1.3,
            "{singleton}"
        );
        assert!(gen_sbm(10, 0, &mut rng).is_err());
        assert!(gen_sbm(10, 11, &mut rng).is_err());
    }

    #[test]
    fn powerlaw_degrees() {
        let n = 500;
        let mut rng = replication_rng(5, 0);
        let weights = powerlaw_weights(n, 2.5);
        let zeta_mean: f64 = weights.iter().enumerate().map(|(k, w)| (k + 1) as f64 * w).sum();
        let num: f64 = (1..n).map(|k| libm::pow(k as f64, -1.5)).sum();
        let den: f64 = (1..n).map(|k| libm::pow(k as f64, -2.5)).sum();
        assert!((zeta_mean - num / den).abs() < 1e-12);
        let draws = 100;
        let mut total = 0.0;
        for _ in 0..draws {
            let (a, degrees) = gen_powerlaw_with_degrees(n, 2.5, &mut rng).unwrap();
            assert!(degrees.iter().all(|&d| (1..n).contains(&d)));
            assert_eq!(a.in_degrees(), degrees);
            assert!((0..n).all(|i| !a.follows(i, i)));
            total += degrees.iter().sum::<usize>() as f64 / n as f64;
        }
        assert!((total / draws as f64 - zeta_mean).abs() < 0.15);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_or_zero(seed in 0u64..200, n in 4usize..40) {
            let mut rng = replication_rng(seed, 0);
            let w = row_normalize(&gen_dyad(n, &mut rng).unwrap());
            for i in 0..n {
                let s: f64 = w.row(i).iter().map(|&(_, x)| x).sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
                prop_assert!(w.row(i).iter().all(|&(j, x)| j != i && x >= 0.0));
            }
            if w.isolated_count() == 0 {
                prop_assert!((w.max_row_sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn apply_is_linear(seed in 0u64..100, alpha in -5.0f64..5.0, k in 1usize..4) {
            let mut rng = replication_rng(seed, 1);
            let n = 30;
            let w = row_normalize(&gen_sbm(n, 3, &mut rng).unwrap());
            let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
            let z: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin()).collect();
            let mix: Vec<f64> = y.iter().zip(&z).map(|(a, b)| alpha * a + b).collect();
            let lhs = apply_weights(&w, &mix, k).unwrap();
            let wy = apply_weights(&w, &y, k).unwrap();
            let wz = apply_weights(&w, &z, k).unwrap();
            for i in 0..n {
                prop_assert!((lhs[i] - (alpha * wy[i] + wz[i])).abs() < 1e-12);
            }
        }
    }
}

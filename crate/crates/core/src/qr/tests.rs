use super::*;
use crate::rng::replication_rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

/// Minimum over all basic solutions: some optimum interpolates `k` points.
fn basic_solution_oracle(x: &DesignMatrix, y: &[f64], tau: f64) -> f64 {
    let (n, k) = (x.nrows(), x.ncols());
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let b = DMatrix::from_fn(k, k, |l, j| x.get(idx[l], j));
        let rhs = nalgebra::DVector::from_iterator(k, idx.iter().map(|&i| y[i]));
        if b.determinant().abs() > 1e-10 {
            if let Some(beta) = b.lu().solve(&rhs) {
                let obj = qr_objective(x, y, tau, beta.as_slice()).unwrap();
                best = best.min(obj);
            }
        }
        // Next k-subset in lexicographic order.
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return best;
        }
        idx[pos - 1] += 1;
        for l in pos..k {
            idx[l] = idx[l - 1] + 1;
        }
    }
}

fn random_problem(seed: u64, n: usize, k: usize, heavy: bool) -> (DesignMatrix, Vec<f64>) {
    let mut rng = replication_rng(seed, 0);
    let mut cols = vec![vec![1.0; n]];
    for _ in 1..k {
        cols.push(
            (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0)
                .collect(),
        );
    }
    let y = (0..n)
        .map(|i| {
            let mut v: f64 = 0.5;
            for (j, c) in cols.iter().enumerate().skip(1) {
                v += c[i] * (j as f64 * 0.7 - 1.0);
            }
            let e: f64 = rng.sample(StandardNormal);
            v + if heavy { e * e * e } else { e }
        })
        .collect();
    (DesignMatrix::from_columns(&cols).unwrap(), y)
}

#[test]
fn check_loss_examples() {
    assert_eq!(check_loss(0.0, 0.37).unwrap(), 0.0);
    assert!((check_loss(1.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
    assert!((check_loss(-1.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
    for u in [-2.5, -0.1, 0.0, 3.0] {
        assert!((check_loss(u, 0.5).unwrap() - 0.5 * u.abs()).abs() < 1e-15);
    }
    assert!(check_loss(1.0, 0.0).is_err());
    assert!(check_loss(1.0, 1.0).is_err());
}

#[test]
fn median_of_three() {
    let x = DesignMatrix::from_columns(&[vec![1.0; 3]]).unwrap();
    let fit = qr_fit(&x, &[1.0, 2.0, 9.0], 0.5, &opts()).unwrap();
    assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
    assert!((fit.objective - 4.0).abs() < 1e-10);
    assert!(fit.converged);
}

#[test]
fn lower_quartile_of_twenty_points() {
    let y: Vec<f64> = (0..20).map(|i| 1.5 * i as f64 - 4.0).collect();
    let x = DesignMatrix::from_columns(&[vec![1.0; 20]]).unwrap();
    let fit = qr_fit(&x, &y, 0.25, &opts()).unwrap();
    // 1-D exhaustive oracle: the objective is piecewise linear with kinks at the data.
    let obj = |b: f64| y.iter().map(|&v| rho(v - b, 0.25)).sum::<f64>();
    let oracle = y.iter().map(|&b| obj(b)).fold(f64::INFINITY, f64::min);
    assert!((fit.objective - oracle).abs() < 1e-9);
    // tau n = 5, so every point of [y_(5), y_(6)] is a minimizer.
    let b = fit.coefficients[0];
    assert!(b >= y[4] - 1e-9 && b <= y[5] + 1e-9, "{b}");
}

#[test]
fn objective_consistency_and_exact_fit() {
    let (x, y) = random_problem(11, 200, 4, false);
    let fit = qr_fit(&x, &y, 0.3, &opts()).unwrap();
    let recomputed = qr_objective(&x, &y, 0.3, &fit.coefficients).unwrap();
    assert!((recomputed - fit.objective).abs() < 1e-10);

    let beta = [1.0, -2.0, 0.5, 3.0];
    let exact = x.mul_vec(&beta);
    assert_eq!(qr_objective(&x, &exact, 0.3, &beta).unwrap(), 0.0);
    let fit = qr_fit(&x, &exact, 0.7, &opts()).unwrap();
    assert!(fit.objective < 1e-9);
    for (b, t) in fit.coefficients.iter().zip(beta) {
        assert!((b - t).abs() < 1e-8);
    }
    assert!(qr_objective(&x, &y[..10], 0.3, &beta).is_err());
    assert!(qr_objective(&x, &y, 0.3, &beta[..2]).is_err());
}

#[test]
fn singular_design_names_column() {
    let n = 30;
    let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..n).map(|i| libm::cos(i as f64)).collect();
    let dup: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 2.0 * u - v).collect();
    let x = DesignMatrix::from_columns(&[vec![1.0; n], a, b, dup]).unwrap();
    let y = vec![0.0; n];
    assert_eq!(
        qr_fit(&x, &y, 0.5, &opts()).unwrap_err(),
        Error::SingularDesign { column: 3 }
    );
    let zero = DesignMatrix::from_columns(&[vec![1.0; n], vec![0.0; n]]).unwrap();
    assert_eq!(
        qr_fit(&zero, &y, 0.5, &opts()).unwrap_err(),
        Error::SingularDesign { column: 1 }
    );
}

#[test]
fn rejects_bad_inputs() {
    assert!(DesignMatrix::from_columns(&[vec![1.0, f64::NAN]]).is_err());
    assert!(DesignMatrix::from_columns(&[vec![1.0], vec![2.0]]).is_err());
    let x = DesignMatrix::from_columns(&[vec![1.0; 3]]).unwrap();
    assert!(qr_fit(&x, &[1.0, 2.0], 0.5, &opts()).is_err());
    assert!(qr_fit(&x, &[1.0, 2.0, 3.0], 1.5, &opts()).is_err());
    let square = DesignMatrix::from_columns(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    assert!(qr_fit(&square, &[1.0, 2.0], 0.5, &opts()).is_err());
}

#[test]
fn iteration_cap_reports_best_iterate() {
    let (x, y) = random_problem(3, 300, 3, true);
    let capped = SolverOptions { max_iter: 1, ..opts() };
    match qr_fit(&x, &y, 0.5, &capped) {
        Err(Error::NonConvergence { iterations, best }) => {
            assert_eq!(iterations, 1);
            assert!(!best.converged);
            assert_eq!(best.coefficients.len(), 3);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn scaling_does_not_change_the_optimum() {
    let (x, y) = random_problem(5, 500, 5, true);
    for tau in [0.1, 0.5, 0.9] {
        let a = qr_fit(&x, &y, tau, &opts()).unwrap();
        let b = qr_fit(
            &x,
            &y,
            tau,
            &SolverOptions {
                scaling: false,
                ..opts()
            },
        )
        .unwrap();
        assert!((a.objective - b.objective).abs() < 1e-8 * (1.0 + a.objective));
    }
}

#[test]
fn warm_start_reaches_same_objective() {
    let (x, y) = random_problem(6, 400, 4, false);
    let prep = PreparedDesign::new(&x, &opts()).unwrap();
    let first = prep.fit(&y, 0.4).unwrap();
    let y2: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.05 * libm::sin(i as f64))
        .collect();
    let cold = prep.fit(&y2, 0.4).unwrap();
    let warm = prep.fit_from_basis(&y2, 0.4, &first.basis).unwrap();
    assert!((cold.objective - warm.objective).abs() < 1e-9 * (1.0 + cold.objective));
    // Garbage bases fall back to a cold start.
    let bad = prep.fit_from_basis(&y2, 0.4, &[0, 0, 0, 0]).unwrap();
    assert!((bad.objective - cold.objective).abs() < 1e-9 * (1.0 + cold.objective));
}

#[test]
fn large_panel_sized_problem() {
    let (x, y) = random_problem(7, 9_900, 12, false);
    for tau in [0.1, 0.5, 0.9] {
        let fit = qr_fit(&x, &y, tau, &opts()).unwrap();
        let k = x.ncols() as f64 / x.nrows() as f64;
        let frac = fit.negative_fraction();
        assert!(frac >= tau - k && frac <= tau + k, "{frac}");
        assert_eq!(fit.basis.len(), 12);
        assert!(fit.basis.iter().all(|&i| fit.residuals[i] == 0.0));
    }
}

fn assert_first_order(x: &DesignMatrix, fit: &QuantileFit) {
    // Nonbasic subgradient must be offset by basis multipliers in [tau - 1, tau].
    let (n, k) = (x.nrows(), x.ncols());
    let tau = fit.tau;
    let mut g = vec![0.0; k];
    for i in 0..n {
        if fit.basis.contains(&i) {
            continue;
        }
        let psi = if fit.residuals[i] < 0.0 { tau - 1.0 } else { tau };
        for j in 0..k {
            g[j] += psi * x.get(i, j);
        }
    }
    let b = DMatrix::from_fn(k, k, |l, j| x.get(fit.basis[l], j));
    let a = b.transpose().lu().solve(&nalgebra::DVector::from_vec(g)).unwrap();
    for v in a.iter() {
        let m = -v;
        assert!(m >= tau - 1.0 - 1e-8 && m <= tau + 1e-8, "multiplier {m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_basic_solution_oracle(
        seed in 0u64..10_000,
        n in 8usize..=40,
        k in 1usize..=3,
        tau in 0.05f64..0.95,
        heavy in any::<bool>(),
    ) {
        let (x, y) = random_problem(seed, n, k, heavy);
        let fit = qr_fit(&x, &y, tau, &opts()).unwrap();
        let oracle = basic_solution_oracle(&x, &y, tau);
        prop_assert!((fit.objective - oracle).abs() <= 1e-8 * (1.0 + oracle),
            "solver {} oracle {}", fit.objective, oracle);
        let frac = fit.negative_fraction();
        let slack = k as f64 / n as f64;
        prop_assert!(frac >= tau - slack - 1e-12 && frac <= tau + slack + 1e-12);
        assert_first_order(&x, &fit);
    }

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.01f64..100.0, tau in 0.1f64..0.9) {
        let (x, y) = random_problem(seed, 60, 3, false);
        let a = qr_fit(&x, &y, tau, &opts()).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let b = qr_fit(&x, &ys, tau, &opts()).unwrap();
        prop_assert!((b.objective - c * a.objective).abs() <= 1e-8 * (1.0 + c * a.objective));
        let probe = qr_objective(&x, &ys, tau, &a.coefficients.iter().map(|v| c * v).collect::<Vec<_>>()).unwrap();
        prop_assert!((probe - b.objective).abs() <= 1e-8 * (1.0 + b.objective));
    }

    #[test]
    fn no_nearby_point_is_better(seed in 0u64..1000, tau in 0.1f64..0.9) {
        let (x, y) = random_problem(seed, 80, 3, true);
        let fit = qr_fit(&x, &y, tau, &opts()).unwrap();
        let mut rng = replication_rng(seed, 9);
        for _ in 0..100 {
            let beta: Vec<f64> = fit.coefficients.iter().map(|b| b + rng.random_range(-0.1..0.1)).collect();
            let obj = qr_objective(&x, &y, tau, &beta).unwrap();
            prop_assert!(obj >= fit.objective - 1e-8);
        }
    }
}

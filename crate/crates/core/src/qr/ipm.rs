//! Frisch-Newton predictor-corrector on the bounded dual
//!
//! ```text
//! max  y'd   s.t.  X'd = (1 - tau) X'1,  0 <= d <= 1
//! ```
//!
//! written as `min c'x, A x = b, 0 <= x <= 1` with `c = -y`, `A = X'`. The
//! dual multipliers of the equality constraints are `-beta`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{total_loss, PreparedDesign};

const STEP_DAMPING: f64 = 0.9995;

pub(super) struct Interior {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(super) fn solve(p: &PreparedDesign, y: &[f64], tau: f64) -> Interior {
    let (n, k) = (p.nrows(), p.ncols());
    let tol = p.options().tolerance;

    let mut x = vec![1.0 - tau; n];
    let mut s = vec![tau; n];

    // Least-squares start for beta, then split the residual into the two
    // dual slacks with a common positive shift so the start is interior.
    let mut beta = least_squares(p, y).unwrap_or_else(|| vec![0.0; k]);
    let mut resid = residuals(p, y, &beta);
    let shift = 1e-3 * (1.0 + resid.iter().map(|r| r.abs()).sum::<f64>() / n as f64);
    // z - w = X beta - y = -resid
    let mut z: Vec<f64> = resid.iter().map(|&r| (-r).max(0.0) + shift).collect();
    let mut w: Vec<f64> = resid.iter().map(|&r| r.max(0.0) + shift).collect();

    let mut q = vec![0.0; n];
    let mut rr = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut work = vec![0.0; n];

    let mut best = (f64::INFINITY, beta.clone());
    let mut iterations = 0;
    let mut converged = false;

    while iterations < p.options().max_iter {
        let gap: f64 =
            x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + s.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let loss = total_loss(&resid, tau);
        let rel = gap / (1.0 + loss);
        if rel < best.0 {
            best = (rel, beta.clone());
        }
        if rel <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        for i in 0..n {
            q[i] = 1.0 / (z[i] / x[i] + w[i] / s[i]);
            rr[i] = z[i] - w[i];
        }
        let Some(chol) = normal_matrix(p, &q).cholesky() else {
            break;
        };

        // Affine-scaling predictor.
        for i in 0..n {
            work[i] = q[i] * rr[i];
        }
        let dy = chol.solve(&at_times(p, &work));
        let ady = a_transpose_times(p, dy.as_slice());
        for i in 0..n {
            dx[i] = q[i] * (ady[i] - rr[i]);
            dz[i] = -z[i] * (1.0 + dx[i] / x[i]);
            dw[i] = -w[i] * (1.0 - dx[i] / s[i]);
        }
        let (mut fp, mut fd) = step_lengths(&x, &s, &z, &w, &dx, &dz, &dw);
        let mut dy = dy;

        if fp.min(fd) < 1.0 {
            let mu_now = gap;
            let mut g = 0.0;
            for i in 0..n {
                g += (z[i] + fd * dz[i]) * (x[i] + fp * dx[i]) + (w[i] + fd * dw[i]) * (s[i] - fp * dx[i]);
            }
            let ratio = g / mu_now;
            let mu = mu_now * ratio * ratio * ratio / (2.0 * n as f64);

            // Corrector: second-order terms dx*dz and ds*dw, ds = -dx.
            let mut corr = vec![0.0; n];
            for i in 0..n {
                let dxdz = dx[i] * dz[i];
                let dsdw = -dx[i] * dw[i];
                let xi = mu * (1.0 / x[i] - 1.0 / s[i]);
                corr[i] = xi - dxdz / x[i] + dsdw / s[i];
                work[i] = q[i] * (rr[i] - corr[i]);
                dw[i] = dsdw;
                dz[i] = dxdz;
            }
            dy = chol.solve(&at_times(p, &work));
            let ady = a_transpose_times(p, dy.as_slice());
            for i in 0..n {
                let (dxdz, dsdw) = (dz[i], dw[i]);
                dx[i] = q[i] * (ady[i] + corr[i] - rr[i]);
                let ds = -dx[i];
                dz[i] = mu / x[i] - z[i] - z[i] * dx[i] / x[i] - dxdz / x[i];
                dw[i] = mu / s[i] - w[i] - w[i] * ds / s[i] - dsdw / s[i];
            }
            (fp, fd) = step_lengths(&x, &s, &z, &w, &dx, &dz, &dw);
        }

        for i in 0..n {
            x[i] += fp * dx[i];
            s[i] -= fp * dx[i];
            z[i] += fd * dz[i];
            w[i] += fd * dw[i];
        }
        // dy is the step in -beta.
        for (b, d) in beta.iter_mut().zip(dy.iter()) {
            *b -= fd * d;
        }
        resid = residuals(p, y, &beta);
    }

    if !converged {
        beta = best.1;
        resid = residuals(p, y, &beta);
    }
    Interior {
        beta,
        residuals: resid,
        iterations,
        converged,
    }
}

fn step_lengths(x: &[f64], s: &[f64], z: &[f64], w: &[f64], dx: &[f64], dz: &[f64], dw: &[f64]) -> (f64, f64) {
    let mut fp = f64::INFINITY;
    let mut fd = f64::INFINITY;
    for i in 0..x.len() {
        if dx[i] < 0.0 {
            fp = fp.min(-x[i] / dx[i]);
        } else if dx[i] > 0.0 {
            fp = fp.min(s[i] / dx[i]);
        }
        if dz[i] < 0.0 {
            fd = fd.min(-z[i] / dz[i]);
        }
        if dw[i] < 0.0 {
            fd = fd.min(-w[i] / dw[i]);
        }
    }
    ((STEP_DAMPING * fp).min(1.0), (STEP_DAMPING * fd).min(1.0))
}

/// `X' diag(q) X`.
fn normal_matrix(p: &PreparedDesign, q: &[f64]) -> DMatrix<f64> {
    let k = p.ncols();
    let mut m = DMatrix::zeros(k, k);
    let mut qa = vec![0.0; p.nrows()];
    for a in 0..k {
        let ca = p.col(a);
        for i in 0..qa.len() {
            qa[i] = q[i] * ca[i];
        }
        for b in a..k {
            let v: f64 = qa.iter().zip(p.col(b)).map(|(u, v)| u * v).sum();
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// `X' v`.
fn at_times(p: &PreparedDesign, v: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        p.ncols(),
        (0..p.ncols()).map(|j| p.col(j).iter().zip(v).map(|(a, b)| a * b).sum()),
    )
}

/// `X d`.
fn a_transpose_times(p: &PreparedDesign, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.nrows()];
    for (j, &dj) in d.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(p.col(j)) {
            *o += dj * x;
        }
    }
    out
}

fn residuals(p: &PreparedDesign, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let fitted = a_transpose_times(p, beta);
    y.iter().zip(&fitted).map(|(a, b)| a - b).collect()
}

fn least_squares(p: &PreparedDesign, y: &[f64]) -> Option<Vec<f64>> {
    let ones = vec![1.0; p.nrows()];
    let chol = normal_matrix(p, &ones).cholesky()?;
    Some(chol.solve(&at_times(p, y)).as_slice().to_vec())
}

//! Exact simplex phase: from a basis of `k` interpolated observations, pivot
//! along edges of the check-loss polyhedron until no edge direction descends.
//!
//! Residuals and the smooth part of the gradient are updated incrementally
//! between pivots and recomputed from the basis every [`REFRESH_EVERY`]
//! pivots and before optimality is declared.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use super::PreparedDesign;
use crate::error::{Error, Result};

const REFRESH_EVERY: usize = 50;

pub(super) struct Vertex {
    pub beta: Vec<f64>,
    pub basis: Vec<usize>,
    pub pivots: usize,
    pub optimal: bool,
}

/// The `k` observations with the smallest absolute residuals whose design
/// rows are linearly independent.
pub(super) fn crossover_basis(p: &PreparedDesign, residuals: &[f64]) -> Vec<usize> {
    let k = p.ncols();
    let mut order: Vec<usize> = (0..p.nrows()).collect();
    order.sort_by(|&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()));
    let mut chosen = Vec::with_capacity(k);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in order {
        let row = design_row(p, i);
        let norm0 = libm::sqrt(row.iter().map(|v| v * v).sum());
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row;
        for _ in 0..2 {
            for q in &ortho {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= d * qi);
            }
        }
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum());
        if norm > 1e-7 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
            chosen.push(i);
            if chosen.len() == k {
                break;
            }
        }
    }
    chosen
}

fn design_row(p: &PreparedDesign, i: usize) -> Vec<f64> {
    (0..p.ncols()).map(|j| p.col(j)[i]).collect()
}

#[inline]
fn kink_slope(c: f64, tau: f64) -> f64 {
    // d/dt rho(-t c) at t = 0+
    if c > 0.0 {
        (1.0 - tau) * c
    } else {
        -tau * c
    }
}

struct State<'a> {
    p: &'a PreparedDesign,
    y: &'a [f64],
    tau: f64,
    zero_tol: f64,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    resid: Vec<f64>,
    // Sign (+1 / -1) each nonbasic residual contributes to `g` with.
    side: Vec<i8>,
    // sum over nonbasic i of psi(side_i) x_i
    g: Vec<f64>,
    fresh: bool,
}

impl<'a> State<'a> {
    fn new(p: &'a PreparedDesign, y: &'a [f64], tau: f64, basis: Vec<usize>) -> Result<Self> {
        let (n, k) = (p.nrows(), p.ncols());
        let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (lu, lu_t) = factor(p, &basis)?;
        let mut s = State {
            p,
            y,
            tau,
            zero_tol: 1e-11 * (1.0 + y_max),
            basis,
            in_basis: vec![false; n],
            lu,
            lu_t,
            resid: vec![0.0; n],
            side: vec![0; n],
            g: vec![0.0; k],
            fresh: false,
        };
        s.refresh()?;
        Ok(s)
    }

    fn psi(&self, side: i8) -> f64 {
        if side > 0 {
            self.tau
        } else {
            self.tau - 1.0
        }
    }

    fn beta(&self) -> Result<DVector<f64>> {
        let yb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&i| self.y[i]));
        self.lu
            .solve(&yb)
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(singular)
    }

    /// Recompute residuals, sides and gradient from the basis.
    fn refresh(&mut self) -> Result<()> {
        let beta = self.beta()?;
        let p = self.p;
        self.resid.copy_from_slice(self.y);
        for j in 0..p.ncols() {
            let bj = beta[j];
            for (r, &x) in self.resid.iter_mut().zip(p.col(j)) {
                *r -= bj * x;
            }
        }
        self.in_basis.iter_mut().for_each(|f| *f = false);
        for &i in &self.basis {
            self.in_basis[i] = true;
            self.resid[i] = 0.0;
        }
        let mut psi = vec![0.0; p.nrows()];
        for i in 0..p.nrows() {
            if self.in_basis[i] {
                self.side[i] = 0;
            } else {
                self.side[i] = if self.resid[i] >= 0.0 { 1 } else { -1 };
                psi[i] = self.psi(self.side[i]);
            }
        }
        for j in 0..p.ncols() {
            self.g[j] = psi.iter().zip(p.col(j)).map(|(a, b)| a * b).sum();
        }
        self.fresh = true;
        Ok(())
    }

    fn add_to_g(&mut self, i: usize, weight: f64) {
        for j in 0..self.p.ncols() {
            self.g[j] += weight * self.p.col(j)[i];
        }
    }

    /// Steepest edge among the `2k` basis releases, if any descends.
    fn price(&self, slope_tol: f64) -> Result<Option<(f64, usize, f64)>> {
        let n = self.p.nrows();
        let mut g = DVector::from_column_slice(&self.g);
        let mut kinks = Vec::new();
        for i in 0..n {
            if !self.in_basis[i] && self.resid[i].abs() <= self.zero_tol {
                let row = design_row(self.p, i);
                let w = self.psi(self.side[i]);
                for (gj, x) in g.iter_mut().zip(&row) {
                    *gj -= w * x;
                }
                kinks.push(self.lu_t.solve(&DVector::from_vec(row)).ok_or_else(singular)?);
            }
        }
        let a = self.lu_t.solve(&g).ok_or_else(singular)?;
        let tau = self.tau;
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..self.basis.len() {
            for sigma in [1.0, -1.0] {
                let own = if sigma > 0.0 { 1.0 - tau } else { tau };
                let kink: f64 = kinks.iter().map(|d| kink_slope(sigma * d[j], tau)).sum();
                let slope = -sigma * a[j] + kink + own;
                if slope < -slope_tol && best.is_none_or(|(s, _, _)| slope < s) {
                    best = Some((slope, j, sigma));
                }
            }
        }
        Ok(best)
    }

    /// Move along the edge releasing basis slot `leave` to sign `-sigma`;
    /// exact line search over the sorted breakpoints.
    fn pivot(&mut self, slope0: f64, leave: usize, sigma: f64, c: &mut [f64]) -> Result<()> {
        let p = self.p;
        let k = p.ncols();
        let mut e = DVector::zeros(k);
        e[leave] = sigma;
        let d = self.lu.solve(&e).ok_or_else(singular)?;
        c.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..k {
            let dj = d[j];
            for (ci, &x) in c.iter_mut().zip(p.col(j)) {
                *ci += dj * x;
            }
        }
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for i in 0..p.nrows() {
            let r = self.resid[i];
            if !self.in_basis[i] && r.abs() > self.zero_tol && c[i] != 0.0 {
                let t = r / c[i];
                if t > 0.0 {
                    breaks.push((t, i));
                }
            }
        }
        let by_t = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0) };
        let mut slope = slope0;
        let mut start = 0;
        let mut chunk = 32;
        let (t_star, entering) = 'search: loop {
            let rest = &mut breaks[start..];
            if rest.is_empty() {
                return Err(Error::SingularSystem(
                    "check-loss objective unbounded along edge".into(),
                ));
            }
            let m = chunk.min(rest.len());
            if m < rest.len() {
                rest.select_nth_unstable_by(m - 1, by_t);
            }
            rest[..m].sort_unstable_by(by_t);
            for &(t, i) in &rest[..m] {
                slope += c[i].abs();
                if slope >= 0.0 {
                    break 'search (t, i);
                }
            }
            start += m;
            chunk *= 4;
        };

        for (r, &ci) in self.resid.iter_mut().zip(c.iter()) {
            *r -= t_star * ci;
        }
        let old_leave = self.basis[leave];
        self.resid[old_leave] = -t_star * sigma;
        self.resid[entering] = 0.0;

        let w = self.psi(self.side[entering]);
        self.add_to_g(entering, -w);
        self.side[entering] = 0;
        self.in_basis[entering] = true;
        self.in_basis[old_leave] = false;
        self.side[old_leave] = if sigma > 0.0 { -1 } else { 1 };
        let w = self.psi(self.side[old_leave]);
        self.add_to_g(old_leave, w);

        // Points the step carried across zero change sides.
        for i in 0..p.nrows() {
            let r = self.resid[i];
            if self.in_basis[i] || r.abs() <= self.zero_tol {
                continue;
            }
            let side = if r > 0.0 { 1 } else { -1 };
            if side != self.side[i] {
                let delta = self.psi(side) - self.psi(self.side[i]);
                self.side[i] = side;
                self.add_to_g(i, delta);
            }
        }

        self.basis[leave] = entering;
        (self.lu, self.lu_t) = factor(p, &self.basis)?;
        self.fresh = false;
        Ok(())
    }
}

fn singular() -> Error {
    Error::SingularSystem("simplex basis is singular".into())
}

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

fn factor(p: &PreparedDesign, basis: &[usize]) -> Result<(Lu, Lu)> {
    let k = p.ncols();
    if basis.len() != k {
        return Err(Error::SingularSystem("crossover found too few independent rows".into()));
    }
    let b = DMatrix::from_fn(k, k, |l, j| p.col(j)[basis[l]]);
    let lu = b.clone().lu();
    if !lu.is_invertible() {
        return Err(singular());
    }
    Ok((lu, b.transpose().lu()))
}

pub(super) fn solve(p: &PreparedDesign, y: &[f64], tau: f64, basis: Vec<usize>, max_pivots: usize) -> Result<Vertex> {
    let mut state = State::new(p, y, tau, basis)?;
    let slope_tol = 1e-11 * p.nrows() as f64;
    let mut c = vec![0.0; p.nrows()];
    let mut pivots = 0;
    loop {
        let Some((slope, leave, sigma)) = state.price(slope_tol)? else {
            if state.fresh {
                break;
            }
            state.refresh()?;
            continue;
        };
        if pivots >= max_pivots {
            if !state.fresh {
                state.refresh()?;
            }
            return Ok(Vertex {
                beta: state.beta()?.as_slice().to_vec(),
                basis: state.basis,
                pivots,
                optimal: false,
            });
        }
        state.pivot(slope, leave, sigma, &mut c)?;
        pivots += 1;
        if pivots % REFRESH_EVERY == 0 {
            state.refresh()?;
        }
    }
    Ok(Vertex {
        beta: state.beta()?.as_slice().to_vec(),
        basis: state.basis,
        pivots,
        optimal: true,
    })
}

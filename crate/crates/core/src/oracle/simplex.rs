//! Dense two-phase simplex with Bland's rule.
//!
//! Chosen for determinism and guaranteed anti-cycling rather than speed;
//! every LP this crate solves is small. Free variables are split into
//! nonnegative pairs, inequalities get slacks, and phase one drives a set
//! of artificial variables to zero.

use super::ExplicitLp;
use crate::{Error, Result};

const TOL: f64 = 1e-9;

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    cost_rhs: f64,
    basis: Vec<usize>,
    allowed: Vec<bool>,
}

impl Tableau {
    fn ncols(&self) -> usize {
        self.cost.len()
    }

    fn canonicalize_cost(&mut self, c: &[f64]) {
        self.cost = c.to_vec();
        self.cost_rhs = 0.0;
        for i in 0..self.rows.len() {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..self.ncols() {
                    self.cost[j] -= cb * self.rows[i][j];
                }
                self.cost_rhs -= cb * self.rhs[i];
            }
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let d = self.rows[r][e];
        for v in self.rows[r].iter_mut() {
            *v /= d;
        }
        self.rhs[r] /= d;
        self.rows[r][e] = 1.0; // exact after normalization
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][e];
            if f != 0.0 {
                for j in 0..self.ncols() {
                    self.rows[i][j] -= f * self.rows[r][j];
                }
                self.rows[i][e] = 0.0;
                self.rhs[i] -= f * self.rhs[r];
            }
        }
        let f = self.cost[e];
        if f != 0.0 {
            for j in 0..self.ncols() {
                self.cost[j] -= f * self.rows[r][j];
            }
            self.cost[e] = 0.0;
            self.cost_rhs -= f * self.rhs[r];
        }
        self.basis[r] = e;
    }

    /// Bland's rule: enter the lowest-index improving column, leave on the
    /// minimum ratio with ties broken by the lowest basic variable index.
    fn run(&mut self, max_iter: usize) -> Result<()> {
        for _ in 0..max_iter {
            let mut entering = None;
            for j in 0..self.ncols() {
                if self.allowed[j] && self.cost[j] < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(e) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][e];
                if a > TOL {
                    let ratio = self.rhs[i] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= TOL * (1.0 + br.abs());
                            if ratio < br - TOL * (1.0 + br.abs())
                                || (tie && self.basis[i] < self.basis[bi])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::LpUnbounded);
            };
            self.pivot(r, e);
        }
        Err(Error::LpNumerical("simplex iteration cap"))
    }
}

/// Solves the LP to optimality. Returns the optimal value (including the
/// objective offset) and an optimal point.
pub fn simplex_solve(lp: &ExplicitLp) -> Result<(f64, Vec<f64>)> {
    let n = lp.num_vars;
    let n_ub = lp.a_ub.len();
    let n_eq = lp.a_eq.len();
    let m = n_ub + n_eq;
    let n_split = 2 * n;

    if m == 0 {
        if lp.objective.iter().any(|v| v.abs() > TOL) {
            return Err(Error::LpUnbounded);
        }
        return Ok((lp.objective_offset, vec![0.0; n]));
    }

    // split free variables, add slacks for inequality rows
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (r, a) in lp.a_ub.iter().chain(lp.a_eq.iter()).enumerate() {
        debug_assert_eq!(a.len(), n);
        let mut row = vec![0.0; n_split + n_ub];
        for j in 0..n {
            row[2 * j] = a[j];
            row[2 * j + 1] = -a[j];
        }
        if r < n_ub {
            row[n_split + r] = 1.0;
        }
        let b = if r < n_ub { lp.b_ub[r] } else { lp.b_eq[r - n_ub] };
        rows.push(row);
        rhs.push(b);
    }
    for i in 0..m {
        if rhs[i] < 0.0 {
            for v in rows[i].iter_mut() {
                *v = -*v;
            }
            rhs[i] = -rhs[i];
        }
    }

    // basis: slacks where usable, artificials elsewhere
    let mut basis = Vec::with_capacity(m);
    let mut n_art = 0;
    let art_start = n_split + n_ub;
    for (i, row) in rows.iter().enumerate() {
        if i < n_ub && row[n_split + i] > 0.5 {
            basis.push(n_split + i);
        } else {
            basis.push(art_start + n_art);
            n_art += 1;
        }
    }
    let ncols = art_start + n_art;
    let mut art_seen = 0;
    for (i, row) in rows.iter_mut().enumerate() {
        row.resize(ncols, 0.0);
        if basis[i] >= art_start {
            row[art_start + art_seen] = 1.0;
            art_seen += 1;
        }
    }

    let mut t = Tableau {
        rows,
        rhs,
        cost: vec![0.0; ncols],
        cost_rhs: 0.0,
        basis,
        allowed: vec![true; ncols],
    };
    let max_iter = 50_000 + 100 * (m + ncols);

    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        t.canonicalize_cost(&phase1);
        t.run(max_iter)?;
        let infeas = -t.cost_rhs;
        if infeas > 1e-7 {
            return Err(Error::LpInfeasible);
        }
        // drive leftover artificials out of the basis or drop their rows
        let mut i = 0;
        while i < t.rows.len() {
            if t.basis[i] >= art_start {
                let piv = (0..art_start).find(|&j| t.rows[i][j].abs() > TOL);
                match piv {
                    Some(j) => t.pivot(i, j),
                    None => {
                        t.rows.remove(i);
                        t.rhs.remove(i);
                        t.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for j in art_start..ncols {
            t.allowed[j] = false;
        }
    }

    let mut phase2 = vec![0.0; ncols];
    for j in 0..n {
        phase2[2 * j] = lp.objective[j];
        phase2[2 * j + 1] = -lp.objective[j];
    }
    t.canonicalize_cost(&phase2);
    t.run(max_iter)?;

    let mut split = vec![0.0; n_split];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n_split {
            split[b] = t.rhs[i];
        }
    }
    let point: Vec<f64> = (0..n).map(|j| split[2 * j] - split[2 * j + 1]).collect();
    let value = lp
        .objective
        .iter()
        .zip(&point)
        .map(|(c, x)| c * x)
        .sum::<f64>()
        + lp.objective_offset;
    Ok((value, point))
}

//! Dense two-phase simplex over exact rationals with Bland's rule.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<BigRational>,
    pub cmp: Cmp,
    pub rhs: BigRational,
}

/// Minimize `objective · x` subject to `rows`, with `x_j >= 0` unless `free[j]`.
#[derive(Debug, Clone)]
pub struct Lp {
    pub n_vars: usize,
    pub free: Vec<bool>,
    pub rows: Vec<Row>,
    pub objective: Vec<BigRational>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { x: Vec<BigRational>, value: BigRational },
    Infeasible,
    Unbounded,
}

impl Lp {
    pub fn new(n_vars: usize) -> Self {
        Lp { n_vars, free: vec![false; n_vars], rows: Vec::new(), objective: vec![BigRational::zero(); n_vars] }
    }

    pub fn add_row(&mut self, coeffs: Vec<BigRational>, cmp: Cmp, rhs: BigRational) {
        assert_eq!(coeffs.len(), self.n_vars);
        self.rows.push(Row { coeffs, cmp, rhs });
    }
}

struct Tableau {
    t: Vec<Vec<BigRational>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> &BigRational {
        &self.t[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c].clone();
        for v in self.t[r].iter_mut() {
            *v /= &p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let k = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &k * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost` over the current basis; `allowed` masks entering columns.
    fn optimize(&mut self, cost: &[BigRational], allowed: &[bool]) -> bool {
        loop {
            let mut enter = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j].clone();
                for (i, &b) in self.basis.iter().enumerate() {
                    if !cost[b].is_zero() && !self.t[i][j].is_zero() {
                        r -= &cost[b] * &self.t[i][j];
                    }
                }
                if r.is_negative() {
                    enter = Some(j);
                    break;
                }
            }
            let Some(c) = enter else { return true };
            let mut leave: Option<(usize, BigRational)> = None;
            for i in 0..self.t.len() {
                if !self.t[i][c].is_positive() {
                    continue;
                }
                let ratio = self.rhs(i) / &self.t[i][c];
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
    }
}

pub fn solve(lp: &Lp) -> LpResult {
    // Column layout: split variables, then slacks/surpluses, then artificials.
    let mut var_cols: Vec<(usize, Option<usize>)> = Vec::with_capacity(lp.n_vars);
    let mut cols = 0;
    for j in 0..lp.n_vars {
        if lp.free[j] {
            var_cols.push((cols, Some(cols + 1)));
            cols += 2;
        } else {
            var_cols.push((cols, None));
            cols += 1;
        }
    }
    let n_struct = cols;
    let m = lp.rows.len();
    let rows: Vec<(Vec<BigRational>, Cmp, BigRational)> = lp
        .rows
        .iter()
        .map(|r| {
            if r.rhs.is_negative() {
                let cmp = match r.cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    Cmp::Eq => Cmp::Eq,
                };
                (r.coeffs.iter().map(|v| -v).collect(), cmp, -r.rhs.clone())
            } else {
                (r.coeffs.clone(), r.cmp, r.rhs.clone())
            }
        })
        .collect();
    let n_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let total = n_struct + n_slack + n_art;
    let mut t = vec![vec![BigRational::zero(); total + 1]; m];
    let mut basis = vec![0; m];
    let (mut s_idx, mut a_idx) = (n_struct, n_struct + n_slack);
    for (i, (coeffs, cmp, rhs)) in rows.iter().enumerate() {
        for (j, v) in coeffs.iter().enumerate() {
            let (p, n) = var_cols[j];
            t[i][p] = v.clone();
            if let Some(n) = n {
                t[i][n] = -v.clone();
            }
        }
        t[i][total] = rhs.clone();
        match cmp {
            Cmp::Le => {
                t[i][s_idx] = BigRational::from_integer(1.into());
                basis[i] = s_idx;
                s_idx += 1;
            }
            Cmp::Ge => {
                t[i][s_idx] = BigRational::from_integer((-1).into());
                s_idx += 1;
                t[i][a_idx] = BigRational::from_integer(1.into());
                basis[i] = a_idx;
                a_idx += 1;
            }
            Cmp::Eq => {
                t[i][a_idx] = BigRational::from_integer(1.into());
                basis[i] = a_idx;
                a_idx += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols: total };
    let is_art = |j: usize| j >= n_struct + n_slack;
    if n_art > 0 {
        let cost: Vec<BigRational> =
            (0..total).map(|j| BigRational::from_integer(if is_art(j) { 1 } else { 0 }.into())).collect();
        tab.optimize(&cost, &vec![true; total]);
        let infeas: BigRational = (0..m).filter(|&i| is_art(tab.basis[i])).map(|i| tab.rhs(i).clone()).sum();
        if infeas.is_positive() {
            return LpResult::Infeasible;
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        let mut i = 0;
        while i < tab.t.len() {
            if is_art(tab.basis[i]) {
                match (0..n_struct + n_slack).find(|&j| !tab.t[i][j].is_zero()) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.t.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }
    let mut cost = vec![BigRational::zero(); total];
    for (j, c) in lp.objective.iter().enumerate() {
        let (p, n) = var_cols[j];
        cost[p] = c.clone();
        if let Some(n) = n {
            cost[n] = -c.clone();
        }
    }
    let allowed: Vec<bool> = (0..total).map(|j| !is_art(j)).collect();
    if !tab.optimize(&cost, &allowed) {
        return LpResult::Unbounded;
    }
    let mut val = vec![BigRational::zero(); total];
    for (i, &b) in tab.basis.iter().enumerate() {
        val[b] = tab.rhs(i).clone();
    }
    let x: Vec<BigRational> = var_cols
        .iter()
        .map(|&(p, n)| match n {
            Some(n) => &val[p] - &val[n],
            None => val[p].clone(),
        })
        .collect();
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    LpResult::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    #[test]
    fn small_optimum() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6
        let mut lp = Lp::new(2);
        lp.objective = vec![r(-1), r(-1)];
        lp.add_row(vec![r(1), r(2)], Cmp::Le, r(4));
        lp.add_row(vec![r(3), r(1)], Cmp::Le, r(6));
        match solve(&lp) {
            LpResult::Optimal { x, value } => {
                assert_eq!(x, vec![BigRational::new(8.into(), 5.into()), BigRational::new(6.into(), 5.into())]);
                assert_eq!(value, BigRational::new((-14).into(), 5.into()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn free_and_equality() {
        // min x  s.t. x - y = -3, y >= 1, x free
        let mut lp = Lp::new(2);
        lp.free[0] = true;
        lp.objective = vec![r(1), r(0)];
        lp.add_row(vec![r(1), r(-1)], Cmp::Eq, r(-3));
        lp.add_row(vec![r(0), r(1)], Cmp::Ge, r(1));
        match solve(&lp) {
            LpResult::Optimal { x, .. } => assert_eq!(x, vec![r(-2), r(1)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = Lp::new(1);
        lp.add_row(vec![r(1)], Cmp::Ge, r(2));
        lp.add_row(vec![r(1)], Cmp::Le, r(1));
        assert_eq!(solve(&lp), LpResult::Infeasible);
        let mut lp = Lp::new(1);
        lp.free[0] = true;
        lp.objective = vec![r(1)];
        assert_eq!(solve(&lp), LpResult::Unbounded);
    }
}

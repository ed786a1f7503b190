//! Bounded revised simplex (primal and dual) with a dense basis inverse.
//!
//! Every row `a·x (=|<=) b` gets a logical variable `s` with `a·x + s = b`,
//! `s ∈ [0, 0]` for equalities and `s ∈ [0, ∞)` for inequalities. A cold
//! solve starts from the all-logical basis, which is dual feasible when every
//! structural variable is boxed, and runs the dual simplex. Warm starts reuse
//! the previous basis: primal simplex after an objective change, dual simplex
//! after rows are appended.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const NONBASIC: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Eq,
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.relation {
            Relation::Eq => (act - self.rhs).abs(),
            Relation::Le => (act - self.rhs).max(0.0),
        }
    }
}

/// `max c·x` subject to rows and `lower <= x <= upper` (all bounds finite).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Basic variables in position order (structural `j < n`, logical `n + i`)
/// and the nonbasic variables sitting at their upper bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub basis: Basis,
    pub pivots: usize,
}

/// Solves `lp`, optionally starting from `warm`.
pub fn solve(lp: &LinearProgram, warm: Option<&Basis>) -> Result<LpSolution> {
    let mut s = Simplex::new(lp.lower.clone(), lp.upper.clone())?;
    s.add_rows(&lp.rows);
    s.set_objective(&lp.objective);
    if let Some(b) = warm {
        s.set_basis(b)?;
    }
    s.solve()
}

/// A persistent simplex instance for sequences of related LPs.
#[derive(Debug, Clone)]
pub struct Simplex {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    basic: Vec<usize>,
    pos: Vec<usize>,
    at_upper: Vec<bool>,
    /// Row-major `B⁻¹`: row = basis position, column = constraint row.
    binv: Vec<f64>,
    x: Vec<f64>,
    since_refactor: usize,
    pivots: usize,
}

impl Simplex {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n {
            return Err(Error::Invalid("bound vectors differ in length".into()));
        }
        for j in 0..n {
            if !lower[j].is_finite() || !upper[j].is_finite() || lower[j] > upper[j] {
                return Err(Error::Invalid(format!("variable {j} needs finite bounds lower <= upper")));
            }
        }
        Ok(Self {
            n,
            m: 0,
            cols: vec![Vec::new(); n],
            rhs: Vec::new(),
            x: lower.clone(),
            lower,
            upper,
            cost: vec![0.0; n],
            basic: Vec::new(),
            pos: vec![NONBASIC; n],
            at_upper: vec![false; n],
            binv: Vec::new(),
            since_refactor: 0,
            pivots: 0,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_objective(&mut self, c: &[f64]) {
        assert_eq!(c.len(), self.n);
        self.cost[..self.n].copy_from_slice(c);
    }

    /// Appends rows; their logical variables enter the basis, so the current
    /// basis stays dual feasible.
    pub fn add_rows(&mut self, rows: &[Row]) {
        if rows.is_empty() {
            return;
        }
        let (m0, k) = (self.m, rows.len());
        let m1 = m0 + k;
        // B' = [[B, 0], [R_B, I]]  =>  B'⁻¹ = [[B⁻¹, 0], [-R_B B⁻¹, I]]
        let mut binv = vec![0.0; m1 * m1];
        for p in 0..m0 {
            binv[p * m1..p * m1 + m0].copy_from_slice(&self.binv[p * m0..p * m0 + m0]);
        }
        for (r, row) in rows.iter().enumerate() {
            let i = m0 + r;
            for &(j, a) in &row.coeffs {
                let p = self.pos[j];
                if p != NONBASIC {
                    for c in 0..m0 {
                        binv[i * m1 + c] -= a * self.binv[p * m0 + c];
                    }
                }
            }
            binv[i * m1 + i] = 1.0;
        }
        self.binv = binv;
        // logical indices shift from n + i (unchanged, logicals are appended)
        for (r, row) in rows.iter().enumerate() {
            let i = m0 + r;
            for &(j, a) in &row.coeffs {
                self.cols[j].push((i, a));
            }
            self.rhs.push(row.rhs);
            self.lower.push(0.0);
            self.upper.push(match row.relation {
                Relation::Eq => 0.0,
                Relation::Le => f64::INFINITY,
            });
            self.cost.push(0.0);
            self.at_upper.push(false);
            self.pos.push(i);
            self.basic.push(self.n + i);
            self.x.push(row.rhs - row.activity(&self.x[..self.n]));
        }
        self.m = m1;
    }

    pub fn basis(&self) -> Basis {
        Basis { basic: self.basic.clone(), at_upper: (0..self.n + self.m).filter(|&j| self.pos[j] == NONBASIC && self.at_upper[j]).collect() }
    }

    pub fn set_basis(&mut self, basis: &Basis) -> Result<()> {
        let total = self.n + self.m;
        if basis.basic.len() != self.m {
            return Err(Error::Invalid(format!("basis has {} entries, LP has {} rows", basis.basic.len(), self.m)));
        }
        self.pos = vec![NONBASIC; total];
        for (p, &j) in basis.basic.iter().enumerate() {
            if j >= total || self.pos[j] != NONBASIC {
                return Err(Error::Invalid("basis indices out of range or repeated".into()));
            }
            self.pos[j] = p;
        }
        self.basic = basis.basic.clone();
        self.at_upper = vec![false; total];
        for &j in &basis.at_upper {
            if j < total && self.pos[j] == NONBASIC && self.upper[j].is_finite() {
                self.at_upper[j] = true;
            }
        }
        self.place_nonbasic();
        if !self.refactor() {
            self.slack_basis();
        }
        Ok(())
    }

    fn place_nonbasic(&mut self) {
        for j in 0..self.n + self.m {
            if self.pos[j] == NONBASIC {
                self.x[j] = if self.at_upper[j] { self.upper[j] } else { self.lower[j] };
            }
        }
    }

    fn slack_basis(&mut self) {
        let (n, m) = (self.n, self.m);
        self.pos = vec![NONBASIC; n + m];
        self.basic = (n..n + m).collect();
        for i in 0..m {
            self.pos[n + i] = i;
            self.at_upper[n + i] = false;
        }
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        self.place_nonbasic();
        self.compute_basic_values();
        self.since_refactor = 0;
    }

    fn column(&self, j: usize) -> ColumnIter<'_> {
        if j < self.n {
            ColumnIter::Structural(self.cols[j].iter())
        } else {
            ColumnIter::Logical(Some(j - self.n))
        }
    }

    /// Rebuilds `B⁻¹` by Gauss-Jordan elimination; false if `B` is singular.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (p, &j) in self.basic.iter().enumerate() {
            for (i, a) in self.column(j) {
                b[i * m + p] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let piv = (c..m).max_by(|&r, &s| b[r * m + c].abs().total_cmp(&b[s * m + c].abs())).unwrap();
            if b[piv * m + c].abs() < 1e-11 {
                return false;
            }
            if piv != c {
                for k in 0..m {
                    b.swap(piv * m + k, c * m + k);
                    inv.swap(piv * m + k, c * m + k);
                }
            }
            let d = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for r in 0..m {
                let f = b[r * m + c];
                if r != c && f != 0.0 {
                    for k in 0..m {
                        b[r * m + k] -= f * b[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        // inv = B⁻¹ with rows indexed by B's column (basis position)
        self.binv = inv;
        self.since_refactor = 0;
        self.compute_basic_values();
        true
    }

    fn compute_basic_values(&mut self) {
        let m = self.m;
        let mut r = self.rhs.clone();
        for j in 0..self.n + m {
            if self.pos[j] == NONBASIC && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (i, a) in self.column(j) {
                    r[i] -= a * xj;
                }
            }
        }
        for p in 0..m {
            let row = &self.binv[p * m..(p + 1) * m];
            self.x[self.basic[p]] = row.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for p in 0..m {
            let c = self.cost[self.basic[p]];
            if c != 0.0 {
                for (yi, b) in y.iter_mut().zip(&self.binv[p * m..(p + 1) * m]) {
                    *yi += c * b;
                }
            }
        }
        y
    }

    fn reduced(&self, j: usize, y: &[f64]) -> f64 {
        self.cost[j] - self.column(j).map(|(i, a)| a * y[i]).sum::<f64>()
    }

    /// Reduced costs of all variables (zero for basic ones).
    pub fn reduced_costs(&self) -> Vec<f64> {
        let y = self.duals();
        (0..self.n + self.m).map(|j| if self.pos[j] == NONBASIC { self.reduced(j, &y) } else { 0.0 }).collect()
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for (i, a) in self.column(j) {
            for (p, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[p * m + i] * a;
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let d = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= d;
        }
        let (head, tail) = self.binv.split_at_mut(r * m);
        let (pivot_row, tail) = tail.split_at_mut(m);
        for (p, row) in head.chunks_exact_mut(m).chain(tail.chunks_exact_mut(m)).enumerate() {
            let p = if p < r { p } else { p + 1 };
            let f = alpha[p];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(pivot_row.iter()) {
                    *a -= f * b;
                }
            }
        }
        let leaving = self.basic[r];
        self.pos[leaving] = NONBASIC;
        self.basic[r] = q;
        self.pos[q] = r;
        self.pivots += 1;
        self.since_refactor += 1;
        if self.since_refactor >= m.max(50) && !self.refactor() {
            self.slack_basis();
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.upper[j] - self.lower[j] <= 0.0
    }

    fn infeasibility(&self, j: usize) -> f64 {
        (self.lower[j] - self.x[j]).max(self.x[j] - self.upper[j]).max(0.0)
    }

    fn primal_feasible(&self) -> bool {
        self.basic.iter().all(|&j| self.infeasibility(j) <= FEAS_TOL)
    }

    /// Moves boxed nonbasic variables to the bound their reduced cost favours;
    /// false if some unboxed variable has the wrong sign.
    fn repair_dual(&mut self) -> bool {
        let y = self.duals();
        let mut ok = true;
        for j in 0..self.n + self.m {
            if self.pos[j] != NONBASIC || self.is_fixed(j) {
                continue;
            }
            let d = self.reduced(j, &y);
            if d > OPT_TOL && !self.at_upper[j] {
                if self.upper[j].is_finite() {
                    self.at_upper[j] = true;
                } else {
                    ok = false;
                }
            } else if d < -OPT_TOL && self.at_upper[j] {
                self.at_upper[j] = false;
            }
        }
        self.place_nonbasic();
        self.compute_basic_values();
        ok
    }

    fn iteration_limit(&self) -> usize {
        100 * (self.n + self.m) + 10_000
    }

    /// Optimizes from the current basis.
    pub fn solve(&mut self) -> Result<LpSolution> {
        let start = self.pivots;
        self.place_nonbasic();
        self.compute_basic_values();
        if !self.primal_feasible() {
            if !self.repair_dual() {
                self.slack_basis();
                if !self.repair_dual() {
                    return Err(Error::Invalid("no dual feasible starting basis".into()));
                }
            }
            self.dual_simplex()?;
        }
        self.primal_simplex()?;
        let x = self.x[..self.n].to_vec();
        let objective = x.iter().zip(&self.cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, basis: self.basis(), pivots: self.pivots - start })
    }

    fn primal_simplex(&mut self) -> Result<()> {
        let bland_after = 10 * (self.n + self.m);
        let mut degenerate = 0;
        for _ in 0..self.iteration_limit() {
            let bland = degenerate > bland_after;
            let y = self.duals();
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                if self.pos[j] != NONBASIC || self.is_fixed(j) {
                    continue;
                }
                let d = self.reduced(j, &y);
                let improving = (d > OPT_TOL && !self.at_upper[j]) || (d < -OPT_TOL && self.at_upper[j]);
                if improving && (entering.is_none() || (!bland && d.abs() > entering.unwrap().1.abs())) {
                    entering = Some((j, d));
                    if bland {
                        break;
                    }
                }
            }
            let Some((q, d)) = entering else { return Ok(()) };
            let dir = if d > 0.0 { 1.0 } else { -1.0 };
            let alpha = self.ftran(q);
            let mut best: Option<(usize, f64, f64)> = None;
            for (p, &a) in alpha.iter().enumerate() {
                let a = a * dir;
                let j = self.basic[p];
                let limit = if a > PIVOT_TOL {
                    (self.x[j] - self.lower[j]) / a
                } else if a < -PIVOT_TOL && self.upper[j].is_finite() {
                    (self.upper[j] - self.x[j]) / -a
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match best {
                    None => true,
                    Some((r, bl, ba)) => limit < bl - 1e-12 || (limit <= bl + 1e-12 && if bland { j < self.basic[r] } else { a.abs() > ba.abs() }),
                };
                if better {
                    best = Some((p, limit, a));
                }
            }
            let range = self.upper[q] - self.lower[q];
            let leave = best.filter(|&(_, limit, _)| limit <= range).map(|(p, _, a)| (p, a));
            let step = match (leave, best) {
                (Some(_), Some((_, limit, _))) => limit,
                _ if range.is_finite() => range,
                _ => return Err(Error::Unbounded),
            };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.x[q] += dir * step;
            for (p, &a) in alpha.iter().enumerate() {
                let j = self.basic[p];
                self.x[j] -= a * dir * step;
            }
            match leave {
                None => {
                    self.at_upper[q] = !self.at_upper[q];
                    self.x[q] = if self.at_upper[q] { self.upper[q] } else { self.lower[q] };
                }
                Some((r, a)) => {
                    let j = self.basic[r];
                    self.at_upper[j] = a < 0.0;
                    self.x[j] = if a < 0.0 { self.upper[j] } else { self.lower[j] };
                    self.pivot(r, q, &alpha);
                }
            }
        }
        Err(Error::IterationLimit(self.iteration_limit()))
    }

    fn dual_simplex(&mut self) -> Result<()> {
        let m = self.m;
        let bland_after = 10 * (self.n + self.m);
        let mut degenerate = 0;
        for _ in 0..self.iteration_limit() {
            let bland = degenerate > bland_after;
            let mut leave: Option<(usize, f64)> = None;
            for p in 0..m {
                let v = self.infeasibility(self.basic[p]);
                if v > FEAS_TOL
                    && match leave {
                        None => true,
                        Some((r, best)) => {
                            if bland {
                                self.basic[p] < self.basic[r]
                            } else {
                                v > best
                            }
                        }
                    }
                {
                    leave = Some((p, v));
                }
            }
            let Some((r, _)) = leave else { return Ok(()) };
            let jr = self.basic[r];
            let to_lower = self.x[jr] < self.lower[jr];
            let rho = self.binv[r * m..(r + 1) * m].to_vec();
            let y = self.duals();
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.n + m {
                if self.pos[j] != NONBASIC || self.is_fixed(j) {
                    continue;
                }
                let a: f64 = self.column(j).map(|(i, v)| v * rho[i]).sum();
                let eligible = if to_lower {
                    (!self.at_upper[j] && a < -PIVOT_TOL) || (self.at_upper[j] && a > PIVOT_TOL)
                } else {
                    (!self.at_upper[j] && a > PIVOT_TOL) || (self.at_upper[j] && a < -PIVOT_TOL)
                };
                if !eligible {
                    continue;
                }
                let ratio = self.reduced(j, &y).abs() / a.abs();
                let better = match entering {
                    None => true,
                    Some((_, best, ba)) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && !bland && a.abs() > ba.abs()),
                };
                if better {
                    entering = Some((j, ratio, a));
                }
            }
            let Some((q, ratio, _)) = entering else { return Err(Error::Infeasible) };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let alpha = self.ftran(q);
            let bound = if to_lower { self.lower[jr] } else { self.upper[jr] };
            let delta = (self.x[jr] - bound) / alpha[r];
            self.x[q] += delta;
            for (p, &a) in alpha.iter().enumerate() {
                let j = self.basic[p];
                self.x[j] -= delta * a;
            }
            self.x[jr] = bound;
            self.at_upper[jr] = !to_lower;
            self.pivot(r, q, &alpha);
        }
        Err(Error::IterationLimit(self.iteration_limit()))
    }
}

enum ColumnIter<'a> {
    Structural(std::slice::Iter<'a, (usize, f64)>),
    Logical(Option<usize>),
}

impl Iterator for ColumnIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColumnIter::Structural(it) => it.next().copied(),
            ColumnIter::Logical(i) => i.take().map(|i| (i, 1.0)),
        }
    }
}

//! The lifted TRW objective and its conditional-gradient (Frank-Wolfe) solver.

use std::collections::HashMap;

use crate::error::Result;
use crate::lpsolve::{Row, Simplex};
use crate::model::PairwiseGroundModel;
use crate::polytope::{build_outer, separate_cycles, ConstraintSystem, OuterBound};
use crate::symmetry::LiftedGraph;

/// Floor applied to probabilities inside logarithms of the gradient.
pub const LOG_CLAMP: f64 = 1e-12;

/// One value `ρ̄_e` per edge orbit.
pub type EdgeAppearance = Vec<f64>;

fn xlogx(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// `-Σ t ln t` over `values`.
pub fn entropy(values: impl IntoIterator<Item = f64>) -> f64 {
    -values.into_iter().map(xlogx).sum::<f64>()
}

/// Entropy of node orbit `v` at `tau`.
pub fn node_entropy(lg: &LiftedGraph, v: usize, tau: &[f64]) -> f64 {
    let v = &lg.nodes[v];
    entropy(tau[v.offset..v.offset + v.card].iter().copied())
}

/// Entropy of one ground edge of orbit `e` (merged entries count twice).
pub fn edge_entropy(lg: &LiftedGraph, e: usize, tau: &[f64]) -> f64 {
    entropy(lg.edges[e].slots.iter().map(|&s| tau[s]))
}

/// Coefficients of the entropies in `B̄*`: `-(|v| - Σ_e |e| d(v,e) ρ̄_e)` per
/// node orbit and `-|e| ρ̄_e` per edge orbit.
pub fn entropy_coefficients(lg: &LiftedGraph, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut node: Vec<f64> = lg.nodes.iter().map(|v| v.size as f64).collect();
    for (e, &r) in lg.edges.iter().zip(rho) {
        for side in 0..2 {
            node[e.ends[side]] -= e.size as f64 * r;
        }
    }
    let edge = lg.edges.iter().zip(rho).map(|(e, &r)| -(e.size as f64) * r).collect();
    (node.into_iter().map(|c| -c).collect(), edge)
}

/// `B̄*(τ̄, ρ̄)`, the lifted TRW entropy bound.
pub fn lifted_entropy_bound(lg: &LiftedGraph, tau: &[f64], rho: &[f64]) -> f64 {
    let (node, edge) = entropy_coefficients(lg, rho);
    let nodes: f64 = (0..lg.nodes.len()).map(|v| node[v] * node_entropy(lg, v, tau)).sum();
    let edges: f64 = (0..lg.edges.len()).map(|e| edge[e] * edge_entropy(lg, e, tau)).sum();
    nodes + edges
}

/// `⟨τ̄, θ̄⟩`.
pub fn lifted_linear_term(lg: &LiftedGraph, tau: &[f64]) -> f64 {
    lg.theta.iter().zip(tau).map(|(a, b)| a * b).sum()
}

/// A smooth concave function over a polytope.
pub trait ConcaveObjective {
    fn value(&self, tau: &[f64]) -> f64;
    fn gradient(&self, tau: &[f64], out: &mut [f64]);
    /// `value(tau + lambda * dir) - value(tau)`.
    fn delta(&self, tau: &[f64], dir: &[f64], lambda: f64) -> f64 {
        let moved: Vec<f64> = tau.iter().zip(dir).map(|(t, d)| t + lambda * d).collect();
        self.value(&moved) - self.value(tau)
    }
    /// Derivative of `lambda -> value(tau + lambda * dir)`.
    fn slope(&self, tau: &[f64], dir: &[f64], lambda: f64) -> f64 {
        let h = 1e-7 * lambda.max(1e-7);
        (self.delta(tau, dir, lambda + h) - self.delta(tau, dir, lambda - h)) / (2.0 * h)
    }
}

/// `(x + d) ln(x + d) - x ln x` without cancellation for small `d`.
fn xlogx_delta(x: f64, d: f64) -> f64 {
    let y = (x + d).max(0.0);
    if d == 0.0 {
        0.0
    } else if d.abs() > 0.5 * x {
        xlogx(y) - xlogx(x)
    } else {
        d * y.ln() + x * (d / x).ln_1p()
    }
}

/// `⟨θ, τ⟩ + Σ_j a_j τ_j ln τ_j`, the common form of the lifted and ground
/// TRW objectives once every entropy is expanded per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyObjective {
    pub theta: Vec<f64>,
    /// Weight `a_j` of `τ_j ln τ_j`.
    pub weight: Vec<f64>,
    /// Structural zeros (gradient fixed to 0).
    pub zero: Vec<bool>,
}

impl ConcaveObjective for EntropyObjective {
    fn value(&self, tau: &[f64]) -> f64 {
        (0..self.theta.len()).map(|j| self.theta[j] * tau[j] + self.weight[j] * xlogx(tau[j])).sum()
    }

    fn gradient(&self, tau: &[f64], out: &mut [f64]) {
        for j in 0..self.theta.len() {
            out[j] = if self.zero[j] { 0.0 } else { self.theta[j] + self.weight[j] * (tau[j].max(LOG_CLAMP).ln() + 1.0) };
        }
    }

    fn delta(&self, tau: &[f64], dir: &[f64], lambda: f64) -> f64 {
        (0..self.theta.len())
            .map(|j| {
                let d = lambda * dir[j];
                self.theta[j] * d + self.weight[j] * xlogx_delta(tau[j], d)
            })
            .sum()
    }

    fn slope(&self, tau: &[f64], dir: &[f64], lambda: f64) -> f64 {
        (0..self.theta.len())
            .filter(|&j| dir[j] != 0.0 && !self.zero[j])
            .map(|j| {
                let y = tau[j] + lambda * dir[j];
                let log = if y > 0.0 { y.ln() } else { f64::NEG_INFINITY };
                dir[j] * (self.theta[j] + self.weight[j] * (log + 1.0))
            })
            .sum()
    }
}

/// `F(τ̄) = ⟨τ̄, θ̄⟩ - B̄*(τ̄, ρ̄)` in per-variable form.
pub fn lifted_objective(lg: &LiftedGraph, rho: &[f64]) -> EntropyObjective {
    let (node, edge) = entropy_coefficients(lg, rho);
    let mut weight = vec![0.0; lg.num_vars()];
    for (v, orbit) in lg.nodes.iter().enumerate() {
        weight[orbit.offset..orbit.offset + orbit.card].fill(node[v]);
    }
    for (e, orbit) in lg.edges.iter().enumerate() {
        for &j in &orbit.slots {
            weight[j] += edge[e];
        }
    }
    EntropyObjective { theta: lg.theta.clone(), weight, zero: lg.zero.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwOptions {
    /// Stop once the duality gap is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Cutting-plane rounds per direction solve.
    pub cut_rounds: usize,
    pub line_tol: f64,
    /// Also consider steps away from the worst vertex of the current
    /// decomposition (faster on faces of the polytope).
    pub away_steps: bool,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iters: 1000, cut_rounds: 50, line_tol: 1e-8, away_steps: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search could not improve the objective although the gap is above tolerance.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrwResult {
    pub tau: Vec<f64>,
    /// Smallest `F(τ_k) + gap_k` over the iterates, a certified upper bound.
    pub bound: f64,
    pub objective: f64,
    /// Duality gap per iteration, the last one at the returned `tau`.
    pub gaps: Vec<f64>,
    /// Objective per iteration (non-decreasing).
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Cutting planes added over the run.
    pub cuts: usize,
    /// Distribution of each node orbit (or ground node for ground runs).
    pub node_marginals: Vec<Vec<f64>>,
}

impl TrwResult {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(0.0)
    }
}

/// Separation routine: given the LP point, append violated rows to the system
/// and return them.
pub type Separator<'a> = Box<dyn FnMut(&[f64], &mut ConstraintSystem) -> Vec<Row> + 'a>;

/// Linear maximization over an outer bound, with a warm-started simplex and
/// an optional cutting-plane loop.
pub struct DirectionOracle<'a> {
    simplex: Simplex,
    cs: ConstraintSystem,
    dim: usize,
    separator: Option<Separator<'a>>,
    cut_rounds: usize,
    cuts: usize,
}

impl<'a> DirectionOracle<'a> {
    /// `dim` leading variables of `cs` are the optimization variables.
    pub fn new(cs: ConstraintSystem, dim: usize, separator: Option<Separator<'a>>, cut_rounds: usize) -> Result<Self> {
        let mut simplex = Simplex::new(cs.lower.clone(), cs.upper.clone())?;
        simplex.add_rows(&cs.rows);
        Ok(Self { simplex, cs, dim, separator, cut_rounds, cuts: 0 })
    }

    pub fn constraints(&self) -> &ConstraintSystem {
        &self.cs
    }

    pub fn cuts(&self) -> usize {
        self.cuts
    }

    /// A maximizer of `⟨s, c⟩` (first `dim` coordinates).
    pub fn direction(&mut self, c: &[f64]) -> Result<Vec<f64>> {
        let mut objective = c.to_vec();
        objective.resize(self.cs.num_vars(), 0.0);
        self.simplex.set_objective(&objective);
        let mut sol = self.simplex.solve()?;
        if let Some(separate) = self.separator.as_mut() {
            for _ in 0..self.cut_rounds {
                let rows = separate(&sol.x[..self.dim], &mut self.cs);
                if rows.is_empty() {
                    break;
                }
                self.cuts += rows.len();
                self.simplex.add_rows(&rows);
                sol = self.simplex.solve()?;
            }
        }
        Ok(sol.x[..self.dim].iter().zip(&self.cs.lower).zip(&self.cs.upper).map(|((&x, &l), &u)| x.clamp(l, u)).collect())
    }
}

/// Golden-section search for the maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Convex decomposition of the iterate into feasible points, kept for away steps.
struct ActiveSet {
    atoms: Vec<(Vec<f64>, f64)>,
    index: HashMap<Vec<u64>, usize>,
}

impl ActiveSet {
    fn new(tau0: &[f64]) -> Self {
        let mut set = Self { atoms: Vec::new(), index: HashMap::new() };
        set.atoms.push((tau0.to_vec(), 1.0));
        set.index.insert(Self::key(tau0), 0);
        set
    }

    fn key(x: &[f64]) -> Vec<u64> {
        x.iter().map(|v| v.to_bits()).collect()
    }

    fn rebuild_index(&mut self) {
        self.index = self.atoms.iter().enumerate().map(|(i, (x, _))| (Self::key(x), i)).collect();
    }

    /// `τ ← (1-γ)τ + γs`.
    fn toward(&mut self, s: &[f64], gamma: f64) {
        if gamma >= 1.0 {
            self.atoms = vec![(s.to_vec(), 1.0)];
            self.rebuild_index();
            return;
        }
        for atom in &mut self.atoms {
            atom.1 *= 1.0 - gamma;
        }
        match self.index.get(&Self::key(s)) {
            Some(&i) => self.atoms[i].1 += gamma,
            None => {
                self.index.insert(Self::key(s), self.atoms.len());
                self.atoms.push((s.to_vec(), gamma));
            }
        }
    }

    /// `τ ← (1+γ)τ - γa` for atom `i`; `drop` removes it (γ at its maximum).
    fn away(&mut self, i: usize, gamma: f64, drop: bool) {
        for atom in &mut self.atoms {
            atom.1 *= 1.0 + gamma;
        }
        self.atoms[i].1 -= gamma;
        if drop || self.atoms[i].1 <= 0.0 {
            self.atoms.swap_remove(i);
            let total: f64 = self.atoms.iter().map(|a| a.1).sum();
            for atom in &mut self.atoms {
                atom.1 /= total;
            }
            self.rebuild_index();
        }
    }
}

/// Step size in `[0, lmax]` along `dir` and the resulting gain. Golden
/// section on objective differences; when those drown in rounding, bisection
/// on the exact slope (concavity makes any point with nonnegative slope an
/// improvement).
fn line_search(obj: &dyn ConcaveObjective, tau: &[f64], dir: &[f64], lmax: f64, tol: f64) -> Option<(f64, f64)> {
    let step = |l: f64| obj.delta(tau, dir, l);
    let lambda = golden_section(step, 0.0, lmax, tol * lmax);
    let best = [lambda, lmax].into_iter().map(|l| (l, step(l))).max_by(|a, b| a.1.total_cmp(&b.1))?;
    if best.1 > STALL_GAIN * obj.delta(tau, dir, 0.0).abs().max(1.0) {
        return Some(best);
    }
    let slope = |l: f64| obj.slope(tau, dir, l);
    if slope(0.0) <= 0.0 {
        return None;
    }
    if slope(lmax) >= 0.0 {
        return Some((lmax, step(lmax).max(0.0)));
    }
    let (mut lo, mut hi) = (0.0, lmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * lo {
            break;
        }
    }
    (lo > 0.0).then(|| (lo, step(lo).max(0.0)))
}

/// Relative gain below which a step counts as no progress.
const STALL_GAIN: f64 = 1e-15;
/// Consecutive steps without progress before giving up.
const STALL_ITERS: usize = 50;

/// Conditional gradient ascent from `tau0` (which must be feasible).
pub fn conditional_gradient(obj: &dyn ConcaveObjective, tau0: Vec<f64>, oracle: &mut DirectionOracle<'_>, opts: &FwOptions) -> Result<TrwResult> {
    let dim = tau0.len();
    let mut active = opts.away_steps.then(|| ActiveSet::new(&tau0));
    let mut tau = tau0;
    let mut f = obj.value(&tau);
    let mut grad = vec![0.0; dim];
    let mut gaps = Vec::new();
    let mut objectives = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut idle = 0;
    let mut best_gap = f64::INFINITY;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    loop {
        obj.gradient(&tau, &mut grad);
        let s = oracle.direction(&grad)?;
        let gap = dot(&s, &grad) - dot(&tau, &grad);
        gaps.push(gap.max(0.0));
        objectives.push(f);
        if gap <= opts.tol {
            termination = Termination::Converged;
            break;
        }
        if iterations == opts.max_iters || termination == Termination::Stalled {
            break;
        }
        iterations += 1;

        // candidate directions: toward s, and away from the worst atom
        let mut moves: Vec<(Vec<f64>, f64, Option<usize>)> = Vec::with_capacity(2);
        let upper = &oracle.constraints().upper;
        // stay off the boundary when the vertex has zeros the iterate lacks
        let touches_boundary = s.iter().zip(&tau).zip(upper).any(|((&sj, &tj), &u)| u > 0.0 && sj <= 0.0 && tj > 0.0);
        let fw_dir: Vec<f64> = s.iter().zip(&tau).map(|(a, b)| a - b).collect();
        moves.push((fw_dir, if touches_boundary { 1.0 - 1e-6 } else { 1.0 }, None));
        if let Some(set) = &active {
            let worst = (0..set.atoms.len()).min_by(|&a, &b| dot(&set.atoms[a].0, &grad).total_cmp(&dot(&set.atoms[b].0, &grad)));
            if let Some(i) = worst {
                let (atom, alpha) = &set.atoms[i];
                let away_gap = dot(&tau, &grad) - dot(atom, &grad);
                if *alpha < 1.0 && away_gap > gap {
                    let dir = tau.iter().zip(atom).map(|(t, a)| t - a).collect();
                    moves.insert(0, (dir, alpha / (1.0 - alpha), Some(i)));
                }
            }
        }

        let mut progress = false;
        for (dir, lmax, atom) in moves {
            let Some((l, gain)) = line_search(obj, &tau, &dir, lmax, opts.line_tol) else {
                continue;
            };
            tau = tau.iter().zip(&dir).map(|(t, d)| (t + l * d).max(0.0)).collect();
            f += gain;
            if let Some(set) = active.as_mut() {
                match atom {
                    None => set.toward(&s, l),
                    Some(i) => set.away(i, l, l == lmax),
                }
            }
            progress = gain > STALL_GAIN * f.abs().max(1.0);
            break;
        }
        if progress || gap < best_gap {
            idle = 0;
        } else {
            idle += 1;
        }
        best_gap = best_gap.min(gap);
        if idle >= STALL_ITERS {
            termination = Termination::Stalled;
        }
    }
    // every iterate certifies F_k + gap_k; report the tightest
    let bound = objectives.iter().zip(&gaps).map(|(f, g)| f + g).fold(f64::INFINITY, f64::min);
    Ok(TrwResult { tau, bound, objective: f, gaps, objectives, iterations, termination, cuts: oracle.cuts(), node_marginals: Vec::new() })
}

/// Lifted TRW bound `B(θ, ρ̄)` over `outer`.
pub fn frank_wolfe(lg: &LiftedGraph, g: &PairwiseGroundModel, outer: OuterBound, rho: &[f64], opts: &FwOptions) -> Result<TrwResult> {
    let cs = build_outer(lg, g, outer);
    let separator: Option<Separator<'_>> =
        if outer.cycles() { Some(Box::new(move |tau: &[f64], pool: &mut ConstraintSystem| separate_cycles(lg, g, tau, pool))) } else { None };
    let mut oracle = DirectionOracle::new(cs, lg.num_vars(), separator, opts.cut_rounds)?;
    let obj = lifted_objective(lg, rho);
    let mut res = conditional_gradient(&obj, lg.uniform(), &mut oracle, opts)?;
    res.node_marginals = lg.nodes.iter().map(|v| res.tau[v.offset..v.offset + v.card].to_vec()).collect();
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ground, parse_model};
    use crate::symmetry::compute_orbits;

    #[test]
    fn ring_coefficients() {
        let lg = compute_orbits(&fixtures::ring(0.0)).unwrap();
        let (node, edge) = entropy_coefficients(&lg, &[1.0, 0.4, 0.4]);
        assert_eq!(node, vec![8.0, 0.0]);
        assert_eq!(edge, vec![-5.0, -2.0, -2.0]);
    }

    #[test]
    fn deterministic_tau_has_zero_entropy() {
        let lg = compute_orbits(&fixtures::ring(0.0)).unwrap();
        let mut tau = vec![0.0; lg.num_vars()];
        for v in &lg.nodes {
            tau[v.offset] = 1.0;
        }
        for e in &lg.edges {
            tau[e.var(0, 0)] = 1.0;
        }
        assert_eq!(lifted_entropy_bound(&lg, &tau, &[1.0, 0.4, 0.4]), 0.0);
    }

    #[test]
    fn golden_section_cases() {
        let x = golden_section(|l| -(l - 0.3) * (l - 0.3), 0.0, 1.0, 1e-8);
        assert!((x - 0.3).abs() <= 1e-8);
        let x = golden_section(|l| l, 0.0, 1.0, 1e-8);
        assert!((x - 1.0).abs() <= 1e-8);
        let mut evals = 0;
        golden_section(
            |l| {
                evals += 1;
                -(l - 0.7f64).abs()
            },
            0.0,
            1.0,
            1e-8,
        );
        let budget = (1e-8f64.ln() / 0.618f64.ln()).ceil() as usize + 2;
        assert!(evals <= budget, "{evals} > {budget}");
    }

    #[test]
    fn single_node_bound_is_exact() {
        for w in [-2.0, 0.0, 0.7, 3.0] {
            let g = ground(&parse_model("W V(x)").unwrap(), 1, w).unwrap();
            let lg = compute_orbits(&g).unwrap();
            let res = frank_wolfe(&lg, &g, OuterBound::Local, &[], &FwOptions::default()).unwrap();
            let exact = (1.0 + f64::exp(w)).ln();
            assert!((res.bound - exact).abs() < 1e-6, "w={w}: {} vs {exact}", res.bound);
            assert!(res.bound >= exact - 1e-12);
            assert!(res.iterations <= 2);
            assert_eq!(res.termination, Termination::Converged);
        }
    }

    #[test]
    fn objective_trace_monotone() {
        let g = ground(&parse_model(fixtures::CLIQUE_CYCLE).unwrap(), 3, 1.5).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let rho = crate::spanning::init_rho_uniform(&lg, &g).unwrap();
        for outer in OuterBound::ALL {
            let res = frank_wolfe(&lg, &g, outer, &rho, &FwOptions::default()).unwrap();
            assert!(res.objectives.windows(2).all(|w| w[1] >= w[0]));
            assert!(res.gaps.iter().all(|&g| g >= 0.0));
            assert!(res.termination == Termination::Converged || res.termination == Termination::MaxIterations);
        }
    }
}

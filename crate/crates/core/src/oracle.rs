//! Reference computations on the ground model: exact inference by
//! enumeration or counting, ground TRW, spanning trees and exchangeable
//! moment generators. Used to cross-check the lifted machinery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lpsolve::{Relation, Row};
use crate::model::{score_state, PairwiseGroundModel};
use crate::polytope::{canonical_row, find_violated_cycles, ConstraintSystem, OuterBound, RowTag, CUT_TOL};
use crate::symmetry::LiftedGraph;
use crate::trw::{conditional_gradient, ConcaveObjective, DirectionOracle, EntropyObjective, FwOptions, Separator, TrwResult};

/// Default cap on enumerated (non-auxiliary) states.
pub const BRUTE_FORCE_LIMIT: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub log_z: f64,
    /// Distribution of each ground node.
    pub node_marginals: Vec<Vec<f64>>,
    /// Joint distribution of each ground edge, `u`-major (empty when not computed).
    pub edge_moments: Vec<Vec<f64>>,
}

impl ExactResult {
    /// Moments in the ground overcomplete layout.
    pub fn overcomplete(&self) -> Vec<f64> {
        self.node_marginals.iter().chain(&self.edge_moments).flatten().copied().collect()
    }

    /// Orbit average of the moments.
    pub fn lifted(&self, lg: &LiftedGraph, g: &PairwiseGroundModel) -> Vec<f64> {
        lg.project(g, &self.overcomplete())
    }
}

/// Exact inference by enumerating every assignment of the free nodes.
pub fn brute_force(g: &PairwiseGroundModel) -> Result<ExactResult> {
    brute_force_with_limit(g, BRUTE_FORCE_LIMIT)
}

pub fn brute_force_with_limit(g: &PairwiseGroundModel, limit: u128) -> Result<ExactResult> {
    let free = g.free_nodes();
    let mut states: u128 = 1;
    for &i in &free {
        states = states.saturating_mul(g.nodes[i].card as u128);
    }
    if states > limit {
        return Err(Error::TooLarge { states, limit });
    }
    let (node_off, edge_off, total) = g.offsets();
    let mut x = vec![0; g.num_nodes()];
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut acc = vec![0.0; total];
    'states: loop {
        g.complete_aux(&mut x);
        let s = score_state(g, &x);
        if s > f64::NEG_INFINITY {
            if s > max {
                let scale = (max - s).exp();
                sum *= scale;
                acc.iter_mut().for_each(|a| *a *= scale);
                max = s;
            }
            let p = (s - max).exp();
            sum += p;
            for (i, &xi) in x.iter().enumerate() {
                acc[node_off[i] + xi] += p;
            }
            for (k, e) in g.edges.iter().enumerate() {
                acc[edge_off[k] + x[e.u] * g.nodes[e.v].card + x[e.v]] += p;
            }
        }
        for &i in &free {
            x[i] += 1;
            if x[i] < g.nodes[i].card {
                continue 'states;
            }
            x[i] = 0;
        }
        break;
    }
    if sum == 0.0 {
        return Err(Error::Infeasible);
    }
    let moments: Vec<f64> = acc.iter().map(|a| a / sum).collect();
    let node_marginals = g.nodes.iter().enumerate().map(|(i, n)| moments[node_off[i]..node_off[i] + n.card].to_vec()).collect();
    let edge_moments = g.edges.iter().enumerate().map(|(k, e)| moments[edge_off[k]..edge_off[k] + g.nodes[e.u].card * g.nodes[e.v].card].to_vec()).collect();
    Ok(ExactResult { log_z: max + sum.ln(), node_marginals, edge_moments })
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact log Z and marginals of the complete-graph Ising model with field `w`
/// and coupling `w_e` on every ordered agreeing pair, by summing over counts.
/// Edge moments are left empty.
pub fn counting_elimination_complete(n: usize, w: f64, w_e: f64) -> ExactResult {
    let terms: Vec<f64> = (0..=n)
        .map(|k| {
            let agree = (k * k.saturating_sub(1) + (n - k) * (n - k).saturating_sub(1)) as f64;
            ln_binomial(n, k) + w * k as f64 + w_e * agree
        })
        .collect();
    let log_z = log_sum_exp(&terms);
    let p1: f64 = terms.iter().enumerate().map(|(k, t)| k as f64 / n as f64 * (t - log_z).exp()).sum();
    ExactResult { log_z, node_marginals: vec![vec![1.0 - p1, p1]; n], edge_moments: Vec::new() }
}

/// Pairwise moments of an exchangeable distribution over `n` binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeableMoments {
    pub n: usize,
    /// Pair moments `τ(0,0), τ(0,1), τ(1,0), τ(1,1)` averaged over ordered pairs.
    pub pair: [f64; 4],
    /// `Pr(x_i = 1)`.
    pub marginal: f64,
    /// `c_k = Pr(Σx = k)`.
    pub counts: Vec<f64>,
}

/// Moments of the symmetrization of `p` (a distribution over `{0,1}^n`,
/// state bit `i` being `x_i`), computed by enumerating states and pairs.
pub fn exchangeable_moments_of(p: &[f64], n: usize) -> ExchangeableMoments {
    assert_eq!(p.len(), 1 << n);
    let mut pair = [0.0; 4];
    let mut marginal = 0.0;
    let mut counts = vec![0.0; n + 1];
    let pairs = (n * (n - 1)) as f64;
    for (x, &px) in p.iter().enumerate() {
        counts[x.count_ones() as usize] += px;
        for i in 0..n {
            let xi = (x >> i) & 1;
            marginal += px * xi as f64 / n as f64;
            for j in 0..n {
                if i != j {
                    pair[2 * xi + ((x >> j) & 1)] += px / pairs;
                }
            }
        }
    }
    ExchangeableMoments { n, pair, marginal, counts }
}

/// Moments of a random positive distribution over `{0,1}^n`, symmetrized.
pub fn random_exchangeable_moments(n: usize, seed: u64) -> ExchangeableMoments {
    assert!((2..=12).contains(&n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // heavy-tailed weights so the count distribution is far from binomial
    let mut p: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(-4.0..4.0f64).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    exchangeable_moments_of(&p, n)
}

/// Ground TRW objective `⟨τ, θ⟩ + Σ_i H_i - Σ_e ρ_e I_e` on the overcomplete
/// vector, where `I_e = H_u + H_v - H_e`.
pub fn ground_objective(g: &PairwiseGroundModel, rho: &[f64]) -> EntropyObjective {
    let (node_off, edge_off, total) = g.offsets();
    let mut theta = Vec::with_capacity(total);
    let mut zero = vec![false; total];
    for n in &g.nodes {
        theta.extend_from_slice(&n.theta);
    }
    for (k, e) in g.edges.iter().enumerate() {
        theta.extend_from_slice(&e.theta);
        for (s, &z) in e.zeros.iter().enumerate() {
            zero[edge_off[k] + s] = z;
        }
    }
    let mut node_coef = vec![1.0; g.num_nodes()];
    for (e, &r) in g.edges.iter().zip(rho) {
        node_coef[e.u] -= r;
        node_coef[e.v] -= r;
    }
    let mut weight = vec![0.0; total];
    for (i, n) in g.nodes.iter().enumerate() {
        weight[node_off[i]..node_off[i] + n.card].fill(-node_coef[i]);
    }
    for (k, e) in g.edges.iter().enumerate() {
        let size = g.nodes[e.u].card * g.nodes[e.v].card;
        weight[edge_off[k]..edge_off[k] + size].fill(-rho[k]);
    }
    EntropyObjective { theta, weight, zero }
}

/// Ground `B*(τ, ρ) = ⟨τ, θ⟩ - F(τ)`.
pub fn ground_entropy_bound(g: &PairwiseGroundModel, tau: &[f64], rho: &[f64]) -> f64 {
    let obj = ground_objective(g, rho);
    obj.theta.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>() - obj.value(tau)
}

/// Ground local polytope in the overcomplete layout.
pub fn ground_local(g: &PairwiseGroundModel) -> ConstraintSystem {
    let (node_off, edge_off, total) = g.offsets();
    let mut cs = ConstraintSystem::new(total);
    for (i, n) in g.nodes.iter().enumerate() {
        let coeffs = (0..n.card).map(|t| (node_off[i] + t, 1.0)).collect();
        cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 1.0 }, RowTag::Local);
    }
    for (k, e) in g.edges.iter().enumerate() {
        let (cu, cv) = (g.nodes[e.u].card, g.nodes[e.v].card);
        for (s, &z) in e.zeros.iter().enumerate() {
            if z {
                cs.upper[edge_off[k] + s] = 0.0;
            }
        }
        for a in 0..cu {
            let mut coeffs = vec![(node_off[e.u] + a, -1.0)];
            coeffs.extend((0..cv).map(|b| (edge_off[k] + a * cv + b, 1.0)));
            cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 0.0 }, RowTag::Local);
        }
        for b in 0..cv {
            let mut coeffs = vec![(node_off[e.v] + b, -1.0)];
            coeffs.extend((0..cu).map(|a| (edge_off[k] + a * cv + b, 1.0)));
            cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 0.0 }, RowTag::Local);
        }
    }
    cs
}

/// Ground cycle separation at `tau` (every node is a source).
pub fn separate_ground_cycles(g: &PairwiseGroundModel, tau: &[f64], pool: &mut ConstraintSystem) -> Vec<Row> {
    let (_, edge_off, _) = g.offsets();
    let binary = |k: usize| g.nodes[g.edges[k].u].card == 2 && g.nodes[g.edges[k].v].card == 2;
    let x: Vec<f64> = (0..g.num_edges()).map(|k| if binary(k) { tau[edge_off[k] + 1] + tau[edge_off[k] + 2] } else { 0.0 }).collect();
    let sources: Vec<usize> = (0..g.num_nodes()).collect();
    let mut added = Vec::new();
    for cycle in find_violated_cycles(g, &x, &sources) {
        let mut coeffs = Vec::new();
        let mut odd = 0;
        for &(k, in_f) in &cycle {
            let sign = if in_f { 1.0 } else { -1.0 };
            odd += in_f as usize;
            coeffs.push((edge_off[k] + 1, sign));
            coeffs.push((edge_off[k] + 2, sign));
        }
        let row = canonical_row(Row { coeffs, relation: Relation::Le, rhs: odd as f64 - 1.0 });
        if row.violation(tau) > CUT_TOL && pool.add_row(row.clone(), RowTag::Cycle) {
            added.push(row);
        }
    }
    added
}

/// Uniform point of the ground local polytope (respecting structural zeros).
pub fn ground_uniform(g: &PairwiseGroundModel) -> Vec<f64> {
    let mut tau = Vec::new();
    for n in &g.nodes {
        tau.extend(std::iter::repeat_n(1.0 / n.card as f64, n.card));
    }
    for e in &g.edges {
        let open = e.zeros.iter().filter(|&&z| !z).count() as f64;
        tau.extend(e.zeros.iter().map(|&z| if z { 0.0 } else { 1.0 / open }));
    }
    tau
}

/// TRW bound on the ground model with per-edge appearances `rho`.
/// Only the local and cycle outer bounds exist at ground level.
pub fn ground_trw(g: &PairwiseGroundModel, rho: &[f64], outer: OuterBound, opts: &FwOptions) -> Result<TrwResult> {
    if outer.exchangeable() {
        return Err(Error::Invalid(format!("outer bound {outer} is not available on the ground model")));
    }
    let cs = ground_local(g);
    let dim = cs.num_vars();
    let separator: Option<Separator<'_>> =
        if outer.cycles() { Some(Box::new(move |tau: &[f64], pool: &mut ConstraintSystem| separate_ground_cycles(g, tau, pool))) } else { None };
    let mut oracle = DirectionOracle::new(cs, dim, separator, opts.cut_rounds)?;
    let obj = ground_objective(g, rho);
    let mut res = conditional_gradient(&obj, ground_uniform(g), &mut oracle, opts)?;
    let (node_off, _, _) = g.offsets();
    res.node_marginals = g.nodes.iter().enumerate().map(|(i, n)| res.tau[node_off[i]..node_off[i] + n.card].to_vec()).collect();
    Ok(res)
}

/// Ground edge appearances of a lifted `ρ̄`.
pub fn expand_rho(lg: &LiftedGraph, rho: &[f64]) -> Vec<f64> {
    lg.edge_orbit_of.iter().map(|&o| rho[o]).collect()
}

/// Orbit average of ground edge appearances, one value per edge orbit.
pub fn symmetrize_rho(lg: &LiftedGraph, rho: &[f64]) -> Vec<f64> {
    lg.edges.iter().map(|e| e.members.iter().map(|&(k, _)| rho[k]).sum::<f64>() / e.size as f64).collect()
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut v: usize) -> usize {
        while self.0[v] != v {
            self.0[v] = self.0[self.0[v]];
            v = self.0[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

/// Maximum spanning tree of the ground graph under edge weights `w`:
/// returns the tree edges and their total weight.
pub fn ground_kruskal(g: &PairwiseGroundModel, w: &[f64]) -> Result<(Vec<usize>, f64)> {
    let mut order: Vec<usize> = (0..g.num_edges()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut dsu = Dsu((0..g.num_nodes()).collect());
    let tree: Vec<usize> = order.into_iter().filter(|&k| dsu.union(g.edges[k].u, g.edges[k].v)).collect();
    let components = g.num_nodes() - tree.len();
    if components != 1 {
        return Err(Error::DisconnectedGraph { components });
    }
    let value = tree.iter().map(|&k| w[k]).sum();
    Ok((tree, value))
}

/// Random point of the spanning tree polytope: a random convex combination
/// of `trees` random spanning trees.
pub fn random_tree_mixture(g: &PairwiseGroundModel, trees: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut rho = vec![0.0; g.num_edges()];
    let weights: Vec<f64> = (0..trees).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for lambda in weights {
        let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.gen::<f64>()).collect();
        for k in ground_kruskal(g, &w)?.0 {
            rho[k] += lambda / total;
        }
    }
    Ok(rho)
}

/// Membership in the spanning tree polytope: `Σ ρ = |V| - 1`, `0 <= ρ <= 1`
/// and `Σ_{e ⊆ S} ρ_e <= |S| - 1` for every node subset (enumerated, so at
/// most 20 nodes).
pub fn in_spanning_tree_polytope(g: &PairwiseGroundModel, rho: &[f64], tol: f64) -> Result<bool> {
    let n = g.num_nodes();
    if n > 20 {
        return Err(Error::TooLarge { states: 1u128 << n, limit: 1 << 20 });
    }
    if rho.iter().any(|&r| r < -tol || r > 1.0 + tol) || (rho.iter().sum::<f64>() - (n as f64 - 1.0)).abs() > tol {
        return Ok(false);
    }
    for set in 1usize..(1 << n) {
        let size = set.count_ones() as f64;
        let inside: f64 = g.edges.iter().zip(rho).filter(|(e, _)| set >> e.u & 1 == 1 && set >> e.v & 1 == 1).map(|(_, r)| r).sum();
        if inside > size - 1.0 + tol {
            return Ok(false);
        }
    }
    Ok(true)
}

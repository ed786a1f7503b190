//! Lifted outer bounds of the marginal polytope.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;

use crate::error::{Error, Result};
use crate::lpsolve::{LinearProgram, Relation, Row};
use crate::model::{NodeTerm, PairwiseGroundModel, SymmetrySource};
use crate::symmetry::LiftedGraph;

/// Violation a cut must exceed to be reported.
pub const CUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowTag {
    Local,
    Cycle,
    Exchangeable,
}

/// Choice of relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OuterBound {
    Local,
    Cycle,
    LocalExch,
    CycleExch,
}

impl OuterBound {
    pub const ALL: [OuterBound; 4] = [OuterBound::Local, OuterBound::Cycle, OuterBound::LocalExch, OuterBound::CycleExch];

    pub fn cycles(self) -> bool {
        matches!(self, OuterBound::Cycle | OuterBound::CycleExch)
    }

    pub fn exchangeable(self) -> bool {
        matches!(self, OuterBound::LocalExch | OuterBound::CycleExch)
    }
}

impl fmt::Display for OuterBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OuterBound::Local => "local",
            OuterBound::Cycle => "cycle",
            OuterBound::LocalExch => "local+exch",
            OuterBound::CycleExch => "cycle+exch",
        })
    }
}

impl FromStr for OuterBound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(OuterBound::Local),
            "cycle" => Ok(OuterBound::Cycle),
            "local+exch" => Ok(OuterBound::LocalExch),
            "cycle+exch" => Ok(OuterBound::CycleExch),
            _ => Err(Error::Invalid(format!("unknown outer bound `{s}`"))),
        }
    }
}

/// Linear rows over lifted variables (plus appended cluster variables).
#[derive(Debug, Clone, Default)]
pub struct ConstraintSystem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    pub tags: Vec<RowTag>,
    seen: HashSet<Vec<u64>>,
}

impl ConstraintSystem {
    /// `num_vars` variables in `[0, 1]`, no rows.
    pub fn new(num_vars: usize) -> Self {
        Self { lower: vec![0.0; num_vars], upper: vec![1.0; num_vars], ..Self::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    /// Adds `row` unless an identical (canonicalized) row exists; returns
    /// whether it was added.
    pub fn add_row(&mut self, row: Row, tag: RowTag) -> bool {
        let row = canonical_row(row);
        let mut key = vec![row.relation as u64, row.rhs.to_bits()];
        for &(j, a) in &row.coeffs {
            key.push(j as u64);
            key.push(a.to_bits());
        }
        if !self.seen.insert(key) {
            return false;
        }
        self.rows.push(row);
        self.tags.push(tag);
        true
    }

    pub fn count(&self, tag: RowTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Largest row or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0)).fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// `max objective·x` over this system (objective padded with zeros).
    pub fn to_lp(&self, objective: &[f64]) -> LinearProgram {
        let mut c = objective.to_vec();
        c.resize(self.num_vars(), 0.0);
        LinearProgram { objective: c, rows: self.rows.clone(), lower: self.lower.clone(), upper: self.upper.clone() }
    }
}

/// Sorts and merges coefficients so equal rows compare equal.
pub fn canonical_row(mut row: Row) -> Row {
    row.coeffs.sort_by_key(|&(j, _)| j);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
    for (j, a) in row.coeffs {
        match merged.last_mut() {
            Some((k, b)) if *k == j => *b += a,
            _ => merged.push((j, a)),
        }
    }
    merged.retain(|&(_, a)| a != 0.0);
    row.coeffs = merged;
    row
}

/// Lifted local polytope: normalization per node orbit, marginalization per
/// edge orbit side, `[0, 1]` bounds and structural zeros fixed at 0.
pub fn lifted_local(lg: &LiftedGraph) -> ConstraintSystem {
    let mut cs = ConstraintSystem::new(lg.num_vars());
    for (j, &z) in lg.zero.iter().enumerate() {
        if z {
            cs.upper[j] = 0.0;
        }
    }
    for v in &lg.nodes {
        let coeffs = (0..v.card).map(|t| (v.offset + t, 1.0)).collect();
        cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 1.0 }, RowTag::Local);
    }
    for e in &lg.edges {
        for side in 0..2 {
            let node = &lg.nodes[e.ends[side]];
            for value in 0..e.cards[side] {
                let mut coeffs = vec![(node.offset + value, -1.0)];
                for t in 0..e.cards[0] {
                    for h in 0..e.cards[1] {
                        if [t, h][side] == value {
                            coeffs.push((e.var(t, h), 1.0));
                        }
                    }
                }
                cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 0.0 }, RowTag::Local);
            }
        }
    }
    cs
}

/// A closed walk given as `(ground edge, in odd set F)` steps.
pub type GroundCycle = Vec<(usize, bool)>;

/// Finds cycle inequalities `Σ_F x_e - Σ_{C\F} x_e <= |F| - 1` violated by more
/// than [`CUT_TOL`], where `x_e` is the disagreement probability of binary
/// edge `e` (`x[e]`, ignored for non-binary edges). One shortest path in the
/// two-layer graph is computed per source node.
pub fn find_violated_cycles(g: &PairwiseGroundModel, x: &[f64], sources: &[usize]) -> Vec<GroundCycle> {
    let n = g.num_nodes();
    let binary = |i: usize| g.nodes[i].card == 2;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, e) in g.edges.iter().enumerate() {
        if binary(e.u) && binary(e.v) {
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
    }
    let mut found = Vec::new();
    for &s in sources {
        if !binary(s) || adj[s].is_empty() {
            continue;
        }
        // node id 2 * i + layer
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut prev: Vec<Option<(usize, usize, bool)>> = vec![None; 2 * n];
        let mut heap = BinaryHeap::new();
        dist[2 * s] = 0.0;
        heap.push(Reverse((OrderedFloat(0.0), 2 * s)));
        let target = 2 * s + 1;
        while let Some(Reverse((OrderedFloat(d), a))) = heap.pop() {
            if a == target {
                break;
            }
            if d > dist[a] {
                continue;
            }
            let (i, layer) = (a / 2, a % 2);
            for &(j, k) in &adj[i] {
                let xe = x[k].clamp(0.0, 1.0);
                for cross in [false, true] {
                    let b = 2 * j + (layer ^ cross as usize);
                    let nd = d + if cross { 1.0 - xe } else { xe };
                    if nd < dist[b] {
                        dist[b] = nd;
                        prev[b] = Some((a, k, cross));
                        heap.push(Reverse((OrderedFloat(nd), b)));
                    }
                }
            }
        }
        if dist[target] >= 1.0 - CUT_TOL {
            continue;
        }
        let mut nodes = vec![s];
        let mut steps = Vec::new();
        let mut at = target;
        while at != 2 * s {
            let (p, k, cross) = prev[at].unwrap();
            steps.push((k, cross));
            nodes.push(p / 2);
            at = p;
        }
        steps.reverse();
        nodes.reverse();
        if let Some(cycle) = odd_simple_cycle(nodes, steps) {
            found.push(cycle);
        }
    }
    found
}

/// Reduces a closed walk with an odd number of crossings to a simple cycle
/// with the same property (whose cost can only be lower).
fn odd_simple_cycle(mut nodes: Vec<usize>, mut steps: Vec<(usize, bool)>) -> Option<GroundCycle> {
    loop {
        // nodes[0..L] with nodes[L] == nodes[0]
        let len = steps.len();
        let mut first: HashMap<usize, usize> = HashMap::new();
        let mut split = None;
        for (pos, &v) in nodes[..len].iter().enumerate() {
            if let Some(&earlier) = first.get(&v) {
                split = Some((earlier, pos));
                break;
            }
            first.insert(v, pos);
        }
        let Some((i, j)) = split else {
            return (len >= 3).then_some(steps);
        };
        let inner: Vec<(usize, bool)> = steps[i..j].to_vec();
        let odd = |s: &[(usize, bool)]| s.iter().filter(|x| x.1).count() % 2 == 1;
        if odd(&inner) {
            nodes = nodes[i..=j].to_vec();
            steps = inner;
        } else {
            let mut outer_nodes = nodes[..=i].to_vec();
            outer_nodes.extend_from_slice(&nodes[j + 1..]);
            let mut outer = steps[..i].to_vec();
            outer.extend_from_slice(&steps[j..]);
            nodes = outer_nodes;
            steps = outer;
        }
    }
}

/// Ground disagreement probabilities `x_e = τ_e(0,1) + τ_e(1,0)` of `Dτ̄`.
fn lifted_disagreement(lg: &LiftedGraph, g: &PairwiseGroundModel, tau: &[f64]) -> Vec<f64> {
    g.edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if g.nodes[e.u].card == 2 && g.nodes[e.v].card == 2 {
                let orbit = &lg.edges[lg.edge_orbit_of[k]];
                tau[orbit.var(0, 1)] + tau[orbit.var(1, 0)]
            } else {
                0.0
            }
        })
        .collect()
}

/// Lifted row of a ground cycle inequality.
pub fn lift_cycle(lg: &LiftedGraph, cycle: &GroundCycle) -> Row {
    let mut coeffs = Vec::with_capacity(2 * cycle.len());
    let mut odd = 0;
    for &(k, in_f) in cycle {
        let orbit = &lg.edges[lg.edge_orbit_of[k]];
        let sign = if in_f { 1.0 } else { -1.0 };
        odd += in_f as usize;
        coeffs.push((orbit.var(0, 1), sign));
        coeffs.push((orbit.var(1, 0), sign));
    }
    canonical_row(Row { coeffs, relation: Relation::Le, rhs: odd as f64 - 1.0 })
}

/// Separates lifted cycle inequalities at `tau`, adds the new ones to `pool`
/// and returns them. Searches from one representative per binary node orbit.
pub fn separate_cycles(lg: &LiftedGraph, g: &PairwiseGroundModel, tau: &[f64], pool: &mut ConstraintSystem) -> Vec<Row> {
    let x = lifted_disagreement(lg, g, tau);
    let sources: Vec<usize> = lg.nodes.iter().filter(|v| v.card == 2).map(|v| v.members[0]).collect();
    let mut added = Vec::new();
    for cycle in find_violated_cycles(g, &x, &sources) {
        let row = lift_cycle(lg, &cycle);
        if row.violation(tau) > CUT_TOL && pool.add_row(row.clone(), RowTag::Cycle) {
            added.push(row);
        }
    }
    added
}

/// An exchangeable cluster: a binary node orbit whose internal pairs form one
/// flip-symmetric edge orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    pub node_orbit: usize,
    pub edge_orbit: usize,
    pub size: usize,
}

/// Checks the edge structure required by the exchangeable constraints.
pub fn exchangeable_cluster(lg: &LiftedGraph, node_orbit: usize) -> Result<Cluster> {
    let v = &lg.nodes[node_orbit];
    let n = v.size;
    let internal: Vec<usize> = lg.edges.iter().filter(|e| e.ends == [node_orbit, node_orbit]).map(|e| e.id).collect();
    match internal[..] {
        [e] if v.card == 2 && n >= 2 && lg.edges[e].flip && lg.edges[e].size == n * (n - 1) / 2 => Ok(Cluster { node_orbit, edge_orbit: e, size: n }),
        _ => Err(Error::NotExchangeable(node_orbit)),
    }
}

/// Orbits of unary-predicate atoms (renaming symmetry) that pass
/// [`exchangeable_cluster`].
pub fn detect_exchangeable_clusters(lg: &LiftedGraph, g: &PairwiseGroundModel) -> Vec<Cluster> {
    if !matches!(g.symmetry, SymmetrySource::Renaming { .. }) {
        return Vec::new();
    }
    lg.nodes
        .iter()
        .filter(|v| matches!(&g.nodes[v.members[0]].term, NodeTerm::Atom { args, .. } if args.len() == 1))
        .filter_map(|v| exchangeable_cluster(lg, v.id).ok())
        .collect()
}

/// Appends `c_0..c_n` and the count-consistency rows for `cluster`.
pub fn exchangeable_constraints(cs: &mut ConstraintSystem, lg: &LiftedGraph, cluster: &Cluster) -> Vec<usize> {
    let n = cluster.size;
    let e = &lg.edges[cluster.edge_orbit];
    let c: Vec<usize> = (0..=n).map(|_| cs.add_var(0.0, 1.0)).collect();
    let pairs = (n * (n - 1)) as f64;
    let mut r00 = vec![(e.var(0, 0), -1.0)];
    let mut r11 = vec![(e.var(1, 1), -1.0)];
    let mut r01 = vec![(e.var(0, 1), -1.0)];
    for k in 0..=n - 2 {
        r00.push((c[k], ((n - k) * (n - k - 1)) as f64 / pairs));
        r11.push((c[k + 2], ((k + 1) * (k + 2)) as f64 / pairs));
        r01.push((c[k + 1], ((n - k - 1) * (k + 1)) as f64 / pairs));
    }
    for coeffs in [r00, r11, r01] {
        cs.add_row(Row { coeffs, relation: Relation::Eq, rhs: 0.0 }, RowTag::Exchangeable);
    }
    let total = c.iter().map(|&j| (j, 1.0)).collect();
    cs.add_row(Row { coeffs: total, relation: Relation::Eq, rhs: 1.0 }, RowTag::Exchangeable);
    c
}

/// Initial constraint system for `outer` (cycle rows are added lazily).
pub fn build_outer(lg: &LiftedGraph, g: &PairwiseGroundModel, outer: OuterBound) -> ConstraintSystem {
    let mut cs = lifted_local(lg);
    if outer.exchangeable() {
        for cluster in detect_exchangeable_clusters(lg, g) {
            exchangeable_constraints(&mut cs, lg, &cluster);
        }
    }
    cs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ground, parse_model};
    use crate::symmetry::compute_orbits;

    #[test]
    fn ring_red_edge_rows() {
        let g = fixtures::ring(0.0);
        let lg = compute_orbits(&g).unwrap();
        let cs = lifted_local(&lg);
        let (b, r, re) = (&lg.nodes[0], &lg.nodes[1], &lg.edges[0]);
        // τ_{re:00} + τ_{br_a:01} = τ_{b:0}
        let want_b = canonical_row(Row { coeffs: vec![(re.var(0, 0), 1.0), (re.var(0, 1), 1.0), (b.offset, -1.0)], relation: Relation::Eq, rhs: 0.0 });
        let want_r = canonical_row(Row { coeffs: vec![(re.var(0, 0), 1.0), (re.var(1, 0), 1.0), (r.offset, -1.0)], relation: Relation::Eq, rhs: 0.0 });
        assert!(cs.rows.contains(&want_b));
        assert!(cs.rows.contains(&want_r));
        // 2 normalizations + red 4 + blue 2 + black 2 (flip sides deduplicated)
        assert_eq!(cs.rows.len(), 10);
    }

    #[test]
    fn single_binary_orbit() {
        let g = ground(&parse_model("W V(x)").unwrap(), 1, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let cs = lifted_local(&lg);
        assert_eq!(cs.rows.len(), 1);
        assert_eq!((cs.lower.clone(), cs.upper.clone()), (vec![0.0; 2], vec![1.0; 2]));
    }

    #[test]
    fn uniform_has_no_violated_cycles() {
        let g = ground(&parse_model(fixtures::CLIQUE_CYCLE).unwrap(), 3, 2.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let mut pool = lifted_local(&lg);
        assert!(separate_cycles(&lg, &g, &lg.uniform(), &mut pool).is_empty());
    }

    #[test]
    fn frustrated_triangle_is_cut() {
        // all three pairs disagree with probability one
        let g = ground(&parse_model(fixtures::COMPLETE_GRAPH).unwrap(), 3, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let e = &lg.edges[0];
        let mut tau = vec![0.5, 0.5, 0.0, 0.5, 0.0];
        tau[e.var(0, 0)] = 0.0;
        let mut pool = lifted_local(&lg);
        assert!(pool.max_violation(&tau) < 1e-12);
        let cuts = separate_cycles(&lg, &g, &tau, &mut pool);
        assert_eq!(cuts.len(), 1);
        // x_e = 2 τ_a per edge, three edges in F: 6 τ_a <= 2
        assert_eq!(cuts[0].coeffs, vec![(e.var(0, 1), 6.0)]);
        assert_eq!(cuts[0].rhs, 2.0);
        assert!(separate_cycles(&lg, &g, &tau, &mut pool).is_empty(), "pool deduplicates");
    }

    #[test]
    fn clusters() {
        let g = ground(&parse_model(fixtures::COMPLETE_GRAPH).unwrap(), 4, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        assert_eq!(detect_exchangeable_clusters(&lg, &g), vec![Cluster { node_orbit: 0, edge_orbit: 0, size: 4 }]);
        let ring = fixtures::ring(0.0);
        let lg = compute_orbits(&ring).unwrap();
        assert!(detect_exchangeable_clusters(&lg, &ring).is_empty());
        assert_eq!(exchangeable_cluster(&lg, 0).unwrap_err(), Error::NotExchangeable(0));
        let g = ground(&parse_model("1 F(x,y) ^ F(y,x)").unwrap(), 3, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        assert!(detect_exchangeable_clusters(&lg, &g).is_empty());
    }

    #[test]
    fn exchangeable_rows_closed_form() {
        let g = ground(&parse_model(fixtures::COMPLETE_GRAPH).unwrap(), 3, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let mut cs = lifted_local(&lg);
        let cluster = detect_exchangeable_clusters(&lg, &g)[0];
        let c = exchangeable_constraints(&mut cs, &lg, &cluster);
        // uniform distribution on {0,1}^3
        let mut x = lg.uniform();
        x.extend([1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0]);
        assert_eq!(c.len(), 4);
        assert!(cs.max_violation(&x) < 1e-15);
        assert_eq!(cs.count(RowTag::Exchangeable), 4);
    }

    #[test]
    fn odd_cycle_extraction() {
        // walk 0-1-2-0-3-4-0 with odd crossings only on the second loop
        let nodes = vec![0, 1, 2, 0, 3, 4, 0];
        let steps = vec![(0, false), (1, false), (2, false), (3, true), (4, false), (5, false)];
        let cycle = odd_simple_cycle(nodes, steps).unwrap();
        assert_eq!(cycle, vec![(3, true), (4, false), (5, false)]);
    }

    #[test]
    fn outer_bound_names() {
        for o in OuterBound::ALL {
            assert_eq!(o.to_string().parse::<OuterBound>().unwrap(), o);
        }
        assert!("tight".parse::<OuterBound>().is_err());
    }
}

//! Maximum spanning trees over the lifted graph and edge-appearance vectors in
//! the symmetrized spanning tree polytope.

use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::model::PairwiseGroundModel;
use crate::polytope::OuterBound;
use crate::symmetry::{fix_node, LiftedGraph};
use crate::trw::{edge_entropy, frank_wolfe, node_entropy, EdgeAppearance, FwOptions, TrwResult};

/// Kruskal over edge orbits, with ground component counts derived from
/// stabilizer orbits. Fixed lifted graphs are cached per representative.
pub struct SpanningTreeSolver<'a> {
    lg: &'a LiftedGraph,
    g: &'a PairwiseGroundModel,
    fixed: RefCell<HashMap<usize, LiftedGraph>>,
}

/// State of one lifted Kruskal run.
#[derive(Debug, Clone, Default)]
pub struct LiftedComponentTracker {
    parent: Vec<usize>,
    touched: Vec<bool>,
    /// Ground components inside each accumulated component (keyed by root).
    gc: HashMap<usize, usize>,
    edge_orbits: HashMap<usize, Vec<usize>>,
    pub num_gc: usize,
    pub num_gv: usize,
}

impl LiftedComponentTracker {
    fn new(num_orbits: usize) -> Self {
        Self { parent: (0..num_orbits).collect(), touched: vec![false; num_orbits], ..Default::default() }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }
}

impl<'a> SpanningTreeSolver<'a> {
    pub fn new(lg: &'a LiftedGraph, g: &'a PairwiseGroundModel) -> Self {
        Self { lg, g, fixed: RefCell::new(HashMap::new()) }
    }

    /// Ground connected components of the subgraph made of `edge_orbits`
    /// over the node orbits `node_orbits`, which must be connected at orbit level.
    fn components_connected(&self, node_orbits: &[usize], edge_orbits: &[usize]) -> Result<usize> {
        let lg = self.lg;
        let total: usize = node_orbits.iter().map(|&v| lg.nodes[v].size).sum();
        let smallest = *node_orbits.iter().min_by_key(|&&v| (lg.nodes[v].size, v)).expect("nonempty component");
        let u0 = lg.nodes[smallest].members[0];
        let mut cache = self.fixed.borrow_mut();
        let fixed = match cache.entry(u0) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(fix_node(self.g, u0)?),
        };
        let in_h: Vec<bool> = {
            let mut m = vec![false; lg.edges.len()];
            for &e in edge_orbits {
                m[e] = true;
            }
            m
        };
        // sub-orbit adjacency restricted to edges whose parent orbit lies in H
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); fixed.nodes.len()];
        for e in &fixed.edges {
            let parent = lg.edge_orbit_of[e.members[0].0];
            if in_h[parent] {
                adj[e.ends[0]].push(e.ends[1]);
                adj[e.ends[1]].push(e.ends[0]);
            }
        }
        let start = fixed.node_orbit_of[u0];
        let mut seen = vec![false; fixed.nodes.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += fixed.nodes[v].size;
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        debug_assert_eq!(total % size, 0);
        Ok(total / size)
    }

    /// Ground components of the subgraph spanned by `edge_orbits` (nodes
    /// outside those orbits are not counted).
    pub fn count_components(&self, edge_orbits: &[usize]) -> Result<usize> {
        let lg = self.lg;
        let mut tracker = LiftedComponentTracker::new(lg.nodes.len());
        for &e in edge_orbits {
            let [a, b] = lg.edges[e].ends;
            tracker.touched[a] = true;
            tracker.touched[b] = true;
            let (ra, rb) = (tracker.find(a), tracker.find(b));
            tracker.parent[ra] = rb;
        }
        let mut groups: HashMap<usize, (Vec<usize>, Vec<usize>)> = HashMap::new();
        for v in 0..lg.nodes.len() {
            if tracker.touched[v] {
                let r = tracker.find(v);
                groups.entry(r).or_default().0.push(v);
            }
        }
        for &e in edge_orbits {
            let r = tracker.find(lg.edges[e].ends[0]);
            groups.get_mut(&r).unwrap().1.push(e);
        }
        groups.values().map(|(nodes, edges)| self.components_connected(nodes, edges)).sum()
    }

    /// Edge appearances of a maximum spanning tree for orbit weights `w`,
    /// averaged over each orbit.
    pub fn lifted_kruskal(&self, w: &[f64]) -> Result<EdgeAppearance> {
        let lg = self.lg;
        let mut rho = vec![0.0; lg.edges.len()];
        if lg.edges.is_empty() {
            return Ok(rho);
        }
        let total = lg.num_ground_nodes;
        let mut order: Vec<usize> = (0..lg.edges.len()).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let mut t = LiftedComponentTracker::new(lg.nodes.len());
        for &e in &order {
            if t.num_gv == total && t.num_gc == 1 {
                break;
            }
            let [a, b] = lg.edges[e].ends;
            let mut delta_v = 0;
            for v in if a == b { vec![a] } else { vec![a, b] } {
                if !t.touched[v] {
                    t.touched[v] = true;
                    delta_v += lg.nodes[v].size;
                }
            }
            let (ra, rb) = (t.find(a), t.find(b));
            let old_gc = t.gc.remove(&ra).unwrap_or(0) + if ra != rb { t.gc.remove(&rb).unwrap_or(0) } else { 0 };
            let mut edges = t.edge_orbits.remove(&ra).unwrap_or_default();
            if ra != rb {
                edges.extend(t.edge_orbits.remove(&rb).unwrap_or_default());
                t.parent[ra] = rb;
            }
            edges.push(e);
            let nodes: Vec<usize> = (0..lg.nodes.len()).filter(|&v| t.touched[v] && t.find(v) == rb).collect();
            let new_gc = self.components_connected(&nodes, &edges)?;
            t.gc.insert(rb, new_gc);
            t.edge_orbits.insert(rb, edges);
            let delta_c = new_gc as i64 - old_gc as i64;
            t.num_gc = (t.num_gc as i64 + delta_c) as usize;
            t.num_gv += delta_v;
            rho[e] = (delta_v as i64 - delta_c) as f64 / lg.edges[e].size as f64;
        }
        if t.num_gc != 1 || t.num_gv < total {
            return Err(Error::DisconnectedGraph { components: t.num_gc + (total - t.num_gv) });
        }
        Ok(rho)
    }
}

/// [`SpanningTreeSolver::lifted_kruskal`] without a persistent cache.
pub fn lifted_kruskal(lg: &LiftedGraph, g: &PairwiseGroundModel, w: &[f64]) -> Result<EdgeAppearance> {
    SpanningTreeSolver::new(lg, g).lifted_kruskal(w)
}

/// `Σ_e |e| ρ̄_e w_e`.
pub fn lifted_tree_value(lg: &LiftedGraph, rho: &[f64], w: &[f64]) -> f64 {
    lg.edges.iter().zip(rho).zip(w).map(|((e, r), w)| e.size as f64 * r * w).sum()
}

/// The point of the symmetrized spanning tree polytope closest to uniform
/// edge appearance `(|V|-1)/|E|`, weighting each orbit by its size.
pub fn init_rho_uniform(lg: &LiftedGraph, g: &PairwiseGroundModel) -> Result<EdgeAppearance> {
    if lg.edges.is_empty() {
        return Ok(Vec::new());
    }
    let solver = SpanningTreeSolver::new(lg, g);
    let c = (lg.num_ground_nodes as f64 - 1.0) / lg.num_ground_edges as f64;
    let size: Vec<f64> = lg.edges.iter().map(|e| e.size as f64).collect();
    let mut rho = solver.lifted_kruskal(&vec![0.0; lg.edges.len()])?;
    for _ in 0..500 {
        let w: Vec<f64> = rho.iter().map(|r| -2.0 * (r - c)).collect();
        let s = solver.lifted_kruskal(&w)?;
        let gap: f64 = (0..rho.len()).map(|e| 2.0 * size[e] * (rho[e] - c) * (rho[e] - s[e])).sum();
        if gap <= 1e-8 {
            break;
        }
        let num: f64 = (0..rho.len()).map(|e| size[e] * (c - rho[e]) * (s[e] - rho[e])).sum();
        let den: f64 = (0..rho.len()).map(|e| size[e] * (s[e] - rho[e]).powi(2)).sum();
        let lambda = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        for e in 0..rho.len() {
            rho[e] += lambda * (s[e] - rho[e]);
        }
    }
    Ok(rho.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())
}

/// Per-orbit mutual information `H(τ̄_u) + H(τ̄_v) - H(τ̄_e)`.
pub fn orbit_mutual_information(lg: &LiftedGraph, tau: &[f64]) -> Vec<f64> {
    (0..lg.edges.len())
        .map(|e| {
            let [a, b] = lg.edges[e].ends;
            node_entropy(lg, a, tau) + node_entropy(lg, b, tau) - edge_entropy(lg, e, tau)
        })
        .collect()
}

/// Minimizes the bound over `ρ̄` by conditional gradient with mutual-information
/// spanning trees as directions. Returns the final `ρ̄` and its TRW result.
pub fn optimize_rho(
    lg: &LiftedGraph,
    g: &PairwiseGroundModel,
    outer: OuterBound,
    rho0: &[f64],
    outer_iters: usize,
    opts: &FwOptions,
) -> Result<(EdgeAppearance, TrwResult)> {
    let solver = SpanningTreeSolver::new(lg, g);
    let mut rho = rho0.to_vec();
    let mut best = frank_wolfe(lg, g, outer, &rho, opts)?;
    for k in 0..outer_iters {
        let s = solver.lifted_kruskal(&orbit_mutual_information(lg, &best.tau))?;
        if s.iter().zip(&rho).all(|(a, b)| (a - b).abs() < 1e-12) {
            break;
        }
        let mut step = 2.0 / (k as f64 + 2.0);
        while step > 1e-4 {
            let cand: Vec<f64> = rho.iter().zip(&s).map(|(r, s)| r + step * (s - r)).collect();
            let res = frank_wolfe(lg, g, outer, &cand, opts)?;
            if res.bound <= best.bound {
                rho = cand;
                best = res;
                break;
            }
            step /= 2.0;
        }
    }
    Ok((rho, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ground, parse_model};
    use crate::symmetry::compute_orbits;

    #[test]
    fn ring_kruskal() {
        let g = fixtures::ring(0.0);
        let lg = compute_orbits(&g).unwrap();
        let rho = lifted_kruskal(&lg, &g, &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(rho, vec![1.0, 0.8, 0.0]);
        let solver = SpanningTreeSolver::new(&lg, &g);
        assert_eq!(solver.count_components(&[0]).unwrap(), 5);
        assert_eq!(solver.count_components(&[0, 1]).unwrap(), 1);
        assert_eq!(solver.count_components(&[1]).unwrap(), 1);
    }

    #[test]
    fn ring_uniform_rho() {
        let g = fixtures::ring(0.0);
        let lg = compute_orbits(&g).unwrap();
        let rho = init_rho_uniform(&lg, &g).unwrap();
        for (r, want) in rho.iter().zip([1.0, 0.4, 0.4]) {
            assert!((r - want).abs() < 1e-6, "{rho:?}");
        }
    }

    #[test]
    fn complete_graph_single_orbit() {
        let m = parse_model(fixtures::COMPLETE_GRAPH).unwrap();
        for n in [4, 5, 6] {
            let g = ground(&m, n, 0.3).unwrap();
            let lg = compute_orbits(&g).unwrap();
            let want = (n as f64 - 1.0) / (n * (n - 1) / 2) as f64;
            let rho = lifted_kruskal(&lg, &g, &[1.0]).unwrap();
            assert!((rho[0] - want).abs() < 1e-12);
            let rho = init_rho_uniform(&lg, &g).unwrap();
            assert!((rho[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_and_edgeless() {
        let mut g = PairwiseGroundModel::with_generators(vec![vec![1, 0, 3, 2]]);
        for _ in 0..4 {
            g.add_node(2, vec![0.0, 0.0]);
        }
        g.add_pairwise(0, 1, &[0.0; 4]);
        g.add_pairwise(2, 3, &[0.0; 4]);
        let lg = compute_orbits(&g).unwrap();
        assert!(matches!(lifted_kruskal(&lg, &g, &[1.0, 1.0]), Err(Error::DisconnectedGraph { components: 2 })));
        let g = ground(&parse_model("W V(x)").unwrap(), 3, 0.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        assert!(lifted_kruskal(&lg, &g, &[]).unwrap().is_empty());
    }
}

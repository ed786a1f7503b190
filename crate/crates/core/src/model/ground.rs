use std::collections::{BTreeSet, HashMap};

use super::{Predicate, TemplatedModel};
use crate::error::{Error, Result};

/// What a ground node stands for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeTerm {
    /// A ground atom `predicate(args)`.
    Atom { predicate: usize, args: Vec<u32> },
    /// Auxiliary node of a three-atom grounding. Value bit `i` mirrors `atoms[i]`.
    Aux { formula: usize, binding: Vec<u32>, atoms: [usize; 3] },
    /// A node of a hand-built model (symmetry given by explicit generators).
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundNode {
    pub term: NodeTerm,
    pub card: usize,
    /// Log-potential per value.
    pub theta: Vec<f64>,
}

/// A formula grounding that contributed to an edge potential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeOrigin {
    pub formula: usize,
    pub binding: Vec<u32>,
}

/// Undirected edge stored with `u < v`; tables are indexed `a * card(v) + b`
/// for `x_u = a, x_v = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundEdge {
    pub u: usize,
    pub v: usize,
    pub theta: Vec<f64>,
    /// Entries forced to probability zero.
    pub zeros: Vec<bool>,
    pub origins: Vec<EdgeOrigin>,
}

/// The symmetry group a ground model is lifted with.
#[derive(Debug, Clone, PartialEq)]
pub enum SymmetrySource {
    /// Permutations of the domain constants `0..domain_size`.
    Renaming { domain_size: usize },
    /// Group generated by the given node permutations.
    Generators(Vec<Vec<usize>>),
}

/// Overcomplete pairwise MRF with tied parameters.
#[derive(Debug, Clone)]
pub struct PairwiseGroundModel {
    pub nodes: Vec<GroundNode>,
    pub edges: Vec<GroundEdge>,
    pub predicates: Vec<Predicate>,
    pub symmetry: SymmetrySource,
    edge_index: HashMap<(usize, usize), usize>,
    term_index: HashMap<NodeTerm, usize>,
}

impl PairwiseGroundModel {
    /// Empty hand-built model; symmetry comes from `generators`.
    pub fn with_generators(generators: Vec<Vec<usize>>) -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            predicates: Vec::new(),
            symmetry: SymmetrySource::Generators(generators),
            edge_index: HashMap::new(),
            term_index: HashMap::new(),
        }
    }

    pub fn add_node(&mut self, card: usize, theta: Vec<f64>) -> usize {
        assert_eq!(theta.len(), card);
        self.nodes.push(GroundNode { term: NodeTerm::Plain, card, theta });
        self.nodes.len() - 1
    }

    /// Adds `table` (indexed `a * card(j) + b` for `x_i = a, x_j = b`) to the
    /// potential on `{i, j}`, creating the edge if needed.
    pub fn add_pairwise(&mut self, i: usize, j: usize, table: &[f64]) -> usize {
        assert_ne!(i, j, "self-loops are not allowed");
        let (ci, cj) = (self.nodes[i].card, self.nodes[j].card);
        assert_eq!(table.len(), ci * cj);
        let id = self.edge_id_or_insert(i, j);
        let e = &mut self.edges[id];
        for a in 0..ci {
            for b in 0..cj {
                let slot = if i < j { a * cj + b } else { b * ci + a };
                e.theta[slot] += table[a * cj + b];
            }
        }
        id
    }

    fn edge_id_or_insert(&mut self, i: usize, j: usize) -> usize {
        let key = (i.min(j), i.max(j));
        if let Some(&id) = self.edge_index.get(&key) {
            return id;
        }
        let size = self.nodes[key.0].card * self.nodes[key.1].card;
        self.edges.push(GroundEdge { u: key.0, v: key.1, theta: vec![0.0; size], zeros: vec![false; size], origins: Vec::new() });
        self.edge_index.insert(key, self.edges.len() - 1);
        self.edges.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.edge_index.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn node_of(&self, term: &NodeTerm) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    pub fn domain_size(&self) -> Option<usize> {
        match self.symmetry {
            SymmetrySource::Renaming { domain_size } => Some(domain_size),
            SymmetrySource::Generators(_) => None,
        }
    }

    pub fn is_aux(&self, i: usize) -> bool {
        matches!(self.nodes[i].term, NodeTerm::Aux { .. })
    }

    /// Human-readable name of a ground node, constants printed as `c0, c1, ...`.
    pub fn node_label(&self, i: usize) -> String {
        match &self.nodes[i].term {
            NodeTerm::Atom { predicate, args } => {
                let args: Vec<String> = args.iter().map(|c| format!("c{c}")).collect();
                format!("{}({})", self.predicates[*predicate].name, args.join(","))
            }
            NodeTerm::Aux { formula, binding, .. } => {
                let args: Vec<String> = binding.iter().map(|c| format!("c{c}")).collect();
                format!("aux#{formula}[{}]", args.join(","))
            }
            NodeTerm::Plain => format!("n{i}"),
        }
    }

    /// Fills in every auxiliary node from the values of its atoms.
    pub fn complete_aux(&self, x: &mut [usize]) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeTerm::Aux { atoms, .. } = node.term {
                x[i] = (0..3).map(|k| x[atoms[k]] << k).sum();
            }
        }
    }

    /// Indices of the nodes that are not auxiliary.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.is_aux(i)).collect()
    }
}

/// `⟨Φ(x), θ⟩` for a full assignment; `-inf` if `x` hits a structural zero.
pub fn score_state(g: &PairwiseGroundModel, x: &[usize]) -> f64 {
    assert_eq!(x.len(), g.nodes.len());
    let mut score = 0.0;
    for (node, &xi) in g.nodes.iter().zip(x) {
        score += node.theta[xi];
    }
    for e in &g.edges {
        let slot = x[e.u] * g.nodes[e.v].card + x[e.v];
        if e.zeros[slot] {
            return f64::NEG_INFINITY;
        }
        score += e.theta[slot];
    }
    score
}

/// Grounds `model` over `n` constants with the symbol `W` bound to `w`.
///
/// Only atoms occurring in at least one admissible grounding become nodes.
pub fn ground(model: &TemplatedModel, n: usize, w: f64) -> Result<PairwiseGroundModel> {
    if n == 0 {
        return Err(Error::DomainTooSmall);
    }
    // Pass 1: collect atoms so node ids follow (predicate, args) order.
    let mut atoms: BTreeSet<(usize, Vec<u32>)> = BTreeSet::new();
    for formula in &model.formulas {
        for_each_binding(formula.num_variables(), n, |binding| {
            if formula.admits(binding) {
                for atom in &formula.atoms {
                    atoms.insert((atom.predicate, atom.args.iter().map(|&v| binding[v]).collect()));
                }
            }
        });
    }

    let mut g = PairwiseGroundModel {
        nodes: Vec::new(),
        edges: Vec::new(),
        predicates: model.predicates.clone(),
        symmetry: SymmetrySource::Renaming { domain_size: n },
        edge_index: HashMap::new(),
        term_index: HashMap::new(),
    };
    for (predicate, args) in atoms {
        let term = NodeTerm::Atom { predicate, args };
        g.term_index.insert(term.clone(), g.nodes.len());
        g.nodes.push(GroundNode { term, card: 2, theta: vec![0.0; 2] });
    }

    // Pass 2: potentials.
    for (fi, formula) in model.formulas.iter().enumerate() {
        let weight = formula.weight.resolve(w);
        let mut groundings: Vec<Vec<u32>> = Vec::new();
        for_each_binding(formula.num_variables(), n, |binding| {
            if formula.admits(binding) {
                groundings.push(binding.to_vec());
            }
        });
        for binding in groundings {
            // Distinct ground atoms in template order, and template -> slot map.
            let mut distinct: Vec<usize> = Vec::with_capacity(3);
            let mut slot_of = Vec::with_capacity(formula.atoms.len());
            for atom in &formula.atoms {
                let term = NodeTerm::Atom { predicate: atom.predicate, args: atom.args.iter().map(|&v| binding[v]).collect() };
                let id = g.term_index[&term];
                let slot = match distinct.iter().position(|&d| d == id) {
                    Some(s) => s,
                    None => {
                        distinct.push(id);
                        distinct.len() - 1
                    }
                };
                slot_of.push(slot);
            }
            let k = distinct.len();
            let sat: Vec<f64> = (0..1usize << k)
                .map(|s| {
                    let truth = |i: usize| (s >> slot_of[i]) & 1 == 1;
                    if formula.expr.eval(&truth) {
                        weight
                    } else {
                        0.0
                    }
                })
                .collect();
            match k {
                1 => {
                    let node = &mut g.nodes[distinct[0]];
                    node.theta[0] += sat[0];
                    node.theta[1] += sat[1];
                }
                2 => {
                    // sat index = a + 2b with a the value of distinct[0]
                    let (p, q) = (distinct[0], distinct[1]);
                    let table = [sat[0], sat[2], sat[1], sat[3]];
                    let id = g.add_pairwise(p, q, &table);
                    g.edges[id].origins.push(EdgeOrigin { formula: fi, binding: binding.clone() });
                }
                3 => {
                    let atoms = [distinct[0], distinct[1], distinct[2]];
                    let term = NodeTerm::Aux { formula: fi, binding: binding.clone(), atoms };
                    let aux = g.nodes.len();
                    g.term_index.insert(term.clone(), aux);
                    g.nodes.push(GroundNode { term, card: 8, theta: sat });
                    for (bit, &atom) in atoms.iter().enumerate() {
                        // atom ids precede aux ids, so the atom is the `u` side
                        let id = g.edge_id_or_insert(atom, aux);
                        let e = &mut g.edges[id];
                        for a in 0..2 {
                            for s in 0..8 {
                                e.zeros[a * 8 + s] = (s >> bit) & 1 != a;
                            }
                        }
                        e.origins.push(EdgeOrigin { formula: fi, binding: binding.clone() });
                    }
                }
                _ => return Err(Error::TooManyAtoms { line: formula.line, count: k }),
            }
        }
    }
    Ok(g)
}

/// Calls `f` on every assignment of `vars` logical variables to `0..n`, in
/// lexicographic order.
pub(crate) fn for_each_binding(vars: usize, n: usize, mut f: impl FnMut(&[u32])) {
    let mut binding = vec![0u32; vars];
    loop {
        f(&binding);
        let mut k = vars;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            binding[k] += 1;
            if (binding[k] as usize) < n {
                break;
            }
            binding[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::parse_model;

    /// Weighted count of satisfied groundings, straight from the formulas.
    fn mln_score(model: &TemplatedModel, n: usize, w: f64, g: &PairwiseGroundModel, x: &[usize]) -> f64 {
        let mut total = 0.0;
        for f in &model.formulas {
            for_each_binding(f.num_variables(), n, |b| {
                if !f.admits(b) {
                    return;
                }
                let truth = |i: usize| {
                    let atom = &f.atoms[i];
                    let term = NodeTerm::Atom { predicate: atom.predicate, args: atom.args.iter().map(|&v| b[v]).collect() };
                    x[g.node_of(&term).unwrap()] == 1
                };
                if f.expr.eval(&truth) {
                    total += f.weight.resolve(w);
                }
            });
        }
        total
    }

    fn check_mln_equivalence(text: &str, n: usize, w: f64) {
        let model = parse_model(text).unwrap();
        let g = ground(&model, n, w).unwrap();
        let free = g.free_nodes();
        assert!(free.len() <= 16);
        for code in 0..1usize << free.len() {
            let mut x = vec![0; g.num_nodes()];
            for (k, &i) in free.iter().enumerate() {
                x[i] = (code >> k) & 1;
            }
            g.complete_aux(&mut x);
            let expected = mln_score(&model, n, w, &g, &x);
            let got = score_state(&g, &x);
            assert!((got - expected).abs() < 1e-12, "state {code}: {got} vs {expected}");
            // every other completion of the auxiliary nodes is inconsistent
            for aux in (0..g.num_nodes()).filter(|&i| g.is_aux(i)) {
                let mut y = x.clone();
                y[aux] = (y[aux] + 1) % 8;
                assert_eq!(score_state(&g, &y), f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn complete_graph_n3() {
        let model = parse_model(fixtures::COMPLETE_GRAPH).unwrap();
        let g = ground(&model, 3, -1.0).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 3);
        for e in &g.edges {
            // two ordered groundings per unordered pair
            assert_eq!(e.theta, vec![-0.2, 0.0, 0.0, -0.2]);
            assert_eq!(e.origins.len(), 2);
        }
        for node in &g.nodes {
            assert_eq!(node.theta, vec![0.0, -1.0]);
        }
        assert!((score_state(&g, &[0, 0, 0]) - -0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_model_and_zero_groundings() {
        let g = ground(&TemplatedModel::default(), 4, 0.0).unwrap();
        assert_eq!(g.num_nodes(), 0);
        assert_eq!(score_state(&g, &[]), 0.0);

        let model = parse_model("1 [x != y ^ F(x,y)]").unwrap();
        let g = ground(&model, 1, 0.0).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (0, 0));
        assert_eq!(ground(&model, 0, 0.0).unwrap_err(), Error::DomainTooSmall);
    }

    #[test]
    fn single_node() {
        let model = parse_model("W V(x)").unwrap();
        let g = ground(&model, 1, 0.7).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(score_state(&g, &[1]), 0.7);
        assert_eq!(score_state(&g, &[0]), 0.0);
    }

    #[test]
    fn friends_smokers_n2() {
        let model = parse_model(fixtures::FRIENDS_SMOKERS).unwrap();
        let g = ground(&model, 2, 0.5).unwrap();
        let count = |name: &str| {
            let p = model.predicate_index(name).unwrap();
            g.nodes.iter().filter(|n| matches!(&n.term, NodeTerm::Atom { predicate, .. } if *predicate == p)).count()
        };
        assert_eq!((count("Smokes"), count("Cancer"), count("Friends")), (2, 2, 2));
        let aux: Vec<_> = (0..g.num_nodes()).filter(|&i| g.is_aux(i)).collect();
        assert_eq!(aux.len(), 2);
        for &a in &aux {
            assert_eq!(g.nodes[a].card, 8);
            let incident: Vec<_> = g.edges.iter().filter(|e| e.v == a).collect();
            assert_eq!(incident.len(), 3);
            for e in incident {
                assert!(e.theta.iter().all(|&t| t == 0.0));
                assert_eq!(e.zeros.iter().filter(|&&z| z).count(), 8);
            }
        }
    }

    #[test]
    fn mln_semantics_equivalence() {
        check_mln_equivalence(fixtures::COMPLETE_GRAPH, 3, 0.3);
        check_mln_equivalence(fixtures::FRIENDS_SMOKERS, 2, -0.4);
        check_mln_equivalence(fixtures::CLIQUE_CYCLE, 2, 1.3);
        check_mln_equivalence("1.5 F(x,y) ^ F(y,x) -> G(x)\n-0.5 G(x) v !F(x,x)", 3, 0.0);
        check_mln_equivalence("0.8 [x != y ^ y != z ^ x != z ^ (V(x) ^ V(y) -> V(z))]", 3, 0.0);
    }

    #[test]
    fn tying_by_formula_pattern() {
        // entries generated by the same formula with the same equality
        // pattern carry identical potentials
        let model = parse_model("0.9 F(x,y) -> F(y,x)\n0.4 V(x) <-> F(x,y)").unwrap();
        let g = ground(&model, 3, 0.0).unwrap();
        let mut groups: HashMap<(Vec<usize>, bool), Vec<f64>> = HashMap::new();
        for e in &g.edges {
            let o = &e.origins[0];
            let pattern = (e.origins.iter().map(|o| o.formula).collect::<Vec<_>>(), o.binding[0] == o.binding[1]);
            let table = groups.entry(pattern).or_insert_with(|| e.theta.clone());
            let mut sorted_a = table.clone();
            let mut sorted_b = e.theta.clone();
            sorted_a.sort_by(f64::total_cmp);
            sorted_b.sort_by(f64::total_cmp);
            assert_eq!(sorted_a, sorted_b);
        }
    }
}

//! Orbits of ground nodes, edges and assignments under the model's symmetry
//! group, and the lifted graph built from them.
//!
//! Renaming-group orbits are found through canonical keys: constants are
//! relabelled by first occurrence, so two ground elements share an orbit iff
//! their keys agree. Models with explicit generators use union-find closure
//! over the generator images instead.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{NodeTerm, PairwiseGroundModel, SymmetrySource};

/// Offset that marks a pinned constant inside canonical keys.
const PINNED: u32 = 1 << 30;
const SEPARATOR: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeOrbit {
    pub id: usize,
    pub size: usize,
    pub card: usize,
    /// Ground node ids, ascending; the first is the representative.
    pub members: Vec<usize>,
    pub pattern: String,
    /// Index of the first lifted variable `τ̄_{v:0}`.
    pub offset: usize,
    pub is_aux: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOrbit {
    pub id: usize,
    pub size: usize,
    /// Node orbits of the representative arc `(tail, head)`.
    pub ends: [usize; 2],
    pub cards: [usize; 2],
    /// Some group element reverses an edge of this orbit.
    pub flip: bool,
    /// `(ground edge id, reversed)`: `reversed` means the stored `(u, v)` of
    /// that edge corresponds to `(head, tail)` of the representative arc.
    pub members: Vec<(usize, bool)>,
    pub pattern: String,
    pub offset: usize,
    /// Lifted variable of each oriented assignment `(t, h)`, at `t * cards[1] + h`.
    pub slots: Vec<usize>,
    pub num_vars: usize,
}

impl EdgeOrbit {
    pub fn is_loop(&self) -> bool {
        self.ends[0] == self.ends[1]
    }

    /// Incidence degree `d(v, e)`.
    pub fn degree(&self, v: usize) -> usize {
        (self.ends[0] == v) as usize + (self.ends[1] == v) as usize
    }

    pub fn var(&self, t: usize, h: usize) -> usize {
        self.slots[t * self.cards[1] + h]
    }

    /// Number of oriented slots mapped to lifted variable `var`.
    pub fn slot_count(&self, var: usize) -> usize {
        self.slots.iter().filter(|&&s| s == var).count()
    }
}

/// The lifted graph: orbit partition plus the lifted parameter vector.
#[derive(Debug, Clone)]
pub struct LiftedGraph {
    pub nodes: Vec<NodeOrbit>,
    pub edges: Vec<EdgeOrbit>,
    pub node_orbit_of: Vec<usize>,
    pub edge_orbit_of: Vec<usize>,
    /// `θ̄`: summed ground parameters per assignment orbit.
    pub theta: Vec<f64>,
    /// Number of ground overcomplete entries per assignment orbit.
    pub multiplicity: Vec<usize>,
    /// Structural zeros, per lifted variable.
    pub zero: Vec<bool>,
    pub num_ground_nodes: usize,
    pub num_ground_edges: usize,
}

impl LiftedGraph {
    pub fn num_vars(&self) -> usize {
        self.theta.len()
    }

    /// `Dτ̄` in the ground overcomplete layout of [`PairwiseGroundModel::offsets`].
    pub fn expand(&self, g: &PairwiseGroundModel, tau: &[f64]) -> Vec<f64> {
        let (node_off, edge_off, total) = g.offsets();
        let mut out = vec![0.0; total];
        for (i, node) in g.nodes.iter().enumerate() {
            let orbit = &self.nodes[self.node_orbit_of[i]];
            for t in 0..node.card {
                out[node_off[i] + t] = tau[orbit.offset + t];
            }
        }
        for (k, e) in g.edges.iter().enumerate() {
            let orbit = &self.edges[self.edge_orbit_of[k]];
            let reversed = orbit.members.iter().find(|m| m.0 == k).unwrap().1;
            let cv = g.nodes[e.v].card;
            for a in 0..g.nodes[e.u].card {
                for b in 0..cv {
                    let var = if reversed { orbit.var(b, a) } else { orbit.var(a, b) };
                    out[edge_off[k] + a * cv + b] = tau[var];
                }
            }
        }
        out
    }

    /// Orbit average of a ground overcomplete vector.
    pub fn project(&self, g: &PairwiseGroundModel, ground: &[f64]) -> Vec<f64> {
        let (node_off, edge_off, _) = g.offsets();
        let mut sum = vec![0.0; self.num_vars()];
        for (i, node) in g.nodes.iter().enumerate() {
            let orbit = &self.nodes[self.node_orbit_of[i]];
            for t in 0..node.card {
                sum[orbit.offset + t] += ground[node_off[i] + t];
            }
        }
        for orbit in &self.edges {
            for &(k, reversed) in &orbit.members {
                let cv = orbit.cards[if reversed { 0 } else { 1 }];
                for t in 0..orbit.cards[0] {
                    for h in 0..orbit.cards[1] {
                        let slot = if reversed { h * cv + t } else { t * cv + h };
                        sum[orbit.var(t, h)] += ground[edge_off[k] + slot];
                    }
                }
            }
        }
        sum.iter().zip(&self.multiplicity).map(|(s, &m)| s / m as f64).collect()
    }

    /// The lifted vector of the uniform distribution (over consistent states).
    pub fn uniform(&self) -> Vec<f64> {
        let mut tau = vec![0.0; self.num_vars()];
        for v in &self.nodes {
            for t in 0..v.card {
                tau[v.offset + t] = 1.0 / v.card as f64;
            }
        }
        for e in &self.edges {
            let open = e.slots.iter().filter(|&&s| !self.zero[s]).count();
            for &s in &e.slots {
                if !self.zero[s] {
                    tau[s] = 1.0 / open as f64;
                }
            }
        }
        tau
    }

    /// Human-readable name of lifted variable `var`.
    pub fn var_label(&self, var: usize) -> String {
        for v in &self.nodes {
            if (v.offset..v.offset + v.card).contains(&var) {
                return format!("{}:{}", v.pattern, var - v.offset);
            }
        }
        for e in &self.edges {
            if let Some(slot) = e.slots.iter().position(|&s| s == var) {
                let kind = if e.flip && slot / e.cards[1] != slot % e.cards[1] { "a" } else { "e" };
                return format!("{}[{kind}]:{}{}", e.pattern, slot / e.cards[1], slot % e.cards[1]);
            }
        }
        format!("#{var}")
    }
}

impl PairwiseGroundModel {
    /// Offsets of node and edge blocks in the ground overcomplete vector, and its length.
    pub fn offsets(&self) -> (Vec<usize>, Vec<usize>, usize) {
        let mut at = 0;
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                at += n.card;
                at - n.card
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let size = self.nodes[e.u].card * self.nodes[e.v].card;
                at += size;
                at - size
            })
            .collect();
        (nodes, edges, at)
    }
}

/// Result of [`canonical_pattern`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalKey {
    pub key: Vec<u32>,
    /// Reversing the pair gives the same key.
    pub flip: bool,
    /// The key came from the reversed order of the input pair.
    pub reversed: bool,
}

fn term_key(term: &NodeTerm, relabel: &mut impl FnMut(u32) -> u32, out: &mut Vec<u32>) {
    match term {
        NodeTerm::Atom { predicate, args } => {
            out.push(0);
            out.push(*predicate as u32);
            out.extend(args.iter().map(|&c| relabel(c)));
        }
        NodeTerm::Aux { formula, binding, .. } => {
            out.push(1);
            out.push(*formula as u32);
            out.extend(binding.iter().map(|&c| relabel(c)));
        }
        NodeTerm::Plain => unreachable!("plain nodes have no constants"),
    }
}

fn sequence_key(terms: &[&NodeTerm], pinned: &[u32]) -> Vec<u32> {
    let mut seen: Vec<u32> = Vec::new();
    let mut relabel = |c: u32| {
        if pinned.contains(&c) {
            return PINNED + c;
        }
        match seen.iter().position(|&s| s == c) {
            Some(p) => p as u32,
            None => {
                seen.push(c);
                seen.len() as u32 - 1
            }
        }
    };
    let mut key = Vec::new();
    for (i, term) in terms.iter().enumerate() {
        if i > 0 {
            key.push(SEPARATOR);
        }
        term_key(term, &mut relabel, &mut key);
    }
    key
}

/// Renaming-invariant key of one ground term or an unordered pair of them.
///
/// Constants are relabelled by first occurrence; constants in `pinned` keep
/// their identity (orbits under the stabilizer of those constants).
pub fn canonical_pattern(terms: &[&NodeTerm], pinned: &[u32]) -> CanonicalKey {
    match terms {
        [a, b] => {
            let fwd = sequence_key(&[a, b], pinned);
            let rev = sequence_key(&[b, a], pinned);
            match fwd.cmp(&rev) {
                std::cmp::Ordering::Equal => CanonicalKey { key: fwd, flip: true, reversed: false },
                std::cmp::Ordering::Less => CanonicalKey { key: fwd, flip: false, reversed: false },
                std::cmp::Ordering::Greater => CanonicalKey { key: rev, flip: false, reversed: true },
            }
        }
        _ => CanonicalKey { key: sequence_key(terms, pinned), flip: false, reversed: false },
    }
}

/// Orbit assignment before the lifted graph is assembled.
struct Partition {
    node_orbit_of: Vec<usize>,
    edge_orbit_of: Vec<usize>,
    edge_reversed: Vec<bool>,
    edge_flip: Vec<bool>,
}

fn renaming_partition(g: &PairwiseGroundModel, pinned: &[u32]) -> Partition {
    let mut node_ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let node_orbit_of = g
        .nodes
        .iter()
        .map(|n| {
            let key = canonical_pattern(&[&n.term], pinned).key;
            let next = node_ids.len();
            *node_ids.entry(key).or_insert(next)
        })
        .collect();
    let mut edge_ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut edge_orbit_of = Vec::with_capacity(g.edges.len());
    let mut edge_reversed = Vec::with_capacity(g.edges.len());
    let mut edge_flip = Vec::new();
    for e in &g.edges {
        let ck = canonical_pattern(&[&g.nodes[e.u].term, &g.nodes[e.v].term], pinned);
        let next = edge_ids.len();
        let id = *edge_ids.entry(ck.key).or_insert(next);
        if id == next {
            edge_flip.push(ck.flip);
        }
        edge_orbit_of.push(id);
        edge_reversed.push(ck.reversed);
    }
    Partition { node_orbit_of, edge_orbit_of, edge_reversed, edge_flip }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Orbits of the group generated by node permutations `gens`.
fn generator_partition(g: &PairwiseGroundModel, gens: &[Vec<usize>]) -> Result<Partition> {
    let n = g.num_nodes();
    let mut nodes: Vec<usize> = (0..n).collect();
    let mut arcs: Vec<usize> = (0..2 * g.num_edges()).collect();
    for perm in gens {
        if perm.len() != n {
            return Err(Error::Invalid(format!("generator acts on {} nodes, model has {n}", perm.len())));
        }
        for (i, &j) in perm.iter().enumerate() {
            union(&mut nodes, i, j);
        }
        for (k, e) in g.edges.iter().enumerate() {
            let (a, b) = (perm[e.u], perm[e.v]);
            let image = g.edge_between(a, b).ok_or_else(|| Error::Invalid(format!("generator maps edge {k} to a non-edge")))?;
            let dir = usize::from(a > b);
            union(&mut arcs, 2 * k, 2 * image + dir);
            union(&mut arcs, 2 * k + 1, 2 * image + 1 - dir);
        }
    }
    let mut node_ids: HashMap<usize, usize> = HashMap::new();
    let node_orbit_of = (0..n)
        .map(|i| {
            let root = find(&mut nodes, i);
            let next = node_ids.len();
            *node_ids.entry(root).or_insert(next)
        })
        .collect();
    // An edge orbit is identified by the arc class of its representative arc.
    let mut edge_ids: HashMap<usize, usize> = HashMap::new();
    let mut edge_orbit_of = Vec::new();
    let mut edge_reversed = Vec::new();
    let mut edge_flip = Vec::new();
    for k in 0..g.num_edges() {
        let fwd = find(&mut arcs, 2 * k);
        let rev = find(&mut arcs, 2 * k + 1);
        if let Some(&id) = edge_ids.get(&fwd) {
            edge_orbit_of.push(id);
            edge_reversed.push(false);
        } else if let Some(&id) = edge_ids.get(&rev) {
            edge_orbit_of.push(id);
            edge_reversed.push(true);
        } else {
            let id = edge_flip.len();
            edge_ids.insert(fwd, id);
            edge_flip.push(fwd == rev);
            edge_orbit_of.push(id);
            edge_reversed.push(false);
        }
    }
    Ok(Partition { node_orbit_of, edge_orbit_of, edge_reversed, edge_flip })
}

fn close_enough(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn letters(i: usize) -> String {
    const NAMES: [&str; 6] = ["x", "y", "z", "u", "w", "s"];
    NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("x{i}"))
}

/// Display pattern of a sequence of terms, constants renamed to variables.
fn display_pattern(g: &PairwiseGroundModel, nodes: &[usize], pinned: &[u32]) -> String {
    let mut seen: Vec<u32> = Vec::new();
    let mut name = |c: u32| {
        if pinned.contains(&c) {
            return format!("c{c}");
        }
        let p = seen.iter().position(|&s| s == c).unwrap_or_else(|| {
            seen.push(c);
            seen.len() - 1
        });
        letters(p)
    };
    let mut out = String::new();
    for (k, &i) in nodes.iter().enumerate() {
        if k > 0 {
            out.push('~');
        }
        match &g.nodes[i].term {
            NodeTerm::Atom { predicate, args } => {
                let args: Vec<String> = args.iter().map(|&c| name(c)).collect();
                let _ = write!(out, "{}({})", g.predicates[*predicate].name, args.join(","));
            }
            NodeTerm::Aux { formula, binding, .. } => {
                let args: Vec<String> = binding.iter().map(|&c| name(c)).collect();
                let _ = write!(out, "aux{formula}({})", args.join(","));
            }
            NodeTerm::Plain => {
                let _ = write!(out, "n{i}");
            }
        }
    }
    out
}

fn assemble(g: &PairwiseGroundModel, p: Partition, pinned: &[u32]) -> Result<LiftedGraph> {
    let mut offset = 0;
    let mut nodes: Vec<NodeOrbit> = Vec::new();
    for (i, &o) in p.node_orbit_of.iter().enumerate() {
        if o == nodes.len() {
            let card = g.nodes[i].card;
            nodes.push(NodeOrbit { id: o, size: 0, card, members: Vec::new(), pattern: display_pattern(g, &[i], pinned), offset, is_aux: g.is_aux(i) });
            offset += card;
        }
        let orbit = &mut nodes[o];
        let rep = orbit.members.first().copied().unwrap_or(i);
        for t in 0..orbit.card {
            if !close_enough(g.nodes[i].theta[t], g.nodes[rep].theta[t]) {
                return Err(Error::TyingViolation { first: g.node_label(rep), second: g.node_label(i) });
            }
        }
        orbit.members.push(i);
        orbit.size += 1;
    }

    let mut edges: Vec<EdgeOrbit> = Vec::new();
    for (k, &o) in p.edge_orbit_of.iter().enumerate() {
        let e = &g.edges[k];
        let reversed = p.edge_reversed[k];
        let (tail, head) = if reversed { (e.v, e.u) } else { (e.u, e.v) };
        if o == edges.len() {
            let cards = [g.nodes[tail].card, g.nodes[head].card];
            let flip = p.edge_flip[o];
            let mut slots = vec![0; cards[0] * cards[1]];
            let mut num_vars = 0;
            for t in 0..cards[0] {
                for h in 0..cards[1] {
                    slots[t * cards[1] + h] = if flip && h < t {
                        slots[h * cards[1] + t]
                    } else {
                        num_vars += 1;
                        offset + num_vars - 1
                    };
                }
            }
            edges.push(EdgeOrbit {
                id: o,
                size: 0,
                ends: [p.node_orbit_of[tail], p.node_orbit_of[head]],
                cards,
                flip,
                members: Vec::new(),
                pattern: display_pattern(g, &[tail, head], pinned),
                offset,
                slots,
                num_vars,
            });
            offset += num_vars;
        }
        let orbit = &mut edges[o];
        if let Some(&(rk, rrev)) = orbit.members.first() {
            let oriented = |k: usize, rev: bool, t: usize, h: usize| {
                let e = &g.edges[k];
                let cv = g.nodes[e.v].card;
                if rev {
                    h * cv + t
                } else {
                    t * cv + h
                }
            };
            for t in 0..orbit.cards[0] {
                for h in 0..orbit.cards[1] {
                    let (a, b) = (oriented(k, reversed, t, h), oriented(rk, rrev, t, h));
                    let rep = &g.edges[rk];
                    if !close_enough(e.theta[a], rep.theta[b]) || e.zeros[a] != rep.zeros[b] {
                        return Err(Error::TyingViolation {
                            first: format!("{}~{}", g.node_label(rep.u), g.node_label(rep.v)),
                            second: format!("{}~{}", g.node_label(e.u), g.node_label(e.v)),
                        });
                    }
                }
            }
        }
        orbit.members.push((k, reversed));
        orbit.size += 1;
    }

    let mut theta = vec![0.0; offset];
    let mut multiplicity = vec![0; offset];
    let mut zero = vec![false; offset];
    for (i, node) in g.nodes.iter().enumerate() {
        let orbit = &nodes[p.node_orbit_of[i]];
        for t in 0..node.card {
            theta[orbit.offset + t] += node.theta[t];
            multiplicity[orbit.offset + t] += 1;
        }
    }
    for orbit in &edges {
        for &(k, reversed) in &orbit.members {
            let e = &g.edges[k];
            let cv = g.nodes[e.v].card;
            for t in 0..orbit.cards[0] {
                for h in 0..orbit.cards[1] {
                    let slot = if reversed { h * cv + t } else { t * cv + h };
                    let var = orbit.var(t, h);
                    theta[var] += e.theta[slot];
                    multiplicity[var] += 1;
                    zero[var] = e.zeros[slot];
                }
            }
        }
    }

    Ok(LiftedGraph {
        nodes,
        edges,
        node_orbit_of: p.node_orbit_of,
        edge_orbit_of: p.edge_orbit_of,
        theta,
        multiplicity,
        zero,
        num_ground_nodes: g.num_nodes(),
        num_ground_edges: g.num_edges(),
    })
}

/// Lifted graph of `g` under its full symmetry group.
pub fn compute_orbits(g: &PairwiseGroundModel) -> Result<LiftedGraph> {
    match &g.symmetry {
        SymmetrySource::Renaming { .. } => assemble(g, renaming_partition(g, &[]), &[]),
        SymmetrySource::Generators(gens) => assemble(g, generator_partition(g, gens)?, &[]),
    }
}

/// Constants appearing in a ground node.
fn constants_of(term: &NodeTerm) -> Vec<u32> {
    match term {
        NodeTerm::Atom { args, .. } => args.clone(),
        NodeTerm::Aux { binding, .. } => binding.clone(),
        NodeTerm::Plain => Vec::new(),
    }
}

/// Lifted graph under the stabilizer of ground node `u`.
pub fn fix_node(g: &PairwiseGroundModel, u: usize) -> Result<LiftedGraph> {
    match &g.symmetry {
        SymmetrySource::Renaming { .. } => {
            let pinned = constants_of(&g.nodes[u].term);
            assemble(g, renaming_partition(g, &pinned), &pinned)
        }
        SymmetrySource::Generators(_) => {
            let stabilizer: Vec<Vec<usize>> = group_elements(g, 100_000)?.into_iter().filter(|perm| perm[u] == u).collect();
            assemble(g, generator_partition(g, &stabilizer)?, &[])
        }
    }
}

/// Node permutation induced by renaming constants with `perm`, if every image exists.
pub fn renaming_action(g: &PairwiseGroundModel, perm: &[u32]) -> Option<Vec<usize>> {
    let atom_image = |term: &NodeTerm| match term {
        NodeTerm::Atom { predicate, args } => g.node_of(&NodeTerm::Atom { predicate: *predicate, args: args.iter().map(|&c| perm[c as usize]).collect() }),
        _ => None,
    };
    g.nodes
        .iter()
        .map(|n| match &n.term {
            NodeTerm::Atom { .. } => atom_image(&n.term),
            NodeTerm::Aux { formula, binding, atoms } => {
                let mut image_atoms = [0; 3];
                for (slot, &a) in atoms.iter().enumerate() {
                    image_atoms[slot] = atom_image(&g.nodes[a].term)?;
                }
                g.node_of(&NodeTerm::Aux { formula: *formula, binding: binding.iter().map(|&c| perm[c as usize]).collect(), atoms: image_atoms })
            }
            NodeTerm::Plain => None,
        })
        .collect()
}

/// Every element of the symmetry group as a node permutation (at most `limit`).
pub fn group_elements(g: &PairwiseGroundModel, limit: usize) -> Result<Vec<Vec<usize>>> {
    let gens: Vec<Vec<usize>> = match &g.symmetry {
        SymmetrySource::Generators(gens) => gens.clone(),
        SymmetrySource::Renaming { domain_size } => {
            let mut out = Vec::new();
            permutations(*domain_size, limit, &mut |perm| {
                if let Some(action) = renaming_action(g, perm) {
                    out.push(action);
                }
            })?;
            return Ok(out);
        }
    };
    let identity: Vec<usize> = (0..g.num_nodes()).collect();
    let mut seen: HashSet<Vec<usize>> = HashSet::from([identity.clone()]);
    let mut queue = VecDeque::from([identity]);
    let mut out = Vec::new();
    while let Some(p) = queue.pop_front() {
        for gen in &gens {
            let q: Vec<usize> = p.iter().map(|&i| gen[i]).collect();
            if seen.insert(q.clone()) {
                if seen.len() > limit {
                    return Err(Error::TooLarge { states: seen.len() as u128, limit: limit as u128 });
                }
                queue.push_back(q);
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
fn permutations(n: usize, limit: usize, f: &mut impl FnMut(&[u32])) -> Result<()> {
    let count: u128 = (1..=n as u128).product();
    if count > limit as u128 {
        return Err(Error::TooLarge { states: count, limit: limit as u128 });
    }
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(())
}

/// Differences between a lifted graph and orbits found by enumerating the group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrbitReport {
    pub group_order: usize,
    pub mismatches: Vec<String>,
}

impl OrbitReport {
    pub fn is_match(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Checks `lg` against the orbits obtained by applying every group element.
/// Feasible for small groups only (renaming: `n <= 8`).
pub fn verify_orbits(lg: &LiftedGraph, g: &PairwiseGroundModel) -> Result<OrbitReport> {
    let elements = group_elements(g, 50_000)?;
    let mut report = OrbitReport { group_order: elements.len(), mismatches: Vec::new() };
    let n = g.num_nodes();
    let mut node_parent: Vec<usize> = (0..n).collect();
    let mut arc_parent: Vec<usize> = (0..2 * g.num_edges()).collect();
    for perm in &elements {
        for (i, &image) in perm.iter().enumerate().take(n) {
            union(&mut node_parent, i, image);
        }
        for (k, e) in g.edges.iter().enumerate() {
            let (a, b) = (perm[e.u], perm[e.v]);
            match g.edge_between(a, b) {
                Some(image) => {
                    let dir = usize::from(a > b);
                    union(&mut arc_parent, 2 * k, 2 * image + dir);
                }
                None => report.mismatches.push(format!("group element maps edge {k} to a non-edge")),
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let same_true = find(&mut node_parent, i) == find(&mut node_parent, j);
            let same_lifted = lg.node_orbit_of[i] == lg.node_orbit_of[j];
            if same_true != same_lifted {
                report.mismatches.push(format!("nodes {} / {}", g.node_label(i), g.node_label(j)));
            }
        }
    }
    let m = g.num_edges();
    for k in 0..m {
        let flip_true = find(&mut arc_parent, 2 * k) == find(&mut arc_parent, 2 * k + 1);
        if flip_true != lg.edges[lg.edge_orbit_of[k]].flip {
            report.mismatches.push(format!("flip flag of edge {k}"));
        }
        for l in k + 1..m {
            let (f, r) = (find(&mut arc_parent, 2 * l), find(&mut arc_parent, 2 * l + 1));
            let a = find(&mut arc_parent, 2 * k);
            let same_true = a == f || a == r;
            if same_true != (lg.edge_orbit_of[k] == lg.edge_orbit_of[l]) {
                report.mismatches.push(format!("edges {k} / {l}"));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{ground, parse_model};

    fn atom(p: usize, args: &[u32]) -> NodeTerm {
        NodeTerm::Atom { predicate: p, args: args.to_vec() }
    }

    #[test]
    fn canonical_keys() {
        let (a, b, c, d) = (0, 1, 2, 3);
        assert_eq!(canonical_pattern(&[&atom(0, &[a, b])], &[]), canonical_pattern(&[&atom(0, &[c, d])], &[]));
        assert_ne!(canonical_pattern(&[&atom(0, &[a, a])], &[]).key, canonical_pattern(&[&atom(0, &[c, d])], &[]).key);
        // first- vs second-argument incidence
        let k1 = canonical_pattern(&[&atom(1, &[a]), &atom(0, &[a, b])], &[]);
        let k2 = canonical_pattern(&[&atom(1, &[b]), &atom(0, &[a, b])], &[]);
        assert_ne!(k1.key, k2.key);
        let pair = canonical_pattern(&[&atom(1, &[a]), &atom(1, &[b])], &[]);
        assert!(pair.flip);
        // pinning splits
        assert_ne!(canonical_pattern(&[&atom(1, &[a])], &[a]).key, canonical_pattern(&[&atom(1, &[b])], &[a]).key);
    }

    #[test]
    fn ring_orbits() {
        let g = fixtures::ring(0.3);
        let lg = compute_orbits(&g).unwrap();
        assert_eq!(lg.nodes.iter().map(|v| v.size).collect::<Vec<_>>(), vec![5, 5]);
        assert_eq!(lg.edges.iter().map(|e| e.size).collect::<Vec<_>>(), vec![5, 5, 5]);
        let (b, r) = (0, 1);
        // edges are inserted red, blue, black per i
        let (re, be, ke) = (&lg.edges[0], &lg.edges[1], &lg.edges[2]);
        assert_eq!((re.degree(b), re.degree(r)), (1, 1));
        assert_eq!((be.degree(b), ke.degree(b)), (2, 2));
        assert!(!re.flip && be.flip && ke.flip);
        assert_eq!((re.num_vars, be.num_vars, ke.num_vars), (4, 3, 3));
        assert!(verify_orbits(&lg, &g).unwrap().is_match());
    }

    #[test]
    fn ring_linear_term_matches_ground() {
        let g = fixtures::ring(0.7);
        let lg = compute_orbits(&g).unwrap();
        let tau: Vec<f64> = (0..lg.num_vars()).map(|i| 0.1 + 0.05 * i as f64).collect();
        let lifted: f64 = lg.theta.iter().zip(&tau).map(|(a, b)| a * b).sum();
        let ground_tau = lg.expand(&g, &tau);
        let (node_off, edge_off, _) = g.offsets();
        let mut ground = 0.0;
        for (i, n) in g.nodes.iter().enumerate() {
            for t in 0..n.card {
                ground += n.theta[t] * ground_tau[node_off[i] + t];
            }
        }
        for (k, e) in g.edges.iter().enumerate() {
            for (s, th) in e.theta.iter().enumerate() {
                ground += th * ground_tau[edge_off[k] + s];
            }
        }
        assert!((lifted - ground).abs() < 1e-12);
        // projection inverts expansion
        let back = lg.project(&g, &ground_tau);
        for (x, y) in back.iter().zip(&tau) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_orbits() {
        let m = parse_model(fixtures::COMPLETE_GRAPH).unwrap();
        let g = ground(&m, 4, -1.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        assert_eq!(lg.nodes.len(), 1);
        assert_eq!(lg.nodes[0].size, 4);
        assert_eq!(lg.edges.len(), 1);
        let e = &lg.edges[0];
        assert_eq!((e.size, e.flip, e.degree(0)), (6, true, 2));
        for (a, b) in lg.theta.iter().zip([0.0, -4.0, -1.2, 0.0, -1.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(lg.multiplicity, vec![4, 4, 6, 12, 6]);

        let fixed = fix_node(&g, 0).unwrap();
        assert_eq!(fixed.nodes.iter().map(|v| v.size).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(fixed.edges.iter().map(|e| e.size).collect::<Vec<_>>(), vec![3, 3]);
    }

    #[test]
    fn verify_against_enumeration() {
        for (text, n) in [(fixtures::COMPLETE_GRAPH, 5), (fixtures::CLIQUE_CYCLE, 3), (fixtures::FRIENDS_SMOKERS, 3), ("", 3)] {
            let m = parse_model(text).unwrap();
            let g = ground(&m, n, 0.5).unwrap();
            let lg = compute_orbits(&g).unwrap();
            let report = verify_orbits(&lg, &g).unwrap();
            assert!(report.is_match(), "{:?}", report.mismatches);
            assert_eq!(lg.nodes.iter().map(|v| v.size).sum::<usize>(), g.num_nodes());
            assert_eq!(lg.edges.iter().map(|e| e.size).sum::<usize>(), g.num_edges());
        }
        let g = ground(&parse_model(fixtures::CLIQUE_CYCLE).unwrap(), 3, 0.5).unwrap();
        let lg = compute_orbits(&g).unwrap();
        let patterns: Vec<_> = lg.nodes.iter().map(|v| v.pattern.as_str()).collect();
        assert_eq!(patterns, vec!["Q1(x)", "Q2(x)", "Q3(x)"]);
    }

    #[test]
    fn stabilizer_orbits_match_enumeration() {
        // fix every node orbit representative and compare with brute-force stabilizers
        for g in [fixtures::ring(0.2), ground(&parse_model(fixtures::FRIENDS_SMOKERS).unwrap(), 3, 0.0).unwrap()] {
            let lg = compute_orbits(&g).unwrap();
            let elements = group_elements(&g, 10_000).unwrap();
            for v in &lg.nodes {
                let u = v.members[0];
                let fixed = fix_node(&g, u).unwrap();
                let stab: Vec<_> = elements.iter().filter(|p| p[u] == u).collect();
                let mut parent: Vec<usize> = (0..g.num_nodes()).collect();
                for p in &stab {
                    for i in 0..g.num_nodes() {
                        union(&mut parent, i, p[i]);
                    }
                }
                for i in 0..g.num_nodes() {
                    for j in 0..g.num_nodes() {
                        let same = find(&mut parent, i) == find(&mut parent, j);
                        assert_eq!(same, fixed.node_orbit_of[i] == fixed.node_orbit_of[j]);
                    }
                }
                assert_eq!(fixed.nodes[fixed.node_orbit_of[u]].size, 1);
            }
        }
    }

    #[test]
    fn tying_violation_detected() {
        let mut g = fixtures::ring(0.0);
        g.nodes[3].theta[1] = 0.5;
        assert!(matches!(compute_orbits(&g), Err(Error::TyingViolation { .. })));
    }

    #[test]
    fn single_node() {
        let g = ground(&parse_model("W V(x)").unwrap(), 1, 1.0).unwrap();
        let lg = compute_orbits(&g).unwrap();
        assert_eq!((lg.nodes.len(), lg.edges.len(), lg.nodes[0].size), (1, 0, 1));
        let fixed = fix_node(&g, 0).unwrap();
        assert_eq!(fixed.nodes.len(), 1);
    }
}

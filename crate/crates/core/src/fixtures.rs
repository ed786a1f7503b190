//! Bundled test models.

use crate::model::PairwiseGroundModel;

pub const COMPLETE_GRAPH: &str = include_str!("../models/complete_graph.mln");
pub const FRIENDS_SMOKERS: &str = include_str!("../models/friends_smokers.mln");
pub const CLIQUE_CYCLE: &str = include_str!("../models/clique_cycle.mln");

/// Bundled model text by short name.
pub fn model_text(name: &str) -> Option<&'static str> {
    match name {
        "complete-graph" => Some(COMPLETE_GRAPH),
        "friends-smokers" => Some(FRIENDS_SMOKERS),
        "clique-cycle" => Some(CLIQUE_CYCLE),
        _ => None,
    }
}

pub const RING_SIZE: usize = 5;

/// Ten-node ring model: blue nodes `B0..B4` (ids 0..5) on a 5-cycle with
/// chords `B_i - B_{i+2}`, and a red leaf `R_i` (id 5+i) hanging off each
/// `B_i`. Symmetric under the dihedral group of order 10. The blue unary
/// potential is `(0, w)`.
pub fn ring(w: f64) -> PairwiseGroundModel {
    let k = RING_SIZE;
    let rotate: Vec<usize> = (0..2 * k).map(|i| (i / k) * k + (i % k + 1) % k).collect();
    let reflect: Vec<usize> = (0..2 * k).map(|i| (i / k) * k + (k - i % k) % k).collect();
    let mut g = PairwiseGroundModel::with_generators(vec![rotate, reflect]);
    for _ in 0..k {
        g.add_node(2, vec![0.0, w]);
    }
    for _ in 0..k {
        g.add_node(2, vec![0.0, -0.5]);
    }
    for i in 0..k {
        // red: B_i -> R_i, deliberately asymmetric
        g.add_pairwise(i, k + i, &[0.8, -0.2, 0.1, 0.6]);
        // blue cycle and black chords
        g.add_pairwise(i, (i + 1) % k, &[0.5, -0.1, -0.1, 0.5]);
        g.add_pairwise(i, (i + 2) % k, &[-0.4, 0.2, 0.2, -0.4]);
    }
    g
}

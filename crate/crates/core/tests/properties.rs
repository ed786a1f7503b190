//! Invariants of the lifted machinery, checked against ground-level oracles.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use lifted_trw::lpsolve::solve;
use lifted_trw::model::{ground, parse_model, PairwiseGroundModel};
use lifted_trw::polytope::{build_outer, lifted_local, separate_cycles, ConstraintSystem, OuterBound};
use lifted_trw::spanning::{init_rho_uniform, lifted_kruskal, lifted_tree_value, SpanningTreeSolver};
use lifted_trw::symmetry::compute_orbits;
use lifted_trw::trw::{frank_wolfe, lifted_entropy_bound, lifted_objective, ConcaveObjective, FwOptions};
use lifted_trw::{fixtures, oracle};

fn bundled(name: &str, n: usize, w: f64) -> PairwiseGroundModel {
    if name == "ring" {
        return fixtures::ring(w);
    }
    ground(&parse_model(fixtures::model_text(name).unwrap()).unwrap(), n, w).unwrap()
}

const SMALL: [(&str, usize); 5] = [("ring", 0), ("complete-graph", 4), ("friends-smokers", 2), ("clique-cycle", 2), ("clique-cycle", 3)];

fn small_model() -> impl Strategy<Value = (&'static str, usize)> {
    prop::sample::select(SMALL.to_vec())
}

/// Binary pairwise model without symmetry information.
fn random_ground() -> impl Strategy<Value = PairwiseGroundModel> {
    (2usize..7).prop_flat_map(|n| {
        (prop::collection::vec(-2.0..2.0f64, n), prop::collection::vec((0..n, 0..n, prop::array::uniform4(-1.5..1.5f64)), 0..10))
            .prop_map(move |(theta, edges)| build(n, &theta, &edges, &(0..n).collect::<Vec<_>>()))
    })
}

fn build(n: usize, theta: &[f64], edges: &[(usize, usize, [f64; 4])], label: &[usize]) -> PairwiseGroundModel {
    let mut g = PairwiseGroundModel::with_generators(Vec::new());
    let mut inverse = vec![0; n];
    for (i, &l) in label.iter().enumerate() {
        inverse[l] = i;
    }
    for &old in &inverse {
        g.add_node(2, vec![0.0, theta[old]]);
    }
    for &(u, v, table) in edges {
        if u != v && g.edge_between(label[u], label[v]).is_none() {
            g.add_pairwise(label[u], label[v], &table);
        }
    }
    g
}

/// Random positive lifted vector that respects structural zeros.
fn random_lifted(zero: &[bool], seed: &[f64]) -> Vec<f64> {
    zero.iter().zip(seed.iter().cycle()).map(|(&z, &s)| if z { 0.0 } else { s }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn brute_force_invariant_under_relabeling(
        n in 2usize..7,
        theta in prop::collection::vec(-2.0..2.0f64, 6),
        edges in prop::collection::vec((0usize..6, 0usize..6, prop::array::uniform4(-1.5..1.5f64)), 0..10),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let edges: Vec<_> = edges.into_iter().map(|(u, v, t)| (u % n, v % n, t)).collect();
        let label: Vec<usize> = perm.into_iter().filter(|&p| p < n).collect();
        let a = oracle::brute_force(&build(n, &theta, &edges, &(0..n).collect::<Vec<_>>())).unwrap();
        let b = oracle::brute_force(&build(n, &theta, &edges, &label)).unwrap();
        prop_assert!((a.log_z - b.log_z).abs() < 1e-10);
        for (i, &l) in label.iter().enumerate() {
            prop_assert!((a.node_marginals[i][1] - b.node_marginals[l][1]).abs() < 1e-10);
        }
    }

    #[test]
    fn counting_elimination_matches_brute_force(n in 1usize..9, w in -2.0..2.0f64, w_e in -0.5..0.5f64) {
        let mut g = PairwiseGroundModel::with_generators(Vec::new());
        for _ in 0..n {
            g.add_node(2, vec![0.0, w]);
        }
        for i in 0..n {
            for j in i + 1..n {
                // both ordered pairs agree together
                g.add_pairwise(i, j, &[2.0 * w_e, 0.0, 0.0, 2.0 * w_e]);
            }
        }
        let exact = oracle::brute_force(&g).unwrap();
        let counted = oracle::counting_elimination_complete(n, w, w_e);
        prop_assert!((exact.log_z - counted.log_z).abs() < 1e-10);
        prop_assert!((exact.node_marginals[0][1] - counted.node_marginals[0][1]).abs() < 1e-10);
    }

    #[test]
    fn lifted_objective_equals_ground_on_expansion(
        (name, n) in small_model(),
        w in -2.0..2.0f64,
        seed in prop::collection::vec(0.01..1.0f64, 16),
    ) {
        let g = bundled(name, n, w);
        let lg = compute_orbits(&g).unwrap();
        let rho = init_rho_uniform(&lg, &g).unwrap();
        let tau = random_lifted(&lg.zero, &seed);
        let ground_tau = lg.expand(&g, &tau);
        let ground_rho = oracle::expand_rho(&lg, &rho);
        let lifted = lifted_objective(&lg, &rho).value(&tau);
        let grounded = oracle::ground_objective(&g, &ground_rho).value(&ground_tau);
        prop_assert!((lifted - grounded).abs() < 1e-9 * grounded.abs().max(1.0));
        let bound = lifted_entropy_bound(&lg, &tau, &rho);
        prop_assert!((bound - oracle::ground_entropy_bound(&g, &ground_tau, &ground_rho)).abs() < 1e-9 * bound.abs().max(1.0));
    }

    #[test]
    fn ground_gradient_matches_central_difference(g in random_ground(), seed in prop::collection::vec(0.05..0.95f64, 7)) {
        let rho = vec![0.5; g.num_edges()];
        let obj = oracle::ground_objective(&g, &rho);
        let tau: Vec<f64> = (0..obj.theta.len()).map(|j| seed[j % seed.len()]).collect();
        let mut grad = vec![0.0; tau.len()];
        obj.gradient(&tau, &mut grad);
        for j in 0..tau.len() {
            let (mut up, mut down) = (tau.clone(), tau.clone());
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let fd = (obj.value(&up) - obj.value(&down)) / 2e-6;
            prop_assert!((grad[j] - fd).abs() <= 1e-5 * grad[j].abs().max(1.0));
        }
    }

    #[test]
    fn lifted_kruskal_matches_ground((name, n) in small_model(), w in prop::collection::vec(-3.0..3.0f64, 12)) {
        let g = bundled(name, n, 0.0);
        let lg = compute_orbits(&g).unwrap();
        let w = &w[..lg.edges.len()];
        let rho = lifted_kruskal(&lg, &g, w).unwrap();
        let (_, value) = oracle::ground_kruskal(&g, &oracle::expand_rho(&lg, w)).unwrap();
        prop_assert!((lifted_tree_value(&lg, &rho, w) - value).abs() < 1e-9);
        let count: f64 = lg.edges.iter().zip(&rho).map(|(e, r)| e.size as f64 * r).sum();
        prop_assert!((count - (lg.num_ground_nodes as f64 - 1.0)).abs() < 1e-9);
        prop_assert!(rho.iter().all(|&r| (-1e-12..=1.0 + 1e-12).contains(&r)));
        if g.num_nodes() <= 20 {
            prop_assert!(oracle::in_spanning_tree_polytope(&g, &oracle::expand_rho(&lg, &rho), 1e-9).unwrap());
        }
    }

    #[test]
    fn component_counts_match_union_find((name, n) in small_model(), subset in prop::collection::vec(any::<bool>(), 12)) {
        let g = bundled(name, n, 0.0);
        let lg = compute_orbits(&g).unwrap();
        let orbits: Vec<usize> = (0..lg.edges.len()).filter(|&e| subset[e]).collect();
        let lifted = SpanningTreeSolver::new(&lg, &g).count_components(&orbits).unwrap();
        let mut parent: Vec<usize> = (0..g.num_nodes()).collect();
        fn find(p: &mut [usize], mut v: usize) -> usize {
            while p[v] != v {
                v = p[v];
            }
            v
        }
        // only nodes of orbits touched by the selection count
        let touched: Vec<usize> = orbits.iter().flat_map(|&e| lg.edges[e].ends).collect();
        let mut components = (0..g.num_nodes()).filter(|&i| touched.contains(&lg.node_orbit_of[i])).count();
        for (k, e) in g.edges.iter().enumerate() {
            if orbits.contains(&lg.edge_orbit_of[k]) {
                let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                if a != b {
                    parent[a] = b;
                    components -= 1;
                }
            }
        }
        prop_assert_eq!(lifted, components);
    }

    #[test]
    fn exchangeable_moments_are_feasible(n in 2usize..9, seed in any::<u64>()) {
        let g = bundled("complete-graph", n, 0.0);
        let lg = compute_orbits(&g).unwrap();
        let cs = build_outer(&lg, &g, OuterBound::LocalExch);
        let m = oracle::random_exchangeable_moments(n, seed);
        prop_assert!(cs.max_violation(&lifted_trw::validate::exchangeable_point(&lg, &m)) <= 1e-12);
    }

    #[test]
    fn exact_moments_satisfy_lifted_outer_bounds((name, n) in small_model(), w in -2.0..2.0f64) {
        let g = bundled(name, n, w);
        let lg = compute_orbits(&g).unwrap();
        let tau = oracle::brute_force(&g).unwrap().lifted(&lg, &g);
        prop_assert!(lifted_local(&lg).max_violation(&tau) <= 1e-9);
        let mut pool = ConstraintSystem::new(lg.num_vars());
        prop_assert!(separate_cycles(&lg, &g, &tau, &mut pool).is_empty());
    }

    #[test]
    fn tighter_outer_bounds_have_smaller_lp_optima((name, n) in small_model(), c in prop::collection::vec(-1.0..1.0f64, 64)) {
        let g = bundled(name, n, 0.0);
        let lg = compute_orbits(&g).unwrap();
        let c = &c[..lg.num_vars().min(c.len())];
        let local = solve(&build_outer(&lg, &g, OuterBound::Local).to_lp(c), None).unwrap();
        let exch = solve(&build_outer(&lg, &g, OuterBound::LocalExch).to_lp(c), None).unwrap();
        prop_assert!(exch.objective <= local.objective + 1e-9);
        // a local vertex expands to a ground-local point
        let ground_local = oracle::ground_local(&g);
        prop_assert!(ground_local.max_violation(&lg.expand(&g, &local.x[..lg.num_vars()])) <= 1e-9);
    }
}

#[test]
fn bounds_dominate_log_partition_on_random_fields() {
    for (i, w) in [-1.7, -0.3, 0.9, 1.6].into_iter().enumerate() {
        let g = bundled(SMALL[i % SMALL.len()].0, SMALL[i % SMALL.len()].1, w);
        let lg = compute_orbits(&g).unwrap();
        let rho = init_rho_uniform(&lg, &g).unwrap();
        let exact = oracle::brute_force(&g).unwrap().log_z;
        for outer in OuterBound::ALL {
            let res = frank_wolfe(&lg, &g, outer, &rho, &FwOptions::default()).unwrap();
            assert!(res.bound >= exact - 1e-8, "{outer} at W={w}: {} < {exact}", res.bound);
            assert!(res.objectives.windows(2).all(|p| p[1] >= p[0]));
        }
    }
}

#[test]
fn symmetric_optimum_matches_ground_marginals() {
    let g = fixtures::ring(0.3);
    let lg = compute_orbits(&g).unwrap();
    let rho = init_rho_uniform(&lg, &g).unwrap();
    let opts = FwOptions { tol: 1e-8, away_steps: true, ..FwOptions::default() };
    let lifted = frank_wolfe(&lg, &g, OuterBound::Local, &rho, &opts).unwrap();
    let ground = oracle::ground_trw(&g, &oracle::expand_rho(&lg, &rho), OuterBound::Local, &opts).unwrap();
    for (i, m) in ground.node_marginals.iter().enumerate() {
        assert_abs_diff_eq!(m[1], lifted.node_marginals[lg.node_orbit_of[i]][1], epsilon = 1e-3);
    }
}

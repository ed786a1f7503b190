//! A quick cross-check suite between the lifted machinery and the ground
//! oracles, small enough to run from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fixtures;
use crate::model::{ground, parse_model};
use crate::oracle;
use crate::polytope::{exchangeable_cluster, exchangeable_constraints, lifted_local, OuterBound};
use crate::spanning::{init_rho_uniform, lifted_kruskal, lifted_tree_value};
use crate::symmetry::{compute_orbits, verify_orbits, LiftedGraph};
use crate::trw::{entropy_coefficients, frank_wolfe, FwOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

/// Lifted vector of an exchangeable distribution on a single-cluster model,
/// followed by its count probabilities `c_k`.
pub fn exchangeable_point(lg: &LiftedGraph, m: &oracle::ExchangeableMoments) -> Vec<f64> {
    let mut x = vec![0.0; lg.num_vars()];
    let v = &lg.nodes[0];
    x[v.offset] = 1.0 - m.marginal;
    x[v.offset + 1] = m.marginal;
    let e = &lg.edges[0];
    x[e.var(0, 0)] = m.pair[0];
    x[e.var(0, 1)] = m.pair[1];
    x[e.var(1, 1)] = m.pair[3];
    x.extend_from_slice(&m.counts);
    x
}

/// Runs every check; each takes well under a second.
pub fn run_suite() -> Vec<Check> {
    let precise = FwOptions { tol: 1e-7, away_steps: true, ..FwOptions::default() };
    vec![
        check("ring orbits match group enumeration", || {
            let g = fixtures::ring(0.5);
            let lg = compute_orbits(&g)?;
            let report = verify_orbits(&lg, &g)?;
            let shape = (lg.nodes.len(), lg.edges.len());
            Ok((report.is_match() && shape == (2, 3), format!("{} node / {} edge orbits, group order {}", shape.0, shape.1, report.group_order)))
        }),
        check("ring entropy coefficients", || {
            let lg = compute_orbits(&fixtures::ring(0.0))?;
            let (node, edge) = entropy_coefficients(&lg, &[1.0, 0.4, 0.4]);
            Ok((node == [8.0, 0.0] && edge == [-5.0, -2.0, -2.0], format!("node {node:?} edge {edge:?}")))
        }),
        check("ring uniform edge appearances", || {
            let g = fixtures::ring(0.0);
            let lg = compute_orbits(&g)?;
            let rho = init_rho_uniform(&lg, &g)?;
            let err = rho.iter().zip([1.0, 0.4, 0.4]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((err < 1e-6, format!("rho {rho:?}")))
        }),
        check("lifted kruskal equals ground kruskal", || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let g = fixtures::ring(0.0);
            let lg = compute_orbits(&g)?;
            let mut worst: f64 = 0.0;
            for _ in 0..10 {
                let w: Vec<f64> = (0..lg.edges.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let lifted = lifted_tree_value(&lg, &lifted_kruskal(&lg, &g, &w)?, &w);
                let ground_w = oracle::expand_rho(&lg, &w);
                worst = worst.max((lifted - oracle::ground_kruskal(&g, &ground_w)?.1).abs());
            }
            Ok((worst < 1e-9, format!("max difference {worst:.2e}")))
        }),
        check("counting elimination equals brute force", || {
            let m = parse_model(fixtures::COMPLETE_GRAPH)?;
            let mut worst: f64 = 0.0;
            for w in [-1.0, 0.0, 1.5] {
                let exact = oracle::brute_force(&ground(&m, 6, w)?)?.log_z;
                worst = worst.max((exact - oracle::counting_elimination_complete(6, w, -0.1).log_z).abs());
            }
            Ok((worst < 1e-10, format!("max difference {worst:.2e}")))
        }),
        check("exchangeable rows hold on exact moments", || {
            let g = ground(&parse_model(fixtures::COMPLETE_GRAPH)?, 5, 0.0)?;
            let lg = compute_orbits(&g)?;
            let mut cs = lifted_local(&lg);
            exchangeable_constraints(&mut cs, &lg, &exchangeable_cluster(&lg, 0)?);
            let mut worst: f64 = 0.0;
            for seed in 0..5 {
                let x = exchangeable_point(&lg, &oracle::random_exchangeable_moments(5, seed));
                worst = worst.max(cs.max_violation(&x));
            }
            Ok((worst < 1e-12, format!("max violation {worst:.2e}")))
        }),
        check("lifted and ground TRW agree on the ring", || {
            let g = fixtures::ring(1.0);
            let lg = compute_orbits(&g)?;
            let rho = init_rho_uniform(&lg, &g)?;
            let mut worst: f64 = 0.0;
            for outer in [OuterBound::Local, OuterBound::Cycle] {
                let lifted = frank_wolfe(&lg, &g, outer, &rho, &precise)?.bound;
                let grounded = oracle::ground_trw(&g, &oracle::expand_rho(&lg, &rho), outer, &precise)?.bound;
                worst = worst.max((lifted - grounded).abs());
            }
            Ok((worst < 1e-5, format!("max difference {worst:.2e}")))
        }),
        check("bounds dominate exact log Z", || {
            let mut slack = f64::INFINITY;
            for (text, n) in [(fixtures::COMPLETE_GRAPH, 4), (fixtures::FRIENDS_SMOKERS, 2), (fixtures::CLIQUE_CYCLE, 2)] {
                let g = ground(&parse_model(text)?, n, 0.8)?;
                let lg = compute_orbits(&g)?;
                let rho = init_rho_uniform(&lg, &g)?;
                let exact = oracle::brute_force(&g)?.log_z;
                for outer in OuterBound::ALL {
                    slack = slack.min(frank_wolfe(&lg, &g, outer, &rho, &FwOptions::default())?.bound - exact);
                }
            }
            Ok((slack >= -1e-8, format!("min bound - log Z = {slack:.3e}")))
        }),
    ]
}

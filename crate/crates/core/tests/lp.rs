//! The simplex against an independent LP solver, and warm against cold starts.

use approx::assert_abs_diff_eq;
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;

use lifted_trw::lpsolve::{solve, LinearProgram, Relation, Row, Simplex};

/// Random boxed LP with `x = 0` feasible.
fn random_lp() -> impl Strategy<Value = LinearProgram> {
    (2usize..7, 1usize..6).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-1.0..1.0f64, n),
            prop::collection::vec((prop::collection::vec(-1.0..1.0f64, n), 0.2..2.0f64, any::<bool>()), m),
            prop::collection::vec(0.5..2.0f64, n),
        )
            .prop_map(move |(c, rows, upper)| LinearProgram {
                objective: c,
                rows: rows
                    .into_iter()
                    .map(|(a, b, eq)| {
                        // equalities through the origin keep x = 0 feasible
                        let (relation, rhs) = if eq { (Relation::Eq, 0.0) } else { (Relation::Le, b) };
                        Row { coeffs: a.into_iter().enumerate().collect(), relation, rhs }
                    })
                    .collect(),
                lower: vec![0.0; n],
                upper,
            })
    })
}

fn reference(lp: &LinearProgram) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = lp.objective.iter().zip(lp.lower.iter().zip(&lp.upper)).map(|(&c, (&l, &u))| p.add_var(c, (l, u))).collect();
    for row in &lp.rows {
        let expr: Vec<_> = row.coeffs.iter().map(|&(j, a)| (vars[j], a)).collect();
        let op = match row.relation {
            Relation::Eq => ComparisonOp::Eq,
            Relation::Le => ComparisonOp::Le,
        };
        p.add_constraint(expr.as_slice(), op, row.rhs);
    }
    p.solve().expect("feasible and bounded").solution().expect("solved").objective()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_reference_solver(lp in random_lp()) {
        let sol = solve(&lp, None).unwrap();
        prop_assert!((sol.objective - reference(&lp)).abs() < 1e-7);
        for row in &lp.rows {
            prop_assert!(row.violation(&sol.x) <= 1e-8);
        }
        for (j, &x) in sol.x.iter().enumerate() {
            prop_assert!(x >= lp.lower[j] - 1e-8 && x <= lp.upper[j] + 1e-8);
        }
    }

    #[test]
    fn warm_start_after_objective_change(lp in random_lp(), c2 in prop::collection::vec(-1.0..1.0f64, 6)) {
        let mut s = Simplex::new(lp.lower.clone(), lp.upper.clone()).unwrap();
        s.add_rows(&lp.rows);
        s.set_objective(&lp.objective);
        s.solve().unwrap();
        let mut next = lp.clone();
        next.objective = c2[..lp.objective.len()].to_vec();
        s.set_objective(&next.objective);
        let warm = s.solve().unwrap();
        let cold = solve(&next, None).unwrap();
        prop_assert!((warm.objective - cold.objective).abs() < 1e-8);
    }

    #[test]
    fn warm_start_after_cut(lp in random_lp(), cut in prop::collection::vec(0.0..1.0f64, 6)) {
        let mut s = Simplex::new(lp.lower.clone(), lp.upper.clone()).unwrap();
        s.add_rows(&lp.rows);
        s.set_objective(&lp.objective);
        let first = s.solve().unwrap();
        // cut off the current optimum while keeping the origin
        let coeffs: Vec<(usize, f64)> = cut[..lp.objective.len()].iter().copied().enumerate().collect();
        let row = Row { coeffs, relation: Relation::Le, rhs: 0.5 * first.x.iter().zip(&cut).map(|(x, a)| x * a).sum::<f64>() };
        s.add_rows(std::slice::from_ref(&row));
        let warm = s.solve().unwrap();
        let mut cold_lp = lp.clone();
        cold_lp.rows.push(row);
        prop_assert!((warm.objective - solve(&cold_lp, None).unwrap().objective).abs() < 1e-8);
    }
}

#[test]
fn degenerate_vertex() {
    // three rows meet at (1, 1); max x + y
    let row = |a: f64, b: f64, rhs: f64| Row { coeffs: vec![(0, a), (1, b)], relation: Relation::Le, rhs };
    let lp = LinearProgram {
        objective: vec![1.0, 1.0],
        rows: vec![row(1.0, 1.0, 2.0), row(1.0, 0.0, 1.0), row(0.0, 1.0, 1.0)],
        lower: vec![0.0; 2],
        upper: vec![3.0; 2],
    };
    let sol = solve(&lp, None).unwrap();
    assert_abs_diff_eq!(sol.objective, 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.objective, reference(&lp), epsilon = 1e-9);
}

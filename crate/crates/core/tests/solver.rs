use msafe::lasso::{substitute, BlockUpdate, GroupProblem, SolverOptions, Storage};
use msafe::penalty::PenaltyMatrix;
use msafe::sparse::CsrMatrix;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, n: usize, sizes: &[usize]) -> GroupProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = sizes
        .iter()
        .map(|&d| {
            let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let pen = PenaltyMatrix::new(&b * b.transpose() + DMatrix::identity(d, d)).unwrap();
            substitute(&CsrMatrix::from_dense(&a), &pen, Storage::Factored).unwrap()
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    GroupProblem::new(groups, y).unwrap()
}

#[test]
fn warm_started_path_matches_cold_solves() {
    let p = problem(3, 18, &[3, 2, 4, 1]);
    let lm = p.lambda_max();
    let lambdas: Vec<f64> = (0..6).map(|i| lm * 0.6f64.powi(i)).collect();
    let opts = SolverOptions { tol: 1e-11, ..Default::default() };
    let path = p.solve_path(&lambdas, &opts).unwrap();
    for (l, warm) in lambdas.iter().zip(&path) {
        let cold = p.solve(*l, None, &opts).unwrap();
        let (a, b) = (p.objective(&warm.u, *l), p.objective(&cold.u, *l));
        assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
    // at λ_max the top group sits on the boundary; just above it nothing is active
    let above = p.solve(lm * (1.0 + 1e-9), None, &opts).unwrap();
    assert!(above.report.active_groups.is_empty());
    assert!(path[0].u.iter().flatten().all(|v| v.abs() < 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kkt_holds_at_the_solution(
        seed in 0u64..10_000,
        sizes in proptest::collection::vec(1usize..5, 1..6),
        frac in 0.01f64..1.2,
        exact in any::<bool>(),
    ) {
        let p = problem(seed, 15, &sizes);
        let lambda = frac * p.lambda_max();
        let update = if exact { BlockUpdate::Exact } else { BlockUpdate::Majorize };
        let sol = p.solve(lambda, None, &SolverOptions { tol: 1e-12, update, ..Default::default() }).unwrap();
        prop_assert!(sol.report.converged);
        prop_assert!(p.kkt_residual(&sol.u, lambda) < 1e-7);
        if frac >= 1.0 {
            prop_assert!(sol.report.active_groups.is_empty());
        }
        // the objective never exceeds that of the zero solution
        prop_assert!(p.objective(&sol.u, lambda) <= p.objective(&p.zeros(), lambda) + 1e-12);
    }

    #[test]
    fn row_permutation_does_not_change_the_optimum(seed in 0u64..1000) {
        let p = problem(seed, 12, &[2, 3]);
        let mut rows: Vec<usize> = (0..12).collect();
        rows.reverse();
        let q = p.select_rows(&rows).unwrap();
        let lambda = 0.2 * p.lambda_max();
        let opts = SolverOptions { tol: 1e-12, ..Default::default() };
        let (a, b) = (p.solve(lambda, None, &opts).unwrap(), q.solve(lambda, None, &opts).unwrap());
        let (oa, ob) = (p.objective(&a.u, lambda), q.objective(&b.u, lambda));
        prop_assert!((oa - ob).abs() <= 1e-9 * oa.max(1.0));
    }
}

use std::sync::Arc;

use proptest::prelude::*;
use rcm_core::eigen::{self, SolverOptions};
use rcm_core::environment::{ConductanceLaw, Environment, SpeedField};
use rcm_core::experiments::{survival_g, ExperimentConfig};
use rcm_core::lattice::BoxLattice;
use rcm_core::operator::{dirichlet_energy, ActiveSet, DirichletOperator, SymmetricOperator};
use rcm_core::percolation::{label_clusters, open_edges, PercolationPartition};
use rcm_core::theory;

fn pareto(gamma: f64) -> ConductanceLaw {
    ConductanceLaw::pareto(gamma, 1.0).unwrap()
}

fn sample(d: usize, n: usize, gamma: f64, seed: u64) -> Environment {
    Environment::sample(Arc::new(BoxLattice::new(d, n).unwrap()), pareto(gamma), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn restriction_matches_direct_sampling(seed in any::<u64>(), inner in 1usize..5, extra in 1usize..4, d in 2usize..4) {
        let outer = sample(d, inner + extra, 0.1, seed);
        let direct = sample(d, inner, 0.1, seed);
        let restricted = outer.restrict(inner).unwrap();
        prop_assert_eq!(restricted.weights(), direct.weights());
    }

    #[test]
    fn conductances_are_positive_and_bounded(seed in any::<u64>(), gamma in 0.02f64..0.24) {
        let env = sample(2, 4, gamma, seed);
        prop_assert!(env.weights().iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn operator_is_symmetric_and_matches_energy(seed in any::<u64>(), n in 1usize..5, drop in 0usize..4) {
        let env = sample(2, n, 0.1, seed);
        let field = SpeedField::new(&env, drop.min(env.lattice().site_count() - 1) + 1).unwrap();
        let active = ActiveSet::deflated(env.lattice(), field.minimizers(), drop.min(field.minimizers().len() - 1) + 1).unwrap();
        let op = DirichletOperator::assemble(&env, &active).unwrap();
        prop_assert!(op.is_symmetric());
        let f: Vec<f64> = (0..op.dim()).map(|i| ((i * 37 + seed as usize % 11) % 13) as f64 - 6.0).collect();
        let q = op.bilinear(&f, &f).unwrap();
        let e = dirichlet_energy(&env, &active, &active.extend(&f)).unwrap();
        prop_assert!(q >= 0.0);
        prop_assert!((q - e).abs() <= 1e-12 * q.abs().max(1e-300));
    }

    #[test]
    fn speed_field_order_statistics(seed in any::<u64>(), count in 1usize..10) {
        let env = sample(2, 3, 0.1, seed);
        let field = SpeedField::new(&env, count).unwrap();
        let sorted = field.sorted();
        prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        for k in 1..=count {
            prop_assert_eq!(field.pi_k(k), field.pi()[field.minimizer(k)]);
        }
        let mut mins = field.minimizers().to_vec();
        mins.sort_unstable();
        mins.dedup();
        prop_assert_eq!(mins.len(), count);
    }

    #[test]
    fn solver_output_invariants(seed in any::<u64>(), n in 4usize..8, k in 1usize..6) {
        let env = sample(2, n, 0.1, seed);
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        let opts = SolverOptions { tol: 1e-9, ..Default::default() };
        let res = eigen::solve_bottom_k(&op, k, &opts).unwrap();
        prop_assert!(res.all_converged());
        prop_assert!(res.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(eigen::check_orthonormality(&res.eigenvectors) < 1e-10);
        let floor = 1e-14 * op.diagonal().iter().fold(0.0f64, |m, &x| m.max(x));
        for (i, (&l, &r)) in res.eigenvalues.iter().zip(&res.residual_norms).enumerate() {
            let v = &res.eigenvectors[i];
            prop_assert!(r <= opts.tol * l.max(floor) || r <= eigen::rounding_floor(&op, v));
            prop_assert!(l > 0.0);
            prop_assert!((eigen::residual_norm(&op, v, l) - r).abs() <= 1e-12 * l.max(floor) + eigen::rounding_floor(&op, v));
        }
        let field = SpeedField::new(&env, k).unwrap();
        for m in 1..=k {
            let recs = theory::mu_upper_bound(&op, &field, &res.eigenvalues, 1, m, n).unwrap();
            prop_assert!(recs.iter().all(|r| r.holds || r.kind != theory::CheckKind::Exact));
        }
    }

    #[test]
    fn principal_vector_is_nonnegative(seed in any::<u64>(), n in 3usize..7) {
        let env = sample(2, n, 0.1, seed);
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        let res = eigen::solve_bottom_k(&op, 1, &SolverOptions::default()).unwrap();
        let fixed = eigen::principal_sign_fix(res, &op, 1e-9).unwrap();
        let v = &fixed.eigenvectors[0];
        let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(v.iter().all(|&x| x >= -1e-8 * top));
    }

    #[test]
    fn open_edges_join_clusters(seed in any::<u64>(), n in 2usize..6, threshold in 1e-6f64..0.5) {
        let env = sample(2, n, 0.1, seed);
        let open = open_edges(&env, threshold);
        let labels = label_clusters(env.lattice(), &open).unwrap();
        for (e, edge) in env.lattice().edges().iter().enumerate() {
            if let (true, Some(a), Some(b)) = (open[e], edge.lower, edge.upper) {
                prop_assert_eq!(labels[a], labels[b]);
            }
        }
        let part = PercolationPartition::with_threshold(&env, n, threshold);
        if let Ok(p) = part {
            prop_assert_eq!(p.holes().len() + p.giant_size(), env.lattice().site_count());
            prop_assert!(p.holes().iter().all(|&s| !p.in_giant(s)));
        }
    }

    #[test]
    fn survival_is_monotone(z in 0.0f64..1e6, k in 1usize..8, gamma in 0.02f64..0.24) {
        let g = survival_g(k, z, 2, gamma);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!(survival_g(k + 1, z, 2, gamma) >= g);
        prop_assert!(survival_g(k, z * 1.5 + 1e-9, 2, gamma) <= g);
    }

    #[test]
    fn cdf_inverts(p in 1e-12f64..1.0, gamma in 0.02f64..0.24, beta in 0.2f64..3.0) {
        for law in [pareto(gamma), ConductanceLaw::log_singular(beta, 0.5).unwrap()] {
            let u = law.inverse_cdf(p);
            if u == f64::MIN_POSITIVE {
                // Underflow floor: the exact quantile is below the smallest normal.
                continue;
            }
            // Floating-point powers lose about 1/gamma ulps in the round trip.
            prop_assert!((law.cdf(u) - p).abs() <= 1e-12 * p / gamma.min(beta) + 1e-300);
        }
    }

    #[test]
    fn config_text_round_trips(trials in 1usize..5000, k in 1usize..17, seed in any::<u64>(), gamma in 0.02f64..0.24) {
        let cfg = ExperimentConfig { trials, k, seed, law: pareto(gamma), ..Default::default() };
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_key_value()).unwrap(), cfg);
    }
}

#[test]
fn operator_apply_is_linear() {
    let env = sample(2, 3, 0.1, 5);
    let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
    let x: Vec<f64> = (0..op.dim()).map(|i| i as f64).collect();
    let y: Vec<f64> = (0..op.dim()).map(|i| (i % 3) as f64).collect();
    let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a + b).collect();
    let lhs = op.apply(&sum).unwrap();
    let (ax, ay) = (op.apply(&x).unwrap(), op.apply(&y).unwrap());
    for i in 0..op.dim() {
        assert!((lhs[i] - 2.0 * ax[i] - ay[i]).abs() <= 1e-12);
    }
}

//! Criterion computations shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcm_core::eigen::{self, EigenSolveResult, SolverOptions};
use rcm_core::environment::{ConductanceLaw, Environment, SpeedField};
use rcm_core::lattice::BoxLattice;
use rcm_core::operator::{ActiveSet, DenseSymmetric, DirichletOperator};
use rcm_core::percolation::points_b_sparse_violation;
use rcm_core::theory::{self, CheckKind, Context, DiagnosticRecord, Reference};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub fn law() -> ConductanceLaw {
    ConductanceLaw::pareto(0.1, 1.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn env(n: usize, seed: u64) -> Environment {
    Environment::sample(Arc::new(BoxLattice::new(2, n).unwrap()), law(), seed)
}

pub fn full_operator(env: &Environment) -> DirichletOperator {
    DirichletOperator::assemble(env, &ActiveSet::full(env.lattice())).unwrap()
}

fn tight() -> SolverOptions {
    SolverOptions { tol: 1e-10, ..Default::default() }
}

/// Environment-driven cases: radii 4..=8 cycling, seeds `1000 + i`.
pub fn oracle_cases(count: usize) -> Vec<(Environment, EigenSolveResult, EigenSolveResult)> {
    (0..count)
        .map(|i| {
            let e = env(4 + i % 5, 1000 + i as u64);
            let op = full_operator(&e);
            let iterative = eigen::solve_bottom_k(&op, 5, &tight()).unwrap();
            let dense = eigen::dense_oracle(&op).unwrap();
            (e, iterative, dense)
        })
        .collect()
}

/// Bottom five eigenvalues of the block solver against the dense oracle.
pub fn oracle_equivalence(cases: &[(Environment, EigenSolveResult, EigenSolveResult)]) -> Verdict {
    let mut worst = 0.0f64;
    let mut unconverged = 0;
    for (_, it, dense) in cases {
        if !it.all_converged() {
            unconverged += 1;
        }
        for (a, b) in it.eigenvalues.iter().zip(&dense.eigenvalues) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    Verdict::new(
        worst <= 1e-8 && unconverged == 0,
        format!("{} environments, max relative error {worst:.2e}, unconverged {unconverged}", cases.len()),
    )
}

fn random_symmetric(n: usize, r: &mut ChaCha8Rng) -> DenseSymmetric {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let x = 2.0 * uniform(r) - 1.0;
            a[i * n + j] = x;
            a[j * n + i] = x;
        }
    }
    DenseSymmetric::from_row_major(n, a).unwrap()
}

fn count_exact(records: &[DiagnosticRecord]) -> (usize, usize) {
    let exact = records.iter().filter(|r| r.kind == CheckKind::Exact);
    let total = exact.clone().count();
    let held = exact.filter(|r| r.holds).count();
    (held, total)
}

/// Residual certificates for perturbed eigenvectors of random 20-dim
/// symmetric matrices and for block-solver pairs of environment operators.
pub fn bauer_fike(random_cases: usize, env_cases: &[(Environment, EigenSolveResult, EigenSolveResult)]) -> Verdict {
    let mut r = rng(77);
    let mut records = Vec::new();
    for case in 0..random_cases {
        let m = random_symmetric(20, &mut r);
        let spec = eigen::dense_spectrum(&m);
        let i = case % 20;
        let scale = 10f64.powi(-((case % 6) as i32) - 1);
        let mut u: Vec<f64> = spec.eigenvectors[i].iter().map(|x| x + scale * (2.0 * uniform(&mut r) - 1.0)).collect();
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= un);
        let mu = spec.eigenvalues[i] + scale * (uniform(&mut r) - 0.5);
        let reference = Reference { spectrum: &spec, complete: true };
        let beta = 0.5;
        records.extend(
            theory::bauer_fike_assert("bauer_fike", &m, reference, &u, mu, Some(beta), Context::new(0, i + 1, 0, 0))
                .unwrap(),
        );
    }
    for (e, it, dense) in env_cases {
        let op = full_operator(e);
        for k in 0..it.len() {
            let reference = Reference { spectrum: dense, complete: true };
            let ctx = Context::new(e.lattice().radius(), k + 1, 1, 0);
            records.extend(
                theory::bauer_fike_assert("bauer_fike", &op, reference, &it.eigenvectors[k], it.eigenvalues[k], None, ctx)
                    .unwrap(),
            );
        }
    }
    let (held, total) = count_exact(&records);
    Verdict::new(
        held == total && total > 0,
        format!("{random_cases} random + {} environment cases, {held}/{total} certificates hold", env_cases.len()),
    )
}

/// `v_m(z)^2 <= t` whenever `v_j(z)^2 >= 1 - t` for orthonormal pairs.
pub fn orthogonality(pairs: usize) -> Verdict {
    let mut r = rng(91);
    let dim = 12;
    let mut held = 0;
    let mut evaluated = 0;
    for i in 0..pairs {
        let z = i % dim;
        let spread = uniform(&mut r);
        let mut vj: Vec<f64> = (0..dim).map(|_| spread * (2.0 * uniform(&mut r) - 1.0)).collect();
        vj[z] += 1.0;
        normalize(&mut vj);
        let mut vm: Vec<f64> = (0..dim).map(|_| 2.0 * uniform(&mut r) - 1.0).collect();
        for _ in 0..2 {
            let c: f64 = vj.iter().zip(&vm).map(|(a, b)| a * b).sum();
            vm.iter_mut().zip(&vj).for_each(|(b, a)| *b -= c * a);
        }
        normalize(&mut vm);
        let t = (1.0 - vj[z] * vj[z]) + uniform(&mut r) * vj[z] * vj[z] * 0.1;
        let rec = theory::orth_mass_bound(&vj, &vm, z, t, Context::new(0, 2, 1, 1)).unwrap();
        if rec.kind == CheckKind::Exact {
            evaluated += 1;
            if rec.holds && vm[z] * vm[z] <= t * (1.0 + 1e-10) {
                held += 1;
            }
        }
    }
    Verdict::new(
        held == pairs && evaluated == pairs,
        format!("{held}/{pairs} orthonormal pairs satisfy the bound"),
    )
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Exact residual of the restricted eigenvector against the appendix
/// quantity, all `(l, m)` with `l + m <= max_sum`.
pub fn appendix_bound(envs: usize, n: usize, max_sum: usize) -> Verdict {
    let rate = law().rate_params().unwrap();
    let mut env_ok = 0;
    let mut checks = 0;
    let mut worst = f64::INFINITY;
    for i in 0..envs {
        let e = env(n, 5000 + i as u64);
        let field = SpeedField::new(&e, max_sum + 1).unwrap();
        let mut all = true;
        for l in 1..max_sum {
            let op_l = DirichletOperator::assemble(&e, &ActiveSet::deflated(e.lattice(), field.minimizers(), l).unwrap())
                .unwrap();
            let pairs = eigen::solve_bottom_k(&op_l, max_sum + 1 - l, &tight()).unwrap();
            for m in 1..=max_sum - l {
                let op_lm = DirichletOperator::assemble(
                    &e,
                    &ActiveSet::deflated(e.lattice(), field.minimizers(), l + m).unwrap(),
                )
                .unwrap();
                let reference = eigen::solve_bottom_k(&op_lm, 2, &tight()).unwrap();
                let recs = theory::mu_close_second(
                    &e,
                    &op_l,
                    &op_lm,
                    &pairs.eigenvectors[m],
                    pairs.eigenvalues[m],
                    Reference { spectrum: &reference, complete: false },
                    &field,
                    &rate,
                    l,
                    m,
                    n,
                    None,
                )
                .unwrap();
                let rec = recs.iter().find(|r| r.name == "appendix_bound").unwrap();
                checks += 1;
                worst = worst.min(rec.margin);
                all &= rec.holds;
            }
        }
        env_ok += usize::from(all);
    }
    Verdict::new(
        env_ok == envs,
        format!("{env_ok}/{envs} environments at n={n}, {checks} (l,m) checks, min margin {worst:.3e}"),
    )
}

/// `λ_1` of the all-ones 3x3 box, `g(4)`, and the speed CDF against Monte
/// Carlo sums of four conductances.
pub fn closed_forms(samples: usize) -> Verdict {
    let ones = Environment::constant(Arc::new(BoxLattice::new(2, 1).unwrap()), law(), 1.0).unwrap();
    let lambda1 = eigen::dense_oracle(&full_operator(&ones)).unwrap().eigenvalues[0];
    let want = 2.0 * (2.0 - 2f64.sqrt());
    let lambda_ok = (lambda1 - want).abs() <= 1e-10;
    let g4 = law().quantile_g(4.0).unwrap();
    let g_ok = (g4 - 1.0 / 1024.0).abs() <= 1e-15;

    let probes = [0.05, 0.2, 0.6];
    let mut counts = [0usize; 3];
    let mut r = rng(4242);
    for _ in 0..samples {
        let s: f64 = (0..4).map(|_| law().inverse_cdf(uniform(&mut r))).sum();
        for (c, &t) in counts.iter_mut().zip(&probes) {
            *c += usize::from(s <= t);
        }
    }
    let mut z_max = 0.0f64;
    for (c, &t) in counts.iter().zip(&probes) {
        let p = law().speed_cdf(2, t).unwrap();
        let phat = *c as f64 / samples as f64;
        let sigma = (p * (1.0 - p) / samples as f64).sqrt();
        z_max = z_max.max((phat - p).abs() / sigma);
    }
    Verdict::new(
        lambda_ok && g_ok && z_max <= 3.0,
        format!("lambda_1 err {:.1e}, g(4) = {g4:e}, F_pi Monte Carlo max |z| = {z_max:.2} over {samples} sums", (lambda1 - want).abs()),
    )
}

/// Brute-force window enumeration of b-sparseness.
pub fn window_sparse(points: &[Vec<i64>], b: i64) -> bool {
    if points.is_empty() {
        return true;
    }
    let d = points[0].len();
    let lo: Vec<i64> = (0..d).map(|a| points.iter().map(|p| p[a]).min().unwrap() - b).collect();
    let hi: Vec<i64> = (0..d).map(|a| points.iter().map(|p| p[a]).max().unwrap() + b).collect();
    let mut z = lo.clone();
    loop {
        let inside = points.iter().filter(|p| p.iter().zip(&z).all(|(x, c)| (x - c).abs() <= b)).count();
        if inside > 1 {
            return false;
        }
        let mut a = 0;
        loop {
            if a == d {
                return true;
            }
            z[a] += 1;
            if z[a] <= hi[a] {
                break;
            }
            z[a] = lo[a];
            a += 1;
        }
    }
}

/// Pairwise criterion against window enumeration on random small sets.
pub fn sparse_agreement(sets: usize) -> Verdict {
    let mut r = rng(606);
    let mut agree = 0;
    for i in 0..sets {
        let d = 2 + i % 2;
        let b = 1 + (i % 3) as u64;
        let count = 1 + (r.next_u64() % 5) as usize;
        let points: Vec<Vec<i64>> =
            (0..count).map(|_| (0..d).map(|_| (r.next_u64() % 11) as i64 - 5).collect()).collect();
        let pairwise = points_b_sparse_violation(&points, b).is_none();
        agree += usize::from(pairwise == window_sparse(&points, b as i64));
    }
    Verdict::new(agree == sets, format!("{agree}/{sets} random sets agree"))
}

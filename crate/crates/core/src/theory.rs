//! Localization diagnostics.
//!
//! Every inequality of the localization argument is evaluated on concrete
//! environments and emitted as a [`DiagnosticRecord`]. Records come in two
//! kinds. `Exact` inequalities follow from linear algebra alone and must hold
//! on every environment, up to the stated floating-point slack. `Asymptotic`
//! ones hold only for `n` large enough and are recorded with their margins
//! for statistics.
//!
//! Notation: `op_l` is the Dirichlet operator on `B_n` minus the first `l - 1`
//! minimizers of `pi`, `mu_{l,m}` its `m`-th eigenvalue with eigenvector
//! `phi_{l,m}`. For `l = 1` these are `lambda_m` and `psi_m`.

use serde::Serialize;

use crate::eigen::{self, residual_norm, EigenSolveResult, SolverOptions};
use crate::environment::{Environment, RateParams, SpeedField};
use crate::error::{invalid, Error, Result};
use crate::operator::{dot, norm, ActiveSet, DirichletOperator, SymmetricOperator};
use crate::percolation::PercolationPartition;

/// Relative slack granted to exact inequalities.
pub const EXACT_RTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Exact,
    Asymptotic,
    /// Hypothesis not met or reference spectrum too short; recorded, not judged.
    Skipped,
}

/// Indices a record refers to; zero where not applicable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Context {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub m: usize,
}

impl Context {
    pub fn new(n: usize, k: usize, l: usize, m: usize) -> Self {
        Self { n, k, l, m }
    }
}

/// One evaluated inequality `lhs <= rhs`.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticRecord {
    pub name: String,
    pub kind: CheckKind,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs - lhs`.
    pub margin: f64,
    pub context: Context,
}

impl DiagnosticRecord {
    fn new(name: &str, kind: CheckKind, lhs: f64, rhs: f64, context: Context) -> Self {
        let holds = kind == CheckKind::Skipped || lhs <= rhs;
        Self { name: name.to_string(), kind, lhs, rhs, holds, margin: rhs - lhs, context }
    }

    pub fn exact(name: &str, lhs: f64, rhs: f64, context: Context) -> Self {
        Self::new(name, CheckKind::Exact, lhs, rhs, context)
    }

    pub fn asymptotic(name: &str, lhs: f64, rhs: f64, context: Context) -> Self {
        Self::new(name, CheckKind::Asymptotic, lhs, rhs, context)
    }

    pub fn skipped(name: &str, lhs: f64, rhs: f64, context: Context) -> Self {
        Self::new(name, CheckKind::Skipped, lhs, rhs, context)
    }

    pub fn is_exact_failure(&self) -> bool {
        self.kind == CheckKind::Exact && !self.holds
    }
}

/// Moves a vector between two active sets of the same box (zero where the
/// target has sites the source lacks).
pub fn transfer(from: &ActiveSet, to: &ActiveSet, v: &[f64]) -> Vec<f64> {
    to.restrict(&from.extend(v))
}

/// Variational upper bounds on `mu_{l,m}` from the delta functions at
/// `z_l, ..., z_{l+m-1}`.
///
/// `mu_upper_bound_test_space` compares with the largest eigenvalue of the
/// operator compressed to that span; it is exact on every environment.
/// `mu_upper_bound` compares with `pi_{l+m-1}`, which equals the compressed
/// bound when those sites are pairwise non-adjacent. When two of them are
/// neighbors the compressed matrix has off-diagonal entries, its top
/// eigenvalue exceeds `pi_{l+m-1}`, and the bound can fail; the record is then
/// asymptotic, since the minimizers become sparse as `n` grows.
pub fn mu_upper_bound(
    op_l: &DirichletOperator,
    field: &SpeedField,
    eigenvalues: &[f64],
    l: usize,
    m: usize,
    n: usize,
) -> Result<Vec<DiagnosticRecord>> {
    if l < 1 || m < 1 || m > eigenvalues.len() {
        return Err(invalid(format!("no eigenvalue m={m} among {}", eigenvalues.len())));
    }
    if field.minimizers().len() < l + m - 1 {
        return Err(invalid(format!("speed field exposes fewer than {} minimizers", l + m - 1)));
    }
    let sites = &field.minimizers()[l - 1..l + m - 1];
    let local: Vec<usize> = sites
        .iter()
        .map(|&z| op_l.active().local_index(z).ok_or_else(|| invalid("minimizer is not active in op_l")))
        .collect::<Result<_>>()?;
    let mut compressed = vec![0.0; m * m];
    for (i, &a) in local.iter().enumerate() {
        for (j, &b) in local.iter().enumerate() {
            compressed[i * m + j] = op_l.get(a, b);
        }
    }
    let top = eigen::jacobi_eigen(m, compressed).0[m - 1];
    let mu = eigenvalues[m - 1];
    let ctx = Context::new(n, l + m - 1, l, m);
    let pi = field.pi_k(l + m - 1);
    let sparse = local
        .iter()
        .enumerate()
        .all(|(i, &a)| local[i + 1..].iter().all(|&b| !op_l.row(a).any(|(c, _)| c == b)));
    let literal = if sparse {
        DiagnosticRecord::exact("mu_upper_bound", mu, pi * (1.0 + EXACT_RTOL), ctx)
    } else {
        DiagnosticRecord::asymptotic("mu_upper_bound", mu, pi * (1.0 + EXACT_RTOL), ctx)
    };
    Ok(vec![
        DiagnosticRecord::exact("mu_upper_bound_test_space", mu, top * (1.0 + EXACT_RTOL), ctx),
        literal,
    ])
}

/// Bound on a nonnegative principal vector away from its intended peak:
/// `phi(y) <= m_y / (1 - pi_z / pi_y)` with `m_y = 2 max_{x ~ y} phi(x)`.
///
/// `z` must satisfy `pi_z >= mu` (true for the first active minimizer), which
/// with the eigen-equation gives the bound at factor 1 instead of 2. A
/// residual `r` of the computed pair adds `‖r‖ / (pi_y - pi_z)`.
#[allow(clippy::too_many_arguments)]
pub fn unique_max_bound(
    op: &DirichletOperator,
    env: &Environment,
    pi: &[f64],
    phi: &[f64],
    mu: f64,
    residual: f64,
    y: usize,
    z: usize,
    context: Context,
) -> Result<DiagnosticRecord> {
    let active = op.active();
    let (Some(ly), Some(_)) = (active.local_index(y), active.local_index(z)) else {
        return Err(invalid("y and z must be active"));
    };
    let lattice = env.lattice();
    if y == z || lattice.are_neighbors(y, z) {
        return Err(invalid("y and z must be distinct non-neighbours"));
    }
    if !(pi[z] < pi[y]) {
        return Err(invalid("need pi_z < pi_y"));
    }
    if mu > pi[z] * (1.0 + EXACT_RTOL) {
        return Err(invalid("need mu <= pi_z"));
    }
    let neighbour_max = lattice
        .neighbors(y)?
        .iter()
        .filter_map(|nb| nb.site.and_then(|x| active.local_index(x)))
        .map(|lx| phi[lx])
        .fold(0.0f64, f64::max);
    let m_y = 2.0 * neighbour_max;
    let bound = m_y / (1.0 - pi[z] / pi[y]);
    let rhs = bound * (1.0 + EXACT_RTOL) + residual / (pi[y] - pi[z]);
    Ok(DiagnosticRecord::exact("unique_max", phi[ly], rhs, context))
}

/// [`unique_max_bound`] over every admissible `y`; returns the tightest record.
#[allow(clippy::too_many_arguments)]
pub fn unique_max_sweep(
    op: &DirichletOperator,
    env: &Environment,
    pi: &[f64],
    phi: &[f64],
    mu: f64,
    residual: f64,
    z: usize,
    context: Context,
) -> Result<Option<DiagnosticRecord>> {
    let lattice = env.lattice();
    let mut worst: Option<DiagnosticRecord> = None;
    for &y in op.active().sites() {
        if y == z || lattice.are_neighbors(y, z) || !(pi[z] < pi[y]) {
            continue;
        }
        let rec = unique_max_bound(op, env, pi, phi, mu, residual, y, z, context)?;
        if worst.as_ref().is_none_or(|w| rec.margin < w.margin) {
            worst = Some(rec);
        }
    }
    Ok(worst)
}

/// Orthogonality transfer: if `v_j(z)^2 >= 1 - t` then `v_m(z)^2 <= t`.
///
/// Vectors are normalized first. With `eta = <v_j, v_m>` the Cauchy–Schwarz
/// step gives `v_m(z)^2 (v_j(z)^2 + t) <= t + 2 |eta|`, so the checked bound
/// is `t + 2|eta|`, which reduces to `t` for an exactly orthogonal pair.
pub fn orth_mass_bound(vj: &[f64], vm: &[f64], z: usize, t: f64, context: Context) -> Result<DiagnosticRecord> {
    if vj.len() != vm.len() {
        return Err(Error::DimensionMismatch { expected: vj.len(), got: vm.len() });
    }
    if z >= vj.len() {
        return Err(Error::OutOfRange { index: z, size: vj.len() });
    }
    let (nj, nm) = (norm(vj), norm(vm));
    if nj == 0.0 || nm == 0.0 {
        return Err(invalid("zero vector"));
    }
    let a2 = (vj[z] / nj).powi(2);
    let c2 = (vm[z] / nm).powi(2);
    let eta = dot(vj, vm) / (nj * nm);
    if a2 < 1.0 - t {
        return Ok(DiagnosticRecord::skipped("orth_mass", a2, 1.0 - t, context));
    }
    let rhs = (t + 2.0 * eta.abs()) * (1.0 + EXACT_RTOL) + 4.0 * f64::EPSILON;
    Ok(DiagnosticRecord::exact("orth_mass", c2, rhs, context))
}

/// Spectrum used as ground truth for Bauer–Fike checks. `complete` marks a
/// full spectrum; otherwise it is the bottom part of one.
#[derive(Clone, Copy, Debug)]
pub struct Reference<'a> {
    pub spectrum: &'a EigenSolveResult,
    pub complete: bool,
}

/// Residual certificate: with `alpha = ‖A u - mu u‖`, some eigenvalue lies in
/// `[mu - alpha, mu + alpha]`; and for `beta > alpha` the normalized spectral
/// projection of `u` onto eigenvalues in `[mu - beta, mu + beta]` is within
/// `2 alpha / beta` of `u`.
///
/// Reference eigenvalues carry their own residuals, which widen the accepted
/// distance. With a partial reference, intervals reaching past its largest
/// eigenvalue cannot be decided and are recorded as skipped.
pub fn bauer_fike_assert<A: SymmetricOperator + ?Sized>(
    label: &str,
    op: &A,
    reference: Reference<'_>,
    u: &[f64],
    mu: f64,
    beta: Option<f64>,
    context: Context,
) -> Result<Vec<DiagnosticRecord>> {
    if u.len() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: u.len() });
    }
    if (norm(u) - 1.0).abs() > 1e-8 {
        return Err(invalid(format!("u must be a unit vector, norm {}", norm(u))));
    }
    let spec = reference.spectrum;
    if spec.is_empty() {
        return Err(invalid("empty reference spectrum"));
    }
    let alpha = residual_norm(op, u, mu);
    let top = spec.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = spec.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let nearest = spec
        .eigenvalues
        .iter()
        .zip(&spec.residual_norms)
        .map(|(&th, &r)| (th - mu).abs() - r)
        .fold(f64::INFINITY, f64::min);
    let tol = alpha + EXACT_RTOL * mu.abs().max(alpha) + 1e-14 * scale;
    let mut out = Vec::with_capacity(2);
    out.push(if nearest <= tol || reference.complete || mu + alpha < top {
        DiagnosticRecord::exact(label, nearest, tol, context)
    } else {
        DiagnosticRecord::skipped(label, nearest, tol, context)
    });

    if let Some(beta) = beta {
        let name = format!("{label}_projector");
        if !(beta > alpha) {
            out.push(DiagnosticRecord::skipped(&name, alpha, beta, context));
        } else if !reference.complete && mu + beta >= top {
            out.push(DiagnosticRecord::skipped(&name, mu + beta, top, context));
        } else {
            let mut pu = vec![0.0; u.len()];
            for (th, v) in spec.eigenvalues.iter().zip(&spec.eigenvectors) {
                if (th - mu).abs() <= beta {
                    let c = dot(v, u);
                    pu.iter_mut().zip(v).for_each(|(p, x)| *p += c * x);
                }
            }
            let pn = norm(&pu);
            let dist = if pn > 0.0 {
                u.iter().zip(&pu).map(|(a, b)| (a - b / pn).powi(2)).sum::<f64>().sqrt()
            } else {
                f64::INFINITY
            };
            out.push(DiagnosticRecord::exact(&name, dist, 2.0 * alpha / beta + 1e-8, context));
        }
    }
    Ok(out)
}

/// Approximates `mu_{l,m}` by `mu_{l+m,1}`: the principal vector of `op_{l+m}`
/// extended by zero is tested as an approximate eigenvector of `op_l`.
///
/// Exact: Bauer–Fike against `reference` (a spectrum of `op_l`). Asymptotic:
/// residual `<= n^{-eps1/4} pi_{l+m-1}`.
#[allow(clippy::too_many_arguments)]
pub fn mu_close_first(
    op_l: &DirichletOperator,
    op_lm: &DirichletOperator,
    phi_lm: &[f64],
    mu_lm: f64,
    reference: Reference<'_>,
    field: &SpeedField,
    rate: &RateParams,
    l: usize,
    m: usize,
    n: usize,
) -> Result<Vec<DiagnosticRecord>> {
    let ctx = Context::new(n, l + m - 1, l, m);
    let mut u = transfer(op_lm.active(), op_l.active(), phi_lm);
    let un = norm(&u);
    if un == 0.0 {
        return Err(Error::Degenerate("zero principal vector".into()));
    }
    u.iter_mut().for_each(|x| *x /= un);
    let mut out = bauer_fike_assert("mu_close_first_bauer_fike", op_l, reference, &u, mu_lm, None, ctx)?;
    let alpha = residual_norm(op_l, &u, mu_lm);
    let bound = (n as f64).powf(-rate.eps1 / 4.0) * field.pi_k(l + m - 1);
    out.push(DiagnosticRecord::asymptotic("mu_close_first", alpha, bound, ctx));
    Ok(out)
}

/// Approximates `mu_{l,m+1}` within the spectrum of `op_{l+m}`: `phi_{l,m+1}`
/// restricted to the smaller active set is tested as an approximate
/// eigenvector there.
///
/// Exact records:
/// * `appendix_bound`: for the unnormalized restriction `f`,
///   `‖op_{l+m} f - mu f‖^2 <= (sqrt(B) + r)^2` with
///   `B = max_z phi(z)^2 · sum_x (sum_{z ~ x} w_xz)^2` over the removed sites
///   `z` and `r` the residual of the computed pair in `op_l`. For an exact
///   eigenpair `r = 0` and this is the plain bound.
/// * Bauer–Fike of the normalized restriction against `reference` (a
///   spectrum of `op_{l+m}`), with the projector clause when `beta` is given.
///
/// Asymptotic: normalized residual `<= pi_{l+m-1} sqrt(m n^{-eps/4} / (1 - m n^{-eps/4}))`.
#[allow(clippy::too_many_arguments)]
pub fn mu_close_second(
    env: &Environment,
    op_l: &DirichletOperator,
    op_lm: &DirichletOperator,
    phi: &[f64],
    mu: f64,
    reference: Reference<'_>,
    field: &SpeedField,
    rate: &RateParams,
    l: usize,
    m: usize,
    n: usize,
    beta: Option<f64>,
) -> Result<Vec<DiagnosticRecord>> {
    let ctx = Context::new(n, l + m, l, m);
    let removed: Vec<usize> = op_lm
        .active()
        .excluded()
        .iter()
        .copied()
        .filter(|&z| op_l.active().contains(z))
        .collect();
    let pair_residual = residual_norm(op_l, phi, mu);
    let f = transfer(op_l.active(), op_lm.active(), phi);
    let fnorm = norm(&f);
    if fnorm == 0.0 {
        return Err(Error::Degenerate("eigenvector vanishes on the smaller active set".into()));
    }
    let res = residual_norm(op_lm, &f, mu);

    let lattice = env.lattice();
    let mut inflow = vec![0.0; lattice.site_count()];
    let mut peak = 0.0f64;
    for &z in &removed {
        let lz = op_l.active().local_index(z).expect("removed site is active in op_l");
        peak = peak.max(phi[lz] * phi[lz]);
        for nb in lattice.neighbors(z)? {
            if let Some(x) = nb.site {
                inflow[x] += env.weight(nb.edge);
            }
        }
    }
    let bound = peak * inflow.iter().map(|s| s * s).sum::<f64>();
    let rhs = (bound.sqrt() + pair_residual).powi(2) * (1.0 + EXACT_RTOL);
    let mut out = vec![DiagnosticRecord::exact("appendix_bound", res * res, rhs, ctx)];

    let u: Vec<f64> = f.iter().map(|x| x / fnorm).collect();
    out.extend(bauer_fike_assert("mu_close_second_bauer_fike", op_lm, reference, &u, mu, beta, ctx)?);

    let q = m as f64 * (n as f64).powf(-rate.eps1 / 4.0);
    let asym = if q < 1.0 { field.pi_k(l + m - 1) * (q / (1.0 - q)).sqrt() } else { f64::INFINITY };
    out.push(DiagnosticRecord::asymptotic("mu_close_second", res / fnorm, asym, ctx));
    Ok(out)
}

/// `1 - pi_k / pi_{k+1}` against `n^{-eps}`.
pub fn gap_quotient(field: &SpeedField, k: usize, n: usize, eps: f64) -> DiagnosticRecord {
    let gap = 1.0 - field.pi_k(k) / field.pi_k(k + 1);
    DiagnosticRecord::asymptotic("gap_quotient", (n as f64).powf(-eps), gap, Context::new(n, k, 0, 0))
}

/// Options for [`inductive_chain`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ChainOptions {
    pub solver: SolverOptions,
    /// Use full dense spectra as Bauer–Fike references (small boxes only).
    pub dense_reference: bool,
}


/// Per-environment output of [`inductive_chain`]; vectors are indexed by `k - 1`.
#[derive(Clone, Debug)]
pub struct ChainOutcome {
    pub records: Vec<DiagnosticRecord>,
    /// `lambda_k`.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `psi_k(z_k)^2`.
    pub localization: Vec<f64>,
    /// `phi_{k,1}(z_k)` after orientation.
    pub principal_at_min: Vec<f64>,
    /// `‖phi_{k,1}‖^2` on the giant cluster, when a partition is supplied.
    pub mass_on_giant: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Bottom eigenvectors of the full box operator, over its sites.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// Runs the induction over `k = 1..=k_max` on one environment of `B_n`.
///
/// Solves `op_1` for its bottom `k_max + 1` pairs and `op_l`, `2 <= l <= k_max`,
/// for two pairs each, then evaluates every inequality of the argument. The
/// asymptotic records use `eps = eps1` and the window half-width
/// `beta_k = 2 sqrt(k-1) n^{-delta} pi_k` with `delta = eps1 / 32`.
pub fn inductive_chain(
    env: &Environment,
    field: &SpeedField,
    partition: Option<&PercolationPartition>,
    rate: &RateParams,
    k_max: usize,
    opts: &ChainOptions,
) -> Result<ChainOutcome> {
    let lattice = env.lattice();
    let n = lattice.radius();
    let nf = n as f64;
    let eps = rate.eps1;
    let delta = rate.eps1 / 32.0;
    if k_max < 1 {
        return Err(invalid("k_max must be at least 1"));
    }
    if field.minimizers().len() < k_max + 1 {
        return Err(invalid(format!("speed field must expose {} minimizers", k_max + 1)));
    }
    if k_max + 2 > lattice.site_count() {
        return Err(invalid("box too small for the requested depth"));
    }
    let minimizers = field.minimizers();
    let pi = field.pi();

    let mut ops = Vec::with_capacity(k_max);
    let mut solves = Vec::with_capacity(k_max);
    let mut iterations = 0;
    for l in 1..=k_max {
        let op = DirichletOperator::assemble(env, &ActiveSet::deflated(lattice, minimizers, l)?)?;
        let count = if l == 1 { k_max + 1 } else { 2 };
        let solve = eigen::solve_bottom_k(&op, count, &opts.solver)?;
        iterations += solve.iterations;
        ops.push(op);
        solves.push(solve);
    }
    let converged = solves.iter().all(|s| s.all_converged());
    let dense: Vec<EigenSolveResult> = if opts.dense_reference {
        ops.iter().map(eigen::dense_oracle).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let reference = |l: usize| -> Reference<'_> {
        if opts.dense_reference {
            Reference { spectrum: &dense[l - 1], complete: true }
        } else {
            Reference { spectrum: &solves[l - 1], complete: false }
        }
    };

    let mut records = Vec::new();
    // Upper bounds and interlacing across deflation levels.
    for (li, s) in solves.iter().enumerate() {
        let l = li + 1;
        for m in 1..=s.len() {
            records.extend(mu_upper_bound(&ops[li], field, &s.eigenvalues, l, m, n)?);
        }
        if l >= 2 {
            let prev = &solves[li - 1];
            for m in 1..=s.len().min(prev.len()) {
                let slack = prev.residual_norms[m - 1] + s.residual_norms[m - 1];
                records.push(DiagnosticRecord::exact(
                    "interlacing",
                    prev.eigenvalues[m - 1],
                    s.eigenvalues[m - 1] * (1.0 + EXACT_RTOL) + slack,
                    Context::new(n, 0, l, m),
                ));
            }
        }
    }

    let psi = &solves[0];
    let mut localization = Vec::with_capacity(k_max);
    let mut principal_at_min = Vec::with_capacity(k_max);
    let mut mass_on_giant = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let ctx = Context::new(n, k, 1, k);
        let z = field.minimizer(k);
        let lambda = psi.eigenvalues[k - 1];
        let pik = field.pi_k(k);

        let psi_mass = psi.eigenvectors[k - 1][z].powi(2);
        localization.push(psi_mass);
        records.push(DiagnosticRecord::asymptotic("eigenvalue_ratio", 1.0 - nf.powf(-eps / 8.0), lambda / pik, ctx));
        records.push(DiagnosticRecord::asymptotic("eigenvector_localization", 1.0 - nf.powf(-eps / 4.0), psi_mass, ctx));
        records.push(gap_quotient(field, k, n, eps));

        // Orthogonality transfer within op_1 at earlier minimizers.
        for j in 1..k {
            let zj = field.minimizer(j);
            let t = (1.0 - psi.eigenvectors[j - 1][zj].powi(2)).max(0.0);
            records.push(orth_mass_bound(
                &psi.eigenvectors[j - 1],
                &psi.eigenvectors[k - 1],
                zj,
                t,
                Context::new(n, k, 1, j),
            )?);
        }

        // Principal vector of op_k.
        let op_k = &ops[k - 1];
        let solve_k = &solves[k - 1];
        let mu_k1 = solve_k.eigenvalues[0];
        let mut phi = solve_k.eigenvectors[0].clone();
        let peak = phi.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            phi.iter_mut().for_each(|x| *x = -*x);
        }
        let lowest = phi.iter().copied().fold(f64::INFINITY, f64::min);
        let nonnegative = lowest >= -10.0 * opts.solver.tol * peak.abs();
        let lz = op_k.active().local_index(z).expect("k-th minimizer is active in op_k");
        principal_at_min.push(phi[lz]);
        let kctx = Context::new(n, k, k, 1);
        records.push(DiagnosticRecord::asymptotic(
            "principal_localization",
            (1.0 - nf.powf(-rate.eps1 / 4.0)).sqrt(),
            phi[lz],
            kctx,
        ));
        records.push(DiagnosticRecord::asymptotic(
            "principal_eigenvalue_lower",
            (1.0 - 2.0 * nf.powf(-rate.eps1 / 8.0)) * pik,
            mu_k1,
            kctx,
        ));
        if nonnegative {
            if let Some(rec) =
                unique_max_sweep(op_k, env, pi, &phi, mu_k1, solve_k.residual_norms[0], z, kctx)?
            {
                records.push(rec);
            }
        } else if op_k.is_connected() {
            return Err(Error::PrincipalVector(format!(
                "principal vector of level {k} has entry {lowest:e} on a connected active set"
            )));
        } else {
            records.push(DiagnosticRecord::skipped("unique_max", lowest, 0.0, kctx));
        }
        mass_on_giant.push(match partition {
            Some(p) => {
                let full = op_k.active().extend(&phi);
                let mass = p.mass_on_giant(&full)?;
                records.push(DiagnosticRecord::asymptotic(
                    "mass_on_giant",
                    mass,
                    nf.powf(-rate.eps1 / 2.0),
                    kctx,
                ));
                Some(mass)
            }
            None => None,
        });

        if k >= 2 {
            let m = k - 1;
            let beta = 2.0 * (m as f64).sqrt() * nf.powf(-delta) * pik;
            records.extend(mu_close_first(
                &ops[0], op_k, &phi, mu_k1, reference(1), field, rate, 1, m, n,
            )?);
            records.extend(mu_close_second(
                env,
                &ops[0],
                op_k,
                &psi.eigenvectors[k - 1],
                lambda,
                reference(k),
                field,
                rate,
                1,
                m,
                n,
                Some(beta),
            )?);
            records.push(DiagnosticRecord::asymptotic(
                "inductive_step",
                (1.0 - (2.0 + (m as f64).sqrt()) * nf.powf(-eps / 8.0)) * pik,
                lambda,
                ctx,
            ));
            records.push(DiagnosticRecord::asymptotic(
                "window_gap",
                2.0 * (m as f64).sqrt() * nf.powf(-delta),
                1.0 - pik / field.pi_k(k + 1),
                ctx,
            ));
            records.push(DiagnosticRecord::asymptotic("window_uniqueness", lambda + beta, solve_k.eigenvalues[1], kctx));
            records.push(DiagnosticRecord::asymptotic("window_contains", (lambda - mu_k1).abs(), beta, kctx));
        }
    }

    Ok(ChainOutcome {
        records,
        eigenvalues: psi.eigenvalues[..k_max].to_vec(),
        residuals: psi.residual_norms[..k_max].to_vec(),
        localization,
        principal_at_min,
        mass_on_giant,
        converged,
        iterations,
        eigenvectors: psi.eigenvectors[..k_max].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ConductanceLaw;
    use crate::lattice::BoxLattice;
    use crate::operator::DenseSymmetric;
    use std::sync::Arc;

    fn law() -> ConductanceLaw {
        ConductanceLaw::pareto(0.1, 1.0).unwrap()
    }

    fn rate() -> RateParams {
        law().rate_params().unwrap()
    }

    fn ones(n: usize) -> Environment {
        Environment::constant(Arc::new(BoxLattice::new(2, n).unwrap()), law(), 1.0).unwrap()
    }

    /// Two deep sites at (-1,-1) and (1,1) of the 3x3 box.
    fn two_traps() -> Environment {
        let lat = Arc::new(BoxLattice::new(2, 1).unwrap());
        let mut env = Environment::constant(lat.clone(), law(), 1.0).unwrap();
        for (c, w) in [([-1, -1], 0.01), ([1, 1], 0.02)] {
            let s = lat.index_of(&c).unwrap();
            for nb in lat.neighbors(s).unwrap().to_vec() {
                env.set_weight(nb.edge, w).unwrap();
            }
        }
        env
    }

    #[test]
    fn upper_bound_on_grid() {
        let env = ones(1);
        let field = SpeedField::new(&env, 1).unwrap();
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        let res = eigen::dense_oracle(&op).unwrap();
        let recs = mu_upper_bound(&op, &field, &res.eigenvalues, 1, 1, 1).unwrap();
        assert!(recs.iter().all(|r| r.holds && r.kind == CheckKind::Exact));
        let rec = &recs[1];
        assert!((rec.lhs - 2.0 * (2.0 - 2f64.sqrt())).abs() < 1e-14);
        assert!((rec.rhs - 4.0).abs() < 1e-8);
    }

    #[test]
    fn deflated_upper_bound_with_two_traps() {
        let env = two_traps();
        let field = SpeedField::new(&env, 2).unwrap();
        let active = ActiveSet::deflated(env.lattice(), field.minimizers(), 2).unwrap();
        let op = DirichletOperator::assemble(&env, &active).unwrap();
        let res = eigen::dense_oracle(&op).unwrap();
        let recs = mu_upper_bound(&op, &field, &res.eigenvalues, 2, 1, 1).unwrap();
        assert!(recs.iter().all(|r| r.holds), "{recs:?}");
        assert!((field.pi_k(1) - 0.04).abs() < 1e-15 && (field.pi_k(2) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn adjacent_minimizers_break_the_order_statistic_bound() {
        // A dimer of weak sites: lambda_2 exceeds pi_2, the test-space bound holds.
        let lat = Arc::new(BoxLattice::new(2, 2).unwrap());
        let mut env = Environment::constant(lat.clone(), law(), 1.0).unwrap();
        let a = lat.index_of(&[0, 0]).unwrap();
        let b = lat.index_of(&[1, 0]).unwrap();
        for s in [a, b] {
            for nb in lat.neighbors(s).unwrap().to_vec() {
                env.set_weight(nb.edge, 1e-3).unwrap();
            }
        }
        let bond = lat.neighbors(a).unwrap().iter().find(|nb| nb.site == Some(b)).unwrap().edge;
        env.set_weight(bond, 0.01).unwrap();
        let field = SpeedField::new(&env, 2).unwrap();
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(&lat)).unwrap();
        let res = eigen::dense_oracle(&op).unwrap();
        let recs = mu_upper_bound(&op, &field, &res.eigenvalues, 1, 2, 2).unwrap();
        assert!(recs[0].holds && recs[0].kind == CheckKind::Exact);
        assert!(!recs[1].holds && recs[1].kind == CheckKind::Asymptotic);
    }

    #[test]
    fn unique_max_on_hand_built_box() {
        let lat = Arc::new(BoxLattice::new(2, 2).unwrap());
        let mut env = Environment::constant(lat.clone(), law(), 1.0).unwrap();
        for (c, w) in [([-1, -1], 0.05), ([1, 1], 0.2)] {
            let s = lat.index_of(&c).unwrap();
            for nb in lat.neighbors(s).unwrap().to_vec() {
                env.set_weight(nb.edge, w).unwrap();
            }
        }
        let field = SpeedField::new(&env, 2).unwrap();
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(&lat)).unwrap();
        let res = eigen::principal_sign_fix(eigen::dense_oracle(&op).unwrap(), &op, 1e-12).unwrap();
        let z = field.minimizer(1);
        let y = field.minimizer(2);
        let rec = unique_max_bound(
            &op, &env, field.pi(), &res.eigenvectors[0], res.eigenvalues[0], res.residual_norms[0], y, z,
            Context::default(),
        )
        .unwrap();
        assert!(rec.holds, "{rec:?}");
        let sweep = unique_max_sweep(
            &op, &env, field.pi(), &res.eigenvectors[0], res.eigenvalues[0], res.residual_norms[0], z,
            Context::default(),
        )
        .unwrap()
        .unwrap();
        assert!(sweep.holds, "{sweep:?}");
        // phi(y) = 0 holds trivially.
        let zero = vec![0.0; op.dim()];
        let rec = unique_max_bound(&op, &env, field.pi(), &zero, res.eigenvalues[0], 0.0, y, z, Context::default()).unwrap();
        assert!(rec.holds && rec.lhs == 0.0);
        // Neighbouring y is rejected.
        let nb = lat.index_of(&[-1, 0]).unwrap();
        assert!(unique_max_bound(&op, &env, field.pi(), &zero, 0.0, 0.0, nb, z, Context::default()).is_err());
    }

    #[test]
    fn orth_examples() {
        let ctx = Context::default();
        let delta = vec![1.0, 0.0, 0.0];
        let other = vec![0.0, 0.6, 0.8];
        let rec = orth_mass_bound(&delta, &other, 0, 0.0, ctx).unwrap();
        assert!(rec.holds && rec.lhs == 0.0);
        // Two-site equality case: v_j = (sqrt(1-t), sqrt(t)), v_m = (sqrt(t), -sqrt(1-t)).
        let t: f64 = 0.19;
        let vj = vec![(1.0 - t).sqrt(), t.sqrt()];
        let vm = vec![t.sqrt(), -(1.0 - t).sqrt()];
        let rec = orth_mass_bound(&vj, &vm, 0, t, ctx).unwrap();
        assert!(rec.holds);
        assert!((rec.lhs - t).abs() < 1e-15);
        let rec = orth_mass_bound(&vm, &vj, 0, 0.5, ctx).unwrap();
        assert_eq!(rec.kind, CheckKind::Skipped);
    }

    #[test]
    fn bauer_fike_diagonal_example() {
        let a = DenseSymmetric::diagonal(&[1.0, 2.0]);
        let spec = eigen::dense_spectrum(&a);
        let reference = Reference { spectrum: &spec, complete: true };
        let recs = bauer_fike_assert("bf", &a, reference, &[1.0, 0.0], 1.1, Some(0.5), Context::default()).unwrap();
        assert!(recs.iter().all(|r| r.holds), "{recs:?}");
        assert!((recs[0].lhs - 0.1).abs() < 1e-15);
        let recs = bauer_fike_assert("bf", &a, reference, &[0.0, 1.0], 2.0, None, Context::default()).unwrap();
        assert!(recs[0].holds && recs[0].lhs == 0.0);
        // A wrong spectrum is caught.
        let mut bad = spec.clone();
        bad.eigenvalues = vec![5.0, 6.0];
        let recs = bauer_fike_assert("bf", &a, Reference { spectrum: &bad, complete: true }, &[1.0, 0.0], 1.1, None, Context::default()).unwrap();
        assert!(recs[0].is_exact_failure());
    }

    #[test]
    fn mu_close_on_two_traps() {
        let env = two_traps();
        let field = SpeedField::new(&env, 2).unwrap();
        let lat = env.lattice();
        let op1 = DirichletOperator::assemble(&env, &ActiveSet::deflated(lat, field.minimizers(), 1).unwrap()).unwrap();
        let op2 = DirichletOperator::assemble(&env, &ActiveSet::deflated(lat, field.minimizers(), 2).unwrap()).unwrap();
        let s1 = eigen::dense_oracle(&op1).unwrap();
        let s2 = eigen::dense_oracle(&op2).unwrap();
        let first = mu_close_first(
            &op1, &op2, &s2.eigenvectors[0], s2.eigenvalues[0],
            Reference { spectrum: &s1, complete: true }, &field, &rate(), 1, 1, 1,
        )
        .unwrap();
        assert!(first.iter().filter(|r| r.kind == CheckKind::Exact).all(|r| r.holds), "{first:?}");
        // The residual lives on the removed site: its value is -sum_x w_xz phi(x).
        let z = field.minimizer(1);
        let u = transfer(op2.active(), op1.active(), &s2.eigenvectors[0]);
        let r = op1.apply(&u).unwrap();
        let expected: f64 = lat
            .neighbors(z)
            .unwrap()
            .iter()
            .filter_map(|nb| nb.site.map(|x| env.weight(nb.edge) * u[op1.active().local_index(x).unwrap()]))
            .sum();
        let lz = op1.active().local_index(z).unwrap();
        assert!((r[lz] + expected).abs() < 1e-14);
        let second = mu_close_second(
            &env, &op1, &op2, &s1.eigenvectors[1], s1.eigenvalues[1],
            Reference { spectrum: &s2, complete: true }, &field, &rate(), 1, 1, 1, None,
        )
        .unwrap();
        assert!(second.iter().filter(|r| r.kind == CheckKind::Exact).all(|r| r.holds), "{second:?}");
        assert_eq!(second[0].name, "appendix_bound");
    }

    #[test]
    fn gap_examples() {
        let env = ones(2);
        let field = SpeedField::new(&env, 2).unwrap();
        let rec = gap_quotient(&field, 1, 2, 0.9);
        assert_eq!(rec.rhs, 0.0);
        assert!(!rec.holds);
    }

    #[test]
    fn chain_on_all_ones_grid() {
        let env = ones(1);
        let field = SpeedField::new(&env, 2).unwrap();
        let out = inductive_chain(&env, &field, None, &rate(), 1, &ChainOptions { dense_reference: true, ..Default::default() }).unwrap();
        let ratio = out.eigenvalues[0] / field.pi_k(1);
        assert!((ratio - 2.0 * (2.0 - 2f64.sqrt()) / 4.0).abs() < 1e-10);
        assert!(out.records.iter().all(|r| !r.is_exact_failure()), "{:?}", out.records);
    }

    #[test]
    fn chain_on_random_environment() {
        let env = Environment::sample(Arc::new(BoxLattice::new(2, 6).unwrap()), law(), 11);
        let field = SpeedField::new(&env, 4).unwrap();
        let opts = ChainOptions { solver: SolverOptions { tol: 1e-10, ..Default::default() }, dense_reference: true };
        let out = inductive_chain(&env, &field, None, &rate(), 3, &opts).unwrap();
        assert!(out.converged);
        let failures: Vec<_> = out.records.iter().filter(|r| r.is_exact_failure()).collect();
        assert!(failures.is_empty(), "{failures:?}");
        for k in 0..3 {
            assert!(out.eigenvalues[k] <= field.pi_k(k + 1) * (1.0 + 1e-10));
        }
    }
}

//! Conductance laws, environment sampling and the local speed measure.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::BoxLattice;
use crate::rng::KeyedStream;

/// Law of a single conductance, given through its distribution function `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConductanceLaw {
    /// `F(u) = min(1, (u/u0)^gamma)`: regularly varying at zero with index `gamma`.
    ParetoAtZero { gamma: f64, u0: f64 },
    /// `F(u) = (log 1/u)^(-beta)` on `(0, 1/e)`: slowly varying at zero.
    /// The rate `eps1` cannot be derived from the law and is supplied with it.
    LogSingular { beta: f64, eps1: f64 },
}

/// Rate exponents: `eps1`, `eps2 = 7 eps1 / (8 (2 + eps1))`, `eps3 = eps2 / 7`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl RateParams {
    pub fn from_eps1(eps1: f64) -> Result<Self> {
        if !(eps1 > 0.0 && eps1 < 1.0) {
            return Err(invalid(format!("eps1 must lie in (0, 1), got {eps1}")));
        }
        let denom = 8.0 * (2.0 + eps1);
        Ok(Self { eps1, eps2: 7.0 * eps1 / denom, eps3: eps1 / denom })
    }
}

impl ConductanceLaw {
    pub fn pareto(gamma: f64, u0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 0.25) {
            return Err(invalid(format!("tail index must lie in (0, 1/4), got {gamma}")));
        }
        if !(u0 > 0.0 && u0.is_finite()) {
            return Err(invalid(format!("scale must be positive, got {u0}")));
        }
        Ok(Self::ParetoAtZero { gamma, u0 })
    }

    pub fn log_singular(beta: f64, eps1: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        let law = Self::LogSingular { beta, eps1 };
        law.rate_params()?;
        Ok(law)
    }

    /// Regular-variation index of `F` at zero.
    pub fn tail_index(&self) -> f64 {
        match *self {
            Self::ParetoAtZero { gamma, .. } => gamma,
            Self::LogSingular { .. } => 0.0,
        }
    }

    /// Upper end of the range on which `F(ab) >= b F(a)` is claimed.
    ///
    /// For the log-singular law the inequality reads `β log(1 + s/L) <= s`
    /// with `L = log(1/a)`, `s = log(1/b)`, which holds for every `s >= 0`
    /// exactly when `L >= β`; hence `a* = exp(-max(1, β))`.
    pub fn a_star(&self) -> f64 {
        match *self {
            Self::ParetoAtZero { u0, .. } => u0,
            Self::LogSingular { beta, .. } => (-beta.max(1.0)).exp(),
        }
    }

    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match *self {
            Self::ParetoAtZero { gamma, u0 } => {
                if u >= u0 {
                    1.0
                } else {
                    (u / u0).powf(gamma)
                }
            }
            Self::LogSingular { beta, .. } => {
                let cut = (-1.0f64).exp();
                if u >= cut {
                    1.0
                } else {
                    (-u.ln()).powf(-beta)
                }
            }
        }
    }

    /// `F^{-1}(p)` for `p ∈ (0, 1]`, floored at the smallest positive normal
    /// double so every sampled conductance is strictly positive.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let w = match *self {
            Self::ParetoAtZero { gamma, u0 } => u0 * p.powf(1.0 / gamma),
            Self::LogSingular { beta, .. } => (-p.powf(-1.0 / beta)).exp(),
        };
        w.max(f64::MIN_POSITIVE)
    }

    /// `g(u) = sup{ s >= 0 : F(s) = u^{-1/2} }` for `u > 1`.
    pub fn quantile_g(&self, u: f64) -> Result<f64> {
        if !(u > 1.0) {
            return Err(invalid(format!("g is defined for u > 1, got {u}")));
        }
        Ok(match *self {
            Self::ParetoAtZero { gamma, u0 } => u0 * u.powf(-1.0 / (2.0 * gamma)),
            Self::LogSingular { beta, .. } => (-u.powf(1.0 / (2.0 * beta))).exp(),
        })
    }

    fn speed_constant(&self, dim: usize) -> Result<(f64, f64, f64)> {
        match *self {
            Self::ParetoAtZero { gamma, u0 } => {
                let m = 2.0 * dim as f64;
                let c = libm::tgamma(gamma + 1.0).powf(m) / libm::tgamma(m * gamma + 1.0);
                Ok((c, m * gamma, u0))
            }
            Self::LogSingular { .. } => Err(Error::UnsupportedLaw(
                "closed-form speed distribution needs a positive tail index".into(),
            )),
        }
    }

    /// Distribution function of `pi`, the sum of `2d` independent conductances,
    /// in its closed-form range `t <= u0`:
    /// `F_pi(t) = (t/u0)^{2d gamma} Γ(gamma+1)^{2d} / Γ(2d gamma + 1)`.
    pub fn speed_cdf(&self, dim: usize, t: f64) -> Result<f64> {
        let (c, index, u0) = self.speed_constant(dim)?;
        if t <= 0.0 {
            return Ok(0.0);
        }
        if t > u0 {
            return Err(invalid(format!("closed form holds for t <= {u0}, got {t}")));
        }
        Ok(c * (t / u0).powf(index))
    }

    /// `a_n = sup{ t : F_pi(t) = 1/|B_n| }`.
    pub fn rescaling(&self, dim: usize, site_count: usize) -> Result<f64> {
        let (c, index, u0) = self.speed_constant(dim)?;
        let a = u0 * (1.0 / (c * site_count as f64)).powf(1.0 / index);
        if a > u0 {
            return Err(invalid("box too small for the closed-form rescaling"));
        }
        Ok(a)
    }

    pub fn rescaling_for(&self, lattice: &BoxLattice) -> Result<f64> {
        self.rescaling(lattice.dim(), lattice.site_count())
    }

    pub fn rate_params(&self) -> Result<RateParams> {
        match *self {
            Self::ParetoAtZero { gamma, .. } => {
                if !(gamma > 0.0 && gamma < 0.25) {
                    return Err(invalid(format!("no admissible eps1 for gamma = {gamma}")));
                }
                let sup = 1.0 / (2.0 * gamma) - 2.0;
                RateParams::from_eps1(0.9 * sup.min(1.0))
            }
            Self::LogSingular { beta, eps1 } => {
                let params = RateParams::from_eps1(eps1)?;
                check_log_singular_decay(beta, eps1)?;
                Ok(params)
            }
        }
    }

    /// Numerical audit of the law's standing assumptions.
    pub fn self_check(&self, grid: &LawCheckGrid) -> LawCheckReport {
        let mut report = LawCheckReport::default();
        let a_star = self.a_star();
        for &(a, b) in &grid.pairs {
            if a > a_star || !(0.0..=1.0).contains(&b) {
                continue;
            }
            report.checks += 1;
            let lhs = self.cdf(a * b);
            let rhs = b * self.cdf(a);
            if lhs < rhs * (1.0 - 1e-12) {
                report.fail(format!("F(ab) >= bF(a) fails at a={a}, b={b}: {lhs} < {rhs}"));
            }
        }
        let mut prev: Option<(f64, f64)> = None;
        for &u in &grid.points {
            report.checks += 1;
            let f = self.cdf(u);
            if let Some((pu, pf)) = prev {
                if u > pu && f < pf {
                    report.fail(format!("F decreases between {pu} and {u}"));
                }
            }
            let nudged = self.cdf(u * (1.0 + 1e-9));
            if (nudged - f).abs() > 1e-6 {
                report.fail(format!("F jumps at {u}: {f} -> {nudged}"));
            }
            prev = Some((u, f));
        }
        let probe = grid.rv_probe.unwrap_or(match self {
            Self::ParetoAtZero { .. } => 1e-8,
            Self::LogSingular { .. } => 1e-300,
        });
        let index = self.tail_index();
        for lambda in [0.5, 2.0] {
            report.checks += 1;
            let ratio = self.cdf(lambda * probe) / self.cdf(probe);
            let target = f64::powf(lambda, index);
            if ((ratio - target) / target).abs() > 0.01 {
                report.fail(format!(
                    "F(λu)/F(u) = {ratio} vs λ^γ = {target} at λ={lambda}, u={probe}"
                ));
            }
        }
        report
    }

    fn header_params(&self) -> String {
        match *self {
            Self::ParetoAtZero { gamma, u0 } => format!("pareto {gamma:?} {u0:?}"),
            Self::LogSingular { beta, eps1 } => format!("logsingular {beta:?} {eps1:?}"),
        }
    }

    fn parse_header_params(parts: &[&str]) -> Result<Self> {
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        match parts {
            ["pareto", g, u] => Self::pareto(num(g)?, num(u)?),
            ["logsingular", b, e] => Self::log_singular(num(b)?, num(e)?),
            _ => Err(Error::Parse(format!("unknown law parameters {parts:?}"))),
        }
    }
}

impl fmt::Display for ConductanceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header_params())
    }
}

/// `n^{2+eps1} g(n)` must decrease to zero once past its single turning
/// point; checked on a geometric grid up to `1e12`.
fn check_log_singular_decay(beta: f64, eps1: f64) -> Result<()> {
    let log_term = |n: f64| (2.0 + eps1) * n.ln() - n.powf(1.0 / (2.0 * beta));
    let turning = (2.0 * beta * (2.0 + eps1)).powf(2.0 * beta);
    let mut n = turning.max(2.0);
    let mut prev = log_term(n);
    while n < 1e12 {
        n *= 1.5;
        let cur = log_term(n);
        if cur > prev {
            return Err(invalid(format!("n^(2+eps1) g(n) not decreasing near n = {n}")));
        }
        prev = cur;
    }
    if prev > (1e-6f64).ln() {
        return Err(invalid("n^(2+eps1) g(n) does not decay to zero"));
    }
    Ok(())
}

/// Sample points for [`ConductanceLaw::self_check`].
#[derive(Clone, Debug, Default)]
pub struct LawCheckGrid {
    /// `(a, b)` pairs for `F(ab) >= b F(a)`; pairs outside `a <= a*`, `b ∈ [0,1]` are skipped.
    pub pairs: Vec<(f64, f64)>,
    /// Ascending points for monotonicity and continuity.
    pub points: Vec<f64>,
    /// Point at which regular variation is probed; a law-specific default if `None`.
    pub rv_probe: Option<f64>,
}

impl LawCheckGrid {
    pub fn standard(law: &ConductanceLaw) -> Self {
        let a_star = law.a_star();
        let mut pairs = Vec::new();
        for i in 0..40 {
            let a = a_star * 10f64.powf(-(i as f64) / 4.0);
            for j in 0..=20 {
                pairs.push((a, j as f64 / 20.0));
            }
        }
        let points = (0..400).map(|i| a_star * 1.2 * 10f64.powf(-(400 - i) as f64 / 20.0)).collect();
        Self { pairs, points, rv_probe: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LawCheckReport {
    pub checks: usize,
    pub first_violation: Option<String>,
}

impl LawCheckReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }

    fn fail(&mut self, msg: String) {
        if self.first_violation.is_none() {
            self.first_violation = Some(msg);
        }
    }
}

/// I.i.d. conductances on every edge of a box (boundary edges included).
#[derive(Clone, Debug)]
pub struct Environment {
    lattice: Arc<BoxLattice>,
    law: ConductanceLaw,
    seed: u64,
    weights: Vec<f64>,
}

impl Environment {
    /// One inverse-CDF draw per edge from the uniform keyed by `(seed, bond)`.
    /// The bond key is lattice-global, so boxes of different size sampled
    /// with the same seed agree on their common edges.
    pub fn sample(lattice: Arc<BoxLattice>, law: ConductanceLaw, seed: u64) -> Self {
        let stream = KeyedStream::new(seed);
        let draw = |e: &crate::lattice::Edge| law.inverse_cdf(stream.open_unit_at(e.key));
        #[cfg(feature = "parallel")]
        let weights = {
            use rayon::prelude::*;
            lattice.edges().par_iter().map(draw).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let weights = lattice.edges().iter().map(draw).collect();
        Self { lattice, law, seed, weights }
    }

    /// Environment with prescribed conductances (hand-built test cases, snapshots).
    pub fn from_weights(
        lattice: Arc<BoxLattice>,
        law: ConductanceLaw,
        seed: u64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != lattice.edge_count() {
            return Err(Error::DimensionMismatch { expected: lattice.edge_count(), got: weights.len() });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(invalid(format!("conductances must be positive and finite, got {w}")));
        }
        Ok(Self { lattice, law, seed, weights })
    }

    /// All conductances equal to `w`.
    pub fn constant(lattice: Arc<BoxLattice>, law: ConductanceLaw, w: f64) -> Result<Self> {
        let weights = vec![w; lattice.edge_count()];
        Self::from_weights(lattice, law, 0, weights)
    }

    pub fn lattice(&self) -> &BoxLattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> &Arc<BoxLattice> {
        &self.lattice
    }

    pub fn law(&self) -> ConductanceLaw {
        self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }

    pub fn set_weight(&mut self, edge: usize, w: f64) -> Result<()> {
        if edge >= self.weights.len() {
            return Err(Error::OutOfRange { index: edge, size: self.weights.len() });
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(invalid(format!("conductance must be positive, got {w}")));
        }
        self.weights[edge] = w;
        Ok(())
    }

    /// The environment seen by the concentric box of radius `radius`.
    pub fn restrict(&self, radius: usize) -> Result<Self> {
        let inner = Arc::new(BoxLattice::new(self.lattice.dim(), radius)?);
        let map = self.lattice.embed_edges(&inner)?;
        let weights = map.iter().map(|&e| self.weights[e]).collect();
        Ok(Self { lattice: inner, law: self.law, seed: self.seed, weights })
    }

    /// Writes the text snapshot: header `d n seed law-params`, then one
    /// `x_coords y_coords w` line per edge in edge-index order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{} {} {} {}",
            self.lattice.dim(),
            self.lattice.radius(),
            self.seed,
            self.law.header_params()
        )?;
        let mut line = String::new();
        for (e, w) in self.weights.iter().enumerate() {
            let (x, y) = self.lattice.edge_endpoints(e);
            line.clear();
            for c in x.iter().chain(&y) {
                line.push_str(&c.to_string());
                line.push(' ');
            }
            // Debug formatting of f64 is the shortest string that round-trips.
            line.push_str(&format!("{w:?}"));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty snapshot".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(Error::Parse(format!("bad header: {header}")));
        }
        let parse_usize =
            |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let dim = parse_usize(parts[0])?;
        let radius = parse_usize(parts[1])?;
        let seed = parts[2].parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?;
        let law = ConductanceLaw::parse_header_params(&parts[3..])?;
        let lattice = Arc::new(BoxLattice::new(dim, radius)?);
        let mut weights = vec![f64::NAN; lattice.edge_count()];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 2 * dim + 1 {
                return Err(Error::Parse(format!("line {}: expected {} fields", lineno + 2, 2 * dim + 1)));
            }
            let coords: Vec<i64> = fields[..2 * dim]
                .iter()
                .map(|s| s.parse::<i64>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
                .collect::<Result<_>>()?;
            let w: f64 = fields[2 * dim].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let edge = lattice
                .edge_between(&coords[..dim], &coords[dim..])
                .ok_or_else(|| Error::Parse(format!("line {}: not an edge of the box", lineno + 2)))?;
            if !weights[edge].is_nan() {
                return Err(Error::Parse(format!("line {}: duplicate edge", lineno + 2)));
            }
            weights[edge] = w;
        }
        if weights.iter().any(|w| w.is_nan()) {
            return Err(Error::Parse("snapshot does not cover every edge".into()));
        }
        Self::from_weights(lattice, law, seed, weights)
    }
}

/// Local speed measure `pi_z` over the box with its order statistics.
#[derive(Clone, Debug)]
pub struct SpeedField {
    pi: Vec<f64>,
    order: Vec<usize>,
    minimizer_count: usize,
}

impl SpeedField {
    /// Computes `pi_z` for every site and sorts; ties break toward the
    /// lexicographically smaller site. `count` minimizers are exposed.
    pub fn new(env: &Environment, count: usize) -> Result<Self> {
        let lattice = env.lattice();
        if count < 1 || count > lattice.site_count() {
            return Err(invalid(format!(
                "minimizer count must lie in [1, {}], got {count}",
                lattice.site_count()
            )));
        }
        let pi: Vec<f64> = (0..lattice.site_count()).map(|z| site_speed(env, z)).collect();
        let mut order: Vec<usize> = (0..pi.len()).collect();
        order.sort_by(|&a, &b| pi[a].total_cmp(&pi[b]).then(a.cmp(&b)));
        Ok(Self { pi, order, minimizer_count: count })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Sites in ascending order of `pi`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted(&self) -> Vec<f64> {
        self.order.iter().map(|&z| self.pi[z]).collect()
    }

    /// `pi_{k,B_n}`, 1-based.
    pub fn pi_k(&self, k: usize) -> f64 {
        self.pi[self.order[k - 1]]
    }

    /// `z_(k,n)`, 1-based.
    pub fn minimizer(&self, k: usize) -> usize {
        self.order[k - 1]
    }

    pub fn minimizers(&self) -> &[usize] {
        &self.order[..self.minimizer_count]
    }
}

/// Sum of the `2d` incident conductances in neighbour-table order. The
/// operator diagonal uses the same routine so both agree bit for bit.
pub(crate) fn site_speed(env: &Environment, site: usize) -> f64 {
    env.lattice()
        .neighbors_unchecked(site)
        .iter()
        .map(|nb| env.weights[nb.edge])
        .sum()
}

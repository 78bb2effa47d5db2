//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! Three operations: a heat map of the speed field or of a low eigenvector,
//! the percolation partition of the box, and a survival-curve explorer for
//! the rescaled order statistics. All of them work on `d = 2` and the Pareto
//! law with `u0 = 1`.

use std::sync::Arc;

use rcm_core::eigen::{self, SolverOptions};
use rcm_core::environment::{ConductanceLaw, Environment, SpeedField};
use rcm_core::experiments::{self, ExperimentConfig, Mode, Statistic};
use rcm_core::lattice::BoxLattice;
use rcm_core::operator::{ActiveSet, DirichletOperator};
use rcm_core::percolation::PercolationPartition;
use wasm_bindgen::prelude::*;

/// Largest radius the page accepts; keeps each operation well under a second.
pub const MAX_RADIUS: usize = 40;

/// Largest number of eigenvectors computed at once.
pub const MAX_VECTORS: usize = 8;

fn js(e: rcm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One sampled environment on `B_{2n}` viewed through the window `B_n`.
#[wasm_bindgen]
pub struct Demo {
    region: Environment,
    env: Environment,
    field: SpeedField,
    vectors: Option<eigen::EigenSolveResult>,
}

impl Demo {
    pub fn build(n: usize, gamma: f64, seed: u64) -> rcm_core::Result<Self> {
        if !(2..=MAX_RADIUS).contains(&n) {
            return Err(rcm_core::Error::InvalidParameter(format!("radius must lie in [2, {MAX_RADIUS}]")));
        }
        let law = ConductanceLaw::pareto(gamma, 1.0)?;
        let region = Environment::sample(Arc::new(BoxLattice::new(2, 2 * n)?), law, seed);
        let env = region.restrict(n)?;
        let field = SpeedField::new(&env, MAX_VECTORS + 1)?;
        Ok(Self { region, env, field, vectors: None })
    }

    /// Row-major `(2n+1)^2` grid; row index is `y + n`, column `x + n`.
    fn grid<T: Copy + Default>(&self, value: impl Fn(usize) -> T) -> Vec<T> {
        let lat = self.env.lattice();
        let side = lat.side();
        let n = lat.radius() as i64;
        let mut out = vec![T::default(); side * side];
        for s in 0..lat.site_count() {
            let c = lat.coords(s);
            out[(c[1] + n) as usize * side + (c[0] + n) as usize] = value(s);
        }
        out
    }

    pub fn solve(&mut self, k: usize) -> rcm_core::Result<&eigen::EigenSolveResult> {
        if !(1..=MAX_VECTORS).contains(&k) {
            return Err(rcm_core::Error::InvalidParameter(format!("k must lie in [1, {MAX_VECTORS}]")));
        }
        let have = self.vectors.as_ref().map_or(0, |v| v.len());
        if have < k {
            let op = DirichletOperator::assemble(&self.env, &ActiveSet::full(self.env.lattice()))?;
            let res = eigen::solve_bottom_k(&op, MAX_VECTORS, &SolverOptions::default())?;
            self.vectors = Some(eigen::principal_sign_fix(res, &op, 1e-9)?);
        }
        Ok(self.vectors.as_ref().expect("solved above"))
    }

    /// `psi_k(x)^2` on the grid.
    pub fn eigenvector_mass(&mut self, k: usize) -> rcm_core::Result<Vec<f64>> {
        let v = self.solve(k)?.eigenvectors[k - 1].clone();
        Ok(self.grid(|s| v[s] * v[s]))
    }

    /// 0 giant cluster, 1 hole, 2 hole holding one of the `marks` lowest speeds.
    pub fn partition_grid(&self, marks: usize) -> rcm_core::Result<Vec<u8>> {
        let rate = self.env.law().rate_params()?;
        let p = PercolationPartition::compute(&self.region, self.env.lattice().radius(), &rate)?;
        let mins = &self.field.minimizers()[..marks.min(self.field.minimizers().len())];
        Ok(self.grid(|s| match (p.in_giant(s), mins.contains(&s)) {
            (true, _) => 0,
            (false, false) => 1,
            (false, true) => 2,
        }))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, gamma: f64, seed: u64) -> Result<Demo, JsError> {
        Self::build(n, gamma, seed).map_err(js)
    }

    /// Grid side `2n + 1`.
    pub fn side(&self) -> usize {
        self.env.lattice().side()
    }

    /// `log10 pi_x` on the grid.
    pub fn log_speed(&self) -> Vec<f64> {
        let pi = self.field.pi();
        self.grid(|s| pi[s].log10())
    }

    /// `k`-th smallest speed, `1 <= k <= 9`.
    pub fn pi_k(&self, k: usize) -> f64 {
        self.field.pi_k(k.clamp(1, MAX_VECTORS + 1))
    }

    pub fn eigenvalue(&mut self, k: usize) -> Result<f64, JsError> {
        Ok(self.solve(k).map_err(js)?.eigenvalues[k - 1])
    }

    #[wasm_bindgen(js_name = eigenvectorMass)]
    pub fn eigenvector_mass_js(&mut self, k: usize) -> Result<Vec<f64>, JsError> {
        self.eigenvector_mass(k).map_err(js)
    }

    pub fn partition(&self, marks: usize) -> Result<Vec<u8>, JsError> {
        self.partition_grid(marks).map_err(js)
    }
}

/// Survival curve of `pi_k / a_n` over `trials` boxes of radius `n`:
/// `[zeta; 50] ++ [empirical; 50] ++ [theoretical; 50] ++ [sup_distance]`.
pub fn survival_values(n: usize, gamma: f64, k: usize, trials: usize, seed: u64) -> rcm_core::Result<Vec<f64>> {
    let cfg = ExperimentConfig {
        d: 2,
        n: vec![n],
        law: ConductanceLaw::pareto(gamma, 1.0)?,
        k,
        trials,
        seed,
        mode: Mode::PiOnly,
        ..Default::default()
    };
    cfg.validate()?;
    let out = experiments::run_experiment(&cfg)?;
    let c = out
        .survival
        .iter()
        .find(|c| c.k == k && c.statistic == Statistic::Pi)
        .ok_or_else(|| rcm_core::Error::Degenerate("no survival curve".into()))?;
    let mut v = c.zeta.clone();
    v.extend(&c.empirical);
    v.extend(&c.theoretical);
    v.push(c.sup_distance);
    Ok(v)
}

#[wasm_bindgen(js_name = survivalCurve)]
pub fn survival_curve(n: usize, gamma: f64, k: usize, trials: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    survival_values(n, gamma, k, trials, seed).map_err(js)
}

//! The sign-inverted Dirichlet Laplacian `-L^w` restricted to an active site set.
//!
//! For an active set `A ⊆ B_n` the operator is `1_A (-L^w) 1_A` acting on
//! functions supported in `A`:
//!
//! ```text
//! (op f)(x) = pi_x f(x) - sum_{y ~ x, y ∈ A} w_xy f(y),   x ∈ A
//! ```
//!
//! The diagonal keeps the full speed measure, so conductances to excluded or
//! out-of-box neighbours act as Dirichlet leakage.

use std::io::Write;

use crate::environment::{site_speed, Environment};
use crate::error::{invalid, Error, Result};
use crate::lattice::BoxLattice;

/// Square symmetric operator acting on dense vectors.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    /// `y = A x`; both slices have length `dim()`.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        Ok(y)
    }
}

/// `B_n` minus an ordered list of excluded sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    site_count: usize,
    excluded: Vec<usize>,
    // site -> local index
    local: Vec<Option<usize>>,
    // local index -> site
    sites: Vec<usize>,
}

impl ActiveSet {
    pub fn full(lattice: &BoxLattice) -> Self {
        Self::excluding(lattice, &[]).expect("empty exclusion is always valid")
    }

    pub fn excluding(lattice: &BoxLattice, excluded: &[usize]) -> Result<Self> {
        let site_count = lattice.site_count();
        let mut local = vec![Some(0); site_count];
        for &z in excluded {
            lattice.check_site(z)?;
            if local[z].is_none() {
                return Err(invalid(format!("site {z} excluded twice")));
            }
            local[z] = None;
        }
        let mut sites = Vec::with_capacity(site_count - excluded.len());
        for (s, slot) in local.iter_mut().enumerate() {
            if slot.is_some() {
                *slot = Some(sites.len());
                sites.push(s);
            }
        }
        Ok(Self { site_count, excluded: excluded.to_vec(), local, sites })
    }

    /// `B_n \ {z_1, ..., z_{l-1}}` from an ordered minimizer list.
    pub fn deflated(lattice: &BoxLattice, minimizers: &[usize], level: usize) -> Result<Self> {
        if level < 1 || level - 1 > minimizers.len() {
            return Err(invalid(format!("deflation level {level} needs {} minimizers", level - 1)));
        }
        Self::excluding(lattice, &minimizers[..level - 1])
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn local_index(&self, site: usize) -> Option<usize> {
        self.local.get(site).copied().flatten()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.local_index(site).is_some()
    }

    pub fn box_site_count(&self) -> usize {
        self.site_count
    }

    /// Extends a vector over active sites by zero to the whole box.
    pub fn extend(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.site_count];
        for (i, &s) in self.sites.iter().enumerate() {
            out[s] = v[i];
        }
        out
    }

    /// Restricts a whole-box vector to the active sites.
    pub fn restrict(&self, f: &[f64]) -> Vec<f64> {
        self.sites.iter().map(|&s| f[s]).collect()
    }
}

/// Compressed sparse row matrix of `1_A (-L^w) 1_A`, columns sorted, diagonal included.
#[derive(Clone, Debug)]
pub struct DirichletOperator {
    active: ActiveSet,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    diag: Vec<f64>,
}

impl DirichletOperator {
    pub fn assemble(env: &Environment, active: &ActiveSet) -> Result<Self> {
        let lattice = env.lattice();
        if active.box_site_count() != lattice.site_count() {
            return Err(invalid("active set belongs to a different box"));
        }
        let n = active.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::with_capacity(n * (lattice.degree() + 1));
        let mut val = Vec::with_capacity(n * (lattice.degree() + 1));
        let mut diag = Vec::with_capacity(n);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(lattice.degree() + 1);
        row_ptr.push(0);
        for (i, &x) in active.sites().iter().enumerate() {
            let pi = site_speed(env, x);
            diag.push(pi);
            row.clear();
            row.push((i, pi));
            for nb in lattice.neighbors_unchecked(x) {
                if let Some(j) = nb.site.and_then(|y| active.local_index(y)) {
                    row.push((j, -env.weight(nb.edge)));
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &row {
                col.push(j);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        Ok(Self { active: active.clone(), row_ptr, col, val, diag })
    }

    pub fn active(&self) -> &ActiveSet {
        &self.active
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(p) => self.val[r.start + p],
            Err(_) => 0.0,
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for (j, v) in self.row(i) {
                out[i * n + j] = v;
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    /// `<f, op g>`.
    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let og = self.apply(g)?;
        if f.len() != og.len() {
            return Err(Error::DimensionMismatch { expected: og.len(), got: f.len() });
        }
        Ok(dot(f, &og))
    }

    /// Whether the graph of nonzero off-diagonal couplings is connected.
    pub fn is_connected(&self) -> bool {
        let n = self.dim();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for (j, v) in self.row(i) {
                if j != i && v != 0.0 && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// Coordinate dump: header `dim nnz`, then `row col value` per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.dim(), self.nnz())?;
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:?}")?;
            }
        }
        Ok(())
    }
}

impl SymmetricOperator for DirichletOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[p] * x[self.col[p]];
            }
            *yi = acc;
        }
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSymmetric {
    n: usize,
    data: Vec<f64>,
}

impl DenseSymmetric {
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, &v) in values.iter().enumerate() {
            data[i * n + i] = v;
        }
        Self { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl From<&DirichletOperator> for DenseSymmetric {
    fn from(op: &DirichletOperator) -> Self {
        Self { n: op.dim(), data: op.to_dense() }
    }
}

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }
}

/// `E(f) = sum over all edges {x, y} of w_xy (f(x) - f(y))^2`, with `f`
/// given on the whole box and taken as zero outside it. Errors if `f` is
/// nonzero outside `active`.
pub fn dirichlet_energy(env: &Environment, active: &ActiveSet, f: &[f64]) -> Result<f64> {
    let lattice = env.lattice();
    if f.len() != lattice.site_count() {
        return Err(Error::DimensionMismatch { expected: lattice.site_count(), got: f.len() });
    }
    if let Some(&z) = active.excluded().iter().find(|&&z| f[z] != 0.0) {
        return Err(invalid(format!("function is nonzero on excluded site {z}")));
    }
    let value = |s: Option<usize>| s.map_or(0.0, |s| f[s]);
    Ok(lattice
        .edges()
        .iter()
        .zip(env.weights())
        .map(|(e, &w)| {
            let d = value(e.lower) - value(e.upper);
            w * d * d
        })
        .sum())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{ConductanceLaw, SpeedField};
    use std::sync::Arc;

    fn law() -> ConductanceLaw {
        ConductanceLaw::pareto(0.1, 1.0).unwrap()
    }

    fn ones(n: usize) -> Environment {
        Environment::constant(Arc::new(BoxLattice::new(2, n).unwrap()), law(), 1.0).unwrap()
    }

    #[test]
    fn grid_laplacian_entries() {
        let env = ones(1);
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        assert_eq!(op.dim(), 9);
        assert!(op.diagonal().iter().all(|&d| d == 4.0));
        assert_eq!(op.nnz(), 9 + 2 * 12);
        assert!(op.is_symmetric());
        let lat = env.lattice();
        let c = lat.index_of(&[0, 0]).unwrap();
        let m = lat.index_of(&[0, 1]).unwrap();
        assert_eq!(op.get(c, m), -1.0);
        assert_eq!(op.get(lat.index_of(&[-1, -1]).unwrap(), c), 0.0);
    }

    #[test]
    fn excluding_center_keeps_full_diagonal() {
        let env = ones(1);
        let lat = env.lattice();
        let c = lat.index_of(&[0, 0]).unwrap();
        let active = ActiveSet::excluding(lat, &[c]).unwrap();
        let op = DirichletOperator::assemble(&env, &active).unwrap();
        assert_eq!(op.dim(), 8);
        assert!(op.diagonal().iter().all(|&d| d == 4.0));
        // edge midpoints: 2 remaining in-box couplings each
        for s in [[0, 1], [1, 0], [0, -1], [-1, 0]] {
            let i = active.local_index(lat.index_of(&s).unwrap()).unwrap();
            assert_eq!(op.row(i).count(), 3);
        }
        assert!(ActiveSet::excluding(lat, &[c, c]).is_err());
        assert!(ActiveSet::excluding(lat, &[99]).is_err());
    }

    #[test]
    fn constant_vector_sees_only_leakage() {
        let env = Environment::sample(Arc::new(BoxLattice::new(2, 4).unwrap()), law(), 3);
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        let y = op.apply(&vec![1.0; op.dim()]).unwrap();
        for (x, yx) in y.iter().enumerate() {
            let leak: f64 = env
                .lattice()
                .neighbors(x)
                .unwrap()
                .iter()
                .filter(|nb| nb.site.is_none())
                .map(|nb| env.weight(nb.edge))
                .sum();
            assert!((yx - leak).abs() <= 1e-14 * op.diagonal()[x]);
        }
        assert!(op.apply(&[1.0]).is_err());
        assert!(op.apply(&vec![0.0; op.dim()]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_of_delta_is_speed() {
        let env = Environment::sample(Arc::new(BoxLattice::new(2, 3).unwrap()), law(), 5);
        let field = SpeedField::new(&env, 1).unwrap();
        let active = ActiveSet::full(env.lattice());
        for z in [0, 10, 24, 48] {
            let mut f = vec![0.0; env.lattice().site_count()];
            f[z] = 1.0;
            let e = dirichlet_energy(&env, &active, &f).unwrap();
            assert!((e - field.pi()[z]).abs() <= 1e-15 * field.pi()[z]);
        }
        let zero = vec![0.0; env.lattice().site_count()];
        assert_eq!(dirichlet_energy(&env, &active, &zero).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_matches_speed_field_exactly() {
        let env = Environment::sample(Arc::new(BoxLattice::new(3, 2).unwrap()), law(), 11);
        let field = SpeedField::new(&env, 3).unwrap();
        let active = ActiveSet::deflated(env.lattice(), field.minimizers(), 3).unwrap();
        let op = DirichletOperator::assemble(&env, &active).unwrap();
        for (i, &x) in active.sites().iter().enumerate() {
            assert_eq!(op.diagonal()[i], field.pi()[x]);
        }
    }

    #[test]
    fn deflation_consistency() {
        let env = Environment::sample(Arc::new(BoxLattice::new(2, 4).unwrap()), law(), 2);
        let field = SpeedField::new(&env, 4).unwrap();
        let lat = env.lattice();
        for l in 1..4 {
            let a = ActiveSet::deflated(lat, field.minimizers(), l).unwrap();
            let b = ActiveSet::deflated(lat, field.minimizers(), l + 1).unwrap();
            let opa = DirichletOperator::assemble(&env, &a).unwrap();
            let opb = DirichletOperator::assemble(&env, &b).unwrap();
            for (ib, &x) in b.sites().iter().enumerate() {
                let ia = a.local_index(x).unwrap();
                for (jb, &y) in b.sites().iter().enumerate() {
                    let ja = a.local_index(y).unwrap();
                    assert_eq!(opb.get(ib, jb), opa.get(ia, ja));
                }
            }
        }
    }

    #[test]
    fn coordinate_dump_header() {
        let env = ones(1);
        let op = DirichletOperator::assemble(&env, &ActiveSet::full(env.lattice())).unwrap();
        let mut buf = Vec::new();
        op.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("9 33"));
        assert_eq!(text.lines().count(), 34);
    }
}

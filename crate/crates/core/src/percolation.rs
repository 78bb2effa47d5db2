//! Thresholded environment, open clusters, the giant cluster and its holes.
//!
//! An edge is open when its conductance exceeds `g(n^{1-eps2})`. Clusters are
//! labelled on the working region `B_{2n}`; the largest one stands in for the
//! infinite open cluster, and the sites of `B_n` outside it are the holes.

use std::io::Write;

use crate::environment::{Environment, RateParams, SpeedField};
use crate::error::{invalid, Error, Result};
use crate::lattice::BoxLattice;

/// Disjoint sets whose representative is always the smallest member.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            // Path halving.
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    pub fn labels(&mut self) -> Vec<usize> {
        (0..self.parent.len()).map(|x| self.find(x)).collect()
    }
}

/// `g(n^{1 - eps2})`, the conductance level at or below which edges are closed.
pub fn threshold_for(env: &Environment, rate: &RateParams, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(invalid("threshold needs n >= 2"));
    }
    env.law().quantile_g((n as f64).powf(1.0 - rate.eps2))
}

/// Open-edge mask: `w_e > threshold`.
pub fn open_edges(env: &Environment, threshold: f64) -> Vec<bool> {
    env.weights().iter().map(|&w| w > threshold).collect()
}

/// Cluster label per site: the smallest site index of its open cluster.
/// Boundary edges lead out of the region and never join clusters.
pub fn label_clusters(lattice: &BoxLattice, open: &[bool]) -> Result<Vec<usize>> {
    if open.len() != lattice.edge_count() {
        return Err(Error::DimensionMismatch { expected: lattice.edge_count(), got: open.len() });
    }
    let mut uf = UnionFind::new(lattice.site_count());
    for (e, &is_open) in lattice.edges().iter().zip(open) {
        if let (true, Some(a), Some(b)) = (is_open, e.lower, e.upper) {
            uf.union(a, b);
        }
    }
    Ok(uf.labels())
}

/// Giant open cluster of the working region restricted to `B_n`, and its holes.
#[derive(Clone, Debug)]
pub struct PercolationPartition {
    threshold: f64,
    open: Vec<bool>,
    labels: Vec<usize>,
    giant_label: usize,
    giant_size: usize,
    inner: BoxLattice,
    in_giant: Vec<bool>,
    holes: Vec<usize>,
}

impl PercolationPartition {
    /// Partition with the standard threshold `g(n^{1-eps2})`, `n` the inner radius.
    pub fn compute(region: &Environment, inner_radius: usize, rate: &RateParams) -> Result<Self> {
        let threshold = threshold_for(region, rate, inner_radius)?;
        Self::with_threshold(region, inner_radius, threshold)
    }

    /// Partition of `B_{inner_radius}` using clusters of the whole region.
    ///
    /// The giant cluster is the largest one by site count, ties going to the
    /// smaller label. Fails if no edge of the region is open.
    pub fn with_threshold(region: &Environment, inner_radius: usize, threshold: f64) -> Result<Self> {
        let lattice = region.lattice();
        let inner = BoxLattice::new(lattice.dim(), inner_radius)?;
        let embed = lattice.embed_sites(&inner)?;
        let open = open_edges(region, threshold);
        let labels = label_clusters(lattice, &open)?;
        let mut sizes = vec![0usize; labels.len()];
        for &l in &labels {
            sizes[l] += 1;
        }
        let (giant_label, giant_size) = sizes
            .iter()
            .enumerate()
            .fold((0, 0), |best, (l, &s)| if s > best.1 { (l, s) } else { best });
        if giant_size < 2 {
            return Err(Error::Degenerate("no open edge: every site is its own cluster".into()));
        }
        let in_giant: Vec<bool> = embed.iter().map(|&s| labels[s] == giant_label).collect();
        let holes = (0..inner.site_count()).filter(|&s| !in_giant[s]).collect();
        Ok(Self { threshold, open, labels, giant_label, giant_size, inner, in_giant, holes })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Open-edge mask over the working region.
    pub fn open_edges(&self) -> &[bool] {
        &self.open
    }

    pub fn closed_fraction(&self) -> f64 {
        self.open.iter().filter(|&&o| !o).count() as f64 / self.open.len() as f64
    }

    /// Cluster labels over the working region.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn giant_label(&self) -> usize {
        self.giant_label
    }

    pub fn giant_size(&self) -> usize {
        self.giant_size
    }

    /// The inner box `B_n` the partition refers to.
    pub fn inner(&self) -> &BoxLattice {
        &self.inner
    }

    /// Whether an inner site belongs to the giant cluster.
    pub fn in_giant(&self, site: usize) -> bool {
        self.in_giant[site]
    }

    pub fn giant_mask(&self) -> &[bool] {
        &self.in_giant
    }

    /// Inner sites outside the giant cluster, ascending.
    pub fn holes(&self) -> &[usize] {
        &self.holes
    }

    pub fn hole_fraction(&self) -> f64 {
        self.holes.len() as f64 / self.inner.site_count() as f64
    }

    /// Sum of `v(x)^2` over inner sites in the giant cluster; `v` is indexed by inner site.
    pub fn mass_on_giant(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.inner.site_count() {
            return Err(Error::DimensionMismatch { expected: self.inner.site_count(), got: v.len() });
        }
        Ok(v.iter().zip(&self.in_giant).filter(|(_, &g)| g).map(|(x, _)| x * x).sum())
    }

    /// Whether the first `k + 1` minimizers of `field` (over the inner box) are holes.
    pub fn minima_in_holes(&self, field: &SpeedField, k: usize) -> Result<bool> {
        if k + 1 > field.minimizers().len() {
            return Err(invalid(format!(
                "need {} minimizers, field exposes {}",
                k + 1,
                field.minimizers().len()
            )));
        }
        Ok(field.minimizers()[..=k].iter().all(|&z| !self.in_giant[z]))
    }

    /// `b`-sparseness of the holes.
    pub fn holes_sparse(&self, b: u64) -> Option<(usize, usize)> {
        b_sparse_violation(&self.inner, &self.holes, b)
    }

    /// CSV dump `site_x,site_y[,...],in_D` of the inner box.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        const NAMES: [&str; 6] = ["site_x", "site_y", "site_z", "site_w", "site_v", "site_u"];
        let d = self.inner.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = NAMES[..d].to_vec();
        header.push("in_D");
        w.write_record(&header)?;
        for s in 0..self.inner.site_count() {
            let mut row: Vec<String> = self.inner.coords(s).iter().map(|c| c.to_string()).collect();
            row.push(u8::from(self.in_giant[s]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First pair of sites violating `b`-sparseness, if any.
///
/// Two lattice points share a window `{x : |x - z|∞ <= b}` with `z ∈ Z^d`
/// exactly when `|x - y|∞ <= 2b`: take `z` the coordinatewise midpoint
/// rounded down.
pub fn b_sparse_violation(lattice: &BoxLattice, sites: &[usize], b: u64) -> Option<(usize, usize)> {
    let coords: Vec<Vec<i64>> = sites.iter().map(|&s| lattice.coords(s)).collect();
    points_b_sparse_violation(&coords, b).map(|(i, j)| (sites[i], sites[j]))
}

/// As [`b_sparse_violation`] on raw coordinates; returns positions in `points`.
pub fn points_b_sparse_violation(points: &[Vec<i64>], b: u64) -> Option<(usize, usize)> {
    let reach = 2 * b as i64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let close = points[i].iter().zip(&points[j]).all(|(a, c)| (a - c).abs() <= reach);
            if close {
                return Some((i, j));
            }
        }
    }
    None
}

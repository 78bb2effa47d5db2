//! Box geometry `B_n = [-n, n]^d ∩ Z^d`.
//!
//! Sites carry dense indices in lexicographic coordinate order (first axis
//! most significant). Edges are the nearest-neighbour bonds with at least one
//! endpoint in the box; an edge is named by its lower endpoint (`base`) and an
//! axis, and edges are indexed in lexicographic `(base, axis)` order. Bonds
//! with one endpoint outside the box are boundary edges: they carry
//! conductances like any other edge.

use crate::error::{invalid, Error, Result};

/// Largest supported dimension. Edge keys pack `d` coordinates into 61 bits.
pub const MAX_DIM: usize = 6;

/// One endpoint-side entry of a site's neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    /// In-box neighbour, or `None` when the neighbour lies outside the box.
    pub site: Option<usize>,
    /// Index of the connecting edge.
    pub edge: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Lower endpoint (`base`), `None` if outside the box.
    pub lower: Option<usize>,
    /// Upper endpoint `base + e_axis`, `None` if outside the box.
    pub upper: Option<usize>,
    pub axis: usize,
    /// Lattice-global key of the bond; identical for the same bond in any box.
    pub key: u64,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct BoxLattice {
    dim: usize,
    radius: usize,
    side: usize,
    site_count: usize,
    edges: Vec<Edge>,
    interior_edges: usize,
    // site_count * 2d entries, directions ordered (-e_0, +e_0, -e_1, +e_1, ...)
    neighbors: Vec<Neighbor>,
}

impl BoxLattice {
    /// Builds `B_n` in dimension `d` with complete site and edge indexing.
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("dimension must be >= 2, got {dim}")));
        }
        if dim > MAX_DIM {
            return Err(invalid(format!("dimension must be <= {MAX_DIM}, got {dim}")));
        }
        if radius < 1 {
            return Err(invalid("box radius must be >= 1"));
        }
        let bits = key_bits(dim);
        if (radius as u64 + 1) >= (1u64 << (bits - 1)) {
            return Err(invalid(format!("radius {radius} too large for dimension {dim}")));
        }
        let side = 2 * radius + 1;
        let site_count = side
            .checked_pow(dim as u32)
            .ok_or_else(|| invalid("box too large"))?;

        let n = radius as i64;
        let mut edges = Vec::new();
        let mut interior_edges = 0;
        // Enumerate bases over [-n-1, n]^d in lexicographic order, axes ascending.
        let ext = side + 1;
        let total = ext.pow(dim as u32);
        let mut base = vec![0i64; dim];
        for flat in 0..total {
            let mut rem = flat;
            for j in (0..dim).rev() {
                base[j] = (rem % ext) as i64 - n - 1;
                rem /= ext;
            }
            for axis in 0..dim {
                let others_inside = (0..dim).all(|j| j == axis || base[j] >= -n);
                if !others_inside {
                    continue;
                }
                let lower = if base[axis] >= -n { Some(encode(&base, radius)) } else { None };
                let upper = if base[axis] < n {
                    base[axis] += 1;
                    let s = encode(&base, radius);
                    base[axis] -= 1;
                    Some(s)
                } else {
                    None
                };
                let e = Edge { lower, upper, axis, key: edge_key(&base, axis, bits) };
                if e.is_interior() {
                    interior_edges += 1;
                }
                edges.push(e);
            }
        }

        let degree = 2 * dim;
        let placeholder = Neighbor { site: None, edge: usize::MAX };
        let mut neighbors = vec![placeholder; site_count * degree];
        for (idx, e) in edges.iter().enumerate() {
            if let Some(lo) = e.lower {
                neighbors[lo * degree + 2 * e.axis + 1] = Neighbor { site: e.upper, edge: idx };
            }
            if let Some(hi) = e.upper {
                neighbors[hi * degree + 2 * e.axis] = Neighbor { site: e.lower, edge: idx };
            }
        }
        debug_assert!(neighbors.iter().all(|nb| nb.edge != usize::MAX));

        Ok(Self { dim, radius, side, site_count, edges, interior_edges, neighbors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn interior_edge_count(&self) -> usize {
        self.interior_edges
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.len() - self.interior_edges
    }

    /// The `2d` neighbour entries of `site`, in direction order
    /// `(-e_0, +e_0, -e_1, +e_1, ...)`.
    pub fn neighbors(&self, site: usize) -> Result<&[Neighbor]> {
        self.check_site(site)?;
        Ok(self.neighbors_unchecked(site))
    }

    pub(crate) fn neighbors_unchecked(&self, site: usize) -> &[Neighbor] {
        let deg = self.degree();
        &self.neighbors[site * deg..(site + 1) * deg]
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.site_count {
            return Err(Error::OutOfRange { index: site, size: self.site_count });
        }
        Ok(())
    }

    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim];
        self.coords_into(site, &mut out);
        out
    }

    pub fn coords_into(&self, site: usize, out: &mut [i64]) {
        let mut rem = site;
        for j in (0..self.dim).rev() {
            out[j] = (rem % self.side) as i64 - self.radius as i64;
            rem /= self.side;
        }
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        coords.len() == self.dim && coords.iter().all(|c| c.unsigned_abs() as usize <= self.radius)
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        if !self.contains(coords) {
            return None;
        }
        Some(encode(coords, self.radius))
    }

    /// Coordinates of both endpoints of an edge, lower endpoint first.
    pub fn edge_endpoints(&self, edge: usize) -> (Vec<i64>, Vec<i64>) {
        let e = &self.edges[edge];
        let (lo, hi) = match (e.lower, e.upper) {
            (Some(lo), _) => {
                let lo = self.coords(lo);
                let mut hi = lo.clone();
                hi[e.axis] += 1;
                (lo, hi)
            }
            (None, Some(hi)) => {
                let hi = self.coords(hi);
                let mut lo = hi.clone();
                lo[e.axis] -= 1;
                (lo, hi)
            }
            (None, None) => unreachable!("edge without in-box endpoint"),
        };
        (lo, hi)
    }

    /// Finds the edge joining two neighbouring lattice points, at least one in the box.
    pub fn edge_between(&self, x: &[i64], y: &[i64]) -> Option<usize> {
        if x.len() != self.dim || y.len() != self.dim {
            return None;
        }
        let diff: Vec<i64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
        let axis = diff.iter().position(|&v| v != 0)?;
        if diff[axis].abs() != 1 || diff.iter().filter(|&&v| v != 0).count() != 1 {
            return None;
        }
        let (inside, dir_plus) = match (self.index_of(x), self.index_of(y)) {
            (Some(s), _) => (s, diff[axis] > 0),
            (None, Some(s)) => (s, diff[axis] < 0),
            (None, None) => return None,
        };
        let slot = 2 * axis + usize::from(dir_plus);
        Some(self.neighbors_unchecked(inside)[slot].edge)
    }

    /// ℓ∞ distance between two sites.
    pub fn linf_distance(&self, a: usize, b: usize) -> u64 {
        let ca = self.coords(a);
        let cb = self.coords(b);
        ca.iter().zip(&cb).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
    }

    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        self.neighbors_unchecked(a).iter().any(|nb| nb.site == Some(b))
    }

    /// Maps each site of `inner` (a smaller or equal concentric box) to its index here.
    pub fn embed_sites(&self, inner: &BoxLattice) -> Result<Vec<usize>> {
        if inner.dim != self.dim || inner.radius > self.radius {
            return Err(invalid("inner box must be concentric and not larger"));
        }
        let mut buf = vec![0i64; self.dim];
        Ok((0..inner.site_count)
            .map(|s| {
                inner.coords_into(s, &mut buf);
                encode(&buf, self.radius)
            })
            .collect())
    }

    /// Maps each edge of `inner` to the index of the same bond here.
    pub fn embed_edges(&self, inner: &BoxLattice) -> Result<Vec<usize>> {
        let sites = self.embed_sites(inner)?;
        Ok(inner
            .edges
            .iter()
            .map(|e| match (e.lower, e.upper) {
                (Some(lo), _) => self.neighbors_unchecked(sites[lo])[2 * e.axis + 1].edge,
                (None, Some(hi)) => self.neighbors_unchecked(sites[hi])[2 * e.axis].edge,
                (None, None) => unreachable!(),
            })
            .collect())
    }
}

fn encode(coords: &[i64], radius: usize) -> usize {
    let side = 2 * radius as i64 + 1;
    coords.iter().fold(0i64, |acc, &c| acc * side + c + radius as i64) as usize
}

fn key_bits(dim: usize) -> u32 {
    61 / dim as u32
}

fn edge_key(base: &[i64], axis: usize, bits: u32) -> u64 {
    let offset = 1i64 << (bits - 1);
    let packed = base
        .iter()
        .fold(0u64, |acc, &c| (acc << bits) | (c + offset) as u64);
    (packed << 3) | axis as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_boxes_have_expected_counts() {
        let b = BoxLattice::new(2, 1).unwrap();
        assert_eq!(b.site_count(), 9);
        assert_eq!(b.interior_edge_count(), 12);
        assert_eq!(b.boundary_edge_count(), 12);
        assert_eq!(BoxLattice::new(3, 1).unwrap().site_count(), 27);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BoxLattice::new(1, 3).is_err());
        assert!(BoxLattice::new(2, 0).is_err());
        assert!(BoxLattice::new(7, 1).is_err());
    }

    #[test]
    fn neighbor_counts_by_position() {
        let b = BoxLattice::new(2, 1).unwrap();
        let inside = |s: usize| b.neighbors(s).unwrap().iter().filter(|n| n.site.is_some()).count();
        let center = b.index_of(&[0, 0]).unwrap();
        let corner = b.index_of(&[-1, -1]).unwrap();
        let mid = b.index_of(&[0, 1]).unwrap();
        assert_eq!(inside(center), 4);
        assert_eq!(inside(corner), 2);
        assert_eq!(inside(mid), 3);
        assert!(b.neighbors(9).is_err());
    }

    #[test]
    fn edges_are_lexicographic() {
        let b = BoxLattice::new(2, 2).unwrap();
        let keys: Vec<(Vec<i64>, usize)> = (0..b.edge_count())
            .map(|e| (b.edge_endpoints(e).0, b.edges()[e].axis))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degree_and_handshake() {
        for (d, n) in [(2, 1), (2, 3), (3, 2)] {
            let b = BoxLattice::new(d, n).unwrap();
            let mut inside_total = 0;
            for s in 0..b.site_count() {
                let nb = b.neighbors(s).unwrap();
                assert_eq!(nb.len(), 2 * d);
                inside_total += nb.iter().filter(|x| x.site.is_some()).count();
                assert_eq!(b.index_of(&b.coords(s)), Some(s));
            }
            assert_eq!(inside_total, 2 * b.interior_edge_count());
            // every site has degree 2d, each interior edge is seen twice
            assert_eq!(
                2 * b.interior_edge_count() + b.boundary_edge_count(),
                2 * d * b.site_count()
            );
        }
    }

    #[test]
    fn embedding_preserves_bond_keys() {
        let small = BoxLattice::new(2, 2).unwrap();
        let big = BoxLattice::new(2, 4).unwrap();
        let map = big.embed_edges(&small).unwrap();
        for (i, &j) in map.iter().enumerate() {
            assert_eq!(small.edges()[i].key, big.edges()[j].key);
            assert_eq!(small.edge_endpoints(i), big.edge_endpoints(j));
        }
    }

    #[test]
    fn edge_between_finds_boundary_bonds() {
        let b = BoxLattice::new(2, 1).unwrap();
        let e = b.edge_between(&[1, 0], &[2, 0]).unwrap();
        assert!(!b.edges()[e].is_interior());
        assert_eq!(b.edge_between(&[2, 0], &[1, 0]), Some(e));
        assert_eq!(b.edge_between(&[0, 0], &[1, 1]), None);
    }
}

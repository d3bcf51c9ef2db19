//! Fixed Cartesian background grid with multilinear (hat) shape functions.
//!
//! Nodes are stored lexicographically with the x index running fastest. In 2D
//! the third axis has a single node layer and every vector keeps a zero
//! z component. Shape functions are the tensor product of 1D hats, so each
//! point is supported by the `2^dim` corners of the cell containing it.

use crate::error::{Error, Result};
use crate::Vec3;

/// Upper bound on the number of stencil nodes (trilinear case).
pub const MAX_STENCIL: usize = 8;

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    origin: Vec3,
    h: f64,
    counts: [usize; 3],
    corner_offsets: [usize; MAX_STENCIL],
    /// Lumped nodal heat capacity `C_I` (J/°C).
    pub capacity: Vec<f64>,
    /// Nodal temperature `T_I` (°C).
    pub temperature: Vec<f64>,
    /// Nodal temperature rate (°C/s).
    pub rate: Vec<f64>,
    /// Internal heat `E_int` (W), including the virtual flux contribution.
    pub internal_heat: Vec<f64>,
    /// External heat `E_ext` (W): sources and conventional boundary terms.
    pub external_heat: Vec<f64>,
    /// Nodal mass (kg).
    pub mass: Vec<f64>,
    /// Projected constant marker field (m^dim).
    pub scalar: Vec<f64>,
    /// Surface node flag (set by surface detection).
    pub surface: Vec<bool>,
    /// Nodes whose capacity exceeds the inactive threshold.
    pub active: Vec<bool>,
}

/// Shape function values and gradients of the nodes supporting one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    len: usize,
    nodes: [usize; MAX_STENCIL],
    weights: [f64; MAX_STENCIL],
    gradients: [Vec3; MAX_STENCIL],
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.len]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights[..self.len]
    }

    pub fn gradients(&self) -> &[Vec3] {
        &self.gradients[..self.len]
    }

    /// Iterates `(node, weight, gradient)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, Vec3)> + '_ {
        (0..self.len).map(move |k| (self.nodes[k], self.weights[k], self.gradients[k]))
    }
}

/// Compact particle locator: the lowest-corner node of the containing cell
/// and the local coordinates in `[0, 1]` along each axis.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Locator {
    pub cell: usize,
    pub base_node: usize,
    pub xi: Vec3,
}

/// Multilinear weights and gradients for local coordinates `xi`.
///
/// Corner `k` sits at offset bit `d` of `k` along axis `d`.
#[inline]
pub fn shape_functions(
    dim: usize,
    xi: &Vec3,
    inv_h: f64,
) -> ([f64; MAX_STENCIL], [Vec3; MAX_STENCIL]) {
    let mut w = [0.0; MAX_STENCIL];
    let mut g = [[0.0; 3]; MAX_STENCIL];
    if dim == 2 {
        let (x, y) = (xi[0], xi[1]);
        let wx = [1.0 - x, x];
        let wy = [1.0 - y, y];
        let dx = [-inv_h, inv_h];
        for k in 0..4 {
            let (a, b) = (k & 1, (k >> 1) & 1);
            w[k] = wx[a] * wy[b];
            g[k] = [dx[a] * wy[b], wx[a] * dx[b], 0.0];
        }
    } else {
        let (x, y, z) = (xi[0], xi[1], xi[2]);
        let wx = [1.0 - x, x];
        let wy = [1.0 - y, y];
        let wz = [1.0 - z, z];
        let dx = [-inv_h, inv_h];
        for k in 0..8 {
            let (a, b, c) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            w[k] = wx[a] * wy[b] * wz[c];
            g[k] = [
                dx[a] * wy[b] * wz[c],
                wx[a] * dx[b] * wz[c],
                wx[a] * wy[b] * dx[c],
            ];
        }
    }
    (w, g)
}

impl Grid {
    /// Builds a grid covering `[origin, origin + extent]` with cell size `h`.
    ///
    /// Per-axis extents that are not within 0.5% of a whole number of cells
    /// are padded up to the next cell.
    pub fn new(origin: &[f64], extent: &[f64], h: f64, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("dim must be 2 or 3, got {dim}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!(
                "cell size must be positive, got {h}"
            )));
        }
        if origin.len() < dim || extent.len() < dim {
            return Err(Error::invalid("origin/extent shorter than dim"));
        }
        let mut counts = [1usize; 3];
        let mut o = [0.0; 3];
        for d in 0..dim {
            let e = extent[d];
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::invalid(format!(
                    "extent along axis {d} must be positive, got {e}"
                )));
            }
            let cells = e / h;
            let rounded = cells.round();
            let cells = if (cells - rounded).abs() <= 0.005 {
                rounded
            } else {
                cells.ceil()
            };
            counts[d] = (cells as usize).max(1) + 1;
            o[d] = origin[d];
        }
        let n = counts[0] * counts[1] * counts[2];
        let mut corner_offsets = [0usize; MAX_STENCIL];
        for (k, off) in corner_offsets.iter_mut().enumerate().take(1 << dim) {
            *off = (k & 1) + ((k >> 1) & 1) * counts[0] + ((k >> 2) & 1) * counts[0] * counts[1];
        }
        Ok(Grid {
            dim,
            origin: o,
            h,
            counts,
            corner_offsets,
            capacity: vec![0.0; n],
            temperature: vec![0.0; n],
            rate: vec![0.0; n],
            internal_heat: vec![0.0; n],
            external_heat: vec![0.0; n],
            mass: vec![0.0; n],
            scalar: vec![0.0; n],
            surface: vec![false; n],
            active: vec![false; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// Node counts per axis (the third entry is 1 in 2D).
    pub fn node_counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn cell_counts(&self) -> [usize; 3] {
        let mut c = [1; 3];
        for (d, cd) in c.iter_mut().enumerate().take(self.dim) {
            *cd = self.counts[d] - 1;
        }
        c
    }

    pub fn num_nodes(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn num_cells(&self) -> usize {
        let c = self.cell_counts();
        c[0] * c[1] * c[2]
    }

    pub fn stencil_len(&self) -> usize {
        1 << self.dim
    }

    /// Cell volume `h^dim` (unit thickness in 2D).
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Upper corner of the grid box.
    pub fn upper(&self) -> Vec3 {
        let mut u = self.origin;
        for (d, ud) in u.iter_mut().enumerate().take(self.dim) {
            *ud += (self.counts[d] - 1) as f64 * self.h;
        }
        u
    }

    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn node_ijk(&self, index: usize) -> [usize; 3] {
        let i = index % self.counts[0];
        let r = index / self.counts[0];
        [i, r % self.counts[1], r / self.counts[1]]
    }

    pub fn node_position(&self, index: usize) -> Vec3 {
        let ijk = self.node_ijk(index);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.origin[d] + ijk[d] as f64 * self.h;
        }
        x
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        let c = self.cell_counts();
        ijk[0] + c[0] * (ijk[1] + c[1] * ijk[2])
    }

    pub fn cell_ijk(&self, index: usize) -> [usize; 3] {
        let c = self.cell_counts();
        let i = index % c[0];
        let r = index / c[0];
        [i, r % c[1], r / c[1]]
    }

    /// Node index of corner `k` of cell `cell`.
    pub fn cell_corner(&self, cell: usize, k: usize) -> usize {
        let ijk = self.cell_ijk(cell);
        self.node_index(ijk) + self.corner_offsets[k]
    }

    pub(crate) fn corner_offsets(&self) -> &[usize; MAX_STENCIL] {
        &self.corner_offsets
    }

    /// Fraction of a node's full support `h^dim` that lies inside the grid.
    ///
    /// Nodes on the grid faces see half their support per clipped axis.
    pub fn support_fraction(&self, node: usize) -> f64 {
        let ijk = self.node_ijk(node);
        let mut f = 1.0;
        for d in 0..self.dim {
            if ijk[d] == 0 || ijk[d] + 1 == self.counts[d] {
                f *= 0.5;
            }
        }
        f
    }

    fn cell_ijk_of(&self, x: &[f64]) -> Result<([usize; 3], Vec3)> {
        let mut ijk = [0usize; 3];
        let mut xi = [0.0; 3];
        let out = || {
            let mut p = [0.0; 3];
            for (d, v) in x.iter().take(3).enumerate() {
                p[d] = *v;
            }
            Error::OutOfDomain { point: p }
        };
        if x.len() < self.dim {
            return Err(out());
        }
        for d in 0..self.dim {
            let s = (x[d] - self.origin[d]) / self.h;
            let cells = self.counts[d] - 1;
            if !(s >= 0.0) || s > cells as f64 {
                return Err(out());
            }
            // floor puts points on a shared face into the upper cell
            let mut i = s.floor() as usize;
            if i >= cells {
                i = cells - 1;
            }
            ijk[d] = i;
            xi[d] = s - i as f64;
        }
        Ok((ijk, xi))
    }

    /// Lexicographic index of the cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        let (ijk, _) = self.cell_ijk_of(x)?;
        Ok(self.cell_index(ijk))
    }

    pub fn locate(&self, x: &[f64]) -> Result<Locator> {
        let (ijk, xi) = self.cell_ijk_of(x)?;
        Ok(Locator {
            cell: self.cell_index(ijk),
            base_node: self.node_index(ijk),
            xi,
        })
    }

    /// Multilinear weights and analytic gradients at `x`.
    pub fn node_stencil(&self, x: &[f64]) -> Result<Stencil> {
        let loc = self.locate(x)?;
        Ok(self.stencil_at(&loc))
    }

    pub fn stencil_at(&self, loc: &Locator) -> Stencil {
        let (weights, gradients) = shape_functions(self.dim, &loc.xi, 1.0 / self.h);
        let mut nodes = [0usize; MAX_STENCIL];
        let len = self.stencil_len();
        for (k, n) in nodes.iter_mut().enumerate().take(len) {
            *n = loc.base_node + self.corner_offsets[k];
        }
        Stencil {
            len,
            nodes,
            weights,
            gradients,
        }
    }

    /// Zeroes every nodal scratch field and clears the flags.
    pub fn reset(&mut self) {
        for v in [
            &mut self.capacity,
            &mut self.temperature,
            &mut self.rate,
            &mut self.internal_heat,
            &mut self.external_heat,
            &mut self.mass,
            &mut self.scalar,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.surface.iter_mut().for_each(|f| *f = false);
        self.active.iter_mut().for_each(|f| *f = false);
    }
}

/// Convenience constructor matching the free-function style used elsewhere.
pub fn build_grid(origin: &[f64], extent: &[f64], h: f64, dim: usize) -> Result<Grid> {
    Grid::new(origin, extent, h, dim)
}

/// Grid snapped to multiples of `h` that encloses `[lo, hi]` with
/// `pad_cells` empty cells on every side of the snapped box.
pub fn grid_enclosing(lo: &Vec3, hi: &Vec3, h: f64, dim: usize, pad_cells: usize) -> Result<Grid> {
    let mut origin = [0.0; 3];
    let mut extent = [0.0; 3];
    for d in 0..dim {
        let a = (lo[d] / h + 1e-9).floor() - pad_cells as f64;
        let b = (hi[d] / h - 1e-9).ceil() + pad_cells as f64;
        origin[d] = a * h;
        extent[d] = (b - a) * h;
    }
    Grid::new(&origin, &extent, h, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> Grid {
        Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.1, 2).unwrap()
    }

    #[test]
    fn node_counts_follow_extent() {
        let g = Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.5, 2).unwrap();
        assert_eq!(g.num_nodes(), 9);
        let g = Grid::new(&[0.0, 0.0, 0.0], &[10.0, 10.0, 10.0], 0.2, 3).unwrap();
        assert_eq!(g.node_counts(), [51, 51, 51]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.0, 2).is_err());
        assert!(Grid::new(&[0.0, 0.0], &[0.0, 1.0], 0.1, 2).is_err());
        assert!(Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.1, 4).is_err());
    }

    #[test]
    fn pads_non_integer_extent() {
        let g = Grid::new(&[0.0, 0.0], &[1.05, 1.0], 0.1, 2).unwrap();
        assert_eq!(g.node_counts()[0], 12);
        let g = Grid::new(&[0.0, 0.0], &[1.0004, 1.0], 0.1, 2).unwrap();
        assert_eq!(g.node_counts()[0], 11);
    }

    #[test]
    fn cell_lookup_and_tie_break() {
        let g = unit_grid();
        assert_eq!(g.cell_of(&[0.05, 0.05]).unwrap(), 0);
        assert_eq!(g.cell_of(&[0.1, 0.05]).unwrap(), g.cell_index([1, 0, 0]));
        assert!(matches!(
            g.cell_of(&[-0.01, 0.0]),
            Err(Error::OutOfDomain { point }) if point[0] == -0.01
        ));
        // the upper face belongs to the last cell
        assert_eq!(g.cell_of(&[1.0, 1.0]).unwrap(), g.num_cells() - 1);
    }

    #[test]
    fn stencil_at_cell_center_and_node() {
        let g = unit_grid();
        let s = g.node_stencil(&[0.15, 0.25]).unwrap();
        for w in s.weights() {
            assert!((w - 0.25).abs() < 1e-12);
        }
        let s = g.node_stencil(&[0.2, 0.3]).unwrap();
        let node = g.node_index([2, 3, 0]);
        for (n, w, _) in s.iter() {
            if n == node {
                assert!((w - 1.0).abs() < 1e-12);
            } else {
                assert!(w.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reset_clears_and_keeps_geometry() {
        let mut g = unit_grid();
        g.capacity[3] = 3.0;
        g.surface[2] = true;
        let counts = g.node_counts();
        g.reset();
        g.reset();
        assert!(g.capacity.iter().all(|&c| c == 0.0));
        assert!(g.surface.iter().all(|&s| !s));
        assert_eq!(g.node_counts(), counts);
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(&[0.0; 3], &[0.4, 0.3, 0.2], 0.1, 3).unwrap();
        for n in 0..g.num_nodes() {
            assert_eq!(g.node_index(g.node_ijk(n)), n);
        }
        for c in 0..g.num_cells() {
            assert_eq!(g.cell_index(g.cell_ijk(c)), c);
        }
    }

    #[test]
    fn support_fraction_on_faces() {
        let g = unit_grid();
        assert_eq!(g.support_fraction(0), 0.25);
        assert_eq!(g.support_fraction(g.node_index([0, 4, 0])), 0.5);
        assert_eq!(g.support_fraction(g.node_index([3, 4, 0])), 1.0);
    }

    #[test]
    fn enclosing_grid_snaps_to_multiples() {
        let g = grid_enclosing(&[-5.0, -5.0, 0.0], &[5.0, 5.0, 0.0], 0.1, 2, 1).unwrap();
        let o = g.origin();
        assert!((o[0] + 5.1).abs() < 1e-12);
        assert_eq!(g.node_counts()[0], 103);
    }
}

//! Deterministic particle/grid transfer.
//!
//! Particles are bucketed by cell with a stable counting sort. A scatter runs
//! in two passes: every cell sums the contributions of its own particles to
//! its corners in bucket order, then every node adds the partial sums of its
//! adjacent cells in fixed corner order. No floating-point sum depends on how
//! rayon splits the work, so results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{shape_functions, Grid, Locator, MAX_STENCIL};
use crate::Vec3;

/// Per-particle cell lookups plus the cell buckets.
#[derive(Debug, Clone, Default)]
pub struct Binning {
    locators: Vec<Locator>,
    cell_start: Vec<usize>,
    order: Vec<usize>,
    scratch: Vec<f64>,
}

impl Binning {
    pub fn new(grid: &Grid, positions: &[Vec3]) -> Result<Self> {
        let mut b = Binning::default();
        b.rebuild(grid, positions)?;
        Ok(b)
    }

    /// Relocates every particle and re-buckets. Buckets keep particle index
    /// order within a cell.
    pub fn rebuild(&mut self, grid: &Grid, positions: &[Vec3]) -> Result<()> {
        self.locators = positions
            .par_iter()
            .map(|x| grid.locate(x))
            .collect::<Result<Vec<_>>>()?;
        let nc = grid.num_cells();
        let mut start = vec![0usize; nc + 1];
        for loc in &self.locators {
            start[loc.cell + 1] += 1;
        }
        for c in 0..nc {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; self.locators.len()];
        for (p, loc) in self.locators.iter().enumerate() {
            order[fill[loc.cell]] = p;
            fill[loc.cell] += 1;
        }
        self.cell_start = start;
        self.order = order;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locators.is_empty()
    }

    pub fn locator(&self, p: usize) -> &Locator {
        &self.locators[p]
    }

    pub fn locators(&self) -> &[Locator] {
        &self.locators
    }

    /// Particle indices inside `cell`, in bucket order.
    pub fn cell_particles(&self, cell: usize) -> &[usize] {
        &self.order[self.cell_start[cell]..self.cell_start[cell + 1]]
    }

    /// Per-cell sums of a per-particle value, in bucket order.
    pub fn cell_sums(&self, values: &[f64]) -> Vec<f64> {
        (0..self.cell_start.len() - 1)
            .into_par_iter()
            .map(|c| self.cell_particles(c).iter().map(|&p| values[p]).sum())
            .collect()
    }

    /// Accumulates `N` nodal quantities.
    ///
    /// `contribute(p, loc, w, g, acc)` adds particle `p`'s share to each
    /// corner of `acc`, given its weights `w` and gradients `g`. `out` must hold one
    /// entry per node and is overwritten.
    pub fn scatter<const N: usize, F>(&mut self, grid: &Grid, out: &mut [[f64; N]], contribute: F)
    where
        F: Fn(
                usize,
                &Locator,
                &[f64; MAX_STENCIL],
                &[Vec3; MAX_STENCIL],
                &mut [[f64; N]; MAX_STENCIL],
            ) + Sync,
    {
        let dim = grid.dim();
        let inv_h = 1.0 / grid.h();
        let nc = grid.num_cells();
        let stride = MAX_STENCIL * N;
        self.scratch.resize(nc * stride, 0.0);
        let (locators, order, start) = (&self.locators, &self.order, &self.cell_start);
        self.scratch
            .par_chunks_mut(stride)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut acc = [[0.0; N]; MAX_STENCIL];
                for &p in &order[start[c]..start[c + 1]] {
                    let loc = &locators[p];
                    let (w, g) = shape_functions(dim, &loc.xi, inv_h);
                    contribute(p, loc, &w, &g, &mut acc);
                }
                for (k, corner) in acc.iter().enumerate() {
                    chunk[k * N..(k + 1) * N].copy_from_slice(corner);
                }
            });

        let cells = grid.cell_counts();
        let nodes = grid.node_counts();
        let corners = grid.stencil_len();
        let scratch = &self.scratch;
        assert_eq!(out.len(), grid.num_nodes());
        out.par_iter_mut().enumerate().for_each(|(n, o)| {
            let i = n % nodes[0];
            let r = n / nodes[0];
            let ijk = [i, r % nodes[1], r / nodes[1]];
            let mut sum = [0.0; N];
            'corner: for k in 0..corners {
                let mut cell = [0usize; 3];
                for d in 0..dim {
                    let bit = (k >> d) & 1;
                    if ijk[d] < bit || ijk[d] - bit >= cells[d] {
                        continue 'corner;
                    }
                    cell[d] = ijk[d] - bit;
                }
                let c = cell[0] + cells[0] * (cell[1] + cells[1] * cell[2]);
                let base = c * stride + k * N;
                for q in 0..N {
                    sum[q] += scratch[base + q];
                }
            }
            *o = sum;
        });
    }

    /// Maps `eval(p, w, g)` over particles with their shape functions.
    pub fn gather<T, F>(&self, grid: &Grid, out: &mut [T], eval: F)
    where
        T: Send,
        F: Fn(usize, &Locator, &[f64; MAX_STENCIL], &[Vec3; MAX_STENCIL]) -> T + Sync,
    {
        let dim = grid.dim();
        let inv_h = 1.0 / grid.h();
        out.par_iter_mut()
            .zip(self.locators.par_iter())
            .enumerate()
            .for_each(|(p, (o, loc))| {
                let (w, g) = shape_functions(dim, &loc.xi, inv_h);
                *o = eval(p, loc, &w, &g);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect()
    }

    fn naive(grid: &Grid, xs: &[Vec3], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; grid.num_nodes()];
        for (x, val) in xs.iter().zip(v) {
            for (n, w, _) in grid.node_stencil(x).unwrap().iter() {
                out[n] += w * val;
            }
        }
        out
    }

    #[test]
    fn buckets_cover_every_particle_once() {
        let grid = Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.1, 2).unwrap();
        let xs = random_cloud(500, 1);
        let b = Binning::new(&grid, &xs).unwrap();
        let mut seen = vec![false; xs.len()];
        for c in 0..grid.num_cells() {
            let ps = b.cell_particles(c);
            assert!(ps.windows(2).all(|w| w[0] < w[1]));
            for &p in ps {
                assert_eq!(grid.cell_of(&xs[p]).unwrap(), c);
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn scatter_matches_naive_sum() {
        let grid = Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.1, 2).unwrap();
        let xs = random_cloud(2000, 7);
        let v: Vec<f64> = (0..xs.len()).map(|i| 1.0 + (i % 13) as f64).collect();
        let mut b = Binning::new(&grid, &xs).unwrap();
        let mut out = vec![[0.0; 1]; grid.num_nodes()];
        b.scatter(&grid, &mut out, |p, _, w, _, acc| {
            for k in 0..4 {
                acc[k][0] += w[k] * v[p];
            }
        });
        let reference = naive(&grid, &xs, &v);
        for (a, r) in out.iter().zip(&reference) {
            assert!((a[0] - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
        let total: f64 = out.iter().map(|o| o[0]).sum();
        assert!((total - v.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn scatter_is_bit_identical_across_pools() {
        let grid = Grid::new(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 0.125, 3).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let xs: Vec<Vec3> = (0..5000)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut b = Binning::new(&grid, &xs).unwrap();
                let mut out = vec![[0.0; 2]; grid.num_nodes()];
                b.scatter(&grid, &mut out, |p, _, w, g, acc| {
                    for k in 0..8 {
                        acc[k][0] += w[k] * xs[p][0].sin();
                        acc[k][1] += g[k][2];
                    }
                });
                out
            })
        };
        let one = run(1);
        let four = run(4);
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn out_of_domain_particle_rejected() {
        let grid = Grid::new(&[0.0, 0.0], &[1.0, 1.0], 0.1, 2).unwrap();
        assert!(Binning::new(&grid, &[[1.5, 0.5, 0.0]]).is_err());
    }
}

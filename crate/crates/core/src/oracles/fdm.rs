//! Explicit finite-difference reference solvers.
//!
//! * ring: 1D radial polar equation on `[r_in, r_out]`;
//! * sphere: 1D radial spherical equation on `[0, R]`;
//! * square: 2D Cartesian equation on `[0, L]²`.
//!
//! All use forward Euler with second-order central differences inside and a
//! three-point one-sided gradient on flux boundaries. Each closure is solved
//! for the boundary value from the current interior before every update and
//! once more before a snapshot is stored (a snapshot at `t = 0` is the
//! initial field as given). The last step before an output
//! time is shortened to land on it exactly.

use crate::boundary::BoundaryKind;
use crate::error::{Error, Result};
use crate::solver::MaterialParams;

#[derive(Debug, Clone, PartialEq)]
pub enum FdmGrid {
    /// Nodes at radii `r`.
    Radial { r: Vec<f64> },
    /// Nodes at `(x[i], y[j])`, stored at `i + x.len() * j`.
    Planar { x: Vec<f64>, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdmSolution {
    pub grid: FdmGrid,
    pub spacing: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl FdmSolution {
    /// Index of the snapshot stored at time `t`.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn field_at(&self, t: f64) -> Option<&[f64]> {
        self.snapshot_index(t).map(|k| self.fields[k].as_slice())
    }

    /// Linear (radial) or bilinear (planar) interpolation of snapshot `k`.
    ///
    /// `point[0]` is the radius for radial grids. Points further than
    /// `1e-9 · spacing` outside the grid give `None`.
    pub fn sample(&self, k: usize, point: &[f64]) -> Option<f64> {
        let field = &self.fields[k];
        match &self.grid {
            FdmGrid::Radial { r } => {
                let (i, s) = locate(r, point[0], self.spacing)?;
                Some(field[i] * (1.0 - s) + field[i + 1] * s)
            }
            FdmGrid::Planar { x, y } => {
                let (i, s) = locate(x, point[0], self.spacing)?;
                let (j, u) = locate(y, point[1], self.spacing)?;
                let nx = x.len();
                let at = |a: usize, b: usize| field[a + nx * b];
                Some(
                    (1.0 - s) * (1.0 - u) * at(i, j)
                        + s * (1.0 - u) * at(i + 1, j)
                        + (1.0 - s) * u * at(i, j + 1)
                        + s * u * at(i + 1, j + 1),
                )
            }
        }
    }
}

fn locate(nodes: &[f64], x: f64, spacing: f64) -> Option<(usize, f64)> {
    let lo = nodes[0];
    let hi = nodes[nodes.len() - 1];
    let tol = 1e-9 * spacing;
    if !(x >= lo - tol && x <= hi + tol) {
        return None;
    }
    let x = x.clamp(lo, hi);
    let cells = nodes.len() - 1;
    let i = (((x - lo) / spacing).floor() as usize).min(cells - 1);
    let s = ((x - nodes[i]) / spacing).clamp(0.0, 1.0);
    Some((i, s))
}

/// Shared inputs of the reference solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmConfig {
    pub material: MaterialParams,
    pub initial: f64,
    pub bc: BoundaryKind,
    pub dt: f64,
    /// Output times, strictly increasing and nonnegative.
    pub times: Vec<f64>,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("at least one output time is required"));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "output times must be nonnegative and strictly increasing",
        ));
    }
    Ok(())
}

fn cells(len: f64, spacing: f64, what: &str) -> Result<usize> {
    if !(spacing > 0.0 && len > 0.0) {
        return Err(Error::invalid(format!(
            "{what}: length and spacing must be positive"
        )));
    }
    let n = (len / spacing).round();
    if (n * spacing - len).abs() > 1e-9 * len {
        return Err(Error::invalid(format!(
            "{what}: spacing {spacing} does not divide {len}"
        )));
    }
    Ok(n as usize)
}

/// Boundary value from `κ (3 T_b − 4 T_1 + T_2) / (2Δ) = q̂(T_b)`, where
/// `T_1`, `T_2` are the next two nodes moving into the material and `q̂` is
/// the inward flux.
fn closure(bc: &BoundaryKind, kappa: f64, delta: f64, t1: f64, t2: f64) -> f64 {
    match *bc {
        BoundaryKind::ConstantFlux { q_s } => {
            if kappa == 0.0 {
                return t1;
            }
            (4.0 * t1 - t2 + 2.0 * delta * q_s / kappa) / 3.0
        }
        BoundaryKind::Convective { gamma, ambient } => {
            let k = kappa / (2.0 * delta);
            (gamma * ambient + k * (4.0 * t1 - t2)) / (3.0 * k + gamma)
        }
    }
}

fn integrate(
    times: &[f64],
    dt: f64,
    field: &mut Vec<f64>,
    close: impl Fn(&mut [f64]),
    update: impl Fn(&[f64], &mut [f64], f64),
) -> Vec<Vec<f64>> {
    let mut scratch = field.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while now < target - 1e-12 * target.max(1.0) {
            let h = dt.min(target - now);
            close(field);
            update(field, &mut scratch, h);
            std::mem::swap(field, &mut scratch);
            now += h;
        }
        if now > 0.0 {
            close(field);
        }
        out.push(field.clone());
    }
    out
}

fn check_dt(dt: f64, bound: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Stability { dt, bound });
    }
    Ok(())
}

/// Annulus `r_inner ≤ r ≤ r_outer` with the flux condition on both circles.
pub fn fdm_ring(r_inner: f64, r_outer: f64, dr: f64, cfg: &FdmConfig) -> Result<FdmSolution> {
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(Error::invalid("ring needs 0 < r_inner < r_outer"));
    }
    cfg.material.validate()?;
    check_times(&cfg.times)?;
    let n = cells(r_outer - r_inner, dr, "ring")?;
    if n < 2 {
        return Err(Error::invalid("ring needs at least two radial cells"));
    }
    let alpha = cfg.material.diffusivity();
    check_dt(cfg.dt, 0.5 * dr * dr / alpha)?;
    let r: Vec<f64> = (0..=n).map(|i| r_inner + i as f64 * dr).collect();
    let kappa = cfg.material.kappa;
    let bc = cfg.bc;
    let close = |t: &mut [f64]| {
        t[0] = closure(&bc, kappa, dr, t[1], t[2]);
        t[n] = closure(&bc, kappa, dr, t[n - 1], t[n - 2]);
    };
    let rr = &r;
    let update = |t: &[f64], out: &mut [f64], h: f64| {
        out[0] = t[0];
        out[n] = t[n];
        for i in 1..n {
            let lap = (t[i + 1] - 2.0 * t[i] + t[i - 1]) / (dr * dr)
                + (t[i + 1] - t[i - 1]) / (2.0 * dr * rr[i]);
            out[i] = t[i] + alpha * h * lap;
        }
    };
    let mut field = vec![cfg.initial; n + 1];
    let fields = integrate(&cfg.times, cfg.dt, &mut field, close, update);
    Ok(FdmSolution {
        grid: FdmGrid::Radial { r },
        spacing: dr,
        dt: cfg.dt,
        times: cfg.times.clone(),
        fields,
    })
}

/// Ball `r ≤ radius` with the flux condition on its surface.
///
/// The center node uses `∇²T → 6 (T₁ − T₀) / Δr²`, the limit of the
/// spherical Laplacian under the mirror condition `T₋₁ = T₁`.
pub fn fdm_sphere(radius: f64, dr: f64, cfg: &FdmConfig) -> Result<FdmSolution> {
    if !(radius > 0.0) {
        return Err(Error::invalid("sphere radius must be positive"));
    }
    cfg.material.validate()?;
    check_times(&cfg.times)?;
    let n = cells(radius, dr, "sphere")?;
    if n < 2 {
        return Err(Error::invalid("sphere needs at least two radial cells"));
    }
    let alpha = cfg.material.diffusivity();
    check_dt(cfg.dt, dr * dr / (6.0 * alpha))?;
    let r: Vec<f64> = (0..=n).map(|i| i as f64 * dr).collect();
    let kappa = cfg.material.kappa;
    let bc = cfg.bc;
    let close = |t: &mut [f64]| {
        t[n] = closure(&bc, kappa, dr, t[n - 1], t[n - 2]);
    };
    let rr = &r;
    let update = |t: &[f64], out: &mut [f64], h: f64| {
        out[0] = t[0] + 6.0 * alpha * h * (t[1] - t[0]) / (dr * dr);
        out[n] = t[n];
        for i in 1..n {
            let lap = (t[i + 1] - 2.0 * t[i] + t[i - 1]) / (dr * dr)
                + 2.0 / rr[i] * (t[i + 1] - t[i - 1]) / (2.0 * dr);
            out[i] = t[i] + alpha * h * lap;
        }
    };
    let mut field = vec![cfg.initial; n + 1];
    let fields = integrate(&cfg.times, cfg.dt, &mut field, close, update);
    Ok(FdmSolution {
        grid: FdmGrid::Radial { r },
        spacing: dr,
        dt: cfg.dt,
        times: cfg.times.clone(),
        fields,
    })
}

/// Square `[0, side]²` with the flux condition on all four edges. Corner
/// values average the closures along the two edges meeting there.
pub fn fdm_square(side: f64, dx: f64, cfg: &FdmConfig) -> Result<FdmSolution> {
    cfg.material.validate()?;
    check_times(&cfg.times)?;
    let n = cells(side, dx, "square")?;
    if n < 4 {
        return Err(Error::invalid("square needs at least four cells per side"));
    }
    let alpha = cfg.material.diffusivity();
    check_dt(cfg.dt, dx * dx / (4.0 * alpha))?;
    let m = n + 1;
    let idx = move |i: usize, j: usize| i + m * j;
    let kappa = cfg.material.kappa;
    let bc = cfg.bc;
    let close = |t: &mut [f64]| {
        let c = |a: f64, b: f64| closure(&bc, kappa, dx, a, b);
        for k in 1..n {
            t[idx(0, k)] = c(t[idx(1, k)], t[idx(2, k)]);
            t[idx(n, k)] = c(t[idx(n - 1, k)], t[idx(n - 2, k)]);
            t[idx(k, 0)] = c(t[idx(k, 1)], t[idx(k, 2)]);
            t[idx(k, n)] = c(t[idx(k, n - 1)], t[idx(k, n - 2)]);
        }
        for (i, j, di, dj) in [
            (0, 0, 1isize, 1isize),
            (n, 0, -1, 1),
            (0, n, 1, -1),
            (n, n, -1, -1),
        ] {
            let step = |v: usize, d: isize, k: isize| (v as isize + d * k) as usize;
            let along_x = c(t[idx(step(i, di, 1), j)], t[idx(step(i, di, 2), j)]);
            let along_y = c(t[idx(i, step(j, dj, 1))], t[idx(i, step(j, dj, 2))]);
            t[idx(i, j)] = 0.5 * (along_x + along_y);
        }
    };
    let update = |t: &[f64], out: &mut [f64], h: f64| {
        out.copy_from_slice(t);
        for j in 1..n {
            for i in 1..n {
                let lap =
                    (t[idx(i + 1, j)] + t[idx(i - 1, j)] + t[idx(i, j + 1)] + t[idx(i, j - 1)]
                        - 4.0 * t[idx(i, j)])
                        / (dx * dx);
                out[idx(i, j)] = t[idx(i, j)] + alpha * h * lap;
            }
        }
    };
    let mut field = vec![cfg.initial; m * m];
    let fields = integrate(&cfg.times, cfg.dt, &mut field, close, update);
    let axis: Vec<f64> = (0..=n).map(|i| i as f64 * dx).collect();
    Ok(FdmSolution {
        grid: FdmGrid::Planar {
            x: axis.clone(),
            y: axis,
        },
        spacing: dx,
        dt: cfg.dt,
        times: cfg.times.clone(),
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn conv(ambient: f64) -> BoundaryKind {
        BoundaryKind::Convective {
            gamma: 1.0,
            ambient,
        }
    }

    fn cfg(initial: f64, bc: BoundaryKind, dt: f64, times: &[f64]) -> FdmConfig {
        FdmConfig {
            material: unit(),
            initial,
            bc,
            dt,
            times: times.to_vec(),
        }
    }

    #[test]
    fn ring_reaches_ambient() {
        let s = fdm_ring(1.0, 5.0, 0.1, &cfg(0.0, conv(1.0), 4e-3, &[100.0])).unwrap();
        assert!(s.fields[0].iter().all(|t| (t - 1.0).abs() < 1e-3));
    }

    #[test]
    fn ring_boundary_gradient_matches_imposed_flux() {
        let dr = 0.05;
        let bc = BoundaryKind::ConstantFlux { q_s: 1.0 };
        let s = fdm_ring(1.0, 5.0, dr, &cfg(0.0, bc, 1e-3, &[10.0])).unwrap();
        let t = &s.fields[0];
        let n = t.len() - 1;
        let inner = (-3.0 * t[0] + 4.0 * t[1] - t[2]) / (2.0 * dr);
        let outer = (3.0 * t[n] - 4.0 * t[n - 1] + t[n - 2]) / (2.0 * dr);
        // heat enters through both circles: T falls away from each boundary
        assert!((inner + 1.0).abs() < 0.02, "{inner}");
        assert!((outer - 1.0).abs() < 0.02, "{outer}");
    }

    #[test]
    fn ring_is_grid_converged() {
        let bc = BoundaryKind::ConstantFlux { q_s: 1.0 };
        let coarse = fdm_ring(1.0, 5.0, 0.1, &cfg(0.0, bc, 1e-3, &[1.0])).unwrap();
        let fine = fdm_ring(1.0, 5.0, 0.05, &cfg(0.0, bc, 2.5e-4, &[1.0])).unwrap();
        let a = coarse.sample(0, &[3.0]).unwrap();
        let b = fine.sample(0, &[3.0]).unwrap();
        assert!((a - b).abs() <= 0.01 * b.abs().max(1e-3), "{a} {b}");
    }

    fn richardson_order(run: impl Fn(f64) -> f64) -> f64 {
        let (a, b, c) = (run(0.2), run(0.1), run(0.05));
        ((a - b).abs() / (b - c).abs()).log2()
    }

    #[test]
    fn ring_and_sphere_second_order() {
        let ring = richardson_order(|dr| {
            let s = fdm_ring(1.0, 5.0, dr, &cfg(0.0, conv(1.0), 0.2 * dr * dr, &[1.0])).unwrap();
            s.sample(0, &[3.0]).unwrap()
        });
        assert!(ring >= 1.8, "ring order {ring}");
        let sphere = richardson_order(|dr| {
            let s = fdm_sphere(5.0, dr, &cfg(100.0, conv(0.0), 0.1 * dr * dr, &[2.0])).unwrap();
            s.sample(0, &[4.0]).unwrap()
        });
        assert!(sphere >= 1.8, "sphere order {sphere}");
    }

    #[test]
    fn sphere_cools_from_outside() {
        let times = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 40.0];
        let s = fdm_sphere(5.0, 0.1, &cfg(100.0, conv(0.0), 1e-3, &times)).unwrap();
        assert!(s.fields[0].iter().all(|&t| t == 100.0));
        for k in 1..times.len() {
            assert!(s.fields[k][0] <= s.fields[k - 1][0]);
        }
        assert!(s.fields[6][0] < s.fields[5][0]);
        let last = s.fields[5].len() - 1;
        assert!(s.fields[5][last] < s.fields[5][0]);
    }

    #[test]
    fn sphere_energy_audit() {
        let dr = 0.05;
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let s = fdm_sphere(5.0, dr, &cfg(100.0, conv(0.0), 2e-4, &times)).unwrap();
        let FdmGrid::Radial { r } = &s.grid else {
            unreachable!()
        };
        let energy = |f: &[f64]| {
            let g: Vec<f64> = r
                .iter()
                .zip(f)
                .map(|(r, t)| 4.0 * std::f64::consts::PI * r * r * t)
                .collect();
            (1..g.len())
                .map(|i| 0.5 * dr * (g[i] + g[i - 1]))
                .sum::<f64>()
        };
        let n = r.len() - 1;
        let loss_rate = |f: &[f64]| 4.0 * std::f64::consts::PI * 25.0 * f[n];
        let mut lost = 0.0;
        for k in 1..times.len() {
            lost += 0.5 * 0.05 * (loss_rate(&s.fields[k]) + loss_rate(&s.fields[k - 1]));
        }
        let drop = energy(&s.fields[0]) - energy(s.fields.last().unwrap());
        assert!((drop - lost).abs() < 0.01 * lost, "{drop} {lost}");
    }

    #[test]
    fn square_equilibrium_and_symmetry() {
        let s = fdm_square(5.0, 0.1, &cfg(1.0, conv(1.0), 2e-3, &[5.0])).unwrap();
        assert!(s.fields[0].iter().all(|&t| (t - 1.0).abs() < 1e-14));

        let s = fdm_square(5.0, 0.1, &cfg(0.0, conv(1.0), 2e-3, &[5.0])).unwrap();
        let f = &s.fields[0];
        let m = 51;
        for j in 0..m {
            for i in 0..m {
                let t = f[i + m * j];
                assert!((t - f[(m - 1 - i) + m * j]).abs() < 1e-10);
                assert!((t - f[i + m * (m - 1 - j)]).abs() < 1e-10);
                assert!((t - f[j + m * i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn square_center_approaches_ambient() {
        let times = [1.0, 5.0, 10.0, 50.0];
        let coarse = fdm_square(5.0, 0.1, &cfg(0.0, conv(1.0), 2e-3, &times)).unwrap();
        let fine = fdm_square(5.0, 0.05, &cfg(0.0, conv(1.0), 5e-4, &times)).unwrap();
        let c = |s: &FdmSolution, k| s.sample(k, &[2.5, 2.5]).unwrap();
        for k in 1..times.len() {
            assert!(c(&coarse, k) > c(&coarse, k - 1));
        }
        let t50 = c(&coarse, 3);
        assert!((0.9..=1.0).contains(&t50), "{t50}");
        // Richardson estimate agrees with the coarse value
        let extrapolated = c(&fine, 3) + (c(&fine, 3) - t50) / 3.0;
        assert!((extrapolated - t50).abs() < 1e-3);
    }

    #[test]
    fn sampling_identities() {
        let s = fdm_square(5.0, 0.5, &cfg(2.0, conv(2.0), 0.01, &[0.0])).unwrap();
        assert_eq!(s.sample(0, &[1.3, 4.9]), Some(2.0));
        assert_eq!(s.sample(0, &[5.5, 1.0]), None);
        let r = fdm_ring(
            1.0,
            2.0,
            0.25,
            &cfg(0.0, BoundaryKind::ConstantFlux { q_s: 1.0 }, 0.01, &[0.5]),
        )
        .unwrap();
        let FdmGrid::Radial { r: nodes } = &r.grid else {
            unreachable!()
        };
        assert_eq!(r.sample(0, &[nodes[2]]), Some(r.fields[0][2]));
        assert!(r.snapshot_index(0.5).is_some());
        assert!(r.field_at(0.7).is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cfg(0.0, conv(1.0), 0.1, &[1.0]);
        assert!(matches!(
            fdm_ring(1.0, 5.0, 0.1, &c),
            Err(Error::Stability { .. })
        ));
        assert!(fdm_ring(5.0, 1.0, 0.1, &cfg(0.0, conv(1.0), 1e-3, &[1.0])).is_err());
        assert!(fdm_sphere(5.0, 0.1, &cfg(0.0, conv(1.0), 1e-3, &[2.0, 1.0])).is_err());
        assert!(fdm_square(5.0, 0.3, &cfg(0.0, conv(1.0), 1e-3, &[1.0])).is_err());
    }
}

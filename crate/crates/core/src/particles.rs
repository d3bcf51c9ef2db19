//! Lagrangian material points and the geometry generators for the benchmarks.
//!
//! Every generator fills a regular lattice with one point at the center of
//! each `spacing`-sized subcell and keeps the points that satisfy a geometric
//! predicate. Lattices are anchored so that subcell faces line up with grid
//! lines whenever the geometry bounds are multiples of the grid spacing.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::Vec3;

/// Structure-of-arrays particle storage.
///
/// In 2D every particle carries unit out-of-plane thickness, so volumes are
/// areas times one metre.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    pub id: Vec<u64>,
    pub position: Vec<Vec3>,
    pub volume: Vec<f64>,
    pub density: Vec<f64>,
    pub specific_heat: Vec<f64>,
    pub conductivity: Vec<f64>,
    pub temperature: Vec<f64>,
    pub flux: Vec<Vec3>,
    pub source: Vec<f64>,
    /// Constant marker used by the scalar-gradient normals (always 1).
    pub marker: Vec<f64>,
    pub boundary: Vec<bool>,
    pub normal: Vec<Vec3>,
}

impl ParticleSet {
    pub fn new(dim: usize) -> Self {
        ParticleSet {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Appends a particle with unit material properties at 0 °C.
    pub fn push(&mut self, position: Vec3, volume: f64) {
        let id = self.id.len() as u64;
        self.id.push(id);
        self.position.push(position);
        self.volume.push(volume);
        self.density.push(1.0);
        self.specific_heat.push(1.0);
        self.conductivity.push(1.0);
        self.temperature.push(0.0);
        self.flux.push([0.0; 3]);
        self.source.push(0.0);
        self.marker.push(1.0);
        self.boundary.push(false);
        self.normal.push([0.0; 3]);
    }

    pub fn set_material(&mut self, density: f64, specific_heat: f64, conductivity: f64) {
        self.density.iter_mut().for_each(|v| *v = density);
        self.specific_heat
            .iter_mut()
            .for_each(|v| *v = specific_heat);
        self.conductivity.iter_mut().for_each(|v| *v = conductivity);
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.temperature.iter_mut().for_each(|v| *v = t);
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().sum()
    }

    /// Total thermal energy `Σ ρ c V T`.
    pub fn thermal_energy(&self) -> f64 {
        (0..self.len())
            .map(|p| self.density[p] * self.specific_heat[p] * self.volume[p] * self.temperature[p])
            .sum()
    }

    /// Reorders every per-particle array so that new slot `i` holds old
    /// particle `perm[i]`.
    pub fn permute(&mut self, perm: &[usize]) {
        fn apply<T: Copy>(v: &mut Vec<T>, perm: &[usize]) {
            let old = std::mem::take(v);
            *v = perm.iter().map(|&i| old[i]).collect();
        }
        assert_eq!(perm.len(), self.len());
        apply(&mut self.id, perm);
        apply(&mut self.position, perm);
        apply(&mut self.volume, perm);
        apply(&mut self.density, perm);
        apply(&mut self.specific_heat, perm);
        apply(&mut self.conductivity, perm);
        apply(&mut self.temperature, perm);
        apply(&mut self.flux, perm);
        apply(&mut self.source, perm);
        apply(&mut self.marker, perm);
        apply(&mut self.boundary, perm);
        apply(&mut self.normal, perm);
    }

    /// Checks the per-particle invariants; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        for p in 0..self.len() {
            let bad = |what: &str, v: f64| {
                Err(Error::invalid(format!(
                    "particle {} has {what} {v}",
                    self.id[p]
                )))
            };
            if !(self.volume[p] > 0.0) {
                return bad("volume", self.volume[p]);
            }
            if !(self.density[p] > 0.0) {
                return bad("density", self.density[p]);
            }
            if !(self.specific_heat[p] > 0.0) {
                return bad("specific heat", self.specific_heat[p]);
            }
            if !(self.conductivity[p] >= 0.0) {
                return bad("conductivity", self.conductivity[p]);
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the positions.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for x in &self.position {
            for d in 0..3 {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        for d in self.dim..3 {
            lo[d] = 0.0;
            hi[d] = 0.0;
        }
        (lo, hi)
    }
}

fn lattice_counts(lo: &[f64], hi: &[f64], spacing: f64, dim: usize) -> Result<[usize; 3]> {
    if !(spacing > 0.0) {
        return Err(Error::invalid(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    let mut counts = [1usize; 3];
    for d in 0..dim {
        let len = hi[d] - lo[d];
        if !(len > 0.0) {
            return Err(Error::invalid(format!("degenerate box along axis {d}")));
        }
        let n = (len / spacing).round();
        if n < 1.0 || (n * spacing - len).abs() > 0.005 * len {
            return Err(Error::invalid(format!(
                "spacing {spacing} does not divide extent {len} along axis {d}"
            )));
        }
        counts[d] = n as usize;
    }
    Ok(counts)
}

/// Regular lattice over `[lo, hi]` filtered by `keep`.
///
/// Points sit at `lo + (k + 1/2) spacing`; each carries volume `spacing^dim`.
pub fn generate_lattice_points(
    lo: &[f64],
    hi: &[f64],
    spacing: f64,
    keep: impl Fn(&Vec3) -> bool,
) -> Result<ParticleSet> {
    let dim = lo.len();
    if !(dim == 2 || dim == 3) || hi.len() != dim {
        return Err(Error::invalid("lattice bounds must both be 2D or 3D"));
    }
    let counts = lattice_counts(lo, hi, spacing, dim)?;
    let volume = spacing.powi(dim as i32);
    let mut set = ParticleSet::new(dim);
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let mut x = [0.0; 3];
                x[0] = lo[0] + (i as f64 + 0.5) * spacing;
                x[1] = lo[1] + (j as f64 + 0.5) * spacing;
                if dim == 3 {
                    x[2] = lo[2] + (k as f64 + 0.5) * spacing;
                }
                if keep(&x) {
                    set.push(x, volume);
                }
            }
        }
    }
    Ok(set)
}

/// Full lattice over an axis-aligned box.
pub fn generate_box_points(lo: &[f64], hi: &[f64], spacing: f64) -> Result<ParticleSet> {
    generate_lattice_points(lo, hi, spacing, |_| true)
}

pub fn generate_annulus_points(
    center: [f64; 2],
    r_inner: f64,
    r_outer: f64,
    spacing: f64,
) -> Result<ParticleSet> {
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(Error::invalid(format!(
            "annulus needs 0 < r_inner < r_outer, got {r_inner}, {r_outer}"
        )));
    }
    let lo = [center[0] - r_outer, center[1] - r_outer];
    let hi = [center[0] + r_outer, center[1] + r_outer];
    generate_lattice_points(&lo, &hi, spacing, |x| {
        let r = (x[0] - center[0]).hypot(x[1] - center[1]);
        r >= r_inner && r <= r_outer
    })
}

pub fn generate_sphere_points(center: Vec3, radius: f64, spacing: f64) -> Result<ParticleSet> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if spacing > 2.0 * radius {
        return Err(Error::invalid("spacing exceeds the sphere diameter"));
    }
    let lo = [center[0] - radius, center[1] - radius, center[2] - radius];
    let hi = [center[0] + radius, center[1] + radius, center[2] + radius];
    let set = generate_lattice_points(&lo, &hi, spacing, |x| {
        let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= radius
    })?;
    if set.is_empty() {
        return Err(Error::invalid("sphere lattice is empty"));
    }
    Ok(set)
}

/// Whether `x` lies in a hub disk plus `n_blades` equally spaced sectors.
pub fn fan_contains(
    center: [f64; 2],
    hub_radius: f64,
    outer_radius: f64,
    n_blades: usize,
    blade_width: f64,
    x: &Vec3,
) -> bool {
    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
    let r = dx.hypot(dy);
    if r <= hub_radius {
        return true;
    }
    if r > outer_radius {
        return false;
    }
    let pitch = 2.0 * PI / n_blades as f64;
    let a = dy.atan2(dx).rem_euclid(pitch);
    a.min(pitch - a) <= 0.5 * blade_width
}

pub fn generate_fan_points(
    center: [f64; 2],
    hub_radius: f64,
    outer_radius: f64,
    n_blades: usize,
    blade_width: f64,
    spacing: f64,
) -> Result<ParticleSet> {
    if !(hub_radius > 0.0 && hub_radius < outer_radius) {
        return Err(Error::invalid("fan needs 0 < hub_radius < outer_radius"));
    }
    if n_blades == 0 {
        return Err(Error::invalid("fan needs at least one blade"));
    }
    if !(blade_width > 0.0 && blade_width < 2.0 * PI / n_blades as f64) {
        return Err(Error::invalid(format!(
            "blade width must lie in (0, 2π/{n_blades}), got {blade_width}"
        )));
    }
    let lo = [center[0] - outer_radius, center[1] - outer_radius];
    let hi = [center[0] + outer_radius, center[1] + outer_radius];
    generate_lattice_points(&lo, &hi, spacing, |x| {
        fan_contains(center, hub_radius, outer_radius, n_blades, blade_width, x)
    })
}

/// Lattice arrangement used for a square rotated away from the grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquareLayout {
    /// The axis-aligned lattice rotated with the body.
    RotatedLattice,
    /// A grid-aligned lattice clipped to the rotated square.
    GridAligned,
}

/// Square of side `side` centered at `center`, rotated by `angle` radians.
pub fn generate_square_points(
    center: [f64; 2],
    side: f64,
    angle: f64,
    spacing: f64,
    layout: SquareLayout,
) -> Result<ParticleSet> {
    if !(side > 0.0) {
        return Err(Error::invalid("square side must be positive"));
    }
    let half = 0.5 * side;
    match layout {
        SquareLayout::RotatedLattice => {
            let lo = [center[0] - half, center[1] - half];
            let hi = [center[0] + half, center[1] + half];
            let mut set = generate_box_points(&lo, &hi, spacing)?;
            rotate_positions(&mut set, center, angle);
            Ok(set)
        }
        SquareLayout::GridAligned => {
            let reach = half * std::f64::consts::SQRT_2;
            let lo = [
                ((center[0] - reach) / spacing).floor() * spacing,
                ((center[1] - reach) / spacing).floor() * spacing,
            ];
            let hi = [
                ((center[0] + reach) / spacing).ceil() * spacing,
                ((center[1] + reach) / spacing).ceil() * spacing,
            ];
            let (s, c) = (-angle).sin_cos();
            generate_lattice_points(&lo, &hi, spacing, |x| {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let u = c * dx - s * dy;
                let v = s * dx + c * dy;
                u.abs() <= half && v.abs() <= half
            })
        }
    }
}

fn rotate_positions(points: &mut ParticleSet, center: [f64; 2], angle: f64) {
    let (s, c) = angle.sin_cos();
    for x in points.position.iter_mut() {
        let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
        x[0] = center[0] + c * dx - s * dy;
        x[1] = center[1] + s * dx + c * dy;
    }
}

/// Rigid rotation about the out-of-plane axis through `center` by
/// `2π · omega · dt`, with `omega` in revolutions per second.
///
/// Only positions change; normals are recomputed by the boundary pipeline.
pub fn apply_rigid_rotation(
    points: &mut ParticleSet,
    center: [f64; 2],
    omega: f64,
    dt: f64,
) -> Result<()> {
    if points.dim() != 2 {
        return Err(Error::Unsupported(
            "rigid rotation is only defined in 2D".into(),
        ));
    }
    if omega == 0.0 || dt == 0.0 {
        return Ok(());
    }
    rotate_positions(points, center, 2.0 * PI * omega * dt);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lattice_counts() {
        let s = generate_box_points(&[0.0, 0.0], &[1.0, 1.0], 0.25).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.position[0], [0.125, 0.125, 0.0]);
        let rod = generate_box_points(&[0.0, 0.0], &[20.0, 0.1], 0.05).unwrap();
        assert_eq!(rod.len(), 800);
        assert!(generate_box_points(&[0.0, 0.0], &[1.0, 1.0], 0.3).is_err());
        assert!(generate_box_points(&[0.0, 0.0], &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn annulus_area_and_band() {
        let s = generate_annulus_points([0.0, 0.0], 1.0, 5.0, 0.05).unwrap();
        let exact = PI * 24.0;
        assert!((s.total_volume() - exact).abs() / exact < 0.01);
        for x in &s.position {
            let r = x[0].hypot(x[1]);
            assert!((1.0..=5.0).contains(&r));
        }
        assert!(generate_annulus_points([0.0, 0.0], 1.0, 1.0, 0.05).is_err());
    }

    #[test]
    fn sphere_volume() {
        let s = generate_sphere_points([0.0; 3], 5.0, 0.1).unwrap();
        let exact = 4.0 / 3.0 * PI * 125.0;
        assert!((s.total_volume() - exact).abs() / exact < 0.01);
        assert!(s
            .position
            .iter()
            .all(|x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() <= 5.0));
        assert!(generate_sphere_points([0.0; 3], 0.1, 0.3).is_err());
        assert!(generate_sphere_points([0.0; 3], 0.0, 0.1).is_err());
    }

    #[test]
    fn fan_symmetry_and_area() {
        let width = PI / 6.0;
        let s = generate_fan_points([0.0, 0.0], 0.6, 2.5, 4, width, 0.05).unwrap();
        let key = |x: &Vec3| ((x[0] * 1e6).round() as i64, (x[1] * 1e6).round() as i64);
        let mut a: Vec<_> = s.position.iter().map(key).collect();
        let mut b: Vec<_> = s
            .position
            .iter()
            .map(|x| key(&[-x[1], x[0], 0.0]))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let exact = PI * 0.36 + 4.0 * (width / 2.0) * (2.5f64.powi(2) - 0.36);
        assert!((s.total_volume() - exact).abs() / exact < 0.02);
        assert!(generate_fan_points([0.0, 0.0], 0.6, 2.5, 4, 0.0, 0.05).is_err());
        assert!(generate_fan_points([0.0, 0.0], 2.6, 2.5, 4, 0.3, 0.05).is_err());
    }

    #[test]
    fn quarter_turn() {
        let mut s = ParticleSet::new(2);
        s.push([1.0, 0.0, 0.0], 1.0);
        s.temperature[0] = 3.25;
        apply_rigid_rotation(&mut s, [0.0, 0.0], 1.0, 0.25).unwrap();
        assert!(s.position[0][0].abs() < 1e-12);
        assert!((s.position[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(s.temperature[0], 3.25);
    }

    #[test]
    fn zero_rotation_is_identity_and_3d_rejected() {
        let mut s = generate_box_points(&[0.0, 0.0], &[1.0, 1.0], 0.25).unwrap();
        let before = s.clone();
        apply_rigid_rotation(&mut s, [0.3, 0.2], 0.0, 0.1).unwrap();
        assert_eq!(s, before);
        let mut s3 = generate_box_points(&[0.0; 3], &[1.0; 3], 0.5).unwrap();
        assert!(matches!(
            apply_rigid_rotation(&mut s3, [0.0, 0.0], 1.0, 0.1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn grid_aligned_diamond_matches_rotated_region() {
        let a = generate_square_points([2.5, 2.5], 5.0, PI / 4.0, 0.1, SquareLayout::GridAligned)
            .unwrap();
        let b =
            generate_square_points([2.5, 2.5], 5.0, PI / 4.0, 0.1, SquareLayout::RotatedLattice)
                .unwrap();
        for x in &a.position {
            assert!((x[0] - 2.5).abs() + (x[1] - 2.5).abs() <= 5.0 / 2f64.sqrt() + 1e-9);
        }
        assert!((a.total_volume() - 25.0).abs() / 25.0 < 0.03);
        assert!((b.total_volume() - 25.0).abs() < 1e-9);
    }
}

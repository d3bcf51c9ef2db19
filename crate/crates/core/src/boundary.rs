//! Neumann boundary imposition on free surfaces.
//!
//! Surface nodes are found with a volume-fraction test, boundary particles are
//! the ones whose stencil touches a surface node, and their outward normals
//! come from the gradient of projected mass or of a constant marker field.
//! The prescribed inward flux `q̂` then enters the nodal heats in one of three
//! ways:
//!
//! * `Vhfm`: a virtual flux field `q̂ n` carried by the boundary particles,
//!   integrated as a volume term `V_p q̂_p n_p·∇S_Ip` on surface nodes only;
//! * `Node`: `A_I q̂(T_I)` on user-supplied grid-conforming nodes;
//! * `Particle`: `(V_p / h_p) q̂_p S_Ip` from the outermost particle layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::particles::ParticleSet;
use crate::transfer::Binning;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    ConstantFlux {
        q_s: f64,
    },
    Convective {
        gamma: f64,
        #[serde(rename = "T_a")]
        ambient: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMethod {
    Vhfm,
    Node,
    Particle,
}

impl BoundaryMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryMethod::Vhfm => "vhfm",
            BoundaryMethod::Node => "node",
            BoundaryMethod::Particle => "particle",
        }
    }
}

/// Axis-aligned box restricting where the flux acts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Region {
    pub fn contains(&self, x: &Vec3, dim: usize) -> bool {
        (0..dim).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }
}

/// How surface cells are recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    #[default]
    /// Cell fraction is the mean of its corners' nodal volume fractions,
    /// each normalized by the part of the node support inside the grid.
    Smoothed,
    /// Cell fraction is the particle volume inside the cell over the cell
    /// volume.
    Cell,
    /// As `Cell`, but empty cells with an active corner count as surface
    /// cells with fraction 0.
    Adjacent,
    /// Active nodes whose own normalized volume fraction is below `eta`.
    Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub kind: BoundaryKind,
    pub method: BoundaryMethod,
    pub eta: f64,
    /// Layer thickness for the particle method; defaults to the particle
    /// spacing when `None`.
    pub h_p: Option<f64>,
    /// Flux acts only on boundary particles (or nodes) inside this box.
    pub region: Option<Region>,
}

impl BoundarySpec {
    pub fn new(kind: BoundaryKind, method: BoundaryMethod) -> Self {
        BoundarySpec {
            kind,
            method,
            eta: 0.5,
            h_p: None,
            region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid(format!(
                "eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if let BoundaryKind::Convective { gamma, .. } = self.kind {
            if !(gamma >= 0.0) {
                return Err(Error::invalid(format!(
                    "gamma must be nonnegative, got {gamma}"
                )));
            }
        }
        if let Some(h_p) = self.h_p {
            if !(h_p > 0.0) {
                return Err(Error::invalid(format!("h_p must be positive, got {h_p}")));
            }
        }
        Ok(())
    }

    pub fn flux_at(&self, temperature: f64) -> f64 {
        boundary_flux_magnitude(&self.kind, temperature)
    }
}

/// Inward boundary flux: `q_s`, or `γ (T_a − T)` for convection.
pub fn boundary_flux_magnitude(kind: &BoundaryKind, temperature: f64) -> f64 {
    match *kind {
        BoundaryKind::ConstantFlux { q_s } => q_s,
        BoundaryKind::Convective { gamma, ambient } => gamma * (ambient - temperature),
    }
}

/// Surface nodes `N₁` and boundary particles `P`, both sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSets {
    pub nodes: Vec<usize>,
    pub particles: Vec<usize>,
}

/// Volume fraction per cell under `mode`; `None` marks cells that take no
/// part in the test.
pub fn cell_volume_fractions(
    grid: &Grid,
    binning: &Binning,
    particles: &ParticleSet,
    mode: DetectionMode,
) -> Vec<Option<f64>> {
    let vc = grid.cell_volume();
    let corners = grid.stencil_len();
    match mode {
        DetectionMode::Cell => binning
            .cell_sums(&particles.volume)
            .into_iter()
            .map(|v| (v > 0.0).then_some(v / vc))
            .collect(),
        DetectionMode::Adjacent => binning
            .cell_sums(&particles.volume)
            .into_iter()
            .enumerate()
            .map(|(c, v)| {
                let touched = v > 0.0 || (0..corners).any(|k| grid.active[grid.cell_corner(c, k)]);
                touched.then_some(v / vc)
            })
            .collect(),
        DetectionMode::Smoothed | DetectionMode::Node => {
            let f = nodal_volume_fractions(grid);
            (0..grid.num_cells())
                .map(|c| {
                    let mut any = false;
                    let mut sum = 0.0;
                    for k in 0..corners {
                        let n = grid.cell_corner(c, k);
                        any |= grid.active[n];
                        sum += f[n];
                    }
                    any.then_some(sum / corners as f64)
                })
                .collect()
        }
    }
}

/// Projected particle volume over the in-grid support volume of each node;
/// 0 at inactive nodes.
pub fn nodal_volume_fractions(grid: &Grid) -> Vec<f64> {
    let vc = grid.cell_volume();
    (0..grid.num_nodes())
        .map(|n| {
            if grid.active[n] {
                grid.scalar[n] / (vc * grid.support_fraction(n))
            } else {
                0.0
            }
        })
        .collect()
}

/// Flags `N₁` on the grid and returns it with the particles touching it.
///
/// A cell is a surface cell when `0 < fraction < eta` (`fraction < eta` for
/// `Adjacent`); all of its active corners become surface nodes. `Node`
/// compares each node's own fraction instead.
pub fn detect_surface_nodes(
    grid: &mut Grid,
    binning: &Binning,
    particles: &ParticleSet,
    eta: f64,
    mode: DetectionMode,
) -> Result<SurfaceSets> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    grid.surface.iter_mut().for_each(|s| *s = false);
    let corners = grid.stencil_len();
    let fractions = if mode == DetectionMode::Node {
        let f = nodal_volume_fractions(grid);
        for (n, f) in f.into_iter().enumerate() {
            grid.surface[n] = grid.active[n] && f < eta;
        }
        Vec::new()
    } else {
        cell_volume_fractions(grid, binning, particles, mode)
    };
    for (c, f) in fractions.iter().enumerate() {
        if let Some(f) = *f {
            let flagged = match mode {
                DetectionMode::Adjacent => f < eta,
                _ => f > 0.0 && f < eta,
            };
            if flagged {
                for k in 0..corners {
                    let n = grid.cell_corner(c, k);
                    if grid.active[n] {
                        grid.surface[n] = true;
                    }
                }
            }
        }
    }
    let nodes: Vec<usize> = (0..grid.num_nodes()).filter(|&n| grid.surface[n]).collect();
    let offsets = *grid.corner_offsets();
    let particles: Vec<usize> = binning
        .locators()
        .iter()
        .enumerate()
        .filter(|(_, loc)| (0..corners).any(|k| grid.surface[loc.base_node + offsets[k]]))
        .map(|(p, _)| p)
        .collect();
    Ok(SurfaceSets { nodes, particles })
}

/// Which projected field the normals differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalMethod {
    #[default]
    MassGradient,
    ScalarGradient,
}

fn outward_normals(
    grid: &Grid,
    binning: &Binning,
    field: &[f64],
    ids: &[usize],
) -> Vec<Result<Vec3>> {
    let max = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * max / grid.h();
    ids.iter()
        .map(|&p| {
            let st = grid.stencil_at(binning.locator(p));
            let mut g = [0.0; 3];
            for (n, _, dn) in st.iter() {
                for d in 0..3 {
                    g[d] += field[n] * dn[d];
                }
            }
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if !(norm > tol) || norm == 0.0 {
                return Err(Error::DegenerateNormal { particle: p });
            }
            Ok([-g[0] / norm, -g[1] / norm, -g[2] / norm])
        })
        .collect()
}

/// Outward unit normals `−∇m / ‖∇m‖` at particles `ids`.
pub fn normals_by_mass_gradient(
    grid: &Grid,
    binning: &Binning,
    ids: &[usize],
) -> Vec<Result<Vec3>> {
    outward_normals(grid, binning, &grid.mass, ids)
}

/// Outward unit normals `−∇φ / ‖∇φ‖` at particles `ids`, where `φ` is the
/// projected constant marker.
pub fn normals_by_scalar_gradient(
    grid: &Grid,
    binning: &Binning,
    ids: &[usize],
) -> Vec<Result<Vec3>> {
    outward_normals(grid, binning, &grid.scalar, ids)
}

/// Normals for every particle in `sets`, with fallback to the other field.
///
/// Particles degenerate under both fields are removed from `sets.particles`;
/// the count of removed particles is returned. Flags and normals on
/// `particles` are rewritten.
pub fn assign_normals(
    grid: &Grid,
    binning: &Binning,
    particles: &mut ParticleSet,
    sets: &mut SurfaceSets,
    method: NormalMethod,
) -> usize {
    let (first, second) = match method {
        NormalMethod::MassGradient => (&grid.mass, &grid.scalar),
        NormalMethod::ScalarGradient => (&grid.scalar, &grid.mass),
    };
    let primary = outward_normals(grid, binning, first, &sets.particles);
    particles.boundary.iter_mut().for_each(|b| *b = false);
    particles.normal.iter_mut().for_each(|n| *n = [0.0; 3]);
    let mut kept = Vec::with_capacity(sets.particles.len());
    let mut dropped = 0;
    for (&p, n) in sets.particles.iter().zip(primary) {
        let n = n.or_else(|_| outward_normals(grid, binning, second, &[p]).remove(0));
        match n {
            Ok(n) => {
                particles.boundary[p] = true;
                particles.normal[p] = n;
                kept.push(p);
            }
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} boundary particles have no usable normal and were skipped");
    }
    sets.particles = kept;
    dropped
}

/// Boundary particles whose probe point `x_p + h_p n_p` has no other
/// particle within `h_p / 2`; these form the outermost layer used by the
/// particle method.
pub fn outer_layer(
    grid: &Grid,
    binning: &Binning,
    particles: &ParticleSet,
    sets: &SurfaceSets,
    h_p: f64,
) -> Vec<usize> {
    let dim = grid.dim();
    let cells = grid.cell_counts();
    let r2 = 0.25 * h_p * h_p;
    sets.particles
        .iter()
        .copied()
        .filter(|&p| {
            let x = particles.position[p];
            let n = particles.normal[p];
            let mut y = [0.0; 3];
            for d in 0..dim {
                y[d] = x[d] + h_p * n[d];
            }
            let Ok(c) = grid.cell_of(&y) else {
                return true;
            };
            let ijk = grid.cell_ijk(c);
            let reach = (0.5 * h_p / grid.h()).ceil() as isize;
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for d in 0..3 {
                if d < dim {
                    lo[d] = (ijk[d] as isize - reach).max(0) as usize;
                    hi[d] = (ijk[d] as isize + reach).min(cells[d] as isize - 1) as usize;
                }
            }
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let cell = grid.cell_index([i, j, k]);
                        for &q in binning.cell_particles(cell) {
                            if q == p {
                                continue;
                            }
                            let z = particles.position[q];
                            let d2: f64 = (0..dim).map(|d| (z[d] - y[d]).powi(2)).sum();
                            if d2 < r2 {
                                return false;
                            }
                        }
                    }
                }
            }
            true
        })
        .collect()
}

/// Per-particle inward flux for the VHFM and particle methods: zero off the
/// boundary or outside the region. A convective flux is evaluated at
/// `temperature[p]`.
pub fn particle_boundary_flux(
    spec: &BoundarySpec,
    particles: &ParticleSet,
    temperature: &[f64],
    sets: &SurfaceSets,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.resize(particles.len(), 0.0);
    for p in flux_carriers(spec, particles, sets) {
        out[p] = spec.flux_at(temperature[p]);
    }
}

/// Boundary particles inside the flux region.
pub fn flux_carriers<'a>(
    spec: &'a BoundarySpec,
    particles: &'a ParticleSet,
    sets: &'a SurfaceSets,
) -> impl Iterator<Item = usize> + 'a {
    let dim = particles.dim();
    sets.particles.iter().copied().filter(move |&p| {
        spec.region
            .as_ref()
            .map_or(true, |r| r.contains(&particles.position[p], dim))
    })
}

/// Adds the virtual heat flux term `V_p q̂_p n_p·∇S_Ip` at surface nodes.
///
/// `flux` holds `q̂_p` per particle. Returns the total heat added.
pub fn apply_vhfm(
    grid: &mut Grid,
    binning: &Binning,
    particles: &ParticleSet,
    sets: &SurfaceSets,
    flux: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for &p in &sets.particles {
        if !particles.boundary[p] {
            return Err(Error::MissingNormal { particle: p });
        }
        let q = flux[p];
        if q == 0.0 {
            continue;
        }
        let n = particles.normal[p];
        let st = grid.stencil_at(binning.locator(p));
        for (node, _, g) in st.iter() {
            if grid.surface[node] {
                let e = particles.volume[p] * q * (n[0] * g[0] + n[1] * g[1] + n[2] * g[2]);
                grid.internal_heat[node] += e;
                total += e;
            }
        }
    }
    Ok(total)
}

/// Adds `A_I q̂(T_I)` at grid-conforming boundary nodes. Returns the total
/// heat added.
pub fn apply_node_boundary(grid: &mut Grid, kind: &BoundaryKind, nodes: &[(usize, f64)]) -> f64 {
    let mut total = 0.0;
    for &(node, area) in nodes {
        if !grid.active[node] {
            log::warn!("boundary node {node} is inactive; skipped");
            continue;
        }
        let e = area * boundary_flux_magnitude(kind, grid.temperature[node]);
        grid.external_heat[node] += e;
        total += e;
    }
    total
}

/// Adds `(V_p / h_p) q̂_p S_Ip` for the particles in `layer`. Returns the
/// total heat added.
pub fn apply_particle_boundary(
    grid: &mut Grid,
    binning: &Binning,
    particles: &ParticleSet,
    layer: &[usize],
    flux: &[f64],
    h_p: f64,
) -> Result<f64> {
    if !(h_p > 0.0) {
        return Err(Error::invalid(format!("h_p must be positive, got {h_p}")));
    }
    let mut total = 0.0;
    for &p in layer {
        let q = flux[p];
        if q == 0.0 {
            continue;
        }
        let st = grid.stencil_at(binning.locator(p));
        let e = particles.volume[p] / h_p * q;
        for (node, w, _) in st.iter() {
            grid.external_heat[node] += e * w;
        }
        total += e;
    }
    Ok(total)
}

/// Virtual tensor field `t̂ ⊗ n` whose normal contraction recovers `t̂`.
pub fn virtual_field_from_vector_bc(traction: &[f64], normal: &[f64]) -> Result<Vec<Vec<f64>>> {
    if traction.len() != normal.len() {
        return Err(Error::LengthMismatch {
            left: traction.len(),
            right: normal.len(),
        });
    }
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= 1e-12) {
        return Err(Error::invalid(format!(
            "normal must be unit length, got norm {norm}"
        )));
    }
    Ok(traction
        .iter()
        .map(|t| normal.iter().map(|n| t * n).collect())
        .collect())
}

/// Nodes on the plane `x_axis = coord`, each paired with the face area it
/// represents inside the grid (unit thickness in 2D).
pub fn conforming_face_nodes(grid: &Grid, axis: usize, coord: f64) -> Result<Vec<(usize, f64)>> {
    let dim = grid.dim();
    if axis >= dim {
        return Err(Error::invalid(format!(
            "axis {axis} out of range for dim {dim}"
        )));
    }
    let h = grid.h();
    let s = (coord - grid.origin()[axis]) / h;
    let counts = grid.node_counts();
    if (s - s.round()).abs() > 1e-9 || s.round() < 0.0 || s.round() as usize >= counts[axis] {
        return Err(Error::invalid(format!(
            "plane {coord} on axis {axis} does not coincide with a grid line"
        )));
    }
    let layer = s.round() as usize;
    let mut out = Vec::new();
    for n in 0..grid.num_nodes() {
        let ijk = grid.node_ijk(n);
        if ijk[axis] != layer {
            continue;
        }
        let mut area = 1.0;
        for d in (0..dim).filter(|&d| d != axis) {
            let edge = ijk[d] == 0 || ijk[d] + 1 == counts[d];
            area *= if edge { 0.5 * h } else { h };
        }
        out.push((n, area));
    }
    Ok(out)
}

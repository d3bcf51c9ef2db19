//! Explicit heat conduction step on particles and a fixed grid.
//!
//! One step:
//!
//! 1. (geometry, only after particles moved) rebin, project capacity, mass and
//!    the marker field, flag active nodes, detect the surface and normals;
//! 2. project nodal temperature as the capacity-weighted particle mean;
//! 3. particle flux `q_p = −κ_p Σ T_I ∇S_Ip`;
//! 4. nodal heats: `E_int = Σ V_p q_p·∇S_Ip`, `E_ext = Σ V_p Q_p S_Ip`,
//!    plus the boundary term of the chosen method;
//! 5. `Ṫ_I = (E_int + E_ext) / C_I`, explicit update, Dirichlet overrides;
//! 6. particle update (rate increment or full remap);
//! 7. prescribed motion, which invalidates the cached geometry.

use serde::{Deserialize, Serialize};

use crate::boundary::{
    assign_normals, detect_surface_nodes, flux_carriers, outer_layer, particle_boundary_flux,
    BoundaryKind, BoundaryMethod, BoundarySpec, DetectionMode, NormalMethod, SurfaceSets,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::particles::{apply_rigid_rotation, ParticleSet};
use crate::transfer::Binning;
use crate::Vec3;

/// Nodes with capacity at or below this fraction of the largest capacity are
/// inactive.
pub const ACTIVE_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub rho: f64,
    pub c: f64,
    pub kappa: f64,
}

impl MaterialParams {
    pub fn new(rho: f64, c: f64, kappa: f64) -> Result<Self> {
        let m = MaterialParams { rho, c, kappa };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.c > 0.0 && self.kappa >= 0.0) {
            return Err(Error::invalid(format!(
                "material needs rho > 0, c > 0, kappa >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Thermal diffusivity `κ / (ρ c)`.
    pub fn diffusivity(&self) -> f64 {
        self.kappa / (self.rho * self.c)
    }
}

/// Diffusive time-step bound `h² / α`; infinite when `α = 0`.
pub fn critical_time_step(h_min: f64, alpha: f64) -> Result<f64> {
    if !(h_min > 0.0) {
        return Err(Error::invalid(format!(
            "h_min must be positive, got {h_min}"
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "diffusivity must be nonnegative, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(h_min * h_min / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferScheme {
    /// `T_p += Δt Σ S_Ip Ṫ_I`
    #[default]
    Flip,
    /// `T_p = Σ S_Ip T_I`
    Pic,
}

/// Temperature a convective particle flux is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxTemperature {
    /// VHFM: each surface node's own `T_I`, so `V_p γ(T_a − T_I) n·∇S_Ip`.
    /// The particle method falls back to `T_p`.
    #[default]
    Node,
    /// Projected nodal field interpolated to the particle.
    Grid,
    /// The particle's own temperature.
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    #[default]
    Strict,
    Permissive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub transfer: TransferScheme,
    pub normals: NormalMethod,
    pub stability: StabilityMode,
    /// Multiplier on the critical time step.
    pub safety: f64,
    pub detection: DetectionMode,
    pub flux_temperature: FluxTemperature,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            transfer: TransferScheme::Flip,
            normals: NormalMethod::MassGradient,
            stability: StabilityMode::Strict,
            safety: 1.0,
            detection: DetectionMode::Smoothed,
            flux_temperature: FluxTemperature::Node,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Motion {
    #[default]
    None,
    Rotation {
        center: [f64; 2],
        omega_rps: f64,
    },
}

/// Bookkeeping from the most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub surface_nodes: usize,
    pub boundary_particles: usize,
    pub dropped_normals: usize,
    /// Heat assigned to inactive nodes and discarded.
    pub leaked_heat: f64,
    /// Heat per unit time entering through the boundary term.
    pub boundary_power: f64,
    /// Heat per unit time from volumetric sources.
    pub source_power: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub grid: Grid,
    pub particles: ParticleSet,
    pub time: f64,
    pub steps: usize,
    pub options: SolverOptions,
    pub boundary: Option<BoundarySpec>,
    /// Conforming nodes and their areas for the node method.
    pub boundary_nodes: Vec<(usize, f64)>,
    /// Prescribed nodal temperatures.
    pub dirichlet: Vec<(usize, f64)>,
    pub motion: Motion,
    pub sets: SurfaceSets,
    /// Particles carrying the particle-method flux.
    pub layer: Vec<usize>,
    pub diagnostics: StepDiagnostics,
    binning: Binning,
    geometry_valid: bool,
    flux_buf: Vec<f64>,
    node3: Vec<[f64; 3]>,
    node1: Vec<[f64; 1]>,
    particle_buf: Vec<f64>,
}

impl SolverState {
    pub fn new(grid: Grid, particles: ParticleSet, options: SolverOptions) -> Result<Self> {
        if particles.dim() != grid.dim() {
            return Err(Error::invalid(format!(
                "particles are {}D but the grid is {}D",
                particles.dim(),
                grid.dim()
            )));
        }
        particles.validate()?;
        if !(options.safety > 0.0) {
            return Err(Error::invalid(format!(
                "safety must be positive, got {}",
                options.safety
            )));
        }
        let binning = Binning::new(&grid, &particles.position)?;
        let n = grid.num_nodes();
        let np = particles.len();
        Ok(SolverState {
            grid,
            particles,
            time: 0.0,
            steps: 0,
            options,
            boundary: None,
            boundary_nodes: Vec::new(),
            dirichlet: Vec::new(),
            motion: Motion::None,
            sets: SurfaceSets::default(),
            layer: Vec::new(),
            diagnostics: StepDiagnostics::default(),
            binning,
            geometry_valid: false,
            flux_buf: vec![0.0; np],
            node3: vec![[0.0; 3]; n],
            node1: vec![[0.0; 1]; n],
            particle_buf: vec![0.0; np],
        })
    }

    pub fn with_boundary(mut self, spec: BoundarySpec) -> Result<Self> {
        spec.validate()?;
        self.boundary = Some(spec);
        self.geometry_valid = false;
        Ok(self)
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    /// Per-particle inward boundary flux used in the last step.
    pub fn boundary_flux(&self) -> &[f64] {
        &self.flux_buf
    }

    /// Largest `κ / (ρ c)` over the particles.
    pub fn max_diffusivity(&self) -> f64 {
        let p = &self.particles;
        (0..p.len())
            .map(|i| p.conductivity[i] / (p.density[i] * p.specific_heat[i]))
            .fold(0.0, f64::max)
    }

    pub fn stable_time_step(&self) -> Result<f64> {
        Ok(self.options.safety * critical_time_step(self.grid.h(), self.max_diffusivity())?)
    }

    /// Invalidates cached geometry, e.g. after editing positions directly.
    pub fn mark_moved(&mut self) {
        self.geometry_valid = false;
    }

    /// Recomputes everything that depends only on particle positions and
    /// material: bins, capacity, mass, marker field, active nodes, surface
    /// sets and normals.
    pub fn prepare_geometry(&mut self) -> Result<()> {
        if self.geometry_valid {
            return Ok(());
        }
        self.grid.reset();
        self.binning.rebuild(&self.grid, &self.particles.position)?;
        let p = &self.particles;
        let corners = self.grid.stencil_len();
        self.binning
            .scatter(&self.grid, &mut self.node3, |i, _, w, _, acc| {
                let m = p.density[i] * p.volume[i];
                let c = m * p.specific_heat[i];
                let phi = p.marker[i] * p.volume[i];
                for k in 0..corners {
                    acc[k][0] += c * w[k];
                    acc[k][1] += m * w[k];
                    acc[k][2] += phi * w[k];
                }
            });
        let max_c = self.node3.iter().fold(0.0f64, |m, v| m.max(v[0]));
        for (n, v) in self.node3.iter().enumerate() {
            self.grid.capacity[n] = v[0];
            self.grid.mass[n] = v[1];
            self.grid.scalar[n] = v[2];
            self.grid.active[n] = v[0] > ACTIVE_THRESHOLD * max_c;
        }

        self.diagnostics.dropped_normals = 0;
        if let Some(spec) = &self.boundary {
            if spec.method == BoundaryMethod::Node && self.boundary_nodes.is_empty() {
                return Err(Error::invalid(
                    "node method needs conforming boundary nodes",
                ));
            }
            let mut sets = detect_surface_nodes(
                &mut self.grid,
                &self.binning,
                &self.particles,
                spec.eta,
                self.options.detection,
            )?;
            self.diagnostics.dropped_normals = assign_normals(
                &self.grid,
                &self.binning,
                &mut self.particles,
                &mut sets,
                self.options.normals,
            );
            self.layer = if spec.method == BoundaryMethod::Particle {
                let h_p = spec
                    .h_p
                    .ok_or_else(|| Error::invalid("particle method needs h_p"))?;
                outer_layer(&self.grid, &self.binning, &self.particles, &sets, h_p)
            } else {
                Vec::new()
            };
            self.sets = sets;
        }
        self.diagnostics.surface_nodes = self.sets.nodes.len();
        self.diagnostics.boundary_particles = self.sets.particles.len();
        self.geometry_valid = true;
        Ok(())
    }

    /// Capacity-weighted nodal temperature; zeroes the per-step fields.
    pub fn project_temperature(&mut self) {
        let p = &self.particles;
        let corners = self.grid.stencil_len();
        self.binning
            .scatter(&self.grid, &mut self.node1, |i, _, w, _, acc| {
                let h = p.density[i] * p.specific_heat[i] * p.volume[i] * p.temperature[i];
                for k in 0..corners {
                    acc[k][0] += h * w[k];
                }
            });
        let g = &mut self.grid;
        for n in 0..g.num_nodes() {
            g.temperature[n] = if g.active[n] {
                self.node1[n][0] / g.capacity[n]
            } else {
                0.0
            };
            g.rate[n] = 0.0;
            g.internal_heat[n] = 0.0;
            g.external_heat[n] = 0.0;
        }
    }

    /// Grid temperature interpolated to the particles, `Σ_I S_Ip T_I`.
    ///
    /// Uses the nodal field of the last projection. Unlike the particle
    /// temperatures it carries no sub-cell residual from the rate update.
    pub fn grid_temperature_at_particles(&self) -> Vec<f64> {
        let grid = &self.grid;
        let corners = grid.stencil_len();
        let offsets = *grid.corner_offsets();
        let mut out = vec![0.0; self.particles.len()];
        self.binning.gather(grid, &mut out, |_, loc, w, _| {
            (0..corners)
                .map(|k| w[k] * grid.temperature[loc.base_node + offsets[k]])
                .sum()
        });
        out
    }

    /// `q_p = −κ_p Σ_I T_I ∇S_Ip`.
    pub fn particle_heat_flux(&mut self) {
        let grid = &self.grid;
        let kappa = &self.particles.conductivity;
        let corners = grid.stencil_len();
        let offsets = *grid.corner_offsets();
        self.binning
            .gather(grid, &mut self.particles.flux, |p, loc, _, g| {
                let mut q = [0.0; 3];
                for k in 0..corners {
                    let t = grid.temperature[loc.base_node + offsets[k]];
                    for d in 0..3 {
                        q[d] -= t * g[k][d];
                    }
                }
                [kappa[p] * q[0], kappa[p] * q[1], kappa[p] * q[2]]
            });
    }

    /// Adds the selected volume terms to `E_int` / `E_ext`; returns the
    /// boundary and source heat added.
    fn assemble(&mut self, internal: bool, source: bool, boundary: bool) -> Result<(f64, f64)> {
        let method = self.boundary.as_ref().map(|b| b.method);
        let vhfm = boundary && method == Some(BoundaryMethod::Vhfm);
        let pb = boundary && method == Some(BoundaryMethod::Particle);
        if vhfm || pb {
            let spec = self.boundary.as_ref().expect("checked above");
            let convective = matches!(spec.kind, BoundaryKind::Convective { .. });
            let interpolated;
            let temps: &[f64] =
                if convective && self.options.flux_temperature == FluxTemperature::Grid {
                    interpolated = self.grid_temperature_at_particles();
                    &interpolated
                } else {
                    &self.particles.temperature
                };
            particle_boundary_flux(spec, &self.particles, temps, &self.sets, &mut self.flux_buf);
            if vhfm {
                for &p in &self.sets.particles {
                    if !self.particles.boundary[p] {
                        return Err(Error::MissingNormal { particle: p });
                    }
                }
            }
        } else {
            self.flux_buf.iter_mut().for_each(|v| *v = 0.0);
        }
        // particle-method weights (or the node-evaluated VHFM mask) live in a
        // per-particle buffer so the scatter stays a single pass
        self.particle_buf.iter_mut().for_each(|v| *v = 0.0);
        let node_eval = match self.boundary.as_ref().map(|b| b.kind) {
            Some(BoundaryKind::Convective { gamma, ambient })
                if vhfm && self.options.flux_temperature == FluxTemperature::Node =>
            {
                let spec = self.boundary.as_ref().expect("checked above");
                for p in flux_carriers(spec, &self.particles, &self.sets) {
                    self.particle_buf[p] = 1.0;
                }
                Some((gamma, ambient))
            }
            _ => None,
        };
        if pb {
            let h_p = self
                .boundary
                .as_ref()
                .and_then(|b| b.h_p)
                .ok_or_else(|| Error::invalid("particle method needs h_p"))?;
            for &p in &self.layer {
                self.particle_buf[p] = self.particles.volume[p] / h_p * self.flux_buf[p];
            }
        }
        let source = source && self.particles.source.iter().any(|&q| q != 0.0);
        let p = &self.particles;
        let grid = &self.grid;
        let flux = &self.flux_buf;
        let pb_heat = &self.particle_buf;
        let corners = grid.stencil_len();
        let offsets = *grid.corner_offsets();
        self.binning
            .scatter(grid, &mut self.node3, |i, loc, w, g, acc| {
                let v = p.volume[i];
                if internal {
                    let q = p.flux[i];
                    for k in 0..corners {
                        acc[k][0] += v * (q[0] * g[k][0] + q[1] * g[k][1] + q[2] * g[k][2]);
                    }
                }
                if source && p.source[i] != 0.0 {
                    let s = v * p.source[i];
                    for k in 0..corners {
                        acc[k][1] += s * w[k];
                    }
                }
                if let Some((gamma, ambient)) = node_eval {
                    if pb_heat[i] != 0.0 {
                        let n = p.normal[i];
                        for k in 0..corners {
                            let node = loc.base_node + offsets[k];
                            if grid.surface[node] {
                                let q = gamma * (ambient - grid.temperature[node]);
                                let e = v * q * (n[0] * g[k][0] + n[1] * g[k][1] + n[2] * g[k][2]);
                                acc[k][0] += e;
                                acc[k][2] += e;
                            }
                        }
                    }
                } else if vhfm && flux[i] != 0.0 && p.boundary[i] {
                    let n = p.normal[i];
                    let s = v * flux[i];
                    for k in 0..corners {
                        if grid.surface[loc.base_node + offsets[k]] {
                            let e = s * (n[0] * g[k][0] + n[1] * g[k][1] + n[2] * g[k][2]);
                            acc[k][0] += e;
                            acc[k][2] += e;
                        }
                    }
                }
                if pb && pb_heat[i] != 0.0 {
                    for k in 0..corners {
                        let e = pb_heat[i] * w[k];
                        acc[k][1] += e;
                        acc[k][2] += e;
                    }
                }
            });
        let mut bnd = 0.0;
        for (n, v) in self.node3.iter().enumerate() {
            self.grid.internal_heat[n] += v[0];
            self.grid.external_heat[n] += v[1];
            bnd += v[2];
        }
        let src: f64 = if source {
            (0..p.len()).map(|i| p.volume[i] * p.source[i]).sum()
        } else {
            0.0
        };
        if boundary && method == Some(BoundaryMethod::Node) {
            let spec = self.boundary.as_ref().expect("method implies spec");
            bnd += crate::boundary::apply_node_boundary(
                &mut self.grid,
                &spec.kind,
                &self.boundary_nodes,
            );
        }
        Ok((bnd, src))
    }

    /// `E_int_I += Σ_p V_p q_p·∇S_Ip`.
    pub fn assemble_internal_heat(&mut self) -> Result<()> {
        self.assemble(true, false, false).map(|_| ())
    }

    /// `E_ext_I += Σ_p V_p Q_p S_Ip`.
    pub fn assemble_source_heat(&mut self) -> Result<()> {
        self.assemble(false, true, false).map(|_| ())
    }

    /// Adds the boundary term of the configured method; returns its power.
    pub fn apply_boundary(&mut self) -> Result<f64> {
        if self.boundary.is_none() {
            return Ok(0.0);
        }
        self.assemble(false, false, true).map(|(b, _)| b)
    }

    /// Explicit nodal update followed by Dirichlet overrides. Returns the
    /// heat dropped at inactive nodes.
    pub fn nodal_temperature_update(&mut self, dt: f64) -> f64 {
        let g = &mut self.grid;
        let mut leaked = 0.0;
        for n in 0..g.num_nodes() {
            let e = g.internal_heat[n] + g.external_heat[n];
            if g.active[n] {
                g.rate[n] = e / g.capacity[n];
                g.temperature[n] += dt * g.rate[n];
            } else {
                g.rate[n] = 0.0;
                leaked += e.abs();
            }
        }
        for &(n, t) in &self.dirichlet {
            let prev = g.temperature[n];
            g.temperature[n] = t;
            g.rate[n] = (t - prev) / dt;
        }
        if leaked > 0.0 {
            log::warn!("{leaked:e} W assigned to inactive nodes was dropped");
        }
        leaked
    }

    /// Grid-to-particle temperature transfer.
    pub fn update_particle_temperatures(&mut self, dt: f64) {
        let grid = &self.grid;
        let corners = grid.stencil_len();
        let offsets = *grid.corner_offsets();
        let scheme = self.options.transfer;
        let temps = &self.particles.temperature;
        self.binning
            .gather(grid, &mut self.particle_buf, |p, loc, w, _| {
                let mut s = 0.0;
                match scheme {
                    TransferScheme::Flip => {
                        for k in 0..corners {
                            s += w[k] * grid.rate[loc.base_node + offsets[k]];
                        }
                        temps[p] + dt * s
                    }
                    TransferScheme::Pic => {
                        for k in 0..corners {
                            s += w[k] * grid.temperature[loc.base_node + offsets[k]];
                        }
                        s
                    }
                }
            });
        std::mem::swap(&mut self.particles.temperature, &mut self.particle_buf);
    }

    fn check_stability(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let bound = self.stable_time_step()?;
        if dt > bound {
            match self.options.stability {
                StabilityMode::Strict => return Err(Error::Stability { dt, bound }),
                StabilityMode::Permissive => {
                    log::warn!("time step {dt} exceeds the stability bound {bound}")
                }
            }
        }
        Ok(())
    }

    /// Advances one explicit step of size `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        self.check_stability(dt)?;
        self.prepare_geometry()?;
        self.project_temperature();
        self.particle_heat_flux();
        let (bnd, src) = if self.boundary.is_some() {
            self.assemble(true, true, true)?
        } else {
            self.assemble(true, true, false)?
        };
        let leaked = self.nodal_temperature_update(dt);
        self.update_particle_temperatures(dt);
        self.diagnostics.leaked_heat = leaked;
        self.diagnostics.boundary_power = bnd;
        self.diagnostics.source_power = src;
        if let Motion::Rotation { center, omega_rps } = self.motion {
            if omega_rps != 0.0 {
                apply_rigid_rotation(&mut self.particles, center, omega_rps, dt)?;
                self.geometry_valid = false;
            }
        }
        self.time += dt;
        self.steps += 1;
        Ok(())
    }

    /// `Σ_I C_I T_I` over active nodes after the last projection.
    pub fn nodal_energy(&self) -> f64 {
        let g = &self.grid;
        (0..g.num_nodes())
            .filter(|&n| g.active[n])
            .map(|n| g.capacity[n] * g.temperature[n])
            .sum()
    }

    /// Nodes lying on the plane `x_axis = coord`.
    pub fn nodes_on_plane(&self, axis: usize, coord: f64) -> Vec<usize> {
        let h = self.grid.h();
        (0..self.grid.num_nodes())
            .filter(|&n| {
                let x: Vec3 = self.grid.node_position(n);
                (x[axis] - coord).abs() < 1e-9 * h
            })
            .collect()
    }
}

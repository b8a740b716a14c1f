//! Physical configuration, unit conventions and the key=value config format.
//!
//! All quantities are SI. The y axis is vertical: gas enters through the
//! bottom face (y = 0) and leaves through the open top (y = H).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Largest solids fraction accepted for an initial bed.
pub const MAX_SEED_FRACTION: f64 = 0.60;

/// Random close packing; drag closure and gas fraction are clamped here.
pub const PACKING_LIMIT: f64 = 0.64;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub gravity: Vec3,
}

impl DomainSpec {
    pub fn new(extent: [f64; 3], cells: [usize; 3]) -> Self {
        DomainSpec {
            width: extent[0],
            height: extent[1],
            depth: extent[2],
            nx: cells[0],
            ny: cells[1],
            nz: cells[2],
            gravity: [0.0, -9.81, 0.0],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.width, self.height, self.depth]
    }

    pub fn cells(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Cell edge length (cells are cubic).
    pub fn dx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.dx();
        h * h * h
    }

    pub fn volume(&self) -> f64 {
        self.width * self.height * self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let ext = self.extent();
        let cells = self.cells();
        for a in 0..3 {
            if !(ext[a] > 0.0) || !ext[a].is_finite() {
                return Err(Error::config(format!("domain extent along axis {a} must be positive")));
            }
            if cells[a] == 0 {
                return Err(Error::config(format!("cell count along axis {a} must be positive")));
            }
        }
        let h = self.dx();
        for a in 1..3 {
            let ha = ext[a] / cells[a] as f64;
            if ((ha - h) / h).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "cells must be cubic: spacing {ha:e} along axis {a} differs from {h:e} along x"
                )));
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::config("gravity must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DragModel {
    Bvk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidProps {
    pub viscosity: f64,
    pub density: f64,
    /// Superficial inlet velocity along +y at the bottom face.
    pub inlet_velocity: f64,
    pub drag_model: DragModel,
}

impl Default for FluidProps {
    fn default() -> Self {
        FluidProps {
            viscosity: 2.0e-5,
            density: 1.0,
            inlet_velocity: 0.015,
            drag_model: DragModel::Bvk,
        }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity > 0.0) {
            return Err(Error::config("viscosity must be positive"));
        }
        if !(self.density > 0.0) {
            return Err(Error::config("gas density must be positive"));
        }
        if !(self.inlet_velocity >= 0.0) {
            return Err(Error::config("inlet velocity must be non-negative"));
        }
        Ok(())
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.viscosity / self.density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleProps {
    pub diameter: f64,
    pub density: f64,
    pub spring_constant: f64,
    pub friction: f64,
    pub restitution_pp: f64,
    pub restitution_pw: f64,
    pub tangential_spring_factor: f64,
    pub tangential_damping_factor: f64,
}

impl Default for ParticleProps {
    fn default() -> Self {
        ParticleProps {
            diameter: 1.0e-4,
            density: 1000.0,
            spring_constant: 10.0,
            friction: 0.0,
            restitution_pp: 0.8,
            restitution_pw: 1.0,
            tangential_spring_factor: 0.28,
            tangential_damping_factor: 0.5,
        }
    }
}

impl ParticleProps {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn volume(&self) -> f64 {
        PI / 6.0 * self.diameter.powi(3)
    }

    pub fn mass(&self) -> f64 {
        self.density * self.volume()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) {
            return Err(Error::config("particle diameter must be positive"));
        }
        if !(self.density > 0.0) {
            return Err(Error::config("particle density must be positive"));
        }
        if !(self.spring_constant > 0.0) {
            return Err(Error::config("spring constant must be positive"));
        }
        if !(self.friction >= 0.0) {
            return Err(Error::config("friction coefficient must be non-negative"));
        }
        for (name, e) in [("restitution_pp", self.restitution_pp), ("restitution_pw", self.restitution_pw)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
            if e == 0.0 {
                return Err(Error::config(format!("{name} = 0: perfectly plastic contact unsupported")));
            }
        }
        if !(self.tangential_spring_factor >= 0.0) || !(self.tangential_damping_factor >= 0.0) {
            return Err(Error::config("tangential factors must be non-negative"));
        }
        Ok(())
    }
}

/// Spring-dashpot constants derived from [`ParticleProps`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleConstants {
    pub mass: f64,
    pub effective_mass: f64,
    pub damping: f64,
    pub contact_time: f64,
    /// Normal damping for particle-wall contact (effective mass = m).
    pub wall_damping: f64,
    pub inertia: f64,
}

/// Damping coefficient that yields restitution `e` for a linear spring of
/// stiffness `k` acting on effective mass `m_eff`.
pub fn dashpot_damping(k: f64, m_eff: f64, e: f64) -> Result<f64> {
    if !(e > 0.0 && e <= 1.0) {
        return Err(Error::config(format!(
            "restitution {e} unsupported (perfectly plastic contact has singular damping)"
        )));
    }
    let omega0 = (k / m_eff).sqrt();
    let ln_e = e.ln().abs();
    Ok(2.0 * m_eff * omega0 * ln_e / (PI * PI + ln_e * ln_e).sqrt())
}

pub fn derived_particle_constants(props: &ParticleProps) -> Result<ParticleConstants> {
    let mass = props.mass();
    let effective_mass = 0.5 * mass;
    let damping = dashpot_damping(props.spring_constant, effective_mass, props.restitution_pp)?;
    let wall_damping = dashpot_damping(props.spring_constant, mass, props.restitution_pw)?;
    let omega0_sq = props.spring_constant / effective_mass;
    let decay = damping / (2.0 * effective_mass);
    let contact_time = PI / (omega0_sq - decay * decay).sqrt();
    let r = props.radius();
    Ok(ParticleConstants {
        mass,
        effective_mass,
        damping,
        contact_time,
        wall_damping,
        inertia: 0.4 * mass * r * r,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallBc {
    NoSlip,
    FreeSlip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub domain: DomainSpec,
    pub fluid: FluidProps,
    pub particles: ParticleProps,
    /// Initial solids fraction of the whole domain; ignored when `n_particles` is set.
    pub solids_fraction: f64,
    pub n_particles: Option<usize>,
    /// Lattice spacing of the seeded bed in particle diameters.
    pub lattice_spacing: f64,
    pub cfl: f64,
    pub dt_fluid_max: f64,
    /// Fixed particle step is t_c divided by this.
    pub substep_divisor: f64,
    pub ats: bool,
    pub ats_tol: f64,
    pub ats_dt_min: f64,
    pub ats_dt_max: f64,
    /// Initial adaptive step; `None` starts at the fixed step.
    pub ats_dt_init: Option<f64>,
    pub t_end: f64,
    pub rebuild_interval: usize,
    pub ranks: usize,
    pub tiling: [usize; 3],
    pub seed: u64,
    pub inlet_ramp: f64,
    pub wall_bc: WallBc,
    pub poisson_tol: f64,
    pub poisson_max_iters: usize,
    pub walls: bool,
}

impl Default for SimConfig {
    /// The 40,000-particle bubbling bed in a 0.0032 x 0.01 x 0.0032 m column.
    fn default() -> Self {
        SimConfig {
            domain: DomainSpec::new([0.0032, 0.01, 0.0032], [16, 50, 16]),
            fluid: FluidProps::default(),
            particles: ParticleProps::default(),
            solids_fraction: 0.2,
            n_particles: Some(40_000),
            lattice_spacing: 1.1,
            cfl: 0.5,
            dt_fluid_max: 2.0e-4,
            substep_divisor: 20.0,
            ats: false,
            ats_tol: 1.0e-5,
            ats_dt_min: 1.0e-9,
            ats_dt_max: 8.0e-6,
            ats_dt_init: None,
            t_end: 0.01,
            rebuild_interval: 50,
            ranks: 1,
            tiling: [8, 50, 8],
            seed: 42,
            inlet_ramp: 1.0e-3,
            wall_bc: WallBc::NoSlip,
            poisson_tol: 1.0e-11,
            poisson_max_iters: 5000,
            walls: true,
        }
    }
}

impl SimConfig {
    pub fn constants(&self) -> Result<ParticleConstants> {
        derived_particle_constants(&self.particles)
    }

    /// The fixed particle step t_c / divisor.
    pub fn fixed_substep(&self) -> Result<f64> {
        Ok(self.constants()?.contact_time / self.substep_divisor)
    }

    pub fn target_particle_count(&self) -> usize {
        match self.n_particles {
            Some(n) => n,
            None => (self.solids_fraction * self.domain.volume() / self.particles.volume()).round() as usize,
        }
    }

    pub fn box_count(&self) -> usize {
        let c = self.domain.cells();
        (0..3).map(|a| c[a] / self.tiling[a].max(1)).product()
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.fluid.validate()?;
        self.particles.validate()?;
        let cells = self.domain.cells();
        for a in 0..3 {
            if self.tiling[a] == 0 || cells[a] % self.tiling[a] != 0 {
                return Err(Error::config(format!(
                    "box tiling {} does not divide {} cells along axis {a}",
                    self.tiling[a], cells[a]
                )));
            }
        }
        if self.ranks == 0 {
            return Err(Error::config("rank count must be at least 1"));
        }
        if self.ranks > self.box_count() {
            return Err(Error::config(format!(
                "{} ranks requested but only {} boxes",
                self.ranks,
                self.box_count()
            )));
        }
        if self.n_particles.is_none() && !(0.0..=MAX_SEED_FRACTION).contains(&self.solids_fraction) {
            return Err(Error::config(format!(
                "solids fraction {} outside [0, {MAX_SEED_FRACTION}]",
                self.solids_fraction
            )));
        }
        let seeded = self.target_particle_count() as f64 * self.particles.volume() / self.domain.volume();
        if seeded > MAX_SEED_FRACTION {
            return Err(Error::config(format!("initial solids fraction {seeded:.3} exceeds {MAX_SEED_FRACTION}")));
        }
        if !(self.lattice_spacing >= 1.0) {
            return Err(Error::config("lattice spacing must be at least one diameter"));
        }
        if !(self.cfl > 0.0) || !(self.dt_fluid_max > 0.0) {
            return Err(Error::config("cfl and dt_fluid_max must be positive"));
        }
        if !(self.substep_divisor > 0.0) {
            return Err(Error::config("substep divisor must be positive"));
        }
        if !(self.ats_tol > 0.0) {
            return Err(Error::config("ATS tolerance must be positive"));
        }
        if !(self.ats_dt_min > 0.0) || !(self.ats_dt_min <= self.ats_dt_max) {
            return Err(Error::config("ATS bounds must satisfy 0 < dt_min <= dt_max"));
        }
        if let Some(dt0) = self.ats_dt_init {
            if !(dt0 >= self.ats_dt_min && dt0 <= self.ats_dt_max) {
                return Err(Error::config("ATS initial step outside [dt_min, dt_max]"));
            }
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::config("end time must be non-negative"));
        }
        if self.rebuild_interval == 0 {
            return Err(Error::config("rebuild interval must be at least 1"));
        }
        if !(self.inlet_ramp >= 0.0) {
            return Err(Error::config("inlet ramp must be non-negative"));
        }
        if !(self.poisson_tol > 0.0) || self.poisson_max_iters == 0 {
            return Err(Error::config("poisson tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "width" => self.domain.width = num(key, value)?,
            "height" => self.domain.height = num(key, value)?,
            "depth" => self.domain.depth = num(key, value)?,
            "nx" => self.domain.nx = int(key, value)?,
            "ny" => self.domain.ny = int(key, value)?,
            "nz" => self.domain.nz = int(key, value)?,
            "gravity" => self.domain.gravity = triple(key, value)?,
            "viscosity" => self.fluid.viscosity = num(key, value)?,
            "gas_density" => self.fluid.density = num(key, value)?,
            "inlet_velocity" => self.fluid.inlet_velocity = num(key, value)?,
            "drag_model" => {
                if !value.eq_ignore_ascii_case("bvk") {
                    return Err(Error::config(format!("unknown drag model {value:?}")));
                }
                self.fluid.drag_model = DragModel::Bvk;
            }
            "diameter" => self.particles.diameter = num(key, value)?,
            "particle_density" => self.particles.density = num(key, value)?,
            "spring_constant" => self.particles.spring_constant = num(key, value)?,
            "friction" => self.particles.friction = num(key, value)?,
            "restitution_pp" => self.particles.restitution_pp = num(key, value)?,
            "restitution_pw" => self.particles.restitution_pw = num(key, value)?,
            "tangential_spring_factor" => self.particles.tangential_spring_factor = num(key, value)?,
            "tangential_damping_factor" => self.particles.tangential_damping_factor = num(key, value)?,
            "solids_fraction" => {
                self.solids_fraction = num(key, value)?;
                self.n_particles = None;
            }
            "n_particles" => self.n_particles = Some(int(key, value)?),
            "lattice_spacing" => self.lattice_spacing = num(key, value)?,
            "cfl" => self.cfl = num(key, value)?,
            "dt_fluid_max" => self.dt_fluid_max = num(key, value)?,
            "substep_divisor" => self.substep_divisor = num(key, value)?,
            "ats" => self.ats = flag(key, value)?,
            "ats_tol" => self.ats_tol = num(key, value)?,
            "ats_dt_min" => self.ats_dt_min = num(key, value)?,
            "ats_dt_max" => self.ats_dt_max = num(key, value)?,
            "ats_dt_init" => self.ats_dt_init = Some(num(key, value)?),
            "t_end" => self.t_end = num(key, value)?,
            "rebuild_interval" => self.rebuild_interval = int(key, value)?,
            "ranks" => self.ranks = int(key, value)?,
            "tiling" => {
                let t = triple(key, value)?;
                let mut tiling = [0usize; 3];
                for a in 0..3 {
                    if t[a] < 1.0 || t[a].fract() != 0.0 {
                        return Err(Error::config(format!("tiling entries must be positive integers: {value:?}")));
                    }
                    tiling[a] = t[a] as usize;
                }
                self.tiling = tiling;
            }
            "seed" => self.seed = int(key, value)? as u64,
            "inlet_ramp" => self.inlet_ramp = num(key, value)?,
            "wall_bc" => {
                self.wall_bc = match value {
                    "no-slip" | "noslip" => WallBc::NoSlip,
                    "free-slip" | "freeslip" => WallBc::FreeSlip,
                    _ => return Err(Error::config(format!("wall_bc must be no-slip or free-slip, got {value:?}"))),
                }
            }
            "poisson_tol" => self.poisson_tol = num(key, value)?,
            "poisson_max_iters" => self.poisson_max_iters = int(key, value)?,
            "walls" => self.walls = flag(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Renders the configuration in the key=value format accepted by [`SimConfig::parse`].
    pub fn to_kv(&self) -> String {
        let d = &self.domain;
        let f = &self.fluid;
        let p = &self.particles;
        let mut s = String::new();
        let _ = writeln!(s, "width = {}\nheight = {}\ndepth = {}", d.width, d.height, d.depth);
        let _ = writeln!(s, "nx = {}\nny = {}\nnz = {}", d.nx, d.ny, d.nz);
        let _ = writeln!(s, "gravity = {},{},{}", d.gravity[0], d.gravity[1], d.gravity[2]);
        let _ = writeln!(s, "viscosity = {}\ngas_density = {}\ninlet_velocity = {}\ndrag_model = bvk", f.viscosity, f.density, f.inlet_velocity);
        let _ = writeln!(s, "diameter = {}\nparticle_density = {}\nspring_constant = {}\nfriction = {}", p.diameter, p.density, p.spring_constant, p.friction);
        let _ = writeln!(s, "restitution_pp = {}\nrestitution_pw = {}", p.restitution_pp, p.restitution_pw);
        let _ = writeln!(s, "tangential_spring_factor = {}\ntangential_damping_factor = {}", p.tangential_spring_factor, p.tangential_damping_factor);
        match self.n_particles {
            Some(n) => {
                let _ = writeln!(s, "n_particles = {n}");
            }
            None => {
                let _ = writeln!(s, "solids_fraction = {}", self.solids_fraction);
            }
        }
        let _ = writeln!(s, "lattice_spacing = {}\ncfl = {}\ndt_fluid_max = {}\nsubstep_divisor = {}", self.lattice_spacing, self.cfl, self.dt_fluid_max, self.substep_divisor);
        let _ = writeln!(s, "ats = {}\nats_tol = {}\nats_dt_min = {}\nats_dt_max = {}", if self.ats { "on" } else { "off" }, self.ats_tol, self.ats_dt_min, self.ats_dt_max);
        if let Some(dt0) = self.ats_dt_init {
            let _ = writeln!(s, "ats_dt_init = {dt0}");
        }
        let _ = writeln!(s, "t_end = {}\nrebuild_interval = {}\nranks = {}", self.t_end, self.rebuild_interval, self.ranks);
        let _ = writeln!(s, "tiling = {},{},{}\nseed = {}\ninlet_ramp = {}", self.tiling[0], self.tiling[1], self.tiling[2], self.seed, self.inlet_ramp);
        let wall = match self.wall_bc {
            WallBc::NoSlip => "no-slip",
            WallBc::FreeSlip => "free-slip",
        };
        let _ = writeln!(s, "wall_bc = {wall}\npoisson_tol = {}\npoisson_max_iters = {}\nwalls = {}", self.poisson_tol, self.poisson_max_iters, if self.walls { "on" } else { "off" });
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn num(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?} as a number")))?;
    if v.is_nan() {
        return Err(Error::config(format!("{key}: NaN not allowed")));
    }
    Ok(v)
}

fn int(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?} as a non-negative integer")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected on/off, got {value:?}"))),
    }
}

fn triple(key: &str, value: &str) -> Result<Vec3> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::config(format!("{key}: expected three comma-separated values")));
    }
    Ok([num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_particle_mass() {
        let c = derived_particle_constants(&ParticleProps::default()).unwrap();
        // 1000 * pi/6 * 1e-12
        assert!((c.mass - 5.2359877559829887e-10).abs() < 1e-22);
        assert!((c.effective_mass - 2.6179938779914944e-10).abs() < 1e-22);
    }

    #[test]
    fn elastic_contact_has_no_damping() {
        let props = ParticleProps { restitution_pp: 1.0, ..ParticleProps::default() };
        let c = derived_particle_constants(&props).unwrap();
        assert_eq!(c.damping, 0.0);
        assert_eq!(c.wall_damping, 0.0);
    }

    #[test]
    fn contact_time_matches_damped_half_period() {
        let c = derived_particle_constants(&ParticleProps::default()).unwrap();
        // omega0 = sqrt(10 / 2.618e-10); zeta from ln(0.8)
        let omega0 = (10.0f64 / 2.6179938779914944e-10).sqrt();
        let ln_e = 0.8f64.ln().abs();
        let zeta = ln_e / (PI * PI + ln_e * ln_e).sqrt();
        let expected = PI / (omega0 * (1.0 - zeta * zeta).sqrt());
        assert!((c.contact_time - expected).abs() / expected < 1e-12);
        assert!((c.contact_time - 1.61e-5).abs() < 0.01e-5);
    }

    #[test]
    fn plastic_contact_rejected() {
        let props = ParticleProps { restitution_pp: 0.0, ..ParticleProps::default() };
        assert!(derived_particle_constants(&props).is_err());
        assert!(props.validate().is_err());
    }

    #[test]
    fn damping_decreases_toward_elastic() {
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let e = i as f64 / 100.0;
            let g = dashpot_damping(10.0, 2.618e-10, e).unwrap();
            assert!(g < prev, "damping not decreasing at e = {e}");
            prev = g;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn derived_constants_are_pure() {
        let a = derived_particle_constants(&ParticleProps::default()).unwrap();
        let b = derived_particle_constants(&ParticleProps::default()).unwrap();
        assert_eq!(a.damping.to_bits(), b.damping.to_bits());
        assert_eq!(a.contact_time.to_bits(), b.contact_time.to_bits());
    }

    #[test]
    fn non_cubic_cells_rejected() {
        let d = DomainSpec::new([0.0032, 0.01, 0.0032], [16, 40, 16]);
        assert!(d.validate().is_err());
        let d = DomainSpec::new([0.0032, 0.01, 0.0032], [16, 50, 16]);
        d.validate().unwrap();
        assert!((d.dx() - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let cfg = SimConfig::parse("# bed\nnx = 16\nats = on\ntiling = 8, 50, 8\nats_tol = 1e-4\n").unwrap();
        assert!(cfg.ats);
        assert_eq!(cfg.ats_tol, 1e-4);
        let again = SimConfig::parse(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);

        let err = SimConfig::parse("bogus = 3").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("line 1"));
        assert!(SimConfig::parse("nx").is_err());
        assert!(SimConfig::parse("ats = maybe").is_err());
    }

    #[test]
    fn tiling_must_divide_grid() {
        let mut cfg = SimConfig::default();
        cfg.tiling = [3, 50, 8];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overfull_bed_rejected() {
        let mut cfg = SimConfig::default();
        cfg.n_particles = None;
        cfg.solids_fraction = 0.61;
        assert!(cfg.validate().is_err());
    }
}

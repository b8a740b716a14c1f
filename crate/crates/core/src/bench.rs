//! Problem-size sweeps, weak scaling over in-process ranks and adaptive vs
//! fixed particle stepping comparisons, with CSV reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{DomainSpec, SimConfig};
use crate::driver::{run, RunOptions, RunReport};
use crate::error::{Error, Result};

pub const SIZES_HEADER: &str = "label,factor,particles,wall_s,ideal_wall_s,substeps";
pub const WEAK_HEADER: &str = "ranks,particles,wall_s,efficiency,ats";
pub const WEAK_PHYSICS_HEADER: &str = "ranks,particles,mean_speed,max_speed,ke_total,bed_height";
pub const ATS_HEADER: &str = "label,substeps_fixed,substeps_ats,wall_fixed_s,wall_ats_s,substep_ratio,wall_ratio";

/// Simulated time per benchmark run.
pub const DEFAULT_DURATION: f64 = 2.0e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SizePreset {
    pub label: String,
    pub factor: usize,
    pub extent: [f64; 3],
    pub cells: [usize; 3],
    pub tiling: [usize; 3],
    pub particles: usize,
}

impl SizePreset {
    /// The full-scale 1x case: 64 x 100 x 64 cells, boxes of
    /// 8 x 100 x 8 cells, 2.10 million particles.
    pub fn full_base() -> SizePreset {
        SizePreset {
            label: "1x".into(),
            factor: 1,
            extent: [0.0128, 0.02, 0.0128],
            cells: [64, 100, 64],
            tiling: [8, 100, 8],
            particles: 2_100_000,
        }
    }

    /// 1/64 of the full-scale base: the 0.0032 x 0.01 x 0.0032 m column on a
    /// 16 x 50 x 16 grid in four boxes.
    pub fn desk_base() -> SizePreset {
        SizePreset {
            label: "1x".into(),
            factor: 1,
            extent: [0.0032, 0.01, 0.0032],
            cells: [16, 50, 16],
            tiling: [8, 50, 8],
            particles: 2_100_000 / 64,
        }
    }

    /// This preset's geometry and particle count on top of `base`.
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut cfg = base.clone();
        let gravity = cfg.domain.gravity;
        cfg.domain = DomainSpec::new(self.extent, self.cells);
        cfg.domain.gravity = gravity;
        cfg.tiling = self.tiling;
        cfg.n_particles = Some(self.particles);
        cfg
    }
}

/// Doubling sequence 1x, 2x, ... up to `max_factor`: height, axial cells,
/// axial box size and particle count scale with the factor.
pub fn scale_presets(base: &SizePreset, max_factor: usize) -> Result<Vec<SizePreset>> {
    if !max_factor.is_power_of_two() {
        return Err(Error::config(format!("max factor {max_factor} is not a power of two")));
    }
    let mut out = Vec::new();
    let mut f = 1;
    while f <= max_factor {
        let mut p = base.clone();
        p.factor = base.factor * f;
        p.label = format!("{}x", p.factor);
        p.extent[1] *= f as f64;
        p.cells[1] *= f;
        p.tiling[1] *= f;
        p.particles *= f;
        out.push(p);
        f *= 2;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeRow {
    pub label: String,
    pub factor: usize,
    pub particles: usize,
    pub wall_s: f64,
    pub ideal_wall_s: f64,
    pub substeps: u64,
    pub error: Option<String>,
}

/// Runs every preset for `duration` simulated seconds. A failed run is
/// kept as a row with NaN wall time and its error.
pub fn run_size_sweep(presets: &[SizePreset], base: &SimConfig, duration: f64) -> Vec<SizeRow> {
    let mut rows: Vec<SizeRow> = Vec::new();
    for p in presets {
        let cfg = SimConfig { t_end: duration, ..p.apply(base) };
        let (wall_s, substeps, error) = match run(&cfg, &RunOptions::default()) {
            Ok(r) => (r.wall_s, r.substeps, None),
            Err(e) => (f64::NAN, 0, Some(e.to_string())),
        };
        rows.push(SizeRow { label: p.label.clone(), factor: p.factor, particles: p.particles, wall_s, ideal_wall_s: f64::NAN, substeps, error });
    }
    if let Some(first) = rows.first().cloned() {
        for r in &mut rows {
            r.ideal_wall_s = first.wall_s * r.factor as f64 / first.factor as f64;
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakRow {
    pub ranks: usize,
    pub particles: usize,
    pub wall_s: f64,
    pub efficiency: f64,
    pub ats: bool,
    pub error: Option<String>,
}

/// Final-state diagnostics of the base preset run on a given rank count.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsRow {
    pub ranks: usize,
    pub particles: usize,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub ke_total: f64,
    pub bed_height: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeakReport {
    pub rows: Vec<WeakRow>,
    pub physics: Vec<PhysicsRow>,
}

impl WeakReport {
    /// Largest relative spread of each diagnostic across rank counts.
    pub fn physics_spread(&self) -> f64 {
        let Some(first) = self.physics.first() else { return 0.0 };
        let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
        self.physics
            .iter()
            .map(|p| {
                rel(p.mean_speed, first.mean_speed)
                    .max(rel(p.max_speed, first.max_speed))
                    .max(rel(p.ke_total, first.ke_total))
                    .max(rel(p.bed_height, first.bed_height))
                    .max(rel(p.particles as f64, first.particles as f64))
            })
            .fold(0.0, f64::max)
    }
}

/// Weak scaling: on R ranks the problem is the Rx preset. Each rank count
/// runs with fixed and with adaptive particle steps; efficiency is
/// wall(1 rank) / wall(R ranks) within each variant. The base preset is
/// also run (fixed steps) on every rank count to check that the physics
/// does not depend on the decomposition.
pub fn run_weak_scaling(base_preset: &SizePreset, ranks: &[usize], base: &SimConfig, duration: f64) -> Result<WeakReport> {
    let mut report = WeakReport::default();
    for ats in [false, true] {
        let mut wall1 = f64::NAN;
        for &r in ranks {
            let presets = scale_presets(base_preset, r.next_power_of_two())?;
            let p = presets.iter().find(|p| p.factor == base_preset.factor * r).ok_or_else(|| {
                Error::config(format!("rank count {r} is not a power of two"))
            })?;
            let cfg = SimConfig { t_end: duration, ranks: r, ats, ..p.apply(base) };
            let (wall_s, error) = match run(&cfg, &RunOptions::default()) {
                Ok(rep) => (rep.wall_s, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            if r == 1 {
                wall1 = wall_s;
            }
            let efficiency = if r == 1 && error.is_none() { 1.0 } else { wall1 / wall_s };
            report.rows.push(WeakRow { ranks: r, particles: p.particles, wall_s, efficiency, ats, error });
        }
    }
    for &r in ranks {
        let cfg = SimConfig { t_end: duration, ranks: r, ats: false, ..base_preset.apply(base) };
        let rep = run(&cfg, &RunOptions::default())?;
        report.physics.push(physics_row(r, &rep));
    }
    Ok(report)
}

fn physics_row(ranks: usize, rep: &RunReport) -> PhysicsRow {
    let d = rep.diagnostics.last().copied().unwrap_or_default();
    PhysicsRow {
        ranks,
        particles: d.n_particles,
        mean_speed: d.mean_speed,
        max_speed: d.max_speed,
        ke_total: d.ke_total,
        bed_height: d.bed_height,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtsRow {
    pub label: String,
    pub substeps_fixed: u64,
    pub substeps_ats: u64,
    pub wall_fixed_s: f64,
    pub wall_ats_s: f64,
    pub substep_ratio: f64,
    pub wall_ratio: f64,
}

/// Paired runs of the same case with fixed and adaptive particle steps.
pub fn ats_comparison(label: &str, cfg: &SimConfig) -> Result<AtsRow> {
    let fixed = run(&SimConfig { ats: false, ..cfg.clone() }, &RunOptions::default())?;
    let ats = run(&SimConfig { ats: true, ..cfg.clone() }, &RunOptions::default())?;
    Ok(AtsRow {
        label: label.into(),
        substeps_fixed: fixed.substeps,
        substeps_ats: ats.substeps,
        wall_fixed_s: fixed.wall_s,
        wall_ats_s: ats.wall_s,
        substep_ratio: fixed.substeps as f64 / ats.substeps as f64,
        wall_ratio: fixed.wall_s / ats.wall_s,
    })
}

pub fn sizes_csv(rows: &[SizeRow]) -> String {
    let mut s = format!("{SIZES_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:e},{:e},{}", r.label, r.factor, r.particles, r.wall_s, r.ideal_wall_s, r.substeps);
    }
    s
}

pub fn weak_csv(rows: &[WeakRow]) -> String {
    let mut s = format!("{WEAK_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e},{}", r.ranks, r.particles, r.wall_s, r.efficiency, if r.ats { "on" } else { "off" });
    }
    s
}

pub fn weak_physics_csv(rows: &[PhysicsRow]) -> String {
    let mut s = format!("{WEAK_PHYSICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e},{:e},{:e}", r.ranks, r.particles, r.mean_speed, r.max_speed, r.ke_total, r.bed_height);
    }
    s
}

pub fn ats_csv(rows: &[AtsRow]) -> String {
    let mut s = format!("{ATS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e},{:e}",
            r.label, r.substeps_fixed, r.substeps_ats, r.wall_fixed_s, r.wall_ats_s, r.substep_ratio, r.wall_ratio
        );
    }
    s
}

pub fn write_report(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

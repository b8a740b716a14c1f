//! Per-step timing and diagnostics records and their CSV files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::decomp::comm::tags;
use crate::decomp::wire::{decode_f64s, encode_f64s};
use crate::decomp::Comm;
use crate::error::Result;
use crate::particles::ParticleRecord;

pub const TIMINGS_HEADER: &str =
    "step,t,dt_f,n_substeps,w_fluid,w_drag,w_neighbor,w_collide,w_integrate,w_ghost,w_redist,w_deposit,w_total";
pub const DIAGNOSTICS_HEADER: &str =
    "step,t,mean_speed,max_speed,ke_total,bed_height,n_particles,n_overlap_events,n_tol_violations";

/// Wall seconds per phase of one fluid step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTimings {
    pub step: usize,
    pub t: f64,
    pub dt_f: f64,
    pub n_substeps: usize,
    pub w_fluid: f64,
    /// Gas interpolation and drag, inside the particle sub-steps.
    pub w_drag: f64,
    pub w_neighbor: f64,
    pub w_collide: f64,
    pub w_integrate: f64,
    pub w_ghost: f64,
    pub w_redist: f64,
    pub w_deposit: f64,
    pub w_total: f64,
}

impl StepTimings {
    fn phases(&self) -> [f64; 9] {
        [
            self.w_fluid,
            self.w_drag,
            self.w_neighbor,
            self.w_collide,
            self.w_integrate,
            self.w_ghost,
            self.w_redist,
            self.w_deposit,
            self.w_total,
        ]
    }

    pub fn phase_sum(&self) -> f64 {
        self.phases()[..8].iter().sum()
    }

    /// Replaces the wall times with those of the slowest rank.
    pub fn max_over_ranks(&mut self, comm: &mut Comm) -> Result<()> {
        if comm.size() == 1 {
            return Ok(());
        }
        let me = comm.rank();
        let all = comm.allgather(tags::GATHER, encode_f64s(&self.phases()))?;
        let mut best: Option<Vec<f64>> = None;
        for (src, bytes) in all.iter().enumerate() {
            let w = decode_f64s(bytes, 9, src, me)?;
            if best.as_ref().map_or(true, |b| w[8] > b[8]) {
                best = Some(w);
            }
        }
        let w = best.unwrap_or_default();
        [
            self.w_fluid,
            self.w_drag,
            self.w_neighbor,
            self.w_collide,
            self.w_integrate,
            self.w_ghost,
            self.w_redist,
            self.w_deposit,
            self.w_total,
        ] = [w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7], w[8]];
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{:e},{:e},{}", self.step, self.t, self.dt_f, self.n_substeps);
        for w in self.phases() {
            let _ = write!(s, ",{w:e}");
        }
        s
    }
}

/// Global particle statistics after one fluid step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub ke_total: f64,
    /// Twice the mean particle height.
    pub bed_height: f64,
    pub n_particles: usize,
    /// Cumulative.
    pub n_overlap_events: u64,
    /// Cumulative.
    pub n_tol_violations: u64,
}

impl Diagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            self.step,
            self.t,
            self.mean_speed,
            self.max_speed,
            self.ke_total,
            self.bed_height,
            self.n_particles,
            self.n_overlap_events,
            self.n_tol_violations
        )
    }
}

/// `timings.csv` and `diagnostics.csv`, flushed after every row.
pub struct CsvWriters {
    timings: BufWriter<File>,
    diagnostics: BufWriter<File>,
}

impl CsvWriters {
    pub fn create(dir: &Path) -> Result<CsvWriters> {
        std::fs::create_dir_all(dir)?;
        let mut timings = BufWriter::new(File::create(dir.join("timings.csv"))?);
        let mut diagnostics = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
        writeln!(timings, "{TIMINGS_HEADER}")?;
        writeln!(diagnostics, "{DIAGNOSTICS_HEADER}")?;
        timings.flush()?;
        diagnostics.flush()?;
        Ok(CsvWriters { timings, diagnostics })
    }

    pub fn append(&mut self, t: &StepTimings, d: &Diagnostics) -> Result<()> {
        writeln!(self.timings, "{}", t.csv_row())?;
        writeln!(self.diagnostics, "{}", d.csv_row())?;
        self.timings.flush()?;
        self.diagnostics.flush()?;
        Ok(())
    }
}

pub fn write_particles(path: &Path, recs: &[ParticleRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,x,y,z,vx,vy,vz")?;
    for r in recs {
        writeln!(w, "{},{:e},{:e},{:e},{:e},{:e},{:e}", r.id, r.pos[0], r.pos[1], r.pos[2], r.vel[0], r.vel[1], r.vel[2])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_gives_header_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = CsvWriters::create(dir.path()).unwrap();
        let t = StepTimings { step: 1, t: 2e-4, dt_f: 2e-4, n_substeps: 249, w_total: 0.5, w_fluid: 0.1, ..Default::default() };
        w.append(&t, &Diagnostics { step: 1, n_particles: 10, ..Default::default() }).unwrap();
        let text = std::fs::read_to_string(dir.path().join("timings.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], TIMINGS_HEADER);
        let cols: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 13);
        assert!(cols.iter().all(|c| c.is_finite()));
        assert_eq!(cols[3], 249.0);
        let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(diag.lines().next().unwrap(), DIAGNOSTICS_HEADER);
        assert_eq!(diag.lines().nth(1).unwrap().split(',').count(), 9);
    }
}

//! The coupled time-step loop: deposit, fluid step, particle sub-steps.

pub mod output;
pub mod seed;

use std::path::PathBuf;
use std::time::Instant;

pub use output::{Diagnostics, StepTimings, DIAGNOSTICS_HEADER, TIMINGS_HEADER};
pub use seed::seed_bed;

use crate::config::{FluidProps, ParticleProps, SimConfig};
use crate::coupling::{deposit_to_grid, drag_sample, interpolate_gas};
use crate::decomp::ghosts::refresh_ghosts;
use crate::decomp::wire::{decode_particles, encode_particles};
use crate::decomp::{decompose, exchange_ghosts, redistribute, run_ranks, sfc_assign, BoxDecomposition, Comm, GhostPlan};
use crate::dem::{advance_particles, AtsController, ContactParams, DemCounters, DemState, DemTimers, ParticleEnv, StepMode, Walls};
use crate::error::{Error, Result};
use crate::fluid::{advance_fluid, fluid_dt, FluidState, ProjectionReport};
use crate::particles::{ParticleRecord, ParticleStore};
use crate::vec3::{dot, Vec3};

/// Where run artifacts go.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `timings.csv` and `diagnostics.csv`; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Also write the final particle states as `particles.csv`.
    pub write_particles: bool,
}

/// One rank's share of the simulation.
#[derive(Clone, Debug)]
pub struct RankSim {
    pub cfg: SimConfig,
    pub decomp: BoxDecomposition,
    pub store: ParticleStore,
    pub fluid: FluidState,
    pub dem: DemState,
    pub ats: Option<AtsController>,
    pub ghosts: GhostPlan,
    pub t: f64,
    pub step: usize,
    pub dt_fixed: f64,
}

/// Everything one fluid step produced, identical on every rank.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub timings: StepTimings,
    pub diagnostics: Diagnostics,
    pub projection: ProjectionReport,
}

impl RankSim {
    /// Seeds the bed, keeps the particles in this rank's boxes and sets the
    /// gas at rest.
    pub fn new(cfg: &SimConfig, comm: &mut Comm) -> Result<RankSim> {
        cfg.validate()?;
        let rank = comm.rank();
        let d = decompose(&cfg.domain, cfg.tiling)?;
        let owner = sfc_assign(&d, comm.size())?;
        let decomp = d.with_owners(owner, comm.size());
        let mut store = seed_bed(cfg)?;
        let keep: Vec<bool> = store.pos.iter().map(|&x| decomp.owner_of_pos(x) == rank).collect();
        store.retain_owned(|i| keep[i]);
        let fluid = FluidState::new(&decomp, rank, cfg.wall_bc);
        let p = &cfg.particles;
        let r = p.radius();
        let params = ContactParams::from_props(p)?;
        let walls = cfg.walls.then(|| Walls::of(&cfg.domain));
        // the ghost layer is one cell wide; a multi-rank skin of r keeps
        // every pair that can touch before the next rebuild inside it
        let skin = if comm.size() > 1 { r } else { 2.0 * r };
        let dem = DemState::new(params, walls, 6.0 * r, skin, cfg.rebuild_interval, r);
        let dt_fixed = cfg.fixed_substep()?;
        let ats = if cfg.ats {
            Some(AtsController::new(cfg.ats_tol, cfg.ats_dt_min, cfg.ats_dt_max, cfg.ats_dt_init.unwrap_or(dt_fixed))?)
        } else {
            None
        };
        let mut sim = RankSim { cfg: cfg.clone(), decomp, store, fluid, dem, ats, ghosts: GhostPlan::default(), t: 0.0, step: 0, dt_fixed };
        sim.fluid.fill_velocity_halos(comm)?;
        sim.sync(comm, f64::INFINITY)?;
        Ok(sim)
    }

    /// Migrates particles to their box owners (dropping those above `top`),
    /// exchanges ghosts and rebuilds the neighbour list.
    fn sync(&mut self, comm: &mut Comm, top: f64) -> Result<()> {
        let t = Instant::now();
        redistribute(&mut self.store, &self.decomp, comm, &self.cfg.particles, top, Some(&mut self.dem.contacts))?;
        let t1 = Instant::now();
        self.dem.timers.redist += (t1 - t).as_secs_f64();
        self.ghosts = exchange_ghosts(&mut self.store, &self.decomp, comm, &self.cfg.particles)?;
        self.dem.timers.ghost += t1.elapsed().as_secs_f64();
        self.dem.rebuild(&self.store);
        Ok(())
    }

    /// Superficial inlet velocity at time `t`, ramped linearly from rest.
    pub fn inlet_at(&self, t: f64) -> f64 {
        let u = self.cfg.fluid.inlet_velocity;
        if self.cfg.inlet_ramp > 0.0 {
            u * (t / self.cfg.inlet_ramp).min(1.0)
        } else {
            u
        }
    }

    /// One coupled step.
    pub fn advance(&mut self, comm: &mut Comm) -> Result<StepRecord> {
        let (step, t0) = (self.step, self.t);
        self.advance_inner(comm).map_err(|e| match e {
            e @ Error::PeerAbort(_) => e,
            e => Error::AtStep { step, t: t0, source: Box::new(e) },
        })
    }

    fn advance_inner(&mut self, comm: &mut Comm) -> Result<StepRecord> {
        let start = Instant::now();
        let timers0 = self.dem.timers;
        self.sync(comm, self.cfg.domain.height)?;

        let t = Instant::now();
        deposit_to_grid(&self.store, &self.decomp, &mut self.fluid, &self.cfg.fluid, &self.cfg.particles, comm)?;
        let w_deposit = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let dt_f = fluid_dt(&self.fluid, &self.cfg, comm)?;
        let inlet = self.inlet_at(self.t + dt_f);
        let projection = advance_fluid(
            &mut self.fluid,
            &self.cfg.fluid,
            inlet,
            dt_f,
            self.cfg.poisson_tol,
            self.cfg.poisson_max_iters,
            comm,
        )?;
        let w_fluid = t.elapsed().as_secs_f64();

        let mut env = RankEnv {
            comm,
            decomp: &self.decomp,
            fluid: &self.fluid,
            ghosts: &mut self.ghosts,
            fprops: &self.cfg.fluid,
            pprops: &self.cfg.particles,
            gravity: self.cfg.domain.gravity,
            top: self.cfg.domain.height,
        };
        let mode = match &mut self.ats {
            Some(c) => StepMode::Adaptive(c),
            None => StepMode::Fixed(self.dt_fixed),
        };
        let n = advance_particles(&mut self.dem, &mut self.store, &mut env, dt_f, mode)?;
        self.t += dt_f;
        self.step += 1;

        let dt = delta(&self.dem.timers, &timers0);
        let mut timings = StepTimings {
            step: self.step,
            t: self.t,
            dt_f,
            n_substeps: n,
            w_fluid,
            w_drag: dt.drag,
            w_neighbor: dt.neighbor,
            w_collide: dt.collide,
            w_integrate: dt.integrate,
            w_ghost: dt.ghost,
            w_redist: dt.redist,
            w_deposit,
            w_total: start.elapsed().as_secs_f64(),
        };
        timings.max_over_ranks(comm)?;
        let diagnostics = self.diagnostics(comm)?;
        Ok(StepRecord { timings, diagnostics, projection })
    }

    /// Global particle statistics after the current step.
    pub fn diagnostics(&self, comm: &mut Comm) -> Result<Diagnostics> {
        let s = &self.store;
        let mut parts: Vec<(usize, [f64; 4])> = Vec::new();
        let mut max_speed: f64 = 0.0;
        for i in 0..s.n_owned {
            let b = self.decomp.box_of_pos(s.pos[i]);
            let speed = dot(s.vel[i], s.vel[i]).sqrt();
            max_speed = max_speed.max(speed);
            let inertia = 0.4 * s.mass[i] * s.radius[i] * s.radius[i];
            let ke = 0.5 * s.mass[i] * dot(s.vel[i], s.vel[i]) + 0.5 * inertia * dot(s.omega[i], s.omega[i]);
            let v = [speed, ke, s.pos[i][1], 1.0];
            match parts.iter_mut().find(|p| p.0 == b) {
                Some(p) => (0..4).for_each(|k| p.1[k] += v[k]),
                None => parts.push((b, v)),
            }
        }
        let [speed, ke, y, count] = comm.box_ordered_sums(&parts)?;
        let max_speed = comm.all_max(max_speed)?;
        let overlaps = comm.all_sum_u64(self.dem.counters.overlap_events)?;
        let violations = comm.all_sum_u64(self.dem.counters.tol_violations)?;
        let n = count.round() as usize;
        let mean = |x: f64| if n > 0 { x / n as f64 } else { 0.0 };
        Ok(Diagnostics {
            step: self.step,
            t: self.t,
            mean_speed: mean(speed),
            max_speed,
            ke_total: ke,
            bed_height: 2.0 * mean(y),
            n_particles: n,
            n_overlap_events: overlaps,
            n_tol_violations: violations,
        })
    }

    /// Owned particle states of every rank, sorted by id.
    pub fn gather_particles(&self, comm: &mut Comm) -> Result<Vec<ParticleRecord>> {
        let me = comm.rank();
        let all = comm.allgather(crate::decomp::comm::tags::GATHER, encode_particles(&self.store.owned_records()))?;
        let mut out = Vec::new();
        for (src, bytes) in all.iter().enumerate() {
            out.extend(decode_particles(bytes, src, me)?);
        }
        out.sort_by_key(|r| r.id);
        Ok(out)
    }

    /// Event counters summed over ranks (penetration: maximum).
    pub fn global_counters(&self, comm: &mut Comm) -> Result<DemCounters> {
        let c = &self.dem.counters;
        Ok(DemCounters {
            substeps: comm.all_max(c.substeps as f64)? as u64,
            rejected: comm.all_max(c.rejected as f64)? as u64,
            force_evals: comm.all_max(c.force_evals as f64)? as u64,
            overlap_events: comm.all_sum_u64(c.overlap_events)?,
            tol_violations: comm.all_sum_u64(c.tol_violations)?,
            rebuilds: comm.all_max(c.rebuilds as f64)? as u64,
            max_wall_penetration: comm.all_max(c.max_wall_penetration)?,
        })
    }
}

fn delta(a: &DemTimers, b: &DemTimers) -> DemTimers {
    DemTimers {
        drag: a.drag - b.drag,
        neighbor: a.neighbor - b.neighbor,
        collide: a.collide - b.collide,
        integrate: a.integrate - b.integrate,
        ghost: a.ghost - b.ghost,
        redist: a.redist - b.redist,
    }
}

/// Particle surroundings on one rank: gas drag from the current fluid
/// field, gravity, and the ghost/migration machinery.
struct RankEnv<'a> {
    comm: &'a mut Comm,
    decomp: &'a BoxDecomposition,
    fluid: &'a FluidState,
    ghosts: &'a mut GhostPlan,
    fprops: &'a FluidProps,
    pprops: &'a ParticleProps,
    gravity: Vec3,
    top: f64,
}

impl ParticleEnv for RankEnv<'_> {
    fn body_forces(&mut self, store: &ParticleStore, force: &mut [Vec3]) -> Result<()> {
        for (i, f) in force.iter_mut().enumerate().take(store.n_owned) {
            let m = store.mass[i];
            let pos = store.pos[i];
            for a in 0..3 {
                f[a] += m * self.gravity[a];
            }
            // above the open top there is no gas to drag on
            if pos[1] >= self.top {
                continue;
            }
            let outside = || Error::numerical(format!("particle {} at {pos:?} lies outside the local grid", store.id[i]));
            let (u, eps) = interpolate_gas(self.fluid, self.decomp, pos).ok_or_else(outside)?;
            let (s, _) = drag_sample(u, eps, store.vel[i], self.fprops, self.pprops);
            for a in 0..3 {
                f[a] += s.force[a];
            }
        }
        Ok(())
    }

    fn refresh_ghosts(&mut self, dem: &mut DemState, store: &mut ParticleStore) -> Result<()> {
        let t = Instant::now();
        refresh_ghosts(store, self.ghosts, self.comm)?;
        dem.timers.ghost += t.elapsed().as_secs_f64();
        Ok(())
    }

    fn maintain(&mut self, dem: &mut DemState, store: &mut ParticleStore) -> Result<()> {
        let local = dem.needs_rebuild(store);
        if !self.comm.all_or(local)? {
            return self.refresh_ghosts(dem, store);
        }
        let t = Instant::now();
        redistribute(store, self.decomp, self.comm, self.pprops, f64::INFINITY, Some(&mut dem.contacts))?;
        let t1 = Instant::now();
        dem.timers.redist += (t1 - t).as_secs_f64();
        *self.ghosts = exchange_ghosts(store, self.decomp, self.comm, self.pprops)?;
        dem.timers.ghost += t1.elapsed().as_secs_f64();
        dem.rebuild(store);
        Ok(())
    }

    fn global_max(&mut self, x: f64) -> Result<f64> {
        self.comm.all_max(x)
    }
}

/// Outcome of a full run.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub timings: Vec<StepTimings>,
    pub diagnostics: Vec<Diagnostics>,
    pub projections: Vec<ProjectionReport>,
    pub substeps: u64,
    pub counters: DemCounters,
    /// Final particle states, sorted by id.
    pub particles: Vec<ParticleRecord>,
    pub wall_s: f64,
}

/// Runs one rank's loop to `t_end`; every rank returns the same report.
pub fn run_rank(cfg: &SimConfig, opts: &RunOptions, comm: &mut Comm) -> Result<RunReport> {
    let start = Instant::now();
    let mut sim = RankSim::new(cfg, comm)?;
    let mut writer = match (&opts.out_dir, comm.rank()) {
        (Some(dir), 0) => Some(output::CsvWriters::create(dir)?),
        _ => None,
    };
    let mut report = RunReport::default();
    // stop once t_end is reached to within a sliver of the last step
    while sim.t < cfg.t_end * (1.0 - 1e-12) {
        let rec = sim.advance(comm)?;
        if let Some(w) = writer.as_mut() {
            w.append(&rec.timings, &rec.diagnostics)?;
        }
        report.substeps += rec.timings.n_substeps as u64;
        report.timings.push(rec.timings);
        report.diagnostics.push(rec.diagnostics);
        report.projections.push(rec.projection);
    }
    report.counters = sim.global_counters(comm)?;
    report.particles = sim.gather_particles(comm)?;
    if let (Some(dir), 0, true) = (&opts.out_dir, comm.rank(), opts.write_particles) {
        output::write_particles(&dir.join("particles.csv"), &report.particles)?;
    }
    report.wall_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the configured simulation on `cfg.ranks` in-process ranks.
pub fn run(cfg: &SimConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let mut reports = run_ranks(cfg.ranks, |comm| run_rank(cfg, opts, comm))?;
    Ok(reports.swap_remove(0))
}

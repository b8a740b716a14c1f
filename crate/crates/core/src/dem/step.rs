//! Particle sub-stepping over one fluid step, with fixed or adaptive steps.

use std::time::Instant;

use crate::dem::ats::{AtsController, AtsOutcome};
use crate::dem::neighbor::{build_neighbor_list, needs_rebuild, NeighborList};
use crate::dem::{collision_forces_with, integrate_explicit, update_contacts, wall_forces, ContactMap, ContactParams, PairScratch, Touch, Walls};
use crate::error::Result;
use crate::particles::{ParticleStore, StateSnapshot};
use crate::vec3::{Vec3, ZERO};

/// Event counters accumulated over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DemCounters {
    pub substeps: u64,
    pub rejected: u64,
    pub force_evals: u64,
    pub overlap_events: u64,
    pub tol_violations: u64,
    pub rebuilds: u64,
    pub max_wall_penetration: f64,
}

/// Wall-clock seconds spent per particle phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DemTimers {
    pub drag: f64,
    pub neighbor: f64,
    pub collide: f64,
    pub integrate: f64,
    pub ghost: f64,
    pub redist: f64,
}

/// What the sub-stepping loop needs from its surroundings.
pub trait ParticleEnv {
    /// Adds non-contact forces (drag, gravity) on owned particles.
    fn body_forces(&mut self, store: &ParticleStore, force: &mut [Vec3]) -> Result<()>;
    /// Copies owners' current state onto ghost particles.
    fn refresh_ghosts(&mut self, dem: &mut DemState, store: &mut ParticleStore) -> Result<()>;
    /// After an accepted substep: migrates particles, refreshes ghosts and
    /// rebuilds the neighbour list where needed.
    fn maintain(&mut self, dem: &mut DemState, store: &mut ParticleStore) -> Result<()>;
    /// Maximum over all ranks.
    fn global_max(&mut self, x: f64) -> Result<f64>;
}

/// Rank-local particle solver state.
#[derive(Clone, Debug)]
pub struct DemState {
    pub params: ContactParams,
    pub walls: Option<Walls>,
    pub list: NeighborList,
    pub contacts: ContactMap,
    pub cutoff: f64,
    pub skin: f64,
    pub rebuild_interval: usize,
    /// Largest displacement allowed per substep.
    pub max_step: f64,
    pub counters: DemCounters,
    pub timers: DemTimers,
    force: Vec<Vec3>,
    torque: Vec<Vec3>,
    touches: Vec<Touch>,
    pair_scratch: PairScratch,
    /// Forces in `force`/`torque` are those of the current state, valid
    /// while the rebuild counter equals the stamp.
    cached: Option<(u64, (u64, f64))>,
}

impl DemState {
    pub fn new(params: ContactParams, walls: Option<Walls>, cutoff: f64, skin: f64, rebuild_interval: usize, max_step: f64) -> Self {
        DemState {
            params,
            walls,
            list: NeighborList::default(),
            contacts: ContactMap::new(),
            cutoff,
            skin,
            rebuild_interval: rebuild_interval.max(1),
            max_step,
            counters: DemCounters::default(),
            timers: DemTimers::default(),
            force: Vec::new(),
            torque: Vec::new(),
            touches: Vec::new(),
            pair_scratch: PairScratch::default(),
            cached: None,
        }
    }

    pub fn rebuild(&mut self, store: &ParticleStore) {
        let t = Instant::now();
        self.list = build_neighbor_list(store, self.cutoff);
        self.counters.rebuilds += 1;
        self.timers.neighbor += t.elapsed().as_secs_f64();
    }

    pub fn needs_rebuild(&self, store: &ParticleStore) -> bool {
        needs_rebuild(&self.list, store, self.skin, self.rebuild_interval)
    }

    /// Total force and torque on owned particles at the current state.
    fn compute_forces(&mut self, store: &ParticleStore, env: &mut dyn ParticleEnv) -> Result<(u64, f64)> {
        let n = store.n_owned;
        self.force.clear();
        self.force.resize(n, ZERO);
        self.torque.clear();
        self.torque.resize(n, ZERO);
        let t = Instant::now();
        env.body_forces(store, &mut self.force)?;
        let t1 = Instant::now();
        self.timers.drag += (t1 - t).as_secs_f64();
        let stats = collision_forces_with(
            store,
            &self.list,
            &self.params,
            &self.contacts,
            &mut self.force,
            &mut self.torque,
            &mut self.touches,
            &mut self.pair_scratch,
        );
        let pen = match &self.walls {
            Some(w) => wall_forces(store, w, &self.params, &mut self.force, &mut self.torque),
            None => 0.0,
        };
        self.timers.collide += t1.elapsed().as_secs_f64();
        self.counters.force_evals += 1;
        Ok((stats.overlap_events, pen))
    }

    fn integrate(&mut self, store: &mut ParticleStore, dt: f64) -> Result<()> {
        let t = Instant::now();
        let r = integrate_explicit(store, &self.force, &self.torque, dt, self.max_step);
        self.timers.integrate += t.elapsed().as_secs_f64();
        r
    }

    fn advance_history(&mut self, dt: f64) {
        if self.params.tangential() {
            update_contacts(&mut self.contacts, &self.touches, &self.params, dt);
        }
    }

    fn record(&mut self, overlap: u64, pen: f64) {
        self.counters.overlap_events += overlap;
        self.counters.max_wall_penetration = self.counters.max_wall_penetration.max(pen);
    }
}

/// Particle step policy for one fluid step.
pub enum StepMode<'a> {
    Fixed(f64),
    Adaptive(&'a mut AtsController),
}

fn fixed_substep(dem: &mut DemState, store: &mut ParticleStore, env: &mut dyn ParticleEnv, dt: f64) -> Result<()> {
    dem.cached = None;
    let (ov, pen) = dem.compute_forces(store, env)?;
    dem.record(ov, pen);
    dem.integrate(store, dt)?;
    dem.advance_history(dt);
    dem.counters.substeps += 1;
    dem.list.age += 1;
    env.maintain(dem, store)
}

/// One step-doubling attempt of size `dt` from the current state: a full
/// step and two half steps, both starting with the forces at the current
/// state. The error is the largest velocity component difference between
/// the two, or between the second half step's velocity change and the one
/// the end-state forces would give, whichever is larger, over all owned
/// particles on all ranks. The second term sees contacts that open inside
/// the step. An accepted attempt keeps the two-half-step state and its
/// end-state forces for the next attempt; a rejected one restores the
/// starting state.
pub fn ats_substep(
    dem: &mut DemState,
    store: &mut ParticleStore,
    env: &mut dyn ParticleEnv,
    ctrl: &AtsController,
    dt: f64,
) -> Result<AtsOutcome> {
    let mut snap = StateSnapshot::default();
    store.snapshot(&mut snap);
    let contacts0 = if dem.params.tangential() { Some(dem.contacts.clone()) } else { None };
    let (ov, pen) = match dem.cached {
        Some((stamp, stats)) if stamp == dem.counters.rebuilds && dem.force.len() == store.n_owned => stats,
        _ => dem.compute_forces(store, env)?,
    };
    let (f0, t0, touches0) = (dem.force.clone(), dem.torque.clone(), dem.touches.clone());

    dem.integrate(store, dt)?;
    let v_full: Vec<Vec3> = store.vel[..store.n_owned].to_vec();
    store.restore(&snap);

    dem.integrate(store, 0.5 * dt)?;
    dem.advance_history(0.5 * dt);
    env.refresh_ghosts(dem, store)?;
    dem.compute_forces(store, env)?;
    let f1 = dem.force.clone();
    dem.integrate(store, 0.5 * dt)?;
    dem.advance_history(0.5 * dt);
    env.refresh_ghosts(dem, store)?;
    let end_stats = dem.compute_forces(store, env)?;

    let mut err: f64 = 0.0;
    for i in 0..store.n_owned {
        let k = 0.5 * dt / store.mass[i];
        for a in 0..3 {
            err = err.max((v_full[i][a] - store.vel[i][a]).abs());
            err = err.max(k * (dem.force[i][a] - f1[i][a]).abs());
        }
    }
    let err = env.global_max(err)?;
    let out = ctrl.judge(err, dt);
    if out.accepted {
        dem.record(ov, pen);
        dem.counters.substeps += 1;
        dem.counters.tol_violations += u64::from(out.violation);
        dem.list.age += 1;
        dem.cached = Some((dem.counters.rebuilds, end_stats));
    } else {
        store.restore(&snap);
        if let Some(c) = contacts0 {
            dem.contacts = c;
        }
        dem.force = f0;
        dem.torque = t0;
        dem.touches = touches0;
        dem.counters.rejected += 1;
        dem.cached = Some((dem.counters.rebuilds, (ov, pen)));
    }
    Ok(out)
}

/// Advances owned particles by exactly `dt_f` and returns the number of
/// clock-advancing substeps taken. The last substep is clipped to land on
/// `dt_f`; an adaptive controller keeps its step size across calls.
pub fn advance_particles(
    dem: &mut DemState,
    store: &mut ParticleStore,
    env: &mut dyn ParticleEnv,
    dt_f: f64,
    mode: StepMode<'_>,
) -> Result<usize> {
    let mut n = 0;
    dem.cached = None;
    match mode {
        StepMode::Fixed(dt) => {
            let full = (dt_f / dt * (1.0 + 1e-12)).floor() as usize;
            for _ in 0..full {
                fixed_substep(dem, store, env, dt)?;
                n += 1;
            }
            let rem = dt_f - full as f64 * dt;
            if rem > 1e-9 * dt {
                fixed_substep(dem, store, env, rem)?;
                n += 1;
            }
        }
        StepMode::Adaptive(ctrl) => {
            let mut elapsed = 0.0;
            while dt_f - elapsed > 1e-12 * dt_f {
                let h = ctrl.dt.min(dt_f - elapsed);
                let clipped = h < ctrl.dt;
                let out = ats_substep(dem, store, env, ctrl, h)?;
                if out.accepted {
                    elapsed += h;
                    n += 1;
                    // a clipped step only shrinks the step size, it never resets it
                    ctrl.dt = if clipped && out.next_dt >= h { ctrl.dt } else { out.next_dt };
                    env.maintain(dem, store)?;
                } else {
                    ctrl.dt = out.next_dt;
                }
            }
        }
    }
    Ok(n)
}

/// Single-rank surroundings without a fluid: uniform gravity and an
/// optional linear drag `-c v`.
#[derive(Clone, Debug, Default)]
pub struct FreeEnv {
    pub gravity: Vec3,
    pub linear_drag: f64,
}

impl ParticleEnv for FreeEnv {
    fn body_forces(&mut self, store: &ParticleStore, force: &mut [Vec3]) -> Result<()> {
        for (i, f) in force.iter_mut().enumerate().take(store.n_owned) {
            let m = store.mass[i];
            let v = store.vel[i];
            for a in 0..3 {
                f[a] += m * self.gravity[a] - self.linear_drag * v[a];
            }
        }
        Ok(())
    }

    fn refresh_ghosts(&mut self, _dem: &mut DemState, _store: &mut ParticleStore) -> Result<()> {
        Ok(())
    }

    fn maintain(&mut self, dem: &mut DemState, store: &mut ParticleStore) -> Result<()> {
        if dem.needs_rebuild(store) {
            dem.rebuild(store);
        }
        Ok(())
    }

    fn global_max(&mut self, x: f64) -> Result<f64> {
        Ok(x)
    }
}

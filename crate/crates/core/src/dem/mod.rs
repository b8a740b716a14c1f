//! Soft-sphere contact forces, explicit particle integration and the
//! particle sub-stepping loop.
//!
//! Each pair force is evaluated once, oriented from the lower-id particle to
//! the higher, and each particle sums its contacts in ascending partner id,
//! so per-particle forces are bit-identical however particles are split
//! between owned and ghost segments.

pub mod ats;
pub mod neighbor;
pub mod step;

use std::collections::HashMap;

pub use ats::{AtsController, AtsOutcome};
pub use neighbor::{build_neighbor_list, needs_rebuild, NeighborList};
pub use step::{advance_particles, ats_substep, DemCounters, DemState, DemTimers, FreeEnv, ParticleEnv, StepMode};

use crate::config::{derived_particle_constants, dashpot_damping, DomainSpec, ParticleProps};
use crate::error::{Error, Result};
use crate::particles::ParticleStore;
use crate::vec3::{add, cross, dot, norm, scale, sub, Vec3, ZERO};

/// Accumulated tangential displacement per touching pair, keyed by
/// `(lower id, higher id)` and oriented from the lower-id particle.
pub type ContactMap = HashMap<(u64, u64), Vec3>;

#[derive(Clone, Debug, PartialEq)]
pub struct ContactParams {
    pub k_n: f64,
    pub gamma_n: f64,
    pub k_t: f64,
    pub gamma_t: f64,
    pub friction: f64,
    pub k_wall: f64,
    pub gamma_wall: f64,
    pub gamma_t_wall: f64,
}

impl ContactParams {
    pub fn from_props(p: &ParticleProps) -> Result<ContactParams> {
        let c = derived_particle_constants(p)?;
        let gamma_wall = dashpot_damping(p.spring_constant, c.mass, p.restitution_pw)?;
        Ok(ContactParams {
            k_n: p.spring_constant,
            gamma_n: c.damping,
            k_t: p.tangential_spring_factor * p.spring_constant,
            gamma_t: p.tangential_damping_factor * c.damping,
            friction: p.friction,
            k_wall: p.spring_constant,
            gamma_wall,
            gamma_t_wall: p.tangential_damping_factor * gamma_wall,
        })
    }

    pub fn tangential(&self) -> bool {
        self.friction > 0.0
    }
}

/// Walls on the four lateral faces and the floor; the top is open.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Walls {
    pub hi: [f64; 3],
}

impl Walls {
    pub fn of(domain: &DomainSpec) -> Walls {
        Walls { hi: domain.extent() }
    }
}

/// A touching pair seen during force evaluation, kept for the history update.
#[derive(Clone, Copy, Debug)]
pub struct Touch {
    pub key: (u64, u64),
    pub normal: Vec3,
    pub vt: Vec3,
    pub fn_mag: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CollisionStats {
    /// Pairs with overlap above half a radius (each pair counted on one rank).
    pub overlap_events: u64,
    /// Deepest wall penetration as a fraction of the radius.
    pub max_wall_penetration: f64,
}

/// Reusable per-evaluation buffers: the touching pairs' forces and, per
/// neighbor-list pair, its index among them (`u32::MAX` when not touching).
#[derive(Clone, Debug, Default)]
pub struct PairScratch {
    slot: Vec<u32>,
    forces: Vec<PairForce>,
}

#[derive(Clone, Copy, Debug)]
struct PairForce {
    /// Force on the lower-id particle.
    f: Vec3,
    /// `n x F_t` in the lower-id orientation; torque on either particle is
    /// its radius times this.
    c: Vec3,
}

/// Adds pair contact forces and torques to owned particles. `touches`
/// receives every touching pair when tangential forces are active.
pub fn collision_forces(
    store: &ParticleStore,
    list: &NeighborList,
    params: &ContactParams,
    contacts: &ContactMap,
    force: &mut [Vec3],
    torque: &mut [Vec3],
    touches: &mut Vec<Touch>,
) -> CollisionStats {
    collision_forces_with(store, list, params, contacts, force, torque, touches, &mut PairScratch::default())
}

/// [`collision_forces`] with a caller-owned per-pair scratch buffer.
#[allow(clippy::too_many_arguments)]
pub fn collision_forces_with(
    store: &ParticleStore,
    list: &NeighborList,
    params: &ContactParams,
    contacts: &ContactMap,
    force: &mut [Vec3],
    torque: &mut [Vec3],
    touches: &mut Vec<Touch>,
    scratch: &mut PairScratch,
) -> CollisionStats {
    let mut stats = CollisionStats::default();
    touches.clear();
    let PairScratch { slot, forces } = scratch;
    slot.clear();
    slot.resize(list.n_pairs(), u32::MAX);
    forces.clear();
    for k in 0..list.n_pairs() {
        let (a, b) = (list.pair_owner[k], list.partners[k]);
        let (i, j) = if store.id[a] < store.id[b] { (a, b) } else { (b, a) };
        let (ri, rj) = (store.radius[i], store.radius[j]);
        let d = sub(store.pos[j], store.pos[i]);
        let dist = norm(d);
        let delta = ri + rj - dist;
        if delta <= 0.0 || dist == 0.0 {
            continue;
        }
        if delta > 0.5 * ri.min(rj) && (b < store.n_owned || store.id[a] < store.id[b]) {
            stats.overlap_events += 1;
        }
        let n = scale(d, 1.0 / dist);
        let w = add(scale(store.omega[i], ri), scale(store.omega[j], rj));
        let vrel = sub(sub(store.vel[j], store.vel[i]), cross(w, n));
        let vn = dot(vrel, n);
        // force on j along n; on i opposite
        let fn_mag = params.k_n * delta - params.gamma_n * vn;
        let f_on_i = scale(n, -fn_mag);
        let mut f = f_on_i;
        let mut c = ZERO;
        if params.tangential() {
            let vt = sub(vrel, scale(n, vn));
            let xi = contacts.get(&(store.id[i], store.id[j])).copied().unwrap_or(ZERO);
            let xi = sub(xi, scale(n, dot(xi, n)));
            // tangential force on j, opposing slip of j relative to i
            let mut ft = sub(scale(xi, -params.k_t), scale(vt, params.gamma_t));
            let cap = params.friction * fn_mag.abs();
            let m = norm(ft);
            if m > cap {
                ft = if m > 0.0 { scale(ft, cap / m) } else { ZERO };
            }
            let ft_i = scale(ft, -1.0);
            f = add(f, ft_i);
            c = cross(n, ft_i);
            touches.push(Touch { key: (store.id[i], store.id[j]), normal: n, vt, fn_mag });
        }
        slot[k] = forces.len() as u32;
        forces.push(PairForce { f, c });
    }
    for p in 0..list.n_owned {
        let rp = store.radius[p];
        for &(k, q) in list.incident(p) {
            if let Some(&pf) = forces.get(slot[k] as usize) {
                let lower = store.id[p] < store.id[q];
                let f = if lower { pf.f } else { scale(pf.f, -1.0) };
                force[p] = add(force[p], f);
                if params.tangential() {
                    torque[p] = add(torque[p], scale(pf.c, rp));
                }
            }
        }
    }
    stats
}

/// Advances the tangential history of every touching pair by `dt`; pairs
/// that stopped touching are dropped.
pub fn update_contacts(contacts: &mut ContactMap, touches: &[Touch], params: &ContactParams, dt: f64) {
    let mut next = ContactMap::with_capacity(touches.len());
    for t in touches {
        let xi = contacts.get(&t.key).copied().unwrap_or(ZERO);
        let xi = sub(xi, scale(t.normal, dot(xi, t.normal)));
        let mut xi = add(xi, scale(t.vt, dt));
        // Coulomb slip: the spring cannot stretch past the friction limit
        let cap = params.friction * t.fn_mag.abs();
        let m = norm(xi) * params.k_t;
        if m > cap && m > 0.0 {
            xi = scale(xi, cap / m);
        }
        next.insert(t.key, xi);
    }
    *contacts = next;
}

/// Adds wall contact forces (floor and lateral walls) to owned particles.
pub fn wall_forces(
    store: &ParticleStore,
    walls: &Walls,
    params: &ContactParams,
    force: &mut [Vec3],
    torque: &mut [Vec3],
) -> f64 {
    let mut max_pen: f64 = 0.0;
    for i in 0..store.n_owned {
        let r = store.radius[i];
        let x = store.pos[i];
        for a in 0..3 {
            for hi in [false, true] {
                if a == 1 && hi {
                    continue;
                }
                let dist = if hi { walls.hi[a] - x[a] } else { x[a] };
                let delta = r - dist;
                if delta <= 0.0 {
                    continue;
                }
                max_pen = max_pen.max(delta / r);
                let mut n = ZERO;
                n[a] = if hi { -1.0 } else { 1.0 };
                let v = store.vel[i];
                let vn = dot(v, n);
                let fn_mag = params.k_wall * delta - params.gamma_wall * vn;
                let mut f = scale(n, fn_mag);
                if params.tangential() {
                    let arm = scale(n, -r);
                    let vc = add(v, cross(store.omega[i], arm));
                    let vt = sub(vc, scale(n, dot(vc, n)));
                    let mut ft = scale(vt, -params.gamma_t_wall);
                    let cap = params.friction * fn_mag.abs();
                    let m = norm(ft);
                    if m > cap && m > 0.0 {
                        ft = scale(ft, cap / m);
                    }
                    f = add(f, ft);
                    torque[i] = add(torque[i], cross(arm, ft));
                }
                force[i] = add(force[i], f);
            }
        }
    }
    max_pen
}

/// Symplectic Euler on owned particles: v += F/m dt, x += v dt,
/// w += T/I dt. Fails on a non-finite force or a displacement larger than
/// `max_step` in one step.
pub fn integrate_explicit(store: &mut ParticleStore, force: &[Vec3], torque: &[Vec3], dt: f64, max_step: f64) -> Result<()> {
    for i in 0..store.n_owned {
        let f = force[i];
        if !crate::vec3::is_finite(f) || !crate::vec3::is_finite(torque[i]) {
            return Err(Error::numerical(format!("non-finite force on particle {}: {f:?}", store.id[i])));
        }
        let m = store.mass[i];
        let inertia = 0.4 * m * store.radius[i] * store.radius[i];
        let mut v = store.vel[i];
        let mut x = store.pos[i];
        let mut w = store.omega[i];
        for a in 0..3 {
            v[a] += f[a] / m * dt;
            let step = v[a] * dt;
            if !(step.abs() <= max_step) {
                return Err(Error::numerical(format!(
                    "particle {} moved {step:e} m in one substep (limit {max_step:e} m)",
                    store.id[i]
                )));
            }
            x[a] += step;
            w[a] += torque[i][a] / inertia * dt;
        }
        store.vel[i] = v;
        store.pos[i] = x;
        store.omega[i] = w;
    }
    Ok(())
}

//! Structure-of-arrays particle storage split into owned and ghost segments.

use crate::config::ParticleProps;
use crate::vec3::{Vec3, ZERO};

/// Kinematic state of one particle as it travels between ranks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleRecord {
    pub id: u64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub omega: Vec3,
}

/// Per-rank particle arrays. Indices `0..n_owned` are owned particles,
/// `n_owned..len()` are read-only ghost copies of particles owned elsewhere.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleStore {
    pub id: Vec<u64>,
    pub pos: Vec<Vec3>,
    pub vel: Vec<Vec3>,
    pub omega: Vec<Vec3>,
    pub radius: Vec<f64>,
    pub mass: Vec<f64>,
    pub n_owned: usize,
}

/// Saved kinematic state used to roll back rejected adaptive steps.
#[derive(Clone, Debug, Default)]
pub struct StateSnapshot {
    pos: Vec<Vec3>,
    vel: Vec<Vec3>,
    omega: Vec<Vec3>,
}

impl ParticleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id.is_empty()
    }

    pub fn n_ghosts(&self) -> usize {
        self.len() - self.n_owned
    }

    pub fn is_ghost(&self, i: usize) -> bool {
        i >= self.n_owned
    }

    /// Appends an owned particle at rest. Panics if ghosts are present.
    pub fn push_owned(&mut self, id: u64, pos: Vec3, props: &ParticleProps) {
        self.push_owned_record(&ParticleRecord { id, pos, vel: ZERO, omega: ZERO }, props);
    }

    pub fn push_owned_record(&mut self, rec: &ParticleRecord, props: &ParticleProps) {
        assert_eq!(self.n_ghosts(), 0, "owned particles must precede ghosts");
        self.push_raw(rec, props);
        self.n_owned += 1;
    }

    pub fn push_ghost(&mut self, rec: &ParticleRecord, props: &ParticleProps) {
        self.push_raw(rec, props);
    }

    fn push_raw(&mut self, rec: &ParticleRecord, props: &ParticleProps) {
        self.id.push(rec.id);
        self.pos.push(rec.pos);
        self.vel.push(rec.vel);
        self.omega.push(rec.omega);
        self.radius.push(props.radius());
        self.mass.push(props.mass());
    }

    pub fn record(&self, i: usize) -> ParticleRecord {
        ParticleRecord { id: self.id[i], pos: self.pos[i], vel: self.vel[i], omega: self.omega[i] }
    }

    pub fn set_state(&mut self, i: usize, rec: &ParticleRecord) {
        debug_assert_eq!(self.id[i], rec.id);
        self.pos[i] = rec.pos;
        self.vel[i] = rec.vel;
        self.omega[i] = rec.omega;
    }

    pub fn clear_ghosts(&mut self) {
        let n = self.n_owned;
        self.id.truncate(n);
        self.pos.truncate(n);
        self.vel.truncate(n);
        self.omega.truncate(n);
        self.radius.truncate(n);
        self.mass.truncate(n);
    }

    /// Keeps owned particles for which `keep` returns true; drops all ghosts.
    pub fn retain_owned(&mut self, mut keep: impl FnMut(usize) -> bool) {
        self.clear_ghosts();
        let mut w = 0;
        for r in 0..self.n_owned {
            if keep(r) {
                if w != r {
                    self.id[w] = self.id[r];
                    self.pos[w] = self.pos[r];
                    self.vel[w] = self.vel[r];
                    self.omega[w] = self.omega[r];
                    self.radius[w] = self.radius[r];
                    self.mass[w] = self.mass[r];
                }
                w += 1;
            }
        }
        self.n_owned = w;
        self.clear_ghosts();
    }

    /// Sorts owned particles by global id; drops all ghosts.
    pub fn sort_owned_by_id(&mut self) {
        self.clear_ghosts();
        if self.id.windows(2).all(|w| w[0] < w[1]) {
            return;
        }
        let mut order: Vec<usize> = (0..self.n_owned).collect();
        order.sort_unstable_by_key(|&i| self.id[i]);
        self.id = order.iter().map(|&i| self.id[i]).collect();
        self.pos = order.iter().map(|&i| self.pos[i]).collect();
        self.vel = order.iter().map(|&i| self.vel[i]).collect();
        self.omega = order.iter().map(|&i| self.omega[i]).collect();
        self.radius = order.iter().map(|&i| self.radius[i]).collect();
        self.mass = order.iter().map(|&i| self.mass[i]).collect();
    }

    pub fn snapshot(&self, snap: &mut StateSnapshot) {
        snap.pos.clone_from(&self.pos);
        snap.vel.clone_from(&self.vel);
        snap.omega.clone_from(&self.omega);
    }

    pub fn restore(&mut self, snap: &StateSnapshot) {
        self.pos.copy_from_slice(&snap.pos);
        self.vel.copy_from_slice(&snap.vel);
        self.omega.copy_from_slice(&snap.omega);
    }

    pub fn owned_records(&self) -> Vec<ParticleRecord> {
        (0..self.n_owned).map(|i| self.record(i)).collect()
    }

    /// Total momentum of owned particles.
    pub fn momentum(&self) -> Vec3 {
        let mut p = ZERO;
        for i in 0..self.n_owned {
            for a in 0..3 {
                p[a] += self.mass[i] * self.vel[i][a];
            }
        }
        p
    }

    pub fn kinetic_energy(&self) -> f64 {
        (0..self.n_owned)
            .map(|i| {
                let v = self.vel[i];
                let w = self.omega[i];
                let inertia = 0.4 * self.mass[i] * self.radius[i] * self.radius[i];
                0.5 * self.mass[i] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                    + 0.5 * inertia * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
            })
            .sum()
    }
}

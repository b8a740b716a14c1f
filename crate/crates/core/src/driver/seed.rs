//! Initial particle bed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{SimConfig, MAX_SEED_FRACTION};
use crate::error::{Error, Result};
use crate::particles::ParticleStore;

/// Fills the column from the floor up with particles on a cubic lattice of
/// spacing `lattice_spacing * d`, each displaced by a random jitter of at
/// most a quarter of the lattice gap per axis. Ids follow the fill order
/// (layer by layer, then x, then z). Deterministic in the seed.
pub fn seed_bed(cfg: &SimConfig) -> Result<ParticleStore> {
    let n = cfg.target_particle_count();
    let p = &cfg.particles;
    let d = p.diameter;
    let ext = cfg.domain.extent();
    let fraction = n as f64 * p.volume() / cfg.domain.volume();
    if fraction > MAX_SEED_FRACTION {
        return Err(Error::config(format!("initial solids fraction {fraction:.3} exceeds {MAX_SEED_FRACTION}")));
    }
    let s = cfg.lattice_spacing * d;
    let per: [usize; 3] = std::array::from_fn(|a| (ext[a] / s).floor() as usize);
    let layer = per[0] * per[2];
    if n > 0 && (layer == 0 || n.div_ceil(layer) > per[1]) {
        return Err(Error::config(format!(
            "{n} particles do not fit on a lattice of spacing {s:e} m in the domain"
        )));
    }
    let jitter = 0.25 * (s - d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParticleStore::new();
    let mut id = 0u64;
    'fill: for j in 0..per[1] {
        for i in 0..per[0] {
            for k in 0..per[2] {
                if id as usize == n {
                    break 'fill;
                }
                let mut x = [(i as f64 + 0.5) * s, (j as f64 + 0.5) * s, (k as f64 + 0.5) * s];
                for c in &mut x {
                    if jitter > 0.0 {
                        *c += rng.gen_range(-jitter..=jitter);
                    }
                }
                store.push_owned(id, x, p);
                id += 1;
            }
        }
    }
    Ok(store)
}

//! Fluid-particle exchange: trilinear sampling of the gas state at particle
//! centres, the BVK drag closure, and cloud-in-cell deposition of solids
//! volume and drag terms onto cell centres.
//!
//! Deposition runs per box: each owned particle writes into the patch of
//! the box that contains it, in id order, reaching at most one cell into the
//! patch halo. Halo partials are then summed into their owning interiors in
//! ascending box order, so the deposited fields do not depend on the rank
//! count. Weight that falls outside a wall is folded back into the mirror
//! cell, keeping total solids volume exact.

use crate::config::{FluidProps, ParticleProps, PACKING_LIMIT};
use crate::decomp::{BoxDecomposition, Comm};
use crate::error::{Error, Result};
use crate::fluid::{BoxField, FluidState, Patch};
use crate::particles::ParticleStore;
use crate::vec3::{norm, sub, Vec3, ZERO};

/// Gas state sampled at one particle and the resulting drag.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DragSample {
    pub gas_vel: Vec3,
    pub eps_g: f64,
    pub beta: f64,
    pub force: Vec3,
}

/// Lower lattice index and linear weights along each axis. `face_axis`
/// selects the lattice staggering: cell centres sit at `(i + 1/2) dx`,
/// faces normal to axis `a` at `i dx` along `a`.
#[inline]
pub fn lattice_weights(pos: Vec3, dx: f64, face_axis: Option<usize>) -> ([i64; 3], [f64; 3]) {
    let mut base = [0i64; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let s = if face_axis == Some(a) { pos[a] / dx } else { pos[a] / dx - 0.5 };
        // truncation is floor for s >= 0 and much cheaper than a libm call
        let f = if s >= 0.0 && s < 1e15 { (s as i64) as f64 } else { s.floor() };
        base[a] = f as i64;
        t[a] = s - f;
    }
    (base, t)
}

fn sample(p: &Patch, base: [i64; 3], t: [f64; 3]) -> f64 {
    let o = p.off(base);
    let s = p.strides();
    let mut acc = 0.0;
    for (di, wi) in [(0, 1.0 - t[0]), (s[0], t[0])] {
        for (dj, wj) in [(0, 1.0 - t[1]), (s[1], t[1])] {
            for (dk, wk) in [(0, 1.0 - t[2]), (s[2], t[2])] {
                acc += wi * wj * wk * p.data[o + di + dj + dk];
            }
        }
    }
    acc
}

fn stencil_stored(p: &Patch, base: [i64; 3]) -> bool {
    p.stores(base) && p.stores([base[0] + 1, base[1] + 1, base[2] + 1])
}

/// Patch index (into `field.patches`) of the box containing `pos`.
fn home_patch(field: &BoxField, decomp: &BoxDecomposition, pos: Vec3) -> Option<usize> {
    field.patch_of_box(decomp.box_of_pos(pos))
}

/// Trilinear sample of one field at `pos`, from the home-box patch or, for
/// a particle that drifted out of its rank's boxes since the last
/// migration, from a local patch whose halo holds the stencil. Halo values
/// are exact copies, so every such patch gives the same result.
pub fn interpolate_field(field: &BoxField, decomp: &BoxDecomposition, pos: Vec3) -> Option<f64> {
    interpolate_from(field, decomp.dx, home_patch(field, decomp, pos), pos)
}

fn interpolate_from(field: &BoxField, dx: f64, home: Option<usize>, pos: Vec3) -> Option<f64> {
    let face = match field.stagger {
        crate::fluid::Stagger::Cell => None,
        crate::fluid::Stagger::Face(a) => Some(a),
    };
    let (base, t) = lattice_weights(pos, dx, face);
    let p = match home {
        Some(pi) if stencil_stored(&field.patches[pi], base) => &field.patches[pi],
        _ => field.patches.iter().find(|p| stencil_stored(p, base))?,
    };
    Some(sample(p, base, t))
}

/// Gas velocity and gas fraction at `pos`, as [`interpolate_field`] gives them.
pub fn interpolate_gas(fluid: &FluidState, decomp: &BoxDecomposition, pos: Vec3) -> Option<(Vec3, f64)> {
    // every field has one patch per local box, in the same order
    let home = home_patch(&fluid.eps, decomp, pos);
    let eps = interpolate_from(&fluid.eps, decomp.dx, home, pos)?;
    let mut u = ZERO;
    for (a, ua) in u.iter_mut().enumerate() {
        *ua = interpolate_from(&fluid.vel[a], decomp.dx, home, pos)?;
    }
    Some((u, eps))
}

/// Gas velocity and gas fraction at each owned particle.
pub fn interpolate_to_particles(
    fluid: &FluidState,
    decomp: &BoxDecomposition,
    store: &ParticleStore,
) -> Result<Vec<(Vec3, f64)>> {
    (0..store.n_owned)
        .map(|i| {
            let pos = store.pos[i];
            let outside = || Error::numerical(format!("particle {} at {pos:?} lies outside the local grid", store.id[i]));
            interpolate_gas(fluid, decomp, pos).ok_or_else(outside)
        })
        .collect()
}

/// BVK drag normalised by Stokes drag `3 pi mu d eps_g |u_slip|`. Solids
/// fractions at or above the packing limit are clamped; the flag reports it.
pub fn bvk_normalized_drag(eps_s: f64, re: f64) -> (f64, bool) {
    let clamped = eps_s >= PACKING_LIMIT;
    let es = eps_s.clamp(0.0, PACKING_LIMIT);
    let eg = 1.0 - es;
    let low = 10.0 * es / (eg * eg) + eg * eg * (1.0 + 1.5 * es.sqrt());
    if re <= 0.0 {
        return (low, clamped);
    }
    let ln_re = re.ln();
    let num = 1.0 / eg + 3.0 * eg * es + 8.4 * (-0.343 * ln_re).exp();
    let den = 1.0 + (3.0 * es * std::f64::consts::LN_10 - 0.5 * (1.0 + 4.0 * es) * ln_re).exp();
    (low + 0.413 * re / (24.0 * eg * eg) * num / den, clamped)
}

/// Drag coefficient and force for one particle.
pub fn drag_sample(gas_vel: Vec3, eps_g: f64, vel: Vec3, fluid: &FluidProps, particles: &ParticleProps) -> (DragSample, bool) {
    let eg = eps_g.clamp(1.0 - PACKING_LIMIT, 1.0);
    let slip = sub(gas_vel, vel);
    let d = particles.diameter;
    let re = eg * fluid.density * norm(slip) * d / fluid.viscosity;
    let (f, clamped) = bvk_normalized_drag(1.0 - eps_g, re);
    let beta = 3.0 * std::f64::consts::PI * fluid.viscosity * d * eg * f;
    let force = [beta * slip[0], beta * slip[1], beta * slip[2]];
    (DragSample { gas_vel, eps_g: eg, beta, force }, clamped)
}

/// Drag on every owned particle at its current position and velocity.
/// Returns the samples and the number of packing-limit clamps.
pub fn drag_force(
    fluid: &FluidState,
    decomp: &BoxDecomposition,
    store: &ParticleStore,
    fprops: &FluidProps,
    pprops: &ParticleProps,
) -> Result<(Vec<DragSample>, u64)> {
    let at = interpolate_to_particles(fluid, decomp, store)?;
    let mut events = 0;
    let samples = at
        .into_iter()
        .enumerate()
        .map(|(i, (u, e))| {
            let (s, c) = drag_sample(u, e, store.vel[i], fprops, pprops);
            events += u64::from(c);
            s
        })
        .collect();
    Ok((samples, events))
}

/// Adds `value * w` to the 8 cells around `pos` in its home patch; weight
/// outside the domain folds into the mirror cell.
fn scatter(p: &mut Patch, cells: [usize; 3], base: [i64; 3], t: [f64; 3], values: &[f64], out: &mut [&mut [f64]]) {
    let fold = |g: i64, n: usize| -> i64 {
        if g < 0 {
            -1 - g
        } else if g >= n as i64 {
            2 * n as i64 - 1 - g
        } else {
            g
        }
    };
    for (di, wi) in [(0, 1.0 - t[0]), (1, t[0])] {
        for (dj, wj) in [(0, 1.0 - t[1]), (1, t[1])] {
            for (dk, wk) in [(0, 1.0 - t[2]), (1, t[2])] {
                let g = [
                    fold(base[0] + di, cells[0]),
                    fold(base[1] + dj, cells[1]),
                    fold(base[2] + dk, cells[2]),
                ];
                let o = p.off(g);
                let w = wi * wj * wk;
                for (f, v) in out.iter_mut().zip(values) {
                    f[o] += w * v;
                }
            }
        }
    }
}

/// Deposits per-particle values (one per output field) with CIC weights into
/// per-box partial patches, then reduces the partials into the interiors.
/// Values are already divided by the cell volume by the caller.
pub fn deposit_values(
    store: &ParticleStore,
    decomp: &BoxDecomposition,
    fields: &mut [&mut BoxField],
    plan: &crate::decomp::HaloPlan,
    value: impl Fn(usize, &mut [f64]),
    comm: &mut Comm,
) -> Result<()> {
    for f in fields.iter_mut() {
        f.fill(0.0);
    }
    let nf = fields.len();
    let mut vals = vec![0.0; nf];
    for i in 0..store.n_owned {
        let pos = store.pos[i];
        let pi = home_patch(fields[0], decomp, pos)
            .ok_or_else(|| Error::numerical(format!("particle {} at {pos:?} is not in an owned box", store.id[i])))?;
        let (base, t) = lattice_weights(pos, decomp.dx, None);
        value(i, &mut vals);
        let geom = fields[0].patches[pi].clone_geometry();
        if !stencil_stored(&geom, base) {
            return Err(Error::numerical(format!("particle {} at {pos:?} lies outside the local grid", store.id[i])));
        }
        let mut slices: Vec<&mut [f64]> = fields.iter_mut().map(|f| f.patches[pi].data.as_mut_slice()).collect();
        let mut geom = geom;
        scatter(&mut geom, decomp.cells, base, t, &vals, &mut slices);
    }
    plan.reduce(fields, comm)
}

impl Patch {
    /// Same layout, no data; used for offset arithmetic.
    pub fn clone_geometry(&self) -> Patch {
        Patch { lo: self.lo, dims: self.dims, ilo: self.ilo, ihi: self.ihi, data: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepositStats {
    /// Cells whose solids fraction reached the packing limit.
    pub packed_cells: u64,
    /// Particles whose drag closure was clamped.
    pub clamped_particles: u64,
}

/// Deposits solids fraction into `fluid.eps` (as gas fraction, clamped at
/// the packing limit) and the drag coefficient/source pair into
/// `fluid.drag_coef` / `fluid.drag_src`, with halos refreshed.
pub fn deposit_to_grid(
    store: &ParticleStore,
    decomp: &BoxDecomposition,
    fluid: &mut FluidState,
    fprops: &FluidProps,
    pprops: &ParticleProps,
    comm: &mut Comm,
) -> Result<DepositStats> {
    let inv_v = 1.0 / (decomp.dx * decomp.dx * decomp.dx);
    let plan = fluid.cell_plan.clone();
    deposit_values(store, decomp, &mut [&mut fluid.eps], &plan, |i, v| v[0] = particle_volume(store, i) * inv_v, comm)?;
    let mut stats = DepositStats::default();
    for p in &mut fluid.eps.patches {
        for g in p.interior().collect::<Vec<_>>() {
            let es = p.at(g);
            if es > PACKING_LIMIT {
                stats.packed_cells += 1;
            }
            p.set(g, (1.0 - es).max(1.0 - PACKING_LIMIT));
        }
    }
    fluid.fill_cell_halos(comm)?;
    let (samples, clamped) = drag_force(fluid, decomp, store, fprops, pprops)?;
    stats.clamped_particles = clamped;
    let [s0, s1, s2] = &mut fluid.drag_src;
    deposit_values(
        store,
        decomp,
        &mut [&mut fluid.drag_coef, s0, s1, s2],
        &plan,
        |i, v| {
            let b = samples[i].beta * inv_v;
            let u = store.vel[i];
            v[0] = b;
            v[1] = b * u[0];
            v[2] = b * u[1];
            v[3] = b * u[2];
        },
        comm,
    )?;
    fluid.fill_cell_halos(comm)?;
    Ok(stats)
}

fn particle_volume(store: &ParticleStore, i: usize) -> f64 {
    let r = store.radius[i];
    4.0 / 3.0 * std::f64::consts::PI * r * r * r
}

/// Total deposited solids volume, sum of (1 - eps) V_cell, reduced over boxes.
pub fn solids_volume(field: &BoxField, dx: f64, as_gas_fraction: bool, comm: &mut Comm) -> Result<f64> {
    let v = dx * dx * dx;
    let parts: Vec<(usize, f64)> = field
        .boxes
        .iter()
        .zip(&field.patches)
        .map(|(&b, p)| {
            let s: f64 = p.interior().map(|g| if as_gas_fraction { 1.0 - p.at(g) } else { p.at(g) }).sum();
            (b, s * v)
        })
        .collect();
    comm.box_ordered_sum(&parts)
}

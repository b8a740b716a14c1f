//! Acceptance criteria 1 to 11. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts. Tests hold a shared lock so wall-clock
//! measurements do not overlap.

use std::collections::BTreeSet;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use granubed::bench::{run_weak_scaling, weak_csv, SizePreset, WEAK_HEADER};
use granubed::config::derived_particle_constants;
use granubed::coupling::{bvk_normalized_drag, deposit_values, solids_volume};
use granubed::decomp::{decompose, exchange_ghosts, redistribute, run_ranks, sfc_assign, BoxDecomposition, Comm, HaloPlan};
use granubed::dem::{advance_particles, build_neighbor_list, AtsController, ContactParams, DemState, FreeEnv, StepMode};
use granubed::driver::{run, RankSim, RunOptions};
use granubed::fluid::{BoxField, Stagger};
use granubed::particles::{ParticleRecord, ParticleStore};
use granubed::{ParticleProps, SimConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn desk_decomp(cfg: &SimConfig, nranks: usize) -> BoxDecomposition {
    let d = decompose(&cfg.domain, cfg.tiling).unwrap();
    let owner = sfc_assign(&d, nranks).unwrap();
    d.with_owners(owner, nranks)
}

fn dem_for(p: &ParticleProps, skin_radii: f64) -> DemState {
    let r = p.radius();
    DemState::new(ContactParams::from_props(p).unwrap(), None, 6.0 * r, skin_radii * r, 50, r)
}

/// Rebound ratio of a head-on pair approaching at +-v.
fn rebound_ratio(p: &ParticleProps, dt: f64) -> f64 {
    let r = p.radius();
    let v = 0.05;
    let mut s = ParticleStore::new();
    s.push_owned_record(&ParticleRecord { id: 0, pos: [1e-3; 3], vel: [v, 0.0, 0.0], omega: [0.0; 3] }, p);
    s.push_owned_record(&ParticleRecord { id: 1, pos: [1e-3 + 2.0 * r + 1e-6, 1e-3, 1e-3], vel: [-v, 0.0, 0.0], omega: [0.0; 3] }, p);
    let mut dem = dem_for(p, 2.0);
    dem.rebuild(&s);
    let tc = derived_particle_constants(p).unwrap().contact_time;
    // approach, full contact and a margin
    advance_particles(&mut dem, &mut s, &mut FreeEnv::default(), 3.0 * tc, StepMode::Fixed(dt)).unwrap();
    (s.vel[1][0] - s.vel[0][0]) / (2.0 * v)
}

#[test]
fn criterion_01_binary_restitution() {
    let _g = lock();
    let p = ParticleProps::default();
    let tc = derived_particle_constants(&p).unwrap().contact_time;
    let coarse = rebound_ratio(&p, tc / 50.0);
    let fine = rebound_ratio(&p, tc / 200.0);
    let e = p.restitution_pp;
    let pass = (coarse - e).abs() <= 0.02 * e && (fine - e).abs() <= 0.005 * e;
    verdict(1, pass, format!("t_c/50: {coarse:.5}, t_c/200: {fine:.5}, target {e}"));
}

#[test]
fn criterion_02_bvk_oracle() {
    let _g = lock();
    let (stokes, _) = bvk_normalized_drag(0.0, 1e-12);
    let (dense, _) = bvk_normalized_drag(0.3, 0.0);
    let pass = (stokes - 1.0).abs() <= 1e-3 && (dense - 7.015).abs() <= 1e-3;
    verdict(2, pass, format!("F(0, 0+) = {stokes:.6}, F(0.3, 0) = {dense:.6}"));
}

#[test]
fn criterion_03_deposition_conservation() {
    let _g = lock();
    let cfg = SimConfig::default();
    let ext = cfg.domain.extent();
    let props = cfg.particles.clone();
    let r = props.radius();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1_000..=100_000);
        let pos: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|a| rng.gen_range(r..ext[a] - r)))
            .collect();
        let exact = n as f64 * props.volume();
        for nr in [1, 2, 4] {
            let totals = run_ranks(nr, |c| {
                let d = desk_decomp(&cfg, c.size());
                let mut s = ParticleStore::new();
                for (i, x) in pos.iter().enumerate() {
                    if d.owner_of_pos(*x) == c.rank() {
                        s.push_owned(i as u64, *x, &props);
                    }
                }
                let mut f = BoxField::new(&d, c.rank(), Stagger::Cell);
                let plan = HaloPlan::new(&d, c.rank(), Stagger::Cell);
                let inv_v = 1.0 / d.dx.powi(3);
                deposit_values(&s, &d, &mut [&mut f], &plan, |i, v| v[0] = 4.0 / 3.0 * std::f64::consts::PI * s.radius[i].powi(3) * inv_v, c)?;
                solids_volume(&f, d.dx, false, c)
            })
            .unwrap();
            worst = worst.max((totals[0] - exact).abs() / exact);
        }
    }
    verdict(3, worst <= 1e-12, format!("worst relative volume error {worst:e} over 10 seeds x ranks 1/2/4"));
}

#[test]
fn criterion_04_projection_residual() {
    let _g = lock();
    let cfg = SimConfig { t_end: 50.0 * 2e-4, ..SimConfig::default() };
    let rep = run(&cfg, &RunOptions::default()).unwrap();
    let worst = rep.projections.iter().map(|p| p.relative_divergence()).fold(0.0, f64::max);
    let pass = rep.projections.len() == 50 && worst <= 1e-10;
    verdict(4, pass, format!("{} steps, worst relative divergence {worst:e}", rep.projections.len()));
}

#[test]
fn criterion_05_rank_invariance() {
    let _g = lock();
    let cfg = SimConfig { n_particles: Some(10_000), t_end: 100.0 * 2e-4, ..SimConfig::default() };
    let one = run(&cfg, &RunOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut same_ids = true;
    for nr in [2, 4] {
        let rep = run(&SimConfig { ranks: nr, ..cfg.clone() }, &RunOptions::default()).unwrap();
        same_ids &= rep.particles.len() == one.particles.len() && rep.timings.len() == one.timings.len();
        for (a, b) in one.particles.iter().zip(&rep.particles) {
            same_ids &= a.id == b.id;
            for k in 0..3 {
                worst = worst.max((a.pos[k] - b.pos[k]).abs() / a.pos[k].abs());
            }
        }
    }
    let pass = same_ids && one.timings.len() == 100 && one.particles.len() >= 10_000 && worst <= 1e-8;
    verdict(5, pass, format!("{} particles after {} steps, worst relative position difference {worst:e}", one.particles.len(), one.timings.len()));
}

/// Every (rank, id) pair such that the particle's cell is within one cell
/// of a box owned by `rank`, which does not own the particle.
fn geometric_ghosts(d: &BoxDecomposition, recs: &[ParticleRecord]) -> BTreeSet<(usize, u64)> {
    let mut out = BTreeSet::new();
    for rec in recs {
        let c = d.cell_of(rec.pos);
        let home = d.owner_of_pos(rec.pos);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    let n = [c[0] as i64 + di, c[1] as i64 + dj, c[2] as i64 + dk];
                    if (0..3).any(|a| n[a] < 0 || n[a] >= d.cells[a] as i64) {
                        continue;
                    }
                    let r = d.owner[d.box_of_cell([n[0] as usize, n[1] as usize, n[2] as usize])];
                    if r != home {
                        out.insert((r, rec.id));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn criterion_06_ghost_set_exactness() {
    let _g = lock();
    let cfg = SimConfig { tiling: [4, 10, 4], ..SimConfig::default() };
    let props = cfg.particles.clone();
    let ext = cfg.domain.extent();
    let r = props.radius();
    let n = 3000;
    let nranks = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let init: Vec<ParticleRecord> = (0..n)
        .map(|i| ParticleRecord {
            id: i as u64,
            pos: std::array::from_fn(|a| rng.gen_range(r..ext[a] - r)),
            vel: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            omega: [0.0; 3],
        })
        .collect();
    let steps = 100;
    let dx = ext[0] / cfg.domain.cells()[0] as f64;
    // about a third of a cell per substep at the fastest
    let dt = 0.3 * dx;
    let out = run_ranks(nranks, |c| {
        let d = desk_decomp(&cfg, c.size());
        let mut s = ParticleStore::new();
        for rec in init.iter().filter(|rec| d.owner_of_pos(rec.pos) == c.rank()) {
            s.push_owned_record(rec, &props);
        }
        let mut mismatches = 0usize;
        let mut checked = 0usize;
        for _ in 0..steps {
            s.clear_ghosts();
            for i in 0..s.n_owned {
                for a in 0..3 {
                    let mut x = s.pos[i][a] + dt * s.vel[i][a];
                    // reflect off the walls
                    if x < r || x > ext[a] - r {
                        s.vel[i][a] = -s.vel[i][a];
                        x = s.pos[i][a] + dt * s.vel[i][a];
                    }
                    s.pos[i][a] = x;
                }
            }
            redistribute(&mut s, &d, c, &props, f64::INFINITY, None)?;
            exchange_ghosts(&mut s, &d, c, &props)?;
            let mine: BTreeSet<(usize, u64)> = (s.n_owned..s.len()).map(|i| (c.rank(), s.id[i])).collect();
            let owned = s.owned_records();
            let all = c.allgather(granubed::decomp::comm::tags::GATHER, granubed::decomp::wire::encode_particles(&owned))?;
            let mut recs = Vec::new();
            for (src, bytes) in all.iter().enumerate() {
                recs.extend(granubed::decomp::wire::decode_particles(bytes, src, c.rank())?);
            }
            let want: BTreeSet<(usize, u64)> = geometric_ghosts(&d, &recs).into_iter().filter(|g| g.0 == c.rank()).collect();
            mismatches += mine.symmetric_difference(&want).count();
            checked += want.len();
        }
        Ok((mismatches, checked))
    })
    .unwrap();
    let mismatches: usize = out.iter().map(|o| o.0).sum();
    let checked: usize = out.iter().map(|o| o.1).sum();
    verdict(6, mismatches == 0 && checked > 0, format!("{steps} substeps on {nranks} ranks, {checked} ghost entries, {mismatches} mismatches"));
}

#[test]
fn criterion_07_neighbor_oracle() {
    let _g = lock();
    let props = ParticleProps::default();
    let cutoff = 6.0 * props.radius();
    let mut failures = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(2..=500);
        let l = rng.gen_range(5e-4..3e-3);
        let mut s = ParticleStore::new();
        for i in 0..n {
            s.push_owned(i as u64, std::array::from_fn(|_| rng.gen_range(0.0..l)), &props);
        }
        let list = build_neighbor_list(&s, cutoff);
        let mut brute = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = (0..3).map(|a| (s.pos[i][a] - s.pos[j][a]).powi(2)).sum();
                if d2 < cutoff * cutoff {
                    brute.push((s.id[i].min(s.id[j]), s.id[i].max(s.id[j])));
                }
            }
        }
        brute.sort_unstable();
        failures += usize::from(list.id_pairs(&s) != brute);
    }
    verdict(7, failures == 0, format!("{failures} of 50 configurations differ from brute force"));
}

/// Advances one fluid step from `base` with the given particle stepping
/// and returns the owned velocities sorted by id and the substep count.
fn replay(base: &RankSim, fixed_dt: Option<f64>, tol: f64, comm: &mut Comm) -> (Vec<(u64, [f64; 3])>, usize) {
    let mut s = base.clone();
    match fixed_dt {
        Some(dt) => {
            s.ats = None;
            s.dt_fixed = dt;
        }
        None => {
            let c = &s.cfg;
            s.ats = Some(AtsController::new(tol, c.ats_dt_min, c.ats_dt_max, base.dt_fixed).unwrap());
        }
    }
    let rec = s.advance(comm).unwrap();
    let mut v: Vec<(u64, [f64; 3])> = (0..s.store.n_owned).map(|i| (s.store.id[i], s.store.vel[i])).collect();
    v.sort_by_key(|x| x.0);
    (v, rec.timings.n_substeps)
}

fn max_velocity_error(a: &[(u64, [f64; 3])], b: &[(u64, [f64; 3])]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut e: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.0, y.0);
        for k in 0..3 {
            e = e.max((x.1[k] - y.1[k]).abs());
        }
    }
    e
}

#[test]
fn criterion_08_ats_matched_error() {
    let _g = lock();
    let cfg = SimConfig::default();
    let tol = 1e-5;
    let mut comm = Comm::solo();
    let mut sim = RankSim::new(&cfg, &mut comm).unwrap();
    // past the inlet ramp, with the bed settled and bubbling
    while sim.t < 3e-3 * (1.0 - 1e-12) {
        sim.advance(&mut comm).unwrap();
    }
    let tc = cfg.constants().unwrap().contact_time;
    let (reference, n_ref) = replay(&sim, Some(tc / 1000.0), tol, &mut comm);
    let (ats, n_ats) = replay(&sim, None, tol, &mut comm);
    let e_ats = max_velocity_error(&ats, &reference);
    // fixed-step error against substep count, coarse to fine
    let mut ladder = Vec::new();
    for k in [10.0, 20.0, 40.0, 80.0, 160.0] {
        let (v, n) = replay(&sim, Some(tc / k), tol, &mut comm);
        ladder.push((n as f64, max_velocity_error(&v, &reference)));
    }
    // fixed substeps giving the ATS error, log-log interpolation in the ladder
    let matched = ladder.windows(2).find(|w| w[0].1 >= e_ats && w[1].1 <= e_ats).map(|w| {
        let (n0, e0, n1, e1) = (w[0].0, w[0].1, w[1].0, w[1].1);
        let s = (e_ats.ln() - e0.ln()) / (e1.ln() - e0.ln());
        (n0.ln() + s * (n1.ln() - n0.ln())).exp()
    });
    let ladder_txt: Vec<String> = ladder.iter().map(|(n, e)| format!("{n}:{e:.2e}")).collect();
    let ratio = matched.map_or(f64::NAN, |m| m / n_ats as f64);
    verdict(
        8,
        ratio >= 2.0,
        format!(
            "ATS {n_ats} substeps, error {e_ats:.3e}; fixed ladder [{}]; matched fixed substeps {:.0}; ratio {ratio:.3}; reference {n_ref} substeps",
            ladder_txt.join(", "),
            matched.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_09_smoke_test() {
    let _g = lock();
    let cfg = SimConfig { t_end: 0.01, ..SimConfig::default() };
    let rep = run(&cfg, &RunOptions::default());
    let rep = match rep {
        Ok(r) => r,
        Err(e) => return verdict(9, false, format!("aborted: {e}")),
    };
    let tail = &rep.diagnostics[rep.diagnostics.len() / 2..];
    let mean = tail.iter().map(|d| d.bed_height).sum::<f64>() / tail.len() as f64;
    let std = (tail.iter().map(|d| (d.bed_height - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
    let pen = rep.counters.max_wall_penetration;
    let last_t = rep.timings.last().map_or(0.0, |t| t.t);
    let pass = last_t >= cfg.t_end * (1.0 - 1e-12) && std > 0.0 && pen <= 0.25;
    verdict(
        9,
        pass,
        format!("reached t = {last_t:e} s in {:.0} s wall; bed height {mean:.4e} m, std {std:.3e} m; max wall penetration {pen:.4} r", rep.wall_s),
    );
}

#[test]
fn criterion_10_momentum_conservation() {
    let _g = lock();
    let p = ParticleProps { restitution_pp: 1.0, ..ParticleProps::default() };
    let r = p.radius();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParticleStore::new();
    let mut id = 0;
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let x = [(i as f64 + 1.0) * 2.1 * r, (j as f64 + 1.0) * 2.1 * r, (k as f64 + 1.0) * 2.1 * r];
                let v = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
                s.push_owned_record(&ParticleRecord { id, pos: x, vel: v, omega: [0.0; 3] }, &p);
                id += 1;
            }
        }
    }
    let tc = derived_particle_constants(&p).unwrap().contact_time;
    let dt = tc / 20.0;
    let mut dem = dem_for(&p, 2.0);
    dem.rebuild(&s);
    let p0 = s.momentum();
    let scale: f64 = (0..s.n_owned).map(|i| s.mass[i] * (0..3).map(|a| s.vel[i][a].powi(2)).sum::<f64>().sqrt()).sum();
    let n = advance_particles(&mut dem, &mut s, &mut FreeEnv::default(), 10_000.0 * dt, StepMode::Fixed(dt)).unwrap();
    let p1 = s.momentum();
    let drift = (0..3).map(|a| (p1[a] - p0[a]).abs() / scale).fold(0.0, f64::max);
    let collided = dem.counters.force_evals > 0 && s.kinetic_energy() > 0.0;
    verdict(10, n == 10_000 && collided && drift <= 1e-13, format!("{n} substeps, worst component drift {drift:e} of total |p|"));
}

#[test]
fn criterion_11_weak_scaling_harness() {
    let _g = lock();
    let rep = run_weak_scaling(&SizePreset::desk_base(), &[1, 2, 4], &SimConfig::default(), 4e-4).unwrap();
    let csv = weak_csv(&rep.rows);
    let complete = rep.rows.len() == 6 && rep.rows.iter().all(|r| r.error.is_none()) && csv.lines().next() == Some(WEAK_HEADER) && csv.lines().count() == 7;
    let eff_ok = rep.rows.iter().all(|r| r.efficiency > 0.0 && r.efficiency <= 1.05);
    let spread = rep.physics_spread();
    let effs: Vec<String> = rep.rows.iter().map(|r| format!("{}{}:{:.3}", r.ranks, if r.ats { "a" } else { "" }, r.efficiency)).collect();
    verdict(11, complete && eff_ok && spread <= 1e-6, format!("efficiencies [{}], physics spread {spread:e}", effs.join(", ")));
}

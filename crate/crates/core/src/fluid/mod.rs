//! Incompressible gas phase on a staggered (MAC) grid: upwind advection,
//! explicit diffusion and point-implicit drag in the predictor, then a
//! variable-coefficient projection that enforces
//! `d(eps)/dt + div(eps u) = 0`.

pub mod patch;
pub mod poisson;

pub use patch::{Bc, BoxField, Patch, Stagger};
pub use poisson::{solve_poisson, PoissonOperator, PoissonSolution};

use crate::config::{FluidProps, SimConfig, WallBc};
use crate::decomp::{BoxDecomposition, Comm, HaloPlan};
use crate::error::{Error, Result};

/// Outcome of one projection.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionReport {
    pub iterations: usize,
    pub solver_residual: f64,
    /// L2 norm of the weighted divergence (mass residual per cell volume)
    /// before and after the pressure correction.
    pub divergence_before: f64,
    pub divergence_after: f64,
}

impl ProjectionReport {
    /// Post-projection divergence relative to the predictor's.
    pub fn relative_divergence(&self) -> f64 {
        if self.divergence_before == 0.0 {
            if self.divergence_after == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.divergence_after / self.divergence_before
        }
    }
}

#[derive(Clone, Debug)]
pub struct FluidState {
    pub rank: usize,
    pub cells: [usize; 3],
    pub dx: f64,
    /// Face-centred velocity components.
    pub vel: [BoxField; 3],
    /// Projection potential (kinematic pressure scaled by density).
    pub pressure: BoxField,
    /// Gas volume fraction.
    pub eps: BoxField,
    eps_prev: BoxField,
    has_prev: bool,
    eps_face: [BoxField; 3],
    /// Deposited drag coefficient per unit volume, sum of w*beta/V.
    pub drag_coef: BoxField,
    /// Deposited drag source per unit volume, sum of w*beta*v_p/V.
    pub drag_src: [BoxField; 3],
    pub cell_plan: HaloPlan,
    pub face_plans: [HaloPlan; 3],
    pub wall_bc: WallBc,
    op: PoissonOperator,
    pub last: ProjectionReport,
}

/// Mirror signs for velocity component `a`: the normal component is odd
/// about walls, tangential components are odd at no-slip walls and at the
/// inlet, even at free-slip walls and at the outflow.
pub fn velocity_bc(a: usize, wall: WallBc) -> Bc {
    let t = match wall {
        WallBc::NoSlip => -1.0,
        WallBc::FreeSlip => 1.0,
    };
    let mut bc = Bc { lo: [1.0; 3], hi: [1.0; 3] };
    for b in 0..3 {
        let (lo, hi) = if b == 1 {
            if a == 1 {
                (1.0, 1.0)
            } else {
                (-1.0, 1.0)
            }
        } else if b == a {
            (-1.0, -1.0)
        } else {
            (t, t)
        };
        bc.lo[b] = lo;
        bc.hi[b] = hi;
    }
    bc
}

fn unit(a: usize) -> [i64; 3] {
    let mut e = [0; 3];
    e[a] = 1;
    e
}

#[inline]
fn shift(g: [i64; 3], a: usize, d: i64) -> [i64; 3] {
    let mut s = g;
    s[a] += d;
    s
}

impl FluidState {
    /// Gas at rest, eps = 1 everywhere.
    pub fn new(decomp: &BoxDecomposition, rank: usize, wall_bc: WallBc) -> FluidState {
        let face = |a| BoxField::new(decomp, rank, Stagger::Face(a));
        let cell = || BoxField::new(decomp, rank, Stagger::Cell);
        let mut eps = cell();
        eps.fill(1.0);
        FluidState {
            rank,
            cells: decomp.cells,
            dx: decomp.dx,
            vel: [face(0), face(1), face(2)],
            pressure: cell(),
            eps_prev: eps.clone(),
            eps,
            has_prev: false,
            eps_face: [face(0), face(1), face(2)],
            drag_coef: cell(),
            drag_src: [cell(), cell(), cell()],
            cell_plan: HaloPlan::new(decomp, rank, Stagger::Cell),
            face_plans: [0, 1, 2].map(|a| HaloPlan::new(decomp, rank, Stagger::Face(a))),
            wall_bc,
            op: PoissonOperator::new(decomp, rank, true),
            last: ProjectionReport::default(),
        }
    }

    /// Faces whose normal velocity is imposed: walls and the inlet.
    pub fn is_fixed_face(&self, a: usize, g: [i64; 3]) -> bool {
        g[a] == 0 || (a != 1 && g[a] == self.cells[a] as i64)
    }

    fn is_top_face(&self, a: usize, g: [i64; 3]) -> bool {
        a == 1 && g[1] == self.cells[1] as i64
    }

    pub fn fill_velocity_halos(&mut self, comm: &mut Comm) -> Result<()> {
        for a in 0..3 {
            let bc = velocity_bc(a, self.wall_bc);
            self.face_plans[a].fill(&mut [&mut self.vel[a]], &[bc], comm)?;
        }
        Ok(())
    }

    /// Refreshes halos of eps and the deposited drag fields.
    pub fn fill_cell_halos(&mut self, comm: &mut Comm) -> Result<()> {
        let [s0, s1, s2] = &mut self.drag_src;
        self.cell_plan.fill(
            &mut [&mut self.eps, &mut self.drag_coef, s0, s1, s2],
            &[Bc::EVEN; 5],
            comm,
        )
    }

    /// Sets every velocity component to a uniform value on non-wall faces
    /// (walls get zero normal velocity) and refreshes halos.
    pub fn set_uniform_velocity(&mut self, u: [f64; 3], comm: &mut Comm) -> Result<()> {
        let cells = self.cells;
        for a in 0..3 {
            for p in &mut self.vel[a].patches {
                for g in p.interior().collect::<Vec<_>>() {
                    let wall = a != 1 && (g[a] == 0 || g[a] == cells[a] as i64);
                    p.set(g, if wall { 0.0 } else { u[a] });
                }
            }
        }
        self.fill_velocity_halos(comm)
    }

    /// Largest face velocity magnitude on this rank.
    pub fn max_speed(&self) -> f64 {
        let mut m: f64 = 0.0;
        for f in &self.vel {
            for p in &f.patches {
                for g in p.interior() {
                    m = m.max(p.at(g).abs());
                }
            }
        }
        m
    }

    fn update_eps_faces(&mut self) {
        for a in 0..3 {
            for (pf, pe) in self.eps_face[a].patches.iter_mut().zip(&self.eps.patches) {
                for g in pf.interior().collect::<Vec<_>>() {
                    pf.set(g, 0.5 * (pe.at(shift(g, a, -1)) + pe.at(g)));
                }
            }
        }
    }

    /// Weighted divergence `div(eps u) + d(eps)/dt` per cell (1/s), on interiors.
    /// `vel` must have filled halos where box faces are shared.
    fn mass_residual(&self, vel: &[BoxField; 3], dt: f64) -> BoxField {
        let mut out = BoxField::new_like(&self.eps);
        let rate = self.has_prev && dt > 0.0;
        for (pi, po) in out.patches.iter_mut().enumerate() {
            for g in po.interior().collect::<Vec<_>>() {
                let mut d = 0.0;
                for a in 0..3 {
                    let (pu, pe) = (&vel[a].patches[pi], &self.eps_face[a].patches[pi]);
                    let gp = shift(g, a, 1);
                    d += pe.at(gp) * pu.at(gp) - pe.at(g) * pu.at(g);
                }
                let mut r = d / self.dx;
                if rate {
                    r += (self.eps.patches[pi].at(g) - self.eps_prev.patches[pi].at(g)) / dt;
                }
                po.set(g, r);
            }
        }
        out
    }

    /// Predictor velocities on interior faces; halos unfilled.
    fn predict(&self, props: &FluidProps, inlet: f64, dt: f64) -> [BoxField; 3] {
        let nu = props.kinematic_viscosity();
        let rho = props.density;
        let h = self.dx;
        let mut star = self.vel.clone();
        for a in 0..3 {
            for pi in 0..star[a].patches.len() {
                let pu = &self.vel[a].patches[pi];
                let pe = &self.eps.patches[pi];
                let pc = &self.drag_coef.patches[pi];
                let ps = &self.drag_src[a].patches[pi];
                let st = pu.strides();
                let out = &mut star[a].patches[pi];
                for g in pu.interior().collect::<Vec<_>>() {
                    let o = pu.off(g);
                    if self.is_fixed_face(a, g) {
                        out.data[o] = if a == 1 && g[1] == 0 { inlet / pe.at(g) } else { 0.0 };
                        continue;
                    }
                    if self.is_top_face(a, g) {
                        continue;
                    }
                    let u = pu.data[o];
                    let gm = shift(g, a, -1);
                    let mut adv = 0.0;
                    let mut lap = 0.0;
                    for b in 0..3 {
                        let (up, um) = (pu.data[o + st[b]], pu.data[o - st[b]]);
                        lap += (up - u) + (um - u);
                        let w = if b == a {
                            u
                        } else {
                            let pb = &self.vel[b].patches[pi];
                            let eb = unit(b);
                            let g1 = [g[0] + eb[0], g[1] + eb[1], g[2] + eb[2]];
                            let g2 = shift(g1, a, -1);
                            0.25 * ((pb.at(g) + pb.at(gm)) + (pb.at(g1) + pb.at(g2)))
                        };
                        adv += if w > 0.0 {
                            w * (u - um)
                        } else if w < 0.0 {
                            w * (up - u)
                        } else {
                            0.0
                        };
                    }
                    let ef = 0.5 * (pe.at(gm) + pe.at(g));
                    let cf = 0.5 * (pc.at(gm) + pc.at(g));
                    let sf = 0.5 * (ps.at(gm) + ps.at(g));
                    let explicit = u + dt * (-adv / h + nu * lap / (h * h)) + dt * sf / (rho * ef);
                    out.data[o] = explicit / (1.0 + dt * cf / (rho * ef));
                }
            }
        }
        // outflow: zero normal gradient at the top face
        let ny = self.cells[1] as i64;
        for p in &mut star[1].patches {
            if p.ihi[1] == ny + 1 {
                for g in p.interior().filter(|g| g[1] == ny).collect::<Vec<_>>() {
                    let v = p.at(shift(g, 1, -1));
                    p.set(g, v);
                }
            }
        }
        star
    }

    /// Projects `star` onto velocities satisfying the discrete mass
    /// balance and stores them (with filled halos) in `self.vel`.
    fn project(
        &mut self,
        mut star: [BoxField; 3],
        rho: f64,
        dt: f64,
        tol: f64,
        max_iters: usize,
        comm: &mut Comm,
    ) -> Result<ProjectionReport> {
        for a in 0..3 {
            let bc = velocity_bc(a, self.wall_bc);
            self.face_plans[a].fill(&mut [&mut star[a]], &[bc], comm)?;
        }
        let pre = self.mass_residual(&star, dt);
        let scale = -rho * self.dx * self.dx / dt;
        let mut rhs = pre.clone();
        for p in &mut rhs.patches {
            p.data.iter_mut().for_each(|v| *v *= scale);
        }
        self.op.set_weights(&self.eps);
        let sol = solve_poisson(&self.op, &rhs, tol, max_iters, comm)?;
        let k = dt / (rho * self.dx);
        for a in 0..3 {
            for (pi, pu) in star[a].patches.iter_mut().enumerate() {
                let pp = &sol.phi.patches[pi];
                for g in pu.interior().collect::<Vec<_>>() {
                    if self.is_fixed_face(a, g) {
                        continue;
                    }
                    let grad = pp.at(g) - pp.at(shift(g, a, -1));
                    let o = pu.off(g);
                    pu.data[o] -= k * grad;
                }
            }
        }
        self.vel = star;
        self.pressure = sol.phi;
        self.fill_velocity_halos(comm)?;
        let post = self.mass_residual(&self.vel, dt);
        let norms = l2_norms(&self.eps.boxes, [&pre, &post], comm)?;
        Ok(ProjectionReport {
            iterations: sol.iterations,
            solver_residual: sol.residual,
            divergence_before: norms[0],
            divergence_after: norms[1],
        })
    }

    /// Projects the current velocity without a predictor step.
    pub fn reproject(
        &mut self,
        rho: f64,
        dt: f64,
        tol: f64,
        max_iters: usize,
        comm: &mut Comm,
    ) -> Result<ProjectionReport> {
        self.fill_cell_halos(comm)?;
        self.update_eps_faces();
        let star = self.vel.clone();
        self.project(star, rho, dt, tol, max_iters, comm)
    }

    /// Net volumetric gas flux into the domain (inlet minus outlet), m^3/s.
    pub fn net_inflow(&self, comm: &mut Comm) -> Result<f64> {
        let ny = self.cells[1] as i64;
        let area = self.dx * self.dx;
        let mut parts = Vec::new();
        for (pi, &b) in self.vel[1].boxes.iter().enumerate() {
            let (pv, pe) = (&self.vel[1].patches[pi], &self.eps_face[1].patches[pi]);
            let mut s = 0.0;
            for g in pv.interior() {
                if g[1] == 0 {
                    s += pe.at(g) * pv.at(g) * area;
                } else if g[1] == ny {
                    s -= pe.at(g) * pv.at(g) * area;
                }
            }
            parts.push((b, s));
        }
        comm.box_ordered_sum(&parts)
    }

    /// Total gas volume, sum of eps * V_cell.
    pub fn gas_volume(&self, comm: &mut Comm) -> Result<f64> {
        let v = self.dx * self.dx * self.dx;
        let parts: Vec<(usize, f64)> = self
            .eps
            .boxes
            .iter()
            .zip(&self.eps.patches)
            .map(|(&b, p)| (b, p.interior().map(|g| p.at(g)).sum::<f64>() * v))
            .collect();
        comm.box_ordered_sum(&parts)
    }
}

fn l2_norms<const N: usize>(boxes: &[usize], fields: [&BoxField; N], comm: &mut Comm) -> Result<[f64; N]> {
    let mut parts = Vec::with_capacity(boxes.len());
    for (pi, &b) in boxes.iter().enumerate() {
        let mut v = [0.0; N];
        for (n, f) in fields.iter().enumerate() {
            let p = &f.patches[pi];
            v[n] = p.interior().map(|g| p.at(g) * p.at(g)).sum();
        }
        parts.push((b, v));
    }
    Ok(comm.box_ordered_sums(&parts)?.map(f64::sqrt))
}

/// Fluid step from the advective limit `cfl * dx / max(|u|, U_in, tiny)`,
/// capped by the configured maximum and by the explicit viscous limit.
pub fn fluid_dt_for_speed(max_speed: f64, dx: f64, cfg: &SimConfig) -> f64 {
    let s = max_speed.max(cfg.fluid.inlet_velocity).max(1e-12);
    let viscous = dx * dx / (6.0 * cfg.fluid.kinematic_viscosity());
    (cfg.cfl * dx / s).min(cfg.dt_fluid_max).min(viscous)
}

pub fn fluid_dt(state: &FluidState, cfg: &SimConfig, comm: &mut Comm) -> Result<f64> {
    let m = comm.all_max(state.max_speed())?;
    if !m.is_finite() {
        return Err(Error::numerical("non-finite gas velocity"));
    }
    Ok(fluid_dt_for_speed(m, state.dx, cfg))
}

/// One fluid step of length `dt`. Expects freshly deposited interiors of
/// `eps`, `drag_coef` and `drag_src`; `inlet` is the current superficial
/// inlet velocity.
pub fn advance_fluid(
    state: &mut FluidState,
    props: &FluidProps,
    inlet: f64,
    dt: f64,
    tol: f64,
    max_iters: usize,
    comm: &mut Comm,
) -> Result<ProjectionReport> {
    if !(dt > 0.0) {
        return Err(Error::numerical(format!("fluid step must be positive, got {dt:e}")));
    }
    state.fill_cell_halos(comm)?;
    state.update_eps_faces();
    let star = state.predict(props, inlet, dt);
    let report = state.project(star, props.density, dt, tol, max_iters, comm)?;
    if !(report.divergence_after.is_finite()) {
        return Err(Error::numerical("non-finite gas velocity after projection"));
    }
    state.eps_prev.clone_from(&state.eps);
    state.has_prev = true;
    state.last = report;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DomainSpec;
    use crate::decomp::{decompose, run_ranks, sfc_assign};

    fn setup(cells: [usize; 3], tiling: [usize; 3], nranks: usize) -> BoxDecomposition {
        let h = 2e-4;
        let g = DomainSpec::new([h * cells[0] as f64, h * cells[1] as f64, h * cells[2] as f64], cells);
        let d = decompose(&g, tiling).unwrap();
        let owner = sfc_assign(&d, nranks).unwrap();
        d.with_owners(owner, nranks)
    }

    fn wavy_eps(g: [i64; 3]) -> f64 {
        0.55 + 0.3 * ((g[0] as f64 * 0.9).sin() * (g[1] as f64 * 0.4).cos() * (g[2] as f64 * 0.7 + 0.3).sin())
    }

    #[test]
    fn plug_flow_is_steady() {
        let d = setup([8, 12, 8], [4, 6, 4], 1);
        let mut c = Comm::solo();
        let mut st = FluidState::new(&d, 0, WallBc::FreeSlip);
        let u_in = 0.015;
        st.set_uniform_velocity([0.0, u_in, 0.0], &mut c).unwrap();
        let props = FluidProps::default();
        for _ in 0..5 {
            let r = advance_fluid(&mut st, &props, u_in, 1e-4, 1e-11, 5000, &mut c).unwrap();
            assert_eq!(r.divergence_before, 0.0);
        }
        for a in 0..3 {
            for p in &st.vel[a].patches {
                for g in p.interior() {
                    let want = if a == 1 { u_in } else { 0.0 };
                    assert!((p.at(g) - want).abs() <= 1e-10, "{a} {g:?} {}", p.at(g));
                }
            }
        }
    }

    #[test]
    fn uniform_field_advects_bit_unchanged() {
        let d = setup([6, 8, 6], [3, 4, 3], 1);
        let mut c = Comm::solo();
        let mut st = FluidState::new(&d, 0, WallBc::FreeSlip);
        st.set_uniform_velocity([0.0, 0.02, 0.0], &mut c).unwrap();
        st.fill_cell_halos(&mut c).unwrap();
        let star = st.predict(&FluidProps::default(), 0.02, 1e-4);
        for a in 0..3 {
            for (p, q) in star[a].patches.iter().zip(&st.vel[a].patches) {
                for g in p.interior() {
                    assert_eq!(p.at(g).to_bits(), q.at(g).to_bits());
                }
            }
        }
    }

    fn stirred_state(d: &BoxDecomposition, rank: usize, c: &mut Comm) -> FluidState {
        let mut st = FluidState::new(d, rank, WallBc::NoSlip);
        st.eps.set_with(wavy_eps);
        for a in 0..3 {
            st.vel[a].set_with(|g| 0.05 * ((g[0] * 3 + g[1] * 5 + g[2] * 7 + a as i64) as f64 * 0.61).sin());
        }
        for p in &mut st.drag_coef.patches {
            for g in p.interior().collect::<Vec<_>>() {
                p.set(g, 200.0 * (1.0 - wavy_eps(g)));
            }
        }
        for (a, f) in st.drag_src.iter_mut().enumerate() {
            for p in &mut f.patches {
                for g in p.interior().collect::<Vec<_>>() {
                    p.set(g, if a == 1 { -2.0 * (1.0 - wavy_eps(g)) } else { 0.0 });
                }
            }
        }
        st.fill_velocity_halos(c).unwrap();
        st
    }

    #[test]
    fn projection_leaves_tolerance_level_divergence() {
        let d = setup([8, 16, 8], [4, 8, 4], 1);
        let mut c = Comm::solo();
        let mut st = stirred_state(&d, 0, &mut c);
        let props = FluidProps::default();
        for step in 0..3 {
            // vary the gas fraction so the rate term is exercised
            st.eps.set_with(|g| wavy_eps(g) - 0.01 * step as f64);
            let (prev, had) = (st.eps_prev.clone(), st.has_prev);
            let r = advance_fluid(&mut st, &props, 0.015, 1e-4, 1e-11, 5000, &mut c).unwrap();
            assert!(r.relative_divergence() <= 1e-10, "step {step}: {r:?}");
            // independent recomputation from the stored state
            let (now, has) = (std::mem::replace(&mut st.eps_prev, prev), st.has_prev);
            st.has_prev = had;
            let post = st.mass_residual(&st.vel, 1e-4);
            st.eps_prev = now;
            st.has_prev = has;
            let n: f64 = post.patches.iter().flat_map(|p| p.interior().map(|g| p.at(g).powi(2))).sum();
            assert!(n.sqrt() <= 1e-10 * r.divergence_before);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let d = setup([8, 12, 8], [4, 6, 4], 1);
        let mut c = Comm::solo();
        let mut st = stirred_state(&d, 0, &mut c);
        let tol = 1e-11;
        st.reproject(1.0, 1e-4, tol, 5000, &mut c).unwrap();
        let once = st.vel.clone();
        st.reproject(1.0, 1e-4, tol, 5000, &mut c).unwrap();
        let umax = st.max_speed();
        for a in 0..3 {
            for (p, q) in once[a].patches.iter().zip(&st.vel[a].patches) {
                for g in p.interior() {
                    assert!((p.at(g) - q.at(g)).abs() <= 10.0 * tol * umax, "{a} {g:?}");
                }
            }
        }
    }

    #[test]
    fn gas_mass_balance_each_step() {
        let d = setup([8, 16, 8], [4, 8, 4], 1);
        let mut c = Comm::solo();
        let mut st = stirred_state(&d, 0, &mut c);
        let props = FluidProps::default();
        let dt = 1e-4;
        let mut prev_volume = st.gas_volume(&mut c).unwrap();
        for step in 0..4 {
            st.eps.set_with(|g| wavy_eps(g) * (1.0 - 0.02 * step as f64));
            advance_fluid(&mut st, &props, 0.015, dt, 1e-12, 5000, &mut c).unwrap();
            let volume = st.gas_volume(&mut c).unwrap();
            let inflow = st.net_inflow(&mut c).unwrap();
            let rate = if step == 0 { 0.0 } else { (volume - prev_volume) / dt };
            let scale: f64 = 0.015 * 16e-8 * 64.0;
            assert!((inflow - rate).abs() <= 1e-9 * scale.max(rate.abs()), "step {step}: {inflow:e} vs {rate:e}");
            prev_volume = volume;
        }
    }

    #[test]
    fn fluid_dt_formula() {
        let cfg = SimConfig::default();
        let dx = 2e-4;
        let quiescent = (0.5_f64 * dx / 0.015).min(cfg.dt_fluid_max);
        assert_eq!(fluid_dt_for_speed(0.0, dx, &cfg), quiescent);
        let mut big = cfg.clone();
        big.dt_fluid_max = 1.0;
        assert!((fluid_dt_for_speed(1.0, dx, &big) - 1e-4).abs() < 1e-18);
        let mut c2 = big.clone();
        c2.cfl = 1.0;
        assert!((fluid_dt_for_speed(1.0, dx, &c2) - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn advance_is_rank_invariant() {
        let mut results: Vec<Vec<([i64; 3], usize, u64)>> = Vec::new();
        for nr in [1, 2, 4] {
            let out = run_ranks(nr, |c| {
                let d = setup([8, 12, 8], [4, 6, 4], c.size());
                let mut st = stirred_state(&d, c.rank(), c);
                let props = FluidProps::default();
                for _ in 0..3 {
                    let dt = fluid_dt(&st, &SimConfig::default(), c)?;
                    advance_fluid(&mut st, &props, 0.015, dt, 1e-11, 5000, c)?;
                }
                let mut v = Vec::new();
                for a in 0..3 {
                    for p in &st.vel[a].patches {
                        for g in p.interior() {
                            v.push((g, a, p.at(g).to_bits()));
                        }
                    }
                }
                Ok(v)
            })
            .unwrap();
            let mut all: Vec<_> = out.into_iter().flatten().collect();
            all.sort();
            all.dedup();
            results.push(all);
        }
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
    }
}

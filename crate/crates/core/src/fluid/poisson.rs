//! Variable-coefficient pressure Poisson solve with Jacobi-preconditioned
//! conjugate gradients over box patches.
//!
//! The operator is the symmetric positive (semi-)definite 7-point stencil
//! `(A x)_c = sum over the six faces f of c: k_f (x_c - x_nb)`, where `k_f`
//! is a face coefficient (zero on Neumann faces) and the neighbour across a
//! Dirichlet-zero face is the odd mirror `-x_c`. Dot products are reduced
//! per box in ascending box order, so iterates do not depend on how boxes
//! are distributed over ranks.

use crate::decomp::{BoxDecomposition, Comm, HaloPlan};
use crate::error::{Error, Result};
use crate::fluid::patch::{Bc, BoxField, Stagger};

#[derive(Clone, Debug)]
pub struct PoissonOperator {
    /// Face coefficients, one field per axis (`Stagger::Face(a)`).
    pub coef: [BoxField; 3],
    pub diag: BoxField,
    pub plan: HaloPlan,
    pub bc: Bc,
    /// No Dirichlet face anywhere: the operator has the constants as its
    /// null space and right-hand sides are projected to zero mean.
    pub singular: bool,
    cells: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub phi: BoxField,
    pub iterations: usize,
    /// Final true relative residual |b - A x| / |b|.
    pub residual: f64,
    /// Recursive relative residual after each iteration.
    pub history: Vec<f64>,
    /// Energy functional `x.A x / 2 - b.x` after each iteration; CG
    /// minimises it over growing Krylov spaces, so it never increases.
    pub energy: Vec<f64>,
}

impl PoissonOperator {
    /// An operator with zero coefficients; call [`PoissonOperator::set_weights`].
    /// Faces on lateral walls and on the bottom (inlet) are Neumann; the top
    /// face is Dirichlet zero unless `top_dirichlet` is false.
    pub fn new(decomp: &BoxDecomposition, rank: usize, top_dirichlet: bool) -> PoissonOperator {
        let bc = Bc { lo: [1.0; 3], hi: [1.0, if top_dirichlet { -1.0 } else { 1.0 }, 1.0] };
        PoissonOperator {
            coef: [
                BoxField::new(decomp, rank, Stagger::Face(0)),
                BoxField::new(decomp, rank, Stagger::Face(1)),
                BoxField::new(decomp, rank, Stagger::Face(2)),
            ],
            diag: BoxField::new(decomp, rank, Stagger::Cell),
            plan: HaloPlan::new(decomp, rank, Stagger::Cell),
            bc,
            singular: !top_dirichlet,
            cells: decomp.cells,
        }
    }

    pub fn from_cell_weights(
        decomp: &BoxDecomposition,
        rank: usize,
        eps: &BoxField,
        top_dirichlet: bool,
    ) -> PoissonOperator {
        let mut op = PoissonOperator::new(decomp, rank, top_dirichlet);
        op.set_weights(eps);
        op
    }

    /// Face coefficients are the mean of the two adjacent cell weights;
    /// `eps` must have filled halos.
    pub fn set_weights(&mut self, eps: &BoxField) {
        let cells = self.cells;
        let top_dirichlet = !self.singular;
        for (a, cf) in self.coef.iter_mut().enumerate() {
            let n = cells[a] as i64;
            for (p, pe) in cf.patches.iter_mut().zip(&eps.patches) {
                for g in p.interior().collect::<Vec<_>>() {
                    let neumann = g[a] == 0 || (g[a] == n && !(a == 1 && top_dirichlet));
                    let v = if neumann {
                        0.0
                    } else {
                        let mut gm = g;
                        gm[a] -= 1;
                        0.5 * (pe.at(gm) + pe.at(g))
                    };
                    p.set(g, v);
                }
            }
        }
        let coef = &self.coef;
        for (pi, p) in self.diag.patches.iter_mut().enumerate() {
            for g in p.interior().collect::<Vec<_>>() {
                let mut d = 0.0;
                for (a, cf) in coef.iter().enumerate() {
                    let mut gp = g;
                    gp[a] += 1;
                    let lo = cf.patches[pi].at(g);
                    let hi = cf.patches[pi].at(gp);
                    let dirichlet_hi = a == 1 && top_dirichlet && gp[1] == cells[1] as i64;
                    d += lo + if dirichlet_hi { 2.0 * hi } else { hi };
                }
                p.set(g, d);
            }
        }
    }

    /// `out = A x` on interiors; `x` must have filled halos.
    pub fn apply(&self, x: &BoxField, out: &mut BoxField) {
        for (pi, po) in out.patches.iter_mut().enumerate() {
            let px = &x.patches[pi];
            let s = px.strides();
            let cs: [&crate::fluid::patch::Patch; 3] =
                [&self.coef[0].patches[pi], &self.coef[1].patches[pi], &self.coef[2].patches[pi]];
            for g in px.interior().collect::<Vec<_>>() {
                let o = px.off(g);
                let xc = px.data[o];
                let mut acc = 0.0;
                for a in 0..3 {
                    let mut gp = g;
                    gp[a] += 1;
                    let klo = cs[a].at(g);
                    let khi = cs[a].at(gp);
                    acc += klo * (xc - px.data[o - s[a]]) + khi * (xc - px.data[o + s[a]]);
                }
                po.data[o] = acc;
            }
        }
    }

    fn fill(&self, x: &mut BoxField, comm: &mut Comm) -> Result<()> {
        self.plan.fill(&mut [x], &[self.bc], comm)
    }
}

fn box_dots<const N: usize>(
    boxes: &[usize],
    pairs: [(&BoxField, &BoxField); N],
    comm: &mut Comm,
) -> Result<[f64; N]> {
    let mut parts = Vec::with_capacity(boxes.len());
    for (pi, &b) in boxes.iter().enumerate() {
        let mut v = [0.0; N];
        for (n, (x, y)) in pairs.iter().enumerate() {
            let (px, py) = (&x.patches[pi], &y.patches[pi]);
            let mut s = 0.0;
            for g in px.interior() {
                let o = px.off(g);
                s += px.data[o] * py.data[o];
            }
            v[n] = s;
        }
        parts.push((b, v));
    }
    comm.box_ordered_sums(&parts)
}

fn box_sums(field: &BoxField, comm: &mut Comm) -> Result<(f64, f64)> {
    let mut parts = Vec::with_capacity(field.boxes.len());
    for (p, &b) in field.patches.iter().zip(&field.boxes) {
        let mut s = 0.0;
        let mut n = 0.0;
        for g in p.interior() {
            s += p.at(g);
            n += 1.0;
        }
        parts.push((b, [s, n]));
    }
    let [s, n] = comm.box_ordered_sums(&parts)?;
    Ok((s, n))
}

fn shift_interior(field: &mut BoxField, c: f64) {
    for p in &mut field.patches {
        for g in p.interior().collect::<Vec<_>>() {
            let o = p.off(g);
            p.data[o] -= c;
        }
    }
}

fn axpy_interior(y: &mut BoxField, alpha: f64, x: &BoxField) {
    for (py, px) in y.patches.iter_mut().zip(&x.patches) {
        for g in px.interior() {
            let o = px.off(g);
            py.data[o] += alpha * px.data[o];
        }
    }
}

/// Solves `A phi = rhs` to relative residual `tol`. The returned residual
/// is recomputed from scratch; if it misses the tolerance after the
/// recursive residual converged, iteration restarts from the current iterate.
pub fn solve_poisson(
    op: &PoissonOperator,
    rhs: &BoxField,
    tol: f64,
    max_iters: usize,
    comm: &mut Comm,
) -> Result<PoissonSolution> {
    let boxes = rhs.boxes.clone();
    let mut b = rhs.clone();
    if op.singular {
        let (s, n) = box_sums(&b, comm)?;
        shift_interior(&mut b, s / n);
    }
    let mut x = BoxField::new_like(&b);
    let [bb] = box_dots(&boxes, [(&b, &b)], comm)?;
    let bnorm = bb.sqrt();
    let mut history = Vec::new();
    let mut energy = Vec::new();
    if bnorm == 0.0 {
        op.fill(&mut x, comm)?;
        return Ok(PoissonSolution { phi: x, iterations: 0, residual: 0.0, history, energy });
    }
    let mut r = b.clone();
    let mut z = BoxField::new_like(&b);
    let mut p = BoxField::new_like(&b);
    let mut q = BoxField::new_like(&b);
    let mut iterations = 0;
    loop {
        precondition(op, &r, &mut z);
        copy_interior(&mut p, &z);
        let [mut rz] = box_dots(&boxes, [(&r, &z)], comm)?;
        let mut converged = false;
        while iterations < max_iters {
            op.fill(&mut p, comm)?;
            op.apply(&p, &mut q);
            let [pq] = box_dots(&boxes, [(&p, &q)], comm)?;
            if pq <= 0.0 {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: history.last().copied().unwrap_or(1.0),
                    tail: tail(&history),
                });
            }
            let alpha = rz / pq;
            axpy_interior(&mut x, alpha, &p);
            axpy_interior(&mut r, -alpha, &q);
            precondition(op, &r, &mut z);
            let br = sum_fields(&b, &r);
            let [rr, rz_new, xbr] = box_dots(&boxes, [(&r, &r), (&r, &z), (&x, &br)], comm)?;
            iterations += 1;
            history.push(rr.sqrt() / bnorm);
            energy.push(-0.5 * xbr);
            if rr.sqrt() <= tol * bnorm {
                converged = true;
                break;
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for (pp, pz) in p.patches.iter_mut().zip(&z.patches) {
                for g in pz.interior() {
                    let o = pz.off(g);
                    pp.data[o] = pz.data[o] + beta * pp.data[o];
                }
            }
        }
        // true residual
        op.fill(&mut x, comm)?;
        op.apply(&x, &mut q);
        for ((pr, pb), pq) in r.patches.iter_mut().zip(&b.patches).zip(&q.patches) {
            for g in pb.interior() {
                let o = pb.off(g);
                pr.data[o] = pb.data[o] - pq.data[o];
            }
        }
        let [rr] = box_dots(&boxes, [(&r, &r)], comm)?;
        let residual = rr.sqrt() / bnorm;
        if residual <= tol {
            if op.singular {
                let (s, n) = box_sums(&x, comm)?;
                shift_interior(&mut x, s / n);
                op.fill(&mut x, comm)?;
            }
            return Ok(PoissonSolution { phi: x, iterations, residual, history, energy });
        }
        if !converged || iterations >= max_iters {
            return Err(Error::NonConvergence { iterations, residual, tail: tail(&history) });
        }
    }
}

fn tail(h: &[f64]) -> Vec<f64> {
    h[h.len().saturating_sub(10)..].to_vec()
}

fn precondition(op: &PoissonOperator, r: &BoxField, z: &mut BoxField) {
    for ((pz, pr), pd) in z.patches.iter_mut().zip(&r.patches).zip(&op.diag.patches) {
        for g in pr.interior() {
            let o = pr.off(g);
            let d = pd.data[o];
            pz.data[o] = if d > 0.0 { pr.data[o] / d } else { 0.0 };
        }
    }
}

fn copy_interior(dst: &mut BoxField, src: &BoxField) {
    for (pd, ps) in dst.patches.iter_mut().zip(&src.patches) {
        for g in ps.interior() {
            let o = ps.off(g);
            pd.data[o] = ps.data[o];
        }
    }
}

fn sum_fields(a: &BoxField, b: &BoxField) -> BoxField {
    let mut out = a.clone();
    for (po, pb) in out.patches.iter_mut().zip(&b.patches) {
        for (x, y) in po.data.iter_mut().zip(&pb.data) {
            *x += y;
        }
    }
    out
}

impl BoxField {
    /// Zero field with the same layout.
    pub fn new_like(f: &BoxField) -> BoxField {
        let mut out = f.clone();
        out.fill(0.0);
        out
    }
}

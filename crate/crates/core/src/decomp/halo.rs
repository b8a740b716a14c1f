//! One-point halo exchange for per-box grid fields.
//!
//! A [`HaloPlan`] is computed identically on every rank from the global
//! decomposition, so both ends of each message agree on its layout without
//! negotiating. Halo points inside the domain are copied from the box whose
//! interior holds them; points outside the domain are mirrored with a
//! per-side sign. The reverse direction ([`HaloPlan::reduce`]) sums partial
//! values that boxes accumulated into their halos back into the owning
//! interior, adding contributions in ascending box order.

use crate::decomp::comm::{tags, Comm};
use crate::decomp::wire::{decode_f64s, encode_f64s};
use crate::decomp::BoxDecomposition;
use crate::error::Result;
use crate::fluid::patch::{Bc, BoxField, Patch, Stagger};

#[derive(Clone, Copy, Debug)]
enum Source {
    Local { patch: u32, off: u32 },
    Remote { rank: u32, idx: u32 },
}

#[derive(Clone, Copy, Debug)]
struct Mirror {
    patch: u32,
    dst: u32,
    src: u32,
    /// Bit `2*axis + hi_side` set for every axis reflected.
    sides: u8,
}

#[derive(Clone, Debug)]
struct Contribution {
    from_box: usize,
    /// (offset in the receiving patch, where the partial value lives)
    points: Vec<(u32, Source)>,
}

#[derive(Clone, Debug)]
pub struct HaloPlan {
    pub stagger: Stagger,
    rank: usize,
    nranks: usize,
    boxes: Vec<usize>,
    local: Vec<(u32, u32, u32, u32)>,
    sends: Vec<Vec<(u32, u32)>>,
    recvs: Vec<Vec<(u32, u32)>>,
    mirrors: Vec<Mirror>,
    rsends: Vec<Vec<(u32, u32)>>,
    rrecv_counts: Vec<usize>,
    contribs: Vec<Vec<Contribution>>,
}

fn source_box(decomp: &BoxDecomposition, stagger: Stagger, g: [i64; 3]) -> usize {
    let mut bc = [0usize; 3];
    for (a, c) in bc.iter_mut().enumerate() {
        *c = stagger.owning_box_coord(decomp, a, g[a]);
    }
    decomp.box_index(bc)
}

fn in_range(decomp: &BoxDecomposition, stagger: Stagger, g: [i64; 3]) -> bool {
    (0..3).all(|a| g[a] >= 0 && g[a] < stagger.extent(decomp.cells, a) as i64)
}

impl HaloPlan {
    pub fn new(decomp: &BoxDecomposition, rank: usize, stagger: Stagger) -> HaloPlan {
        let nr = decomp.nranks;
        let boxes = decomp.boxes_of(rank);
        let local_idx = |b: usize| boxes.binary_search(&b).expect("box not owned") as u32;
        let mut plan = HaloPlan {
            stagger,
            rank,
            nranks: nr,
            boxes: boxes.clone(),
            local: Vec::new(),
            sends: vec![Vec::new(); nr],
            recvs: vec![Vec::new(); nr],
            mirrors: Vec::new(),
            rsends: vec![Vec::new(); nr],
            rrecv_counts: vec![0; nr],
            contribs: vec![Vec::new(); boxes.len()],
        };
        let mut received_from = vec![0u32; nr];
        for (b, gb) in decomp.boxes.iter().enumerate() {
            let pb = Patch::new(stagger, gb);
            let own_b = decomp.owner[b];
            let mut pending: Vec<(usize, u32, Source)> = Vec::new();
            for o in 0..pb.data.len() {
                let g = pb.global(o);
                if pb.is_interior(g) {
                    continue;
                }
                if !in_range(decomp, stagger, g) {
                    if own_b == rank {
                        let mut m = g;
                        let mut sides = 0u8;
                        for a in 0..3 {
                            let n = stagger.extent(decomp.cells, a) as i64;
                            if g[a] < 0 || g[a] >= n {
                                sides |= 1 << (2 * a + usize::from(g[a] >= n));
                                m[a] = stagger.mirror(decomp.cells, a, g[a]);
                            }
                        }
                        plan.mirrors.push(Mirror { patch: local_idx(b), dst: o as u32, src: pb.off(m) as u32, sides });
                    }
                    continue;
                }
                let a = source_box(decomp, stagger, g);
                let own_a = decomp.owner[a];
                let pa_off = Patch::new_offset(stagger, &decomp.boxes[a], g) as u32;
                // forward: B's halo point is copied from A's interior
                if own_b == rank && own_a == rank {
                    plan.local.push((local_idx(b), o as u32, local_idx(a), pa_off));
                } else if own_a == rank {
                    plan.sends[own_b].push((local_idx(a), pa_off));
                } else if own_b == rank {
                    plan.recvs[own_a].push((local_idx(b), o as u32));
                }
                // reverse: B's partial at that point is added into A's interior
                if own_a == rank {
                    let src = if own_b == rank {
                        Source::Local { patch: local_idx(b), off: o as u32 }
                    } else {
                        let idx = received_from[own_b];
                        received_from[own_b] += 1;
                        Source::Remote { rank: own_b as u32, idx }
                    };
                    pending.push((a, pa_off, src));
                } else if own_b == rank {
                    plan.rsends[own_a].push((local_idx(b), o as u32));
                }
            }
            pending.sort_by_key(|p| p.0);
            for (a, off, src) in pending {
                let list = &mut plan.contribs[local_idx(a) as usize];
                match list.last_mut() {
                    Some(c) if c.from_box == b => c.points.push((off, src)),
                    _ => list.push(Contribution { from_box: b, points: vec![(off, src)] }),
                }
            }
        }
        for (r, n) in received_from.iter().enumerate() {
            plan.rrecv_counts[r] = *n as usize;
        }
        plan
    }

    pub fn boxes(&self) -> &[usize] {
        &self.boxes
    }

    /// Number of halo values this rank sends per field per fill.
    pub fn n_sent(&self) -> usize {
        self.sends.iter().map(Vec::len).sum()
    }

    /// Refreshes every halo point of each field: in-domain points from the
    /// owning interior (local copy or message), out-of-domain points by
    /// signed mirroring. Interiors are untouched.
    pub fn fill(&self, fields: &mut [&mut BoxField], bcs: &[Bc], comm: &mut Comm) -> Result<()> {
        assert_eq!(fields.len(), bcs.len());
        for f in fields.iter() {
            assert_eq!(f.stagger, self.stagger, "field stagger does not match plan");
            assert_eq!(f.boxes, self.boxes, "field boxes do not match plan");
        }
        let nf = fields.len();
        if self.nranks > 1 {
            let mut out: Vec<Vec<u8>> = vec![Vec::new(); self.nranks];
            for (r, list) in self.sends.iter().enumerate() {
                if r == self.rank {
                    continue;
                }
                let mut vals = Vec::with_capacity(list.len() * nf);
                for &(p, o) in list {
                    for f in fields.iter() {
                        vals.push(f.patches[p as usize].data[o as usize]);
                    }
                }
                out[r] = encode_f64s(&vals);
            }
            let incoming = comm.alltoall(tags::HALO, out)?;
            for (r, list) in self.recvs.iter().enumerate() {
                if r == self.rank {
                    continue;
                }
                let vals = decode_f64s(&incoming[r], list.len() * nf, r, self.rank)?;
                for (k, &(p, o)) in list.iter().enumerate() {
                    for (n, f) in fields.iter_mut().enumerate() {
                        f.patches[p as usize].data[o as usize] = vals[k * nf + n];
                    }
                }
            }
        }
        for &(dp, doff, sp, soff) in &self.local {
            for f in fields.iter_mut() {
                let v = f.patches[sp as usize].data[soff as usize];
                f.patches[dp as usize].data[doff as usize] = v;
            }
        }
        for m in &self.mirrors {
            for (f, bc) in fields.iter_mut().zip(bcs) {
                let mut s = 1.0;
                for a in 0..3 {
                    for hi in [false, true] {
                        if m.sides & (1 << (2 * a + usize::from(hi))) != 0 {
                            s *= bc.sign(a, hi);
                        }
                    }
                }
                let p = &mut f.patches[m.patch as usize];
                p.data[m.dst as usize] = s * p.data[m.src as usize];
            }
        }
        Ok(())
    }

    /// Sums the partial values each box accumulated at in-domain points
    /// (interior and halo) into the interior of the box that owns each
    /// point. Contributions to a point are added in ascending box order.
    /// Halo storage is zeroed afterwards; run [`HaloPlan::fill`] to refresh it.
    pub fn reduce(&self, fields: &mut [&mut BoxField], comm: &mut Comm) -> Result<()> {
        let nf = fields.len();
        let mut incoming: Vec<Vec<f64>> = vec![Vec::new(); self.nranks];
        if self.nranks > 1 {
            let mut out: Vec<Vec<u8>> = vec![Vec::new(); self.nranks];
            for (r, list) in self.rsends.iter().enumerate() {
                if r == self.rank {
                    continue;
                }
                let mut vals = Vec::with_capacity(list.len() * nf);
                for &(p, o) in list {
                    for f in fields.iter() {
                        vals.push(f.patches[p as usize].data[o as usize]);
                    }
                }
                out[r] = encode_f64s(&vals);
            }
            let raw = comm.alltoall(tags::DEPOSIT, out)?;
            for r in 0..self.nranks {
                if r != self.rank {
                    incoming[r] = decode_f64s(&raw[r], self.rrecv_counts[r] * nf, r, self.rank)?;
                }
            }
        }
        let mut totals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nf);
        for f in fields.iter() {
            let mut per_patch = Vec::with_capacity(self.boxes.len());
            for (pi, &a) in self.boxes.iter().enumerate() {
                let pa = &f.patches[pi];
                let mut out = vec![0.0; pa.data.len()];
                let mut own_done = false;
                let add_own = |out: &mut Vec<f64>| {
                    for g in pa.interior() {
                        let o = pa.off(g);
                        out[o] += pa.data[o];
                    }
                };
                for c in &self.contribs[pi] {
                    if !own_done && c.from_box > a {
                        add_own(&mut out);
                        own_done = true;
                    }
                    for &(off, src) in &c.points {
                        let v = match src {
                            Source::Local { patch, off } => f.patches[patch as usize].data[off as usize],
                            Source::Remote { rank, idx } => {
                                let n = totals.len();
                                incoming[rank as usize][idx as usize * nf + n]
                            }
                        };
                        out[off as usize] += v;
                    }
                }
                if !own_done {
                    add_own(&mut out);
                }
                per_patch.push(out);
            }
            totals.push(per_patch);
        }
        for (f, t) in fields.iter_mut().zip(totals) {
            for (p, data) in f.patches.iter_mut().zip(t) {
                p.data = data;
            }
        }
        Ok(())
    }
}

impl Patch {
    /// Storage offset of global index `g` in the patch of box `b`, without
    /// allocating the patch.
    pub fn new_offset(stagger: Stagger, b: &crate::decomp::GridBox, g: [i64; 3]) -> usize {
        let mut off = 0usize;
        for a in 0..3 {
            let lo = b.lo[a] as i64 - 1;
            let dim = (b.hi[a] - b.lo[a]) + 2 + usize::from(stagger.is_face_axis(a));
            debug_assert!(g[a] >= lo && g[a] < lo + dim as i64);
            off = off * dim + (g[a] - lo) as usize;
        }
        off
    }
}

/// Refreshes the halos of several same-stagger fields in one exchange.
pub fn exchange_face_halos(fields: &mut [&mut BoxField], bcs: &[Bc], plan: &HaloPlan, comm: &mut Comm) -> Result<()> {
    plan.fill(fields, bcs, comm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DomainSpec;
    use crate::decomp::{decompose, run_ranks, sfc_assign};

    fn decomp(cells: [usize; 3], tiling: [usize; 3], nranks: usize) -> BoxDecomposition {
        let g = DomainSpec::new([cells[0] as f64, cells[1] as f64, cells[2] as f64], cells);
        let d = decompose(&g, tiling).unwrap();
        let owner = sfc_assign(&d, nranks).unwrap();
        d.with_owners(owner, nranks)
    }

    const STAGGERS: [Stagger; 4] = [Stagger::Cell, Stagger::Face(0), Stagger::Face(1), Stagger::Face(2)];

    #[test]
    fn new_offset_matches_patch() {
        let d = decomp([8, 4, 6], [4, 2, 3], 1);
        for s in STAGGERS {
            for b in &d.boxes {
                let p = Patch::new(s, b);
                for o in 0..p.data.len() {
                    assert_eq!(Patch::new_offset(s, b, p.global(o)), o);
                }
            }
        }
    }

    #[test]
    fn single_box_interior_untouched() {
        let d = decomp([4, 4, 4], [4, 4, 4], 1);
        for s in STAGGERS {
            let plan = HaloPlan::new(&d, 0, s);
            assert_eq!(plan.n_sent(), 0);
            assert!(plan.local.is_empty());
            let mut f = BoxField::new(&d, 0, s);
            f.set_with(|g| (g[0] * 100 + g[1] * 10 + g[2]) as f64);
            let before = f.clone();
            plan.fill(&mut [&mut f], &[Bc::EVEN], &mut Comm::solo()).unwrap();
            for g in before.patches[0].interior() {
                assert_eq!(f.patches[0].at(g), before.patches[0].at(g));
            }
        }
    }

    #[test]
    fn constant_field_fills_constant() {
        for nr in [1, 2, 4] {
            run_ranks(nr, |c| {
                let d = decomp([8, 4, 8], [4, 2, 4], c.size());
                for s in STAGGERS {
                    let plan = HaloPlan::new(&d, c.rank(), s);
                    let mut f = BoxField::new(&d, c.rank(), s);
                    for p in &mut f.patches {
                        for g in p.interior().collect::<Vec<_>>() {
                            p.set(g, 3.25);
                        }
                    }
                    plan.fill(&mut [&mut f], &[Bc::EVEN], c)?;
                    for p in &f.patches {
                        assert!(p.data.iter().all(|&v| v == 3.25));
                    }
                }
                Ok(())
            })
            .unwrap();
        }
    }

    #[test]
    fn linear_field_across_two_boxes() {
        run_ranks(2, |c| {
            let d = decomp([8, 4, 4], [4, 4, 4], 2);
            for s in STAGGERS {
                let plan = HaloPlan::new(&d, c.rank(), s);
                let mut f = BoxField::new(&d, c.rank(), s);
                let lin = |g: [i64; 3]| 0.5 + 2.0 * g[0] as f64 - 0.25 * g[1] as f64;
                for p in &mut f.patches {
                    for g in p.interior().collect::<Vec<_>>() {
                        p.set(g, lin(g));
                    }
                }
                plan.fill(&mut [&mut f], &[Bc::EVEN], c)?;
                for p in &f.patches {
                    for o in 0..p.data.len() {
                        let g = p.global(o);
                        if in_range(&d, s, g) {
                            assert_eq!(p.data[o], lin(g), "{s:?} {g:?}");
                        }
                    }
                }
            }
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn odd_mirror_negates() {
        let d = decomp([4, 4, 4], [2, 2, 2], 1);
        let plan = HaloPlan::new(&d, 0, Stagger::Cell);
        let mut f = BoxField::new(&d, 0, Stagger::Cell);
        f.set_with(|g| 1.0 + g[0] as f64);
        let bc = Bc { lo: [-1.0, 1.0, 1.0], hi: [1.0, -1.0, 1.0] };
        plan.fill(&mut [&mut f], &[bc], &mut Comm::solo()).unwrap();
        let p = &f.patches[0];
        assert_eq!(p.at([-1, 0, 0]), -1.0);
        assert_eq!(p.at([-1, -1, 0]), -1.0);
        let top = &f.patches[f.patch_of_box(d.box_index([0, 1, 0])).unwrap()];
        assert_eq!(top.at([1, 4, 1]), -2.0);
        assert_eq!(top.at([-1, 4, 1]), 1.0);
    }

    fn scrambled(g: [i64; 3], b: usize) -> f64 {
        let h = (g[0] * 7919 + g[1] * 104729 + g[2] * 1299709 + b as i64 * 15485863) as f64;
        (h * 1e-3).sin() * 1e-7
    }

    #[test]
    fn reduce_sums_every_box_partial() {
        let cells = [6, 4, 6];
        let tiling = [2, 2, 3];
        let mut results = Vec::new();
        for nr in [1, 2, 4] {
            let out = run_ranks(nr, |c| {
                let d = decomp(cells, tiling, c.size());
                let plan = HaloPlan::new(&d, c.rank(), Stagger::Cell);
                let mut f = BoxField::new(&d, c.rank(), Stagger::Cell);
                for (p, &b) in f.patches.iter_mut().zip(&d.boxes_of(c.rank())) {
                    for o in 0..p.data.len() {
                        p.data[o] = scrambled(p.global(o), b);
                    }
                }
                plan.reduce(&mut [&mut f], c)?;
                let mut vals = Vec::new();
                for p in &f.patches {
                    for g in p.interior() {
                        vals.push((g, p.at(g)));
                    }
                }
                Ok(vals)
            })
            .unwrap();
            let mut all: Vec<_> = out.into_iter().flatten().collect();
            all.sort_by_key(|e| e.0);
            results.push(all);
        }
        // oracle: every box that stores the point, in ascending box order
        let d = decomp(cells, tiling, 1);
        for (g, v) in &results[0] {
            let mut s = 0.0;
            for (b, gb) in d.boxes.iter().enumerate() {
                if Patch::new(Stagger::Cell, gb).stores(*g) {
                    s += scrambled(*g, b);
                }
            }
            assert_eq!(v.to_bits(), s.to_bits(), "{g:?}");
        }
        for r in &results[1..] {
            assert_eq!(r.len(), results[0].len());
            for (a, b) in r.iter().zip(&results[0]) {
                assert_eq!(a.0, b.0);
                assert_eq!(a.1.to_bits(), b.1.to_bits());
            }
        }
    }
}

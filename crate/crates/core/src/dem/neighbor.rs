//! Cell-binned half neighbour list with a per-particle incidence index.

use crate::particles::ParticleStore;
use crate::vec3::Vec3;

#[derive(Clone, Debug, Default)]
pub struct NeighborList {
    /// CSR over owned particles: partners of `i` are
    /// `partners[offsets[i]..offsets[i + 1]]`, local indices `j > i`
    /// (ghosts included), sorted ascending.
    pub offsets: Vec<usize>,
    pub partners: Vec<usize>,
    /// CSR over owned particles listing every pair `i` takes part in as
    /// `(pair index, partner local index)`, sorted by the partner's global id.
    pub inc_offsets: Vec<usize>,
    pub incidence: Vec<(usize, usize)>,
    /// Owner (`i`) of each pair, parallel to `partners`.
    pub pair_owner: Vec<usize>,
    pub build_pos: Vec<Vec3>,
    pub cutoff: f64,
    pub n_owned: usize,
    pub n_total: usize,
    /// Substeps since the last build.
    pub age: usize,
}

impl NeighborList {
    pub fn n_pairs(&self) -> usize {
        self.partners.len()
    }

    pub fn partners_of(&self, i: usize) -> &[usize] {
        &self.partners[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn incident(&self, i: usize) -> &[(usize, usize)] {
        &self.incidence[self.inc_offsets[i]..self.inc_offsets[i + 1]]
    }

    /// Pair set as `(min id, max id)`, sorted.
    pub fn id_pairs(&self, store: &ParticleStore) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = (0..self.n_owned)
            .flat_map(|i| {
                self.partners_of(i).iter().map(move |&j| {
                    let (a, b) = (store.id[i], store.id[j]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Builds the list of all pairs closer than `cutoff` (centre distance)
/// that involve at least one owned particle.
pub fn build_neighbor_list(store: &ParticleStore, cutoff: f64) -> NeighborList {
    assert!(cutoff > 0.0);
    let n = store.len();
    let n_owned = store.n_owned;
    let mut list = NeighborList {
        offsets: vec![0; n_owned + 1],
        cutoff,
        n_owned,
        n_total: n,
        build_pos: store.pos.clone(),
        ..Default::default()
    };
    if n == 0 {
        list.inc_offsets = vec![0; n_owned + 1];
        return list;
    }
    let mut lo = store.pos[0];
    let mut hi = store.pos[0];
    for p in &store.pos {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut bin = cutoff;
    let dims = loop {
        let d: [usize; 3] = std::array::from_fn(|a| ((hi[a] - lo[a]) / bin) as usize + 1);
        if d[0] * d[1] * d[2] <= 8 * n + 64 {
            break d;
        }
        bin *= 2.0;
    };
    let bin_of = |p: &Vec3| -> [usize; 3] {
        std::array::from_fn(|a| (((p[a] - lo[a]) / bin) as usize).min(dims[a] - 1))
    };
    let flat = |b: [usize; 3]| (b[0] * dims[1] + b[1]) * dims[2] + b[2];
    let nb = dims[0] * dims[1] * dims[2];
    let mut start = vec![0usize; nb + 1];
    let bins: Vec<usize> = store.pos.iter().map(|p| flat(bin_of(p))).collect();
    for &b in &bins {
        start[b + 1] += 1;
    }
    for b in 0..nb {
        start[b + 1] += start[b];
    }
    let mut fill = start.clone();
    let mut sorted = vec![0usize; n];
    for (i, &b) in bins.iter().enumerate() {
        sorted[fill[b]] = i;
        fill[b] += 1;
    }
    let c2 = cutoff * cutoff;
    let mut scratch = Vec::new();
    for i in 0..n_owned {
        let pi = store.pos[i];
        let b = bin_of(&pi);
        scratch.clear();
        for dxb in -1i64..=1 {
            for dyb in -1i64..=1 {
                for dzb in -1i64..=1 {
                    let q = [b[0] as i64 + dxb, b[1] as i64 + dyb, b[2] as i64 + dzb];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as i64) {
                        continue;
                    }
                    let f = flat([q[0] as usize, q[1] as usize, q[2] as usize]);
                    for &j in &sorted[start[f]..start[f + 1]] {
                        if j <= i {
                            continue;
                        }
                        let pj = store.pos[j];
                        let d = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
                        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < c2 {
                            scratch.push(j);
                        }
                    }
                }
            }
        }
        scratch.sort_unstable();
        list.partners.extend_from_slice(&scratch);
        list.pair_owner.extend(std::iter::repeat(i).take(scratch.len()));
        list.offsets[i + 1] = list.partners.len();
    }
    let mut inc: Vec<Vec<(u64, usize, usize)>> = vec![Vec::new(); n_owned];
    for i in 0..n_owned {
        for k in list.offsets[i]..list.offsets[i + 1] {
            let j = list.partners[k];
            inc[i].push((store.id[j], k, j));
            if j < n_owned {
                inc[j].push((store.id[i], k, i));
            }
        }
    }
    list.inc_offsets = Vec::with_capacity(n_owned + 1);
    list.inc_offsets.push(0);
    for v in &mut inc {
        v.sort_unstable_by_key(|e| e.0);
        list.incidence.extend(v.iter().map(|e| (e.1, e.2)));
        list.inc_offsets.push(list.incidence.len());
    }
    list
}

/// Largest displacement of any particle since the list was built.
pub fn max_displacement(list: &NeighborList, store: &ParticleStore) -> f64 {
    let n = list.n_total.min(store.len());
    let mut m: f64 = 0.0;
    for i in 0..n {
        let (p, q) = (store.pos[i], list.build_pos[i]);
        let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
        m = m.max((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
    }
    m
}

/// True when some particle has moved more than `skin` since the build or
/// `interval` substeps have elapsed.
pub fn needs_rebuild(list: &NeighborList, store: &ParticleStore, skin: f64, interval: usize) -> bool {
    list.n_total != store.len() || list.age >= interval || max_displacement(list, store) > skin
}

/// The skin `(cutoff - 2r) / 2`.
pub fn default_skin(cutoff: f64, radius: f64) -> f64 {
    (cutoff - 2.0 * radius) / 2.0
}

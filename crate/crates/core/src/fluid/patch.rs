//! Per-box storage for grid fields with a one-point halo.
//!
//! A [`Patch`] stores one box's values of a cell-centred or face-centred
//! field, addressed by global index. A face-centred patch owns both bounding
//! faces along its staggered axis, so faces on a box boundary exist in both
//! neighbouring patches and are computed identically by each.

use crate::decomp::{BoxDecomposition, GridBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stagger {
    Cell,
    /// Normal to the given axis (x-faces carry u, and so on).
    Face(usize),
}

impl Stagger {
    /// Number of valid global points along `axis`.
    pub fn extent(self, cells: [usize; 3], axis: usize) -> usize {
        match self {
            Stagger::Face(a) if a == axis => cells[axis] + 1,
            _ => cells[axis],
        }
    }

    pub fn is_face_axis(self, axis: usize) -> bool {
        matches!(self, Stagger::Face(a) if a == axis)
    }

    /// Reflects an out-of-range index back into range across the domain
    /// boundary (cell centres mirror about the face, face points about the
    /// boundary face itself).
    pub fn mirror(self, cells: [usize; 3], axis: usize, g: i64) -> i64 {
        let n = cells[axis] as i64;
        if self.is_face_axis(axis) {
            if g < 0 {
                -g
            } else {
                2 * n - g
            }
        } else if g < 0 {
            -1 - g
        } else {
            2 * n - 1 - g
        }
    }

    /// Box coordinate (along `axis`) of the box whose interior holds global index `g`.
    pub fn owning_box_coord(self, decomp: &BoxDecomposition, axis: usize, g: i64) -> usize {
        let t = decomp.tiling[axis];
        let c = (g as usize) / t;
        if self.is_face_axis(axis) {
            c.min(decomp.counts[axis] - 1)
        } else {
            c
        }
    }
}

/// Mirror signs for out-of-domain halo points: +1 even (zero gradient),
/// -1 odd (zero value on the boundary).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bc {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bc {
    pub const EVEN: Bc = Bc { lo: [1.0; 3], hi: [1.0; 3] };

    pub fn sign(&self, axis: usize, hi_side: bool) -> f64 {
        if hi_side {
            self.hi[axis]
        } else {
            self.lo[axis]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Global index of storage element 0.
    pub lo: [i64; 3],
    pub dims: [usize; 3],
    pub ilo: [i64; 3],
    /// Exclusive.
    pub ihi: [i64; 3],
    pub data: Vec<f64>,
}

impl Patch {
    pub fn new(stagger: Stagger, b: &GridBox) -> Patch {
        let mut ilo = [0i64; 3];
        let mut ihi = [0i64; 3];
        let mut lo = [0i64; 3];
        let mut dims = [0usize; 3];
        for a in 0..3 {
            ilo[a] = b.lo[a] as i64;
            ihi[a] = b.hi[a] as i64 + i64::from(stagger.is_face_axis(a));
            lo[a] = ilo[a] - 1;
            dims[a] = (ihi[a] - ilo[a] + 2) as usize;
        }
        Patch { lo, dims, ilo, ihi, data: vec![0.0; dims.iter().product()] }
    }

    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    #[inline]
    pub fn off(&self, g: [i64; 3]) -> usize {
        debug_assert!(self.stores(g), "{g:?} outside patch {:?}+{:?}", self.lo, self.dims);
        (((g[0] - self.lo[0]) as usize) * self.dims[1] + (g[1] - self.lo[1]) as usize) * self.dims[2]
            + (g[2] - self.lo[2]) as usize
    }

    #[inline]
    pub fn at(&self, g: [i64; 3]) -> f64 {
        self.data[self.off(g)]
    }

    #[inline]
    pub fn set(&mut self, g: [i64; 3], v: f64) {
        let o = self.off(g);
        self.data[o] = v;
    }

    pub fn stores(&self, g: [i64; 3]) -> bool {
        (0..3).all(|a| g[a] >= self.lo[a] && g[a] < self.lo[a] + self.dims[a] as i64)
    }

    pub fn is_interior(&self, g: [i64; 3]) -> bool {
        (0..3).all(|a| g[a] >= self.ilo[a] && g[a] < self.ihi[a])
    }

    /// Global index of storage offset `o`.
    pub fn global(&self, o: usize) -> [i64; 3] {
        let k = o % self.dims[2];
        let j = (o / self.dims[2]) % self.dims[1];
        let i = o / (self.dims[1] * self.dims[2]);
        [self.lo[0] + i as i64, self.lo[1] + j as i64, self.lo[2] + k as i64]
    }

    /// Interior global indices in storage order.
    pub fn interior(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        let (ilo, ihi) = (self.ilo, self.ihi);
        (ilo[0]..ihi[0]).flat_map(move |i| (ilo[1]..ihi[1]).flat_map(move |j| (ilo[2]..ihi[2]).map(move |k| [i, j, k])))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// One field over the boxes a rank owns; `patches[n]` belongs to `boxes[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxField {
    pub stagger: Stagger,
    pub boxes: Vec<usize>,
    pub patches: Vec<Patch>,
}

impl BoxField {
    pub fn new(decomp: &BoxDecomposition, rank: usize, stagger: Stagger) -> BoxField {
        let boxes = decomp.boxes_of(rank);
        let patches = boxes.iter().map(|&b| Patch::new(stagger, &decomp.boxes[b])).collect();
        BoxField { stagger, boxes, patches }
    }

    pub fn fill(&mut self, v: f64) {
        self.patches.iter_mut().for_each(|p| p.fill(v));
    }

    /// Sets every stored point (halo included) from a function of global index.
    pub fn set_with(&mut self, mut f: impl FnMut([i64; 3]) -> f64) {
        for p in &mut self.patches {
            for o in 0..p.data.len() {
                let g = p.global(o);
                p.data[o] = f(g);
            }
        }
    }

    /// Index of the local patch whose box is `b`.
    pub fn patch_of_box(&self, b: usize) -> Option<usize> {
        self.boxes.binary_search(&b).ok()
    }

    /// Value at a global index from whichever local patch stores it in its interior.
    pub fn get_interior(&self, g: [i64; 3]) -> Option<f64> {
        self.patches.iter().find(|p| p.is_interior(g)).map(|p| p.at(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DomainSpec;
    use crate::decomp::decompose;

    #[test]
    fn face_patch_owns_both_bounding_faces() {
        let g = DomainSpec::new([8e-3, 4e-3, 4e-3], [8, 4, 4]);
        let d = decompose(&g, [4, 4, 4]).unwrap();
        let p = Patch::new(Stagger::Face(0), &d.boxes[1]);
        assert_eq!(p.ilo, [4, 0, 0]);
        assert_eq!(p.ihi, [9, 4, 4]);
        assert_eq!(p.lo, [3, -1, -1]);
        assert_eq!(p.dims, [7, 6, 6]);
        assert_eq!(p.interior().count(), 5 * 16);
        let o = p.off([5, 2, -1]);
        assert_eq!(p.global(o), [5, 2, -1]);
    }

    #[test]
    fn mirror_indices() {
        let cells = [8, 4, 4];
        assert_eq!(Stagger::Cell.mirror(cells, 0, -1), 0);
        assert_eq!(Stagger::Cell.mirror(cells, 0, 8), 7);
        assert_eq!(Stagger::Face(0).mirror(cells, 0, -1), 1);
        assert_eq!(Stagger::Face(0).mirror(cells, 0, 9), 7);
        assert_eq!(Stagger::Face(0).mirror(cells, 1, 4), 3);
    }
}

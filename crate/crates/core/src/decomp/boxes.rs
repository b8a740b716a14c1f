use crate::config::DomainSpec;
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Half-open cell-index cuboid `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl GridBox {
    pub fn contains_cell(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a])
    }

    pub fn n_cells(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn size(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }
}

/// Disjoint boxes covering the grid, each owned by one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDecomposition {
    pub cells: [usize; 3],
    pub tiling: [usize; 3],
    /// Number of boxes along each axis.
    pub counts: [usize; 3],
    pub dx: f64,
    pub boxes: Vec<GridBox>,
    pub owner: Vec<usize>,
    pub nranks: usize,
    /// Up to 26 face/edge/corner neighbours per box, ascending.
    pub neighbors: Vec<Vec<usize>>,
}

/// Splits the grid into boxes of `tiling` cells, enumerated row-major
/// (z fastest). All boxes start on rank 0.
pub fn decompose(grid: &DomainSpec, tiling: [usize; 3]) -> Result<BoxDecomposition> {
    let cells = grid.cells();
    let mut counts = [0usize; 3];
    for a in 0..3 {
        if tiling[a] == 0 || cells[a] % tiling[a] != 0 {
            return Err(Error::config(format!(
                "box tiling {:?} does not divide grid {:?}",
                tiling, cells
            )));
        }
        counts[a] = cells[a] / tiling[a];
    }
    let mut boxes = Vec::with_capacity(counts.iter().product());
    for bi in 0..counts[0] {
        for bj in 0..counts[1] {
            for bk in 0..counts[2] {
                let lo = [bi * tiling[0], bj * tiling[1], bk * tiling[2]];
                let hi = [lo[0] + tiling[0], lo[1] + tiling[1], lo[2] + tiling[2]];
                boxes.push(GridBox { lo, hi });
            }
        }
    }
    let mut d = BoxDecomposition {
        cells,
        tiling,
        counts,
        dx: grid.dx(),
        owner: vec![0; boxes.len()],
        boxes,
        nranks: 1,
        neighbors: Vec::new(),
    };
    d.neighbors = (0..d.boxes.len()).map(|b| d.compute_neighbors(b)).collect();
    Ok(d)
}

impl BoxDecomposition {
    pub fn n_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn box_coords(&self, b: usize) -> [usize; 3] {
        let k = b % self.counts[2];
        let j = (b / self.counts[2]) % self.counts[1];
        let i = b / (self.counts[2] * self.counts[1]);
        [i, j, k]
    }

    pub fn box_index(&self, bc: [usize; 3]) -> usize {
        (bc[0] * self.counts[1] + bc[1]) * self.counts[2] + bc[2]
    }

    pub fn box_of_cell(&self, c: [usize; 3]) -> usize {
        self.box_index([c[0] / self.tiling[0], c[1] / self.tiling[1], c[2] / self.tiling[2]])
    }

    /// Cell containing `pos`, clamped into the grid.
    pub fn cell_of(&self, pos: Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = pos[a] / self.dx;
            c[a] = if f < 0.0 { 0 } else { (f as usize).min(self.cells[a] - 1) };
        }
        c
    }

    pub fn box_of_pos(&self, pos: Vec3) -> usize {
        self.box_of_cell(self.cell_of(pos))
    }

    pub fn owner_of_pos(&self, pos: Vec3) -> usize {
        self.owner[self.box_of_pos(pos)]
    }

    /// Boxes owned by `rank`, ascending.
    pub fn boxes_of(&self, rank: usize) -> Vec<usize> {
        (0..self.n_boxes()).filter(|&b| self.owner[b] == rank).collect()
    }

    /// Returns a copy with the given rank assignment.
    pub fn with_owners(&self, owner: Vec<usize>, nranks: usize) -> Self {
        assert_eq!(owner.len(), self.n_boxes());
        BoxDecomposition { owner, nranks, ..self.clone() }
    }

    fn compute_neighbors(&self, b: usize) -> Vec<usize> {
        let bc = self.box_coords(b);
        let mut out = Vec::new();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let n = [bc[0] as i64 + di, bc[1] as i64 + dj, bc[2] as i64 + dk];
                    if (0..3).all(|a| n[a] >= 0 && n[a] < self.counts[a] as i64) {
                        out.push(self.box_index([n[0] as usize, n[1] as usize, n[2] as usize]));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn are_adjacent_or_same(&self, a: usize, b: usize) -> bool {
        a == b || self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Ranks other than `exclude` owning a box whose one-cell halo (or
    /// interior) contains cell `c`.
    pub fn ranks_near_cell(&self, c: [usize; 3], exclude: usize, out: &mut Vec<usize>) {
        out.clear();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    let n = [c[0] as i64 + di, c[1] as i64 + dj, c[2] as i64 + dk];
                    if (0..3).all(|a| n[a] >= 0 && n[a] < self.cells[a] as i64) {
                        let r = self.owner[self.box_of_cell([n[0] as usize, n[1] as usize, n[2] as usize])];
                        if r != exclude && !out.contains(&r) {
                            out.push(r);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

//! Morton (Z-order) assignment of boxes to ranks.

use super::boxes::BoxDecomposition;
use crate::error::{Error, Result};

fn spread_bits(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

/// Interleaves the low 21 bits of each coordinate, x in the lowest bit.
pub fn morton_key(c: [usize; 3]) -> u64 {
    spread_bits(c[0] as u64) | (spread_bits(c[1] as u64) << 1) | (spread_bits(c[2] as u64) << 2)
}

/// Sorts boxes by the Morton key of their lower cell corner and cuts the
/// sequence into `nranks` contiguous runs whose sizes differ by at most one
/// (larger runs first). Returns the owning rank of every box.
pub fn sfc_assign(decomp: &BoxDecomposition, nranks: usize) -> Result<Vec<usize>> {
    let n = decomp.n_boxes();
    if nranks == 0 || nranks > n {
        return Err(Error::config(format!("cannot distribute {n} boxes over {nranks} ranks")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&b| (morton_key(decomp.boxes[b].lo), b));
    let base = n / nranks;
    let extra = n % nranks;
    let mut owner = vec![0; n];
    let mut pos = 0;
    for rank in 0..nranks {
        let take = base + usize::from(rank < extra);
        for &b in &order[pos..pos + take] {
            owner[b] = rank;
        }
        pos += take;
    }
    Ok(owner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DomainSpec;
    use crate::decomp::decompose;

    #[test]
    fn morton_interleaves() {
        assert_eq!(morton_key([1, 0, 0]), 1);
        assert_eq!(morton_key([0, 1, 0]), 2);
        assert_eq!(morton_key([0, 0, 1]), 4);
        assert_eq!(morton_key([3, 0, 0]), 0b1001);
        assert_eq!(morton_key([1, 1, 1]), 7);
    }

    fn counts(owner: &[usize], nranks: usize) -> Vec<usize> {
        (0..nranks).map(|r| owner.iter().filter(|&&o| o == r).count()).collect()
    }

    #[test]
    fn equal_split_of_64_boxes() {
        let g = DomainSpec::new([0.0128, 0.02, 0.0128], [64, 100, 64]);
        let d = decompose(&g, [8, 100, 8]).unwrap();
        let owner = sfc_assign(&d, 4).unwrap();
        assert_eq!(counts(&owner, 4), vec![16; 4]);
        // contiguous along the curve
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by_key(|&b| morton_key(d.boxes[b].lo));
        let ranks: Vec<usize> = order.iter().map(|&b| owner[b]).collect();
        assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_rank_owns_everything() {
        let g = DomainSpec::new([0.008, 0.008, 0.008], [8, 8, 8]);
        let d = decompose(&g, [4, 4, 4]).unwrap();
        assert!(sfc_assign(&d, 1).unwrap().iter().all(|&r| r == 0));
    }

    #[test]
    fn uneven_split() {
        let g = DomainSpec::new([0.006, 0.002, 0.001], [6, 2, 1]);
        let d = decompose(&g, [1, 2, 1]).unwrap();
        assert_eq!(d.n_boxes(), 6);
        let owner = sfc_assign(&d, 4).unwrap();
        assert_eq!(counts(&owner, 4), vec![2, 2, 1, 1]);
        assert!(sfc_assign(&d, 7).is_err());
    }

    proptest::proptest! {
        #[test]
        fn morton_is_injective_and_monotone(a in proptest::array::uniform3(0usize..1 << 21), b in proptest::array::uniform3(0usize..1 << 21)) {
            proptest::prop_assert_eq!(morton_key(a) == morton_key(b), a == b);
            if a.iter().zip(&b).all(|(x, y)| x <= y) {
                proptest::prop_assert!(morton_key(a) <= morton_key(b));
            }
        }

        #[test]
        fn assignment_is_balanced_and_contiguous(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, nranks in 1usize..9) {
            let g = DomainSpec::new([0.001 * nx as f64, 0.001 * ny as f64, 0.001 * nz as f64], [nx, ny, nz]);
            let d = decompose(&g, [1, 1, 1]).unwrap();
            let n = d.n_boxes();
            let res = sfc_assign(&d, nranks);
            if nranks > n {
                proptest::prop_assert!(res.is_err());
            } else {
                let owner = res.unwrap();
                let c = counts(&owner, nranks);
                proptest::prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&b| (morton_key(d.boxes[b].lo), b));
                proptest::prop_assert!(order.windows(2).all(|w| owner[w[0]] <= owner[w[1]]));
            }
        }
    }

    #[test]
    fn deterministic() {
        let g = DomainSpec::new([0.012, 0.008, 0.012], [12, 8, 12]);
        let d = decompose(&g, [3, 4, 3]).unwrap();
        assert_eq!(sfc_assign(&d, 5).unwrap(), sfc_assign(&d, 5).unwrap());
    }
}

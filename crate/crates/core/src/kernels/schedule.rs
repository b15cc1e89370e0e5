//! Loop nest of the broadcast kernel, flattened into a task list.
//!
//! Tile loops run in the order given by the tile permutation. Inside a tile
//! the kernel walks row blocks of `v` rows; each task covers one row block,
//! the tile's output columns, and the tile's slice of `K`. Row blocks or `K`
//! tiles that are pure padding produce no task.

use crate::layout::{Dim, PackedWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    /// Element offset of the first packed block for this row block and K tile.
    pub a_off: usize,
    /// First output row.
    pub m0: usize,
    /// Valid output rows, at most `v`.
    pub rows: usize,
    /// First reduction index.
    pub k0: usize,
    /// One past the last valid reduction index (`<= k_orig`).
    pub k_end: usize,
    /// Reduction steps of `h` elements, the last possibly partial.
    pub steps: usize,
    pub n0: usize,
    pub ncols: usize,
}

/// Builds the task list for multiplying `p` by an `n`-row input.
pub fn schedule(p: &PackedWeight, n: usize) -> Vec<Task> {
    let shape = p.shape();
    let tile = p.tile();
    let (h, v, w) = (shape.h(), shape.v(), shape.w());
    let alpha = tile.tk / h;
    let counts = |d: Dim| match d {
        Dim::M => p.tiles_m(),
        Dim::N => n.div_ceil(tile.tn),
        Dim::K => p.tiles_k(),
    };
    let order = tile.permutation.order();
    let mut tasks = Vec::new();
    let mut idx = [0usize; 3];
    for i0 in 0..counts(order[0]) {
        idx[0] = i0;
        for i1 in 0..counts(order[1]) {
            idx[1] = i1;
            for i2 in 0..counts(order[2]) {
                idx[2] = i2;
                let get = |d: Dim| idx[order.iter().position(|&x| x == d).unwrap()];
                let (mt, nt, kt) = (get(Dim::M), get(Dim::N), get(Dim::K));
                let k0 = kt * tile.tk;
                if k0 >= p.k_orig() {
                    continue;
                }
                let k_end = (k0 + tile.tk).min(p.k_orig());
                let n0 = nt * tile.tn;
                let ncols = tile.tn.min(n - n0);
                let base = p.tile_base(mt, kt);
                for mb in 0..tile.tm / v {
                    let m0 = mt * tile.tm + mb * v;
                    if m0 >= p.m_orig() {
                        break;
                    }
                    tasks.push(Task {
                        a_off: base + mb * alpha * w,
                        m0,
                        rows: v.min(p.m_orig() - m0),
                        k0,
                        k_end,
                        steps: (k_end - k0).div_ceil(h),
                        n0,
                        ncols,
                    });
                }
            }
        }
    }
    tasks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{kernel_shape, pack_weights, IsaProfile, Permutation, TileConfig};
    use crate::matrix::{mat_random, ElemKind};

    #[test]
    fn every_output_and_reduction_slot_once() {
        let s = kernel_shape(IsaProfile::V256, ElemKind::U8).unwrap();
        for perm in Permutation::ALL {
            let a = mat_random(ElemKind::U8, 21, 45, 1, 0, 255).unwrap();
            let p = pack_weights(&a, s, TileConfig::new(16, 3, 8, perm)).unwrap();
            let n = 7;
            let mut seen = vec![0u32; 21 * n * 45];
            for t in schedule(&p, n) {
                for r in 0..t.rows {
                    for j in t.n0..t.n0 + t.ncols {
                        for k in t.k0..t.k_end {
                            seen[((t.m0 + r) * n + j) * 45 + k] += 1;
                        }
                    }
                }
                // first packed element of the task is (m0, k0)
                assert_eq!(p.coord_of(t.a_off), (t.m0, t.k0));
            }
            assert!(seen.iter().all(|&x| x == 1), "{perm}");
        }
    }

    #[test]
    fn padding_tiles_are_skipped() {
        let s = kernel_shape(IsaProfile::V256, ElemKind::U8).unwrap();
        let a = mat_random(ElemKind::U8, 1, 1, 1, 0, 255).unwrap();
        let p = pack_weights(&a, s, TileConfig::new(32, 16, 128, Permutation::MNK)).unwrap();
        let t = schedule(&p, 1);
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].rows, t[0].steps, t[0].k_end), (1, 1, 1));
    }
}

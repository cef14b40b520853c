use crate::error::{Error, Result};
use crate::ndiff::{Tape, Var};

/// Splits a `rows × cols` grid into `m × n` patches.
///
/// Band boundaries are `⌊i·rows/m⌋`, so patch extents differ by at most one
/// cell when the grid is not divisible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub m: usize,
    pub n: usize,
    cell_patch: Vec<usize>,
}

fn bands(extent: usize, parts: usize) -> Vec<usize> {
    let mut of = vec![0; extent];
    for i in 0..parts {
        let lo = i * extent / parts;
        let hi = (i + 1) * extent / parts;
        of[lo..hi].iter_mut().for_each(|b| *b = i);
    }
    of
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || m > rows || n > cols {
            return Err(Error::dim("patchify", &[rows, cols], &[m, n]));
        }
        let rb = bands(rows, m);
        let cb = bands(cols, n);
        let cell_patch = (0..rows * cols)
            .map(|cell| rb[cell / cols] * n + cb[cell % cols])
            .collect();
        Ok(Self {
            rows,
            cols,
            m,
            n,
            cell_patch,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.m * self.n
    }

    pub fn patch_of(&self, cell: usize) -> usize {
        self.cell_patch[cell]
    }

    /// Indices of patches holding at least one occupied cell.
    pub fn occupied_patches(&self, occupancy: &[bool]) -> Vec<usize> {
        let mut hit = vec![false; self.num_patches()];
        for (cell, &occ) in occupancy.iter().enumerate() {
            if occ {
                hit[self.cell_patch[cell]] = true;
            }
        }
        (0..hit.len()).filter(|&p| hit[p]).collect()
    }
}

/// Mean feature of the occupied cells of every non-empty patch.
///
/// Returns the `[k, C]` patch features and the patch indices they belong to.
/// Passing the same occupancy for two maps yields row-aligned patch sets.
pub fn patchify_mean(
    tape: &mut Tape,
    feature_map: Var,
    occupancy: &[bool],
    patches: &PatchGrid,
) -> Result<(Var, Vec<usize>)> {
    let cells = patches.rows * patches.cols;
    if tape.shape(feature_map).first() != Some(&cells) || occupancy.len() != cells {
        return Err(Error::dim(
            "patchify_mean",
            tape.shape(feature_map),
            &[cells, occupancy.len()],
        ));
    }
    let segments: Vec<Option<usize>> = (0..cells)
        .map(|c| occupancy[c].then(|| patches.patch_of(c)))
        .collect();
    let all = tape.segment_mean(feature_map, &segments, patches.num_patches())?;
    let kept = patches.occupied_patches(occupancy);
    let out = tape.gather_rows(all, &kept)?;
    Ok((out, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Tensor;

    #[test]
    fn degenerate_six_by_eight() {
        let pg = PatchGrid::new(6, 8, 6, 8).unwrap();
        for cell in 0..48 {
            assert_eq!(pg.patch_of(cell), cell);
        }
    }

    #[test]
    fn uneven_extents_differ_by_at_most_one() {
        let pg = PatchGrid::new(13, 17, 6, 8).unwrap();
        let mut sizes = vec![0usize; 48];
        for cell in 0..13 * 17 {
            sizes[pg.patch_of(cell)] += 1;
        }
        let mut heights = [0usize; 6];
        for r in 0..13 {
            heights[pg.patch_of(r * 17) / 8] += 1;
        }
        let (lo, hi) = (heights.iter().min().unwrap(), heights.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 13 * 17);
    }

    #[test]
    fn too_many_patches_is_an_error() {
        assert!(PatchGrid::new(4, 4, 5, 2).is_err());
        assert!(PatchGrid::new(4, 4, 2, 5).is_err());
    }

    #[test]
    fn constant_map_gives_constant_patches_and_empty_ones_drop() {
        let pg = PatchGrid::new(4, 4, 2, 2).unwrap();
        let mut tape = Tape::new();
        let map = tape.constant(Tensor::filled(&[16, 3], 0.25));
        let (p, idx) = patchify_mean(&mut tape, map, &[true; 16], &pg).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(tape.value(p).data().iter().all(|&v| v == 0.25));

        let mut occ = vec![false; 16];
        occ[0] = true;
        occ[15] = true;
        let (p, idx) = patchify_mean(&mut tape, map, &occ, &pg).unwrap();
        assert_eq!(idx, vec![0, 3]);
        assert_eq!(tape.shape(p), &[2, 3]);
    }
}

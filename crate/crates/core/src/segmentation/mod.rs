//! Pseudo masks: graph-based image segmentation and regular grids.

mod fh;

pub use fh::{fh_segment, min_size_for, FhParams};

use crate::error::{Error, Result};
use crate::imaging::encode_pgm;

/// A partition of an `height x width` grid into `count` labelled segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl SegmentMap {
    /// Validates that labels cover `0..count` with no gaps.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} segment map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let count = *labels.iter().max().expect("nonempty") as usize + 1;
        let mut used = vec![false; count];
        for &l in &labels {
            used[l as usize] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidArgument(
                "segment labels must be contiguous from 0".into(),
            ));
        }
        Ok(SegmentMap {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        SegmentMap {
            height,
            width,
            labels: vec![0; height * width],
            count: 1,
        }
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Renumbers labels by first occurrence in row-major order.
    pub fn relabel_first_seen(raw: &[usize], height: usize, width: usize) -> SegmentMap {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len() as u32;
                *map.entry(r).or_insert(next)
            })
            .collect();
        SegmentMap {
            height,
            width,
            labels,
            count: map.len(),
        }
    }

    /// Applies a per-pixel lookup such as a spatial augmentation. Labels that
    /// vanish are compacted, keeping first-seen order.
    pub fn remap(&self, f: impl Fn(&[u32]) -> Vec<u32>) -> SegmentMap {
        let moved: Vec<usize> = f(&self.labels).into_iter().map(|l| l as usize).collect();
        SegmentMap::relabel_first_seen(&moved, self.height, self.width)
    }

    /// Binary PGM with the raw label as the gray level.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        if self.count > 256 {
            return Err(Error::InvalidArgument(format!(
                "{} segments do not fit in an 8-bit PGM",
                self.count
            )));
        }
        let bytes: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        Ok(encode_pgm(self.height, self.width, &bytes))
    }
}

/// Splits `n` into `d` near-equal parts: the first `n % d` parts get one extra.
fn split_bounds(n: usize, d: usize) -> Vec<usize> {
    let (q, r) = (n / d, n % d);
    let mut b = vec![0];
    for i in 0..d {
        b.push(b[i] + q + usize::from(i < r));
    }
    b
}

/// `d x d` grid of axis-aligned cells, labels in row-major cell order.
pub fn grid_mask(height: usize, width: usize, d: usize) -> Result<SegmentMap> {
    if d == 0 || d > height || d > width {
        return Err(Error::InvalidArgument(format!(
            "grid divisor {d} must be in 1..=min({height}, {width})"
        )));
    }
    let rows = split_bounds(height, d);
    let cols = split_bounds(width, d);
    let cell = |x: usize, b: &[usize]| b.windows(2).position(|w| x < w[1]).expect("in range");
    let labels = (0..height * width)
        .map(|i| (cell(i / width, &rows) * d + cell(i % width, &cols)) as u32)
        .collect();
    Ok(SegmentMap {
        height,
        width,
        labels,
        count: d * d,
    })
}

/// Majority label of each receptive patch when reducing to `h x w`; ties go
/// to the smallest label. Labels are then compacted to stay contiguous.
pub fn mask_to_grid(seg: &SegmentMap, h: usize, w: usize) -> Result<SegmentMap> {
    if h == 0 || w == 0 || seg.height < h || seg.width < w {
        return Err(Error::InvalidArgument(format!(
            "cannot reduce {}x{} segments to {h}x{w}",
            seg.height, seg.width
        )));
    }
    let rows = split_bounds(seg.height, h);
    let cols = split_bounds(seg.width, w);
    let mut votes = vec![0usize; seg.count];
    let mut out = Vec::with_capacity(h * w);
    for gr in 0..h {
        for gc in 0..w {
            votes.fill(0);
            for r in rows[gr]..rows[gr + 1] {
                for c in cols[gc]..cols[gc + 1] {
                    votes[seg.label(r, c) as usize] += 1;
                }
            }
            let mut best = 0;
            for (l, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = l;
                }
            }
            out.push(best);
        }
    }
    // Keep the original label order among survivors.
    let mut present = vec![false; seg.count];
    for &l in &out {
        present[l] = true;
    }
    let mut rank = vec![0u32; seg.count];
    let mut next = 0;
    for (l, &p) in present.iter().enumerate() {
        if p {
            rank[l] = next;
            next += 1;
        }
    }
    Ok(SegmentMap {
        height: h,
        width: w,
        labels: out.iter().map(|&l| rank[l]).collect(),
        count: next as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        let g = grid_mask(8, 8, 2).unwrap();
        assert_eq!(g.sizes(), vec![16; 4]);
        assert_eq!(grid_mask(5, 3, 1).unwrap().count, 1);
        let mut s = grid_mask(7, 7, 2).unwrap().sizes();
        s.sort_unstable();
        assert_eq!(s, vec![9, 12, 12, 16]);
        assert!(grid_mask(4, 4, 0).is_err());
    }

    #[test]
    fn mask_to_grid_examples() {
        let g = grid_mask(8, 8, 4).unwrap();
        assert_eq!(mask_to_grid(&g, 8, 8).unwrap(), g);
        assert_eq!(
            mask_to_grid(&SegmentMap::uniform(8, 8), 2, 2).unwrap(),
            SegmentMap::uniform(2, 2)
        );

        // Label 1 fills rows 0..3 of the left half; majority by counting.
        let labels: Vec<u32> = (0..64).map(|i| u32::from(i / 8 < 3 && i % 8 < 4)).collect();
        let seg = SegmentMap::new(8, 8, labels).unwrap();
        let small = mask_to_grid(&seg, 2, 2).unwrap();
        // Top-left patch: 12 ones vs 4 zeros.
        assert_eq!(small.labels, vec![1, 0, 0, 0]);
        assert_eq!(small.count, 2);
    }

    #[test]
    fn majority_tie_goes_to_smaller_label() {
        let seg = SegmentMap::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(mask_to_grid(&seg, 1, 1).unwrap().labels, vec![0]);
    }

    #[test]
    fn pgm_export_limits_labels() {
        let g = grid_mask(4, 4, 2).unwrap();
        let bytes = g.to_pgm().unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        let big = SegmentMap::relabel_first_seen(&(0..300).collect::<Vec<_>>(), 15, 20);
        assert!(big.to_pgm().is_err());
    }

    proptest! {
        #[test]
        fn grid_cells_tile_exactly(h in 1usize..30, w in 1usize..30, d in 1usize..8) {
            prop_assume!(d <= h && d <= w);
            let g = grid_mask(h, w, d).unwrap();
            let sizes = g.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), h * w);
            prop_assert!(SegmentMap::new(h, w, g.labels.clone()).is_ok());
            let row_sizes: Vec<usize> = (0..d).map(|r| split_bounds(h, d)[r + 1] - split_bounds(h, d)[r]).collect();
            prop_assert!(row_sizes.iter().max().unwrap() - row_sizes.iter().min().unwrap() <= 1);
        }
    }
}

//! Felzenszwalb-Huttenlocher graph segmentation on an 8-connected pixel grid.

use super::SegmentMap;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::synth::blur_channels;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FhParams {
    /// Merge threshold constant in 8-bit intensity units, so edge weights on
    /// `[0, 1]` images are compared against `scale / 255 / |C|`.
    pub scale: f64,
    pub sigma: f64,
    pub min_size: usize,
}

impl Default for FhParams {
    fn default() -> Self {
        FhParams {
            scale: 1000.0,
            sigma: 0.5,
            min_size: min_size_for(64, 64),
        }
    }
}

/// Minimum segment size of 1000 pixels at 256x256, scaled by image area.
pub fn min_size_for(height: usize, width: usize) -> usize {
    ((1000.0 * (height * width) as f64 / (256.0 * 256.0)).round() as usize).max(1)
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Largest edge weight inside each component.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Joins two roots; the larger (then lower-index) root survives.
    fn union(&mut self, a: usize, b: usize, weight: f64) {
        let (keep, drop) = if self.size[a] > self.size[b] || (self.size[a] == self.size[b] && a < b)
        {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[drop] = keep;
        self.size[keep] += self.size[drop];
        self.internal[keep] = self.internal[keep].max(self.internal[drop]).max(weight);
    }
}

/// Neighbour offsets in tie-break order: right, down-right, down, down-left.
const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 1), (1, 0), (1, -1)];

pub fn fh_segment(image: &Image, params: &FhParams) -> Result<SegmentMap> {
    let (h, w) = (image.height, image.width);
    if !(params.scale > 0.0)
        || !(params.sigma >= 0.0)
        || params.min_size == 0
        || params.min_size > h * w
    {
        return Err(Error::InvalidArgument(format!(
            "segmentation needs scale > 0, sigma >= 0 and 1 <= min_size <= {}, got {params:?}",
            h * w
        )));
    }
    let smooth = blur_channels(&image.data, h, w, 3, params.sigma);
    let px = |i: usize| &smooth[i * 3..i * 3 + 3];

    // Enumerated in (row, col, direction) order so a stable sort by weight
    // yields the documented tie order.
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(h * w * 4);
    for r in 0..h {
        for c in 0..w {
            let a = r * w + c;
            for (dr, dc) in DIRECTIONS {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                    continue;
                }
                let b = nr as usize * w + nc as usize;
                let d: f64 = px(a)
                    .iter()
                    .zip(px(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                edges.push((d, a, b));
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0));

    let k = params.scale / 255.0;
    let mut ds = DisjointSet::new(h * w);
    for &(weight, a, b) in &edges {
        let (ra, rb) = (ds.find(a), ds.find(b));
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra] + k / ds.size[ra] as f64;
        let tb = ds.internal[rb] + k / ds.size[rb] as f64;
        if weight <= ta.min(tb) {
            ds.union(ra, rb, weight);
        }
    }
    for &(weight, a, b) in &edges {
        let (ra, rb) = (ds.find(a), ds.find(b));
        if ra != rb && (ds.size[ra] < params.min_size || ds.size[rb] < params.min_size) {
            ds.union(ra, rb, weight);
        }
    }
    let roots: Vec<usize> = (0..h * w).map(|i| ds.find(i)).collect();
    Ok(SegmentMap::relabel_first_seen(&roots, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_world, WorldConfig};
    use proptest::prelude::*;

    fn halves() -> Image {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        for r in 0..4 {
            for c in 2..4 {
                img.set_pixel(r, c, [1.0; 3]);
            }
        }
        img
    }

    #[test]
    fn constant_image_is_one_segment() {
        let p = FhParams {
            min_size: 1,
            ..Default::default()
        };
        assert_eq!(
            fh_segment(&Image::filled(9, 7, [0.3, 0.6, 0.1]), &p)
                .unwrap()
                .count,
            1
        );
    }

    #[test]
    fn two_halves() {
        let p = FhParams {
            scale: 1.0,
            sigma: 0.0,
            min_size: 1,
        };
        let seg = fh_segment(&halves(), &p).unwrap();
        assert_eq!(seg.count, 2);
        assert_eq!(
            seg.labels,
            vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1]
        );
    }

    #[test]
    fn full_min_size_forces_one_segment() {
        let p = FhParams {
            scale: 1.0,
            sigma: 0.0,
            min_size: 16,
        };
        assert_eq!(fh_segment(&halves(), &p).unwrap().count, 1);
    }

    #[test]
    fn synthetic_object_gets_its_own_segment() {
        let world = make_world(&WorldConfig::default()).unwrap();
        let s = world.scene(3);
        let seg = fh_segment(&s.image, &FhParams::default()).unwrap();
        // The segment holding most object pixels should cover the object well.
        let mut counts = vec![0usize; seg.count];
        for (i, &m) in s.gt_mask.data.iter().enumerate() {
            if m {
                counts[seg.labels[i] as usize] += 1;
            }
        }
        let best = (0..seg.count).max_by_key(|&l| counts[l]).unwrap();
        let size = seg.sizes()[best];
        let inter = counts[best] as f64;
        let iou = inter / (size as f64 + s.gt_mask.count() as f64 - inter);
        assert!(iou > 0.6, "object IoU {iou}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = halves();
        assert!(fh_segment(
            &img,
            &FhParams {
                scale: 0.0,
                sigma: 0.5,
                min_size: 1
            }
        )
        .is_err());
        assert!(fh_segment(
            &img,
            &FhParams {
                scale: 1.0,
                sigma: 0.5,
                min_size: 17
            }
        )
        .is_err());
        assert_eq!(min_size_for(64, 64), 63);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn partitions_respect_min_size(
            data in proptest::collection::vec(0.0f64..=1.0, 6 * 5 * 3),
            min_size in 1usize..12,
            scale in 1.0f64..500.0,
        ) {
            let img = Image::new(6, 5, data).unwrap();
            let p = FhParams { scale, sigma: 0.5, min_size };
            let seg = fh_segment(&img, &p).unwrap();
            prop_assert!(SegmentMap::new(6, 5, seg.labels.clone()).is_ok());
            prop_assert!(seg.sizes().iter().all(|&s| s >= min_size));
            prop_assert_eq!(fh_segment(&img, &p).unwrap(), seg);
        }
    }
}

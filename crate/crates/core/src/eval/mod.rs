//! Localization metrics and evaluation reports.

mod report;

pub use report::{
    curve_text, fnd_report, results_csv, summary_text, FndReport, SceneResult, Summary,
};

use crate::error::{Error, Result};
use crate::imaging::Mask;

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub fn include(self, row: usize, col: usize) -> BBox {
        BBox {
            top: self.top.min(row),
            left: self.left.min(col),
            bottom: self.bottom.max(row),
            right: self.right.max(col),
        }
    }

    pub fn area(&self) -> usize {
        (self.bottom + 1 - self.top) * (self.right + 1 - self.left)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..=self.bottom).contains(&row) && (self.left..=self.right).contains(&col)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            top: self.top.max(other.top),
            left: self.left.max(other.left),
            bottom: self.bottom.min(other.bottom),
            right: self.right.min(other.right),
        };
        (b.top <= b.bottom && b.left <= b.right).then_some(b)
    }
}

/// Ground truth for one scene.
#[derive(Clone, Debug, PartialEq)]
pub enum Annotation {
    Mask(Mask),
    /// Boxes from one or more annotators on a `height x width` image.
    Boxes {
        height: usize,
        width: usize,
        boxes: Vec<BBox>,
    },
}

impl Annotation {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Annotation::Mask(m) => (m.height, m.width),
            Annotation::Boxes { height, width, .. } => (*height, *width),
        }
    }

    /// Per-pixel consensus weight in `[0, 1]`.
    pub fn consensus(&self) -> Result<Vec<f64>> {
        match self {
            Annotation::Mask(m) => {
                if m.count() == 0 {
                    return Err(Error::InvalidArgument("annotation mask is empty".into()));
                }
                Ok(m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }
            Annotation::Boxes {
                height,
                width,
                boxes,
            } => {
                if boxes.is_empty() {
                    return Err(Error::InvalidArgument("annotation has no boxes".into()));
                }
                if boxes.iter().any(|b| {
                    b.bottom >= *height || b.right >= *width || b.top > b.bottom || b.left > b.right
                }) {
                    return Err(Error::InvalidArgument(
                        "annotation box outside the image".into(),
                    ));
                }
                let quorum = boxes.len().div_ceil(2) as f64;
                Ok((0..height * width)
                    .map(|i| {
                        let n = boxes
                            .iter()
                            .filter(|b| b.contains(i / width, i % width))
                            .count();
                        (n as f64 / quorum).min(1.0)
                    })
                    .collect())
            }
        }
    }
}

/// Consensus IoU of the prediction `{map > threshold}` against `annotation`.
/// `map` is row-major at the annotation's resolution.
pub fn ciou(map: &[f64], annotation: &Annotation, threshold: f64) -> Result<f64> {
    let (h, w) = annotation.dims();
    if map.len() != h * w {
        return Err(Error::shape(
            "ciou",
            format!("map has {} values, annotation is {h}x{w}", map.len()),
        ));
    }
    let g = annotation.consensus()?;
    let mut hit = 0.0;
    let mut total = 0.0;
    let mut spill = 0.0;
    for (&s, &gx) in map.iter().zip(&g) {
        total += gx;
        if s > threshold {
            hit += gx;
            if gx == 0.0 {
                spill += 1.0;
            }
        }
    }
    Ok(hit / (total + spill))
}

/// Threshold grid `0, 0.05, ..., 1`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// Fraction of scores at or above each threshold.
pub fn success_curve(scores: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "success curve needs at least one score".into(),
        ));
    }
    // Compare against the rounded grid value so 0.15 from 3 * 0.05 and a
    // score of exactly 0.15 agree.
    Ok(thresholds
        .iter()
        .map(|&t| scores.iter().filter(|&&s| s >= t - 1e-12).count() as f64 / scores.len() as f64)
        .collect())
}

/// Trapezoidal area under `ratios` sampled on an evenly spaced grid over `[0, 1]`.
pub fn auc(ratios: &[f64]) -> f64 {
    match ratios.len() {
        0 => 0.0,
        1 => ratios[0],
        n => ratios.windows(2).map(|p| p[0] + p[1]).sum::<f64>() / (2 * (n - 1)) as f64,
    }
}

/// Mean of `map` over the object minus the mean over the background.
pub fn sim_diff(map: &[f64], mask: &Mask) -> Result<f64> {
    if map.len() != mask.data.len() {
        return Err(Error::shape(
            "sim_diff",
            format!("map has {} values, mask {}", map.len(), mask.data.len()),
        ));
    }
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in map.iter().zip(&mask.data) {
        if m {
            fg += v;
            nf += 1;
        } else {
            bg += v;
            nb += 1;
        }
    }
    if nf == 0 || nb == 0 {
        return Err(Error::InvalidArgument(
            "sim_diff needs both object and background pixels".into(),
        ));
    }
    Ok(fg / nf as f64 - bg / nb as f64)
}

/// Tight box around `{map > threshold}`, `None` when nothing exceeds it.
pub fn extract_box(map: &[f64], height: usize, width: usize, threshold: f64) -> Option<BBox> {
    let mask = Mask {
        height,
        width,
        data: map.iter().map(|&v| v > threshold).collect(),
    };
    mask.bounding_box()
}

/// Box IoU; an empty box scores 0.
pub fn iou(a: Option<BBox>, b: Option<BBox>) -> f64 {
    let (Some(a), Some(b)) = (a, b) else {
        return 0.0;
    };
    let inter = a.intersection(&b).map_or(0, |i| i.area());
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// Nearest-neighbour upsampling of a row-major `h x w` map.
pub fn upsample_nearest(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let sr = r * h / out_h;
        for c in 0..out_w {
            out.push(map[sr * w + c * w / out_w]);
        }
    }
    out
}

/// Bilinear upsampling with half-pixel centers and edge clamping.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = coord(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = coord(c, w, out_w);
            let top = map[r0 * w + c0] * (1.0 - fc) + map[r0 * w + c1] * fc;
            let bot = map[r1 * w + c0] * (1.0 - fc) + map[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    out
}

//! Contrastive learning with pseudo-mask feature compaction and
//! audio-similarity false-negative elimination.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmentation::SegmentMap;
use crate::tensor::Tensor;

mod train;

pub use train::{
    negative_sets, pseudo_mask, sacl_forward, sacl_views, train_step_sacl, FndFeatures, MaskType,
    SaclForward, SaclOptions, SaclStepStats,
};

/// Temperature of the contrastive softmax.
pub const TEMPERATURE: f64 = 0.005;

/// Median of the values; the mean of the two middle order statistics when
/// the count is even.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Cells strictly above the median.
pub fn binarize_sim(values: &[f64]) -> Vec<bool> {
    let m = median(values);
    values.iter().map(|&v| v > m).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastiveMask {
    pub cells: Vec<bool>,
    /// Sub-mask with the largest overlap, ties to the smallest label.
    pub segment: usize,
    pub active: usize,
}

pub fn contrastive_mask(bi: &[bool], segments: &SegmentMap) -> Result<ContrastiveMask> {
    if bi.len() != segments.labels.len() {
        return Err(Error::shape(
            "contrastive_mask",
            format!("{} cells vs {} labels", bi.len(), segments.labels.len()),
        ));
    }
    let mut overlap = vec![0usize; segments.count];
    for (&b, &l) in bi.iter().zip(&segments.labels) {
        if b {
            overlap[l as usize] += 1;
        }
    }
    let mut best = 0;
    for (j, &o) in overlap.iter().enumerate() {
        if o > overlap[best] {
            best = j;
        }
    }
    let cells: Vec<bool> = bi
        .iter()
        .zip(&segments.labels)
        .map(|(&b, &l)| b && l as usize == best)
        .collect();
    Ok(ContrastiveMask {
        active: overlap[best],
        cells,
        segment: best,
    })
}

/// Zeroes every feature column outside `mask`; `features` is `[cells, c]`.
pub fn compact_features(mask: &[bool], features: &Tensor<f64>) -> Result<Tensor<f64>> {
    let c = features.len() / mask.len().max(1);
    if c * mask.len() != features.len() {
        return Err(Error::shape(
            "compact_features",
            "mask does not match feature grid".to_string(),
        ));
    }
    let mut out = features.clone();
    for (col, &m) in out.data_mut().chunks_exact_mut(c).zip(mask) {
        if !m {
            col.fill(0.0);
        }
    }
    Ok(out)
}

/// Cells used by the cross-modal maximum: the contrastive mask, else the
/// binarized map, else everything.
pub fn max_cells(mask: &ContrastiveMask, bi: &[bool]) -> Vec<bool> {
    if mask.active > 0 {
        mask.cells.clone()
    } else if bi.iter().any(|&b| b) {
        bi.to_vec()
    } else {
        vec![true; bi.len()]
    }
}

/// Pairwise cosine of the rows of `[N, c]` audio features.
pub fn audio_sim_matrix(audio: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, c) = match audio.shape() {
        &[n, c] if n >= 2 => (n, c),
        s => {
            return Err(Error::shape(
                "audio_sim_matrix",
                format!("need [N >= 2, c], got {s:?}"),
            ))
        }
    };
    let rows: Vec<&[f64]> = audio.data().chunks_exact(c).collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::Degenerate(format!("audio row {i} has zero norm")));
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            let d: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
            let s = d / (norms[i] * norms[j]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Tensor::new(vec![n, n], out)
}

/// Number of negatives kept for a batch of `n` at `proportion`.
pub fn negatives_for(n: usize, proportion: f64) -> usize {
    ((proportion * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSet {
    pub anchor: usize,
    /// Ascending by similarity, ties by index.
    pub indices: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// The `k` candidates least similar to `anchor`.
pub fn fnd_select(sim: &Tensor<f64>, anchor: usize, k: usize) -> Result<NegativeSet> {
    let n = sim.shape()[0];
    if sim.shape() != [n, n] || anchor >= n {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} outside {:?} similarity matrix",
            sim.shape()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            n - 1
        )));
    }
    let row = &sim.data()[anchor * n..(anchor + 1) * n];
    let mut order: Vec<usize> = (0..n).filter(|&j| j != anchor).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(NegativeSet {
        anchor,
        similarities: order.iter().map(|&j| row[j]).collect(),
        indices: order,
    })
}

/// Largest cosine between `audio` and the active columns of `visual` (`[cells, c]`).
pub fn max_xmodal_sim(visual: &Tensor<f64>, active: &[bool], audio: &[f64]) -> Result<f64> {
    let c = audio.len();
    if visual.len() != active.len() * c {
        return Err(Error::shape(
            "max_xmodal_sim",
            "mask does not match feature grid".to_string(),
        ));
    }
    let na = audio.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(Error::Degenerate("audio feature has zero norm".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for (col, &on) in visual.data().chunks_exact(c).zip(active) {
        if !on {
            continue;
        }
        let nv = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = if nv == 0.0 {
            0.0
        } else {
            col.iter().zip(audio).map(|(x, y)| x * y).sum::<f64>() / (na * nv)
        };
        best = best.max(s);
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("no active cells".into()));
    }
    Ok(best)
}

/// Additive mask standing in for "excluded": large and negative but finite.
pub const EXCLUDED: f64 = -1e9;

/// Contrastive loss over rows of a `[R, N]` similarity matrix. Row `r` has
/// its positive at column `positive[r]` and competes only with the columns
/// in `negatives[r]`. Returns the per-row losses `[R, 1]`.
pub fn contrastive_rows<T: Scalar>(
    g: &mut Graph<T>,
    sims: Var,
    positive: &[usize],
    negatives: &[Vec<usize>],
    tau: f64,
) -> Result<Var> {
    let (rows, cols) = match g.shape(sims) {
        &[r, c] => (r, c),
        s => {
            return Err(Error::shape(
                "contrastive_rows",
                format!("expected [R, N], got {s:?}"),
            ))
        }
    };
    if positive.len() != rows || negatives.len() != rows {
        return Err(Error::shape(
            "contrastive_rows",
            "one positive and negative set per row".to_string(),
        ));
    }
    let mut pick = vec![T::zero(); rows * cols];
    let mut keep = vec![T::lit(EXCLUDED); rows * cols];
    for r in 0..rows {
        pick[r * cols + positive[r]] = T::one();
        keep[r * cols + positive[r]] = T::zero();
        for &j in &negatives[r] {
            keep[r * cols + j] = T::zero();
        }
    }
    let logits = g.scalar_mul(sims, T::lit(1.0 / tau));
    let pick = g.constant(Tensor::new(vec![rows, cols], pick)?);
    let keep = g.constant(Tensor::new(vec![rows, cols], keep)?);
    let pos = g.mul(logits, pick)?;
    let pos = g.sum_axis(pos, 1)?;
    let masked = g.add(logits, keep)?;
    let lse = g.logsumexp(masked, 1)?;
    g.sub(lse, pos)
}

/// Mean over anchors of the summed per-view losses, given `[V * N, N]`
/// similarities for `V` views stacked view-major.
pub fn sacl_loss<T: Scalar>(
    g: &mut Graph<T>,
    sims: Var,
    negatives: &[NegativeSet],
    tau: f64,
) -> Result<Var> {
    let n = negatives.len();
    let rows = g.shape(sims)[0];
    if n == 0 || rows % n != 0 {
        return Err(Error::shape(
            "sacl_loss",
            format!("{rows} rows for {n} anchors"),
        ));
    }
    let positive: Vec<usize> = (0..rows).map(|r| r % n).collect();
    let negs: Vec<Vec<usize>> = (0..rows)
        .map(|r| negatives[r % n].indices.clone())
        .collect();
    let per_row = contrastive_rows(g, sims, &positive, &negs, tau)?;
    let total = g.sum(per_row);
    Ok(g.scalar_mul(total, T::lit(1.0 / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::grid_mask;
    use proptest::prelude::*;

    #[test]
    fn binarization_examples() {
        let b = binarize_sim(&[0.1, 0.2, 0.8, 0.9]);
        assert_eq!(median(&[0.1, 0.2, 0.8, 0.9]), 0.5);
        assert_eq!(b.iter().filter(|&&x| x).count(), 2);
        assert!(binarize_sim(&[0.4; 6]).iter().all(|&x| !x));
        assert_eq!(binarize_sim(&[0.0, 0.5, 1.0]), vec![false, false, true]);
    }

    #[test]
    fn contrastive_mask_examples() {
        // Two sub-masks on a 2x2 grid: left column and right column.
        let seg = SegmentMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        let left = [true, false, true, false];
        let m = contrastive_mask(&left, &seg).unwrap();
        assert_eq!((m.segment, m.active), (0, 2));
        assert_eq!(m.cells, left.to_vec());
        let empty = contrastive_mask(&[false; 4], &seg).unwrap();
        assert_eq!((empty.segment, empty.active), (0, 0));

        let quads = grid_mask(4, 4, 2).unwrap();
        let mut bi = vec![false; 16];
        for i in [0, 1, 4, 2] {
            bi[i] = true;
        }
        let m = contrastive_mask(&bi, &quads).unwrap();
        assert_eq!((m.segment, m.active), (0, 3));
        assert!(!m.cells[2]);
    }

    #[test]
    fn compaction_examples() {
        let f = Tensor::from_fn(&[3, 2], |i| i as f64 + 1.0);
        assert_eq!(compact_features(&[true; 3], &f).unwrap(), f);
        assert!(compact_features(&[false; 3], &f)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert_eq!(
            compact_features(&[false, true, false], &f).unwrap().data(),
            &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]
        );
    }

    #[test]
    fn audio_similarity_examples() {
        let eye = Tensor::eye(3);
        assert_eq!(audio_sim_matrix(&eye).unwrap(), eye);
        let dup = Tensor::new(vec![3, 2], vec![1.0, 2.0, 1.0, 2.0, -1.0, 0.5]).unwrap();
        let s = audio_sim_matrix(&dup).unwrap();
        assert!((s.at(&[0, 1]) - 1.0).abs() < 1e-15);
        let v = [[3.0, 4.0], [1.0, 0.0], [-1.0, 1.0]];
        let t = Tensor::new(vec![3, 2], v.iter().flatten().copied().collect()).unwrap();
        let s = audio_sim_matrix(&t).unwrap();
        let cos = |a: [f64; 2], b: [f64; 2]| {
            (a[0] * b[0] + a[1] * b[1]) / ((a[0].hypot(a[1])) * b[0].hypot(b[1]))
        };
        for i in 0..3 {
            for j in 0..3 {
                assert!((s.at(&[i, j]) - cos(v[i], v[j])).abs() < 1e-12);
            }
        }
        assert!(
            audio_sim_matrix(&Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap()).is_err()
        );
    }

    #[test]
    fn fnd_select_examples() {
        let labels = [0, 1, 0, 2, 1, 0];
        let n = labels.len();
        let sim = Tensor::from_fn(&[n, n], |i| {
            if labels[i / n] == labels[i % n] {
                1.0
            } else {
                0.0
            }
        });
        let s = fnd_select(&sim, 0, 3).unwrap();
        assert_eq!(s.indices, vec![1, 3, 4]);
        assert_eq!(fnd_select(&sim, 2, 5).unwrap().indices.len(), 5);
        assert!(fnd_select(&sim, 0, 6).is_err());
        assert!(fnd_select(&sim, 0, 0).is_err());
        assert_eq!(negatives_for(32, 0.75), 24);
        assert_eq!(negatives_for(32, 0.02), 1);
        assert_eq!(negatives_for(32, 1.0), 31);
    }

    #[test]
    fn max_xmodal_examples() {
        let a = [1.0, 0.0];
        let v = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(max_xmodal_sim(&v, &[true, false], &a).unwrap(), 1.0);
        assert_eq!(max_xmodal_sim(&v, &[false, true], &a).unwrap(), 0.0);
        let w = Tensor::new(vec![2, 2], vec![0.3, (1.0f64 - 0.09).sqrt(), 0.8, 0.6]).unwrap();
        assert!((max_xmodal_sim(&w, &[true, true], &a).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fallback_cells() {
        let seg = SegmentMap::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let bi = [false, false, false, false];
        let m = contrastive_mask(&bi, &seg).unwrap();
        assert_eq!(max_cells(&m, &bi), vec![true; 4]);
        let bi = [true, false, false, false];
        let m = contrastive_mask(&bi, &seg).unwrap();
        assert_eq!(max_cells(&m, &bi), bi.to_vec());
    }

    fn row_loss(sims: &[f64], pos: usize, negs: &[usize], tau: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::new(vec![1, sims.len()], sims.to_vec()).unwrap());
        let l = contrastive_rows(&mut g, s, &[pos], &[negs.to_vec()], tau).unwrap();
        g.value(l).item()
    }

    #[test]
    fn loss_examples() {
        assert!((row_loss(&[0.4, 0.4], 0, &[1], TEMPERATURE) - 2f64.ln()).abs() < 1e-12);
        assert!(row_loss(&[1.0, -1.0, -1.0], 0, &[1, 2], TEMPERATURE) < 1e-100);
        let s = [0.3, -0.2, 0.7];
        let want = -(0.3f64.exp() / (0.3f64.exp() + (-0.2f64).exp() + 0.7f64.exp())).ln();
        assert!((row_loss(&s, 0, &[1, 2], 1.0) - want).abs() < 1e-12);
        // An excluded column does not take part.
        assert!((row_loss(&[0.4, 0.4, 0.9], 0, &[1], 1.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_signs() {
        let mut g = Graph::<f64>::new();
        let s = g.param(Tensor::new(vec![1, 4], vec![0.2, 0.1, 0.19, -0.3]).unwrap());
        let l = contrastive_rows(&mut g, s, &[0], &[vec![1, 2, 3]], TEMPERATURE).unwrap();
        let l = g.sum(l);
        let grads = g.backward(l).unwrap();
        let d = grads.get_or_zeros(s, &[1, 4]);
        assert!(d.data()[0] < 0.0);
        assert!(d.data()[1..].iter().all(|&x| x > 0.0));
    }

    proptest! {
        #[test]
        fn negative_sets_are_exact_bottom_k(
            vals in proptest::collection::vec(-1.0f64..1.0, 64),
            anchor in 0usize..8,
            k in 1usize..8,
        ) {
            let sim = Tensor::new(vec![8, 8], vals).unwrap();
            let s = fnd_select(&sim, anchor, k).unwrap();
            prop_assert_eq!(s.indices.len(), k);
            prop_assert!(!s.indices.contains(&anchor));
            let mut all: Vec<(f64, usize)> = (0..8).filter(|&j| j != anchor).map(|j| (sim.at(&[anchor, j]), j)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(s.indices, want);
        }

        #[test]
        fn contrastive_mask_is_subset(bi in proptest::collection::vec(any::<bool>(), 16), d in 1usize..5) {
            let seg = grid_mask(4, 4, d).unwrap();
            let m = contrastive_mask(&bi, &seg).unwrap();
            for i in 0..16 {
                if m.cells[i] {
                    prop_assert!(bi[i]);
                    prop_assert_eq!(seg.labels[i] as usize, m.segment);
                }
            }
        }

        #[test]
        fn loss_is_finite_and_permutation_invariant(
            sims in proptest::collection::vec(-1.0f64..=1.0, 6),
            rot in 0usize..5,
        ) {
            let negs: Vec<usize> = (1..6).collect();
            let mut rotated = negs.clone();
            rotated.rotate_left(rot);
            let a = row_loss(&sims, 0, &negs, TEMPERATURE);
            let b = row_loss(&sims, 0, &rotated, TEMPERATURE);
            prop_assert!(a.is_finite());
            prop_assert_eq!(a, b);
        }
    }
}

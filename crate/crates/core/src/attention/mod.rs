//! Audio-visual similarity maps, their scalings and attention pooling.
//!
//! Plain functions operate on a single scene; the `*_graph` variants build
//! batched, differentiable versions on a [`Graph`].

mod export;

pub use export::{heatmap_pgm, overlay_ppm, OVERLAY_ALPHA};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingMethod {
    MinMax,
    Relu,
    Sigmoid,
    Softmax,
    ReluSoftmax,
}

impl ScalingMethod {
    pub const ALL: [ScalingMethod; 5] = [
        ScalingMethod::Relu,
        ScalingMethod::Sigmoid,
        ScalingMethod::Softmax,
        ScalingMethod::ReluSoftmax,
        ScalingMethod::MinMax,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "minmax" | "min-max" => ScalingMethod::MinMax,
            "relu" => ScalingMethod::Relu,
            "sigmoid" => ScalingMethod::Sigmoid,
            "softmax" => ScalingMethod::Softmax,
            "relu+softmax" | "relu-softmax" => ScalingMethod::ReluSoftmax,
            other => return Err(Error::Config(format!("unknown scaling method `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalingMethod::MinMax => "minmax",
            ScalingMethod::Relu => "relu",
            ScalingMethod::Sigmoid => "sigmoid",
            ScalingMethod::Softmax => "softmax",
            ScalingMethod::ReluSoftmax => "relu+softmax",
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-location cosine between `audio` (`c`) and `visual` (`[h, w, c]`).
/// Locations whose visual feature is zero score 0.
pub fn similarity_map(audio: &[f64], visual: &Tensor<f64>) -> Result<SimilarityMap> {
    let (h, w, c) = match visual.shape() {
        &[h, w, c] => (h, w, c),
        s => {
            return Err(Error::shape(
                "similarity_map",
                format!("visual features must be [h, w, c], got {s:?}"),
            ))
        }
    };
    if audio.len() != c {
        return Err(Error::shape(
            "similarity_map",
            format!("audio has {} channels, visual {c}", audio.len()),
        ));
    }
    let na = norm(audio);
    if na == 0.0 {
        return Err(Error::Degenerate("audio feature has zero norm".into()));
    }
    let values = visual
        .data()
        .chunks_exact(c)
        .map(|col| {
            let nv = norm(col);
            if nv == 0.0 {
                0.0
            } else {
                col.iter().zip(audio).map(|(x, y)| x * y).sum::<f64>() / (na * nv)
            }
        })
        .collect();
    Ok(SimilarityMap {
        height: h,
        width: w,
        values,
        normalized: false,
    })
}

/// Min-max normalization; a constant map becomes all 0.5.
pub fn minmax(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn scale_map(map: &SimilarityMap, method: ScalingMethod) -> SimilarityMap {
    let v = &map.values;
    let values = match method {
        ScalingMethod::MinMax => minmax(v),
        ScalingMethod::Relu => v.iter().map(|x| x.max(0.0)).collect(),
        ScalingMethod::Sigmoid => v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        ScalingMethod::Softmax => softmax(v),
        ScalingMethod::ReluSoftmax => softmax(&v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>()),
    };
    SimilarityMap {
        values,
        normalized: true,
        ..map.clone()
    }
}

/// `f_av(k) = sum_ij S(i, j) f_v(k, i, j)`.
pub fn pooled_av_rep(map: &SimilarityMap, visual: &Tensor<f64>) -> Result<Vec<f64>> {
    let c = *visual.shape().last().unwrap_or(&0);
    if visual.len() != map.values.len() * c {
        return Err(Error::shape(
            "pooled_av_rep",
            "map and visual grid differ".to_string(),
        ));
    }
    let mut out = vec![0.0; c];
    for (s, col) in map.values.iter().zip(visual.data().chunks_exact(c)) {
        for (o, x) in out.iter_mut().zip(col) {
            *o += s * x;
        }
    }
    Ok(out)
}

/// Batched cosine maps: `audio [N, c]` against `visual [N, cells, c]`,
/// giving `[N, cells]`.
pub fn similarity_graph<T: Scalar>(g: &mut Graph<T>, audio: Var, visual: Var) -> Result<Var> {
    let (n, c) = match g.shape(audio) {
        &[n, c] => (n, c),
        s => {
            return Err(Error::shape(
                "similarity_graph",
                format!("audio must be [N, c], got {s:?}"),
            ))
        }
    };
    let cells = match g.shape(visual) {
        &[vn, cells, vc] if vn == n && vc == c => cells,
        s => {
            return Err(Error::shape(
                "similarity_graph",
                format!("visual must be [{n}, cells, {c}], got {s:?}"),
            ))
        }
    };
    if g.value(audio)
        .data()
        .chunks_exact(c)
        .any(|row| row.iter().all(|&x| x == T::zero()))
    {
        return Err(Error::Degenerate("audio feature has zero norm".into()));
    }
    let na = g.l2_normalize(audio, 1)?;
    let na = g.reshape(na, &[n, c, 1])?;
    let nv = g.l2_normalize(visual, 2)?;
    let s = g.batch_matmul(nv, na)?;
    g.reshape(s, &[n, cells])
}

/// Batched scaling of `[N, cells]` maps along the cell axis.
pub fn scale_graph<T: Scalar>(g: &mut Graph<T>, s: Var, method: ScalingMethod) -> Result<Var> {
    Ok(match method {
        ScalingMethod::MinMax => minmax_graph(g, s)?,
        ScalingMethod::Relu => g.relu(s),
        ScalingMethod::Sigmoid => g.sigmoid(s),
        ScalingMethod::Softmax => g.softmax(s, 1)?,
        ScalingMethod::ReluSoftmax => {
            let r = g.relu(s);
            g.softmax(r, 1)?
        }
    })
}

/// `(s - min) / (max - min)` per row; constant rows become 0.5 with zero
/// gradient.
pub fn minmax_graph<T: Scalar>(g: &mut Graph<T>, s: Var) -> Result<Var> {
    let lo = g.min_axis(s, 1)?;
    let hi = g.max_axis(s, 1)?;
    let range = g.sub(hi, lo)?;
    let rows = g.shape(range)[0];
    let flat: Vec<bool> = g
        .value(range)
        .data()
        .iter()
        .map(|&r| r <= T::zero())
        .collect();
    let num = g.sub(s, lo)?;
    if !flat.iter().any(|&f| f) {
        return g.div(num, range);
    }
    let pad = g.constant(Tensor::from_fn(&[rows, 1], |i| {
        if flat[i] {
            T::one()
        } else {
            T::zero()
        }
    }));
    let live = g.constant(Tensor::from_fn(&[rows, 1], |i| {
        if flat[i] {
            T::zero()
        } else {
            T::one()
        }
    }));
    let half = g.constant(Tensor::from_fn(&[rows, 1], |i| {
        if flat[i] {
            T::lit(0.5)
        } else {
            T::zero()
        }
    }));
    let num = g.mul(num, live)?;
    let denom = g.add(range, pad)?;
    let scaled = g.div(num, denom)?;
    g.add(scaled, half)
}

/// Batched pooling: `weights [N, cells]`, `visual [N, cells, c]` to `[N, c]`.
pub fn pooled_graph<T: Scalar>(g: &mut Graph<T>, weights: Var, visual: Var) -> Result<Var> {
    let (n, cells) = match g.shape(weights) {
        &[n, cells] => (n, cells),
        s => {
            return Err(Error::shape(
                "pooled_graph",
                format!("weights must be [N, cells], got {s:?}"),
            ))
        }
    };
    let c = *g.shape(visual).last().unwrap_or(&0);
    let w = g.reshape(weights, &[n, 1, cells])?;
    let p = g.batch_matmul(w, visual)?;
    g.reshape(p, &[n, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use proptest::prelude::*;

    fn grid(h: usize, w: usize, c: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[h, w, c], f)
    }

    #[test]
    fn colinear_and_orthogonal_maps() {
        let a = [0.3, -0.4];
        let v = grid(2, 3, 2, |i| a[i % 2] * 2.0);
        assert!(similarity_map(&a, &v)
            .unwrap()
            .values
            .iter()
            .all(|&x| (x - 1.0).abs() < 1e-12));
        let o = grid(2, 3, 2, |i| if i % 2 == 0 { 0.4 } else { 0.3 });
        assert!(similarity_map(&a, &o)
            .unwrap()
            .values
            .iter()
            .all(|&x| x.abs() < 1e-12));
        assert!(similarity_map(&[0.0, 0.0], &o).is_err());
    }

    #[test]
    fn two_by_two_map_by_scalar_cosine() {
        let feats = [[1.0, 0.0], [1.0, 1.0], [0.0, 0.0], [-2.0, 1.0]];
        let v = Tensor::new(vec![2, 2, 2], feats.iter().flatten().copied().collect()).unwrap();
        let a = [2.0, 1.0];
        let m = similarity_map(&a, &v).unwrap();
        let want = [
            2.0 / 5f64.sqrt(),
            3.0 / (5f64.sqrt() * 2f64.sqrt()),
            0.0,
            -3.0 / 5.0,
        ];
        for (got, w) in m.values.iter().zip(want) {
            assert!((got - w).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_examples() {
        let m = SimilarityMap {
            height: 1,
            width: 3,
            values: vec![-1.0, 0.0, 1.0],
            normalized: false,
        };
        assert_eq!(
            scale_map(&m, ScalingMethod::MinMax).values,
            vec![0.0, 0.5, 1.0]
        );
        let c = SimilarityMap {
            values: vec![0.3; 3],
            ..m.clone()
        };
        let sm = scale_map(&c, ScalingMethod::Softmax);
        assert!(sm.values.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(scale_map(&c, ScalingMethod::MinMax).values, vec![0.5; 3]);
        assert_eq!(
            scale_map(&m, ScalingMethod::Relu).values,
            vec![0.0, 0.0, 1.0]
        );
        assert!(ScalingMethod::parse("nope").is_err());
        for s in ScalingMethod::ALL {
            assert_eq!(ScalingMethod::parse(s.name()).unwrap(), s);
        }
    }

    #[test]
    fn pooling_examples() {
        let v = grid(2, 1, 3, |i| i as f64 + 1.0);
        let sel = SimilarityMap {
            height: 2,
            width: 1,
            values: vec![1.0, 0.0],
            normalized: true,
        };
        assert_eq!(pooled_av_rep(&sel, &v).unwrap(), vec![1.0, 2.0, 3.0]);
        let zero = SimilarityMap {
            values: vec![0.0; 2],
            ..sel.clone()
        };
        assert_eq!(pooled_av_rep(&zero, &v).unwrap(), vec![0.0; 3]);
        let v4 = grid(2, 2, 2, |i| (i as f64) * 0.5 - 1.0);
        let w = SimilarityMap {
            height: 2,
            width: 2,
            values: vec![0.1, 0.2, 0.3, 0.4],
            normalized: true,
        };
        let got = pooled_av_rep(&w, &v4).unwrap();
        let want = [
            0.1 * -1.0 + 0.2 * 0.0 + 0.3 * 1.0 + 0.4 * 2.0,
            0.1 * -0.5 + 0.2 * 0.5 + 0.3 * 1.5 + 0.4 * 2.5,
        ];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_versions_match_plain() {
        let cells = 6;
        let v = Tensor::from_fn(&[2, cells, 3], |i| ((i * 7 % 11) as f64 - 5.0) * 0.3);
        let a = Tensor::from_fn(&[2, 3], |i| (i as f64 * 0.9).cos());
        let mut g = Graph::new();
        let (av, vv) = (g.constant(a.clone()), g.constant(v.clone()));
        let s = similarity_graph(&mut g, av, vv).unwrap();
        let st = scale_graph(&mut g, s, ScalingMethod::MinMax).unwrap();
        let p = pooled_graph(&mut g, st, vv).unwrap();
        for n in 0..2 {
            let vis = Tensor::new(vec![2, 3, 3], v.data()[n * 18..(n + 1) * 18].to_vec()).unwrap();
            let raw = similarity_map(&a.data()[n * 3..n * 3 + 3], &vis).unwrap();
            let sc = scale_map(&raw, ScalingMethod::MinMax);
            let pooled = pooled_av_rep(&sc, &vis).unwrap();
            for k in 0..cells {
                assert!((g.value(s).data()[n * cells + k] - raw.values[k]).abs() < 1e-12);
                assert!((g.value(st).data()[n * cells + k] - sc.values[k]).abs() < 1e-12);
            }
            for k in 0..3 {
                assert!((g.value(p).data()[n * 3 + k] - pooled[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_rows_in_graph_minmax() {
        let mut g = Graph::<f64>::new();
        let s = g.param(Tensor::new(vec![2, 3], vec![0.2, 0.2, 0.2, 0.0, 1.0, 0.5]).unwrap());
        let m = minmax_graph(&mut g, s).unwrap();
        assert_eq!(g.value(m).data(), &[0.5, 0.5, 0.5, 0.0, 1.0, 0.5]);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert!(grads.get_or_zeros(s, &[2, 3]).data()[..3]
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn attention_pipeline_gradcheck() {
        let v = Tensor::from_fn(&[1, 4, 3], |i| {
            ((i * 5 % 7) as f64 - 3.0) * 0.4 + 0.05 * i as f64
        });
        let a = Tensor::from_fn(&[1, 3], |i| 0.5 + i as f64 * 0.3);
        let err = grad_check(
            |g, x| {
                let s = similarity_graph(g, x[0], x[1])?;
                let st = scale_graph(g, s, ScalingMethod::MinMax)?;
                let p = pooled_graph(g, st, x[1])?;
                let q = g.mul(p, p)?;
                Ok(g.sum(q))
            },
            &[a, v],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    proptest! {
        #[test]
        fn minmax_preserves_order(values in proptest::collection::vec(-1.0f64..1.0, 2..30)) {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(hi > lo);
            let s = minmax(&values);
            for i in 0..values.len() {
                for j in 0..values.len() {
                    prop_assert_eq!(values[i] < values[j], s[i] < s[j]);
                }
            }
            prop_assert_eq!(s.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(s.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }

        #[test]
        fn similarity_is_scale_invariant(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            v in proptest::collection::vec(-1.0f64..1.0, 24),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3);
            let vis = Tensor::new(vec![2, 3, 4], v).unwrap();
            let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let m1 = similarity_map(&a, &vis).unwrap();
            let m2 = similarity_map(&scaled, &vis).unwrap();
            for (x, y) in m1.values.iter().zip(&m2.values) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(x));
            }
        }

        #[test]
        fn pooling_is_linear(
            w in proptest::collection::vec(0.0f64..1.0, 4),
            x in proptest::collection::vec(-1.0f64..1.0, 8),
            y in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let m = SimilarityMap { height: 2, width: 2, values: w, normalized: true };
            let tx = Tensor::new(vec![2, 2, 2], x.clone()).unwrap();
            let ty = Tensor::new(vec![2, 2, 2], y.clone()).unwrap();
            let sum = Tensor::new(vec![2, 2, 2], x.iter().zip(&y).map(|(a, b)| a + b).collect()).unwrap();
            let px = pooled_av_rep(&m, &tx).unwrap();
            let py = pooled_av_rep(&m, &ty).unwrap();
            let ps = pooled_av_rep(&m, &sum).unwrap();
            for k in 0..2 {
                prop_assert!((ps[k] - px[k] - py[k]).abs() < 1e-12);
            }
        }
    }
}

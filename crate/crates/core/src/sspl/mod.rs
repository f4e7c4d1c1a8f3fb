//! Negative-free predictive learning: two spatial views of each scene are
//! pooled by their audio similarity maps, projected, and each view's
//! prediction is pulled toward the other view's projection.

use rand::Rng;

use crate::attention::{pooled_graph, scale_graph};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::model::{audio_batch, encode, ModelConfig};
use crate::optim::{adamw_step, OptimizerState};
use crate::params::{init_normal, Bound, ParamStore};
use crate::rng::{derive_seed, tags};
use crate::scalar::Scalar;
use crate::synth::{augment_spatial, PatchProjection, Scene, SpatialConfig};
use crate::tensor::Tensor;

pub const PROJ_WIDTHS: [usize; 3] = [64, 64, 32];
pub const PRED_HIDDEN: usize = 16;

fn layer_names(head: &str, i: usize) -> (String, String) {
    (format!("sspl.{head}.{i}.w"), format!("sspl.{head}.{i}.b"))
}

fn head_dims(input: usize) -> (Vec<usize>, Vec<usize>) {
    let proj = [input, PROJ_WIDTHS[0], PROJ_WIDTHS[1], PROJ_WIDTHS[2]].to_vec();
    let out = PROJ_WIDTHS[2];
    (proj, vec![out, PRED_HIDDEN, out])
}

fn norm_names(head: &str, i: usize) -> (String, String) {
    (
        format!("sspl.{head}.{i}.gamma"),
        format!("sspl.{head}.{i}.beta"),
    )
}

/// Adds projector and predictor weights for `c_v`-dimensional inputs, and
/// with `head_norm` the scale and shift of each projector hidden layer.
pub fn init_heads<T: Scalar>(
    store: &mut ParamStore<T>,
    input: usize,
    head_norm: bool,
    rng: &mut impl Rng,
) {
    let (proj, pred) = head_dims(input);
    for (head, dims) in [("proj", &proj), ("pred", &pred)] {
        for (i, d) in dims.windows(2).enumerate() {
            let (w, b) = layer_names(head, i);
            store.insert(&w, init_normal(&[d[0], d[1]], d[0], rng));
            store.insert(&b, Tensor::zeros(&[d[1]]));
        }
    }
    if head_norm {
        for (i, &d) in proj[1..proj.len() - 1].iter().enumerate() {
            let (gamma, beta) = norm_names("proj", i);
            store.insert(&gamma, Tensor::from_fn(&[d], |_| T::one()));
            store.insert(&beta, Tensor::zeros(&[d]));
        }
    }
}

/// `norm_hidden` batch-normalizes each hidden layer, with a learned scale
/// and shift, before its ReLU.
fn mlp<T: Scalar>(
    g: &mut Graph<T>,
    params: &Bound,
    head: &str,
    layers: usize,
    norm_hidden: bool,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let (w, b) = layer_names(head, i);
        h = g.matmul(h, params.var(&w)?)?;
        h = g.add(h, params.var(&b)?)?;
        if i + 1 < layers {
            if norm_hidden {
                let (gamma, beta) = norm_names(head, i);
                h = batch_norm(g, h)?;
                h = g.mul(h, params.var(&gamma)?)?;
                h = g.add(h, params.var(&beta)?)?;
            }
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Standardizes each column of `[N, d]` over the batch, without affine terms.
pub fn batch_norm<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    let inv = T::lit(1.0 / n as f64);
    let s = g.sum_axis(x, 0)?;
    let mu = g.scalar_mul(s, inv);
    let xc = g.sub(x, mu)?;
    let sq = g.mul(xc, xc)?;
    let v = g.sum_axis(sq, 0)?;
    let v = g.scalar_mul(v, inv);
    let v = g.add_scalar(v, T::lit(1e-5));
    let l = g.log(v)?;
    let l = g.scalar_mul(l, T::lit(-0.5));
    let r = g.exp(l);
    g.mul(xc, r)
}

/// Projection `z` and prediction `p` of pooled representations `[N, c_v]`.
/// `head_norm` batch-normalizes the projector's hidden layers.
pub fn project_predict<T: Scalar>(
    g: &mut Graph<T>,
    params: &Bound,
    f_av: Var,
    head_norm: bool,
) -> Result<(Var, Var)> {
    let z = mlp(g, params, "proj", 3, head_norm, f_av)?;
    let p = mlp(g, params, "pred", 2, false, z)?;
    Ok((z, p))
}

/// Negative cosine similarity of two vectors.
pub fn ncs_loss<T: Scalar>(g: &mut Graph<T>, p: Var, z: Var) -> Result<Var> {
    for v in [p, z] {
        if g.value(v).data().iter().all(|&x| x == T::zero()) {
            return Err(Error::Degenerate("negative cosine of a zero vector".into()));
        }
    }
    let axis = g.shape(p).len() - 1;
    let c = g.cosine_similarity(p, z, axis)?;
    let s = g.sum(c);
    Ok(g.neg(s))
}

/// How the target projection enters the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Stop-gradient: the target is detached.
    Detached,
    /// Gradients flow into the target branch as well.
    Live,
    /// The target is rebuilt from its values as a fresh constant.
    Constant,
}

/// Symmetric loss over `[2N, d]` predictions and projections stacked as
/// view 1 then view 2: the mean over rows of `-cos(p, swap(z))`, where
/// `swap` exchanges the two view halves.
#[derive(Clone, Debug)]
pub struct SsplLoss {
    pub loss: Var,
    /// View-swapped projections before the target treatment.
    pub swapped: Var,
    pub target: Var,
}

pub fn sspl_loss<T: Scalar>(g: &mut Graph<T>, p: Var, z: Var, target: Target) -> Result<SsplLoss> {
    let rows = g.shape(z)[0];
    if rows % 2 != 0 || g.shape(p) != g.shape(z) {
        return Err(Error::shape(
            "sspl_loss",
            format!("p {:?} and z {:?} must be [2N, d]", g.shape(p), g.shape(z)),
        ));
    }
    let n = rows / 2;
    let perm = Tensor::from_fn(&[rows, rows], |i| {
        let (r, c) = (i / rows, i % rows);
        if c == (r + n) % rows {
            T::one()
        } else {
            T::zero()
        }
    });
    let perm = g.constant(perm);
    let swapped = g.matmul(perm, z)?;
    let t = match target {
        Target::Detached => g.detach(swapped),
        Target::Live => swapped,
        Target::Constant => {
            let v = g.value(swapped).clone();
            g.constant(v)
        }
    };
    if g.value(p)
        .data()
        .chunks_exact(g.shape(p)[1])
        .any(|r| r.iter().all(|&x| x == T::zero()))
    {
        return Err(Error::Degenerate("zero prediction vector".into()));
    }
    let cos = g.cosine_similarity(p, t, 1)?;
    let m = g.mean(cos);
    Ok(SsplLoss {
        loss: g.neg(m),
        swapped,
        target: t,
    })
}

/// Mean over dimensions of the across-batch standard deviation of the
/// l2-normalized rows of `z` `[B, d]`.
pub fn collapse_metric(z: &Tensor<f64>) -> Result<f64> {
    let (b, d) = match z.shape() {
        &[b, d] => (b, d),
        s => {
            return Err(Error::shape(
                "collapse_metric",
                format!("expected [B, d], got {s:?}"),
            ))
        }
    };
    if b < 2 {
        return Err(Error::InvalidArgument(
            "collapse_metric needs a batch of at least 2".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = z
        .data()
        .chunks_exact(d)
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter()
                .map(|x| if n > 0.0 { x / n } else { 0.0 })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / b as f64;
        let var = rows
            .iter()
            .map(|r| (r[k] - mean) * (r[k] - mean))
            .sum::<f64>()
            / b as f64;
        total += var.sqrt();
    }
    Ok(total / d as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsplOptions {
    pub stop_gradient: bool,
    pub spatial: SpatialConfig,
}

impl Default for SsplOptions {
    fn default() -> Self {
        SsplOptions {
            stop_gradient: true,
            spatial: SpatialConfig::default(),
        }
    }
}

/// Seed of view `view` of batch slot `slot` at training step `step`.
pub fn view_seed(seed: u64, step: u64, slot: usize, view: usize) -> u64 {
    derive_seed(
        derive_seed(seed, tags::VIEW, step),
        slot as u64,
        view as u64,
    )
}

/// Two spatial views per scene, stacked view-major: all first views, then
/// all second views.
pub fn spatial_views(
    scenes: &[&Scene],
    seed: u64,
    step: u64,
    config: &SpatialConfig,
) -> Vec<Image> {
    let mut views = Vec::with_capacity(scenes.len() * 2);
    for view in 0..2 {
        for (slot, s) in scenes.iter().enumerate() {
            let (im, _, _) = augment_spatial(
                &s.image,
                &s.gt_mask,
                view_seed(seed, step, slot, view),
                config,
            );
            views.push(im);
        }
    }
    views
}

#[derive(Clone, Debug)]
pub struct SsplForward {
    pub loss: SsplLoss,
    pub z: Var,
    pub p: Var,
    pub energies: Vec<f64>,
}

/// Full pipeline on `2N` view images against the shared audio.
pub fn sspl_forward(
    g: &mut Graph<f64>,
    params: &Bound,
    config: &ModelConfig,
    projection: &PatchProjection,
    views: &[Image],
    audio: &Tensor<f64>,
    target: Target,
) -> Result<SsplForward> {
    let n = audio.shape()[0];
    if views.len() != 2 * n {
        return Err(Error::shape(
            "sspl_forward",
            format!("{} views for {n} scenes", views.len()),
        ));
    }
    let refs: Vec<&Image> = views.iter().collect();
    let frozen = projection.project_batch(&refs)?;
    let mut twice = audio.data().to_vec();
    twice.extend_from_slice(audio.data());
    let audio2 = Tensor::new(vec![2 * n, audio.shape()[1]], twice)?;
    let enc = encode(g, params, config, frozen, audio2)?;
    let weights = scale_graph(g, enc.sim, config.scaling)?;
    let f_av = pooled_graph(g, weights, enc.visual)?;
    let (z, p) = project_predict(g, params, f_av, config.head_norm)?;
    let loss = sspl_loss(g, p, z, target)?;
    Ok(SsplForward {
        loss,
        z,
        p,
        energies: enc.energies,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsplStepStats {
    pub loss: f64,
    pub collapse_metric: f64,
    /// Largest gradient magnitude reaching the detached target branch.
    pub detached_grad_max_abs: f64,
    pub energies: Vec<f64>,
}

/// One optimization step on `scenes`.
#[allow(clippy::too_many_arguments)]
pub fn train_step_sspl(
    config: &ModelConfig,
    projection: &PatchProjection,
    params: &mut ParamStore<f64>,
    state: &mut OptimizerState<f64>,
    scenes: &[&Scene],
    options: &SsplOptions,
    seed: u64,
    step: u64,
) -> Result<SsplStepStats> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let views = spatial_views(scenes, seed, step, &options.spatial);
    let audio = audio_batch(scenes)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let target = if options.stop_gradient {
        Target::Detached
    } else {
        Target::Live
    };
    let fwd = sspl_forward(&mut g, &bound, config, projection, &views, &audio, target)?;
    let grads = g.backward(fwd.loss.loss)?;
    let detached_grad_max_abs = if options.stop_gradient {
        grads.get(fwd.loss.swapped).map_or(0.0, |t| t.max_abs())
    } else {
        0.0
    };
    let stats = SsplStepStats {
        loss: g.value(fwd.loss.loss).item(),
        collapse_metric: collapse_metric(g.value(fwd.z))?,
        detached_grad_max_abs,
        energies: fwd.energies,
    };
    let flat = bound.collect(&grads, params);
    adamw_step(params, &flat, state)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::model::{init_params, Scheme};
    use crate::optim::AdamWConfig;
    use crate::rng::stream;
    use crate::synth::{make_world, WorldConfig};
    use proptest::prelude::*;

    fn vec_var(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.constant(Tensor::new(vec![v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn ncs_examples() {
        let mut g = Graph::new();
        let z = vec_var(&mut g, &[0.3, -1.2, 2.0]);
        let mz = vec_var(&mut g, &[-0.3, 1.2, -2.0]);
        let same = ncs_loss(&mut g, z, z).unwrap();
        let opp = ncs_loss(&mut g, z, mz).unwrap();
        assert!((g.value(same).item() + 1.0).abs() < 1e-15);
        assert!((g.value(opp).item() - 1.0).abs() < 1e-15);
        let p = vec_var(&mut g, &[1.0, 0.0]);
        let q = vec_var(&mut g, &[1.0, 1.0]);
        let l = ncs_loss(&mut g, p, q).unwrap();
        assert!((g.value(l).item() + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let zero = vec_var(&mut g, &[0.0, 0.0]);
        assert!(ncs_loss(&mut g, zero, q).is_err());
    }

    #[test]
    fn zero_heads_output_zero() {
        let mut store = ParamStore::<f64>::new();
        init_heads(&mut store, 32, false, &mut stream(0, tags::INIT, 0));
        for t in store.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let x = g.constant(Tensor::from_fn(&[3, 32], |i| i as f64));
        let (z, p) = project_predict(&mut g, &b, x, false).unwrap();
        assert_eq!(g.shape(z), &[3, 32]);
        assert_eq!(g.shape(p), &[3, 32]);
        assert!(g
            .value(z)
            .data()
            .iter()
            .chain(g.value(p).data())
            .all(|&v| v == 0.0));
    }

    fn pz(g: &mut Graph<f64>, seed: u64) -> (Var, Var) {
        let mut rng = stream(seed, 99, 0);
        let p = g.param(Tensor::from_fn(&[6, 4], |_| rng.random_range(-1.0..1.0)));
        let z = g.param(Tensor::from_fn(&[6, 4], |_| rng.random_range(-1.0..1.0)));
        (p, z)
    }

    #[test]
    fn aligned_views_give_minus_one() {
        let mut g = Graph::new();
        let half = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.9).sin() + 0.1);
        let mut both = half.data().to_vec();
        both.extend_from_slice(half.data());
        let z = g.constant(Tensor::new(vec![6, 4], both).unwrap());
        let l = sspl_loss(&mut g, z, z, Target::Detached).unwrap();
        assert!((g.value(l.loss).item() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn view_swap_leaves_loss_unchanged() {
        let mut g = Graph::new();
        let (p, z) = pz(&mut g, 4);
        let a = sspl_loss(&mut g, p, z, Target::Detached).unwrap();
        let perm = g.constant(Tensor::from_fn(&[6, 6], |i| {
            if i % 6 == (i / 6 + 3) % 6 {
                1.0
            } else {
                0.0
            }
        }));
        let ps = g.matmul(perm, p).unwrap();
        let zs = g.matmul(perm, z).unwrap();
        let b = sspl_loss(&mut g, ps, zs, Target::Detached).unwrap();
        assert!((g.value(a.loss).item() - g.value(b.loss).item()).abs() < 1e-15);
    }

    #[test]
    fn stop_gradient_matches_constant_target() {
        let run = |t: Target| {
            let mut g = Graph::new();
            let (p, z) = pz(&mut g, 5);
            let l = sspl_loss(&mut g, p, z, t).unwrap();
            let grads = g.backward(l.loss).unwrap();
            (
                grads.get_or_zeros(p, &[6, 4]),
                grads.get_or_zeros(z, &[6, 4]),
                grads.get(l.swapped).cloned(),
            )
        };
        let (dp, dz, sw) = run(Target::Detached);
        let (cp, cz, _) = run(Target::Constant);
        assert_eq!(dp, cp);
        assert_eq!(dz, cz);
        assert!(dz.data().iter().all(|&x| x == 0.0));
        assert!(sw.is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
        let (_, lz, _) = run(Target::Live);
        assert!(lz.max_abs() > 0.0);
    }

    #[test]
    fn loss_gradcheck() {
        let mut rng = stream(8, 99, 0);
        let pt = vec![
            Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0)),
        ];
        let err = grad_check(
            |g, x| Ok(sspl_loss(g, x[0], x[1], Target::Live)?.loss),
            &pt,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn collapse_metric_examples() {
        let same = Tensor::from_fn(&[5, 3], |i| [1.0, 2.0, 3.0][i % 3]);
        assert!(collapse_metric(&same).unwrap() < 1e-15);
        let alt = Tensor::from_fn(&[4, 3], |i| {
            if i % 3 == 0 {
                if (i / 3) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        });
        assert!((collapse_metric(&alt).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(collapse_metric(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn uniform_sphere_reaches_reference_level() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream(11, 99, 0);
        let z = Tensor::from_fn(&[1024, 32], |_| StandardNormal.sample(&mut rng));
        let m = collapse_metric(&z).unwrap();
        let reference = 1.0 / 32f64.sqrt();
        assert!((m / reference - 1.0).abs() < 0.15, "{m}");
    }

    fn setup(
        lr: f64,
    ) -> (
        ModelConfig,
        PatchProjection,
        ParamStore<f64>,
        OptimizerState<f64>,
        Vec<Scene>,
    ) {
        let w = WorldConfig::default();
        let world = make_world(&w).unwrap();
        let cfg = ModelConfig::new(w.clone(), Scheme::Sspl);
        let params = init_params(&cfg, 1).unwrap();
        let opt = OptimizerState::new(
            AdamWConfig {
                lr,
                weight_decay: 0.0,
                ..Default::default()
            },
            &params,
        );
        (
            cfg,
            PatchProjection::new(&w),
            params,
            opt,
            (0..2).map(|i| world.scene(i)).collect(),
        )
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (cfg, proj, mut params, mut opt, scenes) = setup(0.0);
        let before = params.clone();
        let refs: Vec<&Scene> = scenes.iter().collect();
        let s = train_step_sspl(
            &cfg,
            &proj,
            &mut params,
            &mut opt,
            &refs,
            &SsplOptions::default(),
            3,
            0,
        )
        .unwrap();
        assert_eq!(params, before);
        assert_eq!(s.detached_grad_max_abs, 0.0);
        assert!((-1.0..=1.0).contains(&s.loss));
    }

    #[test]
    fn fixed_seed_step_is_reproducible() {
        let run = || {
            let (cfg, proj, mut params, mut opt, scenes) = setup(1e-3);
            let refs: Vec<&Scene> = scenes.iter().collect();
            let s = train_step_sspl(
                &cfg,
                &proj,
                &mut params,
                &mut opt,
                &refs,
                &SsplOptions::default(),
                3,
                0,
            )
            .unwrap();
            (s.loss.to_bits(), params)
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn loss_bounded_and_symmetric(seed in 0u64..10_000) {
            let mut g = Graph::new();
            let (p, z) = pz(&mut g, seed);
            let l = sspl_loss(&mut g, p, z, Target::Detached).unwrap();
            let v = g.value(l.loss).item();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
}

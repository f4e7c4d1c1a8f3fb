//! Central-difference gradient suite over every differentiable operation
//! and the two training objectives end to end.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{minmax_graph, pooled_graph, similarity_graph};
use crate::autodiff::{grad_check, Graph, Var};
use crate::error::Result;
use crate::model::{audio_batch, init_params, ModelConfig, Scheme};
use crate::params::{Bound, ParamStore};
use crate::pcm::PcmConfig;
use crate::rng::{stream, tags};
use crate::sacl::{pseudo_mask, sacl_forward, sacl_views, MaskType, SaclOptions};
use crate::segmentation::{min_size_for, FhParams, SegmentMap};
use crate::sspl::{batch_norm, spatial_views, sspl_forward, sspl_loss, Target};
use crate::synth::{make_world, PatchProjection, Scene, SpatialConfig, WorldConfig};
use crate::tensor::Tensor;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const PIPELINE_TOLERANCE: f64 = 1e-4;
pub const OP_POINTS: usize = 20;
pub const PIPELINE_POINTS: usize = 2;
const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub points: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub cases: Vec<GradCase>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(GradCase::passed)
    }

    /// One line per case: name, points, worst relative error, verdict.
    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let verdict = if c.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<24} points={:<3} max_rel_err={:.3e} tol={:.0e} {verdict}",
                c.name, c.points, c.max_error, c.tolerance
            );
        }
        let failed = self.cases.iter().filter(|c| !c.passed()).count();
        let _ = writeln!(s, "{} cases, {failed} failed", self.cases.len());
        s
    }
}

type Gen = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;
type Func = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[-1, 1]` kept at least `0.05` away from zero, so kinks at the
/// origin stay outside the difference stencil.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let x: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            x
        } else {
            -x
        }
    })
}

/// Fixed non-uniform weighting that turns any output into a scalar.
fn readout(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let w = Tensor::from_fn(g.shape(y), |i| (1.3 * i as f64 + 0.4).sin() + 0.2);
    let w = g.constant(w);
    let m = g.mul(y, w)?;
    Ok(g.sum(m))
}

fn run_case(
    index: usize,
    name: &str,
    points: usize,
    tolerance: f64,
    gen: &Gen,
    f: &Func,
) -> Result<GradCase> {
    let mut max_error = 0.0f64;
    for i in 0..points {
        let mut rng = stream(index as u64, tags::GRADCHECK, i as u64);
        let point = gen(&mut rng);
        max_error = max_error.max(grad_check(|g, x| f(g, x), &point, STEP)?);
    }
    Ok(GradCase {
        name: name.into(),
        points,
        max_error,
        tolerance,
    })
}

fn unary(
    f: fn(&mut Graph<f64>, Var) -> Result<Var>,
    gen: fn(&mut ChaCha8Rng) -> Tensor<f64>,
) -> (Gen, Func) {
    (
        Box::new(move |r| vec![gen(r)]),
        Box::new(move |g, x| {
            let y = f(g, x[0])?;
            readout(g, y)
        }),
    )
}

fn binary(
    f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
    gen: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
) -> (Gen, Func) {
    (
        Box::new(gen),
        Box::new(move |g, x| {
            let y = f(g, x[0], x[1])?;
            readout(g, y)
        }),
    )
}

fn op_cases() -> Vec<(&'static str, Gen, Func)> {
    let mut v: Vec<(&'static str, Gen, Func)> = Vec::new();
    let mut push = |name, (gen, f): (Gen, Func)| v.push((name, gen, f));
    let pair = |r: &mut ChaCha8Rng| {
        vec![
            uniform(r, &[3, 4], -1.0, 1.0),
            uniform(r, &[3, 4], -1.0, 1.0),
        ]
    };
    push("add", binary(|g, a, b| g.add(a, b), pair));
    push(
        "add (broadcast)",
        binary(
            |g, a, b| g.add(a, b),
            |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        ),
    );
    push("sub", binary(|g, a, b| g.sub(a, b), pair));
    push("mul", binary(|g, a, b| g.mul(a, b), pair));
    push(
        "div",
        binary(
            |g, a, b| g.div(a, b),
            |r| {
                vec![
                    uniform(r, &[3, 4], -1.0, 1.0),
                    off_zero(r, &[3, 4]).map(|x| x * 2.0),
                ]
            },
        ),
    );
    push(
        "scalar_mul",
        unary(
            |g, a| Ok(g.scalar_mul(a, -1.7)),
            |r| uniform(r, &[3, 4], -1.0, 1.0),
        ),
    );
    push(
        "add_scalar",
        unary(
            |g, a| Ok(g.add_scalar(a, 0.3)),
            |r| uniform(r, &[3, 4], -1.0, 1.0),
        ),
    );
    push(
        "neg",
        unary(|g, a| Ok(g.neg(a)), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "matmul",
        binary(
            |g, a, b| g.matmul(a, b),
            |r| {
                vec![
                    uniform(r, &[3, 4], -1.0, 1.0),
                    uniform(r, &[4, 2], -1.0, 1.0),
                ]
            },
        ),
    );
    push(
        "batch_matmul",
        binary(
            |g, a, b| g.batch_matmul(a, b),
            |r| {
                vec![
                    uniform(r, &[2, 3, 4], -1.0, 1.0),
                    uniform(r, &[2, 4, 2], -1.0, 1.0),
                ]
            },
        ),
    );
    push(
        "transpose",
        unary(|g, a| g.transpose(a), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "conv2d",
        binary(
            |g, x, w| g.conv2d(x, w),
            |r| {
                vec![
                    uniform(r, &[1, 4, 4, 3], -1.0, 1.0),
                    uniform(r, &[3, 3, 3, 2], -1.0, 1.0),
                ]
            },
        ),
    );
    push(
        "conv_transpose2d",
        binary(
            |g, x, w| g.conv_transpose2d(x, w),
            |r| {
                vec![
                    uniform(r, &[1, 4, 4, 2], -1.0, 1.0),
                    uniform(r, &[3, 3, 3, 2], -1.0, 1.0),
                ]
            },
        ),
    );
    push(
        "maxpool2d",
        unary(
            |g, a| g.maxpool2d(a, 2),
            |r| uniform(r, &[1, 4, 4, 2], -1.0, 1.0),
        ),
    );
    push(
        "upsample2d",
        unary(
            |g, a| g.upsample2d(a, 2),
            |r| uniform(r, &[1, 2, 2, 2], -1.0, 1.0),
        ),
    );
    push(
        "relu",
        unary(|g, a| Ok(g.relu(a)), |r| off_zero(r, &[3, 4])),
    );
    push(
        "gelu",
        unary(|g, a| Ok(g.gelu(a)), |r| uniform(r, &[3, 4], -3.0, 3.0)),
    );
    push(
        "sigmoid",
        unary(|g, a| Ok(g.sigmoid(a)), |r| uniform(r, &[3, 4], -3.0, 3.0)),
    );
    push(
        "tanh",
        unary(|g, a| Ok(g.tanh(a)), |r| uniform(r, &[3, 4], -2.0, 2.0)),
    );
    push(
        "exp",
        unary(|g, a| Ok(g.exp(a)), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "log",
        unary(|g, a| g.log(a), |r| uniform(r, &[3, 4], 0.2, 2.0)),
    );
    push(
        "softmax",
        unary(|g, a| g.softmax(a, 1), |r| uniform(r, &[3, 4], -2.0, 2.0)),
    );
    push(
        "logsumexp",
        unary(|g, a| g.logsumexp(a, 1), |r| uniform(r, &[3, 4], -2.0, 2.0)),
    );
    push(
        "l2_normalize",
        unary(|g, a| g.l2_normalize(a, 1), |r| off_zero(r, &[3, 4])),
    );
    push(
        "cosine_similarity",
        binary(
            |g, a, b| g.cosine_similarity(a, b, 1),
            |r| vec![off_zero(r, &[3, 4]), off_zero(r, &[3, 4])],
        ),
    );
    push(
        "sum",
        unary(|g, a| Ok(g.sum(a)), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "mean",
        unary(|g, a| Ok(g.mean(a)), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "sum_axis",
        unary(|g, a| g.sum_axis(a, 0), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "max_axis",
        unary(|g, a| g.max_axis(a, 1), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "min_axis",
        unary(|g, a| g.min_axis(a, 0), |r| uniform(r, &[3, 4], -1.0, 1.0)),
    );
    push(
        "reshape",
        unary(
            |g, a| g.reshape(a, &[2, 6]),
            |r| uniform(r, &[3, 4], -1.0, 1.0),
        ),
    );
    push(
        "concat",
        binary(
            |g, a, b| g.concat(&[a, b], 0),
            |r| {
                vec![
                    uniform(r, &[2, 3], -1.0, 1.0),
                    uniform(r, &[1, 3], -1.0, 1.0),
                ]
            },
        ),
    );
    push(
        "batch_norm",
        unary(batch_norm, |r| uniform(r, &[6, 4], -1.0, 1.0)),
    );
    push(
        "minmax_pooling",
        binary(
            |g, a, v| {
                let s = similarity_graph(g, a, v)?;
                let w = minmax_graph(g, s)?;
                pooled_graph(g, w, v)
            },
            |r| vec![off_zero(r, &[2, 3]), off_zero(r, &[2, 5, 3])],
        ),
    );
    v
}

/// 16x16 two-class world with a 4x4 feature grid.
fn tiny_world() -> WorldConfig {
    WorldConfig {
        num_classes: 2,
        image_height: 16,
        image_width: 16,
        grid_height: 4,
        grid_width: 4,
        visual_channels: 8,
        audio_dim: 6,
        ..WorldConfig::default()
    }
}

struct Pipeline {
    model: ModelConfig,
    projection: PatchProjection,
    scenes: Vec<Scene>,
}

impl Pipeline {
    fn new(scheme: Scheme, pcm: bool) -> Result<Self> {
        let w = tiny_world();
        let world = make_world(&w)?;
        let mut model = ModelConfig::new(w.clone(), scheme);
        if pcm {
            model.pcm = Some(PcmConfig {
                cycles: 2,
                ..PcmConfig::standard(w.audio_dim, w.visual_channels, w.grid_height)
            });
        }
        Ok(Pipeline {
            projection: PatchProjection::new(&w),
            scenes: (0..3).map(|i| world.scene(i)).collect(),
            model,
        })
    }

    fn params(&self, point: usize) -> Result<ParamStore<f64>> {
        init_params(&self.model, 100 + point as u64)
    }
}

/// The symmetric SSPL objective with gradients through both branches (`live`) or with the target
/// built from the fixed base parameters, which is what stop-gradient
/// differentiates.
fn sspl_case(index: usize, name: &str, pcm: bool, live: bool) -> Result<GradCase> {
    let p = Pipeline::new(Scheme::Sspl, pcm)?;
    let refs: Vec<&Scene> = p.scenes.iter().collect();
    let views = spatial_views(&refs, 1, 0, &SpatialConfig::default());
    let audio = audio_batch(&refs)?;
    let mut max_error = 0.0f64;
    for i in 0..PIPELINE_POINTS {
        let store = p.params(index * 10 + i)?;
        let point: Vec<Tensor<f64>> = store.tensors().to_vec();
        let err = grad_check(
            |g, x| {
                let bound = Bound::from_vars(&store, x)?;
                if live {
                    return Ok(sspl_forward(
                        g,
                        &bound,
                        &p.model,
                        &p.projection,
                        &views,
                        &audio,
                        Target::Live,
                    )?
                    .loss
                    .loss);
                }
                let online = sspl_forward(
                    g,
                    &bound,
                    &p.model,
                    &p.projection,
                    &views,
                    &audio,
                    Target::Live,
                )?;
                let fixed = store.bind(g);
                let target = sspl_forward(
                    g,
                    &fixed,
                    &p.model,
                    &p.projection,
                    &views,
                    &audio,
                    Target::Live,
                )?;
                Ok(sspl_loss(g, online.p, target.z, Target::Detached)?.loss)
            },
            &point,
            STEP,
        )?;
        max_error = max_error.max(err);
    }
    Ok(GradCase {
        name: name.into(),
        points: PIPELINE_POINTS,
        max_error,
        tolerance: PIPELINE_TOLERANCE,
    })
}

/// The SACL objective with FH pseudo-mask compaction and FND negatives.
fn sacl_case(name: &str, index: usize) -> Result<GradCase> {
    let p = Pipeline::new(Scheme::Sacl, false)?;
    let options = SaclOptions {
        mask: MaskType::Fh,
        proportion: 0.5,
        fh: FhParams {
            min_size: min_size_for(16, 16),
            ..FhParams::default()
        },
        ..SaclOptions::default()
    };
    let refs: Vec<&Scene> = p.scenes.iter().collect();
    let masks: Vec<Option<SegmentMap>> = p
        .scenes
        .iter()
        .map(|s| pseudo_mask(&s.image, options.mask, &options.fh))
        .collect::<Result<_>>()?;
    let mrefs: Vec<Option<&SegmentMap>> = masks.iter().map(Option::as_ref).collect();
    let (views, grids) = sacl_views(&p.model, &refs, &mrefs, &options, 1, 0)?;
    let audio = audio_batch(&refs)?;
    let mut max_error = 0.0f64;
    for i in 0..PIPELINE_POINTS {
        let store = p.params(index * 10 + i)?;
        let point: Vec<Tensor<f64>> = store.tensors().to_vec();
        let err = grad_check(
            |g, x| {
                let bound = Bound::from_vars(&store, x)?;
                Ok(sacl_forward(
                    g,
                    &bound,
                    &p.model,
                    &p.projection,
                    &views,
                    &grids,
                    &audio,
                    &options,
                    1,
                    0,
                )?
                .loss)
            },
            &point,
            STEP,
        )?;
        max_error = max_error.max(err);
    }
    Ok(GradCase {
        name: name.into(),
        points: PIPELINE_POINTS,
        max_error,
        tolerance: PIPELINE_TOLERANCE,
    })
}

/// Runs every case. `corrupt` appends a case whose analytic gradient drops
/// a term, which the suite must flag.
pub fn gradcheck_suite(corrupt: bool) -> Result<GradReport> {
    let mut cases = Vec::new();
    let ops = op_cases();
    for (i, (name, gen, f)) in ops.iter().enumerate() {
        cases.push(run_case(i, name, OP_POINTS, OP_TOLERANCE, gen, f)?);
    }
    let base = ops.len();
    cases.push(sspl_case(base, "sspl objective", false, true)?);
    cases.push(sspl_case(base + 1, "sspl stop-gradient", false, false)?);
    cases.push(sspl_case(base + 2, "sspl with pcm", true, true)?);
    cases.push(sacl_case("sacl objective", base + 3)?);
    if corrupt {
        let (gen, f): (Gen, Func) = (
            Box::new(|r| vec![uniform(r, &[3, 4], -1.0, 1.0)]),
            Box::new(|g, x| {
                let d = g.detach(x[0]);
                let y = g.mul(x[0], d)?;
                readout(g, y)
            }),
        );
        cases.push(run_case(
            base + 4,
            "corrupted square",
            OP_POINTS,
            OP_TOLERANCE,
            &gen,
            &f,
        )?);
    }
    Ok(GradReport { cases })
}

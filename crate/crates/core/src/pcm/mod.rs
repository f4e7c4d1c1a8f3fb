//! Predictive coding module: top-down predictions of the audio feature from
//! the visual map, and bottom-up error corrections, iterated over cycles.
//!
//! Layer 0 holds the audio feature as a `1 x 1` map, layer `L` is clamped to
//! the visual feature map. Downward predictions are `phi(maxpool(conv(r)))`,
//! upward corrections `upsample -> transposed conv`. Every representation
//! update ends in `phi`.
//! All maps are NHWC.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{init_normal, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Identity; used for analytic traces.
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Linear => x,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Linear => "linear",
        }
    }
}

pub const HIDDEN_CHANNELS: usize = 16;

/// Init scale of the kernel predicting the audio layer from the first
/// hidden layer.
pub const BOTTOM_GAIN: f64 = 0.01;
/// Init scale of the kernels between hidden layers.
pub const UPPER_GAIN: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PcmConfig {
    /// Number of layers above the audio layer.
    pub layers: usize,
    pub cycles: usize,
    /// `b_l` for `l = 1..=L`.
    pub feedback_rate: Vec<f64>,
    /// `a_l` for `l = 1..=L`.
    pub correction_rate: Vec<f64>,
    /// `(side, channels)` for layers `0..=L`; layer 0 is `(1, c_a)`.
    pub shapes: Vec<(usize, usize)>,
    pub kernel: usize,
    pub activation: Activation,
    /// Reuse the downward kernels for the upward corrections.
    pub tied: bool,
}

impl PcmConfig {
    /// Two-layer ladder `c_a @ 1x1 <- 16 @ (side/2) <- c_v @ side`.
    pub fn standard(audio_dim: usize, visual_channels: usize, side: usize) -> Self {
        Self::ladder(2, audio_dim, visual_channels, side, HIDDEN_CHANNELS)
    }

    /// `layers`-deep ladder: the visual map on top, hidden layers of
    /// `hidden` channels halving the side on the way down, and the audio
    /// vector as a `1 x 1` map at the bottom.
    pub fn ladder(
        layers: usize,
        audio_dim: usize,
        visual_channels: usize,
        side: usize,
        hidden: usize,
    ) -> Self {
        let mut shapes = vec![(1, audio_dim)];
        for l in 1..layers {
            shapes.push(((side >> (layers - l)).max(1), hidden));
        }
        shapes.push((side, visual_channels));
        PcmConfig {
            layers,
            cycles: 5,
            feedback_rate: vec![0.5; layers],
            correction_rate: vec![0.1; layers],
            shapes,
            kernel: 1,
            activation: Activation::Gelu,
            tied: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let l = self.layers;
        if l == 0 {
            return fail("pcm needs at least one layer".into());
        }
        if self.feedback_rate.len() != l
            || self.correction_rate.len() != l
            || self.shapes.len() != l + 1
        {
            return fail(format!(
                "pcm with {l} layers needs {l} rates of each kind and {} shapes",
                l + 1
            ));
        }
        if self.feedback_rate.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return fail("feedback rates must lie in (0, 1]".into());
        }
        if self
            .correction_rate
            .iter()
            .any(|&a| !(a >= 0.0) || !a.is_finite())
        {
            return fail("correction rates must be non-negative".into());
        }
        if self.shapes[0].0 != 1 {
            return fail("layer 0 must be a 1x1 map".into());
        }
        for w in self.shapes.windows(2) {
            if w[0].0 == 0 || w[1].0 % w[0].0 != 0 {
                return fail(format!(
                    "layer side {} does not pool onto {}",
                    w[1].0, w[0].0
                ));
            }
        }
        if self.kernel % 2 == 0 {
            return fail("pcm kernel size must be odd".into());
        }
        Ok(())
    }

    fn factor(&self, l: usize) -> usize {
        self.shapes[l + 1].0 / self.shapes[l].0
    }
}

pub fn down_name(l: usize) -> String {
    format!("pcm.down.{l}")
}

pub fn up_name(l: usize) -> String {
    format!("pcm.up.{l}")
}

pub const OUT_NAME: &str = "pcm.out";

pub fn init_pcm_params<T: Scalar>(
    store: &mut ParamStore<T>,
    config: &PcmConfig,
    rng: &mut impl Rng,
) {
    let k = config.kernel;
    for l in 0..config.layers {
        let (ci, co) = (config.shapes[l + 1].1, config.shapes[l].1);
        let gain = if l == 0 { BOTTOM_GAIN } else { UPPER_GAIN };
        let t: Tensor<T> = init_normal(&[k, k, ci, co], k * k * ci, rng);
        store.insert(&down_name(l), t.map(|x| x * T::lit(gain)));
    }
    if !config.tied {
        for l in 1..=config.layers {
            let (ci, co) = (config.shapes[l].1, config.shapes[l - 1].1);
            store.insert(&up_name(l), init_normal(&[k, k, ci, co], k * k * co, rng));
        }
    }
    let c = config.shapes[config.layers].1;
    store.insert(OUT_NAME, init_normal(&[c, c], c, rng));
}

#[derive(Clone, Debug)]
pub struct PcmWeights {
    /// `down[l]` predicts layer `l` from layer `l + 1`.
    pub down: Vec<Var>,
    /// `up[l - 1]` carries the layer `l - 1` error to layer `l`.
    pub up: Vec<Var>,
    pub out: Var,
}

impl PcmWeights {
    pub fn from_bound(params: &Bound, config: &PcmConfig) -> Result<Self> {
        let down: Vec<Var> = (0..config.layers)
            .map(|l| params.var(&down_name(l)))
            .collect::<Result<_>>()?;
        let up = if config.tied {
            down.clone()
        } else {
            (1..=config.layers)
                .map(|l| params.var(&up_name(l)))
                .collect::<Result<_>>()?
        };
        Ok(PcmWeights {
            down,
            up,
            out: params.var(OUT_NAME)?,
        })
    }
}

/// Representations, predictions and errors of one forward pass.
#[derive(Clone, Debug)]
pub struct PcmState {
    pub t: usize,
    /// `r[0]` is the audio feature, `r[L]` the top representation.
    pub r: Vec<Var>,
    /// `p[L]` is the visual feature.
    pub p: Vec<Option<Var>>,
    /// `e[l]` for `l = 0..L`.
    pub e: Vec<Option<Var>>,
}

impl PcmState {
    /// Zero representations above layer 0, i.e. `r_l(-1) = 0`.
    pub fn new<T: Scalar>(
        g: &mut Graph<T>,
        visual: Var,
        audio: Var,
        config: &PcmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = g.shape(visual)[0];
        check_nhwc(g, visual, n, config.shapes[config.layers], "visual")?;
        check_nhwc(g, audio, n, config.shapes[0], "audio")?;
        let mut r = vec![audio];
        for &(side, ch) in &config.shapes[1..] {
            r.push(g.constant(Tensor::zeros(&[n, side, side, ch])));
        }
        let mut p = vec![None; config.layers + 1];
        p[config.layers] = Some(visual);
        Ok(PcmState {
            t: 0,
            r,
            p,
            e: vec![None; config.layers],
        })
    }
}

fn check_nhwc<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    n: usize,
    (side, ch): (usize, usize),
    what: &str,
) -> Result<()> {
    if g.shape(x) != [n, side, side, ch] {
        return Err(Error::shape(
            "pcm",
            format!("{what} is {:?}, want {:?}", g.shape(x), [n, side, side, ch]),
        ));
    }
    Ok(())
}

/// `phi(maxpool(conv(upper)))`, the top-down prediction of the layer below.
fn predict_down<T: Scalar>(
    g: &mut Graph<T>,
    upper: Var,
    w: Var,
    factor: usize,
    phi: Activation,
) -> Result<Var> {
    let y = g.conv2d(upper, w)?;
    let y = if factor > 1 {
        g.maxpool2d(y, factor)?
    } else {
        y
    };
    Ok(phi.apply(g, y))
}

/// Top-down pass for `l = L..1`: `r_l = phi((1 - b_l) r_l + b_l p_l)`.
pub fn feedback_step<T: Scalar>(
    g: &mut Graph<T>,
    state: &mut PcmState,
    w: &PcmWeights,
    config: &PcmConfig,
) -> Result<()> {
    let top = config.layers;
    for l in (1..=top).rev() {
        let p = if l == top {
            state.p[top].expect("visual clamp")
        } else {
            predict_down(
                g,
                state.r[l + 1],
                w.down[l],
                config.factor(l),
                config.activation,
            )?
        };
        state.p[l] = Some(p);
        let b = config.feedback_rate[l - 1];
        let keep = g.scalar_mul(state.r[l], T::lit(1.0 - b));
        let mix = g.scalar_mul(p, T::lit(b));
        let s = g.add(keep, mix)?;
        state.r[l] = config.activation.apply(g, s);
    }
    Ok(())
}

/// Bottom-up pass for `l = 1..L`: `e_{l-1} = r_{l-1} - p_{l-1}`, then
/// `r_l = phi(r_l + a_l up(e_{l-1}))`.
pub fn feedforward_step<T: Scalar>(
    g: &mut Graph<T>,
    state: &mut PcmState,
    w: &PcmWeights,
    config: &PcmConfig,
) -> Result<()> {
    for l in 1..=config.layers {
        if l == 1 {
            state.p[0] = Some(predict_down(
                g,
                state.r[1],
                w.down[0],
                config.factor(0),
                config.activation,
            )?);
        }
        let p = state.p[l - 1]
            .ok_or_else(|| Error::InvalidArgument("feedforward before feedback".into()))?;
        let e = g.sub(state.r[l - 1], p)?;
        state.e[l - 1] = Some(e);
        let f = config.factor(l - 1);
        let up = if f > 1 { g.upsample2d(e, f)? } else { e };
        let corr = g.conv_transpose2d(up, w.up[l - 1])?;
        let corr = g.scalar_mul(corr, T::lit(config.correction_rate[l - 1]));
        let s = g.add(state.r[l], corr)?;
        state.r[l] = config.activation.apply(g, s);
    }
    Ok(())
}

/// `sum_l ||e_l||^2` over the whole batch.
pub fn prediction_energy<T: Scalar>(g: &Graph<T>, state: &PcmState) -> f64 {
    state
        .e
        .iter()
        .flatten()
        .map(|&e| {
            g.value(e)
                .data()
                .iter()
                .map(|x| x.as_f64() * x.as_f64())
                .sum::<f64>()
        })
        .sum()
}

/// Output of a full forward pass.
#[derive(Clone, Debug)]
pub struct PcmOutput {
    /// Transformed visual map, same shape as the input map.
    pub visual: Var,
    /// Batch energy after each cycle `t = 0..=T`.
    pub energies: Vec<f64>,
    pub state: PcmState,
}

/// Runs cycles `t = 0..=T` and applies the closing pointwise map to `r_L(T)`.
pub fn pcm_forward<T: Scalar>(
    g: &mut Graph<T>,
    visual: Var,
    audio: Var,
    w: &PcmWeights,
    config: &PcmConfig,
) -> Result<PcmOutput> {
    let mut state = PcmState::new(g, visual, audio, config)?;
    let mut energies = Vec::with_capacity(config.cycles + 1);
    for t in 0..=config.cycles {
        state.t = t;
        feedback_step(g, &mut state, w, config)?;
        feedforward_step(g, &mut state, w, config)?;
        energies.push(prediction_energy(g, &state));
    }
    let top = state.r[config.layers];
    let shape = g.shape(top).to_vec();
    let c = shape[3];
    let flat = g.reshape(top, &[shape[0] * shape[1] * shape[2], c])?;
    let y = g.matmul(flat, w.out)?;
    let visual = g.reshape(y, &shape)?;
    Ok(PcmOutput {
        visual,
        energies,
        state,
    })
}

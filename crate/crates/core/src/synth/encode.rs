//! Feature extractors: a frozen random patch projection with a learnable
//! pointwise head for images, and a pass-through embedding with a small MLP
//! transform for audio.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::WorldConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::params::{init_normal, Bound, ParamStore};
use crate::rng::{stream, tags};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VISUAL_HEAD: &str = "visual.head";
pub const AUDIO_FC1_W: &str = "audio.fc1.w";
pub const AUDIO_FC1_B: &str = "audio.fc1.b";
pub const AUDIO_FC2_W: &str = "audio.fc2.w";
pub const AUDIO_FC2_B: &str = "audio.fc2.b";
pub const AUDIO_HIDDEN: usize = 64;

/// Frozen linear map from a flattened image patch to `c_v` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchProjection {
    pub grid: (usize, usize),
    pub patch: (usize, usize),
    pub channels: usize,
    /// `[patch_dim, channels]`, row-major.
    pub weight: Vec<f64>,
}

/// Gain that lifts centered pixel statistics to roughly unit feature scale.
const PROJECTION_GAIN: f64 = 4.0;

impl PatchProjection {
    pub fn new(config: &WorldConfig) -> Self {
        let dim = config.patch_dim();
        let mut rng = stream(config.seed, tags::PATCH_PROJECTION, 0);
        let normal = Normal::new(0.0, PROJECTION_GAIN / (dim as f64).sqrt()).expect("finite sd");
        PatchProjection {
            grid: (config.grid_height, config.grid_width),
            patch: (config.patch_height(), config.patch_width()),
            channels: config.visual_channels,
            weight: (0..dim * config.visual_channels)
                .map(|_| normal.sample(&mut rng))
                .collect(),
        }
    }

    pub fn cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Patch features of one image, `[cells, channels]` with cells row-major.
    /// Pixels are centered at 0.5 before projection.
    pub fn project(&self, image: &Image) -> Result<Vec<f64>> {
        let (gh, gw) = self.grid;
        let (ph, pw) = self.patch;
        if image.height != gh * ph || image.width != gw * pw {
            return Err(Error::shape(
                "patch_projection",
                format!(
                    "image {}x{} does not tile into {gh}x{gw} patches of {ph}x{pw}",
                    image.height, image.width
                ),
            ));
        }
        let c = self.channels;
        let mut out = vec![0.0; gh * gw * c];
        let mut patch = Vec::with_capacity(ph * pw * 3);
        for gr in 0..gh {
            for gc in 0..gw {
                patch.clear();
                for r in 0..ph {
                    let row = gr * ph + r;
                    let start = (row * image.width + gc * pw) * 3;
                    patch.extend(image.data[start..start + pw * 3].iter().map(|v| v - 0.5));
                }
                let dst = &mut out[(gr * gw + gc) * c..(gr * gw + gc + 1) * c];
                for (x, wrow) in patch.iter().zip(self.weight.chunks_exact(c)) {
                    for (d, w) in dst.iter_mut().zip(wrow) {
                        *d += x * w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Stacked features of a batch, `[N * cells, channels]`.
    pub fn project_batch<T: Scalar>(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(images.len() * self.cells() * self.channels);
        for im in images {
            data.extend(self.project(im)?.into_iter().map(T::lit));
        }
        Tensor::new(vec![images.len() * self.cells(), self.channels], data)
    }
}

/// Adds the learnable encoder heads to `store`.
pub fn init_encoder_params<T: Scalar>(
    store: &mut ParamStore<T>,
    config: &WorldConfig,
    rng: &mut impl Rng,
) {
    let (cv, ca) = (config.visual_channels, config.audio_dim);
    store.insert(VISUAL_HEAD, init_normal(&[cv, cv], cv, rng));
    store.insert(AUDIO_FC1_W, init_normal(&[ca, AUDIO_HIDDEN], ca, rng));
    store.insert(AUDIO_FC1_B, Tensor::zeros(&[AUDIO_HIDDEN]));
    store.insert(
        AUDIO_FC2_W,
        init_normal(&[AUDIO_HIDDEN, cv], AUDIO_HIDDEN, rng),
    );
    store.insert(AUDIO_FC2_B, Tensor::zeros(&[cv]));
}

/// Learnable pointwise head over frozen patch features: `gelu(x W)`.
/// `frozen` is `[M, c_v]`; the result has the same shape.
pub fn visual_features<T: Scalar>(g: &mut Graph<T>, params: &Bound, frozen: Var) -> Result<Var> {
    let y = g.matmul(frozen, params.var(VISUAL_HEAD)?)?;
    Ok(g.gelu(y))
}

/// Audio transform `FC-ReLU-FC` from `[N, c_a]` to `[N, c_v]`. The
/// untransformed audio feature is the input itself.
pub fn encode_audio<T: Scalar>(g: &mut Graph<T>, params: &Bound, audio: Var) -> Result<Var> {
    let h = g.matmul(audio, params.var(AUDIO_FC1_W)?)?;
    let h = g.add(h, params.var(AUDIO_FC1_B)?)?;
    let h = g.relu(h);
    let y = g.matmul(h, params.var(AUDIO_FC2_W)?)?;
    g.add(y, params.var(AUDIO_FC2_B)?)
}

/// Visual feature map of one image, `[h, w, c_v]`.
pub fn encode_visual<T: Scalar>(
    image: &Image,
    projection: &PatchProjection,
    params: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let frozen = g.constant(projection.project_batch(&[image])?);
    let head = g.constant(params.require(VISUAL_HEAD)?.clone());
    let y = g.matmul(frozen, head)?;
    let y = g.gelu(y);
    let (gh, gw) = projection.grid;
    g.value(y).reshape(&[gh, gw, projection.channels])
}

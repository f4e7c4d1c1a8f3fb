use rand::seq::index::sample;

use super::{
    audio_sim_matrix, binarize_sim, contrastive_mask, fnd_select, max_cells, negatives_for,
    sacl_loss, NegativeSet,
};
use crate::attention::minmax;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::model::{audio_batch, ModelConfig};
use crate::optim::{adamw_step, OptimizerState};
use crate::params::{Bound, ParamStore};
use crate::rng::{stream, tags};
use crate::segmentation::{fh_segment, grid_mask, mask_to_grid, FhParams, SegmentMap};
use crate::sspl::view_seed;
use crate::synth::{
    augment_photometric, augment_spatial, encode_audio, visual_features, PatchProjection,
    PhotometricConfig, Scene, SpatialConfig,
};
use crate::tensor::Tensor;

/// Additive penalty that keeps inactive cells out of the cross-modal max.
const INACTIVE: f64 = -1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskType {
    Fh,
    /// `d x d` grid of equal cells.
    Grid(usize),
    /// No compaction: every cell takes part in the maximum.
    None,
}

impl MaskType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fh" => Ok(MaskType::Fh),
            "none" => Ok(MaskType::None),
            other => other
                .strip_prefix("grid")
                .and_then(|d| d.trim_start_matches('-').parse::<usize>().ok())
                .filter(|&d| d > 0)
                .map(MaskType::Grid)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown mask type `{other}` (expected fh, grid-D or none)"
                    ))
                }),
        }
    }

    pub fn name(self) -> String {
        match self {
            MaskType::Fh => "fh".into(),
            MaskType::Grid(d) => format!("grid-{d}"),
            MaskType::None => "none".into(),
        }
    }
}

/// Audio embedding the negative selection compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FndFeatures {
    /// The frozen input embedding `f_a`.
    Raw,
    /// The learned transform `g(f_a)`.
    Transformed,
}

impl FndFeatures {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FndFeatures::Raw),
            "transformed" => Ok(FndFeatures::Transformed),
            other => Err(Error::Config(format!(
                "unknown fnd features `{other}` (expected raw or transformed)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FndFeatures::Raw => "raw",
            FndFeatures::Transformed => "transformed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaclOptions {
    pub mask: MaskType,
    /// Select negatives by audio dissimilarity; otherwise draw them at random.
    pub fnd: bool,
    pub fnd_features: FndFeatures,
    /// Share of the batch kept as negatives.
    pub proportion: f64,
    pub tau: f64,
    pub spatial: SpatialConfig,
    pub photometric: PhotometricConfig,
    pub fh: FhParams,
}

impl Default for SaclOptions {
    fn default() -> Self {
        SaclOptions {
            mask: MaskType::Fh,
            fnd: true,
            fnd_features: FndFeatures::Raw,
            proportion: 0.75,
            tau: super::TEMPERATURE,
            spatial: SpatialConfig::default(),
            photometric: PhotometricConfig::default(),
            fh: FhParams::default(),
        }
    }
}

/// Pixel-level pseudo mask of a raw image, `None` for [`MaskType::None`].
pub fn pseudo_mask(image: &Image, mask: MaskType, fh: &FhParams) -> Result<Option<SegmentMap>> {
    Ok(match mask {
        MaskType::Fh => Some(fh_segment(image, fh)?),
        MaskType::Grid(d) => Some(grid_mask(image.height, image.width, d)?),
        MaskType::None => None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaclStepStats {
    pub loss: f64,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
    /// Same-class candidates kept out of the negative sets, by oracle label.
    pub fn_detected: usize,
}

/// Negative sets of one batch: audio-dissimilar picks with FND, uniform
/// random picks without.
pub fn negative_sets(
    audio: &Tensor<f64>,
    options: &SaclOptions,
    seed: u64,
    step: u64,
) -> Result<Vec<NegativeSet>> {
    let n = audio.shape()[0];
    let k = negatives_for(n, options.proportion);
    let sim = audio_sim_matrix(audio)?;
    if options.fnd {
        return (0..n).map(|i| fnd_select(&sim, i, k)).collect();
    }
    let mut rng = stream(seed, tags::NEGATIVES, step);
    Ok((0..n)
        .map(|i| {
            let mut indices: Vec<usize> = sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .collect();
            indices.sort_unstable();
            let similarities = indices.iter().map(|&j| sim.data()[i * n + j]).collect();
            NegativeSet {
                anchor: i,
                indices,
                similarities,
            }
        })
        .collect())
}

/// Two photometric + spatial views per scene, stacked view-major, with their
/// pseudo masks carried through the same spatial transform and pooled onto
/// the feature grid.
pub fn sacl_views(
    config: &ModelConfig,
    scenes: &[&Scene],
    masks: &[Option<&SegmentMap>],
    options: &SaclOptions,
    seed: u64,
    step: u64,
) -> Result<(Vec<Image>, Vec<Option<SegmentMap>>)> {
    let n = scenes.len();
    if masks.len() != n {
        return Err(Error::shape(
            "sacl_views",
            format!("{} masks for {n} scenes", masks.len()),
        ));
    }
    let (gh, gw) = (config.world.grid_height, config.world.grid_width);
    let mut views = Vec::with_capacity(2 * n);
    let mut grids = Vec::with_capacity(2 * n);
    for view in 0..2 {
        for (slot, s) in scenes.iter().enumerate() {
            let vs = view_seed(seed, step, slot, view);
            let (im, _, sp) = augment_spatial(&s.image, &s.gt_mask, vs, &options.spatial);
            views.push(augment_photometric(&im, vs, &options.photometric));
            grids.push(match (options.mask, masks[slot]) {
                (MaskType::None, _) => None,
                (_, Some(m)) => Some(mask_to_grid(&m.remap(|l| sp.apply(l, 1)), gh, gw)?),
                (_, None) => {
                    return Err(Error::InvalidArgument(format!(
                        "scene {} has no pseudo mask",
                        s.id
                    )))
                }
            });
        }
    }
    Ok((views, grids))
}

#[derive(Clone, Debug)]
pub struct SaclForward {
    pub loss: Var,
    /// Cross-modal similarities `[2N, N]` after mask compaction.
    pub sims: Var,
    pub negatives: Vec<NegativeSet>,
}

/// Full pipeline on `2N` view images, their grid masks and the shared audio.
#[allow(clippy::too_many_arguments)]
pub fn sacl_forward(
    g: &mut Graph<f64>,
    params: &Bound,
    config: &ModelConfig,
    projection: &PatchProjection,
    views: &[Image],
    grids: &[Option<SegmentMap>],
    audio: &Tensor<f64>,
    options: &SaclOptions,
    seed: u64,
    step: u64,
) -> Result<SaclForward> {
    let n = audio.shape()[0];
    if n < 2 {
        return Err(Error::InvalidArgument(
            "contrastive training needs a batch of at least 2".into(),
        ));
    }
    if views.len() != 2 * n || grids.len() != 2 * n {
        return Err(Error::shape(
            "sacl_forward",
            format!(
                "{} views, {} masks for {n} scenes",
                views.len(),
                grids.len()
            ),
        ));
    }
    let w = &config.world;
    let (cells, c) = (w.cells(), w.visual_channels);
    let refs: Vec<&Image> = views.iter().collect();
    let frozen = g.constant(projection.project_batch(&refs)?);
    let raw_audio = g.constant(audio.clone());
    let fv = visual_features(g, params, frozen)?;
    let fa = encode_audio(g, params, raw_audio)?;
    if g.value(fa)
        .data()
        .chunks_exact(c)
        .any(|r| r.iter().all(|&x| x == 0.0))
    {
        return Err(Error::Degenerate("transformed audio has zero norm".into()));
    }
    let nv = g.l2_normalize(fv, 1)?;
    let na = g.l2_normalize(fa, 1)?;
    let nat = g.transpose(na)?;
    let cross = g.matmul(nv, nat)?;
    let cross = g.reshape(cross, &[2 * n, cells, n])?;

    let values = g.value(cross).data();
    let mut penalty = vec![0.0; 2 * n * cells];
    for r in 0..2 * n {
        let own: Vec<f64> = (0..cells)
            .map(|k| values[(r * cells + k) * n + r % n])
            .collect();
        let active = match &grids[r] {
            None => vec![true; cells],
            Some(seg) => {
                let bi = binarize_sim(&minmax(&own));
                max_cells(&contrastive_mask(&bi, seg)?, &bi)
            }
        };
        for (k, on) in active.into_iter().enumerate() {
            if !on {
                penalty[r * cells + k] = INACTIVE;
            }
        }
    }
    let penalty = g.constant(Tensor::new(vec![2 * n, cells, 1], penalty)?);
    let masked = g.add(cross, penalty)?;
    let sims = g.max_axis(masked, 1)?;
    let sims = g.reshape(sims, &[2 * n, n])?;

    let fnd_audio = match options.fnd_features {
        FndFeatures::Raw => audio.clone(),
        FndFeatures::Transformed => g.value(fa).clone(),
    };
    let negatives = negative_sets(&fnd_audio, options, seed, step)?;
    let loss = sacl_loss(g, sims, &negatives, options.tau)?;
    Ok(SaclForward {
        loss,
        sims,
        negatives,
    })
}

/// One optimization step. `masks[i]` is the pixel-level pseudo mask of
/// scene `i` (ignored when `options.mask` is `None`).
#[allow(clippy::too_many_arguments)]
pub fn train_step_sacl(
    config: &ModelConfig,
    projection: &PatchProjection,
    params: &mut ParamStore<f64>,
    state: &mut OptimizerState<f64>,
    scenes: &[&Scene],
    masks: &[Option<&SegmentMap>],
    options: &SaclOptions,
    seed: u64,
    step: u64,
) -> Result<SaclStepStats> {
    let n = scenes.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "contrastive training needs a batch of at least 2".into(),
        ));
    }
    let (views, grids) = sacl_views(config, scenes, masks, options, seed, step)?;
    let audio = audio_batch(scenes)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = sacl_forward(
        &mut g, &bound, config, projection, &views, &grids, &audio, options, seed, step,
    )?;
    let (loss, negatives) = (fwd.loss, &fwd.negatives);

    let sv = g.value(fwd.sims).data();
    let mean_pos_sim = (0..2 * n).map(|r| sv[r * n + r % n]).sum::<f64>() / (2 * n) as f64;
    let (mut neg_sum, mut neg_count) = (0.0, 0usize);
    for r in 0..2 * n {
        for &j in &negatives[r % n].indices {
            neg_sum += sv[r * n + j];
            neg_count += 1;
        }
    }
    let mut fn_detected = 0;
    for set in negatives {
        let i = set.anchor;
        fn_detected += (0..n)
            .filter(|&j| {
                j != i && scenes[j].class_id == scenes[i].class_id && !set.indices.contains(&j)
            })
            .count();
    }
    let stats = SaclStepStats {
        loss: g.value(loss).item(),
        mean_pos_sim,
        mean_neg_sim: neg_sum / neg_count.max(1) as f64,
        fn_detected,
    };
    let grads = g.backward(loss)?;
    let flat = bound.collect(&grads, params);
    adamw_step(params, &flat, state)?;
    Ok(stats)
}

//! Training runs and held-out evaluation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{
    ciou, extract_box, iou, sim_diff, upsample_bilinear, upsample_nearest, Annotation, SceneResult,
};
use crate::model::{
    init_params, localize_batch, BalancedSampler, Localization, ModelConfig, Scheme,
};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::parallel::par_map;
use crate::params::ParamStore;
use crate::rng::{stream, tags};
use crate::sacl::{pseudo_mask, train_step_sacl, MaskType, SaclOptions, SaclStepStats};
use crate::segmentation::SegmentMap;
use crate::sspl::{train_step_sspl, SsplOptions, SsplStepStats};
use crate::synth::{PatchProjection, Scene};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub adamw: AdamWConfig,
    pub sspl: SsplOptions,
    pub sacl: SaclOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            batch: 32,
            seed: 0,
            adamw: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            sspl: SsplOptions::default(),
            sacl: SaclOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepLog {
    Sspl(SsplStepStats),
    Sacl(SaclStepStats),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f64>,
    pub log: Vec<StepLog>,
}

impl TrainOutcome {
    /// Per-step CSV in the scheme's column layout.
    pub fn log_csv(&self, scheme: Scheme) -> String {
        let mut s = String::from(match scheme {
            Scheme::Sspl => "step,loss,collapse_metric\n",
            Scheme::Sacl => "step,loss,mean_pos_sim,mean_neg_sim,fn_detected\n",
        });
        for (i, row) in self.log.iter().enumerate() {
            let _ = match row {
                StepLog::Sspl(r) => writeln!(s, "{i},{:.9},{:.9}", r.loss, r.collapse_metric),
                StepLog::Sacl(r) => {
                    writeln!(
                        s,
                        "{i},{:.9},{:.9},{:.9},{}",
                        r.loss, r.mean_pos_sim, r.mean_neg_sim, r.fn_detected
                    )
                }
            };
        }
        s
    }
}

/// Trains from a fresh initialization.
pub fn train(model: &ModelConfig, scenes: &[Scene], config: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_params(model, config.seed)?;
    train_from(model, scenes, config, params, |_, _| {})
}

/// Trains `params` for `config.steps` steps, reporting each step to `on_step`.
pub fn train_from(
    model: &ModelConfig,
    scenes: &[Scene],
    config: &TrainConfig,
    mut params: ParamStore<f64>,
    mut on_step: impl FnMut(usize, &StepLog),
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let projection = PatchProjection::new(&model.world);
    let mut state = OptimizerState::new(config.adamw, &params);
    let labels: Vec<usize> = scenes.iter().map(|s| s.class_id).collect();
    let sampler = BalancedSampler::new(&labels)?;
    let masks: Vec<Option<SegmentMap>> = match (model.scheme, config.sacl.mask) {
        (Scheme::Sacl, m) if m != MaskType::None => {
            par_map(scenes, |s| pseudo_mask(&s.image, m, &config.sacl.fh))
                .into_iter()
                .collect::<Result<_>>()?
        }
        _ => vec![None; scenes.len()],
    };
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx = sampler.sample(
            config.batch,
            &mut stream(config.seed, tags::BATCH, step as u64),
        );
        let batch: Vec<&Scene> = idx.iter().map(|&i| &scenes[i]).collect();
        let row = match model.scheme {
            Scheme::Sspl => StepLog::Sspl(train_step_sspl(
                model,
                &projection,
                &mut params,
                &mut state,
                &batch,
                &config.sspl,
                config.seed,
                step as u64,
            )?),
            Scheme::Sacl => {
                let m: Vec<Option<&SegmentMap>> = idx.iter().map(|&i| masks[i].as_ref()).collect();
                StepLog::Sacl(train_step_sacl(
                    model,
                    &projection,
                    &mut params,
                    &mut state,
                    &batch,
                    &m,
                    &config.sacl,
                    config.seed,
                    step as u64,
                )?)
            }
        };
        on_step(step, &row);
        log.push(row);
    }
    Ok(TrainOutcome { params, log })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Upsampling {
    #[default]
    Nearest,
    Bilinear,
}

impl Upsampling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Upsampling::Nearest),
            "bilinear" => Ok(Upsampling::Bilinear),
            other => Err(Error::Config(format!(
                "unknown upsampling `{other}` (expected nearest or bilinear)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Upsampling::Nearest => "nearest",
            Upsampling::Bilinear => "bilinear",
        }
    }
}

/// A grid map resampled to the image resolution.
pub fn to_pixels(map: &[f64], model: &ModelConfig, upsampling: Upsampling) -> Vec<f64> {
    let w = &model.world;
    let (gh, gw, h, wd) = (w.grid_height, w.grid_width, w.image_height, w.image_width);
    match upsampling {
        Upsampling::Nearest => upsample_nearest(map, gh, gw, h, wd),
        Upsampling::Bilinear => upsample_bilinear(map, gh, gw, h, wd),
    }
}

/// Pixel-domain metrics of one normalized grid map.
pub fn score_scene(
    map: &[f64],
    scene: &Scene,
    model: &ModelConfig,
    upsampling: Upsampling,
) -> Result<SceneResult> {
    let w = &model.world;
    let (h, wd) = (w.image_height, w.image_width);
    let px = to_pixels(map, model, upsampling);
    Ok(SceneResult {
        scene_id: scene.id,
        ciou: ciou(&px, &Annotation::Mask(scene.gt_mask.clone()), 0.5)?,
        sim_diff: sim_diff(&px, &scene.gt_mask)?,
        box_iou: iou(extract_box(&px, h, wd, 0.7), scene.gt_mask.bounding_box()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub results: Vec<SceneResult>,
    pub maps: Vec<Localization>,
    /// Mean prediction energy per PCM cycle over the scenes.
    pub energies: Vec<f64>,
}

impl Evaluation {
    pub fn mean_ciou(&self) -> f64 {
        self.results.iter().map(|r| r.ciou).sum::<f64>() / self.results.len().max(1) as f64
    }
}

pub fn evaluate(
    model: &ModelConfig,
    params: &ParamStore<f64>,
    scenes: &[Scene],
    upsampling: Upsampling,
) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let projection = PatchProjection::new(&model.world);
    let refs: Vec<&Scene> = scenes.iter().collect();
    let maps = localize_batch(params, model, &projection, &refs)?;
    let results = maps
        .iter()
        .zip(scenes)
        .map(|(m, s)| score_scene(&m.normalized, s, model, upsampling))
        .collect::<Result<Vec<_>>>()?;
    let cycles = maps[0].energies.len();
    let energies = (0..cycles)
        .map(|t| maps.iter().map(|m| m.energies[t]).sum::<f64>() / maps.len() as f64)
        .collect();
    Ok(Evaluation {
        results,
        maps,
        energies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_world, WorldConfig};

    #[test]
    fn zero_steps_return_initialization() {
        let w = WorldConfig::default();
        let world = make_world(&w).unwrap();
        let scenes: Vec<Scene> = (0..8).map(|i| world.scene(i)).collect();
        let model = ModelConfig::new(w, Scheme::Sspl);
        let cfg = TrainConfig {
            steps: 0,
            seed: 4,
            ..Default::default()
        };
        let out = train(&model, &scenes, &cfg).unwrap();
        assert_eq!(out.params, init_params(&model, 4).unwrap());
        assert_eq!(out.log_csv(Scheme::Sspl), "step,loss,collapse_metric\n");
    }

    #[test]
    fn oracle_map_scores_perfectly() {
        let w = WorldConfig {
            object_shape: crate::synth::BlobShape::Rectangle,
            ..Default::default()
        };
        let world = make_world(&w).unwrap();
        let model = ModelConfig::new(w.clone(), Scheme::Sspl);
        let mut scene = world.scene(0);
        // Snap the object to the feature grid so a grid map can match it.
        scene.gt_mask.data = (0..64 * 64)
            .map(|i| (i / 64) / 8 < 3 && (i % 64) / 8 >= 2 && (i % 64) / 8 < 6)
            .collect();
        let map: Vec<f64> = (0..64)
            .map(|i| {
                if i / 8 < 3 && i % 8 >= 2 && i % 8 < 6 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let r = score_scene(&map, &scene, &model, Upsampling::Nearest).unwrap();
        assert_eq!((r.ciou, r.sim_diff, r.box_iou), (1.0, 1.0, 1.0));
    }
}

//! Operator commands: dataset generation, training, evaluation, heatmap
//! export, ablation sweeps and the gradient suite. Every command is a pure
//! function of its configuration and input files.

mod config;
mod gradsuite;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{PcmSettings, RunConfig, CONFIG_NAME};
pub use gradsuite::{
    gradcheck_suite, GradCase, GradReport, OP_POINTS, OP_TOLERANCE, PIPELINE_TOLERANCE,
};

use crate::attention::{heatmap_pgm, overlay_ppm, ScalingMethod};
use crate::error::{Error, Result};
use crate::eval::{curve_text, results_csv, summary_text, Summary};
use crate::imaging::write_bytes;
use crate::model::{init_params, localize, BalancedSampler, Scheme};
use crate::params::ParamStore;
use crate::rng::{stream, tags};
use crate::sacl::{audio_sim_matrix, MaskType};
use crate::synth::{
    load_dataset, make_world, write_dataset, PatchProjection, Scene, MANIFEST_NAME,
};
use crate::tensor::Tensor;
use crate::train::{evaluate, to_pixels, train_from, Evaluation, TrainOutcome};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.txt";
pub const CURVE: &str = "success_curve.txt";
pub const ENERGIES: &str = "energies.csv";
pub const ABLATION: &str = "ablation.csv";
pub const ABLATION_RUNS: &str = "ablation_runs.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// The dataset directory of `split` under `data`, or `data` itself when it
/// holds a manifest.
pub fn split_dir(data: &Path, split: &str) -> PathBuf {
    if data.join(MANIFEST_NAME).is_file() {
        data.to_path_buf()
    } else {
        data.join(split)
    }
}

/// Loads a split and checks that its scenes fit the configured world.
pub fn load_split(cfg: &RunConfig, data: &Path, split: &str) -> Result<Vec<Scene>> {
    let dir = split_dir(data, split);
    let scenes = load_dataset(&dir)?;
    let w = &cfg.world;
    for s in &scenes {
        if s.image.height != w.image_height
            || s.image.width != w.image_width
            || s.audio.len() != w.audio_dim
        {
            return Err(Error::Config(format!(
                "scene {} in {} is {}x{} with {}-d audio, config expects {}x{} with {}-d audio",
                s.id,
                dir.display(),
                s.image.height,
                s.image.width,
                s.audio.len(),
                w.image_height,
                w.image_width,
                w.audio_dim
            )));
        }
    }
    Ok(scenes)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenReport {
    pub train: usize,
    pub test: usize,
    /// Scenes per class over both splits.
    pub class_counts: Vec<usize>,
}

/// Writes `out/train` (scene ids `0..train_scenes`) and `out/test` (the
/// following `test_scenes` ids).
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<GenReport> {
    cfg.validate()?;
    let world = make_world(&cfg.world)?;
    create_dir(out)?;
    let n = cfg.train_scenes;
    let train = write_dataset(&world, &out.join("train"), 0..n)?;
    let test = write_dataset(&world, &out.join("test"), n..n + cfg.test_scenes)?;
    let mut class_counts = vec![0; cfg.world.num_classes];
    for r in train.iter().chain(&test) {
        class_counts[r.class_id] += 1;
    }
    cfg.write(out)?;
    Ok(GenReport {
        train: train.len(),
        test: test.len(),
        class_counts,
    })
}

/// Trains on `data`'s training split and writes the checkpoint, the step
/// log and the resolved config under `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let scenes = load_split(cfg, data, "train")?;
    let model = cfg.model();
    let params = init_params(&model, cfg.seed)?;
    let outcome = train_from(&model, &scenes, &cfg.train_config(), params, |_, _| {})?;
    create_dir(out)?;
    outcome.params.save(&out.join(CHECKPOINT_DIR))?;
    write_text(&out.join(TRAIN_LOG), &outcome.log_csv(cfg.scheme))?;
    cfg.write(out)?;
    Ok(outcome)
}

/// `checkpoint` itself or its `checkpoint/` subdirectory.
fn checkpoint_dir(checkpoint: &Path) -> PathBuf {
    let sub = checkpoint.join(CHECKPOINT_DIR);
    if sub.is_dir() {
        sub
    } else {
        checkpoint.to_path_buf()
    }
}

/// Loads a checkpoint and checks it holds exactly the parameters the
/// configured model needs.
pub fn load_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<ParamStore<f64>> {
    let params = ParamStore::<f64>::load(&checkpoint_dir(checkpoint))?;
    let expected = init_params(&cfg.model(), 0)?;
    let mismatch = |m: String| {
        Err(Error::Config(format!(
            "checkpoint does not match config: {m}"
        )))
    };
    if params.len() != expected.len() {
        return mismatch(format!(
            "{} tensors, model needs {}",
            params.len(),
            expected.len()
        ));
    }
    for (name, t) in expected.iter() {
        match params.get(name) {
            None => return mismatch(format!("missing `{name}`")),
            Some(p) if p.shape() != t.shape() => {
                return mismatch(format!(
                    "`{name}` is {:?}, model needs {:?}",
                    p.shape(),
                    t.shape()
                ))
            }
            Some(_) => {}
        }
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: Summary,
    pub evaluation: Evaluation,
}

/// Writes per-scene metrics, the summary block, the success curve and, with
/// PCM, the mean prediction energy per cycle.
pub fn write_eval(cfg: &RunConfig, evaluation: &Evaluation, out: &Path) -> Result<Summary> {
    let summary = Summary::from_results(&evaluation.results)?;
    create_dir(out)?;
    write_text(&out.join(METRICS), &results_csv(&evaluation.results))?;
    write_text(&out.join(SUMMARY), &summary_text(&summary))?;
    write_text(
        &out.join(CURVE),
        &curve_text(&summary.thresholds, &summary.success),
    )?;
    if !evaluation.energies.is_empty() {
        let mut s = String::from("cycle,energy\n");
        for (t, e) in evaluation.energies.iter().enumerate() {
            let _ = writeln!(s, "{t},{e:.9}");
        }
        write_text(&out.join(ENERGIES), &s)?;
    }
    cfg.write(out)?;
    Ok(summary)
}

/// Scores a checkpoint on `data`'s test split.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let params = load_checkpoint(cfg, checkpoint)?;
    let scenes = load_split(cfg, data, "test")?;
    let evaluation = evaluate(&cfg.model(), &params, &scenes, cfg.upsampling)?;
    let summary = write_eval(cfg, &evaluation, out)?;
    Ok(EvalReport {
        summary,
        evaluation,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalizeOutput {
    pub heatmap: PathBuf,
    pub overlay: PathBuf,
}

/// Writes the normalized map of scene `scene_id` of `data`'s test split as
/// a PGM heatmap and a PPM overlay at image resolution.
pub fn cmd_localize(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    scene_id: usize,
    out: &Path,
) -> Result<LocalizeOutput> {
    cfg.validate()?;
    let params = load_checkpoint(cfg, checkpoint)?;
    let scenes = load_split(cfg, data, "test")?;
    let scene = scenes.iter().find(|s| s.id == scene_id).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "scene {scene_id} is not in {}",
            split_dir(data, "test").display()
        ))
    })?;
    let model = cfg.model();
    let loc = localize(&params, &model, &PatchProjection::new(&model.world), scene)?;
    let px = to_pixels(&loc.normalized, &model, cfg.upsampling);
    create_dir(out)?;
    let heatmap = out.join(format!("scene_{scene_id:05}_heatmap.pgm"));
    let overlay = out.join(format!("scene_{scene_id:05}_overlay.ppm"));
    write_bytes(
        &heatmap,
        &heatmap_pgm(&px, scene.image.height, scene.image.width)?,
    )?;
    write_bytes(&overlay, &overlay_ppm(&scene.image, &px)?)?;
    Ok(LocalizeOutput { heatmap, overlay })
}

/// Result of one seeded training run scored on a test set.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub summary: Summary,
    pub evaluation: Evaluation,
    pub outcome: TrainOutcome,
}

/// Trains `cfg` from its seed on `train` and evaluates on `test`.
pub fn run_experiment(cfg: &RunConfig, train: &[Scene], test: &[Scene]) -> Result<RunResult> {
    cfg.validate()?;
    let model = cfg.model();
    let params = init_params(&model, cfg.seed)?;
    let outcome = train_from(&model, train, &cfg.train_config(), params, |_, _| {})?;
    let evaluation = evaluate(&model, &outcome.params, test, cfg.upsampling)?;
    let summary = Summary::from_results(&evaluation.results)?;
    Ok(RunResult {
        seed: cfg.seed,
        summary,
        evaluation,
        outcome,
    })
}

/// `batches` class-balanced batches of `batch` scenes drawn from `scenes`,
/// each paired with the cosine similarity matrix of its raw audio.
pub fn fnd_batches(
    scenes: &[Scene],
    batches: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<(Tensor<f64>, Vec<usize>)>> {
    let labels: Vec<usize> = scenes.iter().map(|s| s.class_id).collect();
    let sampler = BalancedSampler::new(&labels)?;
    (0..batches)
        .map(|b| {
            let idx = sampler.sample(batch, &mut stream(seed, tags::BATCH, b as u64));
            let dim = scenes[idx[0]].audio.len();
            let audio = Tensor::new(
                vec![idx.len(), dim],
                idx.iter()
                    .flat_map(|&i| scenes[i].audio.iter().copied())
                    .collect(),
            )?;
            Ok((
                audio_sim_matrix(&audio)?,
                idx.iter().map(|&i| labels[i]).collect(),
            ))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Scaling,
    MaskType,
    NegativeProportion,
    PcmCycles,
    StopGradient,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::Scaling,
        AblationAxis::MaskType,
        AblationAxis::NegativeProportion,
        AblationAxis::PcmCycles,
        AblationAxis::StopGradient,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown ablation axis `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Scaling => "scaling",
            AblationAxis::MaskType => "mask-type",
            AblationAxis::NegativeProportion => "negative-proportion",
            AblationAxis::PcmCycles => "pcm-cycles",
            AblationAxis::StopGradient => "stop-gradient",
        }
    }

    /// Named arm configurations derived from `base`, which differ from one
    /// another only on this axis.
    pub fn arms(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Scaling => [
                ScalingMethod::MinMax,
                ScalingMethod::Relu,
                ScalingMethod::Sigmoid,
                ScalingMethod::Softmax,
                ScalingMethod::ReluSoftmax,
            ]
            .into_iter()
            .map(|m| {
                let c = with(&|c| {
                    c.scheme = Scheme::Sspl;
                    c.scaling = m;
                });
                (m.name().to_string(), c)
            })
            .collect(),
            AblationAxis::MaskType => [
                MaskType::None,
                MaskType::Grid(1),
                MaskType::Grid(2),
                MaskType::Grid(4),
                MaskType::Fh,
            ]
            .into_iter()
            .map(|m| {
                let c = with(&|c| {
                    c.scheme = Scheme::Sacl;
                    c.pcm.enabled = false;
                    c.train.sacl.mask = m;
                });
                (m.name(), c)
            })
            .collect(),
            AblationAxis::NegativeProportion => [2u32, 10, 25, 50, 75, 100]
                .into_iter()
                .map(|p| {
                    let c = with(&|c| {
                        c.scheme = Scheme::Sacl;
                        c.pcm.enabled = false;
                        c.train.sacl.proportion = f64::from(p) / 100.0;
                    });
                    (format!("{p}%"), c)
                })
                .collect(),
            AblationAxis::PcmCycles => [1usize, 3, 5]
                .into_iter()
                .map(|t| {
                    let c = with(&|c| {
                        c.scheme = Scheme::Sspl;
                        c.pcm.enabled = true;
                        c.pcm.cycles = t;
                    });
                    (format!("T={t}"), c)
                })
                .collect(),
            AblationAxis::StopGradient => [true, false]
                .into_iter()
                .map(|sg| {
                    let c = with(&|c| {
                        c.scheme = Scheme::Sspl;
                        c.train.sspl.stop_gradient = sg;
                    });
                    (if sg { "sg" } else { "no-sg" }.to_string(), c)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub arm: String,
    /// `(seed, cIoU, AUC)` per run.
    pub runs: Vec<(u64, f64, f64)>,
}

impl ArmResult {
    pub fn mean_ciou(&self) -> f64 {
        self.runs.iter().map(|r| r.1).sum::<f64>() / self.runs.len().max(1) as f64
    }

    pub fn mean_auc(&self) -> f64 {
        self.runs.iter().map(|r| r.2).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

pub fn ablation_csv(arms: &[ArmResult]) -> String {
    let mut s = String::from("arm,ciou,auc\n");
    for a in arms {
        let _ = writeln!(s, "{},{:.6},{:.6}", a.arm, a.mean_ciou(), a.mean_auc());
    }
    s
}

pub fn ablation_runs_csv(arms: &[ArmResult]) -> String {
    let mut s = String::from("arm,seed,ciou,auc\n");
    for a in arms {
        for (seed, ciou, auc) in &a.runs {
            let _ = writeln!(s, "{},{seed},{ciou:.6},{auc:.6}", a.arm);
        }
    }
    s
}

/// Runs every arm of `axis` on every seed of `cfg.ablate_seeds` with the
/// same dataset, writing the per-arm means and the per-seed runs.
pub fn cmd_ablate(
    cfg: &RunConfig,
    axis: AblationAxis,
    data: &Path,
    out: &Path,
) -> Result<Vec<ArmResult>> {
    cfg.validate()?;
    let train = load_split(cfg, data, "train")?;
    let test = load_split(cfg, data, "test")?;
    let mut results = Vec::new();
    for (arm, arm_cfg) in axis.arms(cfg) {
        let mut runs = Vec::new();
        for &seed in &cfg.ablate_seeds {
            let r = run_experiment(
                &RunConfig {
                    seed,
                    ..arm_cfg.clone()
                },
                &train,
                &test,
            )?;
            runs.push((seed, r.summary.ciou, r.summary.auc));
        }
        results.push(ArmResult { arm, runs });
    }
    create_dir(out)?;
    write_text(&out.join(ABLATION), &ablation_csv(&results))?;
    write_text(&out.join(ABLATION_RUNS), &ablation_runs_csv(&results))?;
    cfg.write(out)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_and_arms() {
        for a in AblationAxis::ALL {
            assert_eq!(AblationAxis::parse(a.name()).unwrap(), a);
        }
        assert!(AblationAxis::parse("depth").is_err());
        let base = RunConfig::default();
        let names = |a: AblationAxis| {
            a.arms(&base)
                .into_iter()
                .map(|(n, _)| n)
                .collect::<Vec<_>>()
        };
        assert_eq!(
            names(AblationAxis::NegativeProportion),
            ["2%", "10%", "25%", "50%", "75%", "100%"]
        );
        assert_eq!(
            names(AblationAxis::Scaling),
            ["minmax", "relu", "sigmoid", "softmax", "relu+softmax"]
        );
        assert_eq!(names(AblationAxis::PcmCycles), ["T=1", "T=3", "T=5"]);
        assert_eq!(
            names(AblationAxis::MaskType),
            ["none", "grid-1", "grid-2", "grid-4", "fh"]
        );
        assert_eq!(names(AblationAxis::StopGradient), ["sg", "no-sg"]);
        for a in AblationAxis::ALL {
            for (_, c) in a.arms(&base) {
                c.validate().unwrap();
                assert_eq!(c.seed, base.seed);
                assert_eq!(c.world, base.world);
            }
        }
    }

    #[test]
    fn ablation_tables() {
        let arms = vec![ArmResult {
            arm: "a".into(),
            runs: vec![(0, 0.5, 0.25), (1, 0.25, 0.75)],
        }];
        assert_eq!(ablation_csv(&arms), "arm,ciou,auc\na,0.375000,0.500000\n");
        assert_eq!(
            ablation_runs_csv(&arms),
            "arm,seed,ciou,auc\na,0,0.500000,0.250000\na,1,0.250000,0.750000\n"
        );
    }
}

//! Plain-text run configuration: `key = value` lines with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attention::ScalingMethod;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Scheme};
use crate::pcm::{Activation, PcmConfig, HIDDEN_CHANNELS};
use crate::sacl::{FndFeatures, MaskType};
use crate::synth::{BlobShape, WorldConfig};
use crate::train::{TrainConfig, Upsampling};

pub const CONFIG_NAME: &str = "config.txt";

/// PCM settings that are independent of the world's feature shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmSettings {
    pub enabled: bool,
    pub layers: usize,
    pub cycles: usize,
    pub feedback_rate: f64,
    pub correction_rate: f64,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub tied: bool,
}

impl Default for PcmSettings {
    fn default() -> Self {
        let d = PcmConfig::standard(1, 1, 2);
        PcmSettings {
            enabled: false,
            layers: d.layers,
            cycles: d.cycles,
            feedback_rate: d.feedback_rate[0],
            correction_rate: d.correction_rate[0],
            hidden_channels: HIDDEN_CHANNELS,
            kernel: d.kernel,
            activation: d.activation,
            tied: d.tied,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Training seed: initialization, batches, views and negatives.
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub scheme: Scheme,
    pub scaling: ScalingMethod,
    pub head_norm: bool,
    pub pcm: PcmSettings,
    pub train: TrainConfig,
    pub upsampling: Upsampling,
    /// Seeds shared by every arm of an ablation sweep.
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            world: WorldConfig::default(),
            train_scenes: 800,
            test_scenes: 200,
            scheme: Scheme::Sspl,
            scaling: ScalingMethod::MinMax,
            head_norm: true,
            pcm: PcmSettings::default(),
            train: TrainConfig::default(),
            upsampling: Upsampling::Nearest,
            ablate_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_num<N: std::str::FromStr>(v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| Error::Config(format!("expected a number, got `{v}`")))
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.into()
}

impl RunConfig {
    /// Defaults overridden by the lines of `text`. Unknown and repeated keys
    /// are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| {
                Error::Config(format!(
                    "line {}: {}",
                    no + 1,
                    e.to_string().trim_start_matches("invalid config: ")
                ))
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    at(Error::Config(format!(
                        "expected `key = value`, got `{line}`"
                    )))
                })?;
            if !seen.insert(key.to_string()) {
                return Err(at(Error::Config(format!("key `{key}` given twice"))));
            }
            cfg.set(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let w = &mut self.world;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_num(v)?,
            "out" => self.out = PathBuf::from(v),
            "world.seed" => w.seed = parse_num(v)?,
            "world.classes" => w.num_classes = parse_num(v)?,
            "world.image_height" => w.image_height = parse_num(v)?,
            "world.image_width" => w.image_width = parse_num(v)?,
            "world.grid_height" => w.grid_height = parse_num(v)?,
            "world.grid_width" => w.grid_width = parse_num(v)?,
            "world.visual_channels" => w.visual_channels = parse_num(v)?,
            "world.audio_dim" => w.audio_dim = parse_num(v)?,
            "world.object_min" => w.object_size.0 = parse_num(v)?,
            "world.object_max" => w.object_size.1 = parse_num(v)?,
            "world.object_shape" => w.object_shape = BlobShape::parse(v)?,
            "world.audio_noise" => w.audio_noise = parse_num(v)?,
            "world.pixel_noise" => w.pixel_noise = parse_num(v)?,
            "world.background_value_min" => w.background_value.0 = parse_num(v)?,
            "world.background_value_max" => w.background_value.1 = parse_num(v)?,
            "world.background_saturation" => w.background_saturation = parse_num(v)?,
            "world.background_contrast" => w.background_contrast = parse_num(v)?,
            "world.background_block" => w.background_block = parse_num(v)?,
            "world.block_saturation" => w.block_saturation = parse_num(v)?,
            "data.train_scenes" => self.train_scenes = parse_num(v)?,
            "data.test_scenes" => self.test_scenes = parse_num(v)?,
            "scheme" => self.scheme = Scheme::parse(v)?,
            "scaling" => self.scaling = ScalingMethod::parse(v)?,
            "sspl.stop_gradient" => t.sspl.stop_gradient = parse_bool(v)?,
            "sspl.head_norm" => self.head_norm = parse_bool(v)?,
            "pcm" => self.pcm.enabled = parse_bool(v)?,
            "pcm.layers" => self.pcm.layers = parse_num(v)?,
            "pcm.cycles" => self.pcm.cycles = parse_num(v)?,
            "pcm.feedback_rate" => self.pcm.feedback_rate = parse_num(v)?,
            "pcm.correction_rate" => self.pcm.correction_rate = parse_num(v)?,
            "pcm.hidden_channels" => self.pcm.hidden_channels = parse_num(v)?,
            "pcm.kernel" => self.pcm.kernel = parse_num(v)?,
            "pcm.activation" => self.pcm.activation = Activation::parse(v)?,
            "pcm.tied" => self.pcm.tied = parse_bool(v)?,
            "sacl.mask" => t.sacl.mask = MaskType::parse(v)?,
            "sacl.fnd" => t.sacl.fnd = parse_bool(v)?,
            "sacl.fnd_features" => t.sacl.fnd_features = FndFeatures::parse(v)?,
            "sacl.proportion" => t.sacl.proportion = parse_num(v)?,
            "sacl.tau" => t.sacl.tau = parse_num(v)?,
            "fh.scale" => t.sacl.fh.scale = parse_num(v)?,
            "fh.sigma" => t.sacl.fh.sigma = parse_num(v)?,
            "fh.min_size" => t.sacl.fh.min_size = parse_num(v)?,
            "augment.crop_min" => {
                t.sspl.spatial.crop_range.0 = parse_num(v)?;
                t.sacl.spatial.crop_range.0 = t.sspl.spatial.crop_range.0;
            }
            "augment.crop_max" => {
                t.sspl.spatial.crop_range.1 = parse_num(v)?;
                t.sacl.spatial.crop_range.1 = t.sspl.spatial.crop_range.1;
            }
            "augment.flip_prob" => {
                t.sspl.spatial.flip_prob = parse_num(v)?;
                t.sacl.spatial.flip_prob = t.sspl.spatial.flip_prob;
            }
            "augment.jitter_prob" => t.sacl.photometric.jitter_prob = parse_num(v)?,
            "augment.jitter" => t.sacl.photometric.jitter = parse_num(v)?,
            "augment.grayscale_prob" => t.sacl.photometric.grayscale_prob = parse_num(v)?,
            "augment.blur_prob" => t.sacl.photometric.blur_prob = parse_num(v)?,
            "augment.blur_sigma_min" => t.sacl.photometric.blur_sigma.0 = parse_num(v)?,
            "augment.blur_sigma_max" => t.sacl.photometric.blur_sigma.1 = parse_num(v)?,
            "optim.lr" => t.adamw.lr = parse_num(v)?,
            "optim.beta1" => t.adamw.beta1 = parse_num(v)?,
            "optim.beta2" => t.adamw.beta2 = parse_num(v)?,
            "optim.eps" => t.adamw.eps = parse_num(v)?,
            "optim.weight_decay" => t.adamw.weight_decay = parse_num(v)?,
            "train.batch" => t.batch = parse_num(v)?,
            "train.steps" => t.steps = parse_num(v)?,
            "eval.upsampling" => self.upsampling = Upsampling::parse(v)?,
            "ablate.seeds" => {
                self.ablate_seeds = v
                    .split(',')
                    .map(|s| parse_num(s.trim()))
                    .collect::<Result<_>>()?;
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.world;
        let t = &self.train;
        let p = &self.pcm;
        let (sp, ph) = (&t.sacl.spatial, &t.sacl.photometric);
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("world.seed", w.seed.to_string()),
            ("world.classes", w.num_classes.to_string()),
            ("world.image_height", w.image_height.to_string()),
            ("world.image_width", w.image_width.to_string()),
            ("world.grid_height", w.grid_height.to_string()),
            ("world.grid_width", w.grid_width.to_string()),
            ("world.visual_channels", w.visual_channels.to_string()),
            ("world.audio_dim", w.audio_dim.to_string()),
            ("world.object_min", w.object_size.0.to_string()),
            ("world.object_max", w.object_size.1.to_string()),
            ("world.object_shape", w.object_shape.name().into()),
            ("world.audio_noise", w.audio_noise.to_string()),
            ("world.pixel_noise", w.pixel_noise.to_string()),
            (
                "world.background_value_min",
                w.background_value.0.to_string(),
            ),
            (
                "world.background_value_max",
                w.background_value.1.to_string(),
            ),
            (
                "world.background_saturation",
                w.background_saturation.to_string(),
            ),
            (
                "world.background_contrast",
                w.background_contrast.to_string(),
            ),
            ("world.background_block", w.background_block.to_string()),
            ("world.block_saturation", w.block_saturation.to_string()),
            ("data.train_scenes", self.train_scenes.to_string()),
            ("data.test_scenes", self.test_scenes.to_string()),
            ("scheme", self.scheme.name().into()),
            ("scaling", self.scaling.name().into()),
            ("sspl.stop_gradient", on_off(t.sspl.stop_gradient)),
            ("sspl.head_norm", on_off(self.head_norm)),
            ("pcm", on_off(p.enabled)),
            ("pcm.layers", p.layers.to_string()),
            ("pcm.cycles", p.cycles.to_string()),
            ("pcm.feedback_rate", p.feedback_rate.to_string()),
            ("pcm.correction_rate", p.correction_rate.to_string()),
            ("pcm.hidden_channels", p.hidden_channels.to_string()),
            ("pcm.kernel", p.kernel.to_string()),
            ("pcm.activation", p.activation.name().into()),
            ("pcm.tied", on_off(p.tied)),
            ("sacl.mask", t.sacl.mask.name()),
            ("sacl.fnd", on_off(t.sacl.fnd)),
            ("sacl.fnd_features", t.sacl.fnd_features.name().into()),
            ("sacl.proportion", t.sacl.proportion.to_string()),
            ("sacl.tau", t.sacl.tau.to_string()),
            ("fh.scale", t.sacl.fh.scale.to_string()),
            ("fh.sigma", t.sacl.fh.sigma.to_string()),
            ("fh.min_size", t.sacl.fh.min_size.to_string()),
            ("augment.crop_min", sp.crop_range.0.to_string()),
            ("augment.crop_max", sp.crop_range.1.to_string()),
            ("augment.flip_prob", sp.flip_prob.to_string()),
            ("augment.jitter_prob", ph.jitter_prob.to_string()),
            ("augment.jitter", ph.jitter.to_string()),
            ("augment.grayscale_prob", ph.grayscale_prob.to_string()),
            ("augment.blur_prob", ph.blur_prob.to_string()),
            ("augment.blur_sigma_min", ph.blur_sigma.0.to_string()),
            ("augment.blur_sigma_max", ph.blur_sigma.1.to_string()),
            ("optim.lr", t.adamw.lr.to_string()),
            ("optim.beta1", t.adamw.beta1.to_string()),
            ("optim.beta2", t.adamw.beta2.to_string()),
            ("optim.eps", t.adamw.eps.to_string()),
            ("optim.weight_decay", t.adamw.weight_decay.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.steps", t.steps.to_string()),
            ("eval.upsampling", self.upsampling.name().into()),
            (
                "ablate.seeds",
                self.ablate_seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]
    }

    /// The fully resolved configuration; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# avloc resolved run configuration\n");
        for (k, v) in self.entries() {
            if k == "augment.crop_min" {
                s.push_str("# augmentation magnitudes are calibrated stand-ins for the synthetic resolution\n");
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_NAME);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Training options with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn pcm_config(&self) -> Option<PcmConfig> {
        let p = &self.pcm;
        if !p.enabled {
            return None;
        }
        let w = &self.world;
        let mut c = PcmConfig::ladder(
            p.layers,
            w.audio_dim,
            w.visual_channels,
            w.grid_height,
            p.hidden_channels,
        );
        c.cycles = p.cycles;
        c.feedback_rate = vec![p.feedback_rate; p.layers];
        c.correction_rate = vec![p.correction_rate; p.layers];
        c.kernel = p.kernel;
        c.activation = p.activation;
        c.tied = p.tied;
        Some(c)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            pcm: self.pcm_config(),
            scaling: self.scaling,
            head_norm: self.head_norm,
            ..ModelConfig::new(self.world.clone(), self.scheme)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train.adamw.validate()?;
        let t = &self.train;
        if t.batch < 2 {
            return Err(Error::Config("train.batch must be at least 2".into()));
        }
        if !(0.0 < t.sacl.proportion && t.sacl.proportion <= 1.0) {
            return Err(Error::Config("sacl.proportion must lie in (0, 1]".into()));
        }
        if !(t.sacl.tau > 0.0) {
            return Err(Error::Config("sacl.tau must be positive".into()));
        }
        let (lo, hi) = t.sspl.spatial.crop_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(
                "augment crop range must satisfy 0 < min <= max <= 1".into(),
            ));
        }
        if self.ablate_seeds.is_empty() {
            return Err(Error::Config(
                "ablate.seeds must list at least one seed".into(),
            ));
        }
        if self.pcm.enabled && self.pcm.layers == 0 {
            return Err(Error::Config("pcm.layers must be positive".into()));
        }
        Ok(())
    }
}

//! Model assembly shared by both learning schemes: parameter layout, the
//! batched encoder forward pass, class-balanced batch sampling and the
//! localization map of a single scene.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::attention::{minmax, similarity_graph, ScalingMethod};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::params::{Bound, ParamStore};
use crate::pcm::{init_pcm_params, pcm_forward, PcmConfig, PcmWeights};
use crate::rng::{stream, tags};
use crate::synth::{
    encode_audio, init_encoder_params, visual_features, PatchProjection, Scene, WorldConfig,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Sspl,
    Sacl,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sspl" => Ok(Scheme::Sspl),
            "sacl" => Ok(Scheme::Sacl),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected sspl or sacl)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sspl => "sspl",
            Scheme::Sacl => "sacl",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub world: WorldConfig,
    pub scheme: Scheme,
    pub pcm: Option<PcmConfig>,
    /// Weighting used when pooling the visual map inside the SSPL pipeline.
    pub scaling: ScalingMethod,
    /// Batch normalization on the SSPL projector's hidden layers.
    pub head_norm: bool,
}

impl ModelConfig {
    pub fn new(world: WorldConfig, scheme: Scheme) -> Self {
        ModelConfig {
            world,
            scheme,
            pcm: None,
            scaling: ScalingMethod::MinMax,
            head_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if let Some(pcm) = &self.pcm {
            if self.scheme == Scheme::Sacl {
                return Err(Error::Config(
                    "pcm belongs to the sspl pipeline and cannot be combined with sacl".into(),
                ));
            }
            pcm.validate()?;
            let top = pcm.shapes[pcm.layers];
            let w = &self.world;
            if pcm.shapes[0].1 != w.audio_dim
                || top.1 != w.visual_channels
                || top.0 != w.grid_height
                || w.grid_height != w.grid_width
            {
                return Err(Error::Config(format!(
                    "pcm layer shapes {:?} do not match audio dim {} and a {}x{}x{} visual map",
                    pcm.shapes, w.audio_dim, w.grid_height, w.grid_width, w.visual_channels
                )));
            }
        }
        Ok(())
    }
}

/// Fresh parameters for `config`, drawn from the `INIT` stream of `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore<f64>> {
    config.validate()?;
    let mut rng = stream(seed, tags::INIT, 0);
    let mut store = ParamStore::new();
    init_encoder_params(&mut store, &config.world, &mut rng);
    if let Some(pcm) = &config.pcm {
        init_pcm_params(&mut store, pcm, &mut rng);
    }
    if config.scheme == Scheme::Sspl {
        crate::sspl::init_heads(
            &mut store,
            config.world.visual_channels,
            config.head_norm,
            &mut rng,
        );
    }
    Ok(store)
}

/// Batched encoder outputs.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[N, cells, c_v]`, after the PCM when it is enabled.
    pub visual: Var,
    /// Transformed audio `[N, c_v]`.
    pub audio: Var,
    /// Raw cosine maps `[N, cells]`.
    pub sim: Var,
    /// Batch prediction energy per PCM cycle (empty without PCM).
    pub energies: Vec<f64>,
}

/// Encodes `N` images given as frozen patch features `[N * cells, c_v]`
/// against their audio `[N, c_a]`.
pub fn encode<T: crate::Scalar>(
    g: &mut Graph<T>,
    params: &Bound,
    config: &ModelConfig,
    frozen: Tensor<T>,
    audio: Tensor<T>,
) -> Result<Encoded> {
    let w = &config.world;
    let (cells, c) = (w.cells(), w.visual_channels);
    let n = audio.shape()[0];
    if frozen.shape() != [n * cells, c] {
        return Err(Error::shape(
            "encode",
            format!("frozen features {:?} for {n} scenes", frozen.shape()),
        ));
    }
    let frozen = g.constant(frozen);
    let raw_audio = g.constant(audio);
    let fv = visual_features(g, params, frozen)?;
    let fa = encode_audio(g, params, raw_audio)?;
    let (visual, energies) = match &config.pcm {
        Some(pcm) => {
            let weights = PcmWeights::from_bound(params, pcm)?;
            let fv = g.reshape(fv, &[n, w.grid_height, w.grid_width, c])?;
            let ra = g.reshape(raw_audio, &[n, 1, 1, w.audio_dim])?;
            let out = pcm_forward(g, fv, ra, &weights, pcm)?;
            (g.reshape(out.visual, &[n, cells, c])?, out.energies)
        }
        None => (g.reshape(fv, &[n, cells, c])?, Vec::new()),
    };
    let sim = similarity_graph(g, fa, visual)?;
    Ok(Encoded {
        visual,
        audio: fa,
        sim,
        energies,
    })
}

/// Stacks scene audio into `[N, c_a]`.
pub fn audio_batch(scenes: &[&Scene]) -> Result<Tensor<f64>> {
    let dim = scenes.first().map_or(0, |s| s.audio.len());
    let data: Vec<f64> = scenes
        .iter()
        .flat_map(|s| s.audio.iter().copied())
        .collect();
    Tensor::new(vec![scenes.len(), dim], data)
}

/// Per-scene localization output on the feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    /// Raw cosine map, `cells` values.
    pub raw: Vec<f64>,
    /// Min-max normalized map.
    pub normalized: Vec<f64>,
    /// Prediction energy after each PCM cycle.
    pub energies: Vec<f64>,
}

/// Localization maps of unaugmented scenes, one graph per scene so PCM
/// energies stay per scene.
pub fn localize_batch(
    params: &ParamStore<f64>,
    config: &ModelConfig,
    projection: &PatchProjection,
    scenes: &[&Scene],
) -> Result<Vec<Localization>> {
    let cells = config.world.cells();
    par_map(scenes, |s| {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let enc = encode(
            &mut g,
            &bound,
            config,
            projection.project_batch(&[&s.image])?,
            audio_batch(&[s])?,
        )?;
        let raw = g.value(enc.sim).data()[..cells].to_vec();
        let normalized = minmax(&raw);
        Ok(Localization {
            raw,
            normalized,
            energies: enc.energies,
        })
    })
    .into_iter()
    .collect()
}

pub fn localize(
    params: &ParamStore<f64>,
    config: &ModelConfig,
    projection: &PatchProjection,
    scene: &Scene,
) -> Result<Localization> {
    Ok(localize_batch(params, config, projection, &[scene])?.remove(0))
}

/// Draws batches with an equal share of every class present in the pool.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
}

impl BalancedSampler {
    /// `labels[i]` is the class of pool item `i`.
    pub fn new(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut by_class = vec![Vec::new(); k];
        for (i, &c) in labels.iter().enumerate() {
            by_class[c].push(i);
        }
        by_class.retain(|v| !v.is_empty());
        if by_class.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot sample from an empty pool".into(),
            ));
        }
        Ok(BalancedSampler { by_class })
    }

    pub fn classes(&self) -> usize {
        self.by_class.len()
    }

    /// `size` pool indices: `size / K` per class, the remainder spread over
    /// randomly chosen classes, then shuffled. Classes smaller than their
    /// share are drawn with repetition.
    pub fn sample(&self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let k = self.by_class.len();
        let mut quota = vec![size / k; k];
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(rng);
        for &c in order.iter().take(size % k) {
            quota[c] += 1;
        }
        let mut out = Vec::with_capacity(size);
        for (members, &q) in self.by_class.iter().zip(&quota) {
            if q <= members.len() {
                out.extend(members.choose_multiple(rng, q).copied());
            } else {
                out.extend((0..q).map(|_| members[rng.random_range(0..members.len())]));
            }
        }
        out.shuffle(rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_world;

    #[test]
    fn balanced_batches_cover_each_class_equally() {
        let labels: Vec<usize> = (0..80).map(|i| (i * 7) % 8).collect();
        let s = BalancedSampler::new(&labels).unwrap();
        let mut rng = stream(1, tags::BATCH, 0);
        let batch = s.sample(32, &mut rng);
        let mut counts = [0; 8];
        for &i in &batch {
            counts[labels[i]] += 1;
        }
        assert_eq!(counts, [4; 8]);
        let mut uniq = batch.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 32);
        assert_eq!(s.sample(10, &mut rng).len(), 10);
    }

    #[test]
    fn pcm_with_sacl_is_rejected() {
        let w = WorldConfig::default();
        let mut cfg = ModelConfig::new(w.clone(), Scheme::Sacl);
        cfg.pcm = Some(PcmConfig::standard(
            w.audio_dim,
            w.visual_channels,
            w.grid_height,
        ));
        assert!(init_params(&cfg, 0).is_err());
        cfg.scheme = Scheme::Sspl;
        assert!(init_params(&cfg, 0).is_ok());
    }

    #[test]
    fn localization_shapes_and_range() {
        let w = WorldConfig::default();
        let world = make_world(&w).unwrap();
        let mut cfg = ModelConfig::new(w.clone(), Scheme::Sspl);
        cfg.pcm = Some(PcmConfig::standard(
            w.audio_dim,
            w.visual_channels,
            w.grid_height,
        ));
        let params = init_params(&cfg, 3).unwrap();
        let proj = PatchProjection::new(&w);
        let loc = localize(&params, &cfg, &proj, &world.scene(0)).unwrap();
        assert_eq!(loc.raw.len(), 64);
        assert_eq!(loc.energies.len(), 6);
        assert!(loc.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(loc
            .raw
            .iter()
            .all(|&v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&v)));
    }
}

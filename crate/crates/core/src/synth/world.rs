use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::rng::{stream, tags};

/// Geometry of the sounding object painted into each scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobShape {
    Rectangle,
    Ellipse,
    /// Fair coin per scene.
    Mixed,
}

impl BlobShape {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangle" => Ok(BlobShape::Rectangle),
            "ellipse" => Ok(BlobShape::Ellipse),
            "mixed" => Ok(BlobShape::Mixed),
            other => Err(Error::Config(format!("unknown object shape `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlobShape::Rectangle => "rect",
            BlobShape::Ellipse => "ellipse",
            BlobShape::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub visual_channels: usize,
    pub audio_dim: usize,
    /// Object side length as a fraction of the image side, `[min, max]`.
    pub object_size: (f64, f64),
    pub object_shape: BlobShape,
    pub audio_noise: f64,
    pub pixel_noise: f64,
    /// Range of the background brightness.
    pub background_value: (f64, f64),
    /// Upper bound of the background saturation.
    pub background_saturation: f64,
    /// Peak brightness swing of the blocky background texture.
    pub background_contrast: f64,
    /// Side of one background texture block in pixels.
    pub background_block: usize,
    /// Saturation of the per-block random hue tint (0 keeps blocks gray).
    pub block_saturation: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_classes: 8,
            image_height: 64,
            image_width: 64,
            grid_height: 8,
            grid_width: 8,
            visual_channels: 32,
            audio_dim: 128,
            object_size: (0.3, 0.55),
            object_shape: BlobShape::Mixed,
            audio_noise: 0.05,
            pixel_noise: 0.02,
            background_value: (0.5, 0.55),
            background_saturation: 0.0,
            background_contrast: 0.3,
            background_block: 12,
            block_saturation: 0.6,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.grid_height == 0
            || self.grid_width == 0
            || self.image_height % self.grid_height != 0
            || self.image_width % self.grid_width != 0
        {
            return fail(format!(
                "image {}x{} must be divisible by feature grid {}x{}",
                self.image_height, self.image_width, self.grid_height, self.grid_width
            ));
        }
        if self.visual_channels == 0 || self.audio_dim == 0 {
            return fail("feature widths must be positive".into());
        }
        let (lo, hi) = self.object_size;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return fail(format!(
                "object size range ({lo}, {hi}) must satisfy 0 < min <= max <= 1"
            ));
        }
        if !(self.audio_noise >= 0.0 && self.pixel_noise >= 0.0 && self.background_contrast >= 0.0)
            || !(0.0..=1.0).contains(&self.background_saturation)
            || !(0.0..=1.0).contains(&self.block_saturation)
        {
            return fail(
                "noise levels must be non-negative and background saturation in [0, 1]".into(),
            );
        }
        let (vlo, vhi) = self.background_value;
        if !(0.0 <= vlo && vlo <= vhi && vhi <= 1.0) {
            return fail(format!(
                "background value range ({vlo}, {vhi}) must lie in [0, 1]"
            ));
        }
        if self.background_block == 0 {
            return fail("background_block must be positive".into());
        }
        Ok(())
    }

    pub fn patch_height(&self) -> usize {
        self.image_height / self.grid_height
    }

    pub fn patch_width(&self) -> usize {
        self.image_width / self.grid_width
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_height() * self.patch_width() * 3
    }

    pub fn cells(&self) -> usize {
        self.grid_height * self.grid_width
    }
}

/// Appearance of one class: a saturated base color plus a fixed tiled
/// perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTexture {
    pub base: [f64; 3],
    pub tile: Vec<[f64; 3]>,
    pub tile_side: usize,
}

impl ClassTexture {
    pub fn color_at(&self, row: usize, col: usize) -> [f64; 3] {
        let t = self.tile[(row % self.tile_side) * self.tile_side + col % self.tile_side];
        [
            self.base[0] + t[0],
            self.base[1] + t[1],
            self.base[2] + t[2],
        ]
    }
}

/// Class prototypes shared by every scene of a world.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    /// Unit-norm audio prototype per class.
    pub audio_prototypes: Vec<Vec<f64>>,
    pub textures: Vec<ClassTexture>,
}

/// One synthetic audio-visual sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub image: Image,
    pub gt_mask: Mask,
    pub class_id: usize,
    pub audio: Vec<f64>,
}

const MAX_PROTOTYPE_DRAWS: usize = 10_000;
const MAX_PROTOTYPE_COSINE: f64 = 0.5;
const TEXTURE_TILE: usize = 4;
const TEXTURE_AMPLITUDE: f64 = 0.05;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// HSV in `[0,1]^3` to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Draws class prototypes: unit audio vectors with pairwise cosine below
/// 0.5 (rejection sampled) and evenly spaced saturated hues.
pub fn make_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = stream(config.seed, tags::PROTOTYPES, 0);
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(config.num_classes);
    let mut draws = 0;
    while prototypes.len() < config.num_classes {
        if draws == MAX_PROTOTYPE_DRAWS {
            return Err(Error::Config(format!(
                "could not place {} audio prototypes with pairwise cosine < {MAX_PROTOTYPE_COSINE} \
                 in {} dimensions after {MAX_PROTOTYPE_DRAWS} draws",
                config.num_classes, config.audio_dim
            )));
        }
        draws += 1;
        let v: Vec<f64> = (0..config.audio_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        if prototypes
            .iter()
            .all(|p| cosine(p, &v) < MAX_PROTOTYPE_COSINE)
        {
            prototypes.push(v);
        }
    }

    let mut trng = stream(config.seed, tags::TEXTURES, 0);
    let textures = (0..config.num_classes)
        .map(|k| {
            let base = hsv_to_rgb(k as f64 / config.num_classes as f64, 0.85, 0.9);
            let tile = (0..TEXTURE_TILE * TEXTURE_TILE)
                .map(|_| {
                    let mut px = [0.0; 3];
                    for c in &mut px {
                        *c = trng.random_range(-TEXTURE_AMPLITUDE..=TEXTURE_AMPLITUDE);
                    }
                    px
                })
                .collect();
            ClassTexture {
                base,
                tile,
                tile_side: TEXTURE_TILE,
            }
        })
        .collect();

    Ok(World {
        config: config.clone(),
        audio_prototypes: prototypes,
        textures,
    })
}

/// Side length in pixels for a fraction of `side`, at least one pixel.
fn frac_to_px(frac: f64, side: usize) -> usize {
    ((frac * side as f64).round() as usize).clamp(1, side)
}

impl World {
    /// Renders scene `id` from its own seed.
    pub fn sample_scene(&self, id: usize, scene_seed: u64) -> Scene {
        let cfg = &self.config;
        let (h, w) = (cfg.image_height, cfg.image_width);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let class_id = rng.random_range(0..cfg.num_classes);

        // Background: desaturated base color with blocky brightness texture.
        let hue: f64 = rng.random();
        let sat = rng.random_range(0.0..=cfg.background_saturation);
        let val = rng.random_range(cfg.background_value.0..=cfg.background_value.1);
        let base = hsv_to_rgb(hue, sat, val);
        let block = cfg.background_block;
        let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
        let amp = cfg.background_contrast;
        let bsat = cfg.block_saturation;
        let blocks: Vec<[f64; 3]> = (0..bh * bw)
            .map(|_| {
                let d = if amp > 0.0 {
                    rng.random_range(-amp..=amp)
                } else {
                    0.0
                };
                if bsat > 0.0 {
                    let t = hsv_to_rgb(rng.random(), bsat, 1.0);
                    let m = (t[0] + t[1] + t[2]) / 3.0;
                    [d + t[0] - m, d + t[1] - m, d + t[2] - m]
                } else {
                    [d; 3]
                }
            })
            .collect();
        let mut image = Image::filled(h, w, base);
        for r in 0..h {
            for c in 0..w {
                let d = blocks[(r / block) * bw + c / block];
                image.set_pixel(r, c, [base[0] + d[0], base[1] + d[1], base[2] + d[2]]);
            }
        }

        // Object blob.
        let (lo, hi) = cfg.object_size;
        let bh_px = frac_to_px(rng.random_range(lo..=hi), h);
        let bw_px = frac_to_px(rng.random_range(lo..=hi), w);
        let top = rng.random_range(0..=h - bh_px);
        let left = rng.random_range(0..=w - bw_px);
        let ellipse = match cfg.object_shape {
            BlobShape::Rectangle => false,
            BlobShape::Ellipse => true,
            BlobShape::Mixed => rng.random_bool(0.5),
        };
        let mut gt_mask = Mask::empty(h, w);
        let (cy, cx) = ((bh_px as f64 - 1.0) / 2.0, (bw_px as f64 - 1.0) / 2.0);
        let (ry, rx) = (bh_px as f64 / 2.0, bw_px as f64 / 2.0);
        let texture = &self.textures[class_id];
        for r in 0..bh_px {
            for c in 0..bw_px {
                let inside = !ellipse || {
                    let (dy, dx) = ((r as f64 - cy) / ry, (c as f64 - cx) / rx);
                    dy * dy + dx * dx <= 1.0
                };
                if inside {
                    let (pr, pc) = (top + r, left + c);
                    gt_mask.data[pr * w + pc] = true;
                    image.set_pixel(pr, pc, texture.color_at(pr, pc));
                }
            }
        }

        if cfg.pixel_noise > 0.0 {
            let noise = Normal::new(0.0, cfg.pixel_noise).expect("finite pixel noise");
            for v in &mut image.data {
                *v += noise.sample(&mut rng);
            }
        }
        image.clamp();

        let proto = &self.audio_prototypes[class_id];
        let audio = if cfg.audio_noise > 0.0 {
            let noise = Normal::new(0.0, cfg.audio_noise).expect("finite audio noise");
            proto.iter().map(|&p| p + noise.sample(&mut rng)).collect()
        } else {
            proto.clone()
        };

        Scene {
            id,
            image,
            gt_mask,
            class_id,
            audio,
        }
    }

    /// Scene `id` of this world, seeded from the master seed.
    pub fn scene(&self, id: usize) -> Scene {
        let seed = crate::rng::derive_seed(self.config.seed, tags::SCENE, id as u64);
        self.sample_scene(id, seed)
    }

    /// Nearest audio prototype by cosine.
    pub fn classify_audio(&self, audio: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, p) in self.audio_prototypes.iter().enumerate() {
            let c = cosine(p, audio);
            if c > best.1 {
                best = (k, c);
            }
        }
        best.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorldConfig {
        WorldConfig::default()
    }

    #[test]
    fn two_classes_are_separated() {
        for seed in 0..20 {
            let w = make_world(&WorldConfig {
                num_classes: 2,
                seed,
                ..cfg()
            })
            .unwrap();
            assert!(cosine(&w.audio_prototypes[0], &w.audio_prototypes[1]) < 0.5);
        }
    }

    #[test]
    fn eight_prototypes_pairwise_check() {
        let w = make_world(&cfg()).unwrap();
        assert_eq!(w.audio_prototypes.len(), 8);
        for i in 0..8 {
            let n: f64 = w.audio_prototypes[i].iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(cosine(&w.audio_prototypes[i], &w.audio_prototypes[j]) < 0.5);
            }
        }
    }

    #[test]
    fn world_is_deterministic() {
        assert_eq!(make_world(&cfg()).unwrap(), make_world(&cfg()).unwrap());
        let w = make_world(&cfg()).unwrap();
        assert_eq!(w.scene(3), w.scene(3));
        assert_ne!(w.scene(3).image, w.scene(4).image);
    }

    #[test]
    fn prototype_rejection_can_fail() {
        let c = WorldConfig {
            num_classes: 64,
            audio_dim: 2,
            ..cfg()
        };
        assert!(matches!(make_world(&c), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_audio_is_prototype() {
        let w = make_world(&WorldConfig {
            audio_noise: 0.0,
            ..cfg()
        })
        .unwrap();
        let s = w.scene(11);
        assert_eq!(s.audio, w.audio_prototypes[s.class_id]);
    }

    #[test]
    fn full_size_blob_covers_image() {
        let c = WorldConfig {
            object_size: (1.0, 1.0),
            object_shape: BlobShape::Rectangle,
            ..cfg()
        };
        let w = make_world(&c).unwrap();
        assert!(w.scene(0).gt_mask.data.iter().all(|&b| b));
    }

    #[test]
    fn audio_classifies_to_own_prototype() {
        let w = make_world(&WorldConfig {
            audio_noise: 0.05,
            ..cfg()
        })
        .unwrap();
        for id in 0..100 {
            let s = w.scene(id);
            assert_eq!(w.classify_audio(&s.audio), s.class_id);
        }
    }

    #[test]
    fn rejects_misaligned_grid() {
        let c = WorldConfig {
            grid_height: 7,
            ..cfg()
        };
        assert!(c.validate().is_err());
    }
}

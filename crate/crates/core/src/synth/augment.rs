//! View augmentations. Spatial transforms are shared between an image and
//! every per-pixel map aligned with it; photometric ones touch only pixels.

use rand::Rng;

use crate::imaging::{Image, Mask};
use crate::rng::{stream, tags};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialConfig {
    /// Crop side as a fraction of the image side.
    pub crop_range: (f64, f64),
    pub flip_prob: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            crop_range: (0.8, 1.0),
            flip_prob: 0.5,
        }
    }
}

/// A concrete square-ish crop followed by an optional horizontal flip,
/// resized back to the source resolution by nearest neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialParams {
    pub height: usize,
    pub width: usize,
    pub top: usize,
    pub left: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip: bool,
}

impl SpatialParams {
    pub fn identity(height: usize, width: usize) -> Self {
        SpatialParams {
            height,
            width,
            top: 0,
            left: 0,
            crop_height: height,
            crop_width: width,
            flip: false,
        }
    }

    pub fn sample(height: usize, width: usize, config: &SpatialConfig, rng: &mut impl Rng) -> Self {
        let (lo, hi) = config.crop_range;
        let frac = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let ch = ((frac * height as f64).round() as usize).clamp(1, height);
        let cw = ((frac * width as f64).round() as usize).clamp(1, width);
        let top = rng.random_range(0..=height - ch);
        let left = rng.random_range(0..=width - cw);
        let flip = config.flip_prob > 0.0 && rng.random_bool(config.flip_prob.min(1.0));
        SpatialParams {
            height,
            width,
            top,
            left,
            crop_height: ch,
            crop_width: cw,
            flip,
        }
    }

    /// Source pixel that output pixel `(row, col)` is read from.
    pub fn source(&self, row: usize, col: usize) -> (usize, usize) {
        let col = if self.flip { self.width - 1 - col } else { col };
        (
            self.top + row * self.crop_height / self.height,
            self.left + col * self.crop_width / self.width,
        )
    }

    /// Applies the transform to any row-major map with `channels` values per pixel.
    pub fn apply<P: Copy>(&self, src: &[P], channels: usize) -> Vec<P> {
        assert_eq!(src.len(), self.height * self.width * channels);
        let mut out = Vec::with_capacity(src.len());
        for r in 0..self.height {
            for c in 0..self.width {
                let (sr, sc) = self.source(r, c);
                let i = (sr * self.width + sc) * channels;
                out.extend_from_slice(&src[i..i + channels]);
            }
        }
        out
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        Image {
            height: image.height,
            width: image.width,
            data: self.apply(&image.data, 3),
        }
    }

    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        Mask {
            height: mask.height,
            width: mask.width,
            data: self.apply(&mask.data, 1),
        }
    }
}

/// Random crop + flip of an image and its aligned mask, with identical
/// parameters on both.
pub fn augment_spatial(
    image: &Image,
    mask: &Mask,
    seed: u64,
    config: &SpatialConfig,
) -> (Image, Mask, SpatialParams) {
    let mut rng = stream(seed, tags::VIEW, 0);
    let params = SpatialParams::sample(image.height, image.width, config, &mut rng);
    (params.apply_image(image), params.apply_mask(mask), params)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricConfig {
    pub jitter_prob: f64,
    /// Brightness and contrast factors are drawn from `1 +/- jitter`.
    pub jitter: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig {
            jitter_prob: 0.8,
            jitter: 0.4,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 1.0),
        }
    }
}

impl PhotometricConfig {
    pub fn disabled() -> Self {
        PhotometricConfig {
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            ..Default::default()
        }
    }
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn grayscale(image: &Image) -> Image {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(3) {
        let y = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
        px.fill(y);
    }
    out
}

/// Normalized 1-D Gaussian taps truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Reflect-101 style index folding: `-1 -> 1`, `n -> n - 2`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur over each channel of a row-major image with
/// `channels` interleaved values, reflective boundary.
pub fn blur_channels(
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    sigma: f64,
) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for row in 0..height {
        for col in 0..width {
            for ch in 0..channels {
                let mut s = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let c = reflect(col as isize + t as isize - r, width);
                    s += kv * data[(row * width + c) * channels + ch];
                }
                tmp[(row * width + col) * channels + ch] = s;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for row in 0..height {
        for col in 0..width {
            for ch in 0..channels {
                let mut s = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let rr = reflect(row as isize + t as isize - r, height);
                    s += kv * tmp[(rr * width + col) * channels + ch];
                }
                out[(row * width + col) * channels + ch] = s;
            }
        }
    }
    out
}

pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    Image {
        height: image.height,
        width: image.width,
        data: blur_channels(&image.data, image.height, image.width, 3, sigma),
    }
}

/// Seeded color distortion, grayscale and blur, each behind its own coin.
pub fn augment_photometric(image: &Image, seed: u64, config: &PhotometricConfig) -> Image {
    let mut rng = stream(seed, tags::PHOTOMETRIC, 0);
    let mut out = image.clone();
    let coin = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| p > 0.0 && rng.random_bool(p.min(1.0));
    if coin(&mut rng, config.jitter_prob) {
        let j = config.jitter;
        let brightness = rng.random_range(1.0 - j..=1.0 + j);
        let contrast = rng.random_range(1.0 - j..=1.0 + j);
        for v in &mut out.data {
            *v *= brightness;
        }
        let mean = out.mean();
        for v in &mut out.data {
            *v = (*v - mean) * contrast + mean;
        }
        out.clamp();
    }
    if coin(&mut rng, config.grayscale_prob) {
        out = grayscale(&out);
    }
    if coin(&mut rng, config.blur_prob) {
        let (lo, hi) = config.blur_sigma;
        let sigma = rng.random_range(lo..=hi);
        out = gaussian_blur(&out, sigma);
    }
    out.clamp();
    out
}

use crate::error::{Error, Result};
use crate::imaging::{encode_pgm, encode_ppm, Image};

pub const OVERLAY_ALPHA: f64 = 0.5;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale heatmap of a normalized map at `height x width`.
pub fn heatmap_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::shape(
            "heatmap_pgm",
            format!("{} values for {height}x{width}", values.len()),
        ));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| to_byte(v)).collect();
    Ok(encode_pgm(height, width, &bytes))
}

/// Blends a red ramp `(v, 0, 0)` over `image` at [`OVERLAY_ALPHA`].
pub fn overlay_ppm(image: &Image, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != image.height * image.width {
        return Err(Error::shape(
            "overlay_ppm",
            "map and image sizes differ".to_string(),
        ));
    }
    let mut out = image.clone();
    for (px, &v) in out.data.chunks_exact_mut(3).zip(values) {
        let ramp = [v.clamp(0.0, 1.0), 0.0, 0.0];
        for (p, r) in px.iter_mut().zip(ramp) {
            *p = (1.0 - OVERLAY_ALPHA) * *p + OVERLAY_ALPHA * r;
        }
    }
    Ok(encode_ppm(&out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_one_hot_heatmaps() {
        let gray = heatmap_pgm(&[0.5; 4], 2, 2).unwrap();
        assert_eq!(&gray[gray.len() - 4..], &[128; 4]);
        let hot = heatmap_pgm(&[0.0, 0.0, 1.0, 0.0], 2, 2).unwrap();
        assert_eq!(&hot[hot.len() - 4..], &[0, 0, 255, 0]);
    }

    #[test]
    fn overlay_blend_on_one_pixel() {
        let img = Image::new(1, 1, vec![0.2, 0.4, 1.0]).unwrap();
        let bytes = overlay_ppm(&img, &[0.8]).unwrap();
        // 0.5 * 0.2 + 0.5 * 0.8 = 0.5, 0.5 * 0.4 = 0.2, 0.5 * 1.0 = 0.5.
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 51, 128]);
    }
}

//! RGB images, binary masks and their netpbm encodings.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x 3` image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Image {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<crate::eval::BBox> {
        let mut bb: Option<crate::eval::BBox> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    bb = Some(match bb {
                        None => crate::eval::BBox {
                            top: r,
                            left: c,
                            bottom: r,
                            right: c,
                        },
                        Some(b) => b.include(r, c),
                    });
                }
            }
        }
        bb
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

/// Grayscale bytes as a binary PGM.
pub fn encode_pgm(height: usize, width: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

pub fn mask_to_pgm(mask: &Mask) -> Vec<u8> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pgm(mask.height, mask.width, &bytes)
}

/// Parses a binary netpbm header, returning (magic, width, height, payload).
fn parse_netpbm<'a>(bytes: &'a [u8], origin: &Path) -> Result<(String, usize, usize, &'a [u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(origin, "truncated netpbm header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format(origin, format!("bad header number `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format(
            origin,
            format!("unsupported maxval {maxval}"),
        ));
    }
    let payload = bytes.get(pos..).unwrap_or(&[]);
    Ok((fields[0].clone(), w, h, payload))
}

pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<Image> {
    let (magic, w, h, payload) = parse_netpbm(bytes, origin)?;
    if magic != "P6" || payload.len() != w * h * 3 {
        return Err(Error::format(origin, "expected a binary P6 image"));
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h, w, data)
}

/// Returns (height, width, bytes).
pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (magic, w, h, payload) = parse_netpbm(bytes, origin)?;
    if magic != "P5" || payload.len() != w * h {
        return Err(Error::format(origin, "expected a binary P5 image"));
    }
    Ok((h, w, payload.to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, values) = decode_pgm(&bytes, path)?;
    if values.iter().any(|&v| v != 0 && v != 255) {
        return Err(Error::format(path, "mask values must be 0 or 255"));
    }
    Mask::new(h, w, values.iter().map(|&v| v == 255).collect())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_quantizes() {
        let img = Image::new(1, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let back = decode_ppm(&encode_ppm(&img), Path::new("mem")).unwrap();
        assert_eq!(back.height, 1);
        assert_eq!(back.width, 2);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_header_and_payload() {
        let m = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        let bytes = mask_to_pgm(&m);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        let (h, w, v) = decode_pgm(&bytes, Path::new("mem")).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(v, vec![255, 0, 0, 255]);
    }

    #[test]
    fn bounding_box_of_mask() {
        let mut m = Mask::empty(4, 5);
        m.data[6] = true;
        m.data[13] = true;
        let b = m.bounding_box().unwrap();
        assert_eq!((b.top, b.left, b.bottom, b.right), (1, 1, 2, 3));
        assert!(Mask::empty(2, 2).bounding_box().is_none());
    }
}

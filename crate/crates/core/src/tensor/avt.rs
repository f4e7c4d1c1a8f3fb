//! `AVT1` tensor files: magic, little-endian u32 rank and dims, then an
//! `f32` little-endian row-major payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"AVT1";

pub fn write_avt_bytes<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn read_avt_bytes<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Tensor<T>> {
    let bad = |detail: &str| Error::format(origin, detail.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing AVT1 magic"));
    }
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| bad("truncated header"))
    };
    let rank = word(4)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for r in 0..rank {
        shape.push(word(8 + 4 * r)? as usize);
    }
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    if bytes.len() != start + 4 * n {
        return Err(bad(&format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            bytes.len() - start.min(bytes.len()),
            4 * n
        )));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_avt<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    fs::write(path, write_avt_bytes(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_avt<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_avt_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0f64, -2.5]).unwrap();
        let bytes = write_avt_bytes(&t);
        assert_eq!(&bytes[..4], b"AVT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = Path::new("mem");
        assert!(read_avt_bytes::<f64>(b"AVT2\0\0\0\0", p).is_err());
        let mut bytes = write_avt_bytes(&Tensor::from_vec(vec![1.0f64, 2.0]));
        bytes.pop();
        assert!(read_avt_bytes::<f64>(&bytes, p).is_err());
        let nan = write_avt_bytes(&Tensor::from_raw(vec![1], vec![f64::NAN]));
        assert!(read_avt_bytes::<f64>(&nan, p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_through_f32(values in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let t = Tensor::from_vec(values.clone());
            let back: Tensor<f64> = read_avt_bytes(&write_avt_bytes(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(&values) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}

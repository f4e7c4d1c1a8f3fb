//! On-disk datasets: a tab-separated manifest plus one PPM image, one PGM
//! mask and one AVT1 audio embedding per scene.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Scene, World};
use crate::error::{Error, Result};
use crate::imaging::{encode_ppm, mask_to_pgm, read_mask_pgm, read_ppm, write_bytes};
use crate::tensor::{read_avt, write_avt, Tensor};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub scene_id: usize,
    pub class_id: usize,
    /// Paths relative to the dataset directory.
    pub image_path: String,
    pub mask_path: String,
    pub audio_path: String,
}

impl ManifestRecord {
    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\n",
            self.scene_id, self.class_id, self.image_path, self.mask_path, self.audio_path
        )
    }
}

/// Renders scenes `ids` of `world` into `dir` and writes the manifest.
pub fn write_dataset(
    world: &World,
    dir: &Path,
    ids: impl IntoIterator<Item = usize>,
) -> Result<Vec<ManifestRecord>> {
    for sub in ["images", "masks", "audio"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::new();
    let mut manifest = String::new();
    for id in ids {
        let scene = world.scene(id);
        let rec = ManifestRecord {
            scene_id: id,
            class_id: scene.class_id,
            image_path: format!("images/{id:05}.ppm"),
            mask_path: format!("masks/{id:05}.pgm"),
            audio_path: format!("audio/{id:05}.avt"),
        };
        write_bytes(&dir.join(&rec.image_path), &encode_ppm(&scene.image))?;
        write_bytes(&dir.join(&rec.mask_path), &mask_to_pgm(&scene.gt_mask))?;
        let audio = Tensor::new(vec![scene.audio.len()], scene.audio.clone())?;
        write_avt(&dir.join(&rec.audio_path), &audio)?;
        manifest.push_str(&rec.line());
        records.push(rec);
    }
    write_bytes(&dir.join(MANIFEST_NAME), manifest.as_bytes())?;
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 1));
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        out.push(ManifestRecord {
            scene_id: f[0].parse().map_err(|_| bad("bad scene_id"))?,
            class_id: f[1].parse().map_err(|_| bad("bad class_id"))?,
            image_path: f[2].to_string(),
            mask_path: f[3].to_string(),
            audio_path: f[4].to_string(),
        });
    }
    Ok(out)
}

/// Loads every scene listed in `dir`'s manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let records = read_manifest(&dir.join(MANIFEST_NAME))?;
    let resolve = |p: &str| -> PathBuf { dir.join(p) };
    records
        .iter()
        .map(|rec| {
            let image = read_ppm(&resolve(&rec.image_path))?;
            let gt_mask = read_mask_pgm(&resolve(&rec.mask_path))?;
            let audio: Tensor<f64> = read_avt(&resolve(&rec.audio_path))?;
            if gt_mask.height != image.height || gt_mask.width != image.width {
                return Err(Error::format(
                    resolve(&rec.mask_path),
                    "mask size differs from image",
                ));
            }
            Ok(Scene {
                id: rec.scene_id,
                image,
                gt_mask,
                class_id: rec.class_id,
                audio: audio.into_data(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_world, WorldConfig};

    #[test]
    fn round_trip_and_byte_identical_regeneration() {
        let world = make_world(&WorldConfig::default()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let recs = write_dataset(&world, a.path(), 0..6).unwrap();
        write_dataset(&world, b.path(), 0..6).unwrap();
        assert_eq!(recs.len(), 6);
        for rec in &recs {
            for p in [&rec.image_path, &rec.mask_path, &rec.audio_path] {
                assert_eq!(
                    fs::read(a.path().join(p)).unwrap(),
                    fs::read(b.path().join(p)).unwrap()
                );
            }
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
            fs::read(b.path().join(MANIFEST_NAME)).unwrap()
        );
        assert_eq!(read_manifest(&a.path().join(MANIFEST_NAME)).unwrap(), recs);

        let scenes = load_dataset(a.path()).unwrap();
        for (s, id) in scenes.iter().zip(0..) {
            let orig = world.scene(id);
            assert_eq!(s.gt_mask, orig.gt_mask);
            assert_eq!(s.class_id, orig.class_id);
            for (x, y) in s.audio.iter().zip(&orig.audio) {
                assert!((x - y).abs() < 1e-6);
            }
            for (x, y) in s.image.data.iter().zip(&orig.image.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_NAME);
        fs::write(&p, "0\t1\timages/a.ppm\n").unwrap();
        assert!(read_manifest(&p).is_err());
    }
}

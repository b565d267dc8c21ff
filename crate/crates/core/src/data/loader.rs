use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

use super::synth::objects_from_labels;
use super::{pgm, preprocess, SegmentationSample};

/// Writes `img_<stem>.pgm` (16-bit, min-max scaled) and `lbl_<stem>.pgm`
/// (8-bit class indices) into `dir`.
pub fn save_sample_pair(dir: &Path, stem: &str, sample: &SegmentationSample) -> Result<()> {
    let (h, w) = sample.dims();
    if sample.image.shape() != [1, 1, h, w] {
        return Err(Error::shape("only single-channel images can be written as PGM"));
    }
    let (img, _, _) = pgm::quantize(sample.image.data(), w, h, 65535)?;
    pgm::write(dir.join(format!("img_{stem}.pgm")), &img)?;
    let max = sample.labels.max_label();
    if max > 255 {
        return Err(Error::Config(format!("label {max} does not fit an 8-bit PGM")));
    }
    let lbl = pgm::PgmImage::new(
        w,
        h,
        255,
        sample.labels.data().iter().map(|&l| l as u16).collect(),
    )?;
    pgm::write(dir.join(format!("lbl_{stem}.pgm")), &lbl)
}

/// Loads every `img_*.pgm` / `lbl_*.pgm` pair in `dir`, sorted by name.
/// Images are preprocessed; objects are recovered from the labels.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<SegmentationSample>> {
    let dir = dir.as_ref();
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut labels: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".pgm") else {
            continue;
        };
        if let Some(key) = stem.strip_prefix("img_") {
            images.insert(key.to_string(), path.clone());
        } else if let Some(key) = stem.strip_prefix("lbl_") {
            labels.insert(key.to_string(), path.clone());
        }
    }
    if images.is_empty() {
        return Err(Error::format(
            dir.display().to_string(),
            "no img_*.pgm files found",
        ));
    }
    if let Some((_, orphan)) = labels.iter().find(|(k, _)| !images.contains_key(*k)) {
        return Err(Error::format(orphan.display().to_string(), "label has no matching image"));
    }
    let mut samples = Vec::with_capacity(images.len());
    let mut dims = None;
    for (key, img_path) in &images {
        let lbl_path = labels.get(key).ok_or_else(|| {
            Error::format(img_path.display().to_string(), "image has no matching lbl_ file")
        })?;
        let img = pgm::read(img_path)?;
        let lbl = pgm::read(lbl_path)?;
        if (img.width, img.height) != (lbl.width, lbl.height) {
            return Err(Error::format(
                lbl_path.display().to_string(),
                format!(
                    "label is {}x{}, image is {}x{}",
                    lbl.width, lbl.height, img.width, img.height
                ),
            ));
        }
        if *dims.get_or_insert((img.width, img.height)) != (img.width, img.height) {
            return Err(Error::format(
                img_path.display().to_string(),
                "image size differs from the rest of the directory",
            ));
        }
        let raw = Tensor::from_vec(&[1, 1, img.height, img.width], img.normalized())?;
        let image = preprocess(&raw).map_err(|e| {
            Error::format(img_path.display().to_string(), e.to_string())
        })?;
        let labels = LabelMap::new(
            lbl.height,
            lbl.width,
            lbl.data.iter().map(|&v| v as u32).collect(),
        )?;
        let objects = objects_from_labels(&labels);
        samples.push(SegmentationSample {
            image,
            labels,
            objects,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synth, SynthConfig};

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_dir(dir.path()).is_err());
    }

    #[test]
    fn unpaired_files_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = pgm::PgmImage::new(2, 2, 255, vec![0, 1, 2, 3]).unwrap();
        pgm::write(dir.path().join("img_a.pgm"), &img).unwrap();
        let err = load_image_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("img_a.pgm"), "{err}");

        pgm::write(dir.path().join("lbl_a.pgm"), &img).unwrap();
        pgm::write(dir.path().join("lbl_b.pgm"), &img).unwrap();
        let err = load_image_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("lbl_b.pgm"), "{err}");
    }

    #[test]
    fn mis_sized_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = pgm::PgmImage::new(2, 2, 255, vec![0, 1, 2, 3]).unwrap();
        let lbl = pgm::PgmImage::new(3, 2, 255, vec![0; 6]).unwrap();
        pgm::write(dir.path().join("img_a.pgm"), &img).unwrap();
        pgm::write(dir.path().join("lbl_a.pgm"), &lbl).unwrap();
        let err = load_image_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("lbl_a.pgm"), "{err}");
    }

    #[test]
    fn synthetic_pair_round_trips() {
        let cfg = SynthConfig {
            num_train: 2,
            num_test: 0,
            ..SynthConfig::default()
        };
        let (train, _) = generate_synth(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in train.iter().enumerate() {
            save_sample_pair(dir.path(), &format!("{i:04}"), s).unwrap();
        }
        let loaded = load_image_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in train.iter().zip(&loaded) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.objects.len(), b.objects.len());
            // 16-bit quantization of a unit-variance image.
            assert!(a.image.max_abs_diff(&b.image) < 1e-3);
        }
    }
}

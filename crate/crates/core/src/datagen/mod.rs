//! Synthetic expressive faces with known intensity, folder ingestion for real
//! pre-aligned images, and the dataset utilities shared by training and the
//! applications.

mod ingest;
pub mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprcode::ExpressionLabel;
use crate::seed::rng_for;

pub use ingest::{ingest_folder, load_image_file};
pub use render::{
    measure_mouth, mouth_box, primary_attribute, render_face, FaceGeometry, MouthMeasurement, SyntheticFaceParams,
    CLASS_NAMES,
};

/// Square RGB image with pixels in [-1, 1], stored HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Vec<f32>,
    pub resolution: usize,
    pub label: ExpressionLabel,
    pub identity_id: usize,
    /// Ground-truth intensity, when known.
    pub intensity: Option<f32>,
}

impl LabeledImage {
    pub fn class(&self) -> usize {
        self.label.class()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.resolution * self.resolution * 3 {
            return Err(Error::Shape(format!(
                "{} pixel values for a {r}x{r}x3 image",
                self.pixels.len(),
                r = self.resolution
            )));
        }
        if let Some(i) = self.pixels.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::validation(format!("pixel[{i}]"), format!("{} outside [-1, 1]", self.pixels[i])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub images_per_identity_per_class: usize,
    pub classes: usize,
    pub resolution: usize,
    pub intensity: IntensityRange,
    pub seed: u64,
}

impl DatasetSpec {
    /// 20 identities x 3 classes x 30 images at 64x64.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_identities: 20,
            images_per_identity_per_class: 30,
            classes: 3,
            resolution: 64,
            intensity: IntensityRange { min: 0.3, max: 1.0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_identities", self.n_identities),
            ("images_per_identity_per_class", self.images_per_identity_per_class),
            ("classes", self.classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if self.classes < 2 || self.classes > CLASS_NAMES.len() {
            return Err(Error::validation("classes", format!("synthetic data supports 2..={}", CLASS_NAMES.len())));
        }
        if self.resolution < 32 || self.resolution % 32 != 0 {
            return Err(Error::validation("resolution", format!("{} is not a multiple of 32", self.resolution)));
        }
        let IntensityRange { min, max } = self.intensity;
        if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) || min > max {
            return Err(Error::validation("intensity", format!("[{min}, {max}] is not a sub-range of [0, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_identities * self.classes * self.images_per_identity_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape factors of identity `id` under `seed`.
pub fn identity_geometry(seed: u64, id: usize) -> FaceGeometry {
    let mut rng = rng_for(seed, &["identity", &id.to_string()]);
    FaceGeometry {
        head_aspect: rng.random(),
        eye_spacing: rng.random(),
        eye_size: rng.random(),
        brow_height: rng.random(),
        hue: rng.random(),
    }
}

/// Render every image of the dataset, ordered by identity, class, index.
pub fn sample_dataset(spec: &DatasetSpec) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.len());
    for id in 0..spec.n_identities {
        let geometry = identity_geometry(spec.seed, id);
        for class in 0..spec.classes {
            let mut rng = rng_for(spec.seed, &["intensity", &id.to_string(), &class.to_string()]);
            for _ in 0..spec.images_per_identity_per_class {
                let intensity = if spec.intensity.max > spec.intensity.min {
                    rng.random_range(spec.intensity.min..=spec.intensity.max)
                } else {
                    spec.intensity.min
                };
                let params = SyntheticFaceParams {
                    identity_id: id,
                    geometry,
                    expr_class: class,
                    classes: spec.classes,
                    intensity,
                };
                out.push(render_face(&params, spec.resolution)?);
            }
        }
    }
    Ok(out)
}

pub fn flip_horizontal(image: &LabeledImage) -> LabeledImage {
    let r = image.resolution;
    let mut pixels = vec![0.0; image.pixels.len()];
    for y in 0..r {
        for x in 0..r {
            let src = (y * r + x) * 3;
            let dst = (y * r + (r - 1 - x)) * 3;
            pixels[dst..dst + 3].copy_from_slice(&image.pixels[src..src + 3]);
        }
    }
    LabeledImage {
        pixels,
        ..image.clone()
    }
}

/// Mirror with probability one half.
pub fn augment_flip<R: Rng>(image: &LabeledImage, rng: &mut R) -> LabeledImage {
    if rng.random_bool(0.5) {
        flip_horizontal(image)
    } else {
        image.clone()
    }
}

/// Partition by identity; returns `(train, test)`.
pub fn split_by_identity(
    dataset: &[LabeledImage],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation("test_fraction", format!("{test_fraction} outside (0, 1)")));
    }
    let ids: Vec<usize> = dataset
        .iter()
        .map(|im| im.identity_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(Error::TooFewIdentities {
            needed: 2,
            found: ids.len(),
        });
    }
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut shuffled = ids;
    shuffled.shuffle(&mut rng_for(seed, &["split"]));
    let test_ids: BTreeSet<usize> = shuffled[..n_test].iter().copied().collect();
    let (test, train) = dataset.iter().cloned().partition(|im| test_ids.contains(&im.identity_id));
    Ok((train, test))
}

pub fn identities(dataset: &[LabeledImage]) -> BTreeSet<usize> {
    dataset.iter().map(|im| im.identity_id).collect()
}

/// Stack images into a `(batch, H, W, 3)` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut batch = 0;
    let mut res = None;
    for im in images {
        if *res.get_or_insert(im.resolution) != im.resolution {
            return Err(Error::Shape("mixed resolutions in one batch".into()));
        }
        data.extend_from_slice(&im.pixels);
        batch += 1;
    }
    let r = res.ok_or(Error::EmptyDataset)?;
    Ok(Tensor::from_vec(data, (batch, r, r, 3), &Device::Cpu)?)
}

/// Rows of a batch tensor back to flat HWC pixel vectors.
pub fn unstack_images(batch: &Tensor) -> Result<Vec<Vec<f32>>> {
    let (b, _, _, _) = batch.dims4()?;
    (0..b)
        .map(|i| Ok(batch.get(i)?.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1()?))
        .collect()
}

pub fn one_hot_matrix(classes: &[usize], k: usize) -> Result<Tensor> {
    let mut v = vec![0f32; classes.len() * k];
    for (i, c) in classes.iter().enumerate() {
        if *c >= k {
            return Err(Error::OutOfRange {
                what: "class",
                index: *c,
                len: k,
            });
        }
        v[i * k + c] = 1.0;
    }
    Ok(Tensor::from_vec(v, (classes.len(), k), &Device::Cpu)?)
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub class: usize,
    pub identity: usize,
    pub intensity: Option<f32>,
    pub seed: Option<u64>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn to_rgb8(pixels: &[f32], resolution: usize) -> image::RgbImage {
    let bytes = pixels
        .iter()
        .map(|v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8)
        .collect();
    image::RgbImage::from_raw(resolution as u32, resolution as u32, bytes).expect("buffer matches dimensions")
}

/// Write images as PNG files under `dir/images/` plus a line-delimited
/// manifest. Returns the manifest path.
pub fn write_dataset(dir: &Path, images: &[LabeledImage], seed: Option<u64>) -> Result<PathBuf> {
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = fs::File::create(&manifest_path)?;
    for (i, im) in images.iter().enumerate() {
        let rel = format!("images/{i:06}_id{}_c{}.png", im.identity_id, im.class());
        to_rgb8(&im.pixels, im.resolution).save(dir.join(&rel))?;
        let record = ManifestRecord {
            path: rel,
            class: im.class(),
            identity: im.identity_id,
            intensity: im.intensity,
            seed,
        };
        writeln!(manifest, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(manifest_path)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(dir.join(MANIFEST_FILE))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Load a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path, classes: usize) -> Result<Vec<LabeledImage>> {
    let records = read_manifest(dir)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    records
        .iter()
        .map(|r| {
            let (pixels, resolution) = load_image_file(&dir.join(&r.path), None)?;
            Ok(LabeledImage {
                pixels,
                resolution,
                label: ExpressionLabel::new(r.class, classes)?,
                identity_id: r.identity,
                intensity: r.intensity,
            })
        })
        .collect()
}

/// Count of images per (identity, class) cell.
pub fn cell_counts(dataset: &[LabeledImage]) -> BTreeMap<(usize, usize), usize> {
    let mut counts = BTreeMap::new();
    for im in dataset {
        *counts.entry((im.identity_id, im.class())).or_insert(0) += 1;
    }
    counts
}

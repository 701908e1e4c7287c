//! Experiments on a trained bundle: expression editing, intensity sweeps,
//! expression transfer, conditional generation for data augmentation, and
//! code-space retrieval and feature export.

mod grid;
pub mod stats;

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{one_hot_matrix, stack_images, unstack_images, LabeledImage, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::exprcode::{
    edit_code_with_magnitude, make_code, neutral_code, sample_code, sample_uniform, sweep_code, ExpressionCode, ExpressionLabel,
};
use crate::networks::{ConvClassifier, ModelBundle};
use crate::seed::{derive_seed, rng_for};
use crate::trainer::{train_expression_classifier, ClassifierConfig, ClassifierReport};

pub use grid::{captions_path, GridCaptions, ImageGrid};
pub use stats::{spearman, LinearProbe, ProbeConfig};

const BATCH: usize = 64;

pub fn class_name(class: usize) -> String {
    CLASS_NAMES.get(class).map(|s| s.to_string()).unwrap_or_else(|| format!("class{class}"))
}

fn require_stage(bundle: &ModelBundle, stage: u8) -> Result<()> {
    if bundle.stage < stage {
        return Err(Error::Untrained(format!(
            "bundle has completed stage {}, this needs stage {stage}",
            bundle.stage
        )));
    }
    Ok(())
}

fn require_classifier(bundle: &ModelBundle) -> Result<()> {
    if !bundle.classifier_trained {
        return Err(Error::Untrained("expression classifier has not been trained".into()));
    }
    Ok(())
}

fn dtype(bundle: &ModelBundle) -> DType {
    bundle.store(crate::networks::Subnet::Decoder).dtype()
}

fn images_tensor<'a>(bundle: &ModelBundle, images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Tensor> {
    Ok(stack_images(images)?.to_dtype(dtype(bundle))?)
}

fn codes_tensor(bundle: &ModelBundle, codes: &[ExpressionCode]) -> Result<Tensor> {
    let len = bundle.spec.layout.len();
    let flat: Vec<f32> = codes.iter().flat_map(|c| c.values().iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (codes.len(), len), &Device::Cpu)?.to_dtype(dtype(bundle))?)
}

fn rows_f32(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2()?)
}

/// `g(x)` for each image.
pub fn identity_codes(bundle: &ModelBundle, images: &[LabeledImage]) -> Result<Vec<Vec<f32>>> {
    bundle.set_eval();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        out.extend(rows_f32(&bundle.encode(&images_tensor(bundle, chunk)?)?)?);
    }
    Ok(out)
}

/// Decode identity codes paired with expression codes into images.
pub fn decode_pairs(bundle: &ModelBundle, ids: &[Vec<f32>], codes: &[ExpressionCode]) -> Result<Vec<Vec<f32>>> {
    if ids.len() != codes.len() {
        return Err(Error::Shape(format!("{} identity codes for {} expression codes", ids.len(), codes.len())));
    }
    bundle.set_eval();
    let mut out = Vec::with_capacity(ids.len());
    for (g_chunk, c_chunk) in ids.chunks(BATCH).zip(codes.chunks(BATCH)) {
        let g: Vec<f32> = g_chunk.iter().flatten().copied().collect();
        let g = Tensor::from_vec(g, (g_chunk.len(), bundle.spec.id_dim), &Device::Cpu)?.to_dtype(dtype(bundle))?;
        let x = bundle.decode(&g, &codes_tensor(bundle, c_chunk)?)?;
        out.extend(unstack_images(&x)?);
    }
    Ok(out)
}

/// Predicted expression class of each image.
pub fn classify_expression(bundle: &ModelBundle, images: &[LabeledImage]) -> Result<Vec<usize>> {
    require_classifier(bundle)?;
    classify_with(&bundle.classifier, images)
}

pub fn classify_with(net: &ConvClassifier, images: &[LabeledImage]) -> Result<Vec<usize>> {
    net.store().set_trainable(false);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        let x = stack_images(chunk)?.to_dtype(net.store().dtype())?;
        let p: Vec<u32> = net.logits(&x)?.argmax(candle_core::D::Minus1)?.to_vec1()?;
        out.extend(p.into_iter().map(|v| v as usize));
    }
    Ok(out)
}

/// Expression codes recovered through Q for images of the given classes.
/// Q's active-block prediction is clamped to [0, 1] and the inactive blocks
/// are its negation.
pub fn infer_codes(bundle: &ModelBundle, images: &[LabeledImage], classes: &[usize]) -> Result<Vec<ExpressionCode>> {
    if images.len() != classes.len() {
        return Err(Error::Shape(format!("{} images for {} classes", images.len(), classes.len())));
    }
    bundle.set_eval();
    let layout = bundle.spec.layout;
    let mut out = Vec::with_capacity(images.len());
    for (chunk, cls) in images.chunks(BATCH).zip(classes.chunks(BATCH)) {
        let x = images_tensor(bundle, chunk)?;
        let labels = one_hot_matrix(cls, layout.classes)?.to_dtype(dtype(bundle))?;
        let features = bundle.image_disc.forward(&x, &labels)?.features;
        let mu = rows_f32(&bundle.q.predict(&features, cls)?)?;
        for (row, class) in mu.into_iter().zip(cls) {
            let z: Vec<f32> = row.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
            out.push(make_code(ExpressionLabel::new(*class, layout.classes)?, &z, layout)?);
        }
    }
    Ok(out)
}

fn labeled(pixels: Vec<f32>, resolution: usize, label: ExpressionLabel, identity_id: usize) -> LabeledImage {
    LabeledImage {
        pixels,
        resolution,
        label,
        identity_id,
        intensity: None,
    }
}

/// `decode(encode(x), infer_codes(x, label of x))`.
pub fn reconstruct(bundle: &ModelBundle, images: &[LabeledImage]) -> Result<Vec<LabeledImage>> {
    require_stage(bundle, 2)?;
    let classes: Vec<usize> = images.iter().map(|im| im.class()).collect();
    let codes = infer_codes(bundle, images, &classes)?;
    let out = decode_pairs(bundle, &identity_codes(bundle, images)?, &codes)?;
    Ok(out
        .into_iter()
        .zip(images)
        .map(|(p, im)| labeled(p, im.resolution, im.label, im.identity_id))
        .collect())
}

/// Row 0 is the input; row `1 + i` is the input edited to class `i`.
pub fn edit_expression(bundle: &ModelBundle, x: &LabeledImage) -> Result<ImageGrid> {
    edit_expression_with_magnitude(bundle, x, 1.0)
}

/// [`edit_expression`] with the active block set to `magnitude` instead of 1.
pub fn edit_expression_with_magnitude(bundle: &ModelBundle, x: &LabeledImage, magnitude: f32) -> Result<ImageGrid> {
    require_stage(bundle, 2)?;
    let layout = bundle.spec.layout;
    let g = identity_codes(bundle, std::slice::from_ref(x))?.remove(0);
    let codes = (0..layout.classes)
        .map(|k| edit_code_with_magnitude(k, layout, magnitude))
        .collect::<Result<Vec<_>>>()?;
    let edited = decode_pairs(bundle, &vec![g; codes.len()], &codes)?;
    let mut cells = vec![x.pixels.clone()];
    cells.extend(edited);
    let mut rows = vec!["input".to_string()];
    rows.extend((0..layout.classes).map(class_name));
    ImageGrid::new(layout.classes + 1, 1, x.resolution, cells, rows, vec![format!("identity {}", x.identity_id)])
}

/// Columns `0..d` decode with `sweep_code(target, m)`; the last column uses
/// the neutral code.
pub fn intensity_sweep(bundle: &ModelBundle, x: &LabeledImage, target: usize) -> Result<ImageGrid> {
    require_stage(bundle, 2)?;
    let layout = bundle.spec.layout;
    let g = identity_codes(bundle, std::slice::from_ref(x))?.remove(0);
    let mut codes = (0..layout.block)
        .map(|m| sweep_code(target, m, layout))
        .collect::<Result<Vec<_>>>()?;
    codes.push(neutral_code(layout));
    let cells = decode_pairs(bundle, &vec![g; codes.len()], &codes)?;
    let mut cols: Vec<String> = (1..=layout.block).map(|m| format!("level {m}")).collect();
    cols.push("neutral".into());
    ImageGrid::new(1, layout.block + 1, x.resolution, cells, vec![class_name(target)], cols)
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub image: LabeledImage,
    pub code: ExpressionCode,
    pub predicted_class: usize,
}

/// Render `x_a`'s identity with the expression of `x_b`.
pub fn transfer_expression(bundle: &ModelBundle, x_a: &LabeledImage, x_b: &LabeledImage) -> Result<Transfer> {
    transfer_batch(bundle, std::slice::from_ref(x_a), std::slice::from_ref(x_b)).map(|mut v| v.remove(0))
}

pub fn transfer_batch(bundle: &ModelBundle, sources: &[LabeledImage], targets: &[LabeledImage]) -> Result<Vec<Transfer>> {
    require_stage(bundle, 2)?;
    require_classifier(bundle)?;
    if sources.len() != targets.len() {
        return Err(Error::Shape(format!("{} sources for {} targets", sources.len(), targets.len())));
    }
    let classes = classify_expression(bundle, targets)?;
    let codes = infer_codes(bundle, targets, &classes)?;
    let images = decode_pairs(bundle, &identity_codes(bundle, sources)?, &codes)?;
    let layout = bundle.spec.layout;
    images
        .into_iter()
        .zip(codes)
        .zip(classes)
        .zip(sources)
        .map(|(((pixels, code), class), src)| {
            Ok(Transfer {
                image: labeled(pixels, src.resolution, ExpressionLabel::new(class, layout.classes)?, src.identity_id),
                code,
                predicted_class: class,
            })
        })
        .collect()
}

/// `n` images of class `label` from uniform identity noise and sampled codes.
pub fn generate_random<R: Rng>(bundle: &ModelBundle, label: ExpressionLabel, n: usize, rng: &mut R) -> Result<Vec<LabeledImage>> {
    require_stage(bundle, 1)?;
    let layout = bundle.spec.layout;
    let mut ids = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(sample_uniform(rng, bundle.spec.id_dim));
        codes.push(sample_code(label, layout, rng)?);
    }
    Ok(decode_pairs(bundle, &ids, &codes)?
        .into_iter()
        .map(|p| labeled(p, bundle.spec.resolution, label, usize::MAX))
        .collect())
}

/// Balanced synthetic set: `count` images spread over the classes.
pub fn generate_balanced(bundle: &ModelBundle, count: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let k = bundle.spec.layout.classes;
    let mut out = Vec::with_capacity(count);
    for class in 0..k {
        let n = count / k + usize::from(class < count % k);
        let mut rng = rng_for(seed, &["generate", &class.to_string()]);
        out.extend(generate_random(bundle, ExpressionLabel::new(class, k)?, n, &mut rng)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRow {
    pub synthetic_images: usize,
    pub real_images: usize,
    pub test_images: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationTable {
    pub checkpoint_id: String,
    pub rows: Vec<AugmentationRow>,
}

impl AugmentationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["checkpoint_id", "synthetic_images", "real_images", "test_images", "accuracy"])?;
        for r in &self.rows {
            w.write_record([
                self.checkpoint_id.clone(),
                r.synthetic_images.to_string(),
                r.real_images.to_string(),
                r.test_images.to_string(),
                format!("{:.6}", r.accuracy),
            ])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Serde(e.to_string()))?).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Train a fresh expression classifier per synthetic count and measure it on
/// the untouched real test split.
pub fn augmentation_experiment(
    bundle: &ModelBundle,
    train: &[LabeledImage],
    test: &[LabeledImage],
    counts: &[usize],
    config: &ClassifierConfig,
    seed: u64,
    checkpoint_id: &str,
) -> Result<(AugmentationTable, Vec<ClassifierReport>)> {
    require_stage(bundle, 1)?;
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &count in counts {
        let synthetic = generate_balanced(bundle, count, derive_seed(seed, &["synthetic", &count.to_string()]))?;
        let net = ConvClassifier::new(
            &bundle.spec,
            bundle.spec.layout.classes,
            "cls",
            dtype(bundle),
            &mut rng_for(seed, &["classifier-init"]),
        )?;
        let report = train_expression_classifier(&net, train, &synthetic, test, config, derive_seed(seed, &["fit"]))?;
        rows.push(AugmentationRow {
            synthetic_images: count,
            real_images: train.len(),
            test_images: test.len(),
            accuracy: report.accuracy,
        });
        reports.push(report);
    }
    Ok((
        AugmentationTable {
            checkpoint_id: checkpoint_id.to_string(),
            rows,
        },
        reports,
    ))
}

/// Embedding space used for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Expression code inferred through the classifier and Q.
    Code,
    /// One-hot label.
    Label,
    /// Flattened pixels.
    Pixel,
}

impl Space {
    pub fn tag(&self) -> &'static str {
        match self {
            Space::Code => "c",
            Space::Label => "y",
            Space::Pixel => "x",
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(Space::Code),
            "y" => Ok(Space::Label),
            "x" => Ok(Space::Pixel),
            other => Err(Error::Config(format!("unknown space {other:?} (expected c, y or x)"))),
        }
    }
}

/// Embed images; `bundle` is needed for the code space only.
pub fn embed(bundle: Option<&ModelBundle>, images: &[LabeledImage], space: Space) -> Result<Vec<Vec<f64>>> {
    match space {
        Space::Pixel => Ok(images.iter().map(|im| im.pixels.iter().map(|v| *v as f64).collect()).collect()),
        Space::Label => Ok(images
            .iter()
            .map(|im| im.label.one_hot().into_iter().map(|v| v as f64).collect())
            .collect()),
        Space::Code => {
            let bundle = bundle.ok_or_else(|| Error::Untrained("code space needs a trained bundle".into()))?;
            let classes = classify_expression(bundle, images)?;
            Ok(infer_codes(bundle, images, &classes)?
                .into_iter()
                .map(|c| c.values().iter().map(|v| *v as f64).collect())
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: usize,
    /// Gallery indices with Euclidean distances, nearest first.
    pub ranked: Vec<(usize, f64)>,
    pub space: Space,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The `k` nearest gallery entries to `query`, ties broken by index.
pub fn rank_embeddings(query_index: usize, query: &[f64], gallery: &[Vec<f64>], k: usize, space: Space, allowed: impl Fn(usize) -> bool) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ranked: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(i, g)| (i, distance(query, g)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(RetrievalResult {
        query: query_index,
        ranked,
        space,
    })
}

pub fn retrieve(
    bundle: Option<&ModelBundle>,
    query: &LabeledImage,
    gallery: &[LabeledImage],
    space: Space,
    k: usize,
) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = embed(bundle, std::slice::from_ref(query), space)?.remove(0);
    let g = embed(bundle, gallery, space)?;
    rank_embeddings(0, &q, &g, k, space, |_| true)
}

/// Top-1 same-class rate of leave-identity-out retrieval within `images`:
/// each query is matched against images of other identities only.
pub fn retrieval_accuracy(bundle: Option<&ModelBundle>, images: &[LabeledImage], space: Space) -> Result<f64> {
    let emb = embed(bundle, images, space)?;
    let mut hits = 0usize;
    let mut queries = 0usize;
    for (i, q) in emb.iter().enumerate() {
        let id = images[i].identity_id;
        let r = rank_embeddings(i, q, &emb, 1, space, |j| images[j].identity_id != id)?;
        if let Some((j, _)) = r.ranked.first() {
            queries += 1;
            hits += usize::from(images[*j].class() == images[i].class());
        }
    }
    if queries == 0 {
        return Err(Error::TooFewIdentities { needed: 2, found: 1 });
    }
    Ok(hits as f64 / queries as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub identity_id: usize,
    pub class: usize,
    pub identity_code: Vec<f32>,
    pub expression_code: Vec<f32>,
}

/// `g(x)` and the inferred expression code of every image.
pub fn export_features(bundle: &ModelBundle, images: &[LabeledImage]) -> Result<Vec<FeatureRecord>> {
    require_stage(bundle, 2)?;
    let g = identity_codes(bundle, images)?;
    let classes = classify_expression(bundle, images)?;
    let codes = infer_codes(bundle, images, &classes)?;
    Ok(images
        .iter()
        .zip(g)
        .zip(codes)
        .map(|((im, g), c)| FeatureRecord {
            identity_id: im.identity_id,
            class: im.class(),
            identity_code: g,
            expression_code: c.values().to_vec(),
        })
        .collect())
}

/// Comma-separated export with a header row; floats are written with enough
/// digits to round-trip.
pub fn write_features_csv(path: &Path, records: &[FeatureRecord], checkpoint_id: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let (nz, nc) = records
        .first()
        .map(|r| (r.identity_code.len(), r.expression_code.len()))
        .unwrap_or((0, 0));
    let mut header = vec!["checkpoint_id".to_string(), "identity_id".into(), "class".into()];
    header.extend((0..nz).map(|i| format!("g{i}")));
    header.extend((0..nc).map(|i| format!("c{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![checkpoint_id.to_string(), r.identity_id.to_string(), r.class.to_string()];
        row.extend(r.identity_code.iter().map(|v| format!("{v:?}")));
        row.extend(r.expression_code.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mouth-probe reading for synthetic images: the renderer's primary
/// attribute estimate for `class` from pixels alone.
pub fn measured_attribute(image: &[f32], resolution: usize, geometry: &crate::datagen::FaceGeometry, class: usize) -> f64 {
    let m = crate::datagen::measure_mouth(image, resolution, geometry);
    crate::datagen::primary_attribute(class, m.curvature, m.openness)
}

/// Spearman correlation between sweep level and the measured attribute of
/// the `d` sweep columns of a grid.
pub fn sweep_rank_correlation(grid: &ImageGrid, geometry: &crate::datagen::FaceGeometry, class: usize) -> Result<f64> {
    let d = grid.cols() - 1;
    let levels: Vec<f64> = (0..d).map(|m| m as f64).collect();
    let measured: Vec<f64> = (0..d)
        .map(|m| measured_attribute(grid.cell(0, m), grid.resolution(), geometry, class))
        .collect();
    spearman(&levels, &measured)
}

#[cfg(test)]
mod tests;

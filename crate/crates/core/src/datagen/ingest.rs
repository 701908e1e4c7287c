use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::exprcode::ExpressionLabel;

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Decode an image, center-crop it to a square, optionally resize, and map
/// 8-bit values linearly onto [-1, 1]. Returns HWC pixels and the side length.
pub fn load_image_file(path: &Path, resolution: Option<usize>) -> Result<(Vec<f32>, usize)> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let target = resolution.map(|r| r as u32).unwrap_or(side);
    let square = if target == side {
        cropped
    } else {
        image::imageops::resize(&cropped, target, target, FilterType::Triangle)
    };
    let pixels = square.as_raw().iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
    Ok((pixels, target as usize))
}

/// Read `<root>/<class>/<identity>/<image>`. Identity directory names are
/// numbered in sorted order across all classes.
pub fn ingest_folder(root: &Path, class_map: &BTreeMap<String, usize>, resolution: usize) -> Result<Vec<LabeledImage>> {
    if resolution == 0 {
        return Err(Error::validation("resolution", "must be positive"));
    }
    let classes = class_map.values().max().map(|m| m + 1).ok_or(Error::EmptyDataset)?;
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let unknown: Vec<String> = class_dirs
        .iter()
        .map(|p| file_name(p))
        .filter(|n| !class_map.contains_key(n))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownClass(unknown));
    }

    let mut files = Vec::new();
    let mut identity_names = BTreeMap::new();
    for class_dir in &class_dirs {
        let class = class_map[&file_name(class_dir)];
        for id_dir in sorted_entries(class_dir)?.into_iter().filter(|p| p.is_dir()) {
            let id_name = file_name(&id_dir);
            identity_names.insert(id_name.clone(), 0usize);
            for f in sorted_entries(&id_dir)?.into_iter().filter(|p| p.is_file()) {
                files.push((class, id_name.clone(), f));
            }
        }
    }
    for (i, v) in identity_names.values_mut().enumerate() {
        *v = i;
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    files
        .into_iter()
        .map(|(class, id_name, path)| {
            let (pixels, resolution) = load_image_file(&path, Some(resolution))?;
            Ok(LabeledImage {
                pixels,
                resolution,
                label: ExpressionLabel::new(class, classes)?,
                identity_id: identity_names[&id_name],
                intensity: None,
            })
        })
        .collect()
}

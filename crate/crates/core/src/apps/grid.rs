use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::to_rgb8;
use crate::error::{Error, Result};

/// Images laid out in rows and columns with captions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    resolution: usize,
    /// Row-major HWC pixel arrays.
    cells: Vec<Vec<f32>>,
    row_captions: Vec<String>,
    col_captions: Vec<String>,
}

/// Sidecar describing a written grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCaptions {
    pub image: String,
    pub rows: usize,
    pub cols: usize,
    pub resolution: usize,
    pub row_captions: Vec<String>,
    pub col_captions: Vec<String>,
    pub checkpoint_id: String,
}

impl ImageGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        resolution: usize,
        cells: Vec<Vec<f32>>,
        row_captions: Vec<String>,
        col_captions: Vec<String>,
    ) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Shape(format!("{} cells for a {rows}x{cols} grid", cells.len())));
        }
        if row_captions.len() != rows || col_captions.len() != cols {
            return Err(Error::Shape(format!(
                "{} row / {} column captions for a {rows}x{cols} grid",
                row_captions.len(),
                col_captions.len()
            )));
        }
        if let Some(i) = cells.iter().position(|c| c.len() != resolution * resolution * 3) {
            return Err(Error::Shape(format!("cell {i} is not {resolution}x{resolution}x3")));
        }
        Ok(Self {
            rows,
            cols,
            resolution,
            cells,
            row_captions,
            col_captions,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        &self.cells[row * self.cols + col]
    }

    pub fn row_captions(&self) -> &[String] {
        &self.row_captions
    }

    pub fn col_captions(&self) -> &[String] {
        &self.col_captions
    }

    /// One composite RGB raster.
    pub fn composite(&self) -> image::RgbImage {
        let r = self.resolution as u32;
        let mut out = image::RgbImage::new(r * self.cols as u32, r * self.rows as u32);
        for row in 0..self.rows {
            for col in 0..self.cols {
                let tile = to_rgb8(self.cell(row, col), self.resolution);
                image::imageops::replace(&mut out, &tile, (col as u32 * r) as i64, (row as u32 * r) as i64);
            }
        }
        out
    }

    /// Write `path` (PNG) and `path` with a `.captions.json` suffix. Returns
    /// the sidecar path.
    pub fn write(&self, path: &Path, checkpoint_id: &str) -> Result<PathBuf> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.composite().save(path)?;
        let sidecar = captions_path(path);
        let captions = GridCaptions {
            image: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            rows: self.rows,
            cols: self.cols,
            resolution: self.resolution,
            row_captions: self.row_captions.clone(),
            col_captions: self.col_captions.clone(),
            checkpoint_id: checkpoint_id.to_string(),
        };
        fs::write(&sidecar, serde_json::to_string_pretty(&captions)?)?;
        Ok(sidecar)
    }
}

pub fn captions_path(image_path: &Path) -> PathBuf {
    let mut name = image_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".captions.json");
    image_path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(v: f32) -> Vec<f32> {
        vec![v; 2 * 2 * 3]
    }

    #[test]
    fn dimensions_are_checked() {
        let caps = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        assert!(ImageGrid::new(1, 2, 2, vec![cell(0.0)], caps(1), caps(2)).is_err());
        assert!(ImageGrid::new(1, 1, 2, vec![cell(0.0)], caps(2), caps(1)).is_err());
        assert!(ImageGrid::new(1, 1, 2, vec![vec![0.0; 3]], caps(1), caps(1)).is_err());
        assert!(ImageGrid::new(1, 2, 2, vec![cell(0.0), cell(1.0)], caps(1), caps(2)).is_ok());
    }

    #[test]
    fn composite_tiles_cells() {
        let g = ImageGrid::new(
            2,
            1,
            2,
            vec![cell(-1.0), cell(1.0)],
            vec!["a".into(), "b".into()],
            vec!["x".into()],
        )
        .unwrap();
        let img = g.composite();
        assert_eq!(img.dimensions(), (2, 4));
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(1, 3).0, [255, 255, 255]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let side = g.write(&path, "abc").unwrap();
        let caps: GridCaptions = serde_json::from_str(&fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(caps.rows, 2);
        assert_eq!(caps.checkpoint_id, "abc");
        assert!(path.exists());
    }
}

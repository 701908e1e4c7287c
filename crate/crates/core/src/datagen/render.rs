//! Vector-drawn parametric faces.
//!
//! Coordinates are in the unit square, `y` pointing down. The mouth is a
//! thick curve whose centre line is
//! `y(x) = y_mid + bend * (w/2 - (x - x_c)^2 / w)`, so `bend > 0` lifts the
//! corners (smile) and `bend < 0` drops them (frown); an opening of height
//! `open * sqrt(1 - u^2)` splits the lips. Brows are thick bars that can be
//! raised or tilted. Expression features are painted only inside fixed
//! pixel-aligned boxes that depend on identity geometry alone, so two faces
//! that differ only in expression agree on every pixel outside those boxes.

use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::exprcode::ExpressionLabel;

/// Supersampling factor per axis.
pub const SUPERSAMPLE: usize = 4;

/// Class names of the synthetic dataset, in label order.
pub const CLASS_NAMES: [&str; 6] = ["smile", "frown", "surprise", "angry", "grin", "fear"];

const MOUTH_CENTER: (f64, f64) = (0.5, 0.70);
const MOUTH_HALF_WIDTH: f64 = 0.13;
const LIP_THICKNESS: f64 = 0.028;
const MAX_BEND: f64 = 0.9;
const MAX_OPEN: f64 = 0.11;
const EYE_Y: f64 = 0.43;
const BROW_HALF_LEN: f64 = 0.065;
const BROW_THICKNESS: f64 = 0.024;
const MAX_BROW_SHIFT: f64 = 0.05;
const MAX_BROW_TILT: f64 = 0.05;

const BACKGROUND: [f64; 3] = [0.18, 0.2, 0.24];
const EYE_COLOR: [f64; 3] = [0.08, 0.07, 0.1];
const BROW_COLOR: [f64; 3] = [0.22, 0.14, 0.08];
const LIP_COLOR: [f64; 3] = [0.55, 0.12, 0.14];
const MOUTH_INNER: [f64; 3] = [0.12, 0.02, 0.04];

/// Per-identity shape factors, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub head_aspect: f64,
    pub eye_spacing: f64,
    pub eye_size: f64,
    pub brow_height: f64,
    pub hue: f64,
}

impl FaceGeometry {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("geometry.head_aspect", self.head_aspect),
            ("geometry.eye_spacing", self.eye_spacing),
            ("geometry.eye_size", self.eye_size),
            ("geometry.brow_height", self.brow_height),
            ("geometry.hue", self.hue),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(name, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn head_radii(&self) -> (f64, f64) {
        (0.29 + 0.08 * self.head_aspect, 0.42)
    }

    fn eye_offset(&self) -> f64 {
        0.1 + 0.05 * self.eye_spacing
    }

    fn eye_radius(&self) -> f64 {
        0.03 + 0.02 * self.eye_size
    }

    fn brow_rest_y(&self) -> f64 {
        EYE_Y - self.eye_radius() - 0.05 - 0.035 * self.brow_height
    }

    fn skin(&self) -> [f64; 3] {
        // warm hue band, fixed saturation/value
        hsv_to_rgb(0.02 + 0.1 * self.hue, 0.45 + 0.2 * self.hue, 0.88)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Everything needed to draw one face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFaceParams {
    pub identity_id: usize,
    pub geometry: FaceGeometry,
    pub expr_class: usize,
    pub classes: usize,
    pub intensity: f64,
}

/// Drawing attributes of an expression at full intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ExpressionShape {
    bend: f64,
    open: f64,
    brow_shift: f64,
    brow_tilt: f64,
}

fn class_shape(class: usize) -> ExpressionShape {
    let s = |bend, open, brow_shift, brow_tilt| ExpressionShape {
        bend,
        open,
        brow_shift,
        brow_tilt,
    };
    match class {
        0 => s(MAX_BEND, 0.0, 0.0, 0.0),
        1 => s(-0.7 * MAX_BEND, 0.0, -0.6, 0.6),
        2 => s(0.0, MAX_OPEN, 1.0, 0.0),
        3 => s(-0.35 * MAX_BEND, 0.0, -0.8, 1.0),
        4 => s(0.6 * MAX_BEND, 0.5 * MAX_OPEN, 0.3, 0.0),
        _ => s(-0.25 * MAX_BEND, 0.6 * MAX_OPEN, 0.8, -0.8),
    }
}

/// Resolved drawing attributes at the given intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MouthBrowState {
    pub bend: f64,
    pub open: f64,
    pub brow_shift: f64,
    pub brow_tilt: f64,
}

impl SyntheticFaceParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.classes < 2 || self.classes > CLASS_NAMES.len() {
            return Err(Error::validation(
                "classes",
                format!("synthetic faces support 2..={} classes, got {}", CLASS_NAMES.len(), self.classes),
            ));
        }
        if self.expr_class >= self.classes {
            return Err(Error::validation(
                "expr_class",
                format!("{} outside 0..{}", self.expr_class, self.classes),
            ));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::validation("intensity", format!("{} outside [0, 1]", self.intensity)));
        }
        Ok(())
    }

    pub fn state(&self) -> MouthBrowState {
        let shape = class_shape(self.expr_class);
        let i = self.intensity;
        MouthBrowState {
            bend: shape.bend * i,
            open: shape.open * i,
            brow_shift: shape.brow_shift * MAX_BROW_SHIFT * i,
            brow_tilt: shape.brow_tilt * MAX_BROW_TILT * i,
        }
    }

    /// Mouth curvature as drawn: positive lifts the corners.
    pub fn mouth_curvature(&self) -> f64 {
        self.state().bend
    }
}

/// The class's defining mouth attribute, increasing in intensity: lifted
/// corners for smile/grin, dropped corners for frown/angry, opening for
/// surprise/fear.
pub fn primary_attribute(class: usize, bend: f64, open: f64) -> f64 {
    match class {
        0 | 4 => bend,
        1 | 3 => -bend,
        _ => open,
    }
}

/// Pixel-aligned rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    fn from_unit(x0: f64, y0: f64, x1: f64, y1: f64, res: usize) -> Self {
        let r = res as f64;
        let clamp = |v: f64| (v.max(0.0) as usize).min(res);
        PixelBox {
            x0: clamp((x0 * r).floor()),
            y0: clamp((y0 * r).floor()),
            x1: clamp((x1 * r).ceil()),
            y1: clamp((y1 * r).ceil()),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Regions that expression changes may touch, for a given geometry.
pub fn expression_regions(geometry: &FaceGeometry, res: usize) -> [PixelBox; 3] {
    let (mx, my) = MOUTH_CENTER;
    let reach = MAX_BEND * MOUTH_HALF_WIDTH / 2.0 + MAX_OPEN / 2.0 + LIP_THICKNESS + 0.02;
    let mouth = PixelBox::from_unit(
        mx - MOUTH_HALF_WIDTH - 0.03,
        my - reach,
        mx + MOUTH_HALF_WIDTH + 0.03,
        my + reach,
        res,
    );
    let brow_y = geometry.brow_rest_y();
    let dy = MAX_BROW_SHIFT + MAX_BROW_TILT + BROW_THICKNESS + 0.02;
    let ex = geometry.eye_offset();
    let brow = |cx: f64| {
        PixelBox::from_unit(
            cx - BROW_HALF_LEN - 0.02,
            brow_y - dy,
            cx + BROW_HALF_LEN + 0.02,
            brow_y + dy,
            res,
        )
    };
    [mouth, brow(0.5 - ex), brow(0.5 + ex)]
}

pub fn mouth_box(geometry: &FaceGeometry, res: usize) -> PixelBox {
    expression_regions(geometry, res)[0]
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

fn base_color(g: &FaceGeometry, x: f64, y: f64) -> [f64; 3] {
    let (rx, ry) = g.head_radii();
    if !in_ellipse(x, y, 0.5, 0.52, rx, ry) {
        return BACKGROUND;
    }
    let er = g.eye_radius();
    let ex = g.eye_offset();
    for cx in [0.5 - ex, 0.5 + ex] {
        if in_ellipse(x, y, cx, EYE_Y, er, er * 0.8) {
            return EYE_COLOR;
        }
    }
    g.skin()
}

fn mouth_color(s: &MouthBrowState, x: f64, y: f64) -> Option<[f64; 3]> {
    let (mx, my) = MOUTH_CENTER;
    let u = (x - mx) / MOUTH_HALF_WIDTH;
    if u.abs() > 1.0 {
        return None;
    }
    let w = MOUTH_HALF_WIDTH;
    let center = my + s.bend * (w / 2.0 - (x - mx) * (x - mx) / w);
    let half_open = 0.5 * s.open * (1.0 - u * u).sqrt();
    // lips taper towards the corners
    let half_lip = 0.5 * LIP_THICKNESS * (0.35 + 0.65 * (1.0 - u * u).sqrt());
    let d = (y - center).abs();
    if d < half_open {
        Some(MOUTH_INNER)
    } else if d <= half_open + half_lip {
        Some(LIP_COLOR)
    } else {
        None
    }
}

fn brow_color(g: &FaceGeometry, s: &MouthBrowState, x: f64, y: f64) -> Option<[f64; 3]> {
    let ex = g.eye_offset();
    for (cx, inner_dir) in [(0.5 - ex, 1.0), (0.5 + ex, -1.0)] {
        let t = (x - cx) / BROW_HALF_LEN;
        if t.abs() > 1.0 {
            continue;
        }
        // inner end (towards the nose) moves down by brow_tilt
        let along_inner = 0.5 * (1.0 + t * inner_dir);
        let center = g.brow_rest_y() - s.brow_shift + s.brow_tilt * (along_inner - 0.5);
        if (y - center).abs() <= BROW_THICKNESS / 2.0 {
            return Some(BROW_COLOR);
        }
    }
    None
}

/// Draw a face at `resolution x resolution` with pixels in [-1, 1].
pub fn render_face(params: &SyntheticFaceParams, resolution: usize) -> Result<LabeledImage> {
    params.validate()?;
    if resolution < 32 {
        return Err(Error::validation("resolution", format!("{resolution} is below 32")));
    }
    let g = &params.geometry;
    let state = params.state();
    let [mouth, brow_l, brow_r] = expression_regions(g, resolution);
    let n = SUPERSAMPLE;
    let inv = 1.0 / (resolution * n) as f64;
    let mut pixels = Vec::with_capacity(resolution * resolution * 3);
    for py in 0..resolution {
        for px in 0..resolution {
            let in_mouth = mouth.contains(px, py);
            let in_brow = brow_l.contains(px, py) || brow_r.contains(px, py);
            let mut acc = [0.0f64; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let x = ((px * n + sx) as f64 + 0.5) * inv;
                    let y = ((py * n + sy) as f64 + 0.5) * inv;
                    let mut c = base_color(g, x, y);
                    if in_brow {
                        if let Some(b) = brow_color(g, &state, x, y) {
                            c = b;
                        }
                    }
                    if in_mouth {
                        if let Some(m) = mouth_color(&state, x, y) {
                            c = m;
                        }
                    }
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            let scale = 1.0 / (n * n) as f64;
            for v in acc {
                pixels.push((v * scale * 2.0 - 1.0) as f32);
            }
        }
    }
    Ok(LabeledImage {
        pixels,
        resolution,
        label: ExpressionLabel::new(params.expr_class, params.classes)?,
        identity_id: params.identity_id,
        intensity: Some(params.intensity as f32),
    })
}

fn luminance(p: &[f32]) -> f64 {
    // pixels are in [-1, 1]
    let rgb: Vec<f64> = p.iter().map(|v| (*v as f64 + 1.0) / 2.0).collect();
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Mouth shape measured from pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MouthMeasurement {
    /// Estimated `bend` of the mouth centre line (positive lifts corners).
    pub curvature: f64,
    /// Estimated mean vertical extent of the dark mouth region, in unit
    /// coordinates, minus the neutral lip thickness.
    pub openness: f64,
}

/// Estimate mouth curvature and opening of an image whose face follows
/// `geometry`.
///
/// Darkness relative to the skin tone is computed per column inside the mouth
/// box; the darkness-weighted row centroids are fitted with a weighted
/// quadratic whose leading coefficient gives the bend.
pub fn measure_mouth(image: &[f32], resolution: usize, geometry: &FaceGeometry) -> MouthMeasurement {
    let mbox = mouth_box(geometry, resolution);
    let mut lums = Vec::new();
    for y in mbox.y0..mbox.y1 {
        for x in mbox.x0..mbox.x1 {
            lums.push(luminance(&image[(y * resolution + x) * 3..][..3]));
        }
    }
    lums.sort_by(|a, b| a.partial_cmp(b).expect("finite luminance"));
    let reference = lums[(lums.len() * 3) / 4];
    let r = resolution as f64;
    let (mx, _) = MOUTH_CENTER;
    // weighted least squares for y = a x^2 + b x + c, with x centred on mx
    let mut normal = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    let mut extent_sum = 0.0;
    let mut extent_cols = 0.0;
    for x in mbox.x0..mbox.x1 {
        let mut mass = 0.0;
        let mut moment = 0.0;
        for y in mbox.y0..mbox.y1 {
            let d = (reference - luminance(&image[(y * resolution + x) * 3..][..3]) - 0.05).max(0.0);
            mass += d;
            moment += d * (y as f64 + 0.5) / r;
        }
        if mass < 0.15 {
            continue;
        }
        let xc = (x as f64 + 0.5) / r - mx;
        if xc.abs() > MOUTH_HALF_WIDTH * 0.85 {
            continue;
        }
        let yc = moment / mass;
        let basis = [xc * xc, xc, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                normal[i][j] += mass * basis[i] * basis[j];
            }
            rhs[i] += mass * basis[i] * yc;
        }
        extent_sum += mass / r;
        extent_cols += 1.0;
    }
    let curvature = match solve3(normal, rhs) {
        Some([a, _, _]) => -a * MOUTH_HALF_WIDTH,
        None => 0.0,
    };
    let openness = if extent_cols > 0.0 {
        extent_sum / extent_cols
    } else {
        0.0
    };
    MouthMeasurement { curvature, openness }
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|i, j| m[*i][col].abs().partial_cmp(&m[*j][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-18 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..3 {
                    m[row][k] -= f * m[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some([b[0] / m[0][0], b[1] / m[1][1], b[2] / m[2][2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> FaceGeometry {
        FaceGeometry {
            head_aspect: 0.4,
            eye_spacing: 0.6,
            eye_size: 0.5,
            brow_height: 0.3,
            hue: 0.7,
        }
    }

    fn params(class: usize, intensity: f64) -> SyntheticFaceParams {
        SyntheticFaceParams {
            identity_id: 3,
            geometry: geometry(),
            expr_class: class,
            classes: 3,
            intensity,
        }
    }

    #[test]
    fn neutral_at_zero_intensity() {
        let a = render_face(&params(0, 0.0), 64).unwrap();
        let b = render_face(&params(1, 0.0), 64).unwrap();
        let c = render_face(&params(2, 0.0), 64).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.pixels, c.pixels);
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let a = render_face(&params(2, 0.7), 64).unwrap();
        let b = render_face(&params(2, 0.7), 64).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.pixels.len(), 64 * 64 * 3);
        assert!(a.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn expression_changes_stay_inside_regions() {
        let res = 64;
        let regions = expression_regions(&geometry(), res);
        let base = render_face(&params(0, 0.9), res).unwrap();
        for (class, intensity) in [(1, 1.0), (2, 0.35), (0, 0.0)] {
            let other = render_face(&params(class, intensity), res).unwrap();
            for y in 0..res {
                for x in 0..res {
                    if regions.iter().any(|r| r.contains(x, y)) {
                        continue;
                    }
                    let i = (y * res + x) * 3;
                    assert_eq!(base.pixels[i..i + 3], other.pixels[i..i + 3], "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn regions_do_not_overlap_and_fit_canvas() {
        for res in [32, 64, 128] {
            let [m, l, r] = expression_regions(&geometry(), res);
            for b in [m, l, r] {
                assert!(b.x0 < b.x1 && b.y0 < b.y1 && b.x1 <= res && b.y1 <= res);
            }
            assert!(l.y1 <= m.y0 && r.y1 <= m.y0);
        }
    }

    #[test]
    fn drawn_curvature_increases_with_intensity() {
        // the renderer's own formula at 0.2 and 0.8
        let low = params(0, 0.2).mouth_curvature();
        let high = params(0, 0.8).mouth_curvature();
        assert!((low - 0.2 * MAX_BEND).abs() < 1e-12);
        assert!((high - 0.8 * MAX_BEND).abs() < 1e-12);
        assert!(high > low);
        // and the pixel probe agrees
        let ml = measure_mouth(&render_face(&params(0, 0.2), 64).unwrap().pixels, 64, &geometry());
        let mh = measure_mouth(&render_face(&params(0, 0.8), 64).unwrap().pixels, 64, &geometry());
        assert!(mh.curvature > ml.curvature, "{ml:?} {mh:?}");
    }

    #[test]
    fn probe_is_monotone_on_a_grid_for_every_class() {
        for class in 0..3 {
            let mut last = f64::NEG_INFINITY;
            for step in 0..10 {
                let intensity = step as f64 / 9.0;
                let img = render_face(&params(class, intensity), 64).unwrap();
                let m = measure_mouth(&img.pixels, 64, &geometry());
                let v = primary_attribute(class, m.curvature, m.openness);
                assert!(v > last, "class {class} step {step}: {v} <= {last}");
                last = v;
            }
        }
    }

    #[test]
    fn probe_tracks_true_bend() {
        for intensity in [0.0, 0.5, 1.0] {
            let p = params(0, intensity);
            let m = measure_mouth(&render_face(&p, 128).unwrap().pixels, 128, &geometry());
            assert!((m.curvature - p.mouth_curvature()).abs() < 0.15, "{intensity}: {m:?}");
        }
    }

    #[test]
    fn validation_names_field() {
        let mut p = params(0, 0.5);
        p.geometry.hue = 1.5;
        match render_face(&p, 64) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "geometry.hue"),
            other => panic!("{other:?}"),
        }
        let p = params(0, 1.2);
        assert!(matches!(render_face(&p, 64), Err(Error::Validation { field, .. }) if field == "intensity"));
        assert!(render_face(&params(0, 0.5), 16).is_err());
    }
}

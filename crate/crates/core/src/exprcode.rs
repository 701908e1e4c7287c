//! Block-structured expression codes.
//!
//! A code has one `d`-element block per expression class. During training the
//! block of the present class holds `|z|` and every other block holds `-|z|`
//! for a shared noise vector `z ~ U(-1, 1)^d`. At test time blocks are set by
//! hand (`edit_code`, `sweep_code`, `neutral_code`). Serialized order is
//! block-major: block 0 elements, then block 1, and so on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeLayout {
    /// Number of expression classes (K).
    pub classes: usize,
    /// Elements per class block (d).
    pub block: usize,
}

impl CodeLayout {
    pub fn new(classes: usize, block: usize) -> Result<Self> {
        let layout = Self { classes, block };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Layout(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.block < 1 {
            return Err(Error::Layout("block length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes * self.block
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_range(&self, class: usize) -> std::ops::Range<usize> {
        class * self.block..(class + 1) * self.block
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::OutOfRange {
                what: "class",
                index: class,
                len: self.classes,
            });
        }
        Ok(())
    }
}

/// One-hot expression label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpressionLabel {
    class: usize,
    classes: usize,
}

impl ExpressionLabel {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::OutOfRange {
                what: "class",
                index: class,
                len: classes,
            });
        }
        Ok(Self { class, classes })
    }

    pub fn from_one_hot(y: &[f32]) -> Result<Self> {
        let ones: Vec<usize> = y.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        if ones.len() != 1 || zeros + 1 != y.len() {
            return Err(Error::validation("label", "must have exactly one entry equal to 1, rest 0"));
        }
        Self::new(ones[0], y.len())
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut y = vec![0.0; self.classes];
        y[self.class] = 1.0;
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionCode {
    values: Vec<f32>,
    layout: CodeLayout,
}

impl ExpressionCode {
    /// Wrap raw values; every element must lie in [-1, 1].
    pub fn from_values(values: Vec<f32>, layout: CodeLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "code has {} values, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::validation(
                format!("code[{i}]"),
                format!("{} outside [-1, 1]", values[i]),
            ));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn layout(&self) -> CodeLayout {
        self.layout
    }

    pub fn block(&self, class: usize) -> &[f32] {
        &self.values[self.layout.block_range(class)]
    }

    /// Class whose block has the largest mean; exact for training codes.
    pub fn dominant_class(&self) -> usize {
        let mut best = (0, f32::NEG_INFINITY);
        for k in 0..self.layout.classes {
            let mean = self.block(k).iter().sum::<f32>() / self.layout.block as f32;
            if mean > best.1 {
                best = (k, mean);
            }
        }
        best.0
    }

    /// Whether the code has the training-time structure for `label`: the
    /// present block nonnegative, the others its exact negation.
    pub fn has_training_structure(&self, label: ExpressionLabel) -> bool {
        let active = self.block(label.class());
        if active.iter().any(|v| *v < 0.0) {
            return false;
        }
        (0..self.layout.classes)
            .filter(|k| *k != label.class())
            .all(|k| self.block(k).iter().zip(active).all(|(a, b)| *a == -*b))
    }
}

/// Expression controller: block `i` is `|z|` if `y_i = 1`, else `-|z|`.
pub fn make_code(label: ExpressionLabel, z: &[f32], layout: CodeLayout) -> Result<ExpressionCode> {
    layout.validate()?;
    if label.classes() != layout.classes {
        return Err(Error::Layout(format!(
            "label has {} classes, layout has {}",
            label.classes(),
            layout.classes
        )));
    }
    if z.len() != layout.block {
        return Err(Error::Layout(format!("noise has length {}, block length is {}", z.len(), layout.block)));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::validation(format!("z[{i}]"), format!("{} outside (-1, 1)", z[i])));
    }
    let mut values = Vec::with_capacity(layout.len());
    for k in 0..layout.classes {
        let sign = if k == label.class() { 1.0 } else { -1.0 };
        values.extend(z.iter().map(|v| sign * v.abs()));
    }
    Ok(ExpressionCode { values, layout })
}

/// Uniform noise in the open interval (-1, 1).
pub fn sample_uniform<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let v: f32 = rng.random_range(-1.0..1.0);
            if v != -1.0 {
                break v;
            }
        })
        .collect()
}

pub fn sample_code<R: Rng>(label: ExpressionLabel, layout: CodeLayout, rng: &mut R) -> Result<ExpressionCode> {
    let z = sample_uniform(rng, layout.block);
    make_code(label, &z, layout)
}

/// Block `target` filled with `+magnitude`, all others with `-magnitude`.
pub fn edit_code_with_magnitude(target: usize, layout: CodeLayout, magnitude: f32) -> Result<ExpressionCode> {
    layout.check_class(target)?;
    let label = ExpressionLabel::new(target, layout.classes)?;
    make_code(label, &vec![magnitude; layout.block], layout)
}

pub fn edit_code(target: usize, layout: CodeLayout) -> Result<ExpressionCode> {
    edit_code_with_magnitude(target, layout, 1.0)
}

/// Element `level` of block `target` is +1, every other element is -1.
pub fn sweep_code(target: usize, level: usize, layout: CodeLayout) -> Result<ExpressionCode> {
    layout.check_class(target)?;
    if level >= layout.block {
        return Err(Error::OutOfRange {
            what: "level",
            index: level,
            len: layout.block,
        });
    }
    let mut values = vec![-1.0; layout.len()];
    values[layout.block_range(target).start + level] = 1.0;
    Ok(ExpressionCode { values, layout })
}

pub fn neutral_code(layout: CodeLayout) -> ExpressionCode {
    ExpressionCode {
        values: vec![-1.0; layout.len()],
        layout,
    }
}

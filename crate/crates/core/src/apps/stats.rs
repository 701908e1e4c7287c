//! Small statistics used by the evaluations: rank correlation and a
//! multinomial logistic-regression probe.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("spearman needs two equal series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Softmax regression on standardized features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl LinearProbe {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: ProbeConfig) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::EmptyDataset);
        }
        let dim = features[0].len();
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::OutOfRange {
                what: "label",
                index: *bad,
                len: classes,
            });
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for f in features {
            for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let mut probe = Self {
            mean,
            scale,
            weights: vec![vec![0.0; dim + 1]; classes],
        };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = rng_for(cfg.seed, &["probe"]);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let mut grad = vec![vec![0.0; dim + 1]; classes];
                for i in chunk {
                    let p = probe.softmax(&xs[*i]);
                    for (k, g) in grad.iter_mut().enumerate() {
                        let err = p[k] - if labels[*i] == k { 1.0 } else { 0.0 };
                        for (gj, xj) in g.iter_mut().zip(&xs[*i]) {
                            *gj += err * xj;
                        }
                        g[dim] += err;
                    }
                }
                let m = chunk.len() as f64;
                for (w, g) in probe.weights.iter_mut().zip(&grad) {
                    for j in 0..=dim {
                        let decay = if j < dim { cfg.l2 * w[j] } else { 0.0 };
                        w[j] -= cfg.learning_rate * (g[j] / m + decay);
                    }
                }
            }
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn softmax(&self, x: &[f64]) -> Vec<f64> {
        let dim = x.len();
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let p = self.softmax(&self.standardize(features));
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let correct = features.iter().zip(labels).filter(|(f, l)| self.predict(f) == **l).count();
        correct as f64 / features.len() as f64
    }
}

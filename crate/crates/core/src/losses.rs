//! Training objectives.
//!
//! Every term is a pure function of network outputs and returns a scalar
//! tensor, so the same code serves the training step and the gradient checks.
//! Pixel and feature terms are means rather than sums so that the weights do
//! not depend on resolution.
//!
//! The mutual-information regularizer rests on the variational bound
//!
//! ```text
//! I(c; x̂ | y) = H(c|y) - H(c|x̂,y) >= E[log Q(c | x̂, y)] + H(c|y)
//! ```
//!
//! whose slack is `E_x̂[KL(P(c|x̂,y) || Q(c|x̂,y))]`. With the code distribution
//! fixed, `H(c|y)` is constant and only the expectation is optimized.
//! [`mi_bound_toy_check`] evaluates both sides exactly on small discrete
//! problems.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::FeatureNet;

/// Probabilities are clamped into this band before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// λ1, identity-preserving feature loss.
    pub identity: f64,
    /// λ2, code regularizer.
    pub q: f64,
    /// λ3, image adversarial (generator side).
    pub adv_img: f64,
    /// λ4, identity-code adversarial (encoder side).
    pub adv_z: f64,
    /// λ5, total variation.
    pub tv: f64,
    /// β_l for the five feature taps.
    pub layer_betas: [f64; 5],
}

impl LossWeights {
    /// Refining-stage weights.
    pub fn paper() -> Self {
        Self {
            identity: 1.0,
            q: 1.0,
            adv_img: 0.01,
            adv_z: 0.01,
            tv: 0.001,
            layer_betas: [1.0; 5],
        }
    }

    pub fn zero() -> Self {
        Self {
            identity: 0.0,
            q: 0.0,
            adv_img: 0.0,
            adv_z: 0.0,
            tv: 0.0,
            layer_betas: [1.0; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("identity", self.identity),
            ("q", self.q),
            ("adv_img", self.adv_img),
            ("adv_z", self.adv_z),
            ("tv", self.tv),
        ];
        for (name, w) in named.into_iter().chain(self.layer_betas.iter().map(|b| ("layer_beta", *b))) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::validation(format!("weight {name}"), format!("{w} is not a finite nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms of one generator-side update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pixel: f64,
    pub identity: f64,
    pub q: f64,
    pub adv_img: f64,
    pub adv_z: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub components: LossComponents,
    pub weights: LossWeights,
    pub total: f64,
}

/// Weighted sum, accumulated left to right in the order
/// pixel, identity, q, adv_img, adv_z, tv.
pub fn weighted_sum(c: &LossComponents, w: &LossWeights) -> f64 {
    let mut total = c.pixel;
    total += w.identity * c.identity;
    total += w.q * c.q;
    total += w.adv_img * c.adv_img;
    total += w.adv_z * c.adv_z;
    total += w.tv * c.tv;
    total
}

pub fn total_loss(components: LossComponents, weights: LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let terms = [
        ("pixel", components.pixel),
        ("identity", components.identity),
        ("q", components.q),
        ("adv_img", components.adv_img),
        ("adv_z", components.adv_z),
        ("tv", components.tv),
    ];
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.to_string() });
        }
    }
    Ok(LossReport {
        components,
        weights,
        total: weighted_sum(&components, &weights),
    })
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn pixel_loss(x_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(x_hat, x, "pixel loss")?;
    Ok((x_hat - x)?.abs()?.mean_all()?)
}

/// `Σ_l β_l · mean|a_l - b_l|` over paired feature maps.
pub fn feature_loss(a: &[Tensor], b: &[Tensor], betas: &[f64]) -> Result<Tensor> {
    if a.len() != b.len() || a.len() != betas.len() {
        return Err(Error::Shape(format!(
            "feature loss over {} / {} maps with {} weights",
            a.len(),
            b.len(),
            betas.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for ((fa, fb), beta) in a.iter().zip(b).zip(betas) {
        let term = (pixel_loss(fa, fb)? * *beta)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("feature loss needs at least one map".into()))
}

/// Feature-space reconstruction loss through the frozen identity network.
/// The real-image features carry no gradient.
pub fn identity_loss(phi: &FeatureNet, x_hat: &Tensor, x: &Tensor, betas: &[f64; 5]) -> Result<Tensor> {
    same_shape(x_hat, x, "identity loss")?;
    let fake = phi.feature_maps(x_hat)?;
    let real: Vec<Tensor> = phi.feature_maps(&x.detach())?.into_iter().map(|t| t.detach()).collect();
    feature_loss(&fake, &real, betas)
}

/// Negative log-likelihood of `target` under a unit-variance factored
/// Gaussian with mean `mu`, averaged over the batch:
/// `0.5 · Σ_m ((target_m - mu_m)^2 + ln 2π)`. Both inputs are `(batch, d)`.
pub fn q_loss(mu: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(mu, target, "q loss")?;
    let d = mu.dim(D::Minus1)?;
    let sq = (target - mu)?.sqr()?.sum(D::Minus1)?.mean_all()?;
    Ok(((sq + d as f64 * LN_2PI)? * 0.5)?)
}

/// Active block `c_y` of each row of a `(batch, K*d)` code matrix.
pub fn active_blocks(codes: &Tensor, classes: &[usize], block: usize) -> Result<Tensor> {
    let rows = classes
        .iter()
        .enumerate()
        .map(|(i, k)| codes.get(i)?.narrow(0, k * block, block))
        .collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::stack(&rows, 0)?)
}

pub fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

/// Discriminator cross-entropy: `-mean log D(real) - mean log(1 - D(fake))`.
pub fn disc_loss(real_prob: &Tensor, fake_prob: &Tensor) -> Result<Tensor> {
    let real = clamp_prob(real_prob)?.log()?.mean_all()?;
    let fake = clamp_prob(&(1.0 - fake_prob)?)?.log()?.mean_all()?;
    Ok((real + fake)?.neg()?)
}

/// Non-saturating generator loss `-mean log D(fake)`.
pub fn gen_loss(fake_prob: &Tensor) -> Result<Tensor> {
    Ok(clamp_prob(fake_prob)?.log()?.mean_all()?.neg()?)
}

/// Identity-code adversarial pair from `D_z` outputs on prior samples and on
/// encoder outputs: `(d_loss, g_loss)`.
pub fn adv_z_losses(prior_prob: &Tensor, encoded_prob: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((disc_loss(prior_prob, encoded_prob)?, gen_loss(encoded_prob)?))
}

/// Conditional image adversarial pair from `D_img` outputs on real and
/// generated images: `(d_loss, g_loss)`.
pub fn adv_img_losses(real_prob: &Tensor, fake_prob: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((disc_loss(real_prob, fake_prob)?, gen_loss(fake_prob)?))
}

/// Anisotropic total variation of an NHWC batch: summed absolute horizontal
/// and vertical neighbour differences divided by the number of pixel values.
/// Images smaller than 2 in both directions give 0.
pub fn tv_loss(x: &Tensor) -> Result<Tensor> {
    let (_, h, w, _) = x.dims4()?;
    let n = x.elem_count() as f64;
    let mut total = Tensor::zeros((), x.dtype(), x.device())?;
    if w > 1 {
        let dx = (x.narrow(2, 1, w - 1)? - x.narrow(2, 0, w - 1)?)?.abs()?.sum_all()?;
        total = (total + dx)?;
    }
    if h > 1 {
        let dy = (x.narrow(1, 1, h - 1)? - x.narrow(1, 0, h - 1)?)?.abs()?.sum_all()?;
        total = (total + dy)?;
    }
    Ok((total / n)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Finite discrete problem for checking the variational MI bound.
///
/// `joint[y][c][x]` is `P(y, c, x̂)` and must sum to one; `q[y][x][c]` is the
/// auxiliary conditional `Q(c | x̂, y)`, one distribution per `(y, x̂)`.
#[derive(Debug, Clone)]
pub struct DiscreteToy {
    pub joint: Vec<Vec<Vec<f64>>>,
    pub q: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub bound: f64,
    pub true_mi: f64,
}

const TOY_TOL: f64 = 1e-9;
const TOY_MAX_STATES: usize = 16;

/// Exact posterior `P(c | x̂, y)` of a joint table, laid out like `q`.
/// Columns with zero mass get a uniform row.
pub fn exact_posterior(joint: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    joint
        .iter()
        .map(|pcx| {
            let nc = pcx.len();
            let nx = pcx.first().map_or(0, |r| r.len());
            (0..nx)
                .map(|x| {
                    let px: f64 = (0..nc).map(|c| pcx[c][x]).sum();
                    (0..nc)
                        .map(|c| if px > 0.0 { pcx[c][x] / px } else { 1.0 / nc as f64 })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Returns the variational lower bound `E[log q(c|x̂,y)] + H(c|y)` and the
/// exact conditional mutual information `I(c; x̂ | y)`, both in nats.
pub fn mi_bound_toy_check(toy: &DiscreteToy) -> Result<BoundCheck> {
    let joint = &toy.joint;
    if joint.is_empty() || joint.len() > TOY_MAX_STATES {
        return Err(Error::validation("toy joint", "needs 1..=16 label states"));
    }
    let nc = joint[0].len();
    let nx = joint[0].first().map_or(0, |r| r.len());
    if nc == 0 || nx == 0 || nc > TOY_MAX_STATES || nx > TOY_MAX_STATES {
        return Err(Error::validation("toy joint", "needs 1..=16 code and image states"));
    }
    let mut mass = 0.0;
    for pcx in joint {
        if pcx.len() != nc || pcx.iter().any(|r| r.len() != nx) {
            return Err(Error::validation("toy joint", "ragged table"));
        }
        for v in pcx.iter().flatten() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::validation("toy joint", format!("invalid probability {v}")));
            }
            mass += v;
        }
    }
    if (mass - 1.0).abs() > TOY_TOL {
        return Err(Error::validation("toy joint", format!("total mass {mass} is not 1")));
    }
    if toy.q.len() != joint.len() {
        return Err(Error::validation("q table", "label dimension differs from joint"));
    }
    for qy in &toy.q {
        if qy.len() != nx || qy.iter().any(|r| r.len() != nc) {
            return Err(Error::validation("q table", "shape differs from joint"));
        }
        for row in qy {
            let s: f64 = row.iter().sum();
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (s - 1.0).abs() > TOY_TOL {
                return Err(Error::validation("q table", format!("row sums to {s}")));
            }
        }
    }

    let mut expected_log_q = 0.0;
    let mut cond_entropy = 0.0;
    let mut mi = 0.0;
    for (y, pcx) in joint.iter().enumerate() {
        let py: f64 = pcx.iter().flatten().sum();
        if py == 0.0 {
            continue;
        }
        let pc: Vec<f64> = pcx.iter().map(|r| r.iter().sum::<f64>()).collect();
        let px: Vec<f64> = (0..nx).map(|x| (0..nc).map(|c| pcx[c][x]).sum()).collect();
        for c in 0..nc {
            if pc[c] > 0.0 {
                cond_entropy -= pc[c] * (pc[c] / py).ln();
            }
            for x in 0..nx {
                let p = pcx[c][x];
                if p == 0.0 {
                    continue;
                }
                expected_log_q += p * toy.q[y][x][c].ln();
                mi += p * (p * py / (pc[c] * px[x])).ln();
            }
        }
    }
    Ok(BoundCheck {
        bound: expected_log_q + cond_entropy,
        true_mi: mi,
    })
}

/// One line of the training loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub stage: u8,
    pub epoch: usize,
    pub pixel: f64,
    pub identity: f64,
    pub q: f64,
    pub adv_img: f64,
    pub adv_z: f64,
    pub tv: f64,
    pub total: f64,
    /// Discriminator-side losses of the same step (0 when not trained).
    pub d_img: f64,
    pub d_z: f64,
}

impl LossRecord {
    pub fn new(step: u64, stage: u8, epoch: usize, report: &LossReport, d_img: f64, d_z: f64) -> Self {
        let c = report.components;
        Self {
            step,
            stage,
            epoch,
            pixel: c.pixel,
            identity: c.identity,
            q: c.q,
            adv_img: c.adv_img,
            adv_z: c.adv_z,
            tv: c.tv,
            total: report.total,
            d_img,
            d_z,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("loss record serializes")
    }
}

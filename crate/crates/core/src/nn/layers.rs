use candle_core::{Tensor, D};
use rand::Rng;

use super::conv::conv2d_nhwc;
use super::params::{Buffer, NormMode, Param, ParamStore};
use crate::error::Result;

/// Fully connected layer, weight stored `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Param,
    bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let std = (2.0 / inputs as f64).sqrt();
        Ok(Self {
            weight: store.normal(&format!("{name}.w"), &[inputs, outputs], std, rng)?,
            bias: store.constant(&format!("{name}.b"), &[outputs], 0.0)?,
        })
    }

    /// Same as [`Linear::new`] with a caller-chosen weight scale.
    pub fn with_std<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.normal(&format!("{name}.w"), &[inputs, outputs], std, rng)?,
            bias: store.constant(&format!("{name}.b"), &[outputs], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.tensor())?.broadcast_add(&self.bias.tensor())?)
    }
}

/// Square-kernel convolution on NHWC activations, optionally preceded by a
/// nearest-neighbour upsample.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Param,
    bias: Param,
    kernel: usize,
    stride: usize,
    padding: usize,
    upsample: usize,
}

impl Conv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        upsample: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = kernel * kernel * c_in;
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Self {
            weight: store.normal(&format!("{name}.w"), &[fan_in, c_out], std, rng)?,
            bias: store.constant(&format!("{name}.b"), &[c_out], 0.0)?,
            kernel,
            stride,
            padding: kernel / 2,
            upsample,
        })
    }

    /// 5x5 stride-2 downsampling block.
    pub fn down<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, c_in, c_out, 5, 2, 1, rng)
    }

    /// 2x nearest-neighbour upsampling followed by a 3x3 stride-1 convolution.
    pub fn up<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, name, c_in, c_out, 3, 1, 2, rng)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.bias.tensor();
        conv2d_nhwc(
            x,
            &self.weight.tensor(),
            Some(&b),
            self.kernel,
            self.stride,
            self.padding,
            self.upsample,
        )
    }
}

/// Batch normalization over every axis but the last (channel) one.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: Param,
    beta: Param,
    running_mean: Buffer,
    running_var: Buffer,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let channels = *dims.last().expect("batch norm input has a channel axis");
        let flat = x.reshape(((), channels))?;
        let mode = self.running_mean.mode();
        let (mean, var) = match mode {
            NormMode::Eval => (self.running_mean.tensor(), self.running_var.tensor()),
            NormMode::Train | NormMode::BatchStats => {
                let mean = flat.mean_keepdim(0)?;
                let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
                let (mean, var) = (mean.squeeze(0)?, var.squeeze(0)?);
                if mode == NormMode::Train {
                    let m = self.momentum;
                    let rm = ((self.running_mean.tensor() * (1.0 - m))? + (mean.detach() * m)?)?;
                    let rv = ((self.running_var.tensor() * (1.0 - m))? + (var.detach() * m)?)?;
                    self.running_mean.set(&rm)?;
                    self.running_var.set(&rv)?;
                }
                (mean, var)
            }
        };
        let scale = (var + self.eps)?.sqrt()?.recip()?.mul(&self.gamma.tensor())?;
        let out = flat
            .broadcast_sub(&mean)?
            .broadcast_mul(&scale)?
            .broadcast_add(&self.beta.tensor())?;
        Ok(out.reshape(dims)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Logistic function written through `tanh`, which keeps both directions
/// finite for large-magnitude logits.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(x)?.exp()?)
}

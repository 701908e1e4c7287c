use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// How batch normalization layers of a store behave on the next forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics, running averages updated.
    Train,
    /// Batch statistics, running averages left untouched.
    BatchStats,
    /// Running averages only.
    Eval,
}

impl NormMode {
    fn to_u8(self) -> u8 {
        match self {
            NormMode::Train => 0,
            NormMode::BatchStats => 1,
            NormMode::Eval => 2,
        }
    }

    fn from_u8(v: u8) -> Self {
        match v {
            0 => NormMode::Train,
            1 => NormMode::BatchStats,
            _ => NormMode::Eval,
        }
    }
}

#[derive(Debug)]
struct Flags {
    trainable: AtomicBool,
    mode: AtomicU8,
}

/// A trainable array owned by a [`ParamStore`].
///
/// When the owning store is frozen the parameter enters the graph detached, so
/// no gradient is accumulated for it (input gradients still flow through).
#[derive(Debug, Clone)]
pub struct Param {
    var: Var,
    flags: Arc<Flags>,
}

impl Param {
    pub fn tensor(&self) -> Tensor {
        if self.flags.trainable.load(Ordering::Relaxed) {
            self.var.as_tensor().clone()
        } else {
            self.var.as_detached_tensor()
        }
    }

    pub fn var(&self) -> &Var {
        &self.var
    }
}

/// Non-trainable state (running statistics).
#[derive(Debug, Clone)]
pub struct Buffer {
    var: Var,
    flags: Arc<Flags>,
}

impl Buffer {
    pub fn tensor(&self) -> Tensor {
        self.var.as_detached_tensor()
    }

    pub fn set(&self, value: &Tensor) -> Result<()> {
        Ok(self.var.set(&value.detach())?)
    }

    pub fn mode(&self) -> NormMode {
        NormMode::from_u8(self.flags.mode.load(Ordering::Relaxed))
    }
}

/// Named parameters and buffers of one subnetwork.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    flags: Arc<Flags>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            flags: Arc::new(Flags {
                trainable: AtomicBool::new(true),
                mode: AtomicU8::new(NormMode::Train.to_u8()),
            }),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn insert_param(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Param> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(name.to_string(), var.clone());
        Ok(Param {
            var,
            flags: self.flags.clone(),
        })
    }

    /// Gaussian-initialized parameter with the given standard deviation.
    pub fn normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<Param> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert_param(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Param> {
        let n: usize = shape.iter().product();
        self.insert_param(name, vec![value; n], shape)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Buffer> {
        let n: usize = shape.iter().product();
        let t = Tensor::from_vec(vec![value; n], shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(Buffer {
            var,
            flags: self.flags.clone(),
        })
    }

    pub fn set_trainable(&self, trainable: bool) {
        self.flags.trainable.store(trainable, Ordering::Relaxed);
    }

    pub fn is_trainable(&self) -> bool {
        self.flags.trainable.load(Ordering::Relaxed)
    }

    pub fn set_norm_mode(&self, mode: NormMode) {
        self.flags.mode.store(mode.to_u8(), Ordering::Relaxed);
    }

    pub fn norm_mode(&self) -> NormMode {
        NormMode::from_u8(self.flags.mode.load(Ordering::Relaxed))
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Every parameter and buffer, keyed `param.<name>` / `buffer.<name>`.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, v) in &self.params {
            out.insert(format!("param.{k}"), v.as_detached_tensor());
        }
        for (k, v) in &self.buffers {
            out.insert(format!("buffer.{k}"), v.as_detached_tensor());
        }
        out
    }

    /// Like [`ParamStore::tensors`] but with storage that later updates do
    /// not touch.
    pub fn owned_tensors(&self) -> Result<HashMap<String, Tensor>> {
        self.tensors()
            .into_iter()
            .map(|(k, v)| Ok((k, v.copy()?)))
            .collect()
    }

    /// Overwrite every entry from `tensors`, which must contain exactly the
    /// store's keys with matching shapes.
    pub fn load(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        let prefixed = self
            .params
            .iter()
            .map(|(k, v)| (format!("param.{k}"), v))
            .chain(self.buffers.iter().map(|(k, v)| (format!("buffer.{k}"), v)));
        let mut seen = 0;
        for (key, var) in prefixed {
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks {key}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "{key}: checkpoint shape {:?} differs from architecture shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
            seen += 1;
        }
        if tensors.len() != expected || seen != expected {
            return Err(Error::Shape(format!(
                "checkpoint holds {} arrays, architecture expects {expected}",
                tensors.len()
            )));
        }
        Ok(())
    }

    /// Copy all values from `other` (same architecture).
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.load(&other.tensors())
    }

    pub fn all_finite(&self) -> Result<bool> {
        for v in self.params.values().chain(self.buffers.values()) {
            let flat: Vec<f64> = v.as_detached_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            if flat.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Bitwise snapshot of every parameter value, for equality checks.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u64>>> {
        let mut out = BTreeMap::new();
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            let flat: Vec<f64> = v.as_detached_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            out.insert(k.clone(), flat.into_iter().map(f64::to_bits).collect());
        }
        Ok(out)
    }
}

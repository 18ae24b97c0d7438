use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};

/// Standard deviation of the normal initialiser (DCGAN convention).
pub const INIT_STD: f64 = 0.02;

/// Parameter initialiser of a convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// normal(0, std) weights and a zero bias.
    Normal(f64),
    /// uniform(±1/sqrt(fan_in)) weights and bias.
    FanInUniform,
}

/// Named trainable variables of one network, in creation order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self { dtype, device, entries: Vec::new() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn push(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(handle)
    }

    pub fn normal<R: Rng + ?Sized>(&mut self, name: String, shape: &[usize], std: f64, rng: &mut R) -> Result<Tensor> {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, values, shape)
    }

    pub fn uniform<R: Rng + ?Sized>(&mut self, name: String, shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, values, shape)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        self.push(name, vec![0.0; n], shape)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        cfg: Conv2dConfig,
        init: Init,
        rng: &mut R,
    ) -> Result<Conv2d> {
        let shape = [out_ch, in_ch, kernel, kernel];
        let (w, b) = match init {
            Init::Normal(std) => (
                self.normal(format!("{name}.weight"), &shape, std, rng)?,
                self.zeros(format!("{name}.bias"), &[out_ch])?,
            ),
            Init::FanInUniform => {
                let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
                (
                    self.uniform(format!("{name}.weight"), &shape, bound, rng)?,
                    self.uniform(format!("{name}.bias"), &[out_ch], bound, rng)?,
                )
            }
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    /// Sets every entry of the named parameter to `value`.
    pub fn fill(&self, name: &str, value: f64) -> Result<()> {
        let Some((_, var)) = self.entries.iter().find(|(n, _)| n == name) else {
            bail!(Config, "no parameter named {name}");
        };
        var.set(&(var.as_tensor().ones_like()? * value)?)?;
        Ok(())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Squared Frobenius norm over all parameters.
    pub fn squared_norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for (_, v) in &self.entries {
            acc += v.as_tensor().to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        Ok(acc)
    }

    pub fn export(&self, prefix: &str) -> HashMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(n, v)| (format!("{prefix}{n}"), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites every parameter from `tensors[prefix + name]`.
    pub fn import(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (n, v) in &self.entries {
            let key = format!("{prefix}{n}");
            let Some(t) = tensors.get(&key) else {
                bail!(Checkpoint, "missing tensor {key}");
            };
            if t.dims() != v.dims() {
                bail!(Checkpoint, "tensor {key} has shape {:?}, expected {:?}", t.dims(), v.dims());
            }
            v.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Identical values, parameter by parameter.
    pub fn same_values(&self, other: &ParamStore) -> Result<bool> {
        if self.entries.len() != other.entries.len() {
            return Ok(false);
        }
        for ((na, a), (nb, b)) in self.entries.iter().zip(&other.entries) {
            if na != nb || a.dims() != b.dims() {
                return Ok(false);
            }
            let diff = (a.as_tensor() - b.as_tensor())?.abs()?.flatten_all()?.max(0)?;
            if diff.to_dtype(DType::F64)?.to_scalar::<f64>()? != 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

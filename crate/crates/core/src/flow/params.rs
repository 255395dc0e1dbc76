//! Named parameter tensors, Adam, and an exponential moving average.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use crate::error::{dim_err, Result};

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Serialized form: shapes plus flat row-major values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Uniform `±1/√fan_in` weights.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let a = 1.0 / (rows.max(1) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a));
        self.push(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.push(name, Tensor::zeros(rows, cols))
    }

    pub fn push(&mut self, name: &str, t: Tensor) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| t * 0.0).collect()
    }

    pub fn to_flat(&self) -> Vec<FlatParam> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| FlatParam {
                name: n.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
                data: t.transpose().as_slice().to_vec(),
            })
            .collect()
    }

    /// Overwrites values from a flat list with matching names and shapes.
    pub fn load_flat(&mut self, flat: &[FlatParam]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(dim_err(format!(
                "checkpoint has {} tensors, model expects {}",
                flat.len(),
                self.len()
            )));
        }
        for (k, f) in flat.iter().enumerate() {
            let t = &self.tensors[k];
            if f.name != self.names[k] || f.rows != t.nrows() || f.cols != t.ncols() {
                return Err(dim_err(format!(
                    "tensor {k}: checkpoint {} {}×{}, model {} {}×{}",
                    f.name,
                    f.rows,
                    f.cols,
                    self.names[k],
                    t.nrows(),
                    t.ncols()
                )));
            }
            if f.data.len() != f.rows * f.cols {
                return Err(dim_err(format!("tensor {} has wrong element count", f.name)));
            }
            self.tensors[k] = Tensor::from_row_slice(f.rows, f.cols, &f.data);
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Global L2 norm of a gradient list.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    n
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = &grads[k];
            self.m[k] = &self.m[k] * self.beta1 + g * (1.0 - self.beta1);
            self.v[k] = &self.v[k] * self.beta2 + g.component_mul(g) * (1.0 - self.beta2);
            let (m, v) = (&self.m[k], &self.v[k]);
            let p = &mut params.tensors[k];
            for i in 0..p.len() {
                p[i] -= lr * (m[i] / b1c) / ((v[i] / b2c).sqrt() + self.eps);
            }
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl Ema {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamStore) {
        let d = self.decay;
        for (s, p) in self.shadow.tensors.iter_mut().zip(&params.tensors) {
            *s = &*s * d + p * (1.0 - d);
        }
    }
}

/// Linear warm-up to `lr` over `warmup` steps, then constant.
pub fn warmup_lr(lr: f64, warmup: u64, step: u64) -> f64 {
    if warmup == 0 {
        lr
    } else {
        lr * ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

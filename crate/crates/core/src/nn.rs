//! Minimal fully connected network with exact reverse-mode gradients and an
//! Adam optimizer — the machinery behind the implicit mixing distribution.
//!
//! Parameters live in one flat vector with a fixed layout (layer-major,
//! weights before biases, row-major weight matrices) so the optimizer state
//! and on-disk checkpoints stay stable across runs.

use std::io::{self, Read, Write};

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Result, SglmmError};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SGNN";
const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected stack: affine + tanh on every hidden layer, affine with
/// identity activation on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpMixer {
    layer_dims: Vec<usize>,
    params: DVector<f64>,
}

/// Forward-pass intermediates needed by [`MlpMixer::backward_acc`]: the input
/// followed by every layer's post-activation output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<DVector<f64>>,
}

impl MlpCache {
    /// The network output recorded during the cached forward pass.
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().expect("cache always holds the input")
    }
}

impl MlpMixer {
    /// Glorot-uniform initialization: weights drawn from
    /// U(-b, b) with b = sqrt(6 / (fan_in + fan_out)), biases zero. Weight
    /// draws consume the generator layer by layer in row-major order, so the
    /// result is a pure function of the seed.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(SglmmError::InvalidArgument(format!(
                "network needs at least an input and an output dimension (got {dims:?})"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(SglmmError::InvalidArgument(format!(
                "all layer dimensions must be positive (got {dims:?})"
            )));
        }
        let n_params: usize = layer_param_count(dims);
        let mut params = DVector::zeros(n_params);
        let mut k = 0;
        for l in 1..dims.len() {
            let (fan_in, fan_out) = (dims[l - 1], dims[l]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params[k] = bound * (2.0 * rng.random::<f64>() - 1.0);
                k += 1;
            }
            // Biases stay zero.
            k += fan_out;
        }
        Ok(MlpMixer { layer_dims: dims.to_vec(), params })
    }

    /// Build a network directly from a flat parameter vector (used by tests
    /// and checkpoint loading).
    pub fn from_flat(dims: &[usize], params: DVector<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(SglmmError::InvalidArgument(format!("invalid layer dims {dims:?}")));
        }
        let want = layer_param_count(dims);
        if params.len() != want {
            return Err(SglmmError::InvalidArgument(format!(
                "parameter vector has length {}, layout {dims:?} needs {want}",
                params.len()
            )));
        }
        Ok(MlpMixer { layer_dims: dims.to_vec(), params })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DVector<f64> {
        &mut self.params
    }

    /// Flat offset of layer `l`'s weight block (`l` counts from 1).
    fn weight_offset(&self, l: usize) -> usize {
        let mut off = 0;
        for k in 1..l {
            off += self.layer_dims[k - 1] * self.layer_dims[k] + self.layer_dims[k];
        }
        off
    }

    /// Map the input through the network.
    pub fn forward(&self, eps: &DVector<f64>) -> Result<DVector<f64>> {
        let mut cache = self.forward_cached(eps)?;
        Ok(cache.activations.pop().expect("cache holds at least the input"))
    }

    /// Forward pass that records every activation for a later backward pass.
    pub fn forward_cached(&self, eps: &DVector<f64>) -> Result<MlpCache> {
        if eps.len() != self.input_dim() {
            return Err(SglmmError::InvalidArgument(format!(
                "input has length {}, network expects {}",
                eps.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.layer_dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(eps.clone());
        let mut off = 0;
        for l in 1..=n_layers {
            let (d_in, d_out) = (self.layer_dims[l - 1], self.layer_dims[l]);
            let prev = &activations[l - 1];
            let mut out = DVector::zeros(d_out);
            for o in 0..d_out {
                let row = off + o * d_in;
                let mut acc = self.params[off + d_in * d_out + o]; // bias
                for i in 0..d_in {
                    acc += self.params[row + i] * prev[i];
                }
                out[o] = if l < n_layers { acc.tanh() } else { acc };
            }
            activations.push(out);
            off += d_in * d_out + d_out;
        }
        Ok(MlpCache { activations })
    }

    /// Reverse-mode gradients of `<upstream, output>`: accumulates the
    /// parameter gradient into `grad_params` (which must have `n_params`
    /// entries) and returns the gradient with respect to the input.
    pub fn backward_acc(
        &self,
        cache: &MlpCache,
        upstream: &DVector<f64>,
        grad_params: &mut DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n_layers = self.layer_dims.len() - 1;
        if upstream.len() != self.output_dim() {
            return Err(SglmmError::InvalidArgument(format!(
                "upstream gradient has length {}, output dimension is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grad_params.len() != self.n_params() {
            return Err(SglmmError::InvalidArgument(format!(
                "gradient buffer has length {}, network has {} parameters",
                grad_params.len(),
                self.n_params()
            )));
        }
        let mut delta = upstream.clone();
        for l in (1..=n_layers).rev() {
            let (d_in, d_out) = (self.layer_dims[l - 1], self.layer_dims[l]);
            let off = self.weight_offset(l);
            let prev = &cache.activations[l - 1];
            let mut prev_delta = DVector::zeros(d_in);
            for o in 0..d_out {
                let row = off + o * d_in;
                let d = delta[o];
                grad_params[off + d_in * d_out + o] += d; // bias gradient
                for i in 0..d_in {
                    grad_params[row + i] += d * prev[i];
                    prev_delta[i] += self.params[row + i] * d;
                }
            }
            if l > 1 {
                // Pull the gradient through the previous layer's tanh.
                for i in 0..d_in {
                    prev_delta[i] *= 1.0 - prev[i] * prev[i];
                }
            }
            delta = prev_delta;
        }
        Ok(delta)
    }

    /// Convenience wrapper allocating a fresh parameter-gradient vector.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut grad = DVector::zeros(self.n_params());
        let grad_input = self.backward_acc(cache, upstream, &mut grad)?;
        Ok((grad, grad_input))
    }

    /// Serialize the network: magic + version, layer dims, then the flat
    /// parameter vector as little-endian 64-bit floats.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &p in self.params.iter() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a checkpoint written by [`MlpMixer::write_checkpoint`].
    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |what: &str| SglmmError::InvalidData(format!("network checkpoint: {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(&format!("short read ({e})")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|e| bad(&format!("short read ({e})")))?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        r.read_exact(&mut u32buf).map_err(|e| bad(&format!("short read ({e})")))?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(bad(&format!("implausible layer count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        let mut u64buf = [0u8; 8];
        for _ in 0..n_dims {
            r.read_exact(&mut u64buf).map_err(|e| bad(&format!("short read ({e})")))?;
            let d = u64::from_le_bytes(u64buf) as usize;
            if d == 0 || d > 1_000_000 {
                return Err(bad(&format!("implausible layer dimension {d}")));
            }
            dims.push(d);
        }
        let n_params = layer_param_count(&dims);
        let mut params = DVector::zeros(n_params);
        for k in 0..n_params {
            r.read_exact(&mut u64buf).map_err(|e| bad(&format!("short read ({e})")))?;
            params[k] = f64::from_le_bytes(u64buf);
        }
        let mut extra = [0u8; 1];
        match r.read(&mut extra) {
            Ok(0) => {}
            Ok(_) => return Err(bad("trailing bytes after parameters")),
            Err(e) => return Err(bad(&format!("read failed ({e})"))),
        }
        MlpMixer::from_flat(&dims, params)
    }
}

/// Total parameter count for a layer-dimension sequence.
pub fn layer_param_count(dims: &[usize]) -> usize {
    (1..dims.len()).map(|l| dims[l - 1] * dims[l] + dims[l]).sum()
}

/// Bias-corrected Adam state. `step_ascend` moves parameters along the
/// provided gradient (we maximize an objective; that is descent on its
/// negation with the same moment estimates).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: DVector<f64>,
    v: DVector<f64>,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
        }
    }

    /// One ascent step along `grad`. Errors on non-finite gradient entries,
    /// reporting the step index.
    pub fn step_ascend(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(SglmmError::InvalidArgument(format!(
                "optimizer dimension {} does not match params {} / grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SglmmError::Numerical(format!(
                "non-finite gradient at optimizer step {}",
                self.t + 1
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / b1t;
            let v_hat = self.v[k] / b2t;
            params[k] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescale `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the pre-clip norm when clipping fired, for logging.
pub fn clip_global_norm(grad: &mut DVector<f64>, max_norm: f64) -> Option<f64> {
    let norm = grad.norm();
    if norm.is_finite() && norm > max_norm {
        *grad *= max_norm / norm;
        Some(norm)
    } else {
        None
    }
}

//! Fully connected networks (ELU hidden layers, linear output) with
//! reverse-mode gradients, plus Adam and gradient-norm clipping.
//!
//! Parameters live in one flat vector: for each layer the weight matrix
//! (column-major, `out x in`) followed by its bias, then the log standard
//! deviations when the network is stochastic. Batches are matrices with one
//! sample per column.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::scalar::Real;

/// Scalars usable in batched network math.
pub trait NetScalar: Real + nalgebra::Scalar + nalgebra::ClosedAddAssign + nalgebra::ClosedSubAssign + nalgebra::ClosedMulAssign {}
impl<T> NetScalar for T where T: Real + nalgebra::Scalar + nalgebra::ClosedAddAssign + nalgebra::ClosedSubAssign + nalgebra::ClosedMulAssign {}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("network needs at least an input and an output width, all positive")]
    BadWidths,
}

#[inline]
pub fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

#[inline]
fn elu_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    widths: Vec<usize>,
    params: Vec<T>,
    stochastic: bool,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: NetScalar> {
    /// Layer inputs (`acts[0]` is the batch itself) and the final output.
    acts: Vec<DMatrix<T>>,
    /// Pre-activation values of every hidden layer.
    pre: Vec<DMatrix<T>>,
}

impl<T: NetScalar> ForwardCache<T> {
    pub fn output(&self) -> &DMatrix<T> {
        self.acts.last().expect("non-empty")
    }
}

/// Packs rows (one sample each) into a batch matrix.
pub fn batch_from_rows<T: NetScalar>(rows: &[Vec<T>]) -> DMatrix<T> {
    let width = rows.first().map_or(0, |r| r.len());
    let flat: Vec<T> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    DMatrix::from_column_slice(width, rows.len(), &flat)
}

impl<T: NetScalar> PolicyNet<T> {
    fn check_widths(widths: &[usize]) -> Result<(), NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::BadWidths);
        }
        Ok(())
    }

    fn param_count(widths: &[usize], stochastic: bool) -> usize {
        let layers: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        layers + if stochastic { widths[widths.len() - 1] } else { 0 }
    }

    pub fn zeros(widths: &[usize], stochastic: bool) -> Result<Self, NnError> {
        Self::check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![T::zero(); Self::param_count(widths, stochastic)],
            stochastic,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases; log-std set to `ln(init_std)`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], stochastic: bool, init_std: f64, rng: &mut R) -> Result<Self, NnError> {
        let mut net = Self::zeros(widths, stochastic)?;
        for l in 0..net.layers() {
            let bound = 1.0 / (net.widths[l] as f64).sqrt();
            let (w, b) = net.layer_ranges(l);
            for k in w.start..b.end {
                net.params[k] = T::lit(rng.random_range(-bound..bound));
            }
        }
        let ls = T::lit(init_std.ln());
        net.log_std_mut().iter_mut().for_each(|s| *s = ls);
        Ok(net)
    }

    /// Xavier-uniform weights scaled by `gain`, zero biases.
    pub fn init_xavier_layer<R: Rng + ?Sized>(&mut self, layer: usize, gain: f64, rng: &mut R) {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (w, b) = self.layer_ranges(layer);
        for k in w {
            self.params[k] = T::lit(rng.random_range(-bound..=bound));
        }
        for k in b {
            self.params[k] = T::zero();
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter ranges of layer `l`: weights, then bias.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        let nw = self.widths[l] * self.widths[l + 1];
        (off..off + nw, off + nw..off + nw + self.widths[l + 1])
    }

    fn log_std_range(&self) -> std::ops::Range<usize> {
        let n = if self.stochastic { self.output_dim() } else { 0 };
        self.params.len() - n..self.params.len()
    }

    pub fn log_std(&self) -> &[T] {
        &self.params[self.log_std_range()]
    }

    pub fn log_std_mut(&mut self) -> &mut [T] {
        let r = self.log_std_range();
        &mut self.params[r]
    }

    /// Index of the first log-std entry in the flat parameter vector.
    pub fn log_std_offset(&self) -> usize {
        self.log_std_range().start
    }

    fn weight(&self, l: usize) -> DMatrixView<'_, T> {
        let (w, _) = self.layer_ranges(l);
        DMatrixView::from_slice(&self.params[w], self.widths[l + 1], self.widths[l])
    }

    /// Mean output for a single observation.
    pub fn forward(&self, obs: &[T]) -> Result<Vec<T>, NnError> {
        let batch = DMatrix::from_column_slice(obs.len(), 1, obs);
        Ok(self.forward_batch(&batch)?.output().as_slice().to_vec())
    }

    pub fn forward_batch(&self, batch: &DMatrix<T>) -> Result<ForwardCache<T>, NnError> {
        if batch.nrows() != self.input_dim() {
            return Err(NnError::DimensionMismatch { what: "observation width", expected: self.input_dim(), found: batch.nrows() });
        }
        let n = batch.ncols();
        let mut acts = Vec::with_capacity(self.layers() + 1);
        let mut pre = Vec::with_capacity(self.layers().saturating_sub(1));
        acts.push(batch.clone());
        for l in 0..self.layers() {
            let (_, b) = self.layer_ranges(l);
            let mut z = DMatrix::<T>::zeros(self.widths[l + 1], n);
            z.gemm(T::one(), &self.weight(l), &acts[l], T::zero());
            let bias = &self.params[b];
            for mut col in z.column_iter_mut() {
                for (v, &bi) in col.iter_mut().zip(bias) {
                    *v += bi;
                }
            }
            if l + 1 < self.layers() {
                let a = z.map(elu);
                pre.push(z);
                acts.push(a);
            } else {
                acts.push(z);
            }
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Gradient of `sum(dout ⊙ output)` with respect to every layer
    /// parameter. Log-std entries of the result are zero.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &DMatrix<T>) -> Result<Vec<T>, NnError> {
        let out = cache.output();
        if dout.shape() != out.shape() {
            return Err(NnError::DimensionMismatch { what: "output gradient rows", expected: out.nrows(), found: dout.nrows() });
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let mut delta = dout.clone();
        for l in (0..self.layers()).rev() {
            let (w, b) = self.layer_ranges(l);
            let input = &cache.acts[l];
            {
                let mut gw = nalgebra::DMatrixViewMut::from_slice(&mut grads[w], self.widths[l + 1], self.widths[l]);
                gw.gemm(T::one(), &delta, &input.transpose(), T::zero());
            }
            for (k, row) in delta.row_iter().enumerate() {
                grads[b.start + k] = row.iter().copied().fold(T::zero(), |s, x| s + x);
            }
            if l > 0 {
                let mut prev = DMatrix::<T>::zeros(self.widths[l], delta.ncols());
                prev.gemm(T::one(), &self.weight(l).transpose(), &delta, T::zero());
                for (p, &z) in prev.iter_mut().zip(cache.pre[l - 1].iter()) {
                    *p = *p * elu_grad(z);
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Mean over samples of the squared error norm, and its gradient.
    pub fn mse_loss_grad(&self, obs: &DMatrix<T>, target: &DMatrix<T>) -> Result<(T, Vec<T>), NnError> {
        let cache = self.forward_batch(obs)?;
        let out = cache.output();
        if target.shape() != out.shape() {
            return Err(NnError::DimensionMismatch { what: "target rows", expected: out.nrows(), found: target.nrows() });
        }
        let n = T::lit(obs.ncols() as f64);
        let diff = out - target;
        let loss = diff.iter().map(|&d| d * d).fold(T::zero(), |s, x| s + x) / n;
        let dout = diff * (T::lit(2.0) / n);
        Ok((loss, self.backward(&cache, &dout)?))
    }

    /// SHA-256 over the little-endian parameter bytes (as f64).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.as_f64().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Rebuilds from raw parts, validating sizes.
    pub fn from_parts(widths: &[usize], stochastic: bool, params: Vec<T>) -> Result<Self, NnError> {
        Self::check_widths(widths)?;
        let expected = Self::param_count(widths, stochastic);
        if params.len() != expected {
            return Err(NnError::DimensionMismatch { what: "parameter count", expected, found: params.len() });
        }
        Ok(Self { widths: widths.to_vec(), params, stochastic })
    }

    pub fn cast<U: NetScalar>(&self) -> PolicyNet<U> {
        PolicyNet {
            widths: self.widths.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
            stochastic: self.stochastic,
        }
    }
}

/// Scales all gradient slices jointly so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [&mut [T]], max_norm: T) -> T {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(T::zero(), |s, &x| s + x * x)
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + T::lit(1e-6));
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x = *x * scale);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different parameter vector");
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = b1 * self.m[k] + (T::one() - b1) * g;
            self.v[k] = b2 * self.v[k] + (T::one() - b2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] = params[k] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

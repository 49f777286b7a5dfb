use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fill_uniform_fan, Gradients, Matrix, Parameterized, TensorView, TensorViewMut};
use crate::error::{check_dim, Error, Result};

/// Affine layer `y = W x + b` with `W` stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    pub fn init_uniform_fan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        fill_uniform_fan(&mut self.weight, self.n_in, rng);
        fill_uniform_fan(&mut self.bias, self.n_in, rng);
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w_row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.n_in).zip(&self.bias))
        {
            *o = b + w_row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += dy ⊗ x`, `db += dy`.
    pub(crate) fn accumulate_grads(&self, x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) {
        for ((g, row), &d) in db.iter_mut().zip(dw.chunks_exact_mut(self.n_in)).zip(dy) {
            if d == 0.0 {
                continue;
            }
            *g += d;
            row.iter_mut().zip(x).for_each(|(w, v)| *w += d * v);
        }
    }

    /// `dx = Wᵀ dy`.
    pub(crate) fn backward_input(&self, dy: &[f64], dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (row, &d) in self.weight.chunks_exact(self.n_in).zip(dy) {
            if d == 0.0 {
                continue;
            }
            dx.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
        }
    }
}

/// Layer sizes of a frame encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("encoder sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.embedding_dim);
        s
    }
}

/// Multilayer frame encoder: rectified hidden layers followed by a linear
/// embedding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    layers: Vec<Dense>,
    trainable: Vec<bool>,
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// `activations[0]` is the input batch; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Matrix>,
}

impl EncoderCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("non-empty cache")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows
    }
}

impl EncoderModel {
    /// Encoder with all parameters zero and every layer trainable.
    pub fn zeros(arch: &EncoderArch) -> Result<Self> {
        arch.validate()?;
        let sizes = arch.sizes();
        let layers: Vec<Dense> = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let trainable = vec![true; layers.len()];
        Ok(Self { layers, trainable })
    }

    pub fn new<R: Rng + ?Sized>(arch: &EncoderArch, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        model.init_uniform_fan(rng);
        Ok(model)
    }

    /// Redraws every parameter from `(-1/√n, 1/√n)`, `n` being the layer's fan-in.
    pub fn init_uniform_fan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            layer.init_uniform_fan(rng);
        }
    }

    pub fn arch(&self) -> EncoderArch {
        EncoderArch {
            input_dim: self.layers[0].n_in,
            hidden: self.layers[..self.layers.len() - 1].iter().map(|l| l.n_out).collect(),
            embedding_dim: self.layers.last().unwrap().n_out,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn any_trainable(&self) -> bool {
        self.trainable.iter().any(|&t| t)
    }

    fn is_hidden(&self, l: usize) -> bool {
        l + 1 < self.layers.len()
    }

    /// Embeds a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            layer.forward_into(&cur, &mut next);
            if self.is_hidden(l) {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Embeds every row of `batch`.
    pub fn forward_batch(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.activations.pop().unwrap())
    }

    /// Batched forward pass that keeps the activations needed by [`Self::backward`].
    pub fn forward_cached(&self, batch: &Matrix) -> Result<EncoderCache> {
        check_dim(self.input_dim(), batch.cols)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let mut out = Matrix::zeros(input.rows, layer.n_out);
            for r in 0..input.rows {
                let row = out.row_mut(r);
                layer.forward_into(input.row(r), row);
                if self.is_hidden(l) {
                    row.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            activations.push(out);
        }
        Ok(EncoderCache { activations })
    }

    /// Backpropagates `upstream = ∂L/∂embeddings` through a cached forward pass.
    ///
    /// Parameter gradients of trainable layers are added into `grads`, which
    /// must hold this encoder's tensors in [`Parameterized::tensors`] order.
    /// Calling this once per Siamese branch sums the branch gradients.
    pub fn backward(&self, cache: &EncoderCache, upstream: &Matrix, grads: &mut [Vec<f64>]) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidConfig("forward cache does not match encoder".into()));
        }
        check_dim(cache.batch_size(), upstream.rows)?;
        check_dim(self.embedding_dim(), upstream.cols)?;
        check_dim(2 * self.layers.len(), grads.len())?;
        // lowest layer whose inputs still need a gradient
        let Some(lowest) = self.trainable.iter().position(|&t| t) else {
            return Ok(());
        };
        let mut delta = upstream.clone();
        for l in (lowest..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.is_hidden(l) {
                let out = &cache.activations[l + 1];
                delta
                    .data
                    .iter_mut()
                    .zip(&out.data)
                    .for_each(|(d, &a)| if a <= 0.0 { *d = 0.0 });
            }
            let input = &cache.activations[l];
            if self.trainable[l] {
                let (w, rest) = grads[2 * l..].split_at_mut(1);
                for r in 0..delta.rows {
                    layer.accumulate_grads(input.row(r), delta.row(r), &mut w[0], &mut rest[0]);
                }
            }
            if l > lowest {
                let mut prev = Matrix::zeros(delta.rows, layer.n_in);
                for r in 0..delta.rows {
                    layer.backward_input(delta.row(r), prev.row_mut(r));
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// `∂L/∂input` for each row, given `∂L/∂embedding`. Ignores trainable flags.
    pub fn input_gradient(&self, cache: &EncoderCache, upstream: &Matrix) -> Result<Matrix> {
        check_dim(cache.batch_size(), upstream.rows)?;
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.is_hidden(l) {
                let out = &cache.activations[l + 1];
                delta
                    .data
                    .iter_mut()
                    .zip(&out.data)
                    .for_each(|(d, &a)| if a <= 0.0 { *d = 0.0 });
            }
            let mut prev = Matrix::zeros(delta.rows, layer.n_in);
            for r in 0..delta.rows {
                layer.backward_input(delta.row(r), prev.row_mut(r));
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradient buffers for just this encoder.
    pub fn grads_for(&self) -> Gradients {
        self.zero_grads()
    }
}

fn layer_index(name: &str, n: usize) -> Option<usize> {
    let idx: usize = name.strip_prefix("encoder.")?.parse().ok()?;
    (idx < n).then_some(idx)
}

impl Parameterized for EncoderModel {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(TensorView {
                name: format!("encoder.{l}.weight"),
                shape: vec![layer.n_out, layer.n_in],
                data: &layer.weight,
                trainable: self.trainable[l],
            });
            out.push(TensorView {
                name: format!("encoder.{l}.bias"),
                shape: vec![layer.n_out],
                data: &layer.bias,
                trainable: self.trainable[l],
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, (layer, &trainable)) in self.layers.iter_mut().zip(&self.trainable).enumerate() {
            out.push(TensorViewMut {
                name: format!("encoder.{l}.weight"),
                data: &mut layer.weight,
                trainable,
            });
            out.push(TensorViewMut {
                name: format!("encoder.{l}.bias"),
                data: &mut layer.bias,
                trainable,
            });
        }
        out
    }

    fn layer_names(&self) -> Vec<String> {
        (0..self.layers.len()).map(|l| format!("encoder.{l}")).collect()
    }

    fn set_layer_trainable(&mut self, layer: &str, trainable: bool) -> Result<()> {
        let l = layer_index(layer, self.layers.len()).ok_or_else(|| Error::UnknownLayer(layer.into()))?;
        self.trainable[l] = trainable;
        Ok(())
    }

    fn is_layer_trainable(&self, layer: &str) -> Result<bool> {
        let l = layer_index(layer, self.layers.len()).ok_or_else(|| Error::UnknownLayer(layer.into()))?;
        Ok(self.trainable[l])
    }
}

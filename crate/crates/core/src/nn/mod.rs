//! Trainable models, hand-written backpropagation and the Adam optimizer.
//!
//! Parameters are held as `f64` for arithmetic but are kept representable at
//! single precision (initialization and every optimizer update round through
//! `f32`), so checkpoints store them losslessly as `f32`.

mod adam;
mod encoder;
mod phase;

pub use adam::{AdamConfig, AdamState};
pub use encoder::{Dense, EncoderArch, EncoderCache, EncoderModel};
pub use phase::{
    softmax_cross_entropy, ChunkCache, ChunkOutput, LstmCell, LstmState, PhaseArch, PhaseModel,
};

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            crate::error::check_dim(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Widens a row-major `f32` block of `cols` columns.
    pub fn from_f32(data: &[f32], cols: usize) -> Self {
        Self {
            rows: data.len().checked_div(cols).unwrap_or(0),
            cols,
            data: data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }
}

/// Rounds to the nearest single-precision value.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Read-only view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

/// Mutable view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
    pub trainable: bool,
}

/// A model whose parameters can be enumerated in a fixed order.
pub trait Parameterized {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>>;

    /// Zeroed gradient buffers aligned with [`Parameterized::tensors`].
    fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    /// Layer names accepted by `set_trainable`.
    fn layer_names(&self) -> Vec<String>;
    fn set_layer_trainable(&mut self, layer: &str, trainable: bool) -> Result<()>;
    fn is_layer_trainable(&self, layer: &str) -> Result<bool>;

    /// Sets the trainable flag of every layer matched by `selector`.
    ///
    /// Fails without modifying the model if `layers` names an unknown layer.
    fn set_trainable(&mut self, layers: &[&str], trainable: bool) -> Result<()> {
        let known = self.layer_names();
        if let Some(bad) = layers.iter().find(|l| !known.iter().any(|k| k == *l)) {
            return Err(Error::UnknownLayer(bad.to_string()));
        }
        for l in layers {
            self.set_layer_trainable(l, trainable)?;
        }
        Ok(())
    }

    fn set_all_trainable(&mut self, trainable: bool) {
        for l in self.layer_names() {
            self.set_layer_trainable(&l, trainable).expect("own layer name");
        }
    }

    /// Layers selected by a predicate on their names.
    fn select_layers(&self, selector: &dyn Fn(&str) -> bool) -> Vec<String> {
        self.layer_names().into_iter().filter(|l| selector(l)).collect()
    }
}

/// Gradient buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Fills `data` uniformly from the open interval `(-1/√fan_in, 1/√fan_in)`,
/// rounded to single precision.
pub(crate) fn fill_uniform_fan<R: Rng + ?Sized>(data: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in data.iter_mut() {
        *v = loop {
            let x = quantize(rng.random_range(-bound..bound));
            if x.abs() < bound {
                break x;
            }
        };
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

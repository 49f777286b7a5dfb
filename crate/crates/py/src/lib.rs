//! Python module `tcssl`: frame sequences, synthetic procedures, losses, the
//! tuple sampler, encoder pretraining, phase-model fine-tuning, metrics and
//! retrieval.
//!
//! Training runs release the GIL. Seeds select independent random streams,
//! so equal seeds give bit-identical results.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tcssl_core::io::{self, Checkpoint};
use tcssl_core::losses;
use tcssl_core::metrics::{self, AggregateReport, Summary, VideoMetrics};
use tcssl_core::nn::{AdamConfig, EncoderArch, EncoderModel, Parameterized, PhaseModel as CorePhaseModel};
use tcssl_core::retrieval::{self, QueryFrame};
use tcssl_core::rng::{derive, stream_id};
use tcssl_core::sampler::sample_tuple as core_sample_tuple;
use tcssl_core::synth::{generate_dataset as core_generate, SynthConfig};
use tcssl_core::train::{self, FinetuneConfig, PretrainConfig, PretrainMethod};
use tcssl_core::{LossConfig, SamplerConfig, TupleOrder};

fn err(e: tcssl_core::Error) -> PyErr {
    match e {
        tcssl_core::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn rng(seed: u64, name: &str) -> tcssl_core::rng::StreamRng {
    derive(seed, stream_id(name))
}

/// Per-frame feature vectors of one video, with optional phase labels.
#[pyclass(module = "tcssl", skip_from_py_object)]
#[derive(Clone)]
pub struct FrameSequence {
    inner: tcssl_core::FrameSequence,
}

#[pymethods]
impl FrameSequence {
    #[new]
    #[pyo3(signature = (video_id, features, fps=1.0, labels=None))]
    fn new(video_id: String, features: Vec<Vec<f32>>, fps: f32, labels: Option<Vec<usize>>) -> PyResult<Self> {
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != dim) {
            return Err(PyValueError::new_err("every frame must have the same feature dimension"));
        }
        let flat = features.into_iter().flatten().collect();
        let inner = tcssl_core::FrameSequence::new(video_id, fps, dim, flat, labels).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn video_id(&self) -> &str {
        &self.inner.video_id
    }

    #[getter]
    fn fps(&self) -> f32 {
        self.inner.fps
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels.clone()
    }

    /// Frame `t` as a list of floats.
    fn frame(&self, t: usize) -> PyResult<Vec<f32>> {
        if t >= self.inner.len() {
            return Err(PyValueError::new_err(format!("frame {t} out of range")));
        }
        Ok(self.inner.frame(t).to_vec())
    }

    /// Every `stride`-th frame.
    fn subsample(&self, stride: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.subsample(stride).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "FrameSequence({:?}, frames={}, dim={}, labeled={})",
            self.inner.video_id,
            self.inner.len(),
            self.inner.feature_dim,
            self.inner.labels.is_some()
        )
    }
}

fn unwrap_videos(videos: &[PyRef<'_, FrameSequence>]) -> Vec<tcssl_core::FrameSequence> {
    videos.iter().map(|v| v.inner.clone()).collect()
}

/// Synthetic procedure videos and their `A`..`D` split letters.
#[pyfunction]
#[pyo3(signature = (num_videos, seed=0, noise_std=None, fps=None, mixing_layers=None))]
fn generate_dataset(
    num_videos: usize,
    seed: u64,
    noise_std: Option<f64>,
    fps: Option<f64>,
    mixing_layers: Option<usize>,
) -> PyResult<Vec<(FrameSequence, String)>> {
    let mut cfg = SynthConfig::default();
    if let Some(n) = noise_std {
        cfg.noise_std = n;
    }
    if let Some(f) = fps {
        cfg.fps = f;
    }
    if let Some(m) = mixing_layers {
        cfg.mixing_layers = m;
    }
    let ds = core_generate(&cfg, num_videos, seed).map_err(err)?;
    Ok(ds
        .videos
        .into_iter()
        .zip(ds.splits)
        .map(|(inner, split)| (FrameSequence { inner }, split.to_string()))
        .collect())
}

/// Videos of a dataset directory with their split letters (`None` if unassigned).
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<(FrameSequence, Option<String>)>> {
    let ds = io::load_dataset(&path).map_err(err)?;
    Ok(ds
        .videos
        .into_iter()
        .zip(ds.splits)
        .map(|(inner, split)| (FrameSequence { inner }, split.map(|s| s.to_string())))
        .collect())
}

fn loss_config(margin_contrastive: f64, margin_ranking: f64, second_order_weight: f64) -> LossConfig {
    LossConfig {
        margin_contrastive,
        margin_ranking,
        second_order_weight,
    }
}

#[pyfunction]
#[pyo3(signature = (t, near, far, margin=2.0))]
fn contrastive_loss(t: Vec<f64>, near: Vec<f64>, far: Vec<f64>, margin: f64) -> PyResult<f64> {
    losses::contrastive_loss(&t, &near, &far, &loss_config(margin, 2.0, 0.5)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (t, near, far, margin=2.0))]
fn ranking_loss(t: Vec<f64>, near: Vec<f64>, far: Vec<f64>, margin: f64) -> PyResult<f64> {
    losses::ranking_loss(&t, &near, &far, &loss_config(2.0, margin, 0.5)).map_err(err)
}

/// Contrastive loss on the differences of `(t, t+Δ, t+2Δ, t+Γ)`.
#[pyfunction]
#[pyo3(signature = (t, td, t2d, tg, margin=2.0))]
fn second_order_contrastive_loss(t: Vec<f64>, td: Vec<f64>, t2d: Vec<f64>, tg: Vec<f64>, margin: f64) -> PyResult<f64> {
    losses::second_order_contrastive_loss(&t, &td, &t2d, &tg, &loss_config(margin, 2.0, 0.5)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (t, td, t2d, tg, margin=2.0, weight=0.5))]
fn combined_loss(t: Vec<f64>, td: Vec<f64>, t2d: Vec<f64>, tg: Vec<f64>, margin: f64, weight: f64) -> PyResult<f64> {
    losses::combined_loss(&t, &td, &t2d, &tg, &loss_config(margin, 2.0, weight)).map_err(err)
}

/// `count` frame-index tuples for a sequence of `frames` frames; `order` is
/// `"first"` for `(t, t+Δ, t+Γ)` or `"second"` for `(t, t+Δ, t+2Δ, t+Γ)`.
#[pyfunction]
#[pyo3(signature = (frames, order="first", delta_seconds=30.0, gamma_seconds=120.0, frames_per_second=5.0, count=1, seed=0))]
fn sample_tuples(
    frames: usize,
    order: &str,
    delta_seconds: f64,
    gamma_seconds: f64,
    frames_per_second: f64,
    count: usize,
    seed: u64,
) -> PyResult<Vec<Vec<usize>>> {
    let order = match order {
        "first" => TupleOrder::First,
        "second" => TupleOrder::Second,
        _ => return Err(PyValueError::new_err("order must be \"first\" or \"second\"")),
    };
    let cfg = SamplerConfig {
        delta_seconds,
        gamma_seconds,
        frames_per_second,
        tuples_per_video: count.max(1),
    };
    let mut r = rng(seed, "sampler");
    (0..count)
        .map(|_| {
            core_sample_tuple(order, frames, &cfg, &mut r)
                .map(|t| t.indices().to_vec())
                .map_err(err)
        })
        .collect()
}

fn metrics_dict<'py>(py: Python<'py>, m: &VideoMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("recall", m.macro_recall)?;
    d.set_item("precision", m.macro_precision)?;
    d.set_item("f1", m.f1)?;
    d.set_item("per_phase_f1", m.per_phase_f1.clone())?;
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, s: &Summary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("count", s.count)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &AggregateReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("videos", r.videos)?;
    d.set_item("accuracy", summary_dict(py, &r.accuracy)?)?;
    d.set_item("recall", summary_dict(py, &r.recall)?)?;
    d.set_item("precision", summary_dict(py, &r.precision)?)?;
    d.set_item("f1", summary_dict(py, &r.f1)?)?;
    let phases: Vec<Bound<'py, PyDict>> = r
        .per_phase_f1
        .iter()
        .map(|s| summary_dict(py, s))
        .collect::<PyResult<_>>()?;
    d.set_item("per_phase_f1", phases)?;
    Ok(d)
}

/// Frame accuracy, macro recall/precision and F1 of one video, in percent.
#[pyfunction]
fn video_metrics<'py>(py: Python<'py>, truth: Vec<usize>, pred: Vec<usize>, num_phases: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::video_metrics(&truth, &pred, num_phases).map_err(err)?;
    metrics_dict(py, &m)
}

/// Frame encoder mapping features to embeddings.
#[pyclass(module = "tcssl", skip_from_py_object)]
#[derive(Clone)]
pub struct Encoder {
    inner: EncoderModel,
}

fn parse_method(method: &str) -> PyResult<PretrainMethod> {
    method.parse().map_err(err)
}

#[pymethods]
impl Encoder {
    #[new]
    #[pyo3(signature = (input_dim, hidden=vec![64], embedding_dim=32, seed=0))]
    fn new(input_dim: usize, hidden: Vec<usize>, embedding_dim: usize, seed: u64) -> PyResult<Self> {
        let arch = EncoderArch {
            input_dim,
            hidden,
            embedding_dim,
        };
        let inner = EncoderModel::new(&arch, &mut rng(seed, "init.encoder")).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn embed(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&features).map_err(err)
    }

    /// Self-supervised training on unlabeled videos; returns the mean loss of
    /// every epoch. `delta_seconds` defaults to the method's own window.
    #[pyo3(signature = (videos, method="contrastive", epochs=25, batch_size=64, delta_seconds=None, gamma_seconds=120.0, tuples_per_video=250, learning_rate=1e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        &mut self,
        py: Python<'_>,
        videos: Vec<PyRef<'_, FrameSequence>>,
        method: &str,
        epochs: usize,
        batch_size: usize,
        delta_seconds: Option<f64>,
        gamma_seconds: f64,
        tuples_per_video: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let method = parse_method(method)?;
        let videos: Vec<_> = unwrap_videos(&videos)
            .into_iter()
            .map(|mut v| {
                v.labels = None;
                v
            })
            .collect();
        let fps = videos.first().map_or(1.0, |v| v.fps as f64);
        let mut cfg = PretrainConfig::new(method);
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.sampler = SamplerConfig {
            delta_seconds: delta_seconds.unwrap_or(method.default_delta_seconds()),
            gamma_seconds,
            frames_per_second: fps,
            tuples_per_video,
        };
        cfg.adam = AdamConfig::with_lr(learning_rate);
        let encoder = &mut self.inner;
        let history = py
            .detach(|| train::pretrain(encoder, &videos, &cfg, &mut rng(seed, "pretrain")))
            .map_err(err)?;
        Ok(history.epoch_loss)
    }

    /// Freezes (`trainable=False`) or unfreezes layers named `encoder.<i>`.
    #[pyo3(signature = (layers, trainable=false))]
    fn set_trainable(&mut self, layers: Vec<String>, trainable: bool) -> PyResult<()> {
        let names: Vec<&str> = layers.iter().map(String::as_str).collect();
        self.inner.set_trainable(&names, trainable).map_err(err)
    }

    /// Nearest frame of `video` to each query frame, as `(frame, distance)`.
    fn nearest(&self, queries: Vec<Vec<f32>>, video: PyRef<'_, FrameSequence>) -> PyResult<Vec<(usize, f64)>> {
        let corpus = vec![video.inner.clone()];
        let queries: Vec<QueryFrame> = queries
            .into_iter()
            .enumerate()
            .map(|(i, features)| QueryFrame {
                query_id: i.to_string(),
                video_id: String::new(),
                frame_index: 0,
                features,
                phase: None,
            })
            .collect();
        let report = retrieval::retrieval_report(&self.inner, &queries, &corpus).map_err(err)?;
        Ok(report
            .results
            .iter()
            .map(|r| (r.hits[0].frame_index, r.hits[0].distance))
            .collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&path, &Checkpoint::Encoder(self.inner.clone()), serde_json::json!({})).map_err(err)
    }

    /// Encoder of any checkpoint; a phase model's head is dropped.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (ckpt, _) = io::load_checkpoint(&path, None).map_err(err)?;
        Ok(Self {
            inner: ckpt.into_encoder(),
        })
    }

    fn __eq__(&self, other: PyRef<'_, Self>) -> bool {
        self.inner == other.inner
    }
}

/// Encoder, LSTM and linear classifier producing per-frame phase logits.
#[pyclass(module = "tcssl")]
pub struct PhaseModel {
    inner: CorePhaseModel,
}

#[pymethods]
impl PhaseModel {
    /// Head on top of `encoder` (copied), or on a fresh encoder of the
    /// given shape.
    #[new]
    #[pyo3(signature = (num_phases, encoder=None, input_dim=None, hidden=vec![64], embedding_dim=32, lstm_hidden=64, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_phases: usize,
        encoder: Option<PyRef<'_, Encoder>>,
        input_dim: Option<usize>,
        hidden: Vec<usize>,
        embedding_dim: usize,
        lstm_hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let encoder = match (encoder, input_dim) {
            (Some(e), _) => e.inner.clone(),
            (None, Some(input_dim)) => Encoder::new(input_dim, hidden, embedding_dim, seed)?.inner,
            (None, None) => return Err(PyValueError::new_err("pass either encoder or input_dim")),
        };
        let inner = CorePhaseModel::with_encoder(encoder, lstm_hidden, num_phases, &mut rng(seed, "init.head"))
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_phases(&self) -> usize {
        self.inner.num_phases()
    }

    #[getter]
    fn encoder(&self) -> Encoder {
        Encoder {
            inner: self.inner.encoder.clone(),
        }
    }

    /// Freezes (`trainable=False`) or unfreezes layers such as `encoder.0`,
    /// `lstm` or `classifier`.
    #[pyo3(signature = (layers, trainable=false))]
    fn set_trainable(&mut self, layers: Vec<String>, trainable: bool) -> PyResult<()> {
        let names: Vec<&str> = layers.iter().map(String::as_str).collect();
        self.inner.set_trainable(&names, trainable).map_err(err)
    }

    /// Supervised training on labeled videos; returns
    /// `{"epochs": [{epoch, train_accuracy, mean_loss, optimizer_steps}], "converged": bool}`.
    #[pyo3(signature = (videos, max_epochs=100, batch_frames=128, accumulate_batches=3, stop_train_accuracy=0.999, learning_rate=1e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn finetune<'py>(
        &mut self,
        py: Python<'py>,
        videos: Vec<PyRef<'_, FrameSequence>>,
        max_epochs: usize,
        batch_frames: usize,
        accumulate_batches: usize,
        stop_train_accuracy: f64,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let videos = unwrap_videos(&videos);
        let cfg = FinetuneConfig {
            batch_frames,
            accumulate_batches,
            stop_train_accuracy,
            max_epochs,
            adam: AdamConfig::with_lr(learning_rate),
        };
        let model = &mut self.inner;
        let log = py
            .detach(|| train::finetune(model, &videos, &cfg, &mut rng(seed, "finetune")))
            .map_err(err)?;
        let epochs = log
            .epochs
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("train_accuracy", e.train_accuracy)?;
                d.set_item("mean_loss", e.mean_loss)?;
                d.set_item("optimizer_steps", e.optimizer_steps)?;
                Ok(d)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let out = PyDict::new(py);
        out.set_item("epochs", epochs)?;
        out.set_item("converged", log.converged)?;
        Ok(out)
    }

    /// Argmax phase of every frame.
    fn predict(&self, py: Python<'_>, video: PyRef<'_, FrameSequence>) -> PyResult<Vec<usize>> {
        let video = video.inner.clone();
        py.detach(|| train::predict(&self.inner, &video)).map_err(err)
    }

    /// Per-video metrics and their mean ± std aggregate.
    fn evaluate<'py>(&self, py: Python<'py>, videos: Vec<PyRef<'_, FrameSequence>>) -> PyResult<Bound<'py, PyDict>> {
        let videos = unwrap_videos(&videos);
        let ev = py.detach(|| train::evaluate(&self.inner, &videos)).map_err(err)?;
        let per_video = PyDict::new(py);
        for (id, m) in &ev.per_video {
            per_video.set_item(id, metrics_dict(py, m)?)?;
        }
        let out = PyDict::new(py);
        out.set_item("per_video", per_video)?;
        out.set_item("report", report_dict(py, &ev.report)?)?;
        Ok(out)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&path, &Checkpoint::Phase(self.inner.clone()), serde_json::json!({})).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (ckpt, _) = io::load_checkpoint(&path, None).map_err(err)?;
        Ok(Self {
            inner: ckpt.into_phase_model().map_err(err)?,
        })
    }
}

#[pymodule]
fn tcssl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FrameSequence>()?;
    m.add_class::<Encoder>()?;
    m.add_class::<PhaseModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_loss, m)?)?;
    m.add_function(wrap_pyfunction!(second_order_contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_tuples, m)?)?;
    m.add_function(wrap_pyfunction!(video_metrics, m)?)?;
    Ok(())
}

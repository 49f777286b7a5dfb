//! Self-supervised pretraining, supervised fine-tuning and evaluation loops.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::losses::{loss_and_gradients, LossConfig, LossKind};
use crate::metrics::{aggregate, video_metrics, AggregateReport, VideoMetrics};
use crate::nn::{
    softmax_cross_entropy, AdamConfig, AdamState, EncoderModel, Gradients, Matrix, Parameterized, PhaseModel,
};
use crate::sampler::{build_epoch_schedule, check_sequence, SamplerConfig, TupleOrder};
use crate::sequence::FrameSequence;

/// Pretraining variant: which tuples are sampled and how they are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMethod {
    Contrastive,
    Ranking,
    /// First- plus second-order contrastive loss on 4-frame tuples.
    Contrastive2,
}

impl PretrainMethod {
    pub const ALL: [PretrainMethod; 3] = [
        PretrainMethod::Contrastive,
        PretrainMethod::Ranking,
        PretrainMethod::Contrastive2,
    ];

    pub fn loss_kind(self) -> LossKind {
        match self {
            PretrainMethod::Contrastive => LossKind::Contrastive,
            PretrainMethod::Ranking => LossKind::Ranking,
            PretrainMethod::Contrastive2 => LossKind::Combined,
        }
    }

    pub fn tuple_order(self) -> TupleOrder {
        match self {
            PretrainMethod::Contrastive2 => TupleOrder::Second,
            _ => TupleOrder::First,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PretrainMethod::Contrastive => "contrastive",
            PretrainMethod::Ranking => "ranking",
            PretrainMethod::Contrastive2 => "contrastive2",
        }
    }

    /// Default close-window half-width in seconds: 15 for the second-order
    /// variant, 30 otherwise.
    pub fn default_delta_seconds(self) -> f64 {
        match self {
            PretrainMethod::Contrastive2 => 15.0,
            _ => 30.0,
        }
    }
}

impl std::str::FromStr for PretrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretrainMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pretraining method {s:?}")))
    }
}

impl std::fmt::Display for PretrainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub epochs: usize,
    pub batch_size: usize,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

impl PretrainConfig {
    pub fn new(method: PretrainMethod) -> Self {
        Self {
            method,
            epochs: 25,
            batch_size: 64,
            sampler: SamplerConfig {
                delta_seconds: method.default_delta_seconds(),
                ..SamplerConfig::default()
            },
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("pretraining batch size must be positive".into()));
        }
        self.sampler.validate()?;
        self.loss.validate()?;
        self.adam.validate()
    }
}

/// Mean tuple loss of every pretraining epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainHistory {
    pub epoch_loss: Vec<f64>,
    pub optimizer_steps: u64,
}

/// Trains `encoder` on tuples drawn from unlabeled `videos`.
///
/// Every tuple position is embedded with the shared encoder in one batched
/// pass; the loss is averaged over the batch and one Adam step is taken per
/// batch.
pub fn pretrain<R: Rng + ?Sized>(
    encoder: &mut EncoderModel,
    videos: &[FrameSequence],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainHistory> {
    cfg.validate()?;
    let mut infeasible = Vec::new();
    for v in videos {
        check_dim(encoder.input_dim(), v.feature_dim).map_err(|e| e.in_video(&v.video_id))?;
        if (f64::from(v.fps) - cfg.sampler.frames_per_second).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "video {} is sampled at {} fps but the sampler expects {}",
                v.video_id, v.fps, cfg.sampler.frames_per_second
            )));
        }
        if let Err(e) = check_sequence(v.len(), &cfg.sampler) {
            infeasible.push(format!("{}: {e}", v.video_id));
        }
    }
    if !infeasible.is_empty() {
        return Err(Error::InfeasibleVideos(infeasible));
    }
    let mut history = PretrainHistory {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        optimizer_steps: 0,
    };
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to pretrain on"));
    }

    let kind = cfg.method.loss_kind();
    let arity = kind.arity();
    let lengths: Vec<usize> = videos.iter().map(FrameSequence::len).collect();
    let mut adam = AdamState::new(encoder, cfg.adam)?;
    let mut grads = encoder.zero_grads();

    for epoch in 0..cfg.epochs {
        let schedule = build_epoch_schedule(&lengths, cfg.method.tuple_order(), &cfg.sampler, rng)?;
        let mut epoch_total = 0.0;
        for (b, batch) in schedule.chunks(cfg.batch_size).enumerate() {
            let n = batch.len();
            let positions: Vec<Matrix> = (0..arity)
                .map(|p| {
                    let mut frames = Matrix::zeros(n, encoder.input_dim());
                    for (row, entry) in batch.iter().enumerate() {
                        let src = videos[entry.video].frame(entry.tuple.indices()[p]);
                        frames
                            .row_mut(row)
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, &v)| *o = f64::from(v));
                    }
                    frames
                })
                .collect();
            let batch_mean = tuple_batch_gradients(encoder, kind, &cfg.loss, &positions, &mut grads)?;
            let batch_total = batch_mean * n as f64;
            if !batch_total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: batch_total,
                    context: format!("pretraining epoch {epoch}, batch {b}"),
                });
            }
            epoch_total += batch_total;
            adam.step(encoder, &grads)?;
            history.optimizer_steps += 1;
        }
        history.epoch_loss.push(epoch_total / schedule.len() as f64);
    }
    Ok(history)
}

/// Mean loss of a batch of tuples and its gradient w.r.t. the encoder.
///
/// `positions[p]` holds the frames at tuple position `p`, one row per tuple.
/// `grads` is overwritten.
pub fn tuple_batch_gradients(
    encoder: &EncoderModel,
    kind: LossKind,
    loss: &LossConfig,
    positions: &[Matrix],
    grads: &mut Gradients,
) -> Result<f64> {
    if positions.len() != kind.arity() {
        return Err(Error::InvalidConfig(format!(
            "{} needs {} tuple positions, got {}",
            kind.name(),
            kind.arity(),
            positions.len()
        )));
    }
    let n = positions[0].rows;
    if n == 0 || positions.iter().any(|m| m.rows != n) {
        return Err(Error::EmptyInput("tuple positions must share a nonzero batch size"));
    }
    let caches = positions
        .iter()
        .map(|frames| encoder.forward_cached(frames))
        .collect::<Result<Vec<_>>>()?;
    let d = encoder.embedding_dim();
    let mut upstream: Vec<Matrix> = (0..positions.len()).map(|_| Matrix::zeros(n, d)).collect();
    let mut total = 0.0;
    for row in 0..n {
        let inputs: Vec<&[f64]> = caches.iter().map(|c| c.output().row(row)).collect();
        let (value, g) = loss_and_gradients(kind, &inputs, loss)?;
        total += value;
        for (p, gp) in g.iter().enumerate() {
            upstream[p]
                .row_mut(row)
                .iter_mut()
                .zip(gp)
                .for_each(|(u, v)| *u = v / n as f64);
        }
    }
    grads.zero();
    for (cache, up) in caches.iter().zip(&upstream) {
        encoder.backward(cache, up, &mut grads.tensors)?;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Frames per chunk (one truncated-backpropagation window).
    pub batch_frames: usize,
    /// Chunks whose gradients are summed before each optimizer step.
    pub accumulate_batches: usize,
    /// Training stops after the first epoch whose frame accuracy exceeds this.
    pub stop_train_accuracy: f64,
    pub max_epochs: usize,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_frames: 128,
            accumulate_batches: 3,
            stop_train_accuracy: 0.999,
            max_epochs: 100,
            adam: AdamConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_frames == 0 || self.accumulate_batches == 0 {
            return Err(Error::InvalidConfig(
                "batch_frames and accumulate_batches must be positive".into(),
            ));
        }
        if !(self.stop_train_accuracy >= 0.0 && self.stop_train_accuracy <= 1.0) {
            return Err(Error::InvalidConfig("stop_train_accuracy must lie in [0, 1]".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    /// Fraction of training frames predicted correctly during the epoch's
    /// forward passes.
    pub train_accuracy: f64,
    pub mean_loss: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub epochs: Vec<FinetuneEpoch>,
    /// Whether the accuracy threshold was crossed before `max_epochs`.
    pub converged: bool,
}

/// One fine-tuning chunk, reported to an observer before it is processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkEvent {
    pub epoch: usize,
    pub video: usize,
    pub start: usize,
    pub end: usize,
}

/// Progress reported by [`finetune_observed`].
#[derive(Debug, Clone, Copy)]
pub enum FinetuneEvent<'a> {
    Chunk(ChunkEvent),
    /// After the epoch's last optimizer step.
    EpochEnd {
        stats: &'a FinetuneEpoch,
        model: &'a PhaseModel,
    },
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn check_labeled(model: &PhaseModel, videos: &[FrameSequence]) -> Result<()> {
    let k = model.num_phases();
    for v in videos {
        check_dim(model.encoder.input_dim(), v.feature_dim).map_err(|e| e.in_video(&v.video_id))?;
        let labels = v.labels_or_err()?;
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, num_phases: k }.in_video(&v.video_id));
        }
    }
    Ok(())
}

/// Fine-tunes `model` on labeled videos.
pub fn finetune<R: Rng + ?Sized>(
    model: &mut PhaseModel,
    videos: &[FrameSequence],
    cfg: &FinetuneConfig,
    rng: &mut R,
) -> Result<FinetuneLog> {
    finetune_observed(model, videos, cfg, rng, |_| {})
}

/// [`finetune`] with a callback invoked for every chunk and after every epoch.
///
/// Videos are visited in a fresh random order each epoch. Each video is
/// consumed as consecutive chunks of `batch_frames` frames; the LSTM state
/// starts at zero for every video and is carried, detached, across its
/// chunks. Chunk losses are frame averages; gradients are summed over
/// `accumulate_batches` chunks per Adam step, and any remainder is applied at
/// the end of the epoch.
pub fn finetune_observed<R, F>(
    model: &mut PhaseModel,
    videos: &[FrameSequence],
    cfg: &FinetuneConfig,
    rng: &mut R,
    mut observer: F,
) -> Result<FinetuneLog>
where
    R: Rng + ?Sized,
    F: FnMut(FinetuneEvent<'_>),
{
    cfg.validate()?;
    check_labeled(model, videos)?;
    if videos.iter().all(FrameSequence::is_empty) {
        return Err(Error::EmptyInput("no labeled frames to fine-tune on"));
    }
    let mut adam = AdamState::new(model, cfg.adam)?;
    let mut grads = model.zero_grads();
    let mut log = FinetuneLog {
        epochs: Vec::new(),
        converged: false,
    };
    let k = model.num_phases();

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(rng);
        let (mut correct, mut total, mut loss_sum, mut chunks) = (0usize, 0usize, 0.0, 0usize);
        let mut pending = 0;
        let steps_before = adam.step;

        for &vi in &order {
            let video = &videos[vi];
            let labels = video.labels_or_err()?;
            let mut state = model.zero_state();
            let mut start = 0;
            while start < video.len() {
                let end = (start + cfg.batch_frames).min(video.len());
                observer(FinetuneEvent::Chunk(ChunkEvent {
                    epoch,
                    video: vi,
                    start,
                    end,
                }));
                let frames = video.frames_matrix(start..end);
                let (out, cache) = model.forward_chunk_cached(&frames, &state)?;
                let len = end - start;
                let mut dlogits = Matrix::zeros(len, k);
                let mut chunk_loss = 0.0;
                for r in 0..len {
                    let label = labels[start + r];
                    let row = out.logits.row(r);
                    if argmax(row) == label {
                        correct += 1;
                    }
                    let (loss, g) = softmax_cross_entropy(row, label)?;
                    chunk_loss += loss;
                    dlogits
                        .row_mut(r)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, v)| *d = v / len as f64);
                }
                chunk_loss /= len as f64;
                if !chunk_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        value: chunk_loss,
                        context: format!(
                            "fine-tuning epoch {epoch}, video {}, frames {start}..{end}",
                            video.video_id
                        ),
                    });
                }
                loss_sum += chunk_loss;
                chunks += 1;
                total += len;
                model.backward_chunk(&cache, &dlogits, &mut grads)?;
                state = out.state;
                pending += 1;
                if pending == cfg.accumulate_batches {
                    adam.step(model, &grads)?;
                    grads.zero();
                    pending = 0;
                }
                start = end;
            }
        }
        if pending > 0 {
            adam.step(model, &grads)?;
            grads.zero();
        }
        let train_accuracy = correct as f64 / total as f64;
        log.epochs.push(FinetuneEpoch {
            epoch,
            train_accuracy,
            mean_loss: loss_sum / chunks as f64,
            optimizer_steps: adam.step - steps_before,
        });
        observer(FinetuneEvent::EpochEnd {
            stats: log.epochs.last().unwrap(),
            model,
        });
        if train_accuracy > cfg.stop_train_accuracy {
            log.converged = true;
            break;
        }
    }
    Ok(log)
}

/// Greedy per-frame phase predictions from one stateful pass over a video.
pub fn predict(model: &PhaseModel, video: &FrameSequence) -> Result<Vec<usize>> {
    check_dim(model.encoder.input_dim(), video.feature_dim).map_err(|e| e.in_video(&video.video_id))?;
    if video.is_empty() {
        return Ok(Vec::new());
    }
    let out = model.forward_chunk(&video.frames_matrix(0..video.len()), &model.zero_state())?;
    Ok(out.logits.iter_rows().map(argmax).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_video: Vec<(String, VideoMetrics)>,
    pub report: AggregateReport,
}

/// Scores `model` on labeled videos. Read-only; videos are processed in parallel.
pub fn evaluate(model: &PhaseModel, videos: &[FrameSequence]) -> Result<Evaluation> {
    check_labeled(model, videos)?;
    let per_video = videos
        .par_iter()
        .map(|v| {
            let pred = predict(model, v)?;
            let m = video_metrics(v.labels_or_err()?, &pred, model.num_phases())
                .map_err(|e| e.in_video(&v.video_id))?;
            Ok((v.video_id.clone(), m))
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<VideoMetrics> = per_video.iter().map(|(_, m)| m.clone()).collect();
    let report = aggregate(&metrics)?;
    Ok(Evaluation { per_video, report })
}

//! Pretraining tuple sampling.
//!
//! An anchor frame `t` is drawn uniformly, then a close offset `Δ ∈ [-δ, δ]`
//! and a distant offset `Γ ∈ [-(T-1), -γ] ∪ [γ, T-1]` are drawn uniformly,
//! keeping `t` fixed and accepting only offsets whose frames lie inside the
//! sequence. Offsets are drawn directly from that in-range subset, which has
//! the same law as re-drawing until valid but cannot run out of attempts.
//!
//! Anchors for which no distant offset lands inside the sequence (possible
//! when `T < 2γ + 1`) are excluded from the anchor range, so `t` is uniform
//! over the anchors that admit a valid tuple.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Half-width `δ` of the close-offset window, in seconds.
    pub delta_seconds: f64,
    /// Minimum distant offset `γ`, in seconds.
    pub gamma_seconds: f64,
    pub frames_per_second: f64,
    pub tuples_per_video: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            delta_seconds: 30.0,
            gamma_seconds: 120.0,
            frames_per_second: 5.0,
            tuples_per_video: 250,
        }
    }
}

impl SamplerConfig {
    pub fn delta_frames(&self) -> usize {
        (self.delta_seconds * self.frames_per_second).round() as usize
    }

    pub fn gamma_frames(&self) -> usize {
        (self.gamma_seconds * self.frames_per_second).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("sampler: {msg} ({self:?})")));
        if !(self.delta_seconds.is_finite() && self.delta_seconds >= 0.0) {
            return bad("delta must be nonnegative");
        }
        if !(self.gamma_seconds.is_finite() && self.gamma_seconds >= 0.0) {
            return bad("gamma must be nonnegative");
        }
        if !(self.frames_per_second.is_finite() && self.frames_per_second > 0.0) {
            return bad("frames per second must be positive");
        }
        if self.tuples_per_video == 0 {
            return bad("tuples per video must be positive");
        }
        if self.delta_frames() >= self.gamma_frames() {
            return bad("close window must be narrower than the distant offset");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TupleOrder {
    First,
    Second,
}

/// Frame indices of one pretraining example.
///
/// First order: `(t, t+Δ, t+Γ)`. Second order: `(t, t+Δ, t+2Δ, t+Γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampledTuple {
    First([usize; 3]),
    Second([usize; 4]),
}

impl SampledTuple {
    pub fn order(&self) -> TupleOrder {
        match self {
            SampledTuple::First(_) => TupleOrder::First,
            SampledTuple::Second(_) => TupleOrder::Second,
        }
    }

    pub fn indices(&self) -> &[usize] {
        match self {
            SampledTuple::First(ix) => ix,
            SampledTuple::Second(ix) => ix,
        }
    }

    /// Signed offsets `(Δ, Γ)` relative to the anchor.
    pub fn offsets(&self) -> (i64, i64) {
        let ix = self.indices();
        let t = ix[0] as i64;
        (ix[1] as i64 - t, *ix.last().unwrap() as i64 - t)
    }
}

/// Per-sequence sampling geometry in frames.
struct Geometry {
    frames: i64,
    delta: i64,
    gamma: i64,
}

impl Geometry {
    fn new(frames: usize, cfg: &SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let gamma = cfg.gamma_frames();
        if frames == 0 || frames - 1 < gamma {
            return Err(Error::NoValidDistantFrame {
                frames,
                gamma_frames: gamma,
            });
        }
        Ok(Self {
            frames: frames as i64,
            delta: cfg.delta_frames() as i64,
            gamma: gamma as i64,
        })
    }

    /// Anchors admitting a distant frame: `[0, T-1-γ] ∪ [γ, T-1]`.
    fn draw_anchor<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let low = self.frames - self.gamma; // size of the block [0, T-1-γ]
        if low >= self.gamma {
            // the two blocks cover every frame
            return rng.random_range(0..self.frames);
        }
        let k = rng.random_range(0..2 * low);
        if k < low {
            k
        } else {
            self.gamma + (k - low)
        }
    }

    /// `Γ` uniform over `{-t..=-γ} ∪ {γ..=T-1-t}`.
    fn draw_gamma<R: Rng + ?Sized>(&self, t: i64, rng: &mut R) -> i64 {
        let below = (t - self.gamma + 1).max(0);
        let above = (self.frames - t - self.gamma).max(0);
        debug_assert!(below + above > 0, "anchor {t} admits no distant frame");
        let k = rng.random_range(0..below + above);
        if k < below {
            -t + k
        } else {
            self.gamma + (k - below)
        }
    }

    /// `Δ` uniform over `[-δ, δ]` restricted to `t + step·Δ ∈ [0, T-1]`.
    fn draw_delta<R: Rng + ?Sized>(&self, t: i64, max_step: i64, rng: &mut R) -> i64 {
        let lo = (-self.delta).max(-(t / max_step));
        let hi = self.delta.min((self.frames - 1 - t) / max_step);
        rng.random_range(lo..=hi)
    }
}

/// Checks that a sequence of `frames` frames admits at least one tuple.
pub fn check_sequence(frames: usize, cfg: &SamplerConfig) -> Result<()> {
    Geometry::new(frames, cfg).map(|_| ())
}

/// Samples `(t, t+Δ, t+Γ)` for a sequence of `frames` frames.
pub fn sample_first_order<R: Rng + ?Sized>(
    frames: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledTuple> {
    let g = Geometry::new(frames, cfg)?;
    let t = g.draw_anchor(rng);
    let delta = g.draw_delta(t, 1, rng);
    let gamma = g.draw_gamma(t, rng);
    Ok(SampledTuple::First([
        t as usize,
        (t + delta) as usize,
        (t + gamma) as usize,
    ]))
}

/// Samples `(t, t+Δ, t+2Δ, t+Γ)` for a sequence of `frames` frames.
pub fn sample_second_order<R: Rng + ?Sized>(
    frames: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledTuple> {
    let g = Geometry::new(frames, cfg)?;
    let t = g.draw_anchor(rng);
    let delta = g.draw_delta(t, 2, rng);
    let gamma = g.draw_gamma(t, rng);
    Ok(SampledTuple::Second([
        t as usize,
        (t + delta) as usize,
        (t + 2 * delta) as usize,
        (t + gamma) as usize,
    ]))
}

pub fn sample_tuple<R: Rng + ?Sized>(
    order: TupleOrder,
    frames: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledTuple> {
    match order {
        TupleOrder::First => sample_first_order(frames, cfg, rng),
        TupleOrder::Second => sample_second_order(frames, cfg, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub video: usize,
    pub tuple: SampledTuple,
}

/// One epoch of tuples: `tuples_per_video` per video, shuffled across videos.
///
/// Errors identify the offending video by its position in `video_lengths`.
pub fn build_epoch_schedule<R: Rng + ?Sized>(
    video_lengths: &[usize],
    order: TupleOrder,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<ScheduleEntry>> {
    let mut schedule = Vec::with_capacity(video_lengths.len() * cfg.tuples_per_video);
    for (video, &frames) in video_lengths.iter().enumerate() {
        for _ in 0..cfg.tuples_per_video {
            let tuple = sample_tuple(order, frames, cfg, rng)
                .map_err(|e| e.in_video(&format!("#{video}")))?;
            schedule.push(ScheduleEntry { video, tuple });
        }
    }
    schedule.shuffle(rng);
    Ok(schedule)
}

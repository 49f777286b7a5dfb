use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One procedure: `T` frames of precomputed features, optionally labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub video_id: String,
    pub fps: f32,
    pub feature_dim: usize,
    /// Row-major `T × feature_dim`.
    pub features: Vec<f32>,
    pub labels: Option<Vec<usize>>,
}

impl FrameSequence {
    pub fn new(
        video_id: impl Into<String>,
        fps: f32,
        feature_dim: usize,
        features: Vec<f32>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let seq = Self {
            video_id: video_id.into(),
            fps,
            feature_dim,
            features,
            labels,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        if !self.features.len().is_multiple_of(self.feature_dim) {
            return Err(Error::LengthMismatch {
                what: "feature buffer vs. feature dimension",
                left: self.features.len(),
                right: self.feature_dim,
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::LengthMismatch {
                    what: "labels vs. frames",
                    left: labels.len(),
                    right: self.len(),
                });
            }
        }
        Ok(())
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.features.len() / self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.features[t * self.feature_dim..(t + 1) * self.feature_dim]
    }

    /// Frames `range` widened to `f64`.
    pub fn frames_matrix(&self, range: std::ops::Range<usize>) -> Matrix {
        Matrix::from_f32(
            &self.features[range.start * self.feature_dim..range.end * self.feature_dim],
            self.feature_dim,
        )
    }

    /// Gathers arbitrary frames into one batch.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.feature_dim);
        for (r, &t) in indices.iter().enumerate() {
            m.row_mut(r)
                .iter_mut()
                .zip(self.frame(t))
                .for_each(|(o, &v)| *o = f64::from(v));
        }
        m
    }

    /// Every `stride`-th frame starting at 0, with the frame rate scaled down.
    pub fn subsample(&self, stride: usize) -> Result<FrameSequence> {
        if stride == 0 {
            return Err(Error::InvalidConfig("subsampling stride must be positive".into()));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let features = keep.iter().flat_map(|&t| self.frame(t).iter().copied()).collect();
        let labels = self.labels.as_ref().map(|l| keep.iter().map(|&t| l[t]).collect());
        FrameSequence::new(self.video_id.clone(), self.fps / stride as f32, self.feature_dim, features, labels)
    }

    pub fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::MissingLabels(self.video_id.clone()))
    }
}

/// Dataset partition. `A`, `B`, `C` are training sets and `D` is held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    A,
    B,
    C,
    D,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::A, Split::B, Split::C, Split::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::A => "A",
            Split::B => "B",
            Split::C => "C",
            Split::D => "D",
        }
    }

    /// Parses a set of splits such as `"AB"` or `"ABC"`.
    pub fn parse_set(s: &str) -> Result<Vec<Split>> {
        let mut out = Vec::new();
        for ch in s.chars() {
            let split = Split::from_char(ch)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown split {ch:?} in {s:?}")))?;
            if !out.contains(&split) {
                out.push(split);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("empty split set".into()));
        }
        out.sort();
        Ok(out)
    }

    pub fn from_char(c: char) -> Option<Split> {
        match c {
            'A' => Some(Split::A),
            'B' => Some(Split::B),
            'C' => Some(Split::C),
            'D' => Some(Split::D),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

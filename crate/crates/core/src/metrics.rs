//! Phase segmentation metrics.
//!
//! Per video: frame accuracy, macro recall over phases present in the ground
//! truth, macro precision over phases that were predicted, and F1 as the
//! harmonic mean of the two macro values. F1 is computed per video and only
//! then averaged, so the mean F1 can sit below the harmonic mean of the mean
//! recall and mean precision. All values are percentages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts, rows indexed by ground truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_phases: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_phases + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.num_phases).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_phases).map(|t| self.get(t, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_phases).map(|p| self.get(p, p)).sum()
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_phases: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "ground truth vs. predictions",
            left: truth.len(),
            right: pred.len(),
        });
    }
    let mut counts = vec![0u64; num_phases * num_phases];
    for (&t, &p) in truth.iter().zip(pred) {
        for label in [t, p] {
            if label >= num_phases {
                return Err(Error::LabelOutOfRange { label, num_phases });
            }
        }
        counts[t * num_phases + p] += 1;
    }
    Ok(ConfusionMatrix { num_phases, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub f1: f64,
    /// `None` where the phase's precision or recall is undefined.
    pub per_phase_f1: Vec<Option<f64>>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p <= 0.0 || r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn video_metrics(truth: &[usize], pred: &[usize], num_phases: usize) -> Result<VideoMetrics> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("video has no frames"));
    }
    let cm = confusion_matrix(truth, pred, num_phases)?;
    let mut recalls = Vec::new();
    let mut precisions = Vec::new();
    let mut per_phase_f1 = Vec::with_capacity(num_phases);
    for k in 0..num_phases {
        let tp = cm.get(k, k) as f64;
        let in_truth = cm.row_sum(k);
        let predicted = cm.col_sum(k);
        let recall = (in_truth > 0).then(|| tp / in_truth as f64);
        let precision = (predicted > 0).then(|| tp / predicted as f64);
        recalls.extend(recall);
        precisions.extend(precision);
        per_phase_f1.push(match (precision, recall) {
            (Some(p), Some(r)) => Some(100.0 * harmonic(p, r)),
            _ => None,
        });
    }
    let macro_recall = 100.0 * mean(&recalls);
    let macro_precision = 100.0 * mean(&precisions);
    Ok(VideoMetrics {
        accuracy: 100.0 * cm.trace() as f64 / cm.total() as f64,
        macro_recall,
        macro_precision,
        f1: harmonic(macro_precision, macro_recall),
        per_phase_f1,
    })
}

/// Mean and sample standard deviation over the videos where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// `n − 1` denominator; `0.0` when only one value exists.
    pub std: Option<f64>,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: None,
                std: None,
                count,
            };
        }
        let m = mean(values);
        let std = if count == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        Self {
            mean: Some(m),
            std: Some(std),
            count,
        }
    }

    /// `67.8 ± 14.1` style, one decimal.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
            _ => "n/a".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub videos: usize,
    pub accuracy: Summary,
    pub recall: Summary,
    pub precision: Summary,
    pub f1: Summary,
    pub per_phase_f1: Vec<Summary>,
}

pub fn aggregate(videos: &[VideoMetrics]) -> Result<AggregateReport> {
    let Some(first) = videos.first() else {
        return Err(Error::EmptyInput("no videos to aggregate"));
    };
    let k = first.per_phase_f1.len();
    if let Some(bad) = videos.iter().find(|v| v.per_phase_f1.len() != k) {
        return Err(Error::LengthMismatch {
            what: "phase count across videos",
            left: k,
            right: bad.per_phase_f1.len(),
        });
    }
    let collect = |f: &dyn Fn(&VideoMetrics) -> f64| -> Summary {
        Summary::of(&videos.iter().map(f).collect::<Vec<_>>())
    };
    let per_phase_f1 = (0..k)
        .map(|p| Summary::of(&videos.iter().filter_map(|v| v.per_phase_f1[p]).collect::<Vec<_>>()))
        .collect();
    Ok(AggregateReport {
        videos: videos.len(),
        accuracy: collect(&|v| v.accuracy),
        recall: collect(&|v| v.macro_recall),
        precision: collect(&|v| v.macro_precision),
        f1: collect(&|v| v.f1),
        per_phase_f1,
    })
}

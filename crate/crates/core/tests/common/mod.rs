//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod checks;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tcssl_core::nn::{Gradients, Matrix, Parameterized};
use tcssl_core::FrameSequence;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero components
/// from dominating.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

/// Central differences of a scalar function of a vector.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of `f` w.r.t. every parameter of `model`.
pub fn numeric_param_grads<M: Parameterized>(model: &mut M, f: impl Fn(&M) -> f64) -> Gradients {
    let mut out = model.zero_grads();
    for (ti, grad) in out.tensors.iter_mut().enumerate() {
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = model.tensors()[ti].data[i];
            model.tensors_mut()[ti].data[i] = orig + FD_STEP;
            let up = f(model);
            model.tensors_mut()[ti].data[i] = orig - FD_STEP;
            let down = f(model);
            model.tensors_mut()[ti].data[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
    }
    out
}

pub fn max_rel_err_grads(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.tensors
        .iter()
        .zip(&b.tensors)
        .map(|(x, y)| max_rel_err(x, y, floor))
        .fold(0.0, f64::max)
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| random_vec(rng, cols, scale)).collect();
    Matrix::from_rows(&data).unwrap()
}

/// Unlabeled random-walk video.
pub fn random_video<R: Rng>(rng: &mut R, id: &str, frames: usize, dim: usize) -> FrameSequence {
    let mut x = vec![0.0f32; dim];
    let mut features = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        for v in x.iter_mut() {
            *v += rng.random_range(-0.3f32..0.3);
        }
        features.extend_from_slice(&x);
    }
    FrameSequence::new(id, 1.0, dim, features, None).unwrap()
}

/// P-value of a chi-square goodness-of-fit test of `counts` against the
/// uniform law on its bins.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Frame metrics by direct counting over frames, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub per_phase_f1: Vec<Option<f64>>,
}

pub fn brute_force_metrics(truth: &[usize], pred: &[usize], k: usize) -> BruteMetrics {
    let n = truth.len();
    let correct = (0..n).filter(|&i| truth[i] == pred[i]).count();
    let (mut recalls, mut precisions, mut per_phase) = (vec![], vec![], vec![]);
    for phase in 0..k {
        let tp = (0..n).filter(|&i| truth[i] == phase && pred[i] == phase).count() as f64;
        let fneg = (0..n).filter(|&i| truth[i] == phase && pred[i] != phase).count() as f64;
        let fpos = (0..n).filter(|&i| truth[i] != phase && pred[i] == phase).count() as f64;
        let r = (tp + fneg > 0.0).then(|| tp / (tp + fneg));
        let p = (tp + fpos > 0.0).then(|| tp / (tp + fpos));
        if let Some(r) = r {
            recalls.push(r);
        }
        if let Some(p) = p {
            precisions.push(p);
        }
        per_phase.push(match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(100.0 * 2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        });
    }
    let avg = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let (r, p) = (avg(&recalls), avg(&precisions));
    BruteMetrics {
        accuracy: 100.0 * correct as f64 / n as f64,
        recall: r,
        precision: p,
        f1: if p > 0.0 && r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 },
        per_phase_f1: per_phase,
    }
}

/// Sample standard deviation, `n − 1` denominator.
pub fn sample_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

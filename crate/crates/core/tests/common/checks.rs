//! Measurement routines behind the gradient, sampler, model and metric suites.
//! Each returns the measured quantity so callers choose how to report it.

use rand::Rng;
use tcssl_core::losses::{
    combined_loss, contrastive_loss, l2_distance, loss_and_gradients, loss_value, ranking_loss,
    second_order_contrastive_loss,
};
use tcssl_core::metrics::{aggregate, video_metrics};
use tcssl_core::nn::{softmax_cross_entropy, EncoderArch, EncoderModel, LstmState, Matrix, Parameterized, PhaseArch, PhaseModel};
use tcssl_core::rng::derive;
use tcssl_core::sampler::{sample_first_order, sample_second_order};
use tcssl_core::train::tuple_batch_gradients;
use tcssl_core::{Error, LossConfig, LossKind, SamplerConfig};

use super::*;

/// Distances and hinge arguments kept at least this far from their kinks.
const KINK_CLEARANCE: f64 = 1e-3;
/// Relative-error floor for gradient comparisons.
pub const GRAD_FLOOR: f64 = 1e-6;

pub struct Example {
    pub name: &'static str,
    pub got: f64,
    pub expected: f64,
}

/// Hand-evaluated loss examples at `m_c = m_r = 2`, `ω = 0.5`.
pub fn loss_examples() -> Vec<Example> {
    let cfg = LossConfig::default();
    let zero_w = LossConfig {
        second_order_weight: 0.0,
        ..cfg
    };
    let v = [0.7, -0.2];
    let (a, b, c, d) = ([0.1, 0.9], [0.4, 1.0], [0.2, -0.5], [1.5, 0.3]);
    let ex = |name, got: tcssl_core::Result<f64>, expected| Example {
        name,
        got: got.unwrap(),
        expected,
    };
    vec![
        ex("distance 3-4-5", l2_distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0),
        ex("distance to self", l2_distance(&v, &v), 0.0),
        ex("contrastive, far hinge inactive", contrastive_loss(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 4.0], &cfg), 1.0),
        ex("contrastive, far at margin", contrastive_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 3.0], &cfg), 0.0),
        ex("contrastive, both terms", contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &cfg), 6.0),
        ex("ranking, satisfied", ranking_loss(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 4.0], &cfg), 0.0),
        ex("ranking, violated", ranking_loss(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &cfg), 6.0),
        ex("ranking, near equals far", ranking_loss(&[0.3, -1.0], &[2.0, 5.0], &[2.0, 5.0], &cfg), 2.0),
        ex(
            "second order, inactive",
            second_order_contrastive_loss(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[5.0, 0.0], &cfg),
            0.0,
        ),
        ex("second order, all equal", second_order_contrastive_loss(&v, &v, &v, &v, &cfg), 2.0),
        ex(
            "second order, both terms",
            second_order_contrastive_loss(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0], &[2.0, 0.0], &cfg),
            3.0,
        ),
        ex(
            "combined, zero weight",
            combined_loss(&a, &b, &c, &d, &zero_w),
            contrastive_loss(&a, &b, &d, &zero_w).unwrap(),
        ),
        ex(
            "combined, first example",
            combined_loss(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[5.0, 0.0], &cfg),
            1.0,
        ),
        ex("combined, all equal", combined_loss(&[3.0, 3.0], &[3.0, 3.0], &[3.0, 3.0], &[3.0, 3.0], &cfg), 3.0),
    ]
}

/// Mismatches between the second-order loss and the contrastive loss on
/// difference vectors, over `n` random inputs; compared with `==`.
pub fn second_order_equivalence_failures(n: usize, seed: u64) -> usize {
    let mut rng = derive(seed, 1);
    let cfg = LossConfig::default();
    (0..n)
        .filter(|_| {
            let d = rng.random_range(1..8);
            let [a, b, c, g]: [Vec<f64>; 4] = std::array::from_fn(|_| random_vec(&mut rng, d, 3.0));
            let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
            let lhs = second_order_contrastive_loss(&a, &b, &c, &g, &cfg).unwrap();
            let rhs = contrastive_loss(&diff(&a, &b), &diff(&b, &c), &diff(&b, &g), &cfg).unwrap();
            lhs != rhs
        })
        .count()
}

/// Distances and hinge arguments of a loss evaluation, all of which must
/// stay clear of zero for central differences to be valid.
fn kink_distances(kind: LossKind, x: &[Vec<f64>], cfg: &LossConfig) -> Vec<f64> {
    let d = |a: &[f64], b: &[f64]| l2_distance(a, b).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>();
    let first = |t: &[f64], n: &[f64], f: &[f64], m: f64| vec![d(t, n), d(t, f), m - d(t, f)];
    match kind {
        LossKind::Contrastive => first(&x[0], &x[1], &x[2], cfg.margin_contrastive),
        LossKind::Ranking => {
            let (dn, df) = (d(&x[0], &x[1]), d(&x[0], &x[2]));
            vec![dn, df, dn - df + cfg.margin_ranking]
        }
        LossKind::Contrastive2 | LossKind::Combined => {
            let mut out = first(
                &diff(&x[0], &x[1]),
                &diff(&x[1], &x[2]),
                &diff(&x[1], &x[3]),
                cfg.margin_contrastive,
            );
            if kind == LossKind::Combined {
                out.extend(first(&x[0], &x[1], &x[3], cfg.margin_contrastive));
            }
            out
        }
    }
}

/// Worst relative error of analytic loss gradients against central
/// differences over `points` random non-degenerate inputs.
pub fn loss_gradient_worst(kind: LossKind, points: usize, seed: u64) -> f64 {
    let mut rng = derive(seed, 2);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < points {
        let d = rng.random_range(1..7);
        let x: Vec<Vec<f64>> = (0..kind.arity()).map(|_| random_vec(&mut rng, d, 2.0)).collect();
        if kink_distances(kind, &x, &cfg).iter().any(|v| v.abs() < KINK_CLEARANCE) {
            continue;
        }
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let (_, analytic) = loss_and_gradients(kind, &refs, &cfg).unwrap();
        for (i, g) in analytic.iter().enumerate() {
            let numeric = numeric_grad(&x[i], |xi| {
                let mut inputs: Vec<&[f64]> = refs.clone();
                inputs[i] = xi;
                loss_value(kind, &inputs, &cfg).unwrap()
            });
            worst = worst.max(max_rel_err(g, &numeric, GRAD_FLOOR));
        }
        done += 1;
    }
    worst
}

fn random_encoder_arch<R: Rng>(rng: &mut R) -> EncoderArch {
    EncoderArch {
        input_dim: rng.random_range(2..6),
        hidden: (0..rng.random_range(1..3)).map(|_| rng.random_range(3..7)).collect(),
        embedding_dim: rng.random_range(2..5),
    }
}

/// Worst relative error of encoder parameter and input gradients of
/// `Σ U ⊙ f(X)` over `configs` random encoders.
pub fn encoder_gradient_worst(configs: usize, seed: u64) -> f64 {
    let mut rng = derive(seed, 3);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let arch = random_encoder_arch(&mut rng);
        let mut enc = EncoderModel::new(&arch, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 4, arch.input_dim, 2.0);
        let u = random_matrix(&mut rng, 4, arch.embedding_dim, 1.0);
        let objective = |e: &EncoderModel, x: &Matrix| -> f64 {
            let y = e.forward_batch(x).unwrap();
            y.data.iter().zip(&u.data).map(|(a, b)| a * b).sum()
        };
        let cache = enc.forward_cached(&x).unwrap();
        let mut analytic = enc.zero_grads();
        enc.backward(&cache, &u, &mut analytic.tensors).unwrap();
        let numeric = numeric_param_grads(&mut enc, |e| objective(e, &x));
        worst = worst.max(max_rel_err_grads(&analytic, &numeric, GRAD_FLOOR));

        let dx = enc.input_gradient(&cache, &u).unwrap();
        let numeric_x = numeric_grad(&x.data, |flat| {
            let m = Matrix {
                rows: x.rows,
                cols: x.cols,
                data: flat.to_vec(),
            };
            objective(&enc, &m)
        });
        worst = worst.max(max_rel_err(&dx.data, &numeric_x, GRAD_FLOOR));
    }
    worst
}

/// Worst relative errors of phase-model gradients, split by parameter group.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseGradientErrors {
    pub encoder: f64,
    pub lstm: f64,
    pub classifier: f64,
}

/// Chunk cross-entropy summed over frames, from a random nonzero entering
/// state, against central differences; plus summed logits for the LSTM.
pub fn phase_gradient_worst(configs: usize, seed: u64) -> PhaseGradientErrors {
    let mut rng = derive(seed, 4);
    let mut out = PhaseGradientErrors::default();
    for c in 0..configs {
        let k = rng.random_range(2..5);
        let arch = PhaseArch {
            encoder: random_encoder_arch(&mut rng),
            lstm_hidden: rng.random_range(1..5),
            num_phases: k,
        };
        let mut model = PhaseModel::new(&arch, &mut rng).unwrap();
        let steps = rng.random_range(1..7);
        let frames = random_matrix(&mut rng, steps, arch.encoder.input_dim, 2.0);
        let state = LstmState {
            h: random_vec(&mut rng, arch.lstm_hidden, 0.9),
            c: random_vec(&mut rng, arch.lstm_hidden, 2.0),
        };
        let labels: Vec<usize> = (0..steps).map(|_| rng.random_range(0..k)).collect();
        // alternate between the classification loss and summed logits
        let summed_logits = c % 2 == 1;
        let objective = |m: &PhaseModel| -> f64 {
            let o = m.forward_chunk(&frames, &state).unwrap();
            if summed_logits {
                o.logits.data.iter().sum()
            } else {
                (0..steps)
                    .map(|t| softmax_cross_entropy(o.logits.row(t), labels[t]).unwrap().0)
                    .sum()
            }
        };
        let (o, cache) = model.forward_chunk_cached(&frames, &state).unwrap();
        let mut dlogits = Matrix::zeros(steps, k);
        for (t, &label) in labels.iter().enumerate().take(steps) {
            let g = if summed_logits {
                vec![1.0; k]
            } else {
                softmax_cross_entropy(o.logits.row(t), label).unwrap().1
            };
            dlogits.row_mut(t).copy_from_slice(&g);
        }
        let mut analytic = model.zero_grads();
        model.backward_chunk(&cache, &dlogits, &mut analytic).unwrap();
        let numeric = numeric_param_grads(&mut model, objective);
        let names: Vec<String> = model.tensors().iter().map(|t| t.name.clone()).collect();
        for ((name, a), n) in names.iter().zip(&analytic.tensors).zip(&numeric.tensors) {
            let e = max_rel_err(a, n, GRAD_FLOOR);
            let slot = if name.starts_with("lstm.") {
                &mut out.lstm
            } else if name.starts_with("classifier.") {
                &mut out.classifier
            } else {
                &mut out.encoder
            };
            *slot = slot.max(e);
        }
    }
    out
}

/// Worst relative error of one pretraining batch gradient (mean tuple loss
/// through the shared encoder) against central differences.
pub fn pretrain_step_gradient_worst(kind: LossKind, configs: usize, seed: u64) -> f64 {
    let mut rng = derive(seed, 5 + kind.arity() as u64 + kind as u64);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < configs {
        let arch = random_encoder_arch(&mut rng);
        let mut enc = EncoderModel::new(&arch, &mut rng).unwrap();
        let n = rng.random_range(1..5);
        let positions: Vec<Matrix> = (0..kind.arity())
            .map(|_| random_matrix(&mut rng, n, arch.input_dim, 3.0))
            .collect();
        let embedded: Vec<Matrix> = positions.iter().map(|p| enc.forward_batch(p).unwrap()).collect();
        let degenerate = (0..n).any(|r| {
            let x: Vec<Vec<f64>> = embedded.iter().map(|m| m.row(r).to_vec()).collect();
            kink_distances(kind, &x, &cfg).iter().any(|v| v.abs() < KINK_CLEARANCE)
        });
        if degenerate {
            continue;
        }
        let mut analytic = enc.zero_grads();
        tuple_batch_gradients(&enc, kind, &cfg, &positions, &mut analytic).unwrap();
        let numeric = numeric_param_grads(&mut enc, |e| {
            let mut g = e.zero_grads();
            tuple_batch_gradients(e, kind, &cfg, &positions, &mut g).unwrap()
        });
        worst = worst.max(max_rel_err_grads(&analytic, &numeric, GRAD_FLOOR));
        done += 1;
    }
    worst
}

/// Invariant violations and the anchor's chi-square p-value over `draws`
/// sampled tuples.
#[derive(Debug, Clone)]
pub struct SamplerStats {
    pub out_of_range: usize,
    pub gamma_too_small: usize,
    pub delta_too_large: usize,
    /// Uniformity of `t` over the anchors that admit a distant frame.
    pub anchor_p_value: f64,
    pub anchor_support: usize,
}

pub fn sampler_stats(frames: usize, cfg: &SamplerConfig, second_order: bool, draws: usize, seed: u64) -> SamplerStats {
    let mut rng = derive(seed, 6);
    let (df, gf) = (cfg.delta_frames() as i64, cfg.gamma_frames() as i64);
    let mut counts = vec![0u64; frames];
    let mut s = SamplerStats {
        out_of_range: 0,
        gamma_too_small: 0,
        delta_too_large: 0,
        anchor_p_value: 0.0,
        anchor_support: 0,
    };
    for _ in 0..draws {
        let tuple = if second_order {
            sample_second_order(frames, cfg, &mut rng)
        } else {
            sample_first_order(frames, cfg, &mut rng)
        }
        .unwrap();
        let ix = tuple.indices();
        s.out_of_range += ix.iter().filter(|&&i| i >= frames).count();
        let (delta, gamma) = tuple.offsets();
        s.gamma_too_small += usize::from(gamma.abs() < gf);
        s.delta_too_large += usize::from(delta.abs() > df);
        if second_order && ix[2] as i64 - ix[0] as i64 != 2 * delta {
            s.out_of_range += 1;
        }
        counts[ix[0].min(frames - 1)] += 1;
    }
    // anchors with a frame at least γ_f away
    let feasible: Vec<u64> = (0..frames as i64)
        .filter(|&t| t >= gf || frames as i64 - 1 - t >= gf)
        .map(|t| counts[t as usize])
        .collect();
    s.anchor_support = feasible.len();
    s.anchor_p_value = chi_square_uniform_p(&feasible);
    s
}

/// Lengths `T` in `range` where the sampler's `NoValidDistantFrame` verdict
/// disagrees with `T − 1 < γ_f`.
pub fn distant_frame_error_mismatches(cfg: &SamplerConfig, range: std::ops::Range<usize>) -> Vec<usize> {
    let gf = cfg.gamma_frames();
    let mut rng = derive(0, 7);
    range
        .filter(|&t| {
            let err = matches!(
                sample_first_order(t, cfg, &mut rng),
                Err(Error::NoValidDistantFrame { .. })
            );
            let expected = t == 0 || t - 1 < gf;
            err != expected
        })
        .collect()
}

/// Largest elementwise gap between chunked and whole-sequence logits over
/// `videos` random videos.
pub fn chunked_vs_whole_gap(videos: usize, chunk: usize, seed: u64) -> f64 {
    let mut rng = derive(seed, 8);
    let arch = PhaseArch {
        encoder: EncoderArch {
            input_dim: 16,
            hidden: vec![64],
            embedding_dim: 32,
        },
        lstm_hidden: 64,
        num_phases: 7,
    };
    let mut worst = 0.0f64;
    for v in 0..videos {
        let model = PhaseModel::new(&arch, &mut rng).unwrap();
        let frames = rng.random_range(129..600);
        let video = random_video(&mut rng, &format!("v{v}"), frames, 16);
        let whole = model
            .forward_chunk(&video.frames_matrix(0..frames), &model.zero_state())
            .unwrap();
        let mut state = model.zero_state();
        let mut start = 0;
        while start < frames {
            let end = (start + chunk).min(frames);
            let out = model.forward_chunk(&video.frames_matrix(start..end), &state).unwrap();
            for t in start..end {
                for (a, b) in out.logits.row(t - start).iter().zip(whole.logits.row(t)) {
                    worst = worst.max((a - b).abs());
                }
            }
            state = out.state;
            start = end;
        }
    }
    worst
}

/// Largest gap between the metrics module and brute-force counting over
/// `instances` random prediction problems.
pub fn metrics_oracle_gap(instances: usize, seed: u64) -> f64 {
    let mut rng = derive(seed, 9);
    let mut worst = 0.0f64;
    let gap = |a: f64, b: f64| (a - b).abs();
    for _ in 0..instances {
        let k = rng.random_range(2..8);
        let n = rng.random_range(1..501);
        // skewed predictions so that some phases go unpredicted
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..k).min(k - 1) / 2 })
            .collect();
        let m = video_metrics(&truth, &pred, k).unwrap();
        let b = brute_force_metrics(&truth, &pred, k);
        for (x, y) in [
            (m.accuracy, b.accuracy),
            (m.macro_recall, b.recall),
            (m.macro_precision, b.precision),
            (m.f1, b.f1),
        ] {
            worst = worst.max(gap(x, y));
        }
        for (x, y) in m.per_phase_f1.iter().zip(&b.per_phase_f1) {
            match (x, y) {
                (Some(x), Some(y)) => worst = worst.max(gap(*x, *y)),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

/// Aggregate F1 against the harmonic mean of aggregate precision and recall
/// on videos whose per-video F1s are dispersed.
pub fn aggregate_f1_consistency() -> (f64, f64) {
    // precision-heavy and recall-starved videos
    let videos = [
        video_metrics(&[0, 0, 1, 1], &[0, 0, 0, 1], 3).unwrap(),
        video_metrics(&[0, 0, 0, 0, 1, 2], &[0, 0, 0, 0, 0, 0], 3).unwrap(),
    ];
    let r = aggregate(&videos).unwrap();
    let (p, rec) = (r.precision.mean.unwrap(), r.recall.mean.unwrap());
    (r.f1.mean.unwrap(), 2.0 * p * rec / (p + rec))
}

//! Distance and temporal-coherence losses over frame embeddings.
//!
//! All losses are built on the unsquared Euclidean distance. Non-differentiable
//! points use fixed conventions: the distance gradient is the zero vector when
//! the two embeddings coincide, and a hinge contributes no gradient when its
//! argument is exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Margins and weights of the temporal-coherence losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Margin `m_c` of the contrastive hinge.
    pub margin_contrastive: f64,
    /// Margin `m_r` of the ranking hinge.
    pub margin_ranking: f64,
    /// Weight `ω` of the second-order term in the combined loss.
    pub second_order_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_contrastive: 2.0,
            margin_ranking: 2.0,
            second_order_weight: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.margin_contrastive) || !ok(self.margin_ranking) || !ok(self.second_order_weight) {
            return Err(Error::InvalidConfig(format!(
                "margins and second-order weight must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which loss a tuple is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `D(t, near) + max(0, m_c - D(t, far))` on `(t, near, far)`.
    Contrastive,
    /// `max(0, D(t, near) - D(t, far) + m_r)` on `(t, near, far)`.
    Ranking,
    /// Contrastive loss on first differences, on `(t, t+Δ, t+2Δ, t+Γ)`.
    Contrastive2,
    /// `L_c + ω·L_c2` on `(t, t+Δ, t+2Δ, t+Γ)`.
    Combined,
}

impl LossKind {
    /// Number of embeddings the loss consumes.
    pub fn arity(self) -> usize {
        match self {
            LossKind::Contrastive | LossKind::Ranking => 3,
            LossKind::Contrastive2 | LossKind::Combined => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Ranking => "ranking",
            LossKind::Contrastive2 => "contrastive2",
            LossKind::Combined => "combined",
        }
    }
}

fn same_dims(vs: &[&[f64]]) -> Result<usize> {
    let d = vs[0].len();
    for v in &vs[1..] {
        check_dim(d, v.len())?;
    }
    Ok(d)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between two embeddings.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(dist_unchecked(a, b))
}

/// Unit direction `(a - b) / |a - b|`, or zero when `a == b`.
fn dist_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let d = dist_unchecked(a, b);
    if d == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    (d, a.iter().zip(b).map(|(x, y)| (x - y) / d).collect())
}

pub fn contrastive_loss(t: &[f64], near: &[f64], far: &[f64], cfg: &LossConfig) -> Result<f64> {
    same_dims(&[t, near, far])?;
    Ok(contrastive_unchecked(t, near, far, cfg.margin_contrastive))
}

fn contrastive_unchecked(t: &[f64], near: &[f64], far: &[f64], margin: f64) -> f64 {
    dist_unchecked(t, near) + (margin - dist_unchecked(t, far)).max(0.0)
}

pub fn ranking_loss(t: &[f64], near: &[f64], far: &[f64], cfg: &LossConfig) -> Result<f64> {
    same_dims(&[t, near, far])?;
    Ok((dist_unchecked(t, near) - dist_unchecked(t, far) + cfg.margin_ranking).max(0.0))
}

/// Contrastive loss applied to `(t - td, td - t2d, td - tg)`.
pub fn second_order_contrastive_loss(
    t: &[f64],
    td: &[f64],
    t2d: &[f64],
    tg: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    same_dims(&[t, td, t2d, tg])?;
    Ok(contrastive_unchecked(
        &sub(t, td),
        &sub(td, t2d),
        &sub(td, tg),
        cfg.margin_contrastive,
    ))
}

/// `contrastive(t, td, tg) + ω · second_order(t, td, t2d, tg)`.
pub fn combined_loss(t: &[f64], td: &[f64], t2d: &[f64], tg: &[f64], cfg: &LossConfig) -> Result<f64> {
    let first = contrastive_loss(t, td, tg, cfg)?;
    let second = second_order_contrastive_loss(t, td, t2d, tg, cfg)?;
    Ok(first + cfg.second_order_weight * second)
}

fn check_arity(kind: LossKind, inputs: &[&[f64]]) -> Result<()> {
    if inputs.len() != kind.arity() {
        return Err(Error::WrongInputCount {
            kind: kind.name(),
            expected: kind.arity(),
            got: inputs.len(),
        });
    }
    Ok(())
}

/// Loss value of `kind` on `inputs`.
pub fn loss_value(kind: LossKind, inputs: &[&[f64]], cfg: &LossConfig) -> Result<f64> {
    check_arity(kind, inputs)?;
    match kind {
        LossKind::Contrastive => contrastive_loss(inputs[0], inputs[1], inputs[2], cfg),
        LossKind::Ranking => ranking_loss(inputs[0], inputs[1], inputs[2], cfg),
        LossKind::Contrastive2 => {
            second_order_contrastive_loss(inputs[0], inputs[1], inputs[2], inputs[3], cfg)
        }
        LossKind::Combined => combined_loss(inputs[0], inputs[1], inputs[2], inputs[3], cfg),
    }
}

/// Value and gradients of the contrastive loss w.r.t. `(t, near, far)`.
fn contrastive_grads(t: &[f64], near: &[f64], far: &[f64], margin: f64) -> (f64, [Vec<f64>; 3]) {
    let n = t.len();
    let (d_near, u_near) = dist_grad(t, near);
    let (d_far, u_far) = dist_grad(t, far);
    let hinge = margin - d_far;
    let mut gt = u_near.clone();
    let g_near: Vec<f64> = u_near.iter().map(|v| -v).collect();
    let mut g_far = vec![0.0; n];
    if hinge > 0.0 {
        for (g, u) in gt.iter_mut().zip(&u_far) {
            *g -= u;
        }
        g_far.copy_from_slice(&u_far);
    }
    (d_near + hinge.max(0.0), [gt, g_near, g_far])
}

fn ranking_grads(t: &[f64], near: &[f64], far: &[f64], margin: f64) -> (f64, [Vec<f64>; 3]) {
    let n = t.len();
    let (d_near, u_near) = dist_grad(t, near);
    let (d_far, u_far) = dist_grad(t, far);
    let arg = d_near - d_far + margin;
    if arg <= 0.0 {
        return (0.0, [vec![0.0; n], vec![0.0; n], vec![0.0; n]]);
    }
    let gt = (0..n).map(|i| u_near[i] - u_far[i]).collect();
    let g_near = u_near.iter().map(|v| -v).collect();
    (arg, [gt, g_near, u_far])
}

fn second_order_grads(
    t: &[f64],
    td: &[f64],
    t2d: &[f64],
    tg: &[f64],
    margin: f64,
) -> (f64, [Vec<f64>; 4]) {
    let (value, [gu, gv, gw]) = contrastive_grads(&sub(t, td), &sub(td, t2d), &sub(td, tg), margin);
    let n = t.len();
    let g_td = (0..n).map(|i| -gu[i] + gv[i] + gw[i]).collect();
    let g_t2d = gv.iter().map(|v| -v).collect();
    let g_tg = gw.iter().map(|v| -v).collect();
    (value, [gu, g_td, g_t2d, g_tg])
}

/// Loss value together with the gradient w.r.t. every input embedding.
pub fn loss_and_gradients(
    kind: LossKind,
    inputs: &[&[f64]],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_arity(kind, inputs)?;
    same_dims(inputs)?;
    let out = match kind {
        LossKind::Contrastive => {
            let (v, g) = contrastive_grads(inputs[0], inputs[1], inputs[2], cfg.margin_contrastive);
            (v, g.to_vec())
        }
        LossKind::Ranking => {
            let (v, g) = ranking_grads(inputs[0], inputs[1], inputs[2], cfg.margin_ranking);
            (v, g.to_vec())
        }
        LossKind::Contrastive2 => {
            let (v, g) = second_order_grads(
                inputs[0],
                inputs[1],
                inputs[2],
                inputs[3],
                cfg.margin_contrastive,
            );
            (v, g.to_vec())
        }
        LossKind::Combined => {
            let (v1, [g_t, g_td, g_tg]) =
                contrastive_grads(inputs[0], inputs[1], inputs[3], cfg.margin_contrastive);
            let (v2, g2) = second_order_grads(
                inputs[0],
                inputs[1],
                inputs[2],
                inputs[3],
                cfg.margin_contrastive,
            );
            let w = cfg.second_order_weight;
            let n = inputs[0].len();
            let first = [g_t, g_td, vec![0.0; n], g_tg];
            let grads = first
                .iter()
                .zip(g2.iter())
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + w * y).collect())
                .collect();
            (v1 + w * v2, grads)
        }
    };
    Ok(out)
}

/// Analytic (sub)gradients of `kind` w.r.t. each input embedding.
pub fn loss_gradients(kind: LossKind, inputs: &[&[f64]], cfg: &LossConfig) -> Result<Vec<Vec<f64>>> {
    loss_and_gradients(kind, inputs, cfg).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CFG: LossConfig = LossConfig {
        margin_contrastive: 2.0,
        margin_ranking: 2.0,
        second_order_weight: 0.5,
    };

    #[test]
    fn distance_examples() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_distance(&[1.5, -2.0, 7.0], &[1.5, -2.0, 7.0]).unwrap(), 0.0);
        assert!(matches!(
            l2_distance(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn distance_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut acc = 0.0;
            for i in 0..8 {
                let d = a[i] - b[i];
                acc += d * d;
            }
            assert_abs_diff_eq!(l2_distance(&a, &b).unwrap(), acc.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn contrastive_examples() {
        let l = contrastive_loss(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 4.0], &CFG).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        let l = contrastive_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 3.0], &CFG).unwrap();
        assert_eq!(l, 0.0);
        let l = contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &CFG).unwrap();
        assert_abs_diff_eq!(l, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn ranking_examples() {
        let l = ranking_loss(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 4.0], &CFG).unwrap();
        assert_eq!(l, 0.0);
        let l = ranking_loss(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &CFG).unwrap();
        assert_abs_diff_eq!(l, 6.0, epsilon = 1e-12);
        let l = ranking_loss(&[0.3, -1.0], &[2.0, 5.0], &[2.0, 5.0], &CFG).unwrap();
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn second_order_examples() {
        let l = second_order_contrastive_loss(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[5.0, 0.0], &CFG)
            .unwrap();
        assert_eq!(l, 0.0);
        let v = [0.7, -0.2];
        let l = second_order_contrastive_loss(&v, &v, &v, &v, &CFG).unwrap();
        assert_abs_diff_eq!(l, 2.0, epsilon = 1e-12);
        let l = second_order_contrastive_loss(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0], &[2.0, 0.0], &CFG)
            .unwrap();
        assert_abs_diff_eq!(l, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn combined_examples() {
        let zero_w = LossConfig {
            second_order_weight: 0.0,
            ..CFG
        };
        let (a, b, c, d) = ([0.1, 0.9], [0.4, 1.0], [0.2, -0.5], [1.5, 0.3]);
        assert_eq!(
            combined_loss(&a, &b, &c, &d, &zero_w).unwrap(),
            contrastive_loss(&a, &b, &d, &zero_w).unwrap()
        );
        let l = combined_loss(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[5.0, 0.0], &CFG).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        let v = [3.0, 3.0];
        assert_abs_diff_eq!(combined_loss(&v, &v, &v, &v, &CFG).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_and_arity_errors() {
        assert!(contrastive_loss(&[0.0], &[0.0, 0.0], &[0.0], &CFG).is_err());
        assert!(matches!(
            loss_gradients(LossKind::Combined, &[&[0.0], &[0.0], &[0.0]], &CFG),
            Err(Error::WrongInputCount { expected: 4, got: 3, .. })
        ));
    }

    #[test]
    fn gradient_conventions_at_degenerate_points() {
        // F_t == F_near: distance term contributes nothing
        let g = loss_gradients(
            LossKind::Contrastive,
            &[&[1.0, 2.0], &[1.0, 2.0], &[10.0, 2.0]],
            &CFG,
        )
        .unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
        // flat ranking region
        let g = loss_gradients(LossKind::Ranking, &[&[0.0, 0.0], &[0.0, 1.0], &[0.0, 4.0]], &CFG).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    fn finite_difference(kind: LossKind, inputs: &[Vec<f64>], cfg: &LossConfig, h: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for k in 0..inputs.len() {
            let mut gk = Vec::new();
            for i in 0..inputs[k].len() {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[k][i] += h;
                minus[k][i] -= h;
                let p: Vec<&[f64]> = plus.iter().map(Vec::as_slice).collect();
                let m: Vec<&[f64]> = minus.iter().map(Vec::as_slice).collect();
                gk.push(
                    (loss_value(kind, &p, cfg).unwrap() - loss_value(kind, &m, cfg).unwrap()) / (2.0 * h),
                );
            }
            out.push(gk);
        }
        out
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [
            LossKind::Contrastive,
            LossKind::Ranking,
            LossKind::Contrastive2,
            LossKind::Combined,
        ] {
            for _ in 0..100 {
                let inputs: Vec<Vec<f64>> = (0..kind.arity())
                    .map(|_| (0..5).map(|_| rng.random_range(-1.5..1.5)).collect())
                    .collect();
                let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
                let analytic = loss_gradients(kind, &refs, &CFG).unwrap();
                let numeric = finite_difference(kind, &inputs, &CFG, 1e-5);
                for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
                    assert!(rel < 1e-4, "{kind:?}: analytic {a} vs numeric {n}");
                }
            }
        }
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_translation_invariant(
            a in vec_strategy(4), b in vec_strategy(4), c in vec_strategy(4), g in vec_strategy(4),
            shift in vec_strategy(4),
        ) {
            let shifted = |v: &Vec<f64>| -> Vec<f64> { v.iter().zip(&shift).map(|(x, s)| x + s).collect() };
            let (a2, b2, c2, g2) = (shifted(&a), shifted(&b), shifted(&c), shifted(&g));
            for kind in [LossKind::Contrastive, LossKind::Ranking, LossKind::Contrastive2, LossKind::Combined] {
                let orig: Vec<&[f64]> = [&a, &b, &c, &g][..kind.arity()].iter().map(|v| v.as_slice()).collect();
                let moved: Vec<&[f64]> = [&a2, &b2, &c2, &g2][..kind.arity()].iter().map(|v| v.as_slice()).collect();
                let l = loss_value(kind, &orig, &CFG).unwrap();
                prop_assert!(l >= 0.0);
                prop_assert!((l - loss_value(kind, &moved, &CFG).unwrap()).abs() < 1e-9);
            }
        }

        #[test]
        fn second_order_is_contrastive_on_differences(
            a in vec_strategy(3), b in vec_strategy(3), c in vec_strategy(3), g in vec_strategy(3),
        ) {
            let direct = second_order_contrastive_loss(&a, &b, &c, &g, &CFG).unwrap();
            let via = contrastive_loss(&sub(&a, &b), &sub(&b, &c), &sub(&b, &g), &CFG).unwrap();
            prop_assert_eq!(direct, via);
        }

        #[test]
        fn contrastive_monotone_in_far_distance(
            t in vec_strategy(3), near in vec_strategy(3), far in vec_strategy(3), push in 0.0f64..3.0,
        ) {
            let dir: Vec<f64> = sub(&far, &t);
            let len = dist_unchecked(&far, &t);
            prop_assume!(len > 1e-6);
            let farther: Vec<f64> = far.iter().zip(&dir).map(|(f, d)| f + push * d / len).collect();
            let before = contrastive_loss(&t, &near, &far, &CFG).unwrap();
            let after = contrastive_loss(&t, &near, &farther, &CFG).unwrap();
            prop_assert!(after <= before + 1e-12);
            // pulling the near frame away never lowers the loss
            let near_dir = sub(&near, &t);
            let nlen = dist_unchecked(&near, &t);
            prop_assume!(nlen > 1e-6);
            let farther_near: Vec<f64> = near.iter().zip(&near_dir).map(|(f, d)| f + push * d / nlen).collect();
            prop_assert!(contrastive_loss(&t, &farther_near, &far, &CFG).unwrap() >= before - 1e-12);
        }
    }
}

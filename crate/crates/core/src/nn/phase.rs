use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    fill_uniform_fan, sigmoid, Dense, EncoderArch, EncoderCache, EncoderModel, Gradients, Matrix,
    Parameterized, TensorView, TensorViewMut,
};
use crate::error::{check_dim, Error, Result};

/// Single-layer LSTM. Gate blocks are stacked in the order input, forget,
/// candidate, output, each `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4H × input_dim`, row-major.
    pub w_input: Vec<f64>,
    /// `4H × H`, row-major.
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_input: vec![0.0; 4 * hidden * input_dim],
            w_hidden: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Every gate unit sees `input_dim + hidden` inputs.
    pub fn init_uniform_fan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = self.input_dim + self.hidden;
        fill_uniform_fan(&mut self.w_input, fan_in, rng);
        fill_uniform_fan(&mut self.w_hidden, fan_in, rng);
        fill_uniform_fan(&mut self.bias, fan_in, rng);
    }

    /// Gate activations `(i, f, g, o)` concatenated, then the new state.
    fn step(&self, x: &[f64], state: &LstmState) -> (Vec<f64>, LstmState) {
        let h = self.hidden;
        let mut z = self.bias.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let wx = &self.w_input[r * self.input_dim..(r + 1) * self.input_dim];
            let wh = &self.w_hidden[r * h..(r + 1) * h];
            *zr += wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + wh.iter().zip(&state.h).map(|(w, v)| w * v).sum::<f64>();
        }
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = if (2 * h..3 * h).contains(&r) { zr.tanh() } else { sigmoid(*zr) };
        }
        let mut next = LstmState::zeros(h);
        for k in 0..h {
            let (i, f, g, o) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
            next.c[k] = f * state.c[k] + i * g;
            next.h[k] = o * next.c[k].tanh();
        }
        (z, next)
    }
}

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Sizes of a phase model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseArch {
    pub encoder: EncoderArch,
    pub lstm_hidden: usize,
    pub num_phases: usize,
}

impl PhaseArch {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.lstm_hidden == 0 || self.num_phases < 2 {
            return Err(Error::InvalidConfig(format!(
                "phase model needs lstm_hidden >= 1 and num_phases >= 2: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Frame encoder, LSTM and linear phase classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub encoder: EncoderModel,
    pub lstm: LstmCell,
    pub classifier: Dense,
    lstm_trainable: bool,
    classifier_trainable: bool,
}

/// Logits of a chunk and the state after its last frame.
#[derive(Debug, Clone)]
pub struct ChunkOutput {
    pub logits: Matrix,
    pub state: LstmState,
}

/// Everything a chunk's backward pass needs.
#[derive(Debug, Clone)]
pub struct ChunkCache {
    encoder: EncoderCache,
    /// Per step: gate activations.
    gates: Vec<Vec<f64>>,
    /// States entering each step followed by the final state (`len + 1` entries).
    states: Vec<LstmState>,
}

impl PhaseModel {
    pub fn zeros(arch: &PhaseArch) -> Result<Self> {
        arch.validate()?;
        let encoder = EncoderModel::zeros(&arch.encoder)?;
        Ok(Self::assemble(encoder, arch.lstm_hidden, arch.num_phases))
    }

    fn assemble(encoder: EncoderModel, lstm_hidden: usize, num_phases: usize) -> Self {
        let d = encoder.embedding_dim();
        Self {
            encoder,
            lstm: LstmCell::zeros(d, lstm_hidden),
            classifier: Dense::zeros(lstm_hidden, num_phases),
            lstm_trainable: true,
            classifier_trainable: true,
        }
    }

    /// Fully randomly initialized model.
    pub fn new<R: Rng + ?Sized>(arch: &PhaseArch, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        model.encoder.init_uniform_fan(rng);
        model.init_head(rng);
        Ok(model)
    }

    /// Wraps an existing (e.g. pretrained) encoder; only the LSTM and
    /// classifier are freshly initialized.
    pub fn with_encoder<R: Rng + ?Sized>(
        encoder: EncoderModel,
        lstm_hidden: usize,
        num_phases: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let arch = PhaseArch {
            encoder: encoder.arch(),
            lstm_hidden,
            num_phases,
        };
        arch.validate()?;
        let mut model = Self::assemble(encoder, lstm_hidden, num_phases);
        model.init_head(rng);
        Ok(model)
    }

    fn init_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.lstm.init_uniform_fan(rng);
        self.classifier.init_uniform_fan(rng);
    }

    /// Redraws every parameter from `(-1/√n, 1/√n)` with `n` the fan-in.
    pub fn init_uniform_fan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.encoder.init_uniform_fan(rng);
        self.init_head(rng);
    }

    pub fn arch(&self) -> PhaseArch {
        PhaseArch {
            encoder: self.encoder.arch(),
            lstm_hidden: self.lstm.hidden,
            num_phases: self.num_phases(),
        }
    }

    pub fn num_phases(&self) -> usize {
        self.classifier.n_out
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState::zeros(self.lstm.hidden)
    }

    fn check_state(&self, state: &LstmState) -> Result<()> {
        check_dim(self.lstm.hidden, state.h.len())?;
        check_dim(self.lstm.hidden, state.c.len())
    }

    /// One recurrent step on an already computed embedding.
    pub fn lstm_step(&self, embedding: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
        check_dim(self.lstm.input_dim, embedding.len())?;
        self.check_state(state)?;
        let (_, next) = self.lstm.step(embedding, state);
        let mut logits = vec![0.0; self.num_phases()];
        self.classifier.forward_into(&next.h, &mut logits);
        Ok((logits, next))
    }

    /// Encodes and unrolls consecutive frames left to right from `state`.
    pub fn forward_chunk(&self, frames: &Matrix, state: &LstmState) -> Result<ChunkOutput> {
        let (out, _) = self.forward_chunk_cached(frames, state)?;
        Ok(out)
    }

    pub fn forward_chunk_cached(&self, frames: &Matrix, state: &LstmState) -> Result<(ChunkOutput, ChunkCache)> {
        if frames.rows == 0 {
            return Err(Error::EmptyInput("chunk has no frames"));
        }
        self.check_state(state)?;
        let encoder = self.encoder.forward_cached(frames)?;
        let embeddings = encoder.output();
        let k = self.num_phases();
        let mut logits = Matrix::zeros(frames.rows, k);
        let mut gates = Vec::with_capacity(frames.rows);
        let mut states = Vec::with_capacity(frames.rows + 1);
        states.push(state.clone());
        for t in 0..frames.rows {
            let (z, next) = self.lstm.step(embeddings.row(t), states.last().unwrap());
            self.classifier.forward_into(&next.h, logits.row_mut(t));
            gates.push(z);
            states.push(next);
        }
        let out = ChunkOutput {
            logits,
            state: states.last().unwrap().clone(),
        };
        Ok((out, ChunkCache { encoder, gates, states }))
    }

    /// Truncated backpropagation through one chunk.
    ///
    /// `dlogits` is `∂L/∂logits` per frame. The state that entered the chunk is
    /// treated as a constant. Gradients of trainable layers are added to `grads`.
    pub fn backward_chunk(&self, cache: &ChunkCache, dlogits: &Matrix, grads: &mut Gradients) -> Result<()> {
        let steps = cache.gates.len();
        check_dim(steps, dlogits.rows)?;
        check_dim(self.num_phases(), dlogits.cols)?;
        let n_enc = 2 * self.encoder.layers().len();
        check_dim(n_enc + 5, grads.tensors.len())?;
        let (enc_grads, head_grads) = grads.tensors.split_at_mut(n_enc);
        let [g_wx, g_wh, g_b, g_cw, g_cb] = head_grads else {
            unreachable!("length checked above");
        };

        let h = self.lstm.hidden;
        let d = self.lstm.input_dim;
        let need_input_grad = self.encoder.any_trainable();
        let need_recurrent = self.lstm_trainable || need_input_grad;
        let embeddings = cache.encoder.output();
        let mut d_embed = Matrix::zeros(steps, d);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let prev = &cache.states[t];
            let cur = &cache.states[t + 1];
            if self.classifier_trainable {
                self.classifier.accumulate_grads(&cur.h, dlogits.row(t), g_cw, g_cb);
            }
            if !need_recurrent {
                continue;
            }
            self.classifier.backward_input(dlogits.row(t), &mut dh);
            dh.iter_mut().zip(&dh_next).for_each(|(a, b)| *a += b);

            let z = &cache.gates[t];
            for k in 0..h {
                let (i, f, g, o) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let tc = cur.c[k].tanh();
                let d_o = dh[k] * tc;
                let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * prev.c[k];
                dc_next[k] = dc * f;
                dz[k] = d_i * i * (1.0 - i);
                dz[h + k] = d_f * f * (1.0 - f);
                dz[2 * h + k] = d_g * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
            }
            let x = embeddings.row(t);
            if self.lstm_trainable {
                for (r, &dzr) in dz.iter().enumerate() {
                    if dzr == 0.0 {
                        continue;
                    }
                    g_b[r] += dzr;
                    g_wx[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(g, v)| *g += dzr * v);
                    g_wh[r * h..(r + 1) * h]
                        .iter_mut()
                        .zip(&prev.h)
                        .for_each(|(g, v)| *g += dzr * v);
                }
            }
            // gradients into the previous step and the embedding
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            let dx = d_embed.row_mut(t);
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                if need_input_grad {
                    dx.iter_mut()
                        .zip(&self.lstm.w_input[r * d..(r + 1) * d])
                        .for_each(|(g, w)| *g += dzr * w);
                }
                dh_next
                    .iter_mut()
                    .zip(&self.lstm.w_hidden[r * h..(r + 1) * h])
                    .for_each(|(g, w)| *g += dzr * w);
            }
        }
        if need_input_grad {
            self.encoder.backward(&cache.encoder, &d_embed, enc_grads)?;
        }
        Ok(())
    }
}

/// Numerically stable softmax cross-entropy.
///
/// Returns the loss and `∂loss/∂logits = softmax − one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_phases: logits.len(),
        });
    }
    let (arg_max, max) = logits
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    // the arg-max term is exactly 1; ln_1p keeps the rest accurate
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != arg_max).map(|(_, e)| e).sum();
    let sum = 1.0 + rest;
    let loss = rest.ln_1p() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

const LSTM_LAYER: &str = "lstm";
const CLASSIFIER_LAYER: &str = "classifier";

impl Parameterized for PhaseModel {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = self.encoder.tensors();
        let (h, d, k) = (self.lstm.hidden, self.lstm.input_dim, self.num_phases());
        let lt = self.lstm_trainable;
        let ct = self.classifier_trainable;
        out.push(TensorView { name: "lstm.w_input".into(), shape: vec![4 * h, d], data: &self.lstm.w_input, trainable: lt });
        out.push(TensorView { name: "lstm.w_hidden".into(), shape: vec![4 * h, h], data: &self.lstm.w_hidden, trainable: lt });
        out.push(TensorView { name: "lstm.bias".into(), shape: vec![4 * h], data: &self.lstm.bias, trainable: lt });
        out.push(TensorView { name: "classifier.weight".into(), shape: vec![k, h], data: &self.classifier.weight, trainable: ct });
        out.push(TensorView { name: "classifier.bias".into(), shape: vec![k], data: &self.classifier.bias, trainable: ct });
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let lt = self.lstm_trainable;
        let ct = self.classifier_trainable;
        let mut out = self.encoder.tensors_mut();
        out.push(TensorViewMut { name: "lstm.w_input".into(), data: &mut self.lstm.w_input, trainable: lt });
        out.push(TensorViewMut { name: "lstm.w_hidden".into(), data: &mut self.lstm.w_hidden, trainable: lt });
        out.push(TensorViewMut { name: "lstm.bias".into(), data: &mut self.lstm.bias, trainable: lt });
        out.push(TensorViewMut { name: "classifier.weight".into(), data: &mut self.classifier.weight, trainable: ct });
        out.push(TensorViewMut { name: "classifier.bias".into(), data: &mut self.classifier.bias, trainable: ct });
        out
    }

    fn layer_names(&self) -> Vec<String> {
        let mut names = self.encoder.layer_names();
        names.push(LSTM_LAYER.into());
        names.push(CLASSIFIER_LAYER.into());
        names
    }

    fn set_layer_trainable(&mut self, layer: &str, trainable: bool) -> Result<()> {
        match layer {
            LSTM_LAYER => self.lstm_trainable = trainable,
            CLASSIFIER_LAYER => self.classifier_trainable = trainable,
            other => self.encoder.set_layer_trainable(other, trainable)?,
        }
        Ok(())
    }

    fn is_layer_trainable(&self, layer: &str) -> Result<bool> {
        match layer {
            LSTM_LAYER => Ok(self.lstm_trainable),
            CLASSIFIER_LAYER => Ok(self.classifier_trainable),
            other => self.encoder.is_layer_trainable(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small_arch() -> PhaseArch {
        PhaseArch {
            encoder: EncoderArch {
                input_dim: 3,
                hidden: vec![4],
                embedding_dim: 3,
            },
            lstm_hidden: 5,
            num_phases: 3,
        }
    }

    #[test]
    fn zero_lstm_step_examples() {
        let model = PhaseModel::zeros(&small_arch()).unwrap();
        let (logits, st) = model.lstm_step(&[0.3, -1.0, 2.0], &model.zero_state()).unwrap();
        assert!(logits.iter().chain(&st.h).chain(&st.c).all(|&v| v == 0.0));

        let v = [1.0, -2.0, 0.5, 4.0, -0.1];
        let state = LstmState {
            h: vec![0.0; 5],
            c: v.to_vec(),
        };
        let (_, st) = model.lstm_step(&[0.0; 3], &state).unwrap();
        for k in 0..5 {
            assert!((st.c[k] - 0.5 * v[k]).abs() < 1e-15);
            assert!((st.h[k] - 0.5 * (0.5 * v[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = softmax_cross_entropy(&[0.25; 7], 3).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);

        let (loss, grad) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        // closed form: ln(1 + e^-20), gradient ±e^-20/(1+e^-20)
        let e = (-20f64).exp();
        assert!((loss - e.ln_1p()).abs() < 1e-22);
        assert!((grad[0] + e / (1.0 + e)).abs() < 1e-15);
        assert!((grad[1] - e / (1.0 + e)).abs() < 1e-20);
        assert!((grad[0] + grad[1]).abs() < 1e-15);
        assert!((loss - 2.06e-9).abs() < 1e-11);

        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange { label: 2, num_phases: 2 })
        ));
        // large logits stay finite
        let (loss, _) = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], 1).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = seeded(17);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let label = rng.random_range(0..6);
            let (_, grad) = softmax_cross_entropy(&logits, label).unwrap();
            for i in 0..6 {
                let h = 1e-5;
                let mut p = logits.clone();
                let mut m = logits.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (softmax_cross_entropy(&p, label).unwrap().0 - softmax_cross_entropy(&m, label).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() / grad[i].abs().max(1e-3) < 1e-6, "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn chunk_of_one_is_a_single_step() {
        let model = PhaseModel::new(&small_arch(), &mut seeded(2)).unwrap();
        let x = [0.2, -0.7, 1.1];
        let out = model
            .forward_chunk(&Matrix::from_rows(&[x.to_vec()]).unwrap(), &model.zero_state())
            .unwrap();
        let emb = model.encoder.forward(&x).unwrap();
        let (logits, st) = model.lstm_step(&emb, &model.zero_state()).unwrap();
        assert_eq!(out.logits.row(0), logits.as_slice());
        assert_eq!(out.state, st);
    }

    #[test]
    fn empty_chunk_rejected() {
        let model = PhaseModel::zeros(&small_arch()).unwrap();
        assert!(matches!(
            model.forward_chunk(&Matrix::zeros(0, 3), &model.zero_state()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn layer_names_cover_head() {
        let mut model = PhaseModel::zeros(&small_arch()).unwrap();
        assert_eq!(model.layer_names(), vec!["encoder.0", "encoder.1", "lstm", "classifier"]);
        model.set_trainable(&["lstm"], false).unwrap();
        assert!(!model.is_layer_trainable("lstm").unwrap());
        assert!(model.set_trainable(&["conv5"], false).is_err());
        let selected = model.select_layers(&|l| l.starts_with("encoder"));
        assert_eq!(selected, vec!["encoder.0", "encoder.1"]);
    }
}

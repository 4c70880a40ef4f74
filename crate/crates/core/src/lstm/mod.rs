//! Two-layer LSTM language model.
//!
//! Gates per layer `l` at step `t`, with input `x` (the embedding for layer 0,
//! `h^0_t` for layer 1):
//!
//! ```text
//! g_t = act_g(W_g x + U_g h_{t-1} + b_g)      g ∈ {f, i, o, c̃}
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ c̃_t
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! `act` is the logistic sigmoid for f, i, o and tanh for c̃. Scores are the
//! raw decoder logits `D h^1_t + b`.

mod checkpoint;
mod forward;
mod jacobian;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{forward, forward_with, ActivationTrace, GateOverride, LayerStep, NoOverride};
pub use jacobian::{edge_jacobian, EdgeJacobian};
pub use train::{
    sentence_gradients, sentence_loss, train, EpochReport, NaGate, NaGateReport, TrainOutcome, TrainSettings,
};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TaskInstance, TokenId};
use crate::error::{Error, Result};

/// Layer count. The graph builder assumes exactly two layers.
pub const NUM_LAYERS: usize = 2;

/// One of the four inner LSTM gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    Forget,
    Input,
    Output,
    Cand,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cand];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Cand => "c~",
        }
    }

    pub fn activate(self, x: f64) -> f64 {
        match self {
            Gate::Cand => x.tanh(),
            _ => sigmoid(x),
        }
    }

    /// Derivative of the activation expressed through its output value.
    pub fn derivative_at_value(self, g: f64) -> f64 {
        match self {
            Gate::Cand => 1.0 - g * g,
            _ => g * (1.0 - g),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one LSTM layer, indexed by [`Gate::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `H × input_dim` input weights.
    pub w: [Array2<f64>; 4],
    /// `H × H` recurrent weights.
    pub u: [Array2<f64>; 4],
    pub b: [Array1<f64>; 4],
}

impl LayerParams {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Array2::zeros((hidden, input_dim))),
            u: std::array::from_fn(|_| Array2::zeros((hidden, hidden))),
            b: std::array::from_fn(|_| Array1::zeros(hidden)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].ncols()
    }
}

/// Embedding, two LSTM layers and an untied decoder with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    /// `V × d`.
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// `V × H`.
    pub decoder: Array2<f64>,
    pub decoder_bias: Array1<f64>,
    /// Token fed at step 0 of every sequence.
    pub bos: TokenId,
    /// Final training target of every sentence.
    pub eos: TokenId,
}

impl LstmModel {
    pub fn zeros(vocab: usize, embed_dim: usize, hidden: usize, bos: TokenId, eos: TokenId) -> Self {
        Self {
            embedding: Array2::zeros((vocab, embed_dim)),
            layers: vec![
                LayerParams::zeros(embed_dim, hidden),
                LayerParams::zeros(hidden, hidden),
            ],
            decoder: Array2::zeros((vocab, hidden)),
            decoder_bias: Array1::zeros(vocab),
            bos,
            eos,
        }
    }

    /// Uniform `±1/√H` initialization for weights and biases, forget-gate
    /// bias shifted by +1, embeddings uniform in `±0.1`.
    pub fn random(vocab: usize, embed_dim: usize, hidden: usize, bos: TokenId, eos: TokenId, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(vocab, embed_dim, hidden, bos, eos);
        let scale = 1.0 / (hidden as f64).sqrt();
        model.embedding.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        for layer in &mut model.layers {
            for g in 0..4 {
                layer.w[g].mapv_inplace(|_| rng.gen_range(-scale..scale));
                layer.u[g].mapv_inplace(|_| rng.gen_range(-scale..scale));
                layer.b[g].mapv_inplace(|_| rng.gen_range(-scale..scale));
            }
            layer.b[Gate::Forget.index()].mapv_inplace(|b| b + 1.0);
        }
        model.decoder.mapv_inplace(|_| rng.gen_range(-scale..scale));
        model.decoder_bias.mapv_inplace(|_| rng.gen_range(-scale..scale));
        model
    }

    /// Adds `shifts[l]` to the forget-gate bias of layer `l`.
    pub fn shift_forget_bias(&mut self, shifts: &[f64]) {
        for (layer, &s) in self.layers.iter_mut().zip(shifts) {
            layer.b[Gate::Forget.index()].mapv_inplace(|b| b + s);
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.decoder.ncols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (v, d, h) = (self.vocab_size(), self.embed_dim(), self.hidden());
        if self.layers.len() != NUM_LAYERS {
            return Err(Error::Dimension(format!(
                "expected {NUM_LAYERS} layers, found {}",
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let input_dim = if l == 0 { d } else { h };
            for g in 0..4 {
                if layer.w[g].dim() != (h, input_dim) || layer.u[g].dim() != (h, h) || layer.b[g].len() != h {
                    return Err(Error::Dimension(format!("layer {l} gate {g} has wrong shape")));
                }
            }
        }
        if self.decoder.nrows() != v || self.decoder_bias.len() != v || self.bos >= v || self.eos >= v {
            return Err(Error::Dimension("decoder does not match vocabulary".into()));
        }
        Ok(())
    }

    /// Embedding vectors for `[BOS] ++ tokens`.
    pub fn embed_with_bos(&self, tokens: &[TokenId]) -> Vec<Array1<f64>> {
        std::iter::once(self.bos)
            .chain(tokens.iter().copied())
            .map(|t| self.embedding.row(t).to_owned())
            .collect()
    }

    /// `D[correct] − D[wrong]`: gradient of the agreement score difference
    /// with respect to the top hidden state.
    pub fn decoder_difference(&self, correct: TokenId, wrong: TokenId) -> Array1<f64> {
        &self.decoder.row(correct) - &self.decoder.row(wrong)
    }

    /// All parameter buffers in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embedding.as_slice().expect("standard layout")];
        for layer in &self.layers {
            for g in 0..4 {
                out.push(layer.w[g].as_slice().expect("standard layout"));
                out.push(layer.u[g].as_slice().expect("standard layout"));
                out.push(layer.b[g].as_slice().expect("standard layout"));
            }
        }
        out.push(self.decoder.as_slice().expect("standard layout"));
        out.push(self.decoder_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.as_slice_mut().expect("standard layout")];
        for layer in &mut self.layers {
            let LayerParams { w, u, b } = layer;
            for ((w, u), b) in w.iter_mut().zip(u.iter_mut()).zip(b.iter_mut()) {
                out.push(w.as_slice_mut().expect("standard layout"));
                out.push(u.as_slice_mut().expect("standard layout"));
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.decoder.as_slice_mut().expect("standard layout"));
        out.push(self.decoder_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.embed_dim(), self.hidden(), self.bos, self.eos)
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Logits `s_{t_verb}(·)` for the verb slot of an instance.
    pub fn verb_logits(&self, inst: &TaskInstance) -> Result<Array1<f64>> {
        let inputs = self.embed_with_bos(&inst.tokens[..inst.t_verb]);
        let trace = forward(self, &inputs)?;
        Ok(trace.logits[inst.t_verb].clone())
    }
}

/// Fraction of instances where the correct verb form strictly outscores the
/// wrong one. Ties count as errors.
pub fn na_accuracy(model: &LstmModel, data: &[TaskInstance]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("NA accuracy needs at least one instance"));
    }
    let mut correct = 0usize;
    for inst in data {
        let logits = model.verb_logits(inst)?;
        if logits[inst.verb_correct] > logits[inst.verb_wrong] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_lexicon, generate_task_dataset, Condition, LexiconConfig, TaskKind};

    #[test]
    fn uniform_logits_score_zero() {
        let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
        let model = LstmModel::zeros(lex.len(), 8, 6, lex.bos(), lex.eos());
        let data = generate_task_dataset(&lex, TaskKind::NounPP, Condition::SP, 10, 1).unwrap();
        assert_eq!(na_accuracy(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn swapped_labels_complement() {
        let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
        let model = LstmModel::random(lex.len(), 8, 6, lex.bos(), lex.eos(), 3);
        let data = generate_task_dataset(&lex, TaskKind::Simple, Condition::P, 40, 2).unwrap();
        let swapped: Vec<_> = data.iter().map(|i| i.with_swapped_verbs()).collect();
        let a = na_accuracy(&model, &data).unwrap();
        let b = na_accuracy(&model, &swapped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = LstmModel::zeros(5, 2, 3, 0, 1);
        assert!(na_accuracy(&model, &[]).is_err());
    }

    #[test]
    fn param_slices_cover_every_parameter() {
        let mut model = LstmModel::random(10, 3, 4, 0, 1, 1);
        let n = model.num_params();
        let expected = 10 * 3 + 4 * (4 * 3 + 4 * 4 + 4) + 4 * (4 * 4 + 4 * 4 + 4) + 10 * 4 + 10;
        assert_eq!(n, expected);
        assert_eq!(model.param_slices_mut().iter().map(|s| s.len()).sum::<usize>(), n);
        model.check_shapes().unwrap();
    }
}

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward, na_accuracy, Gate, LstmModel};
use crate::corpus::{Condition, TaskInstance, TaskKind, TokenId};
use crate::error::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs to run before the NA gate may stop training.
    pub min_epochs: usize,
    /// Evaluate the gate every this many batches, in addition to epoch ends.
    pub gate_every_batches: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            min_epochs: 1,
            gate_every_batches: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Held-out NA datasets with minimum accuracies per task.
#[derive(Debug, Clone)]
pub struct NaGate {
    pub datasets: Vec<(TaskKind, Condition, Vec<TaskInstance>)>,
    pub thresholds: BTreeMap<TaskKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaGateReport {
    pub accuracies: Vec<(TaskKind, Condition, f64)>,
    pub passed: bool,
}

impl NaGate {
    /// Simple ≥ 0.90 on both conditions, nounPP ≥ 0.80 on all four.
    pub fn default_thresholds() -> BTreeMap<TaskKind, f64> {
        BTreeMap::from([(TaskKind::Simple, 0.90), (TaskKind::NounPP, 0.80)])
    }

    pub fn evaluate(&self, model: &LstmModel) -> Result<NaGateReport> {
        let mut accuracies = Vec::with_capacity(self.datasets.len());
        let mut passed = true;
        for (task, cond, data) in &self.datasets {
            let acc = na_accuracy(model, data)?;
            if let Some(&min) = self.thresholds.get(task) {
                passed &= acc >= min;
            }
            accuracies.push((*task, *cond, acc));
        }
        Ok(NaGateReport { accuracies, passed })
    }
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub gate: Option<NaGateReport>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LstmModel,
    pub epochs_run: usize,
    pub gate: Option<NaGateReport>,
    pub gate_met: bool,
    pub epoch_losses: Vec<f64>,
    pub elapsed_secs: f64,
}

fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    let cols = m.ncols();
    let data = m.as_slice_mut().expect("standard layout");
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (d, &bj) in data[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *d += ai * bj;
        }
    }
}

fn log_softmax_at(logits: &Array1<f64>, idx: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let z: f64 = exp.sum();
    let probs = exp / z;
    (logits[idx] - max - z.ln(), probs)
}

fn sequence_pairs(model: &LstmModel, sentence: &[TokenId]) -> Vec<TokenId> {
    sentence.iter().copied().chain(std::iter::once(model.eos)).collect()
}

/// Summed next-token cross-entropy of `[BOS] ++ sentence` against
/// `sentence ++ [EOS]`.
pub fn sentence_loss(model: &LstmModel, sentence: &[TokenId]) -> Result<f64> {
    let trace = forward(model, &model.embed_with_bos(sentence))?;
    let targets = sequence_pairs(model, sentence);
    Ok(trace
        .logits
        .iter()
        .zip(&targets)
        .map(|(l, &t)| -log_softmax_at(l, t).0)
        .sum())
}

/// Adds `scale · ∂loss/∂θ` of [`sentence_loss`] into `grads` by
/// backpropagation through time. Returns the loss.
pub fn sentence_gradients(model: &LstmModel, sentence: &[TokenId], grads: &mut LstmModel, scale: f64) -> Result<f64> {
    let inputs = model.embed_with_bos(sentence);
    let tokens: Vec<TokenId> = std::iter::once(model.bos).chain(sentence.iter().copied()).collect();
    let targets = sequence_pairs(model, sentence);
    let trace = forward(model, &inputs)?;
    let hidden = model.hidden();
    let mut loss = 0.0;
    let mut dh_next = [Array1::zeros(hidden), Array1::zeros(hidden)];
    let mut dc_next = [Array1::zeros(hidden), Array1::zeros(hidden)];
    for s in (0..trace.len()).rev() {
        let (logp, mut dlogits) = log_softmax_at(&trace.logits[s], targets[s]);
        loss -= logp;
        dlogits[targets[s]] -= 1.0;
        dlogits *= scale;
        let top = &trace.layer(s, 1).h;
        add_outer(&mut grads.decoder, &dlogits, top);
        grads.decoder_bias += &dlogits;
        let mut dh_from_above = model.decoder.t().dot(&dlogits);
        for l in (0..2).rev() {
            let st = trace.layer(s, l);
            let dh = &dh_from_above + &dh_next[l];
            let d_out = &dh * &st.tanh_c;
            let dc = &dh * &(st.gate(Gate::Output) * &st.tanh_c.mapv(|t| 1.0 - t * t)) + &dc_next[l];
            let d_gate: [Array1<f64>; 4] = [
                &dc * trace.c_prev(s, l),
                &dc * st.gate(Gate::Cand),
                d_out,
                &dc * st.gate(Gate::Input),
            ];
            dc_next[l] = &dc * st.gate(Gate::Forget);
            let input = trace.layer_input(s, l);
            let h_prev = trace.h_prev(s, l);
            let params = &model.layers[l];
            let mut dx = Array1::zeros(params.input_dim());
            let mut dh_prev = Array1::zeros(hidden);
            for gate in Gate::ALL {
                let g = gate.index();
                let da = &d_gate[g] * &st.gates[g].mapv(|v| gate.derivative_at_value(v));
                add_outer(&mut grads.layers[l].w[g], &da, input);
                add_outer(&mut grads.layers[l].u[g], &da, h_prev);
                grads.layers[l].b[g] += &da;
                dx += &params.w[g].t().dot(&da);
                dh_prev += &params.u[g].t().dot(&da);
            }
            dh_next[l] = dh_prev;
            if l == 0 {
                let mut row = grads.embedding.row_mut(tokens[s]);
                row += &dx;
            } else {
                dh_from_above = dx;
            }
        }
    }
    Ok(loss)
}

struct Adam {
    m: LstmModel,
    v: LstmModel,
    t: i32,
}

impl Adam {
    fn new(model: &LstmModel) -> Self {
        Self {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut LstmModel, grads: &LstmModel, s: &TrainSettings) {
        self.t += 1;
        let bc1 = 1.0 - s.beta1.powi(self.t);
        let bc2 = 1.0 - s.beta2.powi(self.t);
        let params = model.param_slices_mut();
        let ms = self.m.param_slices_mut();
        let vs = self.v.param_slices_mut();
        let gs = grads.param_slices();
        for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(gs) {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                *p -= s.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + s.epsilon);
            }
        }
    }
}

fn clip(grads: &mut LstmModel, max_norm: f64) {
    let norm = grads
        .param_slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for s in grads.param_slices_mut() {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Mean-token cross-entropy training with Adam. Per-sentence gradients may be
/// computed in parallel; they are always summed in batch order.
pub fn train(
    mut model: LstmModel,
    corpus: &[Vec<TokenId>],
    settings: &TrainSettings,
    seed: u64,
    gate: Option<&NaGate>,
    mut progress: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus is empty"));
    }
    model.check_shapes()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut last_gate = None;
    let mut gate_met = false;
    let batch_size = settings.batch_size.max(1);
    'epochs: for epoch in 0..settings.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        let batches: Vec<&[usize]> = order.chunks(batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let per_sentence: Vec<Result<(LstmModel, f64)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = model.zeros_like();
                    let loss = sentence_gradients(&model, &corpus[i], &mut g, 1.0)?;
                    Ok((g, loss))
                })
                .collect();
            let tokens: usize = batch.iter().map(|&i| corpus[i].len() + 1).sum();
            let mut grads = model.zeros_like();
            let mut batch_loss = 0.0;
            for item in per_sentence {
                let (g, loss) = item?;
                batch_loss += loss;
                for (acc, part) in grads.param_slices_mut().into_iter().zip(g.param_slices()) {
                    acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            let inv = 1.0 / tokens as f64;
            for s in grads.param_slices_mut() {
                s.iter_mut().for_each(|g| *g *= inv);
            }
            if let Some(max) = settings.clip_norm {
                clip(&mut grads, max);
            }
            adam.step(&mut model, &grads, settings);
            if !model.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            loss_sum += batch_loss;
            token_sum += tokens;
            if let (Some(every), Some(gate)) = (settings.gate_every_batches, gate) {
                if epoch + 1 >= settings.min_epochs && (b + 1) % every == 0 {
                    let report = gate.evaluate(&model)?;
                    let passed = report.passed;
                    last_gate = Some(report);
                    if passed {
                        gate_met = true;
                        epoch_losses.push(loss_sum / token_sum as f64);
                        progress(&EpochReport {
                            epoch,
                            batches: b + 1,
                            mean_loss: loss_sum / token_sum as f64,
                            gate: last_gate.clone(),
                            elapsed_secs: start.elapsed().as_secs_f64(),
                        });
                        break 'epochs;
                    }
                }
            }
        }
        let mean_loss = loss_sum / token_sum as f64;
        epoch_losses.push(mean_loss);
        if let Some(gate) = gate {
            let report = gate.evaluate(&model)?;
            gate_met = report.passed;
            last_gate = Some(report);
        }
        progress(&EpochReport {
            epoch,
            batches: batches.len(),
            mean_loss,
            gate: last_gate.clone(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if gate_met && epoch + 1 >= settings.min_epochs {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        epochs_run: epoch_losses.len(),
        gate: last_gate,
        gate_met,
        epoch_losses,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_step_decreases_loss() {
        let mut model = LstmModel::random(12, 4, 5, 0, 1, 21);
        let sentence = [3, 7, 2, 9];
        let before = sentence_loss(&model, &sentence).unwrap();
        let mut grads = model.zeros_like();
        sentence_gradients(&model, &sentence, &mut grads, 1.0).unwrap();
        let lr = 1e-5;
        for (p, g) in model.param_slices_mut().into_iter().zip(grads.param_slices()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        let after = sentence_loss(&model, &sentence).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_overfits_a_tiny_corpus() {
        let model = LstmModel::random(6, 4, 8, 0, 1, 3);
        let corpus = vec![vec![2, 3, 4], vec![5, 3, 2]];
        let before: f64 = corpus.iter().map(|s| sentence_loss(&model, s).unwrap()).sum();
        let settings = TrainSettings {
            learning_rate: 1e-2,
            batch_size: 2,
            max_epochs: 200,
            ..Default::default()
        };
        let out = train(model, &corpus, &settings, 1, None, |_| {}).unwrap();
        let after: f64 = corpus.iter().map(|s| sentence_loss(&out.model, s).unwrap()).sum();
        assert!(after < 0.5 * before);
        assert_eq!(out.epochs_run, 200);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = vec![vec![2, 3, 4], vec![5, 3, 2], vec![4, 4, 5, 2]];
        let settings = TrainSettings {
            batch_size: 2,
            max_epochs: 3,
            ..Default::default()
        };
        let run = || {
            train(LstmModel::random(6, 4, 8, 0, 1, 3), &corpus, &settings, 9, None, |_| {})
                .unwrap()
                .model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let model = LstmModel::random(6, 4, 8, 0, 1, 3);
        assert!(train(model, &[], &TrainSettings::default(), 0, None, |_| {}).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = LstmModel::random(6, 4, 8, 0, 1, 3);
        model.decoder[[0, 0]] = f64::NAN;
        let err = train(model, &[vec![2, 3]], &TrainSettings::default(), 0, None, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}

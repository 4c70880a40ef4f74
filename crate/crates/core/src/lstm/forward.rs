use ndarray::Array1;

use super::{Gate, LstmModel};
use crate::error::{Error, Result};

/// Activations of one layer at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStep {
    /// Gate pre-activations `W x + U h_prev + b`, indexed by [`Gate::index`].
    /// For gates replaced by an override this is still the value the model
    /// would have computed.
    pub pre: [Array1<f64>; 4],
    /// Gate activations.
    pub gates: [Array1<f64>; 4],
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h: Array1<f64>,
}

impl LayerStep {
    pub fn gate(&self, g: Gate) -> &Array1<f64> {
        &self.gates[g.index()]
    }
}

/// Everything computed by one forward pass. Step `s` consumes `inputs[s]`;
/// `logits[s]` are the scores for the token that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub inputs: Vec<Array1<f64>>,
    /// `steps[s][l]`.
    pub steps: Vec<Vec<LayerStep>>,
    pub logits: Vec<Array1<f64>>,
    zero: Array1<f64>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn layer(&self, step: usize, layer: usize) -> &LayerStep {
        &self.steps[step][layer]
    }

    /// `c_{step-1}`, zero before the first step.
    pub fn c_prev(&self, step: usize, layer: usize) -> &Array1<f64> {
        if step == 0 {
            &self.zero
        } else {
            &self.steps[step - 1][layer].c
        }
    }

    pub fn h_prev(&self, step: usize, layer: usize) -> &Array1<f64> {
        if step == 0 {
            &self.zero
        } else {
            &self.steps[step - 1][layer].h
        }
    }

    /// Input of `layer` at `step`: the embedding or the lower hidden state.
    pub fn layer_input(&self, step: usize, layer: usize) -> &Array1<f64> {
        if layer == 0 {
            &self.inputs[step]
        } else {
            &self.steps[step][layer - 1].h
        }
    }
}

/// Replaces selected gate activations during a forward pass.
pub trait GateOverride {
    fn gate_value(&self, step: usize, layer: usize, gate: Gate) -> Option<&Array1<f64>>;
}

/// The identity intervention.
pub struct NoOverride;

impl GateOverride for NoOverride {
    fn gate_value(&self, _: usize, _: usize, _: Gate) -> Option<&Array1<f64>> {
        None
    }
}

pub fn forward(model: &LstmModel, inputs: &[Array1<f64>]) -> Result<ActivationTrace> {
    forward_with(model, inputs, &NoOverride)
}

/// Forward pass from zero initial state with gate interventions. `c` and `h`
/// are always recomputed from the (possibly replaced) gates.
pub fn forward_with(
    model: &LstmModel,
    inputs: &[Array1<f64>],
    intervention: &dyn GateOverride,
) -> Result<ActivationTrace> {
    if inputs.is_empty() {
        return Err(Error::Empty("forward needs a nonempty input sequence"));
    }
    let d = model.embed_dim();
    let hidden = model.hidden();
    if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension(format!(
            "input vector has length {}, embedding dimension is {d}",
            bad.len()
        )));
    }
    let zero = Array1::zeros(hidden);
    let mut steps: Vec<Vec<LayerStep>> = Vec::with_capacity(inputs.len());
    let mut logits = Vec::with_capacity(inputs.len());
    for (s, x) in inputs.iter().enumerate() {
        let mut layers: Vec<LayerStep> = Vec::with_capacity(model.layers.len());
        for (l, params) in model.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &layers[l - 1].h };
            let (h_prev, c_prev) = if s == 0 {
                (&zero, &zero)
            } else {
                (&steps[s - 1][l].h, &steps[s - 1][l].c)
            };
            let pre: [Array1<f64>; 4] =
                std::array::from_fn(|g| params.w[g].dot(input) + params.u[g].dot(h_prev) + &params.b[g]);
            let gates: [Array1<f64>; 4] = std::array::from_fn(|g| {
                let gate = Gate::ALL[g];
                match intervention.gate_value(s, l, gate) {
                    Some(v) => v.clone(),
                    None => pre[g].mapv(|a| gate.activate(a)),
                }
            });
            let [f, i, _, cand] = &gates;
            let c = f * c_prev + i * cand;
            let tanh_c = c.mapv(f64::tanh);
            let h = &gates[Gate::Output.index()] * &tanh_c;
            layers.push(LayerStep {
                pre,
                gates,
                c,
                tanh_c,
                h,
            });
        }
        let top = &layers.last().expect("at least one layer").h;
        logits.push(model.decoder.dot(top) + &model.decoder_bias);
        steps.push(layers);
    }
    Ok(ActivationTrace {
        inputs: inputs.to_vec(),
        steps,
        logits,
        zero,
    })
}

use ndarray::{Array1, Array2};

use super::{ActivationTrace, Gate, LstmModel};
use crate::error::{Error, Result};
use crate::graph::{classify_edge, EdgeKind, NodeId};

/// Local partial derivative `∂to/∂from` of one graph edge.
#[derive(Debug, Clone)]
pub enum EdgeJacobian<'a> {
    /// Diagonal matrix stored as its diagonal.
    Diagonal(Array1<f64>),
    /// `diag(scale) · weight` for a gate fed through `weight`.
    GatedDense {
        scale: Array1<f64>,
        weight: &'a Array2<f64>,
    },
    /// A `1 × n` Jacobian into a scalar node.
    Row(Array1<f64>),
}

impl EdgeJacobian<'_> {
    pub fn rows(&self) -> usize {
        match self {
            EdgeJacobian::Diagonal(v) => v.len(),
            EdgeJacobian::GatedDense { weight, .. } => weight.nrows(),
            EdgeJacobian::Row(_) => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            EdgeJacobian::Diagonal(v) | EdgeJacobian::Row(v) => v.len(),
            EdgeJacobian::GatedDense { weight, .. } => weight.ncols(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            EdgeJacobian::Diagonal(v) => Array2::from_diag(v),
            EdgeJacobian::GatedDense { scale, weight } => {
                let mut m = (*weight).clone();
                for (mut row, &s) in m.rows_mut().into_iter().zip(scale) {
                    row *= s;
                }
                m
            }
            EdgeJacobian::Row(v) => v.clone().insert_axis(ndarray::Axis(0)),
        }
    }

    /// `out = row · J`.
    pub fn left_mul_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            EdgeJacobian::Diagonal(v) => {
                out.extend(row.iter().zip(v).map(|(r, d)| r * d));
            }
            EdgeJacobian::GatedDense { scale, weight } => {
                let cols = weight.ncols();
                out.resize(cols, 0.0);
                let w = weight.as_slice().expect("standard layout");
                for (k, (r, s)) in row.iter().zip(scale).enumerate() {
                    let a = r * s;
                    if a == 0.0 {
                        continue;
                    }
                    for (o, wk) in out.iter_mut().zip(&w[k * cols..(k + 1) * cols]) {
                        *o += a * wk;
                    }
                }
            }
            EdgeJacobian::Row(v) => {
                let r = row[0];
                out.extend(v.iter().map(|x| r * x));
            }
        }
    }

    /// `J · m` for a matrix `m` with `self.cols()` rows.
    pub fn mul_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        match self {
            EdgeJacobian::Diagonal(v) => {
                let mut out = m.clone();
                for (mut row, &d) in out.rows_mut().into_iter().zip(v) {
                    row *= d;
                }
                out
            }
            EdgeJacobian::GatedDense { scale, weight } => {
                let mut out = weight.dot(m);
                for (mut row, &s) in out.rows_mut().into_iter().zip(scale) {
                    row *= s;
                }
                out
            }
            EdgeJacobian::Row(v) => v.dot(m).insert_axis(ndarray::Axis(0)),
        }
    }
}

fn gate_scale(trace: &ActivationTrace, gate: Gate, layer: usize, step: usize) -> Array1<f64> {
    trace
        .layer(step, layer)
        .gate(gate)
        .mapv(|g| gate.derivative_at_value(g))
}

/// Analytic local Jacobian of a gate-level edge at a recorded trace.
///
/// `qoi_row` is the gradient of the QoI with respect to the top hidden state
/// at the QoI step; it is only read for the `h^1 -> QoI` edge.
pub fn edge_jacobian<'a>(
    model: &'a LstmModel,
    trace: &ActivationTrace,
    from: NodeId,
    to: NodeId,
    qoi_row: &Array1<f64>,
) -> Result<EdgeJacobian<'a>> {
    let unknown = || Error::UnknownEdge {
        from: from.to_string(),
        to: to.to_string(),
    };
    let kind = classify_edge(from, to).ok_or_else(unknown)?;
    let step = match kind {
        EdgeKind::HiddenToQoi => from.time,
        _ => to.time,
    }
    .ok_or_else(unknown)?;
    if step >= trace.len() {
        return Err(unknown());
    }
    let layer = to.layer.or(from.layer).unwrap_or(0);
    let st = trace.layer(step, layer);
    Ok(match kind {
        EdgeKind::InputToGate(g) => EdgeJacobian::GatedDense {
            scale: gate_scale(trace, g, 0, step),
            weight: &model.layers[0].w[g.index()],
        },
        EdgeKind::LayerLift(g) => EdgeJacobian::GatedDense {
            scale: gate_scale(trace, g, 1, step),
            weight: &model.layers[1].w[g.index()],
        },
        EdgeKind::Recurrent(g) => EdgeJacobian::GatedDense {
            scale: gate_scale(trace, g, layer, step),
            weight: &model.layers[layer].u[g.index()],
        },
        EdgeKind::GateToCell(Gate::Forget) => EdgeJacobian::Diagonal(trace.c_prev(step, layer).clone()),
        EdgeKind::GateToCell(Gate::Input) => EdgeJacobian::Diagonal(st.gate(Gate::Cand).clone()),
        EdgeKind::GateToCell(Gate::Cand) => EdgeJacobian::Diagonal(st.gate(Gate::Input).clone()),
        EdgeKind::GateToCell(Gate::Output) => return Err(unknown()),
        EdgeKind::CellCarry => EdgeJacobian::Diagonal(st.gate(Gate::Forget).clone()),
        EdgeKind::CellToHidden => EdgeJacobian::Diagonal(st.gate(Gate::Output) * &st.tanh_c.mapv(|t| 1.0 - t * t)),
        EdgeKind::OutToHidden => EdgeJacobian::Diagonal(st.tanh_c.clone()),
        EdgeKind::HiddenToQoi => {
            if qoi_row.len() != model.hidden() {
                return Err(Error::Dimension(format!(
                    "QoI row has length {}, hidden size is {}",
                    qoi_row.len(),
                    model.hidden()
                )));
            }
            EdgeJacobian::Row(qoi_row.clone())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::forward;

    #[test]
    fn cell_carry_is_forget_gate() {
        let model = LstmModel::random(6, 3, 4, 0, 1, 5);
        let trace = forward(&model, &model.embed_with_bos(&[1, 2, 3])).unwrap();
        let row = Array1::zeros(4);
        for l in 0..2 {
            let j = edge_jacobian(&model, &trace, NodeId::cell(l, 1), NodeId::cell(l, 2), &row).unwrap();
            match j {
                EdgeJacobian::Diagonal(v) => assert_eq!(&v, trace.layer(2, l).gate(Gate::Forget)),
                other => panic!("expected diagonal, got {other:?}"),
            }
        }
    }

    #[test]
    fn illegal_edges_are_rejected() {
        let model = LstmModel::random(6, 3, 4, 0, 1, 5);
        let trace = forward(&model, &model.embed_with_bos(&[1, 2])).unwrap();
        let row = Array1::zeros(4);
        for (a, b) in [
            (NodeId::cell(0, 1), NodeId::cell(1, 1)),
            (NodeId::hidden(1, 1), NodeId::gate(Gate::Cand, 0, 2)),
            (NodeId::gate(Gate::Output, 0, 1), NodeId::cell(0, 1)),
            (NodeId::cell(0, 1), NodeId::cell(0, 5)),
        ] {
            assert!(matches!(
                edge_jacobian(&model, &trace, a, b, &row),
                Err(Error::UnknownEdge { .. })
            ));
        }
    }

    #[test]
    fn left_mul_matches_dense() {
        let model = LstmModel::random(6, 3, 4, 0, 1, 8);
        let trace = forward(&model, &model.embed_with_bos(&[1, 2])).unwrap();
        let row = Array1::zeros(4);
        let j = edge_jacobian(
            &model,
            &trace,
            NodeId::hidden(0, 1),
            NodeId::gate(Gate::Input, 0, 2),
            &row,
        )
        .unwrap();
        let r = [0.3, -0.2, 1.5, 0.7];
        let mut out = Vec::new();
        j.left_mul_into(&r, &mut out);
        let dense = Array1::from(r.to_vec()).dot(&j.to_dense());
        for (a, b) in out.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

//! Distributional influence of a focus word on the agreement score, in total
//! and decomposed over gate-level and neuron-level paths.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{Lexicon, TaskInstance, TokenId};
use crate::error::{Error, Result};
use crate::graph::{cell_chain_segment, NodeId, Path, UnrolledGraph};
use crate::lstm::{edge_jacobian, forward, ActivationTrace, EdgeJacobian, Gate, LstmModel};

pub const DEFAULT_K_STEPS: usize = 50;

/// `q = s_{t_verb}(w⁺) − s_{t_verb}(w⁻)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementQoi {
    pub verb_correct: TokenId,
    pub verb_wrong: TokenId,
    /// Model step whose logits score the verb.
    pub t_verb: usize,
}

impl AgreementQoi {
    pub fn from_instance(inst: &TaskInstance) -> Self {
        Self {
            verb_correct: inst.verb_correct,
            verb_wrong: inst.verb_wrong,
            t_verb: inst.t_verb,
        }
    }

    pub fn value(&self, trace: &ActivationTrace) -> f64 {
        let s = &trace.logits[self.t_verb];
        s[self.verb_correct] - s[self.verb_wrong]
    }

    /// Gradient of `q` with respect to `h^1` at the verb step.
    pub fn hidden_gradient(&self, model: &LstmModel) -> Array1<f64> {
        model.decoder_difference(self.verb_correct, self.verb_wrong)
    }
}

/// Straight line from the number-neutral sentence to the actual one, varying
/// only the focus position.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberDoi {
    /// Embeddings of `[BOS] ++ tokens[..t_verb]`.
    pub inputs: Vec<Array1<f64>>,
    /// Sentence position of the focus word.
    pub t_focus: usize,
    pub w_end: Array1<f64>,
    pub w_neutral: Array1<f64>,
    pub k_steps: usize,
}

impl NumberDoi {
    /// DoI on the token at `t_focus`, neutralized against its number twin.
    pub fn for_instance(
        model: &LstmModel,
        lex: &Lexicon,
        inst: &TaskInstance,
        t_focus: usize,
        k_steps: usize,
    ) -> Result<Self> {
        let token = *inst
            .tokens
            .get(t_focus)
            .ok_or_else(|| Error::Positions(format!("focus position {t_focus} outside the sentence")))?;
        let twin = lex
            .number_swap(token)
            .ok_or_else(|| Error::Positions(format!("token {:?} at {t_focus} has no number twin", lex.token(token))))?;
        let neutral = (&model.embedding.row(token) + &model.embedding.row(twin)) * 0.5;
        Self::new(model, inst, t_focus, neutral, k_steps)
    }

    pub fn new(
        model: &LstmModel,
        inst: &TaskInstance,
        t_focus: usize,
        w_neutral: Array1<f64>,
        k_steps: usize,
    ) -> Result<Self> {
        if t_focus >= inst.t_verb {
            return Err(Error::Positions(format!(
                "focus position {t_focus} must precede the verb at {}",
                inst.t_verb
            )));
        }
        if k_steps == 0 {
            return Err(Error::Empty("k_steps must be positive"));
        }
        if w_neutral.len() != model.embed_dim() {
            return Err(Error::Dimension("neutral embedding has wrong length".into()));
        }
        let inputs = model.embed_with_bos(&inst.tokens[..inst.t_verb]);
        let w_end = inputs[t_focus + 1].clone();
        Ok(Self {
            inputs,
            t_focus,
            w_end,
            w_neutral,
            k_steps,
        })
    }

    /// Model step that consumes the focus word.
    pub fn step(&self) -> usize {
        self.t_focus + 1
    }

    pub fn displacement(&self) -> Array1<f64> {
        &self.w_end - &self.w_neutral
    }

    /// Inputs with the focus replaced by `a w_end + (1 − a) w_neutral`.
    pub fn inputs_at(&self, a: f64) -> Vec<Array1<f64>> {
        let mut inputs = self.inputs.clone();
        inputs[self.step()] = &self.w_end * a + &self.w_neutral * (1.0 - a);
        inputs
    }

    /// Right-endpoint sample `j` of `1..=k_steps`.
    pub fn sample_inputs(&self, j: usize) -> Vec<Array1<f64>> {
        self.inputs_at(j as f64 / self.k_steps as f64)
    }

    pub fn traces(&self, model: &LstmModel) -> Result<Vec<ActivationTrace>> {
        (1..=self.k_steps)
            .map(|j| forward(model, &self.sample_inputs(j)))
            .collect()
    }
}

/// Reverse-mode gradient of `row · h^1_{t_q}` with respect to every input
/// vector of `trace`.
pub fn input_gradients(model: &LstmModel, trace: &ActivationTrace, t_q: usize, row: &Array1<f64>) -> Vec<Array1<f64>> {
    let hidden = model.hidden();
    let mut grads = vec![Array1::zeros(model.embed_dim()); trace.len()];
    let mut dh_next = [Array1::zeros(hidden), Array1::zeros(hidden)];
    let mut dc_next = [Array1::zeros(hidden), Array1::zeros(hidden)];
    for s in (0..=t_q).rev() {
        let mut from_above: Array1<f64> = if s == t_q { row.clone() } else { Array1::zeros(hidden) };
        for l in (0..2).rev() {
            let st = trace.layer(s, l);
            let dh = &from_above + &dh_next[l];
            let dc = &dh * &(st.gate(Gate::Output) * &st.tanh_c.mapv(|t| 1.0 - t * t)) + &dc_next[l];
            let d_gate = [
                &dc * trace.c_prev(s, l),
                &dc * st.gate(Gate::Cand),
                &dh * &st.tanh_c,
                &dc * st.gate(Gate::Input),
            ];
            dc_next[l] = &dc * st.gate(Gate::Forget);
            let params = &model.layers[l];
            let mut dx = Array1::zeros(params.input_dim());
            let mut dh_prev = Array1::zeros(hidden);
            for gate in Gate::ALL {
                let g = gate.index();
                let da = &d_gate[g] * &st.gates[g].mapv(|v| gate.derivative_at_value(v));
                dx += &params.w[g].t().dot(&da);
                dh_prev += &params.u[g].t().dot(&da);
            }
            dh_next[l] = dh_prev;
            if l == 0 {
                grads[s] = dx;
            } else {
                from_above = dx;
            }
        }
    }
    grads
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalInfluence {
    /// Averaged gradient of `q` at the focus input.
    pub influence: Array1<f64>,
    /// `influence ⊙ (w_end − w_neutral)`.
    pub attribution_vector: Array1<f64>,
    pub attribution: f64,
    pub q_end: f64,
    pub q_neutral: f64,
}

fn check_finite(v: &Array1<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub fn total_influence_with_traces(
    model: &LstmModel,
    qoi: &AgreementQoi,
    doi: &NumberDoi,
    traces: &[ActivationTrace],
) -> Result<TotalInfluence> {
    let row = qoi.hidden_gradient(model);
    let mut influence = Array1::zeros(model.embed_dim());
    for trace in traces {
        influence += &input_gradients(model, trace, qoi.t_verb, &row)[doi.step()];
    }
    influence /= traces.len() as f64;
    check_finite(&influence, "total influence")?;
    let attribution_vector = &influence * &doi.displacement();
    let q_end = qoi.value(&forward(model, &doi.inputs)?);
    let q_neutral = qoi.value(&forward(model, &doi.inputs_at(0.0))?);
    Ok(TotalInfluence {
        attribution: attribution_vector.sum(),
        influence,
        attribution_vector,
        q_end,
        q_neutral,
    })
}

pub fn total_influence(model: &LstmModel, qoi: &AgreementQoi, doi: &NumberDoi) -> Result<TotalInfluence> {
    total_influence_with_traces(model, qoi, doi, &doi.traces(model)?)
}

/// Influence carried by one path, or by one neuron of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAttribution {
    /// Index into the path list the attribution was computed for.
    pub path_id: usize,
    pub neuron: Option<usize>,
    pub influence: Array1<f64>,
    pub attribution: f64,
}

/// Local Jacobians per DoI sample.
pub trait JacobianSource<'a> {
    fn samples(&self) -> usize;
    fn jacobian(&self, sample: usize, from: NodeId, to: NodeId) -> Result<EdgeJacobian<'a>>;
}

/// Jacobians of an LSTM at cached DoI sample traces.
pub struct LstmSamples<'a> {
    pub model: &'a LstmModel,
    pub traces: &'a [ActivationTrace],
    pub qoi_row: Array1<f64>,
}

impl<'a> LstmSamples<'a> {
    pub fn new(model: &'a LstmModel, qoi: &AgreementQoi, traces: &'a [ActivationTrace]) -> Self {
        Self {
            model,
            traces,
            qoi_row: qoi.hidden_gradient(model),
        }
    }
}

impl<'a> JacobianSource<'a> for LstmSamples<'a> {
    fn samples(&self) -> usize {
        self.traces.len()
    }

    fn jacobian(&self, sample: usize, from: NodeId, to: NodeId) -> Result<EdgeJacobian<'a>> {
        edge_jacobian(self.model, &self.traces[sample], from, to, &self.qoi_row)
    }
}

#[derive(Debug, Clone)]
struct PlanOp {
    depth: usize,
    edge: usize,
    into_input: bool,
    leaves: std::ops::Range<usize>,
}

/// Path set compiled into a suffix trie rooted at the QoI, flattened in
/// preorder so each shared suffix is multiplied once per sample.
#[derive(Debug, Clone)]
pub struct PathPlan {
    ops: Vec<PlanOp>,
    leaf_paths: Vec<usize>,
    max_depth: usize,
    num_paths: usize,
}

impl PathPlan {
    pub fn compile(g: &UnrolledGraph, paths: &[Path]) -> Result<Self> {
        struct TrieNode {
            node: usize,
            edge: usize,
            children: Vec<usize>,
            paths: Vec<usize>,
        }
        let mut trie = vec![TrieNode {
            node: g.qoi_index(),
            edge: usize::MAX,
            children: Vec::new(),
            paths: Vec::new(),
        }];
        for (pid, path) in paths.iter().enumerate() {
            let idx = g.validate_path(path)?;
            let mut cur = 0;
            for &n in idx.iter().rev().skip(1) {
                let parent_node = trie[cur].node;
                let found = trie[cur].children.iter().copied().find(|&c| trie[c].node == n);
                cur = match found {
                    Some(c) => c,
                    None => {
                        let edge = g.edge_id(n, parent_node).expect("validated edge");
                        trie.push(TrieNode {
                            node: n,
                            edge,
                            children: Vec::new(),
                            paths: Vec::new(),
                        });
                        let c = trie.len() - 1;
                        trie[cur].children.push(c);
                        c
                    }
                };
            }
            trie[cur].paths.push(pid);
        }
        let mut ops = Vec::with_capacity(trie.len());
        let mut leaf_paths = Vec::with_capacity(paths.len());
        let mut max_depth = 0;
        let mut stack: Vec<(usize, usize)> = trie[0].children.iter().rev().map(|&c| (c, 0)).collect();
        while let Some((t, depth)) = stack.pop() {
            let start = leaf_paths.len();
            leaf_paths.extend_from_slice(&trie[t].paths);
            ops.push(PlanOp {
                depth,
                edge: trie[t].edge,
                into_input: trie[t].node == g.input_index(),
                leaves: start..leaf_paths.len(),
            });
            max_depth = max_depth.max(depth + 1);
            stack.extend(trie[t].children.iter().rev().map(|&c| (c, depth + 1)));
        }
        Ok(Self {
            ops,
            leaf_paths,
            max_depth,
            num_paths: paths.len(),
        })
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    /// Distinct edge multiplications per sample.
    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }
}

/// Per-path influence averaged over the samples of `source`.
pub fn path_influence_planned<'a>(
    source: &impl JacobianSource<'a>,
    g: &UnrolledGraph,
    plan: &PathPlan,
    displacement: &Array1<f64>,
) -> Result<Vec<PathAttribution>> {
    let k = source.samples();
    if k == 0 {
        return Err(Error::Empty("path influence needs at least one DoI sample"));
    }
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); plan.num_paths];
    let mut weights: Vec<Option<&'a Array2<f64>>> = vec![None; plan.num_paths];
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); plan.max_depth + 1];
    let mut scratch = Vec::new();
    for sample in 0..k {
        let mut jac: Vec<Option<EdgeJacobian<'a>>> = vec![None; g.num_edges()];
        rows[0].clear();
        rows[0].push(1.0);
        for op in &plan.ops {
            if jac[op.edge].is_none() {
                let (a, b) = g.edges()[op.edge];
                jac[op.edge] = Some(source.jacobian(sample, g.node(a), g.node(b))?);
            }
            let j = jac[op.edge].as_ref().expect("filled above");
            let row = &rows[op.depth];
            if op.into_input {
                if let EdgeJacobian::GatedDense { scale, weight } = j {
                    for &pid in &plan.leaf_paths[op.leaves.clone()] {
                        let a = &mut acc[pid];
                        if a.is_empty() {
                            a.resize(scale.len(), 0.0);
                            weights[pid] = Some(weight);
                        }
                        for ((a, r), s) in a.iter_mut().zip(row).zip(scale) {
                            *a += r * s;
                        }
                    }
                    continue;
                }
            }
            j.left_mul_into(row, &mut scratch);
            if op.into_input {
                for &pid in &plan.leaf_paths[op.leaves.clone()] {
                    let a = &mut acc[pid];
                    if a.is_empty() {
                        a.resize(scratch.len(), 0.0);
                    }
                    a.iter_mut().zip(&scratch).for_each(|(a, v)| *a += v);
                }
            }
            std::mem::swap(&mut rows[op.depth + 1], &mut scratch);
        }
    }
    let inv = 1.0 / k as f64;
    acc.into_iter()
        .zip(weights)
        .enumerate()
        .map(|(path_id, (a, w))| {
            let a = Array1::from(a);
            let influence = match w {
                Some(w) => w.t().dot(&a) * inv,
                None => a * inv,
            };
            if influence.len() != displacement.len() {
                return Err(Error::Dimension(format!(
                    "path {path_id} influence has length {}, displacement {}",
                    influence.len(),
                    displacement.len()
                )));
            }
            check_finite(&influence, "path influence")?;
            Ok(PathAttribution {
                path_id,
                neuron: None,
                attribution: influence.dot(displacement),
                influence,
            })
        })
        .collect()
}

pub fn path_influence_with<'a>(
    source: &impl JacobianSource<'a>,
    g: &UnrolledGraph,
    paths: &[Path],
    displacement: &Array1<f64>,
) -> Result<Vec<PathAttribution>> {
    let plan = PathPlan::compile(g, paths)?;
    path_influence_planned(source, g, &plan, displacement)
}

fn check_graph(g: &UnrolledGraph, doi: &NumberDoi, qoi: &AgreementQoi) -> Result<()> {
    if g.input() != NodeId::input(doi.step()) {
        return Err(Error::PathMismatch(format!(
            "graph input {} does not match the DoI focus step {}",
            g.input(),
            doi.step()
        )));
    }
    let tq = g.predecessors(g.qoi_index()).first().and_then(|&p| g.node(p).time);
    if tq != Some(qoi.t_verb) {
        return Err(Error::PathMismatch(format!(
            "graph QoI step {tq:?} does not match the verb step {}",
            qoi.t_verb
        )));
    }
    Ok(())
}

pub fn path_influence(
    model: &LstmModel,
    qoi: &AgreementQoi,
    doi: &NumberDoi,
    g: &UnrolledGraph,
    paths: &[Path],
) -> Result<Vec<PathAttribution>> {
    check_graph(g, doi, qoi)?;
    let traces = doi.traces(model)?;
    path_influence_with(&LstmSamples::new(model, qoi, &traces), g, paths, &doi.displacement())
}

/// Splits `path` into one attribution per neuron of its layer-1 cell chain.
pub fn neuron_influence_with<'a>(
    source: &impl JacobianSource<'a>,
    path: &Path,
    displacement: &Array1<f64>,
) -> Result<Vec<PathAttribution>> {
    let (start, end) = cell_chain_segment(path)?;
    let k = source.samples();
    if k == 0 {
        return Err(Error::Empty("neuron influence needs at least one DoI sample"));
    }
    let d = displacement.len();
    let nodes = &path.nodes;
    let mut total: Option<Array2<f64>> = None;
    for sample in 0..k {
        let mut prefix = Array2::<f64>::eye(d);
        for w in nodes[..=start].windows(2) {
            prefix = source.jacobian(sample, w[0], w[1])?.mul_matrix(&prefix);
        }
        let mut diag: Option<Array1<f64>> = None;
        for w in nodes[start..=end].windows(2) {
            match source.jacobian(sample, w[0], w[1])? {
                EdgeJacobian::Diagonal(v) => {
                    diag = Some(match diag {
                        Some(acc) => acc * &v,
                        None => v,
                    })
                }
                other => {
                    return Err(Error::Refine(format!(
                        "edge {} -> {} is not diagonal ({} x {})",
                        w[0],
                        w[1],
                        other.rows(),
                        other.cols()
                    )))
                }
            }
        }
        let diag = diag.expect("segment has at least one edge");
        let mut row = vec![1.0];
        let mut scratch = Vec::new();
        for w in nodes[end..].windows(2).rev() {
            source.jacobian(sample, w[0], w[1])?.left_mul_into(&row, &mut scratch);
            std::mem::swap(&mut row, &mut scratch);
        }
        let mut contrib = prefix;
        for ((mut r, &a), &b) in contrib.rows_mut().into_iter().zip(&row).zip(&diag) {
            r *= a * b;
        }
        total = Some(match total {
            Some(t) => t + contrib,
            None => contrib,
        });
    }
    let total = total.expect("at least one sample") / k as f64;
    total
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let influence = r.to_owned();
            check_finite(&influence, "neuron influence")?;
            Ok(PathAttribution {
                path_id: 0,
                neuron: Some(i),
                attribution: influence.dot(displacement),
                influence,
            })
        })
        .collect()
}

pub fn neuron_influence(
    model: &LstmModel,
    qoi: &AgreementQoi,
    doi: &NumberDoi,
    primary: &Path,
) -> Result<Vec<PathAttribution>> {
    let traces = doi.traces(model)?;
    neuron_influence_with(&LstmSamples::new(model, qoi, &traces), primary, &doi.displacement())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_lexicon, generate_task_dataset, Condition, LexiconConfig, TaskKind};
    use crate::graph::{build_graph, enumerate_paths, primary_path, NodeKind};

    fn setup(task: TaskKind, cond: Condition) -> (LstmModel, Lexicon, TaskInstance) {
        let lex = build_lexicon(&LexiconConfig::default(), 4).unwrap();
        let model = LstmModel::random(lex.len(), 6, 5, lex.bos(), lex.eos(), 8);
        let inst = generate_task_dataset(&lex, task, cond, 1, 3).unwrap().remove(0);
        (model, lex, inst)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn conservation_on_simple() {
        let (model, lex, inst) = setup(TaskKind::Simple, Condition::P);
        let qoi = AgreementQoi::from_instance(&inst);
        let doi = NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, 7).unwrap();
        let g = build_graph(inst.task, inst.t_sub, inst.t_verb).unwrap();
        let paths = enumerate_paths(&g).unwrap();
        let per_path = path_influence(&model, &qoi, &doi, &g, &paths).unwrap();
        let total = total_influence(&model, &qoi, &doi).unwrap();
        let sum = per_path.iter().fold(Array1::zeros(6), |acc, p| acc + &p.influence);
        for (a, b) in sum.iter().zip(&total.influence) {
            assert!(rel(*a, *b) < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn neuron_partition() {
        let (model, lex, inst) = setup(TaskKind::NounPP, Condition::SP);
        let qoi = AgreementQoi::from_instance(&inst);
        let doi = NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, 5).unwrap();
        let g = build_graph(inst.task, inst.t_sub, inst.t_verb).unwrap();
        let primary = primary_path(&g).unwrap();
        let parent = path_influence(&model, &qoi, &doi, &g, std::slice::from_ref(&primary)).unwrap();
        let neurons = neuron_influence(&model, &qoi, &doi, &primary).unwrap();
        assert_eq!(neurons.len(), 5);
        let sum: f64 = neurons.iter().map(|n| n.attribution).sum();
        assert!(rel(sum, parent[0].attribution) < 1e-10);
    }

    #[test]
    fn neutral_focus_has_zero_attribution() {
        let (model, _, inst) = setup(TaskKind::Simple, Condition::S);
        let qoi = AgreementQoi::from_instance(&inst);
        let w = model.embedding.row(inst.tokens[inst.t_sub]).to_owned();
        let doi = NumberDoi::new(&model, &inst, inst.t_sub, w, 10).unwrap();
        assert_eq!(total_influence(&model, &qoi, &doi).unwrap().attribution, 0.0);
    }

    #[test]
    fn doi_touches_only_the_focus() {
        let (model, lex, inst) = setup(TaskKind::NounPP, Condition::PS);
        let doi = NumberDoi::for_instance(&model, &lex, &inst, 4, 10).unwrap();
        for j in 1..=10 {
            let x = doi.sample_inputs(j);
            for (s, (a, b)) in x.iter().zip(&doi.inputs).enumerate() {
                if s != doi.step() {
                    assert_eq!(a, b);
                }
            }
        }
        assert_eq!(doi.sample_inputs(10)[doi.step()], doi.w_end);
    }

    #[test]
    fn mismatched_graph_is_rejected() {
        let (model, lex, inst) = setup(TaskKind::NounPP, Condition::SS);
        let qoi = AgreementQoi::from_instance(&inst);
        let doi = NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, 3).unwrap();
        let g = build_graph(inst.task, 4, inst.t_verb).unwrap();
        let paths = enumerate_paths(&g).unwrap();
        assert!(matches!(
            path_influence(&model, &qoi, &doi, &g, &paths),
            Err(Error::PathMismatch(_))
        ));
    }

    #[test]
    fn plan_shares_suffixes() {
        let g = build_graph(TaskKind::NounPP, 1, 5).unwrap();
        let paths = enumerate_paths(&g).unwrap();
        let plan = PathPlan::compile(&g, &paths).unwrap();
        let total_edges: usize = paths.iter().map(|p| p.nodes.len() - 1).sum();
        assert!(plan.num_ops() < total_edges / 2);
        assert_eq!(plan.num_paths(), 6946);
        assert!(g.nodes().iter().any(|n| n.kind == NodeKind::Input));
    }
}

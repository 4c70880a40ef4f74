//! Model-independent property checks with independent oracles.

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compression::{compressed_forward, compute_gate_averages, CompressionScheme};
use crate::corpus::{
    generate_task_dataset, generate_training_corpus, template_of, Category, Condition, Lexicon, TaskInstance, TaskKind,
};
use crate::error::Result;
use crate::graph::{build_graph, count_paths, enumerate_paths, primary_path, NodeId, NodeKind, UnrolledGraph};
use crate::influence::{
    neuron_influence_with, path_influence_planned, total_influence_with_traces, AgreementQoi, LstmSamples, NumberDoi,
    PathPlan,
};
use crate::lstm::{
    edge_jacobian, forward, read_checkpoint, sentence_gradients, sentence_loss, sigmoid, write_checkpoint,
    ActivationTrace, Checkpoint, Gate, LstmModel,
};
use crate::metrics::{share, signed_shares, t_value_exact, t_value_sampled, Sign};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Reference path counts for `(task, focus position)`.
pub const TABLE_COUNTS: [(TaskKind, usize, u128); 5] = [
    (TaskKind::Simple, 1, 16),
    (TaskKind::NounPP, 1, 6946),
    (TaskKind::NounPPAdv, 1, 41561),
    (TaskKind::NounPP, 4, 16),
    (TaskKind::NounPPAdv, 4, 152),
];

/// `(task, focus position, enumerated, DP count, reference count)`.
pub type PathCountRow = (TaskKind, usize, usize, u128, u128);

/// Enumerated and DP path counts for every reference graph.
pub fn path_count_rows() -> Result<Vec<PathCountRow>> {
    TABLE_COUNTS
        .iter()
        .map(|&(task, focus, expected)| {
            let g = build_graph(task, focus, task.t_verb())?;
            let enumerated = enumerate_paths(&g)?.len();
            Ok((task, focus, enumerated, count_paths(&g), expected))
        })
        .collect()
}

pub fn check_path_counts() -> Check {
    let start = Instant::now();
    let r = path_count_rows().map(|rows| {
        let ok = rows
            .iter()
            .all(|&(_, _, e, dp, expected)| e as u128 == dp && dp == expected);
        let detail = rows
            .iter()
            .map(|(t, f, e, dp, x)| format!("{t}@{f}: enum {e} dp {dp} ref {x}"))
            .collect::<Vec<_>>()
            .join("; ");
        (ok, format!("{detail} ({:.2}s)", start.elapsed().as_secs_f64()))
    });
    Check::from_result("path counts", r)
}

/// Logits recomputed with scalar loops straight from the parameters.
pub fn oracle_logits(model: &LstmModel, inputs: &[Array1<f64>]) -> Vec<Vec<f64>> {
    let hsz = model.hidden();
    let mut h = vec![vec![0.0; hsz]; 2];
    let mut c = vec![vec![0.0; hsz]; 2];
    let mut out = Vec::new();
    for x in inputs {
        let mut below: Vec<f64> = x.to_vec();
        for l in 0..2 {
            let p = &model.layers[l];
            let mut gates = [vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz], vec![0.0; hsz]];
            for (g, gv) in gates.iter_mut().enumerate() {
                for (k, v) in gv.iter_mut().enumerate() {
                    let mut a = p.b[g][k];
                    for (j, xj) in below.iter().enumerate() {
                        a += p.w[g][[k, j]] * xj;
                    }
                    for (j, hj) in h[l].iter().enumerate() {
                        a += p.u[g][[k, j]] * hj;
                    }
                    *v = if g == 3 { a.tanh() } else { sigmoid(a) };
                }
            }
            for k in 0..hsz {
                c[l][k] = gates[0][k] * c[l][k] + gates[1][k] * gates[3][k];
                h[l][k] = gates[2][k] * c[l][k].tanh();
            }
            below = h[l].clone();
        }
        out.push(
            (0..model.vocab_size())
                .map(|v| model.decoder_bias[v] + (0..hsz).map(|k| model.decoder[[v, k]] * below[k]).sum::<f64>())
                .collect(),
        );
    }
    out
}

pub fn forward_oracle_error(model: &LstmModel, tokens: &[usize]) -> Result<f64> {
    let inputs = model.embed_with_bos(tokens);
    let trace = forward(model, &inputs)?;
    let oracle = oracle_logits(model, &inputs);
    let mut worst: f64 = 0.0;
    for (a, b) in trace.logits.iter().zip(&oracle) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() / y.abs().max(1e-300));
        }
    }
    Ok(worst)
}

fn node_value(trace: &ActivationTrace, n: NodeId) -> Array1<f64> {
    let t = n.time.expect("timed node");
    let l = n.layer.unwrap_or(0);
    match n.kind {
        NodeKind::Input => trace.inputs[t].clone(),
        NodeKind::Cell => trace.layer(t, l).c.clone(),
        NodeKind::Hidden => trace.layer(t, l).h.clone(),
        k => trace.layer(t, l).gate(k.gate().expect("gate node")).clone(),
    }
}

/// Value of `to` when `from` takes value `v` and every other parent keeps
/// its recorded value.
fn local_eval(
    model: &LstmModel,
    trace: &ActivationTrace,
    qoi: &AgreementQoi,
    from: NodeId,
    to: NodeId,
    v: &Array1<f64>,
) -> Array1<f64> {
    let pick = |n: NodeId, recorded: &Array1<f64>| if n == from { v.clone() } else { recorded.clone() };
    if to.kind == NodeKind::Qoi {
        let h = v;
        let q = model.decoder.row(qoi.verb_correct).dot(h) + model.decoder_bias[qoi.verb_correct]
            - model.decoder.row(qoi.verb_wrong).dot(h)
            - model.decoder_bias[qoi.verb_wrong];
        return Array1::from(vec![q]);
    }
    let t = to.time.expect("timed node");
    let l = to.layer.expect("layered node");
    let st = trace.layer(t, l);
    match to.kind {
        NodeKind::Cell => {
            let f = pick(NodeId::gate(Gate::Forget, l, t), st.gate(Gate::Forget));
            let i = pick(NodeId::gate(Gate::Input, l, t), st.gate(Gate::Input));
            let cand = pick(NodeId::gate(Gate::Cand, l, t), st.gate(Gate::Cand));
            let c_prev = if t > 0 {
                pick(NodeId::cell(l, t - 1), trace.c_prev(t, l))
            } else {
                trace.c_prev(t, l).clone()
            };
            f * c_prev + i * cand
        }
        NodeKind::Hidden => {
            let o = pick(NodeId::gate(Gate::Output, l, t), st.gate(Gate::Output));
            let c = pick(NodeId::cell(l, t), &st.c);
            o * c.mapv(f64::tanh)
        }
        kind => {
            let gate = kind.gate().expect("gate node");
            let input_node = if l == 0 {
                NodeId::input(t)
            } else {
                NodeId::hidden(l - 1, t)
            };
            let x = pick(input_node, trace.layer_input(t, l));
            let h_prev = if t > 0 {
                pick(NodeId::hidden(l, t - 1), trace.h_prev(t, l))
            } else {
                trace.h_prev(t, l).clone()
            };
            let p = &model.layers[l];
            let g = gate.index();
            (p.w[g].dot(&x) + p.u[g].dot(&h_prev) + &p.b[g]).mapv(|a| gate.activate(a))
        }
    }
}

/// Largest absolute deviation between every analytic edge Jacobian of `g`
/// and its central finite difference.
pub fn edge_jacobian_fd_error(
    model: &LstmModel,
    trace: &ActivationTrace,
    qoi: &AgreementQoi,
    g: &UnrolledGraph,
    h: f64,
) -> Result<f64> {
    let row = qoi.hidden_gradient(model);
    let mut worst: f64 = 0.0;
    for &(a, b) in g.edges() {
        let (from, to) = (g.node(a), g.node(b));
        let dense = edge_jacobian(model, trace, from, to, &row)?.to_dense();
        let base = node_value(trace, from);
        for j in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (local_eval(model, trace, qoi, from, to, &plus) - local_eval(model, trace, qoi, from, to, &minus))
                / (2.0 * h);
            for (i, d) in fd.iter().enumerate() {
                worst = worst.max((d - dense[[i, j]]).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest gradient error relative to `max(|fd|, 1e-3 · max|fd|)` over all
/// parameters.
pub fn bptt_fd_error(model: &LstmModel, sentence: &[usize], h: f64) -> Result<f64> {
    let mut grads = model.zeros_like();
    sentence_gradients(model, sentence, &mut grads, 1.0)?;
    let analytic: Vec<f64> = grads.param_slices().concat();
    let mut probe = model.clone();
    let mut fd = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    for (buf, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = probe.param_slices()[buf][k];
            probe.param_slices_mut()[buf][k] = orig + h;
            let lp = sentence_loss(&probe, sentence)?;
            probe.param_slices_mut()[buf][k] = orig - h;
            let lm = sentence_loss(&probe, sentence)?;
            probe.param_slices_mut()[buf][k] = orig;
            fd.push((lp - lm) / (2.0 * h));
        }
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3 * scale))
        .fold(0.0, f64::max))
}

/// Per-sentence results of the attribution identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityErrors {
    /// `‖Σ_p χ^p − χ‖ / ‖χ‖`.
    pub conservation: f64,
    /// `|Σ_i α_i − α^primary| / |α^primary|`.
    pub partition: f64,
}

pub fn identity_errors(
    model: &LstmModel,
    lex: &Lexicon,
    inst: &TaskInstance,
    t_focus: usize,
    k_steps: usize,
    g: &UnrolledGraph,
    plan: &PathPlan,
) -> Result<IdentityErrors> {
    let qoi = AgreementQoi::from_instance(inst);
    let doi = NumberDoi::for_instance(model, lex, inst, t_focus, k_steps)?;
    let traces = doi.traces(model)?;
    let src = LstmSamples::new(model, &qoi, &traces);
    let disp = doi.displacement();
    let per_path = path_influence_planned(&src, g, plan, &disp)?;
    let total = total_influence_with_traces(model, &qoi, &doi, &traces)?;
    let sum = per_path
        .iter()
        .fold(Array1::zeros(disp.len()), |acc, p| acc + &p.influence);
    let diff: Array1<f64> = &sum - &total.influence;
    let conservation = diff.dot(&diff).sqrt() / total.influence.dot(&total.influence).sqrt().max(1e-300);
    let primary = primary_path(g)?;
    let parent = path_influence_planned(&src, g, &PathPlan::compile(g, std::slice::from_ref(&primary))?, &disp)?;
    let neurons = neuron_influence_with(&src, &primary, &disp)?;
    let nsum: f64 = neurons.iter().map(|n| n.attribution).sum();
    let partition = (nsum - parent[0].attribution).abs() / parent[0].attribution.abs().max(1e-300);
    Ok(IdentityErrors {
        conservation,
        partition,
    })
}

/// `|Σ attribution − (q(ŵ) − q(ŵ⁰))| / |q(ŵ) − q(ŵ⁰)|` for each `k`.
pub fn completeness_errors(
    model: &LstmModel,
    lex: &Lexicon,
    inst: &TaskInstance,
    t_focus: usize,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let qoi = AgreementQoi::from_instance(inst);
    ks.iter()
        .map(|&k| {
            let doi = NumberDoi::for_instance(model, lex, inst, t_focus, k)?;
            let traces = doi.traces(model)?;
            let t = total_influence_with_traces(model, &qoi, &doi, &traces)?;
            let dq = t.q_end - t.q_neutral;
            Ok((t.attribution - dq).abs() / dq.abs().max(1e-300))
        })
        .collect()
}

/// Sentences used by the identity checks: `per_task` per task, cycling
/// through its conditions.
pub fn check_sentences(lex: &Lexicon, per_task: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for task in TaskKind::ALL {
        let conds = task.conditions();
        for (n, &cond) in conds.iter().enumerate() {
            let count = per_task / conds.len() + usize::from(n < per_task % conds.len());
            if count > 0 {
                out.extend(generate_task_dataset(lex, task, cond, count, seed ^ (n as u64 + 1))?);
            }
        }
    }
    Ok(out)
}

/// Focus positions analysed for an instance.
pub fn focus_positions(inst: &TaskInstance) -> Vec<usize> {
    std::iter::once(inst.t_sub).chain(inst.t_int).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentitySummary {
    pub cases: usize,
    pub max_conservation: f64,
    pub max_partition: f64,
    pub seconds: f64,
}

pub fn identity_summary(
    model: &LstmModel,
    lex: &Lexicon,
    sentences: &[TaskInstance],
    k_steps: usize,
) -> Result<IdentitySummary> {
    let start = Instant::now();
    let mut cache: Vec<((TaskKind, usize), UnrolledGraph, PathPlan)> = Vec::new();
    let mut s = IdentitySummary {
        cases: 0,
        max_conservation: 0.0,
        max_partition: 0.0,
        seconds: 0.0,
    };
    for inst in sentences {
        for t_focus in focus_positions(inst) {
            let key = (inst.task, t_focus);
            if !cache.iter().any(|(k, _, _)| *k == key) {
                let g = build_graph(inst.task, t_focus, inst.t_verb)?;
                let plan = PathPlan::compile(&g, &enumerate_paths(&g)?)?;
                cache.push((key, g, plan));
            }
            let (_, g, plan) = cache.iter().find(|(k, _, _)| *k == key).expect("cached");
            let e = identity_errors(model, lex, inst, t_focus, k_steps, g, plan)?;
            s.cases += 1;
            s.max_conservation = s.max_conservation.max(e.conservation);
            s.max_partition = s.max_partition.max(e.partition);
        }
    }
    s.seconds = start.elapsed().as_secs_f64();
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessSummary {
    /// Errors at each `k` per sentence.
    pub errors: Vec<Vec<f64>>,
    pub ks: Vec<usize>,
    pub within_tolerance: usize,
    pub monotone: usize,
}

pub fn completeness_summary(
    model: &LstmModel,
    lex: &Lexicon,
    sentences: &[TaskInstance],
    ks: &[usize],
    tolerance: f64,
) -> Result<CompletenessSummary> {
    let mut errors = Vec::new();
    for inst in sentences {
        errors.push(completeness_errors(model, lex, inst, inst.t_sub, ks)?);
    }
    let within_tolerance = errors
        .iter()
        .filter(|e| e.last().is_some_and(|&x| x <= tolerance))
        .count();
    let monotone = errors.iter().filter(|e| e.windows(2).all(|w| w[1] < w[0])).count();
    Ok(CompletenessSummary {
        errors,
        ks: ks.to_vec(),
        within_tolerance,
        monotone,
    })
}

/// Options for [`run_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub sentences_per_task: usize,
    pub k_steps: usize,
    pub corpus_sentences: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            sentences_per_task: 10,
            k_steps: 50,
            corpus_sentences: 50_000,
        }
    }
}

fn corpus_checks(lex: &Lexicon, opts: &SuiteOptions) -> Result<(bool, String)> {
    let corpus = generate_training_corpus(lex, opts.corpus_sentences, opts.seed)?;
    let mut disagreements = 0usize;
    let mut counts = [0usize; 4];
    for s in &corpus {
        let nouns: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|&(_, &t)| matches!(lex.category(t), Category::Noun(_)))
            .map(|(i, _)| i)
            .collect();
        let Some(v) = s.iter().position(|&t| matches!(lex.category(t), Category::Verb(_))) else {
            disagreements += 1;
            continue;
        };
        let Some(&subj) = nouns.first() else {
            disagreements += 1;
            continue;
        };
        if lex.number(s[subj]) != lex.number(s[v]) {
            disagreements += 1;
        }
        let int = nouns.get(1).filter(|&&i| i < v);
        if let Some(&i) = int {
            let cond = Condition::from_numbers(lex.number(s[subj]).expect("noun number"), lex.number(s[i]));
            let slot = [Condition::SS, Condition::SP, Condition::PS, Condition::PP]
                .iter()
                .position(|&c| c == cond)
                .expect("two-noun condition");
            counts[slot] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let expected = total as f64 / 4.0;
    let max_dev = counts
        .iter()
        .map(|&c| (c as f64 - expected).abs() / expected)
        .fold(0.0, f64::max);
    let mut ok = disagreements == 0 && max_dev <= 0.05;
    for task in TaskKind::ALL {
        for &cond in task.conditions() {
            for inst in generate_task_dataset(lex, task, cond, 20, opts.seed)? {
                ok &= lex.number_swap(inst.verb_correct) == Some(inst.verb_wrong);
                ok &= lex.number_swap(inst.verb_wrong) == Some(inst.verb_correct);
                ok &= template_of(lex, &inst.tokens) == Some(task);
            }
        }
    }
    Ok((
        ok,
        format!("{disagreements} disagreeing sentences, SS:SP:PS:PP = {counts:?} (max dev {max_dev:.3})"),
    ))
}

fn shuffle_invariance(model: &LstmModel, lex: &Lexicon, seed: u64) -> Result<(bool, String)> {
    let data = generate_task_dataset(lex, TaskKind::NounPP, Condition::SP, 30, seed)?;
    let avg = compute_gate_averages(model, &data)?;
    let mut shuffled = data.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let avg2 = compute_gate_averages(model, &shuffled)?;
    let mut worst: f64 = 0.0;
    let mut in_range = true;
    for (a, b) in avg.values.iter().zip(&avg2.values) {
        for l in 0..2 {
            for g in Gate::ALL {
                let (x, y) = (&a[l][g.index()], &b[l][g.index()]);
                worst = x.iter().zip(y).fold(worst, |m, (p, q)| m.max((p - q).abs()));
                in_range &= x.iter().all(|&v| match g {
                    Gate::Cand => v > -1.0 && v < 1.0,
                    _ => v > 0.0 && v < 1.0,
                });
            }
        }
    }
    Ok((worst <= 1e-15 && in_range, format!("max shuffle deviation {worst:.2e}")))
}

fn compression_no_op(model: &LstmModel, lex: &Lexicon, seed: u64) -> Result<(bool, String)> {
    let task = TaskKind::NounPPAdv;
    let data = generate_task_dataset(lex, task, Condition::PS, 10, seed)?;
    let avg = compute_gate_averages(model, &data)?;
    let span = 0..task.t_verb() + 1;
    let all = span
        .clone()
        .flat_map(|step| {
            (0..2).flat_map(move |layer| {
                Gate::ALL
                    .into_iter()
                    .map(move |gate| crate::compression::GateSite { gate, layer, step })
            })
        })
        .collect();
    let keep = CompressionScheme::preserving("all", all, span)?;
    let mut ok = true;
    for inst in &data {
        let plain = forward(model, &model.embed_with_bos(&inst.tokens[..inst.t_verb]))?;
        ok &= compressed_forward(model, inst, &CompressionScheme::uncompressed(), &avg)?.logits == plain.logits;
        ok &= compressed_forward(model, inst, &keep, &avg)?.logits == plain.logits;
    }
    Ok((ok, format!("{} sentences bit-identical", data.len())))
}

fn trace_invariants(model: &LstmModel, lex: &Lexicon, seed: u64) -> Result<(bool, String)> {
    let mut ok = true;
    let mut softmax_err: f64 = 0.0;
    for inst in generate_task_dataset(lex, TaskKind::NounPPAdv, Condition::SP, 5, seed)? {
        let inputs = model.embed_with_bos(&inst.tokens);
        let trace = forward(model, &inputs)?;
        ok &= trace == forward(model, &inputs)?;
        for s in 0..trace.len() {
            for l in 0..2 {
                let st = trace.layer(s, l);
                ok &= st.c == st.gate(Gate::Forget) * trace.c_prev(s, l) + st.gate(Gate::Input) * st.gate(Gate::Cand);
                ok &= st.h == st.gate(Gate::Output) * &st.c.mapv(f64::tanh);
                for g in [Gate::Forget, Gate::Input, Gate::Output] {
                    ok &= st.gate(g).iter().all(|&v| v > 0.0 && v < 1.0);
                }
                ok &= st.gate(Gate::Cand).iter().all(|&v| v > -1.0 && v < 1.0);
            }
            let logits = &trace.logits[s];
            let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + logits.mapv(|v| (v - max).exp()).sum().ln();
            let (a, b) = (inst.verb_correct, inst.verb_wrong);
            softmax_err = softmax_err.max(((logits[a] - lse) - (logits[b] - lse) - (logits[a] - logits[b])).abs());
        }
    }
    ok &= softmax_err <= 1e-12;
    Ok((ok, format!("log-softmax difference error {softmax_err:.2e}")))
}

fn checkpoint_round_trip(model: &LstmModel, lex: &Lexicon) -> Result<(bool, String)> {
    let ckpt = Checkpoint {
        model: model.clone(),
        vocab: lex.vocab().to_vec(),
        info: Default::default(),
    };
    let mut buf = Vec::new();
    write_checkpoint(&ckpt, &mut buf)?;
    let back = read_checkpoint(buf.as_slice())?;
    let inputs = model.embed_with_bos(&[lex.bos()]);
    let same = forward(model, &inputs)?.logits == forward(&back.model, &inputs)?.logits && back.model == *model;
    Ok((same, format!("{} bytes", buf.len())))
}

fn linearity(model: &LstmModel, lex: &Lexicon, seed: u64) -> Result<(bool, String)> {
    let inst = generate_task_dataset(lex, TaskKind::NounPP, Condition::SP, 1, seed)?.remove(0);
    let qoi = AgreementQoi::from_instance(&inst);
    let doi = NumberDoi::for_instance(model, lex, &inst, inst.t_sub, 5)?;
    let traces = doi.traces(model)?;
    let g = build_graph(inst.task, inst.t_sub, inst.t_verb)?;
    let plan = PathPlan::compile(&g, &enumerate_paths(&g)?)?;
    let disp = doi.displacement();
    let mut base = LstmSamples::new(model, &qoi, &traces);
    let a = path_influence_planned(&base, &g, &plan, &disp)?;
    base.qoi_row *= 2.0;
    let b = path_influence_planned(&base, &g, &plan, &disp)?;
    base.qoi_row *= -1.5;
    let c = path_influence_planned(&base, &g, &plan, &disp)?;
    let exact = a.iter().zip(&b).all(|(x, y)| y.attribution == 2.0 * x.attribution);
    let scale = a.iter().fold(0.0f64, |m, x| m.max((3.0 * x.attribution).abs()));
    let worst = a
        .iter()
        .zip(&c)
        .map(|(x, y)| (y.attribution + 3.0 * x.attribution).abs() / scale.max(1e-300))
        .fold(0.0, f64::max);
    Ok((
        exact && worst <= 1e-12,
        format!("λ=2 exact: {exact}; λ=-3 max error relative to largest path {worst:.2e}"),
    ))
}

fn metric_checks(model: &LstmModel, lex: &Lexicon, seed: u64) -> Result<(bool, String)> {
    let g = build_graph(TaskKind::NounPP, 1, 5)?;
    let paths = enumerate_paths(&g)?;
    let plan = PathPlan::compile(&g, &paths)?;
    let primary = primary_path(&g)?;
    let pid = paths.iter().position(|p| *p == primary).expect("primary enumerated");
    let mut table = Vec::new();
    for inst in generate_task_dataset(lex, TaskKind::NounPP, Condition::SS, 4, seed)? {
        let qoi = AgreementQoi::from_instance(&inst);
        let doi = NumberDoi::for_instance(model, lex, &inst, inst.t_sub, 4)?;
        let traces = doi.traces(model)?;
        let attrs = path_influence_planned(&LstmSamples::new(model, &qoi, &traces), &g, &plan, &doi.displacement())?;
        table.push(attrs.iter().map(|a| a.attribution).collect::<Vec<f64>>());
    }
    let exact = t_value_exact(&table, pid)?;
    let samples = 100_000;
    let mc = t_value_sampled(&table, pid, seed, samples)?;
    let sigma = (exact * (1.0 - exact) / samples as f64)
        .sqrt()
        .max(1.0 / samples as f64);
    let mut ok = (mc - exact).abs() <= 3.0 * sigma;
    let (shares, _) = signed_shares(&table, Sign::Positive)?;
    let per_sentence_ok = table.iter().all(|row| {
        let pos: f64 = row.iter().filter(|&&a| a > 0.0).sum();
        pos == 0.0 || (row.iter().filter(|&&a| a > 0.0).map(|a| a / pos).sum::<f64>() - 1.0).abs() <= 1e-12
    });
    ok &= per_sentence_ok && (shares.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
    let scaled: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|a| a * 2.0).collect()).collect();
    ok &= t_value_exact(&scaled, pid)? == exact && share(&scaled, pid)? == share(&table, pid)?;
    Ok((
        ok,
        format!("t exact {exact:.4} vs sampled {mc:.4} (3σ = {:.4})", 3.0 * sigma),
    ))
}

/// Every model-independent property, on `model`.
pub fn run_suite(model: &LstmModel, lex: &Lexicon, opts: &SuiteOptions) -> Vec<Check> {
    let mut out = vec![check_path_counts()];
    let seed = opts.seed;
    let sentences = match check_sentences(lex, opts.sentences_per_task, seed) {
        Ok(s) => s,
        Err(e) => {
            out.push(Check::new("sentences", false, format!("error: {e}")));
            return out;
        }
    };

    out.push(Check::from_result(
        "forward oracle",
        (|| {
            let worst = sentences
                .iter()
                .map(|i| forward_oracle_error(model, &i.tokens))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok((worst <= 1e-12, format!("max rel error {worst:.2e}")))
        })(),
    ));
    out.push(Check::from_result(
        "trace invariants",
        trace_invariants(model, lex, seed),
    ));
    out.push(Check::from_result(
        "edge jacobians",
        (|| {
            let inst = generate_task_dataset(lex, TaskKind::NounPP, Condition::PS, 1, seed)?.remove(0);
            let trace = forward(model, &model.embed_with_bos(&inst.tokens[..inst.t_verb]))?;
            let qoi = AgreementQoi::from_instance(&inst);
            let mut worst: f64 = 0.0;
            for focus in [inst.t_sub, 4] {
                let g = build_graph(inst.task, focus, inst.t_verb)?;
                worst = worst.max(edge_jacobian_fd_error(model, &trace, &qoi, &g, 1e-5)?);
            }
            Ok((worst <= 1e-6, format!("max abs error {worst:.2e}")))
        })(),
    ));
    out.push(Check::from_result(
        "bptt gradients",
        (|| {
            let inst = generate_task_dataset(lex, TaskKind::Simple, Condition::P, 1, seed)?.remove(0);
            let err = bptt_fd_error(model, &inst.tokens, 1e-5)?;
            Ok((err <= 1e-5, format!("max rel error {err:.2e}")))
        })(),
    ));
    out.push(Check::from_result(
        "conservation and partition",
        identity_summary(model, lex, &sentences, opts.k_steps).map(|r| {
            (
                r.max_conservation <= 1e-8 && r.max_partition <= 1e-10,
                format!(
                    "{} cases, conservation {:.2e}, partition {:.2e} ({:.1}s)",
                    r.cases, r.max_conservation, r.max_partition, r.seconds
                ),
            )
        }),
    ));
    out.push(Check::from_result(
        "completeness",
        (|| {
            let subset: Vec<TaskInstance> = sentences.iter().step_by(3).take(10).cloned().collect();
            let r = completeness_summary(model, lex, &subset, &[10, 50, 500], 0.01)?;
            let n = subset.len();
            Ok((
                r.within_tolerance == n && r.monotone * 10 >= 8 * n,
                format!(
                    "{}/{n} within 1% at k=500, {}/{n} monotone",
                    r.within_tolerance, r.monotone
                ),
            ))
        })(),
    ));
    out.push(Check::from_result("qoi linearity", linearity(model, lex, seed)));
    out.push(Check::from_result("metrics", metric_checks(model, lex, seed)));
    out.push(Check::from_result(
        "gate averages",
        shuffle_invariance(model, lex, seed),
    ));
    out.push(Check::from_result(
        "compression no-op",
        compression_no_op(model, lex, seed),
    ));
    out.push(Check::from_result(
        "checkpoint round trip",
        checkpoint_round_trip(model, lex),
    ));
    out.push(Check::from_result("corpus", corpus_checks(lex, opts)));
    out
}

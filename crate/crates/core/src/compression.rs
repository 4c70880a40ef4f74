//! Path-focused compression: gates outside a preserved set are pinned to
//! their dataset means while `c` and `h` are recomputed from them.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::lstm::{forward, forward_with, ActivationTrace, Gate, GateOverride, LstmModel};

/// A gate vector at a model step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GateSite {
    pub gate: Gate,
    pub layer: usize,
    pub step: usize,
}

/// The seven table columns, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    NotSi,
    NotS,
    NotI,
    Si,
    S,
    I,
    Full,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 7] = [
        SchemeKind::NotSi,
        SchemeKind::NotS,
        SchemeKind::NotI,
        SchemeKind::Si,
        SchemeKind::S,
        SchemeKind::I,
        SchemeKind::Full,
    ];

    /// ASCII column name.
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::NotSi => "Cbar_si",
            SchemeKind::NotS => "Cbar_s",
            SchemeKind::NotI => "Cbar_i",
            SchemeKind::Si => "C_si",
            SchemeKind::S => "C_s",
            SchemeKind::I => "C_i",
            SchemeKind::Full => "C",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            SchemeKind::NotSi => "C̄_si",
            SchemeKind::NotS => "C̄_s",
            SchemeKind::NotI => "C̄_i",
            other => other.name(),
        }
    }

    pub fn is_complement(self) -> bool {
        matches!(self, SchemeKind::NotSi | SchemeKind::NotS | SchemeKind::NotI)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.symbol() == s)
            .ok_or_else(|| Error::Scheme(format!("unknown scheme {s:?}")))
    }
}

/// Where interventions apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanMode {
    /// Every step up to the verb-scoring step; `C` is uncompressed.
    #[default]
    Prefix,
    /// Only steps from the subject to the verb; `C` preserves the gates
    /// strictly after the subject.
    Strict,
}

/// How gate means are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// One mean per task, over all its conditions.
    #[default]
    PerTask,
    /// One mean per task and condition.
    PerCondition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionScheme {
    pub name: String,
    /// `None` for the uncompressed model.
    pub preserved: Option<BTreeSet<GateSite>>,
    /// Model steps whose non-preserved gates are replaced.
    pub span: Range<usize>,
}

fn sites(steps: impl Iterator<Item = usize> + Clone, gates: &[Gate]) -> BTreeSet<GateSite> {
    let mut out = BTreeSet::new();
    for step in steps {
        for layer in 0..2 {
            for &gate in gates {
                out.insert(GateSite { gate, layer, step });
            }
        }
    }
    out
}

impl CompressionScheme {
    pub fn uncompressed() -> Self {
        Self {
            name: SchemeKind::Full.name().into(),
            preserved: None,
            span: 0..0,
        }
    }

    pub fn preserving(name: impl Into<String>, preserved: BTreeSet<GateSite>, span: Range<usize>) -> Result<Self> {
        if let Some(bad) = preserved.iter().find(|s| !span.contains(&s.step) || s.layer > 1) {
            return Err(Error::Scheme(format!(
                "preserved gate {bad:?} lies outside the span {span:?}"
            )));
        }
        Ok(Self {
            name: name.into(),
            preserved: Some(preserved),
            span,
        })
    }

    /// Builds a table scheme for a template with an intervening noun.
    pub fn for_task(kind: SchemeKind, task: TaskKind, mode: SpanMode) -> Result<Self> {
        let t_int = task
            .t_int()
            .ok_or_else(|| Error::Scheme(format!("{task} has no intervening noun")))?;
        let (sub_step, int_step, verb_step) = (task.t_sub() + 1, t_int + 1, task.t_verb());
        let span = match mode {
            SpanMode::Prefix => 0..verb_step + 1,
            SpanMode::Strict => sub_step..verb_step + 1,
        };
        let all = sites(span.clone(), &Gate::ALL);
        let s = sites(std::iter::once(sub_step), &[Gate::Cand]);
        let i = sites(std::iter::once(int_step), &[Gate::Cand]);
        let si: BTreeSet<GateSite> = s.union(&i).copied().collect();
        let minus = |x: &BTreeSet<GateSite>| all.difference(x).copied().collect();
        let preserved = match kind {
            SchemeKind::Full => match mode {
                SpanMode::Prefix => return Ok(Self::uncompressed()),
                SpanMode::Strict => sites(sub_step + 1..verb_step + 1, &Gate::ALL),
            },
            SchemeKind::S => s,
            SchemeKind::I => i,
            SchemeKind::Si => si,
            SchemeKind::NotS => minus(&s),
            SchemeKind::NotI => minus(&i),
            SchemeKind::NotSi => minus(&si),
        };
        Self::preserving(kind.name(), preserved, span)
    }
}

/// Mean gate activations per step over a dataset sharing one template.
#[derive(Debug, Clone, PartialEq)]
pub struct GateAverages {
    pub task: TaskKind,
    /// Present when the averages were taken over a single condition.
    pub condition: Option<Condition>,
    /// `values[step][layer][gate]`.
    pub values: Vec<[[Array1<f64>; 4]; 2]>,
    pub count: usize,
}

impl GateAverages {
    pub fn get(&self, site: GateSite) -> &Array1<f64> {
        &self.values[site.step][site.layer][site.gate.index()]
    }
}

/// Arithmetic mean of every gate over the clean forward passes of `data`.
pub fn compute_gate_averages(model: &LstmModel, data: &[TaskInstance]) -> Result<GateAverages> {
    let first = data
        .first()
        .ok_or(Error::Empty("gate averages need at least one sentence"))?;
    if let Some(other) = data
        .iter()
        .find(|d| d.task != first.task || d.t_verb != first.t_verb || d.tokens.len() != first.tokens.len())
    {
        return Err(Error::MixedTemplates(format!(
            "{} and {} instances cannot share gate averages",
            first.task, other.task
        )));
    }
    let steps = first.t_verb + 1;
    let hidden = model.hidden();
    let mut values: Vec<[[Array1<f64>; 4]; 2]> = (0..steps)
        .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| Array1::zeros(hidden))))
        .collect();
    for inst in data {
        let trace = forward(model, &model.embed_with_bos(&inst.tokens[..inst.t_verb]))?;
        for (s, per_step) in values.iter_mut().enumerate() {
            for (l, per_layer) in per_step.iter_mut().enumerate() {
                for (acc, g) in per_layer.iter_mut().zip(&trace.layer(s, l).gates) {
                    *acc += g;
                }
            }
        }
    }
    let n = data.len() as f64;
    for v in values.iter_mut().flatten().flatten() {
        v.mapv_inplace(|x| x / n);
    }
    let conditions: BTreeSet<Condition> = data.iter().map(|d| d.condition).collect();
    Ok(GateAverages {
        task: first.task,
        condition: (conditions.len() == 1).then_some(first.condition),
        values,
        count: data.len(),
    })
}

struct SchemeOverride<'a> {
    preserved: &'a BTreeSet<GateSite>,
    span: Range<usize>,
    averages: &'a GateAverages,
}

impl GateOverride for SchemeOverride<'_> {
    fn gate_value(&self, step: usize, layer: usize, gate: Gate) -> Option<&Array1<f64>> {
        let site = GateSite { gate, layer, step };
        if self.span.contains(&step) && !self.preserved.contains(&site) {
            Some(self.averages.get(site))
        } else {
            None
        }
    }
}

/// Forward pass over `[BOS] ++ tokens[..t_verb]` under `scheme`.
pub fn compressed_forward(
    model: &LstmModel,
    inst: &TaskInstance,
    scheme: &CompressionScheme,
    averages: &GateAverages,
) -> Result<ActivationTrace> {
    let inputs = model.embed_with_bos(&inst.tokens[..inst.t_verb]);
    let Some(preserved) = &scheme.preserved else {
        return forward(model, &inputs);
    };
    if averages.task != inst.task || averages.values.len() != inputs.len() {
        return Err(Error::Scheme(format!(
            "averages for {} do not match a {} instance",
            averages.task, inst.task
        )));
    }
    if averages.condition.is_some_and(|c| c != inst.condition) {
        return Err(Error::Scheme("averages were taken over another condition".into()));
    }
    if scheme.span.end > inputs.len() {
        return Err(Error::Scheme(format!(
            "span {:?} exceeds the {} steps of the instance",
            scheme.span,
            inputs.len()
        )));
    }
    let intervention = SchemeOverride {
        preserved,
        span: scheme.span.clone(),
        averages,
    };
    forward_with(model, &inputs, &intervention)
}

/// NA accuracy under a scheme; ties count as errors.
pub fn compressed_accuracy(
    model: &LstmModel,
    data: &[TaskInstance],
    scheme: &CompressionScheme,
    averages: &GateAverages,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("compressed accuracy needs at least one instance"));
    }
    let mut correct = 0usize;
    for inst in data {
        let trace = compressed_forward(model, inst, scheme, averages)?;
        let logits = &trace.logits[inst.t_verb];
        if logits[inst.verb_correct] > logits[inst.verb_wrong] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompressionOptions {
    pub span: SpanMode,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub task: TaskKind,
    /// `None` for the per-task mean row.
    pub condition: Option<Condition>,
    /// One accuracy per [`SchemeKind::ALL`] entry.
    pub accuracies: Vec<f64>,
}

impl CompressionRow {
    pub fn get(&self, kind: SchemeKind) -> f64 {
        self.accuracies[kind as usize]
    }
}

/// Accuracy of every scheme on every `(task, condition)` dataset, followed by
/// a mean row per task. Rows keep the input order of tasks and conditions.
pub fn run_schemes(
    model: &LstmModel,
    datasets: &[(TaskKind, Condition, Vec<TaskInstance>)],
    options: CompressionOptions,
) -> Result<Vec<CompressionRow>> {
    let mut tasks: Vec<TaskKind> = Vec::new();
    for (task, _, _) in datasets {
        if !tasks.contains(task) {
            tasks.push(*task);
        }
    }
    let averages: Vec<GateAverages> = match options.pooling {
        Pooling::PerTask => tasks
            .iter()
            .map(|t| {
                let pooled: Vec<TaskInstance> = datasets
                    .iter()
                    .filter(|(task, _, _)| task == t)
                    .flat_map(|(_, _, d)| d.iter().cloned())
                    .collect();
                compute_gate_averages(model, &pooled)
            })
            .collect::<Result<_>>()?,
        Pooling::PerCondition => datasets
            .iter()
            .map(|(_, _, d)| compute_gate_averages(model, d))
            .collect::<Result<_>>()?,
    };
    let jobs: Vec<(usize, SchemeKind)> = (0..datasets.len())
        .flat_map(|i| SchemeKind::ALL.into_iter().map(move |k| (i, k)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let (task, _, data) = &datasets[i];
            let avg = match options.pooling {
                Pooling::PerTask => &averages[tasks.iter().position(|t| t == task).expect("task listed")],
                Pooling::PerCondition => &averages[i],
            };
            let scheme = CompressionScheme::for_task(kind, *task, options.span)?;
            compressed_accuracy(model, data, &scheme, avg)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for task in tasks {
        let mut sum = vec![0.0; SchemeKind::ALL.len()];
        let mut n = 0usize;
        for (i, (t, cond, _)) in datasets.iter().enumerate() {
            if *t != task {
                continue;
            }
            let row = accs[i * 7..(i + 1) * 7].to_vec();
            sum.iter_mut().zip(&row).for_each(|(s, a)| *s += a);
            n += 1;
            rows.push(CompressionRow {
                task,
                condition: Some(*cond),
                accuracies: row,
            });
        }
        rows.push(CompressionRow {
            task,
            condition: None,
            accuracies: sum.into_iter().map(|s| s / n as f64).collect(),
        });
    }
    Ok(rows)
}

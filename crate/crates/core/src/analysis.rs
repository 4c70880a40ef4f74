//! Per-condition path analysis: attribution tables, summaries and metric rows.

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Condition, Lexicon, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::graph::{build_graph, count_paths, enumerate_paths, primary_path, Path, UnrolledGraph};
use crate::influence::{
    neuron_influence_with, path_influence_planned, total_influence_with_traces, AgreementQoi, LstmSamples, NumberDoi,
    PathPlan, DEFAULT_K_STEPS,
};
use crate::lstm::LstmModel;
use crate::metrics::{
    neuron_t_values, p_plus, share, signed_shares, t_value, top_k, Focus, MetricReport, Sign, DEFAULT_T_SAMPLES,
    EXACT_T_LIMIT,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisSettings {
    pub k_steps: usize,
    pub t_seed: u64,
    pub t_samples: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            k_steps: DEFAULT_K_STEPS,
            t_seed: 0,
            t_samples: DEFAULT_T_SAMPLES,
        }
    }
}

/// Graph, paths and compiled plan for one `(task, focus)` pair.
pub struct FocusGraph {
    pub task: TaskKind,
    pub focus: Focus,
    pub t_focus: usize,
    pub graph: UnrolledGraph,
    pub paths: Vec<Path>,
    pub plan: PathPlan,
    pub primary: Path,
    pub primary_id: usize,
}

impl FocusGraph {
    pub fn new(task: TaskKind, focus: Focus) -> Result<Self> {
        let t_focus = match focus {
            Focus::Subject => task.t_sub(),
            Focus::Intervening => task
                .t_int()
                .ok_or_else(|| Error::Positions(format!("{task} has no intervening noun")))?,
        };
        let graph = build_graph(task, t_focus, task.t_verb())?;
        let paths = enumerate_paths(&graph)?;
        let plan = PathPlan::compile(&graph, &paths)?;
        let primary = primary_path(&graph)?;
        let primary_id = paths
            .iter()
            .position(|p| *p == primary)
            .ok_or_else(|| Error::PathMismatch("primary path not enumerated".into()))?;
        Ok(Self {
            task,
            focus,
            t_focus,
            graph,
            paths,
            plan,
            primary,
            primary_id,
        })
    }

    /// Focus positions analysed for `task`.
    pub fn foci(task: TaskKind) -> Vec<Focus> {
        if task.has_intervening_noun() {
            vec![Focus::Subject, Focus::Intervening]
        } else {
            vec![Focus::Subject]
        }
    }

    pub fn num_paths(&self) -> u128 {
        count_paths(&self.graph)
    }
}

/// Per-sentence totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceSummary {
    pub sentence_id: usize,
    pub task: TaskKind,
    pub condition: Condition,
    pub focus: Focus,
    pub total_attribution: f64,
    pub q_end: f64,
    pub q_neutral: f64,
    pub primary_attribution: f64,
}

/// Per-path means over the sentences of one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub path_id: usize,
    pub mean_attribution: f64,
    /// Euclidean norm of the mean influence row.
    pub influence_norm: f64,
    pub positive_share: f64,
    pub negative_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAnalysis {
    pub report: MetricReport,
    pub sentences: Vec<SentenceSummary>,
    pub paths: Vec<PathSummary>,
    /// Path with the largest positive share.
    pub top_positive: usize,
    /// Attribution per sentence and path.
    pub table: Vec<Vec<f64>>,
    /// Attribution per sentence and primary-path neuron.
    pub neuron_table: Vec<Vec<f64>>,
}

struct SentenceResult {
    path_attr: Vec<f64>,
    path_influence: Vec<Array1<f64>>,
    neuron_attr: Vec<f64>,
    total: f64,
    q_end: f64,
    q_neutral: f64,
}

fn analyze_sentence(
    model: &LstmModel,
    lex: &Lexicon,
    fg: &FocusGraph,
    inst: &TaskInstance,
    k_steps: usize,
) -> Result<SentenceResult> {
    let qoi = AgreementQoi::from_instance(inst);
    let doi = NumberDoi::for_instance(model, lex, inst, fg.t_focus, k_steps)?;
    let traces = doi.traces(model)?;
    let src = LstmSamples::new(model, &qoi, &traces);
    let disp = doi.displacement();
    let attrs = path_influence_planned(&src, &fg.graph, &fg.plan, &disp)?;
    let neurons = neuron_influence_with(&src, &fg.primary, &disp)?;
    let total = total_influence_with_traces(model, &qoi, &doi, &traces)?;
    Ok(SentenceResult {
        path_attr: attrs.iter().map(|a| a.attribution).collect(),
        path_influence: attrs.into_iter().map(|a| a.influence).collect(),
        neuron_attr: neurons.iter().map(|n| n.attribution).collect(),
        total: total.attribution,
        q_end: total.q_end,
        q_neutral: total.q_neutral,
    })
}

/// Attributions of every path and primary-path neuron on `data`, with the
/// derived metric row. Results do not depend on the rayon thread count.
pub fn analyze_condition(
    model: &LstmModel,
    lex: &Lexicon,
    fg: &FocusGraph,
    data: &[TaskInstance],
    settings: &AnalysisSettings,
) -> Result<ConditionAnalysis> {
    let first = data
        .first()
        .ok_or(Error::Empty("analysis needs at least one sentence"))?;
    let condition = first.condition;
    if data.iter().any(|i| i.task != fg.task || i.condition != condition) {
        return Err(Error::MixedTemplates(format!(
            "dataset for {} {} mixes tasks or conditions",
            fg.task,
            condition.name()
        )));
    }
    let width = fg.paths.len();
    let mut influence_sum = vec![Array1::<f64>::zeros(model.embed_dim()); width];
    let mut table = Vec::with_capacity(data.len());
    let mut neuron_table = Vec::with_capacity(data.len());
    let mut sentences = Vec::with_capacity(data.len());
    let chunk = rayon::current_num_threads().max(1) * 2;
    for (c, block) in data.chunks(chunk).enumerate() {
        let results: Vec<SentenceResult> = block
            .par_iter()
            .map(|inst| analyze_sentence(model, lex, fg, inst, settings.k_steps))
            .collect::<Result<_>>()?;
        for (j, r) in results.into_iter().enumerate() {
            for (acc, inf) in influence_sum.iter_mut().zip(&r.path_influence) {
                *acc += inf;
            }
            sentences.push(SentenceSummary {
                sentence_id: c * chunk + j,
                task: fg.task,
                condition,
                focus: fg.focus,
                total_attribution: r.total,
                q_end: r.q_end,
                q_neutral: r.q_neutral,
                primary_attribution: r.path_attr[fg.primary_id],
            });
            table.push(r.path_attr);
            neuron_table.push(r.neuron_attr);
        }
    }
    let n = data.len() as f64;
    let (pos, _) = signed_shares(&table, Sign::Positive).unwrap_or((vec![0.0; width], data.len()));
    let (neg, _) = signed_shares(&table, Sign::Negative).unwrap_or((vec![0.0; width], data.len()));
    let paths: Vec<PathSummary> = (0..width)
        .map(|p| {
            let mean_inf = &influence_sum[p] / n;
            PathSummary {
                path_id: p,
                mean_attribution: table.iter().map(|r| r[p]).sum::<f64>() / n,
                influence_norm: mean_inf.dot(&mean_inf).sqrt(),
                positive_share: pos[p],
                negative_share: neg[p],
            }
        })
        .collect();
    let top_positive = pos
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let neuron_t = neuron_t_values(&neuron_table, &[])?;
    let top_neurons = top_k(&neuron_t, 2);
    let top_neuron_t = match top_neurons.as_slice() {
        &[a, b] => vec![
            neuron_t_values(&neuron_table, &[b])?[&a],
            neuron_t_values(&neuron_table, &[a])?[&b],
        ],
        _ => top_neurons.iter().map(|i| neuron_t[i]).collect(),
    };
    let totals: Vec<f64> = sentences.iter().map(|s| s.total_attribution).collect();
    let report = MetricReport {
        task: fg.task,
        condition,
        focus: fg.focus,
        p_plus: p_plus(&totals)?,
        num_paths: fg.num_paths() as u64,
        primary_share: share(&table, fg.primary_id)?,
        primary_t: t_value(&table, fg.primary_id, settings.t_seed, settings.t_samples)?,
        primary_mean: paths[fg.primary_id].mean_attribution,
        primary_top_share: top_positive == fg.primary_id,
        neuron_t,
        top_neurons,
        top_neuron_t,
        sentences: data.len(),
        k_steps: settings.k_steps,
        t_seed: settings.t_seed,
        t_samples: settings.t_samples,
        t_exact: width <= EXACT_T_LIMIT,
    };
    Ok(ConditionAnalysis {
        report,
        sentences,
        paths,
        top_positive,
        table,
        neuron_table,
    })
}

/// Neuron pair with the highest mean t-value across `reports`.
pub fn dominant_neurons(reports: &[&MetricReport]) -> Vec<usize> {
    let mut sums = std::collections::BTreeMap::new();
    for r in reports {
        for (&i, &t) in &r.neuron_t {
            *sums.entry(i).or_insert(0.0) += t / reports.len() as f64;
        }
    }
    top_k(&sums, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_lexicon, generate_task_dataset, LexiconConfig};

    #[test]
    fn simple_analysis_is_consistent() {
        let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
        let model = LstmModel::random(lex.len(), 6, 5, lex.bos(), lex.eos(), 2);
        let fg = FocusGraph::new(TaskKind::Simple, Focus::Subject).unwrap();
        let data = generate_task_dataset(&lex, TaskKind::Simple, Condition::P, 5, 3).unwrap();
        let settings = AnalysisSettings {
            k_steps: 8,
            ..Default::default()
        };
        let a = analyze_condition(&model, &lex, &fg, &data, &settings).unwrap();
        assert_eq!(a.table.len(), 5);
        assert_eq!(a.report.num_paths, 16);
        assert_eq!(a.neuron_table[0].len(), 5);
        for (row, s) in a.table.iter().zip(&a.sentences) {
            let sum: f64 = row.iter().sum();
            assert!((sum - s.total_attribution).abs() <= 1e-10 * s.total_attribution.abs().max(1e-12));
        }
        assert!(a.report.t_exact);
        assert_eq!(a.report.top_neuron_t.len(), 2);
        assert_eq!(a.report.primary_top_share, a.top_positive == fg.primary_id);
    }

    #[test]
    fn intervening_focus_needs_a_noun() {
        assert!(FocusGraph::new(TaskKind::Simple, Focus::Intervening).is_err());
        assert_eq!(FocusGraph::foci(TaskKind::NounPP).len(), 2);
    }

    #[test]
    fn mixed_conditions_are_rejected() {
        let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
        let model = LstmModel::random(lex.len(), 4, 3, lex.bos(), lex.eos(), 2);
        let fg = FocusGraph::new(TaskKind::Simple, Focus::Subject).unwrap();
        let mut data = generate_task_dataset(&lex, TaskKind::Simple, Condition::P, 2, 3).unwrap();
        data.extend(generate_task_dataset(&lex, TaskKind::Simple, Condition::S, 2, 3).unwrap());
        assert!(analyze_condition(&model, &lex, &fg, &data, &AnalysisSettings::default()).is_err());
    }
}

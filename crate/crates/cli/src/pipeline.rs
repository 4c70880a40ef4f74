//! Pipeline stages. Each stage writes its artifacts and returns what it
//! computed so callers can inspect results without re-reading files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use ipaths_core::analysis::{analyze_condition, dominant_neurons, AnalysisSettings, ConditionAnalysis, FocusGraph};
use ipaths_core::checks::{run_suite, Check};
use ipaths_core::compression::{run_schemes, CompressionRow, SchemeKind};
use ipaths_core::corpus::{build_lexicon, generate_task_dataset, generate_training_corpus, read_corpus, write_corpus};
use ipaths_core::lstm::{
    na_accuracy, read_checkpoint, train as train_model, write_checkpoint, Checkpoint, EpochReport, NaGate, NaGateReport,
};
use ipaths_core::metrics::MetricReport;
use ipaths_core::{Condition, Lexicon, LstmModel, TaskInstance, TaskKind, TokenId};
use serde::Serialize;

use crate::config::RunConfig;
use crate::provenance::{csv_bytes, ArtifactDir, Provenance};

pub const LEXICON_FILE: &str = "lexicon.json";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const NA_FILE: &str = "na.csv";
pub const TABLE1_FILE: &str = "table1.csv";
pub const SENTENCES_FILE: &str = "sentences.csv";
pub const TOP_PATHS_FILE: &str = "top_paths.csv";
pub const NEURONS_FILE: &str = "neurons.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";
pub const TABLE2_FILE: &str = "table2.csv";
pub const VERIFY_FILE: &str = "verify.json";

pub type Dataset = (TaskKind, Condition, Vec<TaskInstance>);

/// A configuration bound to an output directory.
pub struct Run {
    pub config: RunConfig,
    pub out: ArtifactDir,
}

impl Run {
    pub fn new(config: RunConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let out = ArtifactDir::create(out_dir, Provenance::new(config.hash()))?;
        Ok(Self { config, out })
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        Ok(build_lexicon(&self.config.lexicon.sizes(), self.config.lexicon.seed)?)
    }

    pub fn task_dataset(&self, lex: &Lexicon, task: TaskKind, cond: Condition) -> Result<Vec<TaskInstance>> {
        Ok(generate_task_dataset(
            lex,
            task,
            cond,
            self.config.tasks.per_condition,
            self.config.tasks.seed,
        )?)
    }

    pub fn task_datasets(&self, lex: &Lexicon, tasks: &[TaskKind]) -> Result<Vec<Dataset>> {
        let mut out = Vec::new();
        for &task in tasks {
            for &cond in task.conditions() {
                out.push((task, cond, self.task_dataset(lex, task, cond)?));
            }
        }
        Ok(out)
    }

    /// Writes the lexicon and the training corpus.
    pub fn gen_corpus(&self) -> Result<(Lexicon, Vec<Vec<TokenId>>)> {
        let lex = self.lexicon()?;
        let corpus = generate_training_corpus(&lex, self.config.corpus.sentences, self.config.corpus.seed)?;
        self.out.write_json_object(LEXICON_FILE, &lex)?;
        let mut buf = Vec::new();
        write_corpus(&lex, &corpus, &mut buf)?;
        self.out.write(CORPUS_FILE, &buf)?;
        Ok((lex, corpus))
    }

    /// Writes one JSON array per task and condition under `tasks/`.
    pub fn gen_tasks(&self) -> Result<Vec<PathBuf>> {
        let lex = self.lexicon()?;
        let mut paths = Vec::new();
        for (task, cond, data) in self.task_datasets(&lex, &TaskKind::ALL)? {
            let name = format!("tasks/{}_{}.json", task.name(), cond.name());
            let mut text = serde_json::to_string_pretty(&data)?;
            text.push('\n');
            paths.push(self.out.write(&name, text.as_bytes())?);
        }
        Ok(paths)
    }

    pub fn na_gate(&self, lex: &Lexicon) -> Result<NaGate> {
        let t = &self.config.train;
        let mut datasets = Vec::new();
        for task in [TaskKind::Simple, TaskKind::NounPP] {
            for &cond in task.conditions() {
                datasets.push((
                    task,
                    cond,
                    generate_task_dataset(lex, task, cond, t.dev_per_condition, t.dev_seed)?,
                ));
            }
        }
        Ok(NaGate {
            datasets,
            thresholds: BTreeMap::from([
                (TaskKind::Simple, t.simple_threshold),
                (TaskKind::NounPP, t.noun_pp_threshold),
            ]),
        })
    }

    /// Trains from `corpus_file`, or from the generated corpus when absent.
    /// Fails when the NA gate is required and not met.
    pub fn train(&self, corpus_file: Option<&Path>, mut progress: impl FnMut(&EpochReport)) -> Result<TrainRun> {
        let lex = self.lexicon()?;
        let corpus = match corpus_file {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                read_corpus(&lex, BufReader::new(f))?
            }
            None => generate_training_corpus(&lex, self.config.corpus.sentences, self.config.corpus.seed)?,
        };
        let init = self.config.model.init(&lex);
        let gate = self.na_gate(&lex)?;
        let mut log = Vec::new();
        let outcome = train_model(
            init,
            &corpus,
            &self.config.train.settings(),
            self.config.train.seed,
            Some(&gate),
            |r| {
                log.push(TrainLogRow::from_report(r));
                progress(r);
            },
        )?;
        self.out.write(TRAIN_LOG_FILE, &csv_bytes(&log)?)?;
        let mut info = serde_json::Map::new();
        info.insert("provenance".into(), self.out.provenance().to_value());
        info.insert("epochs_run".into(), outcome.epochs_run.into());
        info.insert("gate_met".into(), outcome.gate_met.into());
        let ckpt = Checkpoint {
            model: outcome.model,
            vocab: lex.vocab().to_vec(),
            info,
        };
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf)?;
        std::fs::write(self.out.path(CHECKPOINT_FILE), &buf)?;
        if self.config.train.require_gate && !outcome.gate_met {
            bail!(
                "NA gate not met after {} epochs: {}",
                outcome.epochs_run,
                outcome.gate.as_ref().map(describe_gate).unwrap_or_default()
            );
        }
        Ok(TrainRun {
            model: ckpt.model,
            lexicon: lex,
            epochs_run: outcome.epochs_run,
            gate: outcome.gate,
            gate_met: outcome.gate_met,
            seconds: outcome.elapsed_secs,
        })
    }

    /// Loads a checkpoint (default `model.json` in the output directory) and
    /// checks it against the configured lexicon.
    pub fn load_model(&self, checkpoint: Option<&Path>) -> Result<(LstmModel, Lexicon)> {
        let path = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out.path(CHECKPOINT_FILE));
        let f = File::open(&path).with_context(|| format!("missing checkpoint {}", path.display()))?;
        let ckpt = read_checkpoint(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        let lex = self.lexicon()?;
        ensure!(
            ckpt.vocab == lex.vocab(),
            "checkpoint vocabulary does not match the configured lexicon"
        );
        Ok((ckpt.model, lex))
    }

    pub fn eval_na(&self, model: &LstmModel, lex: &Lexicon) -> Result<Vec<NaRow>> {
        let mut rows = Vec::new();
        for (task, cond, data) in self.task_datasets(lex, &TaskKind::ALL)? {
            rows.push(NaRow {
                task,
                condition: cond,
                accuracy: na_accuracy(model, &data)?,
                sentences: data.len(),
            });
        }
        self.out.write(NA_FILE, &csv_bytes(&rows)?)?;
        Ok(rows)
    }

    /// Path and neuron analysis for every task, condition and focus.
    pub fn analyze(&self, model: &LstmModel, lex: &Lexicon, tasks: &[TaskKind]) -> Result<Vec<ConditionAnalysis>> {
        let a = &self.config.analysis;
        ensure!(
            a.sentences_per_condition <= self.config.tasks.per_condition,
            "analysis.sentences_per_condition exceeds tasks.per_condition"
        );
        let settings = a.settings();
        let mut results = Vec::new();
        let mut labels = BTreeMap::new();
        let mut graphs = Vec::new();
        for &task in tasks {
            for focus in FocusGraph::foci(task) {
                let fg = FocusGraph::new(task, focus)?;
                labels.insert(format!("{} {}", task.name(), focus.name()), fg.primary.label());
                for &cond in task.conditions() {
                    let data = self.task_dataset(lex, task, cond)?;
                    let start = Instant::now();
                    let r = analyze_condition(model, lex, &fg, &data[..a.sentences_per_condition], &settings)?;
                    log::info!(
                        "{} {} {}: {} paths, {:.1}s",
                        task,
                        cond.name(),
                        focus.name(),
                        fg.paths.len(),
                        start.elapsed().as_secs_f64()
                    );
                    results.push((graphs.len(), r));
                }
                graphs.push(fg);
            }
        }
        self.write_analysis(&graphs, &results, labels, &settings)?;
        Ok(results.into_iter().map(|(_, r)| r).collect())
    }

    fn write_analysis(
        &self,
        graphs: &[FocusGraph],
        results: &[(usize, ConditionAnalysis)],
        primary_paths: BTreeMap<String, String>,
        settings: &AnalysisSettings,
    ) -> Result<()> {
        let reports: Vec<&MetricReport> = results.iter().map(|(_, r)| &r.report).collect();
        self.out.write(
            TABLE1_FILE,
            &csv_bytes(reports.iter().map(|r| Table1Row::from_report(r)))?,
        )?;
        self.out.write(
            SENTENCES_FILE,
            &csv_bytes(results.iter().flat_map(|(_, r)| r.sentences.iter()))?,
        )?;
        let top = self.config.analysis.top_paths;
        let mut top_rows = Vec::new();
        let mut neuron_rows = Vec::new();
        let mut dump = Vec::new();
        for (g, r) in results {
            let fg = &graphs[*g];
            let mut order: Vec<usize> = (0..r.paths.len()).collect();
            order.sort_by(|&x, &y| {
                r.paths[y]
                    .mean_attribution
                    .abs()
                    .total_cmp(&r.paths[x].mean_attribution.abs())
                    .then(x.cmp(&y))
            });
            for (rank, &p) in order.iter().take(top).enumerate() {
                let s = &r.paths[p];
                top_rows.push(TopPathRow {
                    task: r.report.task,
                    condition: r.report.condition,
                    focus: r.report.focus.name(),
                    rank: rank + 1,
                    path_id: p,
                    primary: p == fg.primary_id,
                    path: fg.paths[p].label(),
                    mean_attribution: s.mean_attribution,
                    influence_norm: s.influence_norm,
                    positive_share: s.positive_share,
                    negative_share: s.negative_share,
                });
            }
            let n = r.neuron_table.len() as f64;
            for (&i, &t) in &r.report.neuron_t {
                neuron_rows.push(NeuronRow {
                    task: r.report.task,
                    condition: r.report.condition,
                    focus: r.report.focus.name(),
                    neuron: i,
                    t,
                    mean_attribution: r.neuron_table.iter().map(|row| row[i]).sum::<f64>() / n,
                });
            }
            if self.config.analysis.dump_attributions {
                for s in &r.paths {
                    let line = serde_json::json!({
                        "task": r.report.task,
                        "condition": r.report.condition,
                        "focus": r.report.focus,
                        "path_id": s.path_id,
                        "attribution": s.mean_attribution,
                        "influence_norm": s.influence_norm,
                    });
                    dump.extend_from_slice(line.to_string().as_bytes());
                    dump.push(b'\n');
                }
            }
        }
        self.out.write(TOP_PATHS_FILE, &csv_bytes(&top_rows)?)?;
        self.out.write(NEURONS_FILE, &csv_bytes(&neuron_rows)?)?;
        if self.config.analysis.dump_attributions {
            self.out.write(ATTRIBUTIONS_FILE, &dump)?;
        }
        let subject: Vec<&MetricReport> = reports
            .iter()
            .copied()
            .filter(|r| r.focus == ipaths_core::metrics::Focus::Subject)
            .collect();
        self.out.write_json_object(
            ANALYSIS_FILE,
            &serde_json::json!({
                "settings": settings,
                "primary_paths": primary_paths,
                "dominant_neurons": dominant_neurons(&subject),
                "rows": reports,
            }),
        )?;
        Ok(())
    }

    pub fn compression_datasets(&self, lex: &Lexicon) -> Result<Vec<Dataset>> {
        self.task_datasets(lex, &[TaskKind::NounPP, TaskKind::NounPPAdv])
    }

    pub fn compress(&self, model: &LstmModel, lex: &Lexicon) -> Result<Vec<CompressionRow>> {
        let datasets = self.compression_datasets(lex)?;
        let rows = run_schemes(model, &datasets, self.config.compression.options())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["Task".to_string(), "C".to_string()];
        header.extend(SchemeKind::ALL.iter().map(|k| k.name().to_string()));
        w.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![
                r.task.name().to_string(),
                r.condition.map(|c| c.name()).unwrap_or_else(|| "mean".into()),
            ];
            rec.extend(r.accuracies.iter().map(|a| a.to_string()));
            w.write_record(&rec)?;
        }
        self.out.write(TABLE2_FILE, &w.into_inner()?)?;
        Ok(rows)
    }

    pub fn verify(&self, model: &LstmModel, lex: &Lexicon) -> Result<Vec<Check>> {
        let checks = run_suite(model, lex, &self.config.verify.options());
        self.out
            .write_json_object(VERIFY_FILE, &serde_json::json!({ "checks": checks }))?;
        Ok(checks)
    }

    /// A freshly initialised model from the configured dimensions and seed.
    pub fn random_model(&self, lex: &Lexicon) -> LstmModel {
        self.config.model.init(lex)
    }

    /// Every stage in order: corpus, tasks, training, NA evaluation, path
    /// analysis, compression and the rendered report.
    pub fn run_all(&self, progress: impl FnMut(&EpochReport)) -> Result<PipelineResult> {
        self.gen_corpus()?;
        self.gen_tasks()?;
        let trained = self.train(Some(&self.out.path(CORPUS_FILE)), progress)?;
        let na = self.eval_na(&trained.model, &trained.lexicon)?;
        let analysis = self.analyze(&trained.model, &trained.lexicon, &TaskKind::ALL)?;
        let compression = self.compress(&trained.model, &trained.lexicon)?;
        crate::report::render(&self.out)?;
        Ok(PipelineResult {
            trained,
            na,
            analysis,
            compression,
        })
    }
}

pub struct TrainRun {
    pub model: LstmModel,
    pub lexicon: Lexicon,
    pub epochs_run: usize,
    pub gate: Option<NaGateReport>,
    pub gate_met: bool,
    pub seconds: f64,
}

pub struct PipelineResult {
    pub trained: TrainRun,
    pub na: Vec<NaRow>,
    pub analysis: Vec<ConditionAnalysis>,
    pub compression: Vec<CompressionRow>,
}

pub fn describe_gate(g: &NaGateReport) -> String {
    g.accuracies
        .iter()
        .map(|(t, c, a)| format!("{t} {}: {a:.3}", c.name()))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Serialize)]
struct TrainLogRow {
    epoch: usize,
    batches: usize,
    mean_loss: f64,
    gate_passed: Option<bool>,
    gate: String,
}

impl TrainLogRow {
    fn from_report(r: &EpochReport) -> Self {
        Self {
            epoch: r.epoch,
            batches: r.batches,
            mean_loss: r.mean_loss,
            gate_passed: r.gate.as_ref().map(|g| g.passed),
            gate: r.gate.as_ref().map(describe_gate).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaRow {
    #[serde(rename = "Task")]
    pub task: TaskKind,
    #[serde(rename = "C")]
    pub condition: Condition,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "N")]
    pub sentences: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "PascalCase")]
pub struct Table1Row {
    pub task: TaskKind,
    #[serde(rename = "C")]
    pub condition: Condition,
    pub focus: &'static str,
    #[serde(rename = "P_plus")]
    pub p_plus: f64,
    pub num_paths: u64,
    pub primary_share: f64,
    pub primary_t: f64,
    pub top_neuron1: Option<usize>,
    #[serde(rename = "T1")]
    pub t1: Option<f64>,
    pub top_neuron2: Option<usize>,
    #[serde(rename = "T2")]
    pub t2: Option<f64>,
}

impl Table1Row {
    pub fn from_report(r: &MetricReport) -> Self {
        Self {
            task: r.task,
            condition: r.condition,
            focus: r.focus.name(),
            p_plus: r.p_plus,
            num_paths: r.num_paths,
            primary_share: r.primary_share.signed(),
            primary_t: r.primary_t,
            top_neuron1: r.top_neurons.first().copied(),
            t1: r.top_neuron_t.first().copied(),
            top_neuron2: r.top_neurons.get(1).copied(),
            t2: r.top_neuron_t.get(1).copied(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "PascalCase")]
struct TopPathRow {
    task: TaskKind,
    #[serde(rename = "C")]
    condition: Condition,
    focus: &'static str,
    rank: usize,
    path_id: usize,
    primary: bool,
    path: String,
    mean_attribution: f64,
    influence_norm: f64,
    positive_share: f64,
    negative_share: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "PascalCase")]
struct NeuronRow {
    task: TaskKind,
    #[serde(rename = "C")]
    condition: Condition,
    focus: &'static str,
    neuron: usize,
    #[serde(rename = "T")]
    t: f64,
    mean_attribution: f64,
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ipaths_cli::config::RunConfig;
use ipaths_cli::pipeline::{describe_gate, Run};
use ipaths_cli::{apply_overrides, report};
use ipaths_core::compression::{Pooling, SpanMode};
use ipaths_core::graph::{build_graph, count_paths, enumerate_paths_capped, write_path_dump, DEFAULT_PATH_CAP};
use ipaths_core::metrics::Focus;
use ipaths_core::TaskKind;

#[derive(Parser)]
#[command(
    name = "ipaths",
    version,
    about = "Influence paths through a two-layer LSTM language model"
)]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.hidden=32`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, env = "IPATHS_OUT", default_value = "ipaths-out")]
    out: PathBuf,
    /// Worker threads; 1 gives the canonical single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CheckpointArg {
    /// Model checkpoint; defaults to model.json in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the lexicon and the synthetic training corpus.
    GenCorpus,
    /// Write the number-agreement datasets.
    GenTasks,
    /// Train the language model until the NA gate is met.
    Train {
        /// Corpus file to train on instead of the generated one.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Number-agreement accuracy for every task and condition.
    EvalNa(CheckpointArg),
    /// Count or list the paths of an unrolled graph.
    Paths {
        #[command(subcommand)]
        action: PathsAction,
    },
    /// Path and neuron metrics for every task, condition and focus.
    Analyze {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Restrict to these tasks.
        #[arg(long = "task")]
        tasks: Vec<TaskKind>,
    },
    /// Accuracy under every compression scheme.
    Compress {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, value_parser = parse_span)]
        span: Option<SpanMode>,
        #[arg(long, value_parser = parse_pooling)]
        pooling: Option<Pooling>,
    },
    /// Run the property suite; uses a freshly initialised model without a checkpoint.
    Verify {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render report.md and charts from the CSV outputs.
    Report,
    /// Every stage from corpus generation to the report.
    Run,
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long, default_value = "subject", value_parser = parse_focus)]
    focus: Focus,
}

#[derive(Subcommand)]
enum PathsAction {
    /// Print the number of paths.
    Count(GraphArgs),
    /// Write one path per line as JSON.
    Enumerate {
        #[command(flatten)]
        graph: GraphArgs,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_focus(s: &str) -> Result<Focus, String> {
    match s {
        "subject" => Ok(Focus::Subject),
        "intervening" => Ok(Focus::Intervening),
        _ => Err(format!("unknown focus {s:?}; expected subject or intervening")),
    }
}

fn parse_span(s: &str) -> Result<SpanMode, String> {
    match s {
        "prefix" => Ok(SpanMode::Prefix),
        "strict" => Ok(SpanMode::Strict),
        _ => Err(format!("unknown span {s:?}; expected prefix or strict")),
    }
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    match s {
        "per-task" => Ok(Pooling::PerTask),
        "per-condition" => Ok(Pooling::PerCondition),
        _ => Err(format!("unknown pooling {s:?}; expected per-task or per-condition")),
    }
}

fn focus_position(task: TaskKind, focus: Focus) -> Result<usize> {
    match focus {
        Focus::Subject => Ok(task.t_sub()),
        Focus::Intervening => task.t_int().with_context(|| format!("{task} has no intervening noun")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let text = apply_overrides(&text, &cli.overrides)?;
    RunConfig::from_toml(&text).context("invalid configuration")
}

fn print_progress(r: &ipaths_core::lstm::EpochReport) {
    eprintln!(
        "epoch {} ({} batches): loss {:.4}, {:.0}s{}",
        r.epoch,
        r.batches,
        r.mean_loss,
        r.elapsed_secs,
        r.gate
            .as_ref()
            .map(|g| format!(", {}", describe_gate(g)))
            .unwrap_or_default()
    );
}

fn paths(action: &PathsAction) -> Result<()> {
    let (args, output) = match action {
        PathsAction::Count(a) => (a, None),
        PathsAction::Enumerate { graph, output } => (graph, Some(output)),
    };
    let g = build_graph(args.task, focus_position(args.task, args.focus)?, args.task.t_verb())?;
    match output {
        None => println!("{}", count_paths(&g)),
        Some(path) => {
            let paths = enumerate_paths_capped(&g, DEFAULT_PATH_CAP)?;
            match path {
                Some(p) => {
                    let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    let mut w = std::io::BufWriter::new(f);
                    write_path_dump(&paths, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let mut w = std::io::BufWriter::new(std::io::stdout().lock());
                    write_path_dump(&paths, &mut w)?;
                    w.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = load_config(&cli)?;
    if let Command::Compress { span, pooling, .. } = &cli.command {
        config.compression.span = span.unwrap_or(config.compression.span);
        config.compression.pooling = pooling.unwrap_or(config.compression.pooling);
    }
    match &cli.command {
        Command::Config => {
            print!("{}", config.to_toml()?);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Paths { action } => {
            paths(action)?;
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }
    let run = Run::new(config, &cli.out)?;
    match cli.command {
        Command::Config | Command::Paths { .. } => unreachable!("handled above"),
        Command::GenCorpus => {
            let (lex, corpus) = run.gen_corpus()?;
            println!("{} sentences, vocabulary of {}", corpus.len(), lex.len());
        }
        Command::GenTasks => {
            for p in run.gen_tasks()? {
                println!("{}", p.display());
            }
        }
        Command::Train { corpus } => {
            let t = run.train(corpus.as_deref(), print_progress)?;
            println!(
                "trained {} epochs in {:.0}s, gate met: {}",
                t.epochs_run, t.seconds, t.gate_met
            );
        }
        Command::EvalNa(c) => {
            let (model, lex) = run.load_model(c.checkpoint.as_deref())?;
            for r in run.eval_na(&model, &lex)? {
                println!("{} {}: {:.3}", r.task, r.condition.name(), r.accuracy);
            }
        }
        Command::Analyze { ckpt, tasks } => {
            let (model, lex) = run.load_model(ckpt.checkpoint.as_deref())?;
            let tasks = if tasks.is_empty() {
                TaskKind::ALL.to_vec()
            } else {
                tasks
            };
            for a in run.analyze(&model, &lex, &tasks)? {
                let r = &a.report;
                println!(
                    "{} {} {}: P+ {:.2}, share {:+.3}, t {:.3}, neurons {:?}",
                    r.task,
                    r.condition.name(),
                    r.focus.name(),
                    r.p_plus,
                    r.primary_share.signed(),
                    r.primary_t,
                    r.top_neurons
                );
            }
        }
        Command::Compress { ckpt, .. } => {
            let (model, lex) = run.load_model(ckpt.checkpoint.as_deref())?;
            for r in run.compress(&model, &lex)? {
                let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.2}")).collect();
                println!(
                    "{} {}: {}",
                    r.task,
                    r.condition.map(|c| c.name()).unwrap_or_else(|| "mean".into()),
                    accs.join(" ")
                );
            }
        }
        Command::Verify { checkpoint } => {
            let (model, lex) = match checkpoint {
                Some(p) => run.load_model(Some(&p))?,
                None => {
                    let lex = run.lexicon()?;
                    (run.random_model(&lex), lex)
                }
            };
            let checks = run.verify(&model, &lex)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", checks.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report => {
            report::render(&run.out)?;
            println!("{}", run.out.path(report::REPORT_FILE).display());
        }
        Command::Run => {
            let r = run.run_all(print_progress)?;
            println!(
                "pipeline complete: {} epochs, {} analysis rows, {} compression rows",
                r.trained.epochs_run,
                r.analysis.len(),
                r.compression.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

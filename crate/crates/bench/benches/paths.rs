use criterion::{criterion_group, criterion_main, Criterion};
use ipaths_core::corpus::{build_lexicon, generate_task_dataset};
use ipaths_core::graph::{build_graph, count_paths, enumerate_paths};
use ipaths_core::influence::{path_influence_planned, total_influence, LstmSamples, PathPlan};
use ipaths_core::{AgreementQoi, Condition, LexiconConfig, LstmModel, NumberDoi, TaskKind};
use std::hint::black_box;

fn enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("graph");
    for task in TaskKind::ALL {
        let g = build_graph(task, task.t_sub(), task.t_verb()).unwrap();
        group.bench_function(format!("count/{task}"), |b| b.iter(|| count_paths(black_box(&g))));
        group.bench_function(format!("enumerate/{task}"), |b| {
            b.iter(|| enumerate_paths(black_box(&g)).unwrap())
        });
    }
    group.finish();
}

fn influence(c: &mut Criterion) {
    let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
    let model = LstmModel::random(lex.len(), 32, 64, lex.bos(), lex.eos(), 3);
    let mut group = c.benchmark_group("influence");
    group.sample_size(10);
    for (task, cond) in [(TaskKind::Simple, Condition::S), (TaskKind::NounPP, Condition::SP)] {
        let inst = generate_task_dataset(&lex, task, cond, 1, 5).unwrap().remove(0);
        let qoi = AgreementQoi::from_instance(&inst);
        let doi = NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, 50).unwrap();
        let g = build_graph(task, inst.t_sub, inst.t_verb).unwrap();
        let plan = PathPlan::compile(&g, &enumerate_paths(&g).unwrap()).unwrap();
        let traces = doi.traces(&model).unwrap();
        let disp = doi.displacement();
        group.bench_function(format!("total/{task}"), |b| {
            b.iter(|| total_influence(&model, &qoi, &doi).unwrap())
        });
        group.bench_function(format!("all_paths/{task}"), |b| {
            b.iter(|| path_influence_planned(&LstmSamples::new(&model, &qoi, &traces), &g, &plan, &disp).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, enumeration, influence);
criterion_main!(benches);

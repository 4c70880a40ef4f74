use ipaths_core::corpus::{build_lexicon, generate_task_dataset};
use ipaths_core::graph::{build_graph, enumerate_paths, primary_path, NodeId, UnrolledGraph};
use ipaths_core::influence::{neuron_influence, path_influence, path_influence_with, total_influence, JacobianSource};
use ipaths_core::lstm::EdgeJacobian;
use ipaths_core::{AgreementQoi, Condition, LexiconConfig, LstmModel, NumberDoi, Result, TaskKind};
use ndarray::{array, Array1};

struct FixedRows(Vec<Array1<f64>>);

impl<'a> JacobianSource<'a> for FixedRows {
    fn samples(&self) -> usize {
        self.0.len()
    }

    fn jacobian(&self, sample: usize, _from: NodeId, _to: NodeId) -> Result<EdgeJacobian<'a>> {
        Ok(EdgeJacobian::Row(self.0[sample].clone()))
    }
}

#[test]
fn single_edge_influence_is_the_averaged_gradient() {
    let g = UnrolledGraph::from_edges(NodeId::input(0), NodeId::qoi(), &[(NodeId::input(0), NodeId::qoi())]).unwrap();
    let paths = enumerate_paths(&g).unwrap();
    let rows = vec![array![1.0, -2.0, 0.5], array![3.0, 0.0, 0.5], array![-1.0, 4.0, 2.0]];
    let disp = array![0.5, 1.0, -2.0];
    let out = path_influence_with(&FixedRows(rows), &g, &paths, &disp).unwrap();
    assert_eq!(out.len(), 1);
    let mean = array![1.0, 2.0 / 3.0, 1.0];
    for (a, b) in out[0].influence.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((out[0].attribution - (0.5 + 2.0 / 3.0 - 2.0)).abs() < 1e-15);
}

fn setup(task: TaskKind, cond: Condition) -> (LstmModel, ipaths_core::TaskInstance, ipaths_core::Lexicon) {
    let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
    let model = LstmModel::random(lex.len(), 8, 6, lex.bos(), lex.eos(), 21);
    let inst = generate_task_dataset(&lex, task, cond, 1, 3).unwrap().remove(0);
    (model, inst, lex)
}

#[test]
fn paths_conserve_total_influence_on_nounpp() {
    let (model, inst, lex) = setup(TaskKind::NounPP, Condition::SP);
    let qoi = AgreementQoi::from_instance(&inst);
    for t_focus in [inst.t_sub, inst.t_int.unwrap()] {
        let doi = NumberDoi::for_instance(&model, &lex, &inst, t_focus, 12).unwrap();
        let g = build_graph(inst.task, t_focus, inst.t_verb).unwrap();
        let paths = enumerate_paths(&g).unwrap();
        let per_path = path_influence(&model, &qoi, &doi, &g, &paths).unwrap();
        let total = total_influence(&model, &qoi, &doi).unwrap();
        let sum: f64 = per_path.iter().map(|p| p.attribution).sum();
        assert!((sum - total.attribution).abs() <= 1e-10 * total.attribution.abs().max(1e-12));
    }
}

#[test]
fn neurons_partition_the_primary_path() {
    let (model, inst, lex) = setup(TaskKind::NounPPAdv, Condition::PS);
    let qoi = AgreementQoi::from_instance(&inst);
    let doi = NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, 10).unwrap();
    let g = build_graph(inst.task, inst.t_sub, inst.t_verb).unwrap();
    let primary = primary_path(&g).unwrap();
    let whole = path_influence(&model, &qoi, &doi, &g, std::slice::from_ref(&primary)).unwrap();
    let parts = neuron_influence(&model, &qoi, &doi, &primary).unwrap();
    assert_eq!(parts.len(), model.hidden());
    let sum: f64 = parts.iter().map(|p| p.attribution).sum();
    assert!((sum - whole[0].attribution).abs() <= 1e-12 * whole[0].attribution.abs().max(1e-12));
}

#[test]
fn completeness_improves_with_more_samples() {
    let (model, inst, lex) = setup(TaskKind::Simple, Condition::P);
    let qoi = AgreementQoi::from_instance(&inst);
    let err = |k| {
        let t = total_influence(
            &model,
            &qoi,
            &NumberDoi::for_instance(&model, &lex, &inst, inst.t_sub, k).unwrap(),
        )
        .unwrap();
        (t.attribution - (t.q_end - t.q_neutral)).abs()
    };
    assert!(err(400) < err(20));
}

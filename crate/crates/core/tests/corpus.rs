use ipaths_core::corpus::{
    build_lexicon, generate_task_dataset, generate_training_corpus, read_corpus, template_of, write_corpus, Category,
};
use ipaths_core::{Lexicon, LexiconConfig, TaskKind};
use proptest::prelude::*;

fn lexicon() -> Lexicon {
    build_lexicon(&LexiconConfig::default(), 1).unwrap()
}

fn task_strategy() -> impl Strategy<Value = TaskKind> {
    prop::sample::select(TaskKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn instances_follow_their_template(task in task_strategy(), seed in any::<u64>(), pick in 0usize..4) {
        let lex = lexicon();
        let conds = task.conditions();
        let cond = conds[pick % conds.len()];
        for inst in generate_task_dataset(&lex, task, cond, 8, seed).unwrap() {
            prop_assert_eq!(inst.tokens.len(), task.template_len());
            prop_assert_eq!(template_of(&lex, &inst.tokens), Some(task));
            prop_assert_eq!((inst.t_sub, inst.t_int, inst.t_verb), (task.t_sub(), task.t_int(), task.t_verb()));
            prop_assert_eq!(lex.number(inst.tokens[inst.t_sub]), Some(cond.subject()));
            prop_assert_eq!(inst.t_int.and_then(|t| lex.number(inst.tokens[t])), cond.intervening());
            prop_assert_eq!(lex.number(inst.verb_correct), Some(cond.subject()));
            prop_assert_eq!(lex.number_swap(inst.verb_correct), Some(inst.verb_wrong));
            prop_assert_eq!(&inst.with_swapped_verbs().with_swapped_verbs(), &inst);
        }
    }

    #[test]
    fn every_number_token_swaps_back(id in 0usize..113) {
        let lex = lexicon();
        prop_assume!(id < lex.len());
        if let Some(twin) = lex.number_swap(id) {
            prop_assert_ne!(twin, id);
            prop_assert_eq!(lex.number_swap(twin), Some(id));
            prop_assert_eq!(lex.number(twin).map(|n| n.flip()), lex.number(id));
        }
    }

    #[test]
    fn corpus_sentences_agree_and_round_trip(seed in any::<u64>()) {
        let lex = lexicon();
        let corpus = generate_training_corpus(&lex, 40, seed).unwrap();
        for s in &corpus {
            let nouns: Vec<_> = s.iter().filter(|&&t| matches!(lex.category(t), Category::Noun(_))).collect();
            let verb = s.iter().find(|&&t| matches!(lex.category(t), Category::Verb(_))).unwrap();
            prop_assert_eq!(lex.number(*nouns[0]), lex.number(*verb));
        }
        let mut buf = Vec::new();
        write_corpus(&lex, &corpus, &mut buf).unwrap();
        prop_assert_eq!(read_corpus(&lex, buf.as_slice()).unwrap(), corpus);
    }
}

#[test]
fn default_lexicon_has_the_reference_vocabulary_size() {
    assert_eq!(lexicon().len(), 113);
}

use ipaths_core::checks::{run_suite, SuiteOptions};
use ipaths_core::corpus::build_lexicon;
use ipaths_core::{LexiconConfig, LstmModel};

#[test]
fn suite_passes_on_a_fresh_random_model() {
    let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
    let model = LstmModel::random(lex.len(), 32, 64, lex.bos(), lex.eos(), 5);
    let opts = SuiteOptions {
        seed: 7,
        sentences_per_task: 4,
        k_steps: 20,
        corpus_sentences: 20_000,
    };
    let checks = run_suite(&model, &lex, &opts);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    assert!(checks.iter().all(|c| c.passed));
}

use ipaths_core::checks::{bptt_fd_error, forward_oracle_error};
use ipaths_core::corpus::build_lexicon;
use ipaths_core::lstm::{forward, read_checkpoint, write_checkpoint, Checkpoint};
use ipaths_core::{Gate, LexiconConfig, LstmModel};
use proptest::prelude::*;

fn small_model(seed: u64) -> LstmModel {
    LstmModel::random(20, 5, 7, 0, 1, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_matches_scalar_oracle(seed in any::<u64>(), tokens in prop::collection::vec(2usize..20, 1..9)) {
        prop_assert!(forward_oracle_error(&small_model(seed), &tokens).unwrap() <= 1e-12);
    }

    #[test]
    fn gates_stay_in_range(seed in any::<u64>(), tokens in prop::collection::vec(2usize..20, 1..9)) {
        let model = small_model(seed);
        let trace = forward(&model, &model.embed_with_bos(&tokens)).unwrap();
        for step in &trace.steps {
            for l in step {
                for g in Gate::ALL {
                    let range = if g == Gate::Cand { -1.0..=1.0 } else { 0.0..=1.0 };
                    prop_assert!(l.gate(g).iter().all(|v| range.contains(v)));
                }
                prop_assert!(l.h.iter().all(|&v| (-1.0..=1.0).contains(&v)));
            }
        }
    }
}

#[test]
fn bptt_matches_finite_differences() {
    let model = small_model(11);
    assert!(bptt_fd_error(&model, &[4, 9, 13], 1e-5).unwrap() <= 1e-5);
}

#[test]
fn forget_bias_shift_touches_only_forget_gates() {
    let base = small_model(3);
    let mut shifted = base.clone();
    shifted.shift_forget_bias(&[-2.0, 2.0]);
    for (l, (a, b)) in base.layers.iter().zip(&shifted.layers).enumerate() {
        let delta = if l == 0 { -2.0 } else { 2.0 };
        for g in 0..4 {
            assert_eq!(a.w[g], b.w[g]);
            let expected = if g == Gate::Forget.index() {
                &a.b[g] + delta
            } else {
                a.b[g].clone()
            };
            assert_eq!(b.b[g], expected);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let lex = build_lexicon(&LexiconConfig::default(), 1).unwrap();
    let model = LstmModel::random(lex.len(), 6, 5, lex.bos(), lex.eos(), 2);
    let ckpt = Checkpoint {
        model,
        vocab: lex.vocab().to_vec(),
        info: Default::default(),
    };
    let mut buf = Vec::new();
    write_checkpoint(&ckpt, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back.model, ckpt.model);
    assert_eq!(back.vocab, ckpt.vocab);
}

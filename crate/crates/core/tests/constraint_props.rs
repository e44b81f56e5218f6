mod support;

use nprompt_core::constraint::{ConstraintAutomaton, ConstraintSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{naive_status, random_sequence, random_spec, word_vocab};

fn instance(seed: u64) -> (nprompt_core::lm::Vocabulary, ConstraintSpec, Vec<nprompt_core::lm::TokenId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + (seed % 14) as usize;
    let vocab = word_vocab(n);
    let spec = random_spec(&mut rng, n, 4, 3, 0.25);
    let seq = random_sequence(&mut rng, &vocab, 12);
    (vocab, spec, seq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn automaton_agrees_with_substring_scan(seed in any::<u64>()) {
        let (vocab, spec, seq) = instance(seed);
        let a = ConstraintAutomaton::compile(&spec, &vocab).unwrap();
        let state = a.run(&seq);
        let status = a.status(&state);
        let naive = naive_status(&spec, &vocab, &seq);
        prop_assert_eq!(&status.signature, &naive.counts);
        prop_assert_eq!(&status.clauses, &naive.clauses);
        prop_assert_eq!(status.satisfied, naive.satisfied);
        prop_assert_eq!(status.violated, naive.violated);
        let mut spans: Vec<_> = state
            .satisfied_spans()
            .iter()
            .map(|s| (s.predicate, s.start, s.end))
            .collect();
        spans.sort_unstable();
        prop_assert_eq!(spans, naive.spans);
    }

    #[test]
    fn positive_counts_never_decrease(seed in any::<u64>()) {
        let (vocab, mut spec, seq) = instance(seed);
        for c in &mut spec.clauses {
            c.predicates.retain(|p| !p.negated);
            c.max_satisfied = None;
            c.min_satisfied = 1;
        }
        spec.clauses.retain(|c| !c.predicates.is_empty());
        let a = ConstraintAutomaton::compile(&spec, &vocab).unwrap();
        let mut state = a.initial();
        for &t in &seq {
            let next = a.advance(&state, t);
            for (before, after) in state.counts().iter().zip(next.counts()) {
                prop_assert!(after >= before);
            }
            state = next;
        }
    }

    #[test]
    fn violation_is_permanent(seed in any::<u64>()) {
        let (vocab, spec, seq) = instance(seed);
        let a = ConstraintAutomaton::compile(&spec, &vocab).unwrap();
        let mut state = a.initial();
        let mut seen_violation = state.violated();
        for &t in &seq {
            a.advance_in_place(&mut state, t);
            if seen_violation {
                prop_assert!(state.violated());
            }
            seen_violation |= state.violated();
        }
    }

    #[test]
    fn spans_reread_as_their_phrase(seed in any::<u64>()) {
        let (vocab, spec, seq) = instance(seed);
        let a = ConstraintAutomaton::compile(&spec, &vocab).unwrap();
        let state = a.run(&seq);
        for s in state.satisfied_spans() {
            prop_assert!(s.end <= seq.len() && s.start < s.end);
            prop_assert_eq!(
                vocab.detokenize(&seq[s.start..s.end]),
                a.predicates()[s.predicate].phrase.clone()
            );
        }
    }

    #[test]
    fn text_format_round_trips(seed in any::<u64>()) {
        let (_, spec, _) = instance(seed);
        let back = ConstraintSpec::parse(&spec.to_string()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

use proptest::prelude::*;

use symword::datagen::{
    generate_sample, sample_window_plan, write_dataset, DataGenConfig, Dataset, Split, WindowMode,
};
use symword::eval::self_similarity;
use symword::model::build_mask;
use symword::perm::support_size;
use symword::{Permutation, Token, TokenScheme, Transposition, Word};

fn perm(n: usize) -> impl Strategy<Value = Permutation> {
    Just((1..=n).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|v| Permutation::from_one_line(v).unwrap())
}

fn three_perms() -> impl Strategy<Value = (Permutation, Permutation, Permutation)> {
    (1usize..10).prop_flat_map(|n| (perm(n), perm(n), perm(n)))
}

fn general_word() -> impl Strategy<Value = (TokenScheme, Vec<Token>)> {
    (2usize..12).prop_flat_map(|n| {
        let scheme = TokenScheme::general(n).unwrap();
        let t = scheme.transposition_tokens() as Token;
        (Just(scheme), prop::collection::vec(0..t, scheme.word_len()))
    })
}

fn adjacent_word() -> impl Strategy<Value = (TokenScheme, Vec<Token>)> {
    (2usize..9).prop_flat_map(|n| {
        let scheme = TokenScheme::adjacent(n).unwrap();
        (Just(scheme), prop::collection::vec(0..n as Token, scheme.word_len()))
    })
}

proptest! {
    #[test]
    fn composition_is_associative((a, b, c) in three_perms()) {
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn inverse_cancels((a, _, _) in three_perms()) {
        prop_assert!(a.compose(&a.inverse()).unwrap().is_identity());
        prop_assert!(a.inverse().compose(&a).unwrap().is_identity());
    }

    #[test]
    fn transposition_acts_by_composition((a, _, _) in three_perms(), i in 1usize..10, j in 1usize..10) {
        let n = a.degree();
        let (i, j) = ((i - 1) % n + 1, (j - 1) % n + 1);
        let t = Word::new(vec![Transposition::new(i, j)]).evaluate(n).unwrap();
        prop_assert_eq!(a.apply_transposition(Transposition::new(i, j)).unwrap(), a.compose(&t).unwrap());
    }

    #[test]
    fn word_evaluation_splits((scheme, tokens) in general_word(), cut in 0usize..12) {
        let n = scheme.n;
        let cut = cut.min(tokens.len());
        let whole = scheme.decode_word(&tokens).unwrap().evaluate(n).unwrap();
        let head = scheme.decode_word(&tokens[..cut]).unwrap().evaluate(n).unwrap();
        let tail = scheme.decode_word(&tokens[cut..]).unwrap().evaluate(n).unwrap();
        prop_assert_eq!(whole, head.compose(&tail).unwrap());
    }

    #[test]
    fn reversed_word_gives_inverse((scheme, tokens) in adjacent_word()) {
        let n = scheme.n;
        let fwd = scheme.decode_word(&tokens).unwrap().evaluate(n).unwrap();
        let rev: Vec<Token> = tokens.iter().rev().copied().collect();
        let back = scheme.decode_word(&rev).unwrap().evaluate(n).unwrap();
        prop_assert_eq!(back, fwd.inverse());
    }

    #[test]
    fn support_is_bounded_by_moved_indices((scheme, tokens) in general_word()) {
        let word = scheme.decode_word(&tokens).unwrap();
        let mut touched = std::collections::BTreeSet::new();
        for t in word.factors().iter().filter(|t| !t.is_identity()) {
            touched.insert(t.i);
            touched.insert(t.j);
        }
        prop_assert!(support_size(&word.evaluate(scheme.n).unwrap()) <= touched.len());
    }

    #[test]
    fn general_training_rows_stay_in_a_subgroup(n in 4usize..14, m_off in 1usize..4, seed in any::<u64>(), row in 0u64..1_000_000) {
        let m = n.saturating_sub(m_off).max(1);
        let cfg = DataGenConfig::new(TokenScheme::general(n).unwrap(), m, 10, seed, Split::Train);
        let s = generate_sample(&cfg, row).unwrap();
        let mut indices = std::collections::BTreeSet::new();
        for &t in &s.word_tokens {
            let x = t as usize;
            indices.insert(x % n);
            indices.insert(x / n);
        }
        prop_assert!(indices.len() <= m);
        prop_assert!(s.target.support_size() <= m);
    }

    #[test]
    fn rows_are_reproducible(seed in any::<u64>(), row in 0u64..1_000_000, adjacent in any::<bool>()) {
        let scheme = if adjacent { TokenScheme::adjacent(8) } else { TokenScheme::general(8) }.unwrap();
        for split in [Split::Train, Split::Validation, Split::Test] {
            let cfg = DataGenConfig::new(scheme, 6, 10, seed, split);
            let a = generate_sample(&cfg, row).unwrap();
            prop_assert_eq!(&a, &generate_sample(&cfg, row).unwrap());
            prop_assert_eq!(a.word_tokens.len(), scheme.word_len());
            let again = scheme.decode_word(&a.word_tokens).unwrap().evaluate(8).unwrap();
            prop_assert_eq!(again, a.target);
        }
    }

    #[test]
    fn window_plans_are_admissible(m in 3usize..16, extra in 0usize..6, seed in any::<u64>()) {
        let n = m + 1 + extra;
        let len = n * (n - 1) / 2;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let plan = sample_window_plan(m, n, len, 3, &mut rng).unwrap();
        prop_assert!(plan.validate(n, 3).is_ok());
        prop_assert_eq!(plan.parts.iter().sum::<usize>(), m);
        prop_assert_eq!(plan.assignments.len(), len);
        for slot in 0..len {
            prop_assert!(plan.slot_range(slot).end <= n);
        }
    }

    #[test]
    fn adjacent_training_tokens_are_valid(m in 3usize..8, seed in any::<u64>(), row in 0u64..100_000, naive in any::<bool>()) {
        let scheme = TokenScheme::adjacent(8).unwrap();
        let mut cfg = DataGenConfig::new(scheme, m, 10, seed, Split::Train);
        if naive {
            cfg.windows = WindowMode::Naive;
        }
        let s = generate_sample(&cfg, row).unwrap();
        prop_assert!(scheme.check_word(&s.word_tokens).is_ok());
    }

    #[test]
    fn mask_structure(word_len in 1usize..40, n_pred in 1usize..30) {
        let mask = build_mask(word_len, n_pred);
        let c = word_len + n_pred;
        prop_assert_eq!(mask.size(), c);
        for r in 0..c {
            for col in 0..c {
                prop_assert_eq!(mask.allows(r, col), col < word_len || (r >= word_len && col <= r));
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(values in prop::collection::vec(-3.0f64..3.0, 24)) {
        let table = ndarray::Array2::from_shape_vec((6, 4), values).unwrap();
        let s = self_similarity(table.view(), (0..6).map(|k| k.to_string()).collect());
        for i in 0..6 {
            for j in 0..6 {
                prop_assert_eq!(s.values[[i, j]], s.values[[j, i]]);
                prop_assert!(s.values[[i, j]].abs() <= 1.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_file_round_trip(seed in any::<u64>(), count in 1usize..200, adjacent in any::<bool>()) {
        let scheme = if adjacent { TokenScheme::adjacent(6) } else { TokenScheme::general(6) }.unwrap();
        let cfg = DataGenConfig::new(scheme, 4, count, seed, Split::Validation);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let header = write_dataset(&cfg, &path).unwrap();
        prop_assert_eq!(header.count, count);
        for open in [Dataset::open, Dataset::open_streaming] {
            let d = open(&path).unwrap();
            prop_assert_eq!(d.len(), count);
            for row in [0, count / 2, count - 1] {
                prop_assert_eq!(d.sample(row).unwrap(), generate_sample(&cfg, row as u64).unwrap());
            }
        }
    }
}

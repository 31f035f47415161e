mod common;

use std::collections::HashSet;

use common::small_corpus;
use proptest::prelude::*;
use tempdrift::splits::{
    dev_size, make_cont_split, make_prog_splits, make_temp_split, prog_bins, temporal_halves, ExperimentSplit,
};

fn set(ids: &[String]) -> HashSet<&str> {
    ids.iter().map(String::as_str).collect()
}

fn assert_disjoint(s: &ExperimentSplit) {
    let (tr, dv, te) = (set(&s.train_ids), set(&s.dev_ids), set(&s.test_ids));
    assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
    assert_eq!(tr.len() + dv.len() + te.len(), s.train_ids.len() + s.dev_ids.len() + s.test_ids.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn temp_and_cont_contracts(gen_seed in 0u64..10_000, split_seed in 0u64..10_000, n in 40usize..400) {
        let corpus = small_corpus(gen_seed, n);
        let (first, second) = temporal_halves(&corpus).unwrap();
        let temp = make_temp_split(&corpus, split_seed).unwrap();
        assert_disjoint(&temp);
        prop_assert_eq!(set(&temp.test_ids).len(), second.len() / 2);
        prop_assert!(set(&temp.test_ids).is_subset(&set(&second)));
        prop_assert_eq!(temp.pool_len(), first.len());
        prop_assert_eq!(temp.dev_ids.len(), dev_size(first.len()));

        let needed = first.len() - first.len().div_ceil(2);
        match make_cont_split(&corpus, split_seed) {
            Ok(cont) => {
                assert_disjoint(&cont);
                prop_assert_eq!(&cont.test_ids, &temp.test_ids);
                prop_assert_eq!(cont.pool_len(), temp.pool_len());
                let pool: Vec<String> = cont.train_ids.iter().chain(&cont.dev_ids).cloned().collect();
                let from_first = pool.iter().filter(|id| set(&first).contains(id.as_str())).count();
                prop_assert_eq!(from_first, first.len().div_ceil(2));
            }
            Err(_) => prop_assert!(second.len() - second.len() / 2 < needed),
        }
        prop_assert_eq!(make_temp_split(&corpus, split_seed).unwrap(), temp);
    }

    #[test]
    fn prog_contracts(gen_seed in 0u64..10_000, n in 30usize..300, n_bins in 3usize..12) {
        let corpus = small_corpus(gen_seed, n);
        let splits = make_prog_splits(&corpus, n_bins).unwrap();
        let bins = prog_bins(&corpus, n_bins).unwrap();
        prop_assert_eq!(splits.len(), n_bins - 2);
        let sizes: Vec<usize> = bins.iter().map(|r| r.len()).collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]) && sizes[0] - sizes[n_bins - 1] <= 1);
        let ids: Vec<&str> = corpus.examples().iter().map(|e| e.id.as_str()).collect();
        for (k, s) in splits.iter().enumerate() {
            let t = k + 2;
            assert_disjoint(s);
            prop_assert_eq!(s.prog_step, Some(t));
            prop_assert_eq!(set(&s.test_ids), ids[bins[t].clone()].iter().copied().collect::<HashSet<_>>());
            prop_assert_eq!(set(&s.dev_ids), ids[bins[t - 1].clone()].iter().copied().collect::<HashSet<_>>());
            prop_assert_eq!(set(&s.train_ids), ids[0..bins[t - 2].end].iter().copied().collect::<HashSet<_>>());
        }
    }
}

#[test]
fn temp_hand_sizes() {
    // Timestamps 0..100 put 50 examples in each half.
    let exs: Vec<_> = small_corpus(1, 100)
        .examples()
        .iter()
        .enumerate()
        .map(|(i, e)| tempdrift::corpus::TimedExample { timestamp: i as i64, ..e.clone() })
        .collect();
    let corpus = tempdrift::corpus::Corpus::new(exs, 2).unwrap();
    let s = make_temp_split(&corpus, 3).unwrap();
    assert_eq!((s.train_ids.len(), s.dev_ids.len(), s.test_ids.len()), (45, 5, 25));
}

#[test]
fn prog_hand_bin_sizes() {
    let corpus = small_corpus(2, 23);
    let sizes: Vec<usize> = prog_bins(&corpus, 10).unwrap().iter().map(|r| r.len()).collect();
    assert_eq!(sizes, [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
}

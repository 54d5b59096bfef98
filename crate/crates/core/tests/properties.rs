use nalgebra::DMatrix;
use proptest::collection::vec;
use proptest::prelude::*;

use seqjoint::cipher::{encipher, random_permutation, round_to_permutation, Permutation};
use seqjoint::corpus::{accumulate_ngrams, BOUNDARY};
use seqjoint::metrics::{edit_distance, spearman};
use seqjoint::optim::{clip_global_norm, l2_norm};

fn padded(n: usize) -> impl Strategy<Value = Vec<usize>> {
    vec(1..n, 1..30).prop_map(|mut s| {
        s.insert(0, BOUNDARY);
        s.push(BOUNDARY);
        s
    })
}

proptest! {
    #[test]
    fn ngram_tables_are_marginally_consistent(corpus in vec(padded(5), 1..8)) {
        let stats = accumulate_ngrams(&corpus, 5, 3).unwrap();
        let b = stats.bigram_matrix().unwrap();
        for i in 0..5 {
            prop_assert!((b.row(i).sum() - stats.unigram[i]).abs() < 1e-12);
            prop_assert!((b.column(i).sum() - stats.unigram[i]).abs() < 1e-12);
            for j in 0..5 {
                let tri: f64 = (0..5).map(|k| stats.trigram_at(i, j, k).unwrap()).sum();
                prop_assert!((tri - b[(i, j)]).abs() < 1e-12);
            }
        }
        prop_assert!((stats.unigram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_round_trips(n in 2usize..40, seed in any::<u64>(), seq in vec(0usize..1000, 0..50)) {
        let perm = random_permutation(n, seed);
        let x: Vec<usize> = seq.iter().map(|s| s % n).collect();
        let y = encipher(&x, &perm).unwrap();
        prop_assert_eq!(encipher(&y, &perm.inverse()).unwrap(), x);
        prop_assert_eq!(round_to_permutation(&perm.to_matrix()).unwrap(), perm.clone());
        prop_assert_eq!(perm.then(&perm.inverse()), Permutation::identity(n));
    }

    #[test]
    fn rounding_recovers_perturbed_permutations(n in 2usize..20, seed in any::<u64>(), noise in vec(0.0f64..0.4, 400)) {
        let perm = random_permutation(n, seed);
        let m = perm.to_matrix() + DMatrix::from_fn(n, n, |i, j| noise[i * n + j]);
        prop_assert_eq!(round_to_permutation(&m).unwrap(), perm);
    }

    #[test]
    fn edit_distance_is_a_metric(a in vec(0u8..4, 0..12), b in vec(0u8..4, 0..12), c in vec(0u8..4, 0..12)) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn spearman_is_rank_invariant(values in vec(-100.0f64..100.0, 3..30)) {
        let shifted: Vec<f64> = values.iter().map(|v| v.powi(3) + 7.0).collect();
        let rho = spearman(&values, &shifted);
        let distinct = values.windows(2).any(|w| w[0] != w[1]);
        if distinct {
            prop_assert!((rho - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm(mut a in vec(-10.0f64..10.0, 1..10), mut b in vec(-10.0f64..10.0, 1..10), max in 0.1f64..5.0) {
        let before = l2_norm([a.as_slice(), b.as_slice()]);
        let reported = clip_global_norm(&mut [&mut a, &mut b], max);
        prop_assert!((reported - before).abs() < 1e-12);
        let after = l2_norm([a.as_slice(), b.as_slice()]);
        prop_assert!(after <= max + 1e-12);
        if before <= max {
            prop_assert!((after - before).abs() < 1e-12);
        }
    }
}

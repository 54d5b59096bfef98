mod common;

use std::collections::HashMap;

use proptest::prelude::*;

use common::*;
use seqjoint::rng;
use seqjoint::tabular::*;

fn model_for(seed: u64) -> TabularJointModel {
    let mut r = rng::stream(seed, "model");
    let (nx, ny) = (2 + (seed % 2) as usize, 2 + (seed % 3) as usize);
    let context = random_context(&mut r);
    TabularJointModel::random(nx, ny, context, 1.5, &mut r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_enumeration(seed in any::<u64>(), len in 1usize..5) {
        let model = model_for(seed);
        let y = random_seq(model.ny, len, &mut rng::stream(seed, "y"));
        let fast = forward_marginal(&model, &y);
        let slow = brute_log_marginal(&model, &y);
        prop_assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }

    #[test]
    fn exact_posterior_matches_enumeration(seed in any::<u64>(), len in 1usize..5) {
        let model = model_for(seed);
        let y = random_seq(model.ny, len, &mut rng::stream(seed, "y"));
        let chain = exact_posterior(&model, &y);
        let fast: Vec<f64> = sequences(model.nx, len).iter().map(|x| chain.log_prob(x).exp()).collect();
        prop_assert!(max_abs_diff(&fast, &brute_posterior(&model, &y)) < 1e-10);
    }

    #[test]
    fn elbo_bounds_marginal(seed in any::<u64>(), len in 1usize..6) {
        let model = model_for(seed);
        let y = random_seq(model.ny, len, &mut rng::stream(seed, "y"));
        let mut r = rng::stream(seed, "other");
        let other = TabularJointModel::random(model.nx, model.ny, model.decoder_context, 1.5, &mut r);
        let q = exact_posterior(&other, &y);
        let bound = elbo_objective(&model, &q, &y);
        let nll = -forward_marginal(&model, &y);
        prop_assert!(bound >= nll - 1e-10);
        let tight = elbo_objective(&model, &exact_posterior(&model, &y), &y);
        prop_assert!((tight - nll).abs() < 1e-9);
    }

    #[test]
    fn posterior_marginals_sum_to_one(seed in any::<u64>(), len in 1usize..6) {
        let model = model_for(seed);
        let y = random_seq(model.ny, len, &mut rng::stream(seed, "y"));
        for m in exact_posterior(&model, &y).marginals() {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn chain_sampling_frequencies() {
    let model = model_for(4);
    let y = vec![1, 0, 1];
    let chain = exact_posterior(&model, &y);
    let mut r = rng::stream(4, "draws");
    let n = 40_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..n {
        *counts.entry(chain.sample(1.0, &mut r)).or_default() += 1;
    }
    for x in sequences(model.nx, y.len()) {
        let p = chain.log_prob(&x).exp();
        let f = counts.get(&x).copied().unwrap_or(0) as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f - p).abs() < 5.0 * sd + 1e-4, "{x:?}: {f} vs {p}");
    }
}

#[test]
fn tempered_chain_sampling_sharpens() {
    let model = model_for(6);
    let y = vec![0, 1];
    let chain = exact_posterior(&model, &y);
    let mut r = rng::stream(6, "draws");
    let n = 40_000;
    let first = chain.conditional(0, 0);
    let expected = temper(first, 0.5);
    let mut counts = vec![0usize; model.nx];
    for _ in 0..n {
        counts[chain.sample(0.5, &mut r)[0]] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        let f = c as f64 / n as f64;
        assert!(
            (f - expected[j]).abs() < 0.01,
            "{j}: {f} vs {}",
            expected[j]
        );
    }
}

#[test]
fn joint_sampling_matches_short_sequences() {
    let model = model_for(8);
    let mut r = rng::stream(8, "draws");
    let n = 60_000;
    let mut counts: HashMap<(Vec<usize>, Vec<usize>), usize> = HashMap::new();
    for _ in 0..n {
        let s = sample_joint(&model, 1.0, 2, &mut r);
        if !s.truncated && s.x.len() == 1 {
            *counts.entry((s.x, s.y)).or_default() += 1;
        }
    }
    for x in 0..model.nx {
        for y in 0..model.ny {
            let p = model.log_joint(&[x], &[y]).exp();
            let f = counts.get(&(vec![x], vec![y])).copied().unwrap_or(0) as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 5.0 * sd + 1e-4, "({x},{y}): {f} vs {p}");
        }
    }
}

#[test]
fn exact_posterior_is_kl_minimiser() {
    let model = model_for(10);
    let y = vec![2 % model.ny, 1, 0];
    let exact = exact_posterior(&model, &y);
    let mut r = rng::stream(10, "perturb");
    for _ in 0..20 {
        let other =
            TabularJointModel::random(model.nx, model.ny, model.decoder_context, 1.0, &mut r);
        let q = exact_posterior(&other, &y);
        assert!(q.kl_to(&exact) >= -1e-12);
        assert!(elbo_objective(&model, &q, &y) >= elbo_objective(&model, &exact, &y) - 1e-12);
    }
}

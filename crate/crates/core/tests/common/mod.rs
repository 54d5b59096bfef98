#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng as _;
use seqjoint::rng::Rng;
use seqjoint::tabular::{DecoderContext, TabularJointModel};

/// Every sequence of length `len` over `0..n`.
pub fn sequences(n: usize, len: usize) -> Vec<Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total)
        .map(|mut code| {
            let mut s = vec![0; len];
            for slot in s.iter_mut().rev() {
                *slot = code % n;
                code /= n;
            }
            s
        })
        .collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `log p(y)` by summing the joint over every hidden sequence.
pub fn brute_log_marginal(model: &TabularJointModel, y: &[usize]) -> f64 {
    let terms: Vec<f64> = sequences(model.nx, y.len())
        .iter()
        .map(|x| model.log_joint(x, y))
        .collect();
    log_sum_exp(&terms)
}

/// `p(x | y)` for every hidden sequence, in [`sequences`] order.
pub fn brute_posterior(model: &TabularJointModel, y: &[usize]) -> Vec<f64> {
    let lp = brute_log_marginal(model, y);
    sequences(model.nx, y.len())
        .iter()
        .map(|x| (model.log_joint(x, y) - lp).exp())
        .collect()
}

/// Central differences of `f` around `params`, one coordinate at a time.
pub fn finite_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_context(rng: &mut Rng) -> DecoderContext {
    if rng.random_bool(0.5) {
        DecoderContext::PrevY
    } else {
        DecoderContext::None
    }
}

pub fn random_seq(n: usize, len: usize, rng: &mut Rng) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..n)).collect()
}

/// Random probability vector with every entry bounded away from zero.
pub fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn kl_maps<K: std::hash::Hash + Eq>(p: &HashMap<K, f64>, q: &HashMap<K, f64>) -> f64 {
    p.iter()
        .filter(|(_, &pv)| pv > 0.0)
        .map(|(k, &pv)| pv * (pv / q[k]).ln())
        .sum()
}

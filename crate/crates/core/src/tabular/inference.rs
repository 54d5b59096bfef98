use serde::Serialize;

use super::model::{JointTables, TabularJointModel};
use super::posterior::{PosteriorChain, TabularPosterior};
use crate::error::{Error, Result};

/// Probe sequences longer than this are skipped by [`posterior_quality`].
pub const MAX_PROBE_LEN: usize = 256;

/// Emission weights `p(y_t | x_t = j, y_{t−1})` for every `j` at step `t`.
fn emission_column(tables: &JointTables, y: &[usize], t: usize) -> Vec<f64> {
    let y_prev = (t > 0).then(|| y[t - 1]);
    (0..tables.nx)
        .map(|j| tables.emission(j, y_prev, y[t]))
        .collect()
}

/// Exact `log p(y)` by the scaled forward recursion, summing over hidden
/// sequences of length `|y|` including the end-of-sequence decision.
pub fn forward_marginal(model: &TabularJointModel, y: &[usize]) -> f64 {
    forward_marginal_tables(&model.tables(), y)
}

pub(crate) fn forward_marginal_tables(tables: &JointTables, y: &[usize]) -> f64 {
    if y.is_empty() {
        return f64::NEG_INFINITY;
    }
    let nx = tables.nx;
    let mut log_scale = 0.0;
    let e0 = emission_column(tables, y, 0);
    let mut alpha: Vec<f64> = (0..nx)
        .map(|j| tables.transition(0, j + 1) * e0[j])
        .collect();
    for t in 1..y.len() {
        let s: f64 = alpha.iter().sum();
        if s == 0.0 {
            return f64::NEG_INFINITY;
        }
        log_scale += s.ln();
        alpha.iter_mut().for_each(|a| *a /= s);
        let e = emission_column(tables, y, t);
        alpha = (0..nx)
            .map(|j| {
                let into: f64 = (0..nx)
                    .map(|i| alpha[i] * tables.transition(i + 1, j + 1))
                    .sum();
                into * e[j]
            })
            .collect();
    }
    let end: f64 = (0..nx)
        .map(|i| alpha[i] * tables.transition(i + 1, 0))
        .sum();
    log_scale + end.ln()
}

/// Forward–backward posterior `p(x_t | x_{t−1}, y)` as a chain.
///
/// Rows that are unreachable or have zero mass are uniform.
pub fn exact_posterior(model: &TabularJointModel, y: &[usize]) -> PosteriorChain {
    exact_posterior_tables(&model.tables(), y)
}

pub(crate) fn exact_posterior_tables(tables: &JointTables, y: &[usize]) -> PosteriorChain {
    let nx = tables.nx;
    let n = y.len();
    // beta[t][j] ∝ p(y_{t+1..}, end | x_t = j, y_t), rescaled per step.
    let mut beta = vec![vec![0.0; nx]; n];
    if n > 0 {
        beta[n - 1] = (0..nx).map(|j| tables.transition(j + 1, 0)).collect();
        for t in (0..n - 1).rev() {
            let e = emission_column(tables, y, t + 1);
            let mut b: Vec<f64> = (0..nx)
                .map(|i| {
                    (0..nx)
                        .map(|j| tables.transition(i + 1, j + 1) * e[j] * beta[t + 1][j])
                        .sum()
                })
                .collect();
            let s: f64 = b.iter().sum();
            if s > 0.0 {
                b.iter_mut().for_each(|v| *v /= s);
            }
            beta[t] = b;
        }
    }
    let steps = (0..n)
        .map(|t| {
            let e = emission_column(tables, y, t);
            let mut table = vec![1.0 / nx as f64; (nx + 1) * nx];
            let prevs = if t == 0 { 0..1 } else { 1..nx + 1 };
            for prev in prevs {
                let w: Vec<f64> = (0..nx)
                    .map(|j| tables.transition(prev, j + 1) * e[j] * beta[t][j])
                    .collect();
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    for (dst, v) in table[prev * nx..(prev + 1) * nx].iter_mut().zip(&w) {
                        *dst = v / s;
                    }
                }
            }
            table
        })
        .collect();
    PosteriorChain { nx, steps }
}

/// The variational bound `E_q[log q(x|y) − log p(x, y)] ≥ −log p(y)`,
/// computed exactly by summing over the posterior chain.
pub fn elbo_objective(model: &TabularJointModel, chain: &PosteriorChain, y: &[usize]) -> f64 {
    elbo_objective_tables(&model.tables(), chain, y)
}

pub(crate) fn elbo_objective_tables(
    tables: &JointTables,
    chain: &PosteriorChain,
    y: &[usize],
) -> f64 {
    assert_eq!(chain.len(), y.len(), "chain and y must have equal length");
    chain.expect(
        |t, prev, j| {
            let q = chain.conditional(t, prev)[j];
            let y_prev = (t > 0).then(|| y[t - 1]);
            q.ln() - tables.transition(prev, j + 1).ln() - tables.emission(j, y_prev, y[t]).ln()
        },
        |j| -tables.transition(j + 1, 0).ln(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PosteriorQuality {
    /// Mean `KL(p(x|y) ‖ q(x|y))` over the evaluated probes.
    pub mean_kl: f64,
    pub evaluated: usize,
    /// Probes longer than [`MAX_PROBE_LEN`].
    pub skipped: usize,
}

/// Mean exact `KL(p(x|y) ‖ q(x|y))` over the probe set.
pub fn posterior_quality(
    posterior: &TabularPosterior,
    model: &TabularJointModel,
    probe_ys: &[Vec<usize>],
) -> Result<PosteriorQuality> {
    if probe_ys.is_empty() {
        return Err(Error::InvalidArgument("probe set is empty".into()));
    }
    let tables = model.tables();
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for y in probe_ys {
        if y.len() > MAX_PROBE_LEN || y.is_empty() {
            skipped += 1;
            continue;
        }
        let exact = exact_posterior_tables(&tables, y);
        total += exact.kl_to(&posterior.chain(y));
        evaluated += 1;
    }
    let mean_kl = if evaluated > 0 {
        total / evaluated as f64
    } else {
        f64::NAN
    };
    Ok(PosteriorQuality {
        mean_kl,
        evaluated,
        skipped,
    })
}

/// Exact `KL(p_truth(x, y) ‖ p_model(x, y))` over all finite sequences.
///
/// Both models are walked jointly over states `(x_{t−1}, y_{t−1})` until
/// the surviving mass of the truth drops below `1e-15`.
pub fn joint_kl(truth: &TabularJointModel, model: &TabularJointModel) -> Result<f64> {
    if truth.nx != model.nx || truth.ny != model.ny {
        return Err(Error::Shape("models must share alphabets".into()));
    }
    let (nx, ny) = (truth.nx, truth.ny);
    let p = truth.tables();
    let q = model.tables();
    let yc = ny + 1;
    // state index: prev (0 = start) * (ny + 1) + y_prev code (0 = none)
    let mut occ = vec![0.0; (nx + 1) * yc];
    occ[0] = 1.0;
    let mut total = 0.0;
    for _ in 0..1_000_000 {
        let mass: f64 = occ.iter().sum();
        if mass < 1e-15 {
            return Ok(total);
        }
        let mut next = vec![0.0; (nx + 1) * yc];
        for prev in 0..=nx {
            for ycode in 0..yc {
                let m = occ[prev * yc + ycode];
                if m == 0.0 {
                    continue;
                }
                let y_prev = ycode.checked_sub(1);
                if prev > 0 {
                    let pe = p.transition(prev, 0);
                    total += m * pe * (pe.ln() - q.transition(prev, 0).ln());
                }
                for j in 0..nx {
                    let pt = p.transition(prev, j + 1);
                    if pt == 0.0 {
                        continue;
                    }
                    let mut step = pt.ln() - q.transition(prev, j + 1).ln();
                    for yy in 0..ny {
                        let pe = p.emission(j, y_prev, yy);
                        if pe == 0.0 {
                            continue;
                        }
                        step += pe * (pe.ln() - q.emission(j, y_prev, yy).ln());
                        next[(j + 1) * yc + yy + 1] += m * pt * pe;
                    }
                    total += m * pt * step;
                }
            }
        }
        occ = next;
    }
    Err(Error::Divergence { step: 1_000_000 })
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::TabularJointModel;
use crate::error::{Error, Result};

/// Mixing weights of the x-only, y-only and paired parts of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    pub fn supervised() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }
}

/// An explicit distribution over a finite set of `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteJoint {
    pub entries: Vec<(Vec<usize>, Vec<usize>, f64)>,
}

type Seq = Vec<usize>;

impl FiniteJoint {
    /// Normalises the given weights.
    pub fn new(entries: Vec<(Seq, Seq, f64)>) -> Result<Self> {
        let total: f64 = entries.iter().map(|e| e.2).sum();
        if entries.iter().any(|e| !(e.2 >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be non-negative with positive sum".into(),
            ));
        }
        Ok(Self {
            entries: entries
                .into_iter()
                .map(|(x, y, w)| (x, y, w / total))
                .collect(),
        })
    }

    /// The model restricted to `1 ≤ |x| = |y| ≤ max_len` and renormalised.
    pub fn from_model(model: &TabularJointModel, max_len: usize) -> Result<Self> {
        let tables = model.tables();
        let mut entries = Vec::new();
        for len in 1..=max_len {
            for x in all_sequences(model.nx, len) {
                for y in all_sequences(model.ny, len) {
                    let p = tables.log_joint(&x, &y).exp();
                    entries.push((x.clone(), y, p));
                }
            }
        }
        Self::new(entries)
    }

    pub fn joint(&self) -> BTreeMap<(Seq, Seq), f64> {
        let mut out = BTreeMap::new();
        for (x, y, p) in &self.entries {
            *out.entry((x.clone(), y.clone())).or_insert(0.0) += p;
        }
        out
    }

    pub fn x_marginal(&self) -> BTreeMap<Seq, f64> {
        let mut out = BTreeMap::new();
        for (x, _, p) in &self.entries {
            *out.entry(x.clone()).or_insert(0.0) += p;
        }
        out
    }

    pub fn y_marginal(&self) -> BTreeMap<Seq, f64> {
        let mut out = BTreeMap::new();
        for (_, y, p) in &self.entries {
            *out.entry(y.clone()).or_insert(0.0) += p;
        }
        out
    }
}

/// Every sequence of length `len` over `0..n`, in lexicographic order.
pub(crate) fn all_sequences(n: usize, len: usize) -> Vec<Seq> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..n).map(move |v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

fn kl<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    p.iter()
        .filter(|(_, &pv)| pv > 0.0)
        .map(|(k, &pv)| {
            let qv = q.get(k).copied().unwrap_or(0.0);
            pv * (pv.ln() - qv.ln())
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Observation {
    XOnly(Seq),
    YOnly(Seq),
    Paired(Seq, Seq),
}

fn mixed(dist: &FiniteJoint, w: &LossWeights) -> BTreeMap<Observation, f64> {
    let mut out = BTreeMap::new();
    for (x, y, p) in &dist.entries {
        let parts = [
            (Observation::XOnly(x.clone()), w.alpha),
            (Observation::YOnly(y.clone()), w.beta),
            (Observation::Paired(x.clone(), y.clone()), w.gamma),
        ];
        for (key, weight) in parts {
            if weight > 0.0 {
                *out.entry(key).or_insert(0.0) += weight * p;
            }
        }
    }
    out
}

/// Returns `(KL(p_T(u) ‖ p(u)), α KL_x + β KL_y + γ KL_xy)` where `u` ranges
/// over the mixed space of x-only, y-only and paired observations.
pub fn loss_decomposition_check(
    truth: &FiniteJoint,
    model: &FiniteJoint,
    weights: &LossWeights,
) -> Result<(f64, f64)> {
    weights.validate()?;
    let lhs = kl(&mixed(truth, weights), &mixed(model, weights));
    let mut rhs = 0.0;
    if weights.alpha > 0.0 {
        rhs += weights.alpha * kl(&truth.x_marginal(), &model.x_marginal());
    }
    if weights.beta > 0.0 {
        rhs += weights.beta * kl(&truth.y_marginal(), &model.y_marginal());
    }
    if weights.gamma > 0.0 {
        rhs += weights.gamma * kl(&truth.joint(), &model.joint());
    }
    Ok((lhs, rhs))
}

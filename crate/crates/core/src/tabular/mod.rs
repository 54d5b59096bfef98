//! Semi-supervised noisy-channel training on tabular models.
//!
//! The generative model is a Markov prior over hidden symbols with a
//! dedicated boundary state for start and end of sequence, and a
//! time-synchronous emission table (`|y| = |x|`). The variational posterior
//! is an autoregressive table `q(x_t | x_{t−1}, y_{t−W..t+W})`.
//!
//! The generative parameters are trained on the mixed objective (x-only
//! prior likelihood, y-only ELBO, paired joint likelihood); the posterior is
//! trained by the KL encoder loss, i.e. the log-probability it assigns to
//! samples drawn from the model. Because everything is tabular the exact
//! marginal `p(y)` and the exact posterior `p(x | y)` are available for
//! verification.

mod decomposition;
mod inference;
mod losses;
mod model;
mod posterior;
mod train;

pub use decomposition::{loss_decomposition_check, FiniteJoint, LossWeights};
pub use inference::{
    elbo_objective, exact_posterior, forward_marginal, joint_kl, posterior_quality,
    PosteriorQuality, MAX_PROBE_LEN,
};
pub use losses::{
    draw_beta_samples, gen_loss, gen_loss_with_samples, var_loss, var_loss_on_samples, Batch,
    BetaSample, GenLoss, GenLossOptions, ModelGrad, VarLoss,
};
pub use model::{sample_joint, DecoderContext, JointSample, JointTables, TabularJointModel};
pub use posterior::{sample_posterior, PosteriorChain, TabularPosterior};
pub use train::{
    supervised_baseline, train, SyntheticTask, TraceRow, TrainConfig, TrainData, TrainOutput,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Dense row-major table of logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTable {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LogitTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn check(&self) -> bool {
        self.data.len() == self.rows * self.cols
    }
}

/// Softmax of `logits / temperature`, i.e. `p^{1/T} / Z` for `p = softmax(logits)`.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    tempered_softmax(logits, 1.0)
}

/// Renormalised `p^{1/T}` of an explicit distribution.
pub fn temper(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let logs: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    tempered_softmax(&logs, temperature)
}

/// Draws an index from a (not necessarily normalised) weight vector.
pub fn sample_index(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

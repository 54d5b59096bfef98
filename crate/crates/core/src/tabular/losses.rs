use super::decomposition::LossWeights;
use super::model::{accumulate_nll_grad, sample_from_tables, JointTables, TabularJointModel};
use super::posterior::{sample_posterior, TabularPosterior};
use crate::rng::Rng;

/// A minibatch split into the three data buckets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub x_only: Vec<Vec<usize>>,
    pub y_only: Vec<Vec<usize>>,
    pub paired: Vec<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenLossOptions {
    pub weights: LossWeights,
    pub samples_per_y: usize,
    /// Temperature of the posterior samples used by the y-only term.
    pub temperature: f64,
    /// Whether the y-only term also trains the prior.
    pub elbo_updates_prior: bool,
    /// Drops the y-only term entirely (pre-training).
    pub include_beta: bool,
}

impl GenLossOptions {
    pub fn new(weights: LossWeights) -> Self {
        Self {
            weights,
            samples_per_y: 4,
            temperature: 0.5,
            elbo_updates_prior: false,
            include_beta: true,
        }
    }
}

/// Gradient with respect to the generative logits, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub prior: Vec<f64>,
    pub emit: Vec<f64>,
}

impl ModelGrad {
    pub fn zeros(model: &TabularJointModel) -> Self {
        Self {
            prior: vec![0.0; model.prior_logits.data.len()],
            emit: vec![0.0; model.emit_logits.data.len()],
        }
    }

    pub fn max_abs_diff(&self, other: &ModelGrad) -> f64 {
        self.prior
            .iter()
            .zip(&other.prior)
            .chain(self.emit.iter().zip(&other.emit))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One posterior sample for the y-only term.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSample {
    /// Index into `Batch::y_only`.
    pub y_index: usize,
    pub x: Vec<usize>,
    /// Untempered `log q(x | y)`.
    pub log_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenLoss {
    pub total: f64,
    /// Mean prior NLL over the x-only bucket.
    pub x_term: f64,
    /// Mean negative ELBO estimate over the y-only bucket.
    pub y_term: f64,
    /// Mean joint NLL over the paired bucket.
    pub paired_term: f64,
    pub grad: ModelGrad,
}

fn add_prior_grad(tables: &JointTables, x: &[usize], weight: f64, grad: &mut [f64]) -> f64 {
    let k = tables.nx + 1;
    let mut nll = 0.0;
    let mut prev = 0;
    for next in x.iter().map(|s| s + 1).chain(std::iter::once(0)) {
        let row = tables.transition_row(prev);
        nll -= row[next].ln();
        accumulate_nll_grad(&mut grad[prev * k..(prev + 1) * k], row, next, weight);
        prev = next;
    }
    nll
}

fn add_emit_grad(
    tables: &JointTables,
    x: &[usize],
    y: &[usize],
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let ny = tables.ny;
    let mut nll = 0.0;
    for t in 0..x.len() {
        let r = tables.emit_row_index(x[t], (t > 0).then(|| y[t - 1]));
        let row = tables.emit_row_probs(r);
        nll -= row[y[t]].ln();
        accumulate_nll_grad(&mut grad[r * ny..(r + 1) * ny], row, y[t], weight);
    }
    nll
}

/// Draws the y-only samples from the tempered posterior.
pub fn draw_beta_samples(
    posterior: &TabularPosterior,
    ys: &[Vec<usize>],
    per_y: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Vec<BetaSample> {
    let mut out = Vec::with_capacity(ys.len() * per_y);
    for (y_index, y) in ys.iter().enumerate() {
        for _ in 0..per_y {
            let x = sample_posterior(posterior, y, temperature, rng);
            let log_q = posterior.log_prob(&x, y);
            out.push(BetaSample { y_index, x, log_q });
        }
    }
    out
}

/// Generative loss and its gradient with respect to the model logits.
pub fn gen_loss(
    model: &TabularJointModel,
    posterior: &TabularPosterior,
    batch: &Batch,
    options: &GenLossOptions,
    rng: &mut Rng,
) -> GenLoss {
    let samples = if options.include_beta && options.weights.beta > 0.0 {
        draw_beta_samples(
            posterior,
            &batch.y_only,
            options.samples_per_y,
            options.temperature,
            rng,
        )
    } else {
        Vec::new()
    };
    gen_loss_with_samples(model, batch, &samples, options)
}

/// [`gen_loss`] with the y-only samples supplied (and frozen) by the caller.
pub fn gen_loss_with_samples(
    model: &TabularJointModel,
    batch: &Batch,
    samples: &[BetaSample],
    options: &GenLossOptions,
) -> GenLoss {
    let tables = model.tables();
    let w = options.weights;
    let mut grad = ModelGrad::zeros(model);
    let mut scratch = vec![0.0; grad.prior.len()];

    let mut x_term = 0.0;
    if w.alpha > 0.0 && !batch.x_only.is_empty() {
        let each = w.alpha / batch.x_only.len() as f64;
        for x in &batch.x_only {
            x_term += add_prior_grad(&tables, x, each, &mut grad.prior);
        }
        x_term /= batch.x_only.len() as f64;
    }

    let mut y_term = 0.0;
    if options.include_beta && w.beta > 0.0 && !samples.is_empty() {
        let each = w.beta / samples.len() as f64;
        for s in samples {
            let y = &batch.y_only[s.y_index];
            let target = if options.elbo_updates_prior {
                &mut grad.prior
            } else {
                &mut scratch
            };
            let nll = add_prior_grad(&tables, &s.x, each, target)
                + add_emit_grad(&tables, &s.x, y, each, &mut grad.emit);
            y_term += nll + s.log_q;
        }
        y_term /= samples.len() as f64;
    }

    let mut paired_term = 0.0;
    if w.gamma > 0.0 && !batch.paired.is_empty() {
        let each = w.gamma / batch.paired.len() as f64;
        for (x, y) in &batch.paired {
            paired_term += add_prior_grad(&tables, x, each, &mut grad.prior)
                + add_emit_grad(&tables, x, y, each, &mut grad.emit);
        }
        paired_term /= batch.paired.len() as f64;
    }

    GenLoss {
        total: w.alpha * x_term + w.beta * y_term + w.gamma * paired_term,
        x_term,
        y_term,
        paired_term,
        grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarLoss {
    /// Mean `−log q(x | y)` over the kept samples.
    pub loss: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    /// Samples that hit the length cap; they are dropped from the loss.
    pub truncated: usize,
}

/// KL encoder loss on tempered samples from the model.
pub fn var_loss(
    posterior: &TabularPosterior,
    model: &TabularJointModel,
    n_samples: usize,
    temperature: f64,
    max_len: usize,
    rng: &mut Rng,
) -> VarLoss {
    let tables = model.tables_tempered(temperature);
    let mut kept = Vec::with_capacity(n_samples);
    let mut truncated = 0;
    for _ in 0..n_samples {
        let s = sample_from_tables(&tables, max_len, rng);
        if s.truncated {
            truncated += 1;
        } else {
            kept.push((s.x, s.y));
        }
    }
    let mut out = var_loss_on_samples(posterior, &kept);
    out.truncated = truncated;
    out
}

/// Mean `−log q(x | y)` and its gradient for fixed samples.
pub fn var_loss_on_samples(
    posterior: &TabularPosterior,
    samples: &[(Vec<usize>, Vec<usize>)],
) -> VarLoss {
    let mut grad = vec![0.0; posterior.logits.data.len()];
    let mut loss = 0.0;
    if !samples.is_empty() {
        let each = 1.0 / samples.len() as f64;
        for (x, y) in samples {
            loss += each * posterior.accumulate_nll_grad(x, y, each, &mut grad);
        }
    }
    VarLoss {
        loss,
        grad,
        used: samples.len(),
        truncated: 0,
    }
}

//! Gradient-based decipherment by bigram distribution matching.
//!
//! The decoder `O` is a row-stochastic matrix parameterised by logits. With
//! plaintext bigrams `B` and ciphertext bigrams `C` the model's ciphertext
//! bigrams are `D = Oᵀ B O`, and the solver minimises the cross-entropy
//! `−Σ C log D`, which differs from `KL(C ‖ D)` by the entropy of `C`.
//!
//! Optimisation starts from the unigram initialisation `O = 𝟙 cᵀ` (a
//! stationary point, so the logits get a small normal perturbation), runs a
//! phase of plain gradient descent with a large step and then switches to
//! Adam to settle into the local optimum.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cipher::{Permutation, StochasticMatrix};
use crate::corpus::{self, NGramStats, Sequence, BOUNDARY, LOG_SMOOTHING};
use crate::error::{Error, Result};
use crate::metrics;
use crate::optim::{sgd_step, Adam};
use crate::rng;

/// `−Σ_pq C_pq log([Oᵀ B O]_pq + eps)`.
pub fn bigram_loss(o: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, eps: f64) -> f64 {
    let d = o.transpose() * b * o;
    -c.zip_fold(&d, 0.0, |acc, cv, dv| {
        if cv > 0.0 {
            acc + cv * (dv + eps).ln()
        } else {
            acc
        }
    })
}

/// Loss and its gradient with respect to the entries of `O`.
pub fn bigram_loss_grad_probs(
    o: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eps: f64,
) -> (f64, DMatrix<f64>) {
    let bo = b * o;
    let bto = b.transpose() * o;
    let d = o.transpose() * &bo;
    let mut loss = 0.0;
    let g = c.zip_map(&d, |cv, dv| {
        if cv > 0.0 {
            loss -= cv * (dv + eps).ln();
            -cv / (dv + eps)
        } else {
            0.0
        }
    });
    // dL/dO = B O Gᵀ + Bᵀ O G
    let grad = bo * g.transpose() + bto * g;
    (loss, grad)
}

/// Back-propagates a gradient through a row-wise softmax.
pub fn softmax_backward(probs: &DMatrix<f64>, grad_probs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = grad_probs.clone();
    for r in 0..probs.nrows() {
        let inner = probs.row(r).dot(&grad_probs.row(r));
        for col in 0..probs.ncols() {
            out[(r, col)] = probs[(r, col)] * (grad_probs[(r, col)] - inner);
        }
    }
    out
}

/// Loss and gradient with respect to the logits of `o`.
pub fn bigram_loss_grad(
    o: &StochasticMatrix,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eps: f64,
) -> (f64, DMatrix<f64>) {
    let probs = o.probabilities();
    let (loss, grad_probs) = bigram_loss_grad_probs(&probs, b, c, eps);
    (loss, softmax_backward(&probs, &grad_probs))
}

/// Logits whose rows all softmax to `c`, plus `N(0, perturb_scale²)` noise.
pub fn unigram_init(c: &[f64], perturb_scale: f64, rng: &mut rng::Rng) -> StochasticMatrix {
    let n = c.len();
    let base: Vec<f64> = c.iter().map(|p| p.max(1e-300).ln()).collect();
    let mut logits = DMatrix::from_fn(n, n, |_, j| base[j]);
    if perturb_scale > 0.0 {
        let normal = Normal::new(0.0, perturb_scale).expect("finite positive scale");
        // Row-major draw order so results do not depend on storage layout.
        for i in 0..n {
            for j in 0..n {
                logits[(i, j)] += normal.sample(rng);
            }
        }
    }
    StochasticMatrix::from_logits(logits)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub perturb_scale: f64,
    pub sgd_lr: f64,
    pub sgd_steps: usize,
    pub adam_lr: f64,
    pub adam_steps: usize,
    pub success_kl_threshold: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            perturb_scale: 0.01,
            sgd_lr: 10.0,
            sgd_steps: 500,
            adam_lr: 0.01,
            adam_steps: 2000,
            success_kl_threshold: 1e-2,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sgd_lr > 0.0 && self.adam_lr > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if !(self.perturb_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "perturb_scale must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub final_loss: f64,
    pub bigram_kl: f64,
    pub error_rate: f64,
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
    pub succeeded: bool,
}

/// Scores a learned decoder by its decoding error rate.
pub trait DecodeScorer {
    fn error_rate(&self, o: &DMatrix<f64>) -> f64;
}

/// Per-symbol MAP decoding table: entry `p` is `argmax_i prior_i O_ip`,
/// ties going to the lowest `i`.
pub fn decoding_table(o: &DMatrix<f64>, prior: &[f64]) -> Vec<usize> {
    (0..o.ncols())
        .map(|p| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, &pi) in prior.iter().enumerate() {
                let score = pi * o[(i, p)];
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            best
        })
        .collect()
}

/// Decodes a ciphertext sequence symbol by symbol.
pub fn decode(y: &[usize], o: &DMatrix<f64>, prior: &[f64]) -> Vec<usize> {
    let table = decoding_table(o, prior);
    y.iter().map(|&s| table[s]).collect()
}

/// Error rate of decoding a ciphertext corpus against its known plaintext.
/// Sequences use the reduced alphabet (no boundary symbol).
#[derive(Debug, Clone)]
pub struct CorpusScorer {
    pub cipher: Vec<Sequence>,
    pub reference: Vec<Sequence>,
    pub prior: Vec<f64>,
}

impl CorpusScorer {
    /// Builds a scorer from boundary-padded full-alphabet sequences.
    pub fn from_padded(cipher: &[Sequence], reference: &[Sequence], prior: Vec<f64>) -> Self {
        Self {
            cipher: cipher.iter().map(|s| strip_boundary(s)).collect(),
            reference: reference.iter().map(|s| strip_boundary(s)).collect(),
            prior,
        }
    }
}

/// Drops boundary symbols and shifts the rest to the reduced alphabet.
pub fn strip_boundary(seq: &[usize]) -> Sequence {
    seq.iter()
        .filter(|&&s| s != BOUNDARY)
        .map(|&s| s - 1)
        .collect()
}

impl DecodeScorer for CorpusScorer {
    fn error_rate(&self, o: &DMatrix<f64>) -> f64 {
        let table = decoding_table(o, &self.prior);
        let pairs = self.cipher.iter().zip(&self.reference).map(|(y, x)| {
            let hyp: Vec<usize> = y.iter().map(|&s| table[s]).collect();
            (hyp, x.clone())
        });
        metrics::corpus_error_rate(pairs).unwrap_or(f64::NAN)
    }
}

/// Expected symbol error rate under the ciphertext unigram distribution,
/// given the true key.
#[derive(Debug, Clone)]
pub struct KeyScorer {
    pub key: Permutation,
    pub cipher_unigram: Vec<f64>,
    pub prior: Vec<f64>,
}

impl DecodeScorer for KeyScorer {
    fn error_rate(&self, o: &DMatrix<f64>) -> f64 {
        let table = decoding_table(o, &self.prior);
        let inverse = self.key.inverse();
        let total: f64 = self.cipher_unigram.iter().sum();
        self.cipher_unigram
            .iter()
            .enumerate()
            .filter(|&(p, _)| table[p] != inverse.apply(p))
            .fold(0.0, |acc, (_, w)| acc + w)
            / total
    }
}

/// Bigram and unigram tables of a cipher-breaking problem, over the
/// alphabet without the boundary symbol.
#[derive(Debug, Clone)]
pub struct CipherTask {
    pub plain_bigram: DMatrix<f64>,
    pub cipher_bigram: DMatrix<f64>,
    pub plain_unigram: Vec<f64>,
    pub cipher_unigram: Vec<f64>,
}

impl CipherTask {
    pub fn from_stats(plain: &NGramStats, cipher: &NGramStats) -> Result<Self> {
        if plain.size != cipher.size {
            return Err(Error::Shape(format!(
                "plaintext alphabet has {} symbols, ciphertext {}",
                plain.size, cipher.size
            )));
        }
        let (plain_bigram, plain_unigram) = plain.without_boundary()?;
        let (cipher_bigram, cipher_unigram) = cipher.without_boundary()?;
        Ok(Self {
            plain_bigram,
            cipher_bigram,
            plain_unigram,
            cipher_unigram,
        })
    }
}

/// `KL(C ‖ Oᵀ B O)` without smoothing.
pub fn decoder_kl(o: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let d = o.transpose() * b * o;
    corpus::matrix_kl(c, &d).unwrap_or(f64::INFINITY)
}

/// One seeded training run. Returns the report and the learned decoder.
pub fn solve(
    task: &CipherTask,
    config: &SolverConfig,
    scorer: &dyn DecodeScorer,
) -> Result<(RunReport, StochasticMatrix)> {
    config.validate()?;
    let (b, c) = (&task.plain_bigram, &task.cipher_bigram);
    if !b.is_square() || b.shape() != c.shape() || task.cipher_unigram.len() != b.nrows() {
        return Err(Error::Shape(
            "plaintext and ciphertext tables disagree".into(),
        ));
    }
    let mut rng = rng::stream(config.seed, "init");
    let mut o = unigram_init(&task.cipher_unigram, config.perturb_scale, &mut rng);
    let total_steps = config.sgd_steps + config.adam_steps;
    let mut trace = Vec::with_capacity(total_steps + 1);
    let mut adam = Adam::new(o.nrows() * o.ncols(), config.adam_lr);

    for step in 0..total_steps {
        let (loss, grad) = bigram_loss_grad(&o, b, c, LOG_SMOOTHING);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        trace.push(loss);
        let params = o.logits_mut().as_mut_slice();
        if step < config.sgd_steps {
            sgd_step(params, grad.as_slice(), config.sgd_lr);
        } else {
            adam.step(params, grad.as_slice());
        }
    }
    let probs = o.probabilities();
    let final_loss = bigram_loss(&probs, b, c, LOG_SMOOTHING);
    if !final_loss.is_finite() {
        return Err(Error::Divergence { step: total_steps });
    }
    trace.push(final_loss);
    let bigram_kl = decoder_kl(&probs, b, c);
    let report = RunReport {
        seed: config.seed,
        final_loss,
        bigram_kl,
        error_rate: scorer.error_rate(&probs),
        loss_trace: trace,
        succeeded: bigram_kl < config.success_kl_threshold,
    };
    Ok((report, o))
}

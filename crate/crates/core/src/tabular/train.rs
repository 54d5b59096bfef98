use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::decomposition::LossWeights;
use super::inference::{forward_marginal_tables, posterior_quality};
use super::losses::{gen_loss, var_loss, Batch, GenLossOptions};
use super::model::{sample_from_tables, DecoderContext, TabularJointModel};
use super::posterior::TabularPosterior;
use crate::corpus::{split_corpus, DataSplit};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Sampling temperature for both model and posterior samples.
    pub temperature: f64,
    /// Leading steps (counted within `total_steps`) without the y-only term.
    pub pretrain_steps: usize,
    pub total_steps: usize,
    pub gen_lr: f64,
    pub var_lr: f64,
    pub elbo_updates_prior: bool,
    pub samples_per_y: usize,
    /// Examples drawn per non-empty bucket per step.
    pub batch_size: usize,
    /// Model samples per posterior update; 0 freezes the posterior.
    pub var_samples: usize,
    /// Observations before `t` the posterior conditions on.
    pub window_past: usize,
    /// Observations after `t` the posterior conditions on.
    pub window_future: usize,
    pub decoder_context: DecoderContext,
    /// Length cap for model samples.
    pub max_len: usize,
    pub clip_norm: f64,
    /// Probe metrics are computed every this many steps (and at both ends).
    pub eval_every: usize,
    /// Standard deviation of the initial model logits; the posterior starts uniform.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.495,
            beta: 0.495,
            gamma: 0.01,
            temperature: 0.5,
            pretrain_steps: 1000,
            total_steps: 6000,
            gen_lr: 1e-3,
            var_lr: 3e-3,
            elbo_updates_prior: false,
            samples_per_y: 4,
            batch_size: 32,
            var_samples: 128,
            window_past: 1,
            window_future: 1,
            decoder_context: DecoderContext::None,
            max_len: 64,
            clip_norm: 1.0,
            eval_every: 500,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 21] = [
        "alpha",
        "beta",
        "gamma",
        "temperature",
        "pretrain_steps",
        "total_steps",
        "gen_lr",
        "var_lr",
        "elbo_updates_prior",
        "samples_per_y",
        "batch_size",
        "var_samples",
        "window_past",
        "window_future",
        "decoder_context",
        "max_len",
        "clip_norm",
        "eval_every",
        "init_scale",
        "seed",
        "weights",
    ];

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.gen_lr > 0.0) || !(self.var_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.pretrain_steps > self.total_steps {
            return bad("pretrain_steps cannot exceed total_steps");
        }
        if self.samples_per_y == 0
            || self.batch_size == 0
            || self.max_len == 0
            || self.eval_every == 0
        {
            return bad("samples_per_y, batch_size, max_len and eval_every must be positive");
        }
        if !(self.clip_norm > 0.0) || !(self.init_scale >= 0.0) {
            return bad("clip_norm must be positive and init_scale non-negative");
        }
        Ok(())
    }

    /// Sets one field from its textual form. `weights` takes `a,b,c`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "gen_lr" => self.gen_lr = parse(key, value)?,
            "var_lr" => self.var_lr = parse(key, value)?,
            "elbo_updates_prior" => self.elbo_updates_prior = parse(key, value)?,
            "samples_per_y" => self.samples_per_y = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "var_samples" => self.var_samples = parse(key, value)?,
            "window_past" => self.window_past = parse(key, value)?,
            "window_future" => self.window_future = parse(key, value)?,
            "decoder_context" => self.decoder_context = value.parse()?,
            "max_len" => self.max_len = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "weights" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidArgument(
                        "weights takes alpha,beta,gamma".into(),
                    ));
                }
                self.alpha = parse(key, parts[0])?;
                self.beta = parse(key, parts[1])?;
                self.gamma = parse(key, parts[2])?;
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let ctx = match self.decoder_context {
            DecoderContext::None => "none",
            DecoderContext::PrevY => "prev_y",
        };
        format!(
            "alpha = {}\nbeta = {}\ngamma = {}\ntemperature = {}\npretrain_steps = {}\ntotal_steps = {}\n\
             gen_lr = {}\nvar_lr = {}\nelbo_updates_prior = {}\nsamples_per_y = {}\nbatch_size = {}\n\
             var_samples = {}\nwindow_past = {}\nwindow_future = {}\ndecoder_context = {}\nmax_len = {}\nclip_norm = {}\n\
             eval_every = {}\ninit_scale = {}\nseed = {}\n",
            self.alpha,
            self.beta,
            self.gamma,
            self.temperature,
            self.pretrain_steps,
            self.total_steps,
            self.gen_lr,
            self.var_lr,
            self.elbo_updates_prior,
            self.samples_per_y,
            self.batch_size,
            self.var_samples,
            self.window_past,
            self.window_future,
            ctx,
            self.max_len,
            self.clip_norm,
            self.eval_every,
            self.init_scale,
            self.seed
        )
    }
}

/// Training buckets plus held-out observation sequences for probing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub nx: usize,
    pub ny: usize,
    pub x_only: Vec<Vec<usize>>,
    pub y_only: Vec<Vec<usize>>,
    pub paired: Vec<(Vec<usize>, Vec<usize>)>,
    pub probe: Vec<Vec<usize>>,
}

impl TrainData {
    fn validate(&self) -> Result<()> {
        if self.x_only.is_empty() && self.y_only.is_empty() && self.paired.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let xs = self.x_only.iter().chain(self.paired.iter().map(|p| &p.0));
        let ys = self
            .y_only
            .iter()
            .chain(self.paired.iter().map(|p| &p.1))
            .chain(&self.probe);
        for (seqs, size) in [(xs.collect::<Vec<_>>(), self.nx), (ys.collect(), self.ny)] {
            for s in seqs {
                if s.is_empty() {
                    return Err(Error::EmptySequence);
                }
                if let Some(&bad) = s.iter().find(|&&v| v >= size) {
                    return Err(Error::Domain { symbol: bad, size });
                }
            }
        }
        if self.paired.iter().any(|(x, y)| x.len() != y.len()) {
            return Err(Error::Shape(
                "paired sequences must have equal length".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub gen_loss: f64,
    pub var_loss: f64,
    /// Mean exact `log p(y)` over the probe set.
    pub probe_logpy: Option<f64>,
    /// Mean exact `KL(p(x|y) ‖ q(x|y))` over the probe set.
    pub posterior_kl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TabularJointModel,
    pub posterior: TabularPosterior,
    pub trace: Vec<TraceRow>,
    /// Model samples dropped for exceeding `max_len`.
    pub truncated_samples: usize,
    /// Step at which a non-finite loss stopped training.
    pub aborted_at: Option<usize>,
}

impl TrainOutput {
    pub fn initial_posterior_kl(&self) -> Option<f64> {
        self.trace.iter().find_map(|r| r.posterior_kl)
    }

    pub fn final_posterior_kl(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|r| r.posterior_kl)
    }
}

fn draw<T: Clone>(pool: &[T], n: usize, rng: &mut Rng) -> Vec<T> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| pool[rng.random_range(0..pool.len())].clone())
        .collect()
}

fn probe(
    model: &TabularJointModel,
    posterior: &TabularPosterior,
    ys: &[Vec<usize>],
) -> Result<(Option<f64>, Option<f64>)> {
    if ys.is_empty() {
        return Ok((None, None));
    }
    let tables = model.tables();
    let logpy = ys
        .iter()
        .map(|y| forward_marginal_tables(&tables, y))
        .sum::<f64>()
        / ys.len() as f64;
    let quality = posterior_quality(posterior, model, ys)?;
    Ok((Some(logpy), Some(quality.mean_kl)))
}

/// Simultaneous descent on the generative loss (model) and the KL encoder
/// loss (posterior), each with its own Adam optimizer.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    data.validate()?;
    let (nx, ny) = (data.nx, data.ny);
    let mut init = rng::stream(config.seed, "init");
    let mut model =
        TabularJointModel::random(nx, ny, config.decoder_context, config.init_scale, &mut init);
    let mut posterior = TabularPosterior::uniform(
        nx,
        ny,
        config.window_past,
        config.window_future,
        config.temperature,
    )?;

    let mut batch_rng = rng::stream(config.seed, "batch");
    let mut elbo_rng = rng::stream(config.seed, "elbo");
    let mut sleep_rng = rng::stream(config.seed, "sleep");
    let mut prior_opt = Adam::new(model.prior_logits.data.len(), config.gen_lr);
    let mut emit_opt = Adam::new(model.emit_logits.data.len(), config.gen_lr);
    let mut var_opt = Adam::new(posterior.logits.data.len(), config.var_lr);

    let mut trace = Vec::with_capacity(config.total_steps + 1);
    let mut truncated_samples = 0;
    let mut aborted_at = None;
    let mut last = (f64::NAN, f64::NAN);
    for step in 0..=config.total_steps {
        if step % config.eval_every == 0 || step == config.total_steps {
            let (probe_logpy, posterior_kl) = probe(&model, &posterior, &data.probe)?;
            trace.push(TraceRow {
                step,
                gen_loss: last.0,
                var_loss: last.1,
                probe_logpy,
                posterior_kl,
            });
        }
        if step == config.total_steps {
            break;
        }

        let batch = Batch {
            x_only: draw(&data.x_only, config.batch_size, &mut batch_rng),
            y_only: draw(&data.y_only, config.batch_size, &mut batch_rng),
            paired: draw(&data.paired, config.batch_size, &mut batch_rng),
        };
        let options = GenLossOptions {
            weights: config.weights(),
            samples_per_y: config.samples_per_y,
            temperature: config.temperature,
            elbo_updates_prior: config.elbo_updates_prior,
            include_beta: step >= config.pretrain_steps,
        };
        let mut gen = gen_loss(&model, &posterior, &batch, &options, &mut elbo_rng);
        let var = if config.var_samples > 0 {
            Some(var_loss(
                &posterior,
                &model,
                config.var_samples,
                config.temperature,
                config.max_len,
                &mut sleep_rng,
            ))
        } else {
            None
        };
        let var_value = var.as_ref().map_or(f64::NAN, |v| v.loss);
        let finite = gen.total.is_finite()
            && gen
                .grad
                .prior
                .iter()
                .chain(&gen.grad.emit)
                .all(|g| g.is_finite())
            && var.as_ref().is_none_or(|v| v.loss.is_finite());
        if !finite {
            trace.push(TraceRow {
                step,
                gen_loss: gen.total,
                var_loss: var_value,
                probe_logpy: None,
                posterior_kl: None,
            });
            aborted_at = Some(step);
            break;
        }
        clip_global_norm(
            &mut [&mut gen.grad.prior, &mut gen.grad.emit],
            config.clip_norm,
        );
        prior_opt.step(&mut model.prior_logits.data, &gen.grad.prior);
        emit_opt.step(&mut model.emit_logits.data, &gen.grad.emit);
        if let Some(mut v) = var {
            truncated_samples += v.truncated;
            clip_global_norm(&mut [&mut v.grad], config.clip_norm);
            var_opt.step(&mut posterior.logits.data, &v.grad);
        }
        last = (gen.total, var_value);
    }

    Ok(TrainOutput {
        model,
        posterior,
        trace,
        truncated_samples,
        aborted_at,
    })
}

/// The same training loop restricted to the paired bucket.
pub fn supervised_baseline(data: &TrainData, config: &TrainConfig) -> Result<TrainOutput> {
    let paired_only = TrainData {
        x_only: Vec::new(),
        y_only: Vec::new(),
        ..data.clone()
    };
    let config = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
        pretrain_steps: 0,
        var_samples: 0,
        ..config.clone()
    };
    train(&paired_only, &config)
}

/// A random time-local truth model together with data drawn from it.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub truth: TabularJointModel,
    pub data: TrainData,
}

impl SyntheticTask {
    /// Expected sequence length of the truth is about 8.
    pub const END_PROBABILITY: f64 = 0.125;

    /// A random prior and a noisy one-to-one emission table.
    pub fn truth(nx: usize, ny: usize, seed: u64) -> Result<TabularJointModel> {
        if nx == 0 || ny < nx {
            return Err(Error::InvalidArgument("need 1 ≤ nx ≤ ny".into()));
        }
        use rand_distr::{Distribution, Normal};
        let mut rng = rng::stream(seed, "truth");
        let wide = Normal::new(0.0, 1.5).expect("valid");
        let narrow = Normal::new(0.0, 0.5).expect("valid");
        let mut model = TabularJointModel::uniform(nx, ny, DecoderContext::None);
        for r in 0..=nx {
            let row = model.prior_logits.row_mut(r);
            for v in row[1..].iter_mut() {
                *v = wide.sample(&mut rng);
            }
            let mass: f64 = row[1..].iter().map(|v| v.exp()).sum();
            row[0] = if r == 0 {
                0.0
            } else {
                (mass * Self::END_PROBABILITY / (1.0 - Self::END_PROBABILITY)).ln()
            };
        }
        let perm = crate::cipher::random_permutation(ny, seed);
        for x in 0..nx {
            let row = model.emit_logits.row_mut(x);
            for v in row.iter_mut() {
                *v = narrow.sample(&mut rng);
            }
            row[perm.as_slice()[x]] += 3.0;
        }
        Ok(model)
    }

    /// Draws `n_train` sequences split by `(α, β, γ) = ((1−γ)/2, (1−γ)/2, γ)`
    /// plus `n_probe` held-out observation sequences.
    pub fn generate(
        nx: usize,
        ny: usize,
        n_train: usize,
        n_probe: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let truth = Self::truth(nx, ny, seed)?;
        let tables = truth.tables();
        let mut rng = rng::stream(seed, "data");
        let draw_one = |rng: &mut Rng| loop {
            let s = sample_from_tables(&tables, 256, rng);
            if !s.truncated {
                return (s.x, s.y);
            }
        };
        let pairs: Vec<_> = (0..n_train).map(|_| draw_one(&mut rng)).collect();
        let mut probe_rng = rng::stream(seed, "probe");
        let probe = (0..n_probe).map(|_| draw_one(&mut probe_rng).1).collect();
        let half = (1.0 - gamma) / 2.0;
        let buckets = split_corpus(&pairs, &DataSplit::new(half, half, gamma, seed)?);
        Ok(Self {
            data: TrainData {
                nx,
                ny,
                x_only: buckets.x_only.into_iter().map(|p| p.0).collect(),
                y_only: buckets.y_only.into_iter().map(|p| p.1).collect(),
                paired: buckets.paired,
                probe,
            },
            truth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig {
            decoder_context: DecoderContext::PrevY,
            seed: 9,
            ..TrainConfig::default()
        };
        c.gamma = 0.02;
        c.alpha = 0.49;
        c.beta = 0.49;
        let mut d = TrainConfig::default();
        d.apply_kv(&c.to_kv()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn kv_rejects_unknown_keys() {
        let mut c = TrainConfig::default();
        assert!(c.apply_kv("bogus = 1").is_err());
        assert!(c.apply_kv("gamma 1").is_err());
        c.apply_kv("# comment\n\nweights = 0.5, 0.5, 0\n").unwrap();
        assert_eq!((c.alpha, c.beta, c.gamma), (0.5, 0.5, 0.0));
    }

    #[test]
    fn invalid_weights_rejected() {
        let c = TrainConfig {
            alpha: 0.5,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn truth_has_expected_end_probability() {
        let truth = SyntheticTask::truth(5, 7, 1).unwrap();
        let t = truth.tables();
        for r in 1..=5 {
            assert!((t.transition(r, 0) - SyntheticTask::END_PROBABILITY).abs() < 1e-12);
        }
    }

    #[test]
    fn short_training_run_is_deterministic() {
        let task = SyntheticTask::generate(3, 4, 400, 10, 0.1, 2).unwrap();
        let config = TrainConfig {
            total_steps: 40,
            pretrain_steps: 10,
            eval_every: 20,
            ..TrainConfig::default()
        };
        let a = train(&task.data, &config).unwrap();
        let b = train(&task.data, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(format!("{:?}", a.trace), format!("{:?}", b.trace));
        assert_eq!(a.trace.len(), 3);
        assert!(a.aborted_at.is_none());
    }
}

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample_index, tempered_softmax, LogitTable};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// What the emission distribution of `y_t` conditions on besides `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderContext {
    /// `p(y_t | x_t)`: strictly time local.
    #[default]
    None,
    /// `p(y_t | x_t, y_{t−1})`.
    PrevY,
}

impl std::str::FromStr for DecoderContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "prev_y" => Ok(Self::PrevY),
            other => Err(Error::InvalidArgument(format!(
                "decoder context must be 'none' or 'prev_y', got {other:?}"
            ))),
        }
    }
}

/// Markov prior with boundary state plus time-synchronous emissions.
///
/// `prior_logits` has `nx + 1` rows and columns. Row 0 is the start state
/// and rows `1..=nx` are the hidden symbols; column 0 is end-of-sequence
/// and columns `1..=nx` are the next symbol. The start row never ends the
/// sequence, so its column 0 is ignored and sequences have length ≥ 1.
///
/// `emit_logits` has one row per emission context: `x` for
/// [`DecoderContext::None`], `x * (ny + 1) + code(y_{t−1})` for
/// [`DecoderContext::PrevY`] with code 0 at the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularJointModel {
    pub nx: usize,
    pub ny: usize,
    pub decoder_context: DecoderContext,
    pub prior_logits: LogitTable,
    pub emit_logits: LogitTable,
}

/// Probabilities of a model, materialised once per evaluation.
#[derive(Debug, Clone)]
pub struct JointTables {
    pub nx: usize,
    pub ny: usize,
    pub decoder_context: DecoderContext,
    /// `(nx + 1) × (nx + 1)`, row-major, start row has `prior[0] = 0`.
    pub prior: Vec<f64>,
    pub emit: Vec<f64>,
}

impl JointTables {
    /// `p(next | prev)`; `prev` is 0 for start or `x + 1`, `next` is 0 for
    /// end or `x + 1`.
    pub fn transition(&self, prev: usize, next: usize) -> f64 {
        self.prior[prev * (self.nx + 1) + next]
    }

    pub fn transition_row(&self, prev: usize) -> &[f64] {
        &self.prior[prev * (self.nx + 1)..(prev + 1) * (self.nx + 1)]
    }

    pub fn emit_row_index(&self, x: usize, y_prev: Option<usize>) -> usize {
        emit_row(self.decoder_context, self.ny, x, y_prev)
    }

    pub fn emission(&self, x: usize, y_prev: Option<usize>, y: usize) -> f64 {
        self.emit[self.emit_row_index(x, y_prev) * self.ny + y]
    }

    pub fn emit_row_probs(&self, row: usize) -> &[f64] {
        &self.emit[row * self.ny..(row + 1) * self.ny]
    }

    /// `log p(x)` including the end-of-sequence decision.
    pub fn log_prior(&self, x: &[usize]) -> f64 {
        let mut lp = 0.0;
        let mut prev = 0;
        for &s in x {
            lp += self.transition(prev, s + 1).ln();
            prev = s + 1;
        }
        lp + self.transition(prev, 0).ln()
    }

    /// `log p(y | x)` for equal-length sequences.
    pub fn log_emission(&self, x: &[usize], y: &[usize]) -> f64 {
        let mut lp = 0.0;
        for t in 0..x.len() {
            let y_prev = (t > 0).then(|| y[t - 1]);
            lp += self.emission(x[t], y_prev, y[t]).ln();
        }
        lp
    }

    pub fn log_joint(&self, x: &[usize], y: &[usize]) -> f64 {
        self.log_prior(x) + self.log_emission(x, y)
    }
}

pub(crate) fn emit_row(ctx: DecoderContext, ny: usize, x: usize, y_prev: Option<usize>) -> usize {
    match ctx {
        DecoderContext::None => x,
        DecoderContext::PrevY => x * (ny + 1) + y_prev.map_or(0, |q| q + 1),
    }
}

fn emit_rows(ctx: DecoderContext, nx: usize, ny: usize) -> usize {
    match ctx {
        DecoderContext::None => nx,
        DecoderContext::PrevY => nx * (ny + 1),
    }
}

impl TabularJointModel {
    /// Model with all logits zero: uniform transitions and emissions.
    pub fn uniform(nx: usize, ny: usize, decoder_context: DecoderContext) -> Self {
        Self {
            nx,
            ny,
            decoder_context,
            prior_logits: LogitTable::zeros(nx + 1, nx + 1),
            emit_logits: LogitTable::zeros(emit_rows(decoder_context, nx, ny), ny),
        }
    }

    /// Logits drawn from `N(0, scale²)`.
    pub fn random(
        nx: usize,
        ny: usize,
        decoder_context: DecoderContext,
        scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut model = Self::uniform(nx, ny, decoder_context);
        if scale > 0.0 {
            let normal = Normal::new(0.0, scale).expect("positive scale");
            for v in model
                .prior_logits
                .data
                .iter_mut()
                .chain(model.emit_logits.data.iter_mut())
            {
                *v = normal.sample(rng);
            }
        }
        model
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nx >= 1
            && self.ny >= 1
            && self.prior_logits.rows == self.nx + 1
            && self.prior_logits.cols == self.nx + 1
            && self.prior_logits.check()
            && self.emit_logits.rows == emit_rows(self.decoder_context, self.nx, self.ny)
            && self.emit_logits.cols == self.ny
            && self.emit_logits.check();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "model tables do not match its alphabet sizes".into(),
            ))
        }
    }

    fn prior_row(&self, prev: usize, temperature: f64) -> Vec<f64> {
        let logits = self.prior_logits.row(prev);
        if prev == 0 {
            let mut row = vec![0.0];
            row.extend(tempered_softmax(&logits[1..], temperature));
            row
        } else {
            tempered_softmax(logits, temperature)
        }
    }

    /// Materialises probabilities, each row raised to `1/temperature`.
    pub fn tables_tempered(&self, temperature: f64) -> JointTables {
        let prior = (0..=self.nx)
            .flat_map(|r| self.prior_row(r, temperature))
            .collect();
        let emit = (0..self.emit_logits.rows)
            .flat_map(|r| tempered_softmax(self.emit_logits.row(r), temperature))
            .collect();
        JointTables {
            nx: self.nx,
            ny: self.ny,
            decoder_context: self.decoder_context,
            prior,
            emit,
        }
    }

    pub fn tables(&self) -> JointTables {
        self.tables_tempered(1.0)
    }

    pub fn log_prior(&self, x: &[usize]) -> f64 {
        self.tables().log_prior(x)
    }

    pub fn log_joint(&self, x: &[usize], y: &[usize]) -> f64 {
        self.tables().log_joint(x, y)
    }

    /// Builds logits from explicit probability tables (`ln p`, floored).
    pub fn from_probabilities(
        nx: usize,
        ny: usize,
        decoder_context: DecoderContext,
        prior: &[f64],
        emit: &[f64],
    ) -> Result<Self> {
        let mut model = Self::uniform(nx, ny, decoder_context);
        if prior.len() != model.prior_logits.data.len()
            || emit.len() != model.emit_logits.data.len()
        {
            return Err(Error::Shape(
                "probability tables have the wrong size".into(),
            ));
        }
        let ln = |p: &f64| p.max(1e-300).ln();
        model.prior_logits.data = prior.iter().map(ln).collect();
        model.emit_logits.data = emit.iter().map(ln).collect();
        Ok(model)
    }
}

/// A sample from the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    /// The end-of-sequence decision had not been taken after `max_len` steps.
    pub truncated: bool,
}

/// Ancestral sampling where every categorical is tempered to `p^{1/T}/Z`.
pub fn sample_joint(
    model: &TabularJointModel,
    temperature: f64,
    max_len: usize,
    rng: &mut Rng,
) -> JointSample {
    sample_from_tables(&model.tables_tempered(temperature), max_len, rng)
}

pub(crate) fn sample_from_tables(
    tables: &JointTables,
    max_len: usize,
    rng: &mut Rng,
) -> JointSample {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut prev = 0;
    loop {
        if x.len() == max_len {
            return JointSample {
                x,
                y,
                truncated: true,
            };
        }
        let next = sample_index(tables.transition_row(prev), rng);
        if next == 0 {
            return JointSample {
                x,
                y,
                truncated: false,
            };
        }
        let xs = next - 1;
        let row = tables.emit_row_index(xs, y.last().copied());
        let ys = sample_index(tables.emit_row_probs(row), rng);
        x.push(xs);
        y.push(ys);
        prev = next;
    }
}

/// Accumulates `weight * ∂(−log p)/∂logits` for one categorical draw.
pub(crate) fn accumulate_nll_grad(grad_row: &mut [f64], probs: &[f64], chosen: usize, weight: f64) {
    for (g, &p) in grad_row.iter_mut().zip(probs) {
        *g += weight * p;
    }
    grad_row[chosen] -= weight;
}

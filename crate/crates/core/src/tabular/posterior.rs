use serde::{Deserialize, Serialize};

use super::{sample_index, softmax, temper, LogitTable};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Autoregressive variational posterior `q(x_t | x_{t−1}, y_{t−P..t+F})`.
///
/// Rows are indexed by `prev * (ny + 1)^(P + F + 1) + window`, where `prev`
/// is 0 at the first step or `x_{t−1} + 1`, and `window` packs
/// `code(y_{t+o})` for `o = −P..=F` in base `ny + 1` with code 0 for
/// positions outside the sequence. Because the window sees padding, the
/// posterior also knows how close it is to either end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPosterior {
    pub nx: usize,
    pub ny: usize,
    /// Observations before `t` in the window (`P`).
    pub past: usize,
    /// Observations after `t` in the window (`F`).
    pub future: usize,
    /// Sampling temperature; log-probabilities are always untempered.
    pub temperature: f64,
    pub logits: LogitTable,
}

impl TabularPosterior {
    pub fn uniform(
        nx: usize,
        ny: usize,
        past: usize,
        future: usize,
        temperature: f64,
    ) -> Result<Self> {
        let windows = window_count(ny, past + future + 1)?;
        Ok(Self {
            nx,
            ny,
            past,
            future,
            temperature,
            logits: LogitTable::zeros((nx + 1) * windows, nx),
        })
    }

    pub fn window_count(&self) -> usize {
        (self.ny + 1).pow((self.past + self.future + 1) as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let windows = window_count(self.ny, self.past + self.future + 1)?;
        if self.nx == 0
            || self.logits.rows != (self.nx + 1) * windows
            || self.logits.cols != self.nx
            || !self.logits.check()
        {
            return Err(Error::Shape(
                "posterior table does not match its alphabet sizes".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Window code of position `t` in `y`.
    pub fn window(&self, y: &[usize], t: usize) -> usize {
        let base = self.ny + 1;
        let mut code = 0;
        let mut scale = 1;
        for o in -(self.past as isize)..=self.future as isize {
            let pos = t as isize + o;
            let c = if pos >= 0 && (pos as usize) < y.len() {
                y[pos as usize] + 1
            } else {
                0
            };
            code += c * scale;
            scale *= base;
        }
        code
    }

    pub fn row_index(&self, prev: usize, window: usize) -> usize {
        prev * self.window_count() + window
    }

    /// The untempered conditionals of `q(· | y)` as a chain.
    pub fn chain(&self, y: &[usize]) -> PosteriorChain {
        let nx = self.nx;
        let steps = (0..y.len())
            .map(|t| {
                let window = self.window(y, t);
                let prevs: Vec<usize> = if t == 0 { vec![0] } else { (1..=nx).collect() };
                let mut table = vec![1.0 / nx as f64; (nx + 1) * nx];
                for prev in prevs {
                    let p = softmax(self.logits.row(self.row_index(prev, window)));
                    table[prev * nx..(prev + 1) * nx].copy_from_slice(&p);
                }
                table
            })
            .collect();
        PosteriorChain { nx, steps }
    }

    /// `log q(x | y)` with untempered conditionals.
    pub fn log_prob(&self, x: &[usize], y: &[usize]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let mut lp = 0.0;
        let mut prev = 0;
        for t in 0..y.len() {
            let p = softmax(self.logits.row(self.row_index(prev, self.window(y, t))));
            lp += p[x[t]].ln();
            prev = x[t] + 1;
        }
        lp
    }

    /// Accumulates `weight * ∂(−log q(x|y))/∂logits` into `grad`.
    pub(crate) fn accumulate_nll_grad(
        &self,
        x: &[usize],
        y: &[usize],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let nx = self.nx;
        let mut nll = 0.0;
        let mut prev = 0;
        for t in 0..y.len() {
            let r = self.row_index(prev, self.window(y, t));
            let p = softmax(self.logits.row(r));
            nll -= p[x[t]].ln();
            let g = &mut grad[r * nx..(r + 1) * nx];
            for (gi, pi) in g.iter_mut().zip(&p) {
                *gi += weight * pi;
            }
            g[x[t]] -= weight;
            prev = x[t] + 1;
        }
        nll
    }

    /// Overwrites the rows visited by `y` with the given chain's conditionals.
    pub fn assign_chain(&mut self, y: &[usize], chain: &PosteriorChain) {
        let nx = self.nx;
        for t in 0..y.len() {
            let window = self.window(y, t);
            let prevs: Vec<usize> = if t == 0 { vec![0] } else { (1..=nx).collect() };
            for prev in prevs {
                let r = self.row_index(prev, window);
                let probs = chain.conditional(t, prev);
                for (l, &p) in self.logits.row_mut(r).iter_mut().zip(probs) {
                    *l = p.max(1e-300).ln();
                }
            }
        }
    }
}

fn window_count(ny: usize, width: usize) -> Result<usize> {
    u32::try_from(width)
        .ok()
        .and_then(|e| (ny + 1).checked_pow(e))
        .filter(|&n| n <= 1 << 24)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "posterior window of width {width} is too wide for {ny} symbols"
            ))
        })
}

/// Per-step conditionals `q(x_t | x_{t−1})` for one fixed `y`.
///
/// Step `t` stores an `(nx + 1) × nx` row-major table indexed by `prev`
/// (0 at the start, else `x_{t−1} + 1`). Only row 0 is meaningful at
/// `t = 0` and only rows `1..=nx` afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub nx: usize,
    pub steps: Vec<Vec<f64>>,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn conditional(&self, t: usize, prev: usize) -> &[f64] {
        &self.steps[t][prev * self.nx..(prev + 1) * self.nx]
    }

    fn prevs(&self, t: usize) -> std::ops::Range<usize> {
        if t == 0 {
            0..1
        } else {
            1..self.nx + 1
        }
    }

    pub fn log_prob(&self, x: &[usize]) -> f64 {
        let mut prev = 0;
        let mut lp = 0.0;
        for (t, &s) in x.iter().enumerate() {
            lp += self.conditional(t, prev)[s].ln();
            prev = s + 1;
        }
        lp
    }

    /// Draws `x` with every conditional tempered to `q^{1/T}/Z`.
    pub fn sample(&self, temperature: f64, rng: &mut Rng) -> Vec<usize> {
        let mut x = Vec::with_capacity(self.len());
        let mut prev = 0;
        for t in 0..self.len() {
            let probs = temper(self.conditional(t, prev), temperature);
            let s = sample_index(&probs, rng);
            x.push(s);
            prev = s + 1;
        }
        x
    }

    /// Marginal distribution of each `x_t` (indexed by `x`, not `prev`).
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let nx = self.nx;
        let mut out = Vec::with_capacity(self.len());
        let mut state = vec![0.0; nx + 1];
        state[0] = 1.0;
        for t in 0..self.len() {
            let mut next = vec![0.0; nx];
            for prev in self.prevs(t) {
                if state[prev] == 0.0 {
                    continue;
                }
                for (n, &q) in next.iter_mut().zip(self.conditional(t, prev)) {
                    *n += state[prev] * q;
                }
            }
            state = std::iter::once(0.0).chain(next.iter().copied()).collect();
            out.push(next);
        }
        out
    }

    /// Expectation under this chain of a per-transition score
    /// `f(t, prev, x_t)` plus a final score `g(x_last)`.
    pub fn expect<F, G>(&self, mut f: F, mut g: G) -> f64
    where
        F: FnMut(usize, usize, usize) -> f64,
        G: FnMut(usize) -> f64,
    {
        let nx = self.nx;
        let mut state = vec![0.0; nx + 1];
        state[0] = 1.0;
        let mut total = 0.0;
        for t in 0..self.len() {
            let mut next = vec![0.0; nx + 1];
            for prev in self.prevs(t) {
                let m = state[prev];
                if m == 0.0 {
                    continue;
                }
                for (j, &q) in self.conditional(t, prev).iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    total += m * q * f(t, prev, j);
                    next[j + 1] += m * q;
                }
            }
            state = next;
        }
        if !self.is_empty() {
            for (j, &m) in state.iter().enumerate().skip(1) {
                if m > 0.0 {
                    total += m * g(j - 1);
                }
            }
        }
        total
    }

    /// `KL(self ‖ other)` between two chains of equal length.
    pub fn kl_to(&self, other: &PosteriorChain) -> f64 {
        assert_eq!(self.len(), other.len(), "chains must have equal length");
        self.expect(
            |t, prev, j| {
                let p = self.conditional(t, prev)[j];
                let q = other.conditional(t, prev)[j];
                p.ln() - q.ln()
            },
            |_| 0.0,
        )
    }
}

/// Samples `x` from `q(· | y)` at the given temperature; `|x| = |y|`.
pub fn sample_posterior(
    posterior: &TabularPosterior,
    y: &[usize],
    temperature: f64,
    rng: &mut Rng,
) -> Vec<usize> {
    let mut x = Vec::with_capacity(y.len());
    let mut prev = 0;
    for t in 0..y.len() {
        let row = posterior
            .logits
            .row(posterior.row_index(prev, posterior.window(y, t)));
        let probs = super::tempered_softmax(row, temperature);
        let s = sample_index(&probs, rng);
        x.push(s);
        prev = s + 1;
    }
    x
}

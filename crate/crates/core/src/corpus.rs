//! Text ingestion, symbol tables and n-gram statistics.
//!
//! Sequences are vectors of symbol indices. Index 0 is always the boundary
//! symbol, which marks both the start and the end of an utterance, so a
//! normalised sequence looks like `[0, s1, s2, ..., 0]`.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Index of the start/end-of-sequence symbol in every table.
pub const BOUNDARY: usize = 0;

/// Glyph used to render the boundary symbol.
pub const BOUNDARY_GLYPH: char = '^';

/// Frequency-ordered English grapheme alphabet: boundary, space, vowels,
/// then consonants.
pub const ENGLISH_ALPHABET: &str = "^ eaoiutnhsrdlmcwfygpbvkxqjz";

/// Additive smoothing applied before taking logarithms of frequencies.
pub const LOG_SMOOTHING: f64 = 1e-9;

pub type Sequence = Vec<usize>;

/// Ordered alphabet whose first entry is the boundary symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    glyphs: Vec<char>,
    index: HashMap<char, usize>,
}

impl SymbolTable {
    pub fn new(glyphs: &str) -> Result<Self> {
        let glyphs: Vec<char> = glyphs.chars().collect();
        if glyphs.len() < 2 {
            return Err(Error::InvalidArgument(
                "symbol table needs at least two symbols".into(),
            ));
        }
        if glyphs[BOUNDARY] != BOUNDARY_GLYPH {
            return Err(Error::InvalidArgument(format!(
                "symbol table must start with the boundary glyph '{BOUNDARY_GLYPH}'"
            )));
        }
        let mut index = HashMap::with_capacity(glyphs.len());
        for (i, &g) in glyphs.iter().enumerate() {
            if index.insert(g, i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate glyph {g:?}")));
            }
        }
        Ok(Self { glyphs, index })
    }

    pub fn english() -> Self {
        Self::new(ENGLISH_ALPHABET).expect("built-in alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn glyph(&self, symbol: usize) -> Option<char> {
        self.glyphs.get(symbol).copied()
    }

    pub fn index_of(&self, glyph: char) -> Option<usize> {
        self.index.get(&glyph).copied()
    }

    /// Encodes text that is already in the alphabet, one symbol per glyph,
    /// and adds boundary padding. Unlike [`normalize_text`] nothing is
    /// dropped or collapsed.
    pub fn encode_exact(&self, text: &str) -> Result<Sequence> {
        let mut seq = vec![BOUNDARY];
        for ch in text.chars() {
            match self.index_of(ch) {
                Some(BOUNDARY) | None => {
                    return Err(Error::InvalidArgument(format!(
                        "glyph {ch:?} is not a text symbol of this alphabet"
                    )))
                }
                Some(i) => seq.push(i),
            }
        }
        if seq.len() == 1 {
            return Err(Error::EmptySequence);
        }
        seq.push(BOUNDARY);
        Ok(seq)
    }

    /// Renders a sequence as text, omitting boundary symbols.
    pub fn render(&self, seq: &[usize]) -> String {
        seq.iter()
            .filter(|&&s| s != BOUNDARY)
            .filter_map(|&s| self.glyph(s))
            .collect()
    }
}

impl fmt::Display for SymbolTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.glyphs.iter().try_for_each(|g| write!(f, "{g}"))
    }
}

/// Lowercases `raw`, maps whitespace to a single space, drops everything
/// outside the alphabet and pads with boundary symbols.
pub fn normalize_text(table: &SymbolTable, raw: &str) -> Result<Sequence> {
    let space = table.index_of(' ');
    let mut seq = vec![BOUNDARY];
    let mut pending_space = false;
    for ch in raw.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            pending_space = space.is_some();
            continue;
        }
        let Some(symbol) = table.index_of(ch).filter(|&s| s != BOUNDARY) else {
            continue;
        };
        if pending_space && seq.len() > 1 {
            seq.push(space.expect("pending space implies a space symbol"));
        }
        pending_space = false;
        seq.push(symbol);
    }
    if seq.len() == 1 {
        return Err(Error::EmptySequence);
    }
    seq.push(BOUNDARY);
    Ok(seq)
}

/// Normalises every non-empty line of a corpus. Lines that normalise to
/// nothing are skipped.
pub fn normalize_lines(table: &SymbolTable, text: &str) -> Vec<Sequence> {
    text.lines()
        .filter_map(|line| normalize_text(table, line).ok())
        .collect()
}

/// Fractions of utterances kept as x-only, y-only and paired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl DataSplit {
    pub fn new(alpha: f64, beta: f64, gamma: f64, seed: u64) -> Result<Self> {
        let split = Self {
            alpha,
            beta,
            gamma,
            seed,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must lie in [0, 1], got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// The three corpus buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Buckets<T> {
    pub x_only: Vec<T>,
    pub y_only: Vec<T>,
    pub paired: Vec<T>,
}

/// Assigns each utterance to exactly one bucket with one uniform draw per
/// utterance from the `split` stream of the seed.
pub fn split_corpus<T: Clone>(utterances: &[T], split: &DataSplit) -> Buckets<T> {
    let mut rng = rng::stream(split.seed, "split");
    let mut buckets = Buckets {
        x_only: Vec::new(),
        y_only: Vec::new(),
        paired: Vec::new(),
    };
    for u in utterances {
        let draw: f64 = rng.random();
        if draw < split.alpha {
            buckets.x_only.push(u.clone());
        } else if draw < split.alpha + split.beta {
            buckets.y_only.push(u.clone());
        } else {
            buckets.paired.push(u.clone());
        }
    }
    buckets
}

/// Raw n-gram counts. Counts from different shards can be merged.
///
/// Each padded utterance `[^, s1, ..., sk, ^]` is counted as the cycle
/// `^ s1 ... sk ^`, which makes every table an exact marginal of the next
/// one up and makes the bigram table stationary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    size: usize,
    order: usize,
    unigram: Vec<u64>,
    bigram: Vec<u64>,
    trigram: Option<Vec<u64>>,
    tokens: u64,
}

impl NGramCounts {
    pub fn new(size: usize, order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "n-gram order must be 1, 2 or 3, got {order}"
            )));
        }
        Ok(Self {
            size,
            order,
            unigram: vec![0; size],
            bigram: vec![0; size * size],
            trigram: (order == 3).then(|| vec![0; size * size * size]),
            tokens: 0,
        })
    }

    pub fn add_sequence(&mut self, seq: &[usize]) -> Result<()> {
        if seq.len() < 2 || seq[0] != BOUNDARY || seq[seq.len() - 1] != BOUNDARY {
            return Err(Error::InvalidArgument(
                "sequences must be padded with the boundary symbol at both ends".into(),
            ));
        }
        if let Some(&bad) = seq.iter().find(|&&s| s >= self.size) {
            return Err(Error::Domain {
                symbol: bad,
                size: self.size,
            });
        }
        let cycle = &seq[..seq.len() - 1];
        let k = cycle.len();
        let n = self.size;
        for t in 0..k {
            let a = cycle[t];
            let b = cycle[(t + 1) % k];
            self.unigram[a] += 1;
            self.bigram[a * n + b] += 1;
            if let Some(tri) = self.trigram.as_mut() {
                let c = cycle[(t + 2) % k];
                tri[(a * n + b) * n + c] += 1;
            }
        }
        self.tokens += k as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &NGramCounts) -> Result<()> {
        if self.size != other.size || self.order != other.order {
            return Err(Error::Shape(
                "cannot merge counts of different shapes".into(),
            ));
        }
        add_into(&mut self.unigram, &other.unigram);
        add_into(&mut self.bigram, &other.bigram);
        if let (Some(a), Some(b)) = (self.trigram.as_mut(), other.trigram.as_ref()) {
            add_into(a, b);
        }
        self.tokens += other.tokens;
        Ok(())
    }

    pub fn normalize(&self) -> Result<NGramStats> {
        if self.tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        let total = self.tokens as f64;
        let scale = |v: &[u64]| v.iter().map(|&c| c as f64 / total).collect::<Vec<_>>();
        Ok(NGramStats {
            symbols: None,
            size: self.size,
            order: self.order,
            token_count: self.tokens,
            unigram: scale(&self.unigram),
            bigram: (self.order >= 2).then(|| scale(&self.bigram)),
            trigram: self.trigram.as_deref().map(scale),
        })
    }
}

fn add_into(dst: &mut [u64], src: &[u64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Normalised unigram, bigram and (optionally) trigram frequencies.
///
/// Tables are stored flat in row-major order, which is also the JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramStats {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<String>,
    pub size: usize,
    pub order: usize,
    pub token_count: u64,
    pub unigram: Vec<f64>,
    pub bigram: Option<Vec<f64>>,
    pub trigram: Option<Vec<f64>>,
}

impl NGramStats {
    pub fn with_symbols(mut self, table: &SymbolTable) -> Self {
        self.symbols = Some(table.to_string());
        self
    }

    pub fn bigram_matrix(&self) -> Result<DMatrix<f64>> {
        let flat = self.bigram.as_ref().ok_or_else(|| {
            Error::InvalidArgument("statistics were collected without bigrams".into())
        })?;
        Ok(DMatrix::from_row_slice(self.size, self.size, flat))
    }

    pub fn trigram_at(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let n = self.size;
        self.trigram.as_ref().map(|t| t[(i * n + j) * n + k])
    }

    /// Bigram matrix and unigram vector over the non-boundary symbols,
    /// each renormalised to sum to one.
    pub fn without_boundary(&self) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let full = self.bigram_matrix()?;
        let n = self.size - 1;
        let mut reduced = full.view((1, 1), (n, n)).into_owned();
        let mass = reduced.sum();
        if mass <= 0.0 {
            return Err(Error::EmptyCorpus);
        }
        reduced /= mass;
        let uni_mass: f64 = self.unigram[1..].iter().sum();
        let unigram = self.unigram[1..].iter().map(|u| u / uni_mass).collect();
        Ok((reduced, unigram))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Counts and normalises n-grams of boundary-padded sequences.
pub fn accumulate_ngrams<S: AsRef<[usize]>>(
    sequences: &[S],
    alphabet_size: usize,
    max_order: usize,
) -> Result<NGramStats> {
    let mut counts = NGramCounts::new(alphabet_size, max_order)?;
    for seq in sequences {
        counts.add_sequence(seq.as_ref())?;
    }
    counts.normalize()
}

/// `sum p log(p / q)` over matching entries; zero-probability entries of
/// `p` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::InfiniteKl { index, p: pi });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// KL divergence from the bigram table of `p` to the matrix `q`, in nats.
pub fn bigram_kl(p: &NGramStats, q: &DMatrix<f64>) -> Result<f64> {
    let pm = p.bigram_matrix()?;
    matrix_kl(&pm, q)
}

/// KL divergence between two joint-probability matrices of equal shape.
pub fn matrix_kl(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "bigram tables have shapes {:?} and {:?}",
            p.shape(),
            q.shape()
        )));
    }
    // Row-major order keeps reported indices meaningful.
    let pv: Vec<f64> = p.transpose().iter().copied().collect();
    let qv: Vec<f64> = q.transpose().iter().copied().collect();
    kl_divergence(&pv, &qv)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

//! Substitution ciphers and the softmax-parameterised decoder matrix.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Sequence, SymbolTable, BOUNDARY};
use crate::error::{Error, Result};
use crate::rng;

/// Bijection on the non-boundary alphabet. `mapping[i]` is the ciphertext
/// symbol assigned to plaintext symbol `i`, both counted without the
/// boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidArgument(format!(
                    "{mapping:?} is not a permutation"
                )));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Permutation) -> Self {
        Self {
            mapping: self.mapping.iter().map(|&m| other.apply(m)).collect(),
        }
    }

    /// The 0/1 decoder matrix with `O[i, mapping[i]] = 1`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &j) in self.mapping.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// Number of symbols mapped differently from `other`.
    pub fn hamming(&self, other: &Permutation) -> usize {
        self.mapping
            .iter()
            .zip(&other.mapping)
            .filter(|(a, b)| a != b)
            .count()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(mapping: Vec<usize>) -> Result<Self> {
        Self::new(mapping)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

/// Uniformly random permutation of `n` symbols drawn from the `cipher`
/// stream of `seed`.
pub fn random_permutation(n: usize, seed: u64) -> Permutation {
    let mut mapping: Vec<usize> = (0..n).collect();
    mapping.shuffle(&mut rng::stream(seed, "cipher"));
    Permutation { mapping }
}

/// Position-wise substitution on full-alphabet sequences. The boundary
/// symbol maps to itself and symbol `s >= 1` maps to `perm[s - 1] + 1`.
pub fn encipher(x: &[usize], perm: &Permutation) -> Result<Sequence> {
    let size = perm.len() + 1;
    x.iter()
        .map(|&s| match s {
            BOUNDARY => Ok(BOUNDARY),
            s if s < size => Ok(perm.apply(s - 1) + 1),
            s => Err(Error::Domain { symbol: s, size }),
        })
        .collect()
}

/// Enciphers text glyph by glyph. The text must already be normalised.
pub fn encipher_text(table: &SymbolTable, perm: &Permutation, text: &str) -> Result<String> {
    let seq = table.encode_exact(text)?;
    Ok(table.render(&encipher(&seq, perm)?))
}

/// Row-stochastic matrix parameterised by per-row logits.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    logits: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn from_logits(logits: DMatrix<f64>) -> Self {
        Self { logits }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_logits(DMatrix::zeros(rows, cols))
    }

    /// Logits `ln(p)`, with zeros floored so they stay finite.
    pub fn from_probabilities(probs: &DMatrix<f64>) -> Self {
        Self::from_logits(probs.map(|p| p.max(1e-300).ln()))
    }

    pub fn nrows(&self) -> usize {
        self.logits.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.logits
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> DMatrix<f64> {
        let mut out = self.logits.clone();
        for mut row in out.row_iter_mut() {
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    logits: Vec<f64>,
}

impl Serialize for StochasticMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.nrows(),
            cols: self.ncols(),
            logits: self.logits.transpose().iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StochasticMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        if repr.logits.len() != repr.rows * repr.cols {
            return Err(serde::de::Error::custom(format!(
                "expected {} logits for a {}x{} matrix, found {}",
                repr.rows * repr.cols,
                repr.rows,
                repr.cols,
                repr.logits.len()
            )));
        }
        Ok(Self::from_logits(DMatrix::from_row_slice(
            repr.rows,
            repr.cols,
            &repr.logits,
        )))
    }
}

/// Minimum-cost assignment (Hungarian algorithm with potentials) on a
/// square cost matrix. Returns `(assignment, cost)` with `assignment[row]`
/// the chosen column.
fn min_cost_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    (assignment, total)
}

fn best_weight(weights: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |r, c| -weights[(rows[r], cols[c])]);
    -min_cost_assignment(&sub).1
}

/// Maximum-weight bipartite assignment of rows to columns.
///
/// Among optimal assignments the lexicographically smallest one is
/// returned, so a uniform matrix rounds to the identity.
pub fn round_to_permutation(weights: &DMatrix<f64>) -> Result<Permutation> {
    let n = weights.nrows();
    if weights.ncols() != n {
        return Err(Error::Shape(format!(
            "assignment needs a square matrix, got {}x{}",
            n,
            weights.ncols()
        )));
    }
    let rows: Vec<usize> = (0..n).collect();
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut remaining = best_weight(weights, &rows, &free_cols);
    let tol = 1e-9 * remaining.abs().max(1.0);
    let mut mapping = Vec::with_capacity(n);
    for i in 0..n {
        let rest_rows = &rows[i + 1..];
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(pos);
            let rest = best_weight(weights, rest_rows, &rest_cols);
            if weights[(i, j)] + rest >= remaining - tol {
                chosen = Some((pos, rest));
                break;
            }
        }
        let (pos, rest) = chosen.expect("an optimal completion always exists");
        mapping.push(free_cols.remove(pos));
        remaining = rest;
    }
    Permutation::new(mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_symbol_is_identity() {
        assert_eq!(random_permutation(1, 99), Permutation::identity(1));
    }

    #[test]
    fn seeds_give_different_permutations() {
        assert_ne!(random_permutation(27, 1), random_permutation(27, 2));
        assert_eq!(random_permutation(27, 1), random_permutation(27, 1));
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    #[test]
    fn encipher_keeps_boundary_and_rejects_foreign_symbols() {
        let perm = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(encipher(&[0, 1, 2, 0], &perm).unwrap(), vec![0, 2, 1, 0]);
        assert!(matches!(
            encipher(&[0, 3, 0], &perm),
            Err(Error::Domain { symbol: 3, size: 3 })
        ));
    }

    /// A key consistent with the worked example: it sends "the cat sat on
    /// the mat" to "wi jtvwjpvwjbhjwi jgvw".
    fn worked_example_key(table: &SymbolTable) -> Permutation {
        let pairs = [
            ('t', 'w'),
            ('h', 'i'),
            ('e', ' '),
            (' ', 'j'),
            ('c', 't'),
            ('a', 'v'),
            ('s', 'p'),
            ('o', 'b'),
            ('n', 'h'),
            ('m', 'g'),
        ];
        let n = table.len() - 1;
        let mut mapping = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for (p, c) in pairs {
            let (pi, ci) = (
                table.index_of(p).unwrap() - 1,
                table.index_of(c).unwrap() - 1,
            );
            mapping[pi] = ci;
            used[ci] = true;
        }
        let mut spare = (0..n).filter(|&c| !used[c]);
        for m in mapping.iter_mut().filter(|m| **m == usize::MAX) {
            *m = spare.next().unwrap();
        }
        Permutation::new(mapping).unwrap()
    }

    #[test]
    fn worked_example_ciphertext() {
        let table = SymbolTable::english();
        let key = worked_example_key(&table);
        let cipher = encipher_text(&table, &key, "the cat sat on the mat").unwrap();
        assert_eq!(cipher, "wi jtvwjpvwjbhjwi jgvw");
        let plain = encipher_text(&table, &key.inverse(), &cipher).unwrap();
        assert_eq!(plain, "the cat sat on the mat");
    }

    #[test]
    fn rounding_recovers_permutation_matrices() {
        let perm = random_permutation(9, 4);
        assert_eq!(round_to_permutation(&perm.to_matrix()).unwrap(), perm);
    }

    #[test]
    fn rounding_survives_small_noise() {
        use rand::Rng as _;
        let n = 12;
        let perm = random_permutation(n, 8);
        let mut rng = rng::stream(8, "noise");
        let bound = 1.0 / (2.0 * n as f64);
        let noisy = perm.to_matrix().map(|v| v + rng.random_range(0.0..bound));
        assert_eq!(round_to_permutation(&noisy).unwrap(), perm);
    }

    #[test]
    fn uniform_rounds_to_identity() {
        let m = DMatrix::from_element(6, 6, 1.0 / 6.0);
        assert_eq!(round_to_permutation(&m).unwrap(), Permutation::identity(6));
    }

    #[test]
    fn rounding_beats_greedy_argmax() {
        // Row-wise argmax would pick column 0 twice.
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.8, 0.2]);
        let p = round_to_permutation(&m).unwrap();
        assert_eq!(p.as_slice(), &[0, 1]);
        let m = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.99, 0.01]);
        assert_eq!(round_to_permutation(&m).unwrap().as_slice(), &[1, 0]);
    }

    #[test]
    fn rounding_rejects_rectangular() {
        assert!(round_to_permutation(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn stochastic_matrix_json_round_trip() {
        let m =
            StochasticMatrix::from_logits(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"logits\":[1.0,2.0,3.0,4.0,5.0,6.0]"));
        assert_eq!(serde_json::from_str::<StochasticMatrix>(&json).unwrap(), m);
    }

    proptest! {
        #[test]
        fn inverse_composes_to_identity(n in 1usize..40, seed in any::<u64>()) {
            let p = random_permutation(n, seed);
            prop_assert_eq!(p.then(&p.inverse()), Permutation::identity(n));
            prop_assert_eq!(p.inverse().then(&p), Permutation::identity(n));
        }

        #[test]
        fn encipher_is_invertible(seq in proptest::collection::vec(0usize..28, 0..60), seed in any::<u64>()) {
            let p = random_permutation(27, seed);
            let c = encipher(&seq, &p).unwrap();
            prop_assert_eq!(c.len(), seq.len());
            prop_assert_eq!(encipher(&c, &p.inverse()).unwrap(), seq);
        }

        #[test]
        fn softmax_is_shift_invariant(
            vals in proptest::collection::vec(-20.0f64..20.0, 12),
            shift in -50.0f64..50.0,
            row in 0usize..3,
        ) {
            let m = StochasticMatrix::from_logits(DMatrix::from_row_slice(3, 4, &vals));
            let mut shifted = m.clone();
            shifted.logits_mut().row_mut(row).add_scalar_mut(shift);
            let (a, b) = (m.probabilities(), shifted.probabilities());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for r in a.row_iter() {
                prop_assert!((r.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn hungarian_matches_brute_force_on_small_matrices() {
        use rand::Rng as _;
        let mut rng = rng::stream(3, "hungarian");
        for n in 1..=6 {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
            let (assign, cost) = min_cost_assignment(&m);
            assert!(Permutation::new(assign).is_ok());
            let mut best = f64::INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            permute_all(&mut perm, 0, &mut |p| {
                best = best.min(p.iter().enumerate().map(|(i, &j)| m[(i, j)]).sum());
            });
            assert_abs_diff_eq!(cost, best, epsilon = 1e-12);
        }
    }

    fn permute_all(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute_all(p, k + 1, f);
            p.swap(k, i);
        }
    }
}

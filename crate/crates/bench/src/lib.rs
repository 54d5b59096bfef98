//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use seqjoint::cipher::{encipher, random_permutation};
use seqjoint::corpus::{accumulate_ngrams, normalize_lines, Sequence, SymbolTable};

const ALICE: &str = include_str!("../../../data/alice.txt");

/// Plaintext and enciphered bigram matrices of the bundled corpus over the
/// 27 non-boundary symbols, plus the plaintext unigram.
pub fn alice_bigrams(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let table = SymbolTable::english();
    let lines = normalize_lines(&table, ALICE);
    let key = random_permutation(table.len() - 1, seed);
    let cipher: Vec<Sequence> = lines.iter().map(|s| encipher(s, &key).unwrap()).collect();
    let b = accumulate_ngrams(&lines, table.len(), 2).unwrap();
    let c = accumulate_ngrams(&cipher, table.len(), 2).unwrap();
    let (b, unigram) = b.without_boundary().unwrap();
    (b, c.without_boundary().unwrap().0, unigram)
}

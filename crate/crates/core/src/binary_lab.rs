//! Identifiability of a binary noisy channel with a Markov prior.
//!
//! With hidden and observed alphabets of size two the decoder has two
//! degrees of freedom,
//!
//! ```text
//! O = [ eta  1-eta ]
//!     [ zeta 1-zeta]
//! ```
//!
//! and the observed bigram table is `C = Oᵀ B O`. For full-rank `B` the
//! bigram equations admit at most two decoders, `O = 𝟙cᵀ ± d [[b1, -b1],
//! [-b0, b0]]` with `d² = det C / det B`. Trigram statistics separate them
//! whenever `Σ B_ijk b⊥_i b⊥_j b⊥_k ≠ 0` with `b⊥ = [-b1, b0]`, which for a
//! Markov prior holds exactly when `b0 ≠ ½`.

use serde::Serialize;

use crate::error::{Degeneracy, Error, Result};
use crate::grad_solver::bigram_loss_grad_probs;

pub type Mat2 = [[f64; 2]; 2];
pub type Tensor3 = [[[f64; 2]; 2]; 2];

/// Below this `|det B|` the prior counts as rank one.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Largest sequence length [`enumerate_marginal`] accepts.
pub const MAX_ENUMERATION_LENGTH: usize = 12;
/// Finite-difference step for Hessians.
pub const FD_STEP: f64 = 1e-5;

fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn to_matrix(m: &Mat2) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

/// Stationary binary Markov prior described by its adjacent-pair joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMarkov {
    pub joint: Mat2,
    pub unigram: [f64; 2],
}

impl BinaryMarkov {
    pub fn from_joint(joint: Mat2) -> Result<Self> {
        let rows = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
        let cols = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
        if joint.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("joint has negative entries".into()));
        }
        if (rows[0] + rows[1] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("joint must sum to one".into()));
        }
        if (rows[0] - cols[0]).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "joint is not stationary (row and column sums differ)".into(),
            ));
        }
        if rows.iter().any(|&b| b <= 0.0) {
            return Err(Error::InvalidArgument("unigram must be positive".into()));
        }
        Ok(Self {
            joint,
            unigram: rows,
        })
    }

    /// Stationary prior of the transition matrix `p` (rows sum to one).
    pub fn from_transition(p: Mat2) -> Result<Self> {
        let (leave0, leave1) = (p[0][1], p[1][0]);
        if leave0 + leave1 <= 0.0 {
            return Err(Error::InvalidArgument("chain is reducible".into()));
        }
        let b0 = leave1 / (leave0 + leave1);
        let b = [b0, 1.0 - b0];
        Self::from_joint([
            [b[0] * p[0][0], b[0] * p[0][1]],
            [b[1] * p[1][0], b[1] * p[1][1]],
        ])
    }

    /// `B = (1 − rho) b bᵀ + rho diag(b)`: unigram `[b0, 1 − b0]` with
    /// correlation `rho` between neighbours.
    pub fn with_unigram(b0: f64, rho: f64) -> Result<Self> {
        let b = [b0, 1.0 - b0];
        let joint = [
            [
                (1.0 - rho) * b[0] * b[0] + rho * b[0],
                (1.0 - rho) * b[0] * b[1],
            ],
            [
                (1.0 - rho) * b[1] * b[0],
                (1.0 - rho) * b[1] * b[1] + rho * b[1],
            ],
        ];
        Self::from_joint(joint)
    }

    pub fn transition(&self) -> Mat2 {
        let b = self.unigram;
        [
            [self.joint[0][0] / b[0], self.joint[0][1] / b[0]],
            [self.joint[1][0] / b[1], self.joint[1][1] / b[1]],
        ]
    }

    /// Markov trigram `B_ijk = B_ij B_jk / b_j`.
    pub fn trigram(&self) -> Tensor3 {
        let mut t = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    t[i][j][k] = self.joint[i][j] * self.joint[j][k] / self.unigram[j];
                }
            }
        }
        t
    }

    pub fn determinant(&self) -> f64 {
        det(&self.joint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryDecoder {
    pub eta: f64,
    pub zeta: f64,
}

impl BinaryDecoder {
    pub fn new(eta: f64, zeta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) || !(0.0..=1.0).contains(&zeta) {
            return Err(Error::InvalidArgument(format!(
                "decoder entries must lie in [0, 1], got ({eta}, {zeta})"
            )));
        }
        Ok(Self { eta, zeta })
    }

    pub fn matrix(&self) -> Mat2 {
        [[self.eta, 1.0 - self.eta], [self.zeta, 1.0 - self.zeta]]
    }

    /// The decoder with the roles of the two hidden symbols exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            eta: self.zeta,
            zeta: self.eta,
        }
    }
}

/// `Oᵀ B O`.
pub fn observed_bigram(joint: &Mat2, o: &Mat2) -> Mat2 {
    let mut d = [[0.0; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    d[p][q] += joint[i][j] * o[i][p] * o[j][q];
                }
            }
        }
    }
    d
}

/// `D_pqr = Σ_ijk B_ijk O_ip O_jq O_kr`.
pub fn observed_trigram(trigram: &Tensor3, o: &Mat2) -> Tensor3 {
    let mut d = [[[0.0; 2]; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            for r in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            d[p][q][r] += trigram[i][j][k] * o[i][p] * o[j][q] * o[k][r];
                        }
                    }
                }
            }
        }
    }
    d
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn bigram_residual(joint: &Mat2, c: &Mat2, decoder: &BinaryDecoder) -> f64 {
    let d = observed_bigram(joint, &decoder.matrix());
    max_abs_diff(d.as_flattened(), c.as_flattened())
}

pub fn trigram_residual(trigram: &Tensor3, target: &Tensor3, decoder: &BinaryDecoder) -> f64 {
    let d = observed_trigram(trigram, &decoder.matrix());
    max_abs_diff(
        d.as_flattened().as_flattened(),
        target.as_flattened().as_flattened(),
    )
}

/// Tolerance for keeping a candidate: entries may leave `[0, 1]` by this
/// much (and are then clamped), and the bigram residual must stay below
/// [`CANDIDATE_RESIDUAL`].
const ENTRY_SLACK: f64 = 1e-12;
pub const CANDIDATE_RESIDUAL: f64 = 1e-8;

/// Decoders reproducing the observed bigrams `c` under prior bigrams `b`.
///
/// Returns zero, one (when both closed-form solutions coincide or one has
/// an entry outside `[0, 1]`) or two decoders. The positive-determinant
/// solution comes first.
pub fn candidate_solutions(b: &Mat2, c: &Mat2) -> Result<Vec<BinaryDecoder>> {
    let bu = [b[0][0] + b[0][1], b[1][0] + b[1][1]];
    let c0 = c[0][0] + c[0][1];
    let det_b = det(b);
    if det_b.abs() <= RANK_TOLERANCE {
        return Err(Error::NonIdentifiable(Degeneracy::RankOne {
            b0: bu[0],
            b1: bu[1],
            c0,
        }));
    }
    let ratio = det(c) / det_b;
    if ratio < -RANK_TOLERANCE {
        return Ok(Vec::new());
    }
    let d = ratio.max(0.0).sqrt();
    let raw = [
        (c0 + d * bu[1], c0 - d * bu[0]),
        (c0 - d * bu[1], c0 + d * bu[0]),
    ];
    let mut out: Vec<BinaryDecoder> = Vec::with_capacity(2);
    for (eta, zeta) in raw {
        let inside = |v: f64| (-ENTRY_SLACK..=1.0 + ENTRY_SLACK).contains(&v);
        if !inside(eta) || !inside(zeta) {
            continue;
        }
        let cand = BinaryDecoder {
            eta: eta.clamp(0.0, 1.0),
            zeta: zeta.clamp(0.0, 1.0),
        };
        if bigram_residual(b, c, &cand) >= CANDIDATE_RESIDUAL {
            continue;
        }
        let duplicate = out
            .iter()
            .any(|o| (o.eta - cand.eta).abs() < 1e-7 && (o.zeta - cand.zeta).abs() < 1e-7);
        if !duplicate {
            out.push(cand);
        }
    }
    Ok(out)
}

/// `Σ_ijk B_ijk b⊥_i b⊥_j b⊥_k` with `b⊥ = [−b1, b0]`.
pub fn trigram_condition(trigram: &Tensor3, b: [f64; 2]) -> f64 {
    let perp = [-b[1], b[0]];
    let mut total = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                total += trigram[i][j][k] * perp[i] * perp[j] * perp[k];
            }
        }
    }
    total
}

/// Exact `p(y)` for every binary `y` of the given length by summing over
/// all hidden sequences. Entry `n` is the sequence whose bits, most
/// significant first, are `y_0 y_1 ...`.
pub fn enumerate_marginal(
    prior: &BinaryMarkov,
    decoder: &BinaryDecoder,
    length: usize,
) -> Result<Vec<f64>> {
    if length > MAX_ENUMERATION_LENGTH {
        return Err(Error::TooLarge {
            len: length,
            max: MAX_ENUMERATION_LENGTH,
        });
    }
    let trans = prior.transition();
    let o = decoder.matrix();
    let bit = |v: usize, t: usize| (v >> (length - 1 - t)) & 1;
    let count = 1usize << length;
    let mut marginal = vec![0.0; count];
    for x in 0..count {
        let mut px = if length == 0 {
            1.0
        } else {
            prior.unigram[bit(x, 0)]
        };
        for t in 1..length {
            px *= trans[bit(x, t - 1)][bit(x, t)];
        }
        for (y, slot) in marginal.iter_mut().enumerate() {
            let mut pyx = px;
            for t in 0..length {
                pyx *= o[bit(x, t)][bit(y, t)];
            }
            *slot += pyx;
        }
    }
    Ok(marginal)
}

/// Bigram cross-entropy `−Σ C log(Oᵀ B O)` as a function of `(eta, zeta)`.
pub fn pair_loss(b: &Mat2, c: &Mat2, eta: f64, zeta: f64) -> f64 {
    pair_loss_grad(b, c, eta, zeta).0
}

/// Loss and gradient with respect to `(eta, zeta)`.
pub fn pair_loss_grad(b: &Mat2, c: &Mat2, eta: f64, zeta: f64) -> (f64, [f64; 2]) {
    let o = BinaryDecoder { eta, zeta }.matrix();
    let (loss, g) = bigram_loss_grad_probs(&to_matrix(&o), &to_matrix(b), &to_matrix(c), 0.0);
    (loss, [g[(0, 0)] - g[(0, 1)], g[(1, 0)] - g[(1, 1)]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Minimum,
    Maximum,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOrigin {
    UnigramInit,
    Candidate,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryPoint {
    pub eta: f64,
    pub zeta: f64,
    pub origin: PointOrigin,
    pub kind: PointKind,
    pub loss: f64,
    pub gradient_norm: f64,
    pub hessian_eigenvalues: [f64; 2],
}

fn classify(b: &Mat2, c: &Mat2, eta: f64, zeta: f64) -> ([f64; 2], PointKind) {
    let h = FD_STEP;
    let col = |de: f64, dz: f64| {
        let plus = pair_loss_grad(b, c, eta + de, zeta + dz).1;
        let minus = pair_loss_grad(b, c, eta - de, zeta - dz).1;
        [
            (plus[0] - minus[0]) / (2.0 * h),
            (plus[1] - minus[1]) / (2.0 * h),
        ]
    };
    let (ce, cz) = (col(h, 0.0), col(0.0, h));
    let (a, d) = (ce[0], cz[1]);
    let off = 0.5 * (ce[1] + cz[0]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d).powi(2) + off * off).sqrt();
    let eig = [mean - radius, mean + radius];
    let scale = eig[0].abs().max(eig[1].abs()).max(1e-300);
    let kind = if eig.iter().any(|e| e.abs() < 1e-7 * scale) {
        PointKind::Degenerate
    } else if eig[0] > 0.0 {
        PointKind::Minimum
    } else if eig[1] < 0.0 {
        PointKind::Maximum
    } else {
        PointKind::Saddle
    };
    (eig, kind)
}

/// The unigram-initialisation point plus every valid closed-form decoder,
/// each classified by the eigenvalues of a finite-difference Hessian of the
/// bigram loss.
pub fn stationary_points(b: &Mat2, c: &Mat2) -> Result<Vec<StationaryPoint>> {
    let candidates = candidate_solutions(b, c)?;
    let c0 = c[0][0] + c[0][1];
    let mut points = vec![(c0, c0, PointOrigin::UnigramInit)];
    points.extend(
        candidates
            .iter()
            .map(|d| (d.eta, d.zeta, PointOrigin::Candidate)),
    );
    Ok(points
        .into_iter()
        .map(|(eta, zeta, origin)| {
            let (loss, g) = pair_loss_grad(b, c, eta, zeta);
            let (hessian_eigenvalues, kind) = classify(b, c, eta, zeta);
            StationaryPoint {
                eta,
                zeta,
                origin,
                kind,
                loss,
                gradient_norm: (g[0] * g[0] + g[1] * g[1]).sqrt(),
                hessian_eigenvalues,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifiabilityReport {
    pub prior: BinaryMarkov,
    pub observed_bigram: Mat2,
    pub candidates: Vec<BinaryDecoder>,
    pub trigram_condition: f64,
    /// Candidates whose trigram marginal matches the true decoder's.
    pub trigram_consistent: Vec<BinaryDecoder>,
    pub verdict: String,
}

/// Full identifiability analysis of a known `(prior, decoder)` pair.
pub fn analyze(prior: &BinaryMarkov, truth: &BinaryDecoder) -> Result<IdentifiabilityReport> {
    let c = observed_bigram(&prior.joint, &truth.matrix());
    let tri = prior.trigram();
    let condition = trigram_condition(&tri, prior.unigram);
    let candidates = match candidate_solutions(&prior.joint, &c) {
        Ok(c) => c,
        Err(Error::NonIdentifiable(why)) => {
            return Ok(IdentifiabilityReport {
                prior: *prior,
                observed_bigram: c,
                candidates: Vec::new(),
                trigram_condition: condition,
                trigram_consistent: Vec::new(),
                verdict: format!("not identifiable: {why}"),
            })
        }
        Err(e) => return Err(e),
    };
    let target = observed_trigram(&tri, &truth.matrix());
    let consistent: Vec<BinaryDecoder> = candidates
        .iter()
        .copied()
        .filter(|d| trigram_residual(&tri, &target, d) < CANDIDATE_RESIDUAL)
        .collect();
    let verdict = match (candidates.len(), consistent.len()) {
        (1, _) => "identifiable from bigrams".to_string(),
        (_, 1) => "identifiable from trigrams".to_string(),
        _ if (truth.eta - truth.zeta).abs() < 1e-12 => {
            "identifiable (observations independent of hidden symbols)".to_string()
        }
        _ => "not identifiable: candidates share bigram and trigram marginals".to_string(),
    };
    Ok(IdentifiabilityReport {
        prior: *prior,
        observed_bigram: c,
        candidates,
        trigram_condition: condition,
        trigram_consistent: consistent,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn symmetric() -> BinaryMarkov {
        BinaryMarkov::from_joint([[0.4, 0.1], [0.1, 0.4]]).unwrap()
    }

    #[test]
    fn symmetric_prior_has_mirror_candidates() {
        let prior = symmetric();
        let truth = BinaryDecoder::new(0.9, 0.2).unwrap();
        let c = observed_bigram(&prior.joint, &truth.matrix());
        let cands = candidate_solutions(&prior.joint, &c).unwrap();
        assert_eq!(cands.len(), 2);
        assert_abs_diff_eq!(cands[0].eta, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(cands[0].zeta, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cands[1].eta, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cands[1].zeta, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_prior_is_not_identifiable() {
        let b = [0.3, 0.7];
        let joint = [[b[0] * b[0], b[0] * b[1]], [b[1] * b[0], b[1] * b[1]]];
        let truth = BinaryDecoder::new(0.8, 0.3).unwrap();
        let c = observed_bigram(&joint, &truth.matrix());
        match candidate_solutions(&joint, &c) {
            Err(Error::NonIdentifiable(Degeneracy::RankOne { b0, b1, c0 })) => {
                assert_abs_diff_eq!(b0 * truth.eta + b1 * truth.zeta, c0, epsilon = 1e-12);
            }
            other => panic!("expected rank-one error, got {other:?}"),
        }
    }

    #[test]
    fn independent_decoder_gives_one_candidate() {
        let prior = BinaryMarkov::with_unigram(0.3, 0.5).unwrap();
        let truth = BinaryDecoder::new(0.6, 0.6).unwrap();
        let c = observed_bigram(&prior.joint, &truth.matrix());
        let cands = candidate_solutions(&prior.joint, &c).unwrap();
        assert_eq!(cands.len(), 1);
        assert_abs_diff_eq!(cands[0].eta, 0.6, epsilon = 1e-7);
    }

    #[test]
    fn trigram_condition_examples() {
        let half = BinaryMarkov::with_unigram(0.5, 0.4).unwrap();
        assert!(trigram_condition(&half.trigram(), half.unigram).abs() < 1e-12);
        let skewed = BinaryMarkov::with_unigram(0.3, 0.4).unwrap();
        assert!(trigram_condition(&skewed.trigram(), skewed.unigram).abs() > 1e-10);
        let b = skewed.unigram;
        let mut independent = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    independent[i][j][k] = b[i] * b[j] * b[k];
                }
            }
        }
        assert!(trigram_condition(&independent, b).abs() < 1e-15);
    }

    #[test]
    fn length_one_marginal() {
        let prior = BinaryMarkov::with_unigram(0.3, 0.4).unwrap();
        let dec = BinaryDecoder::new(0.9, 0.2).unwrap();
        let m = enumerate_marginal(&prior, &dec, 1).unwrap();
        assert_abs_diff_eq!(m[0], 0.3 * 0.9 + 0.7 * 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            enumerate_marginal(&prior, &dec, 13),
            Err(Error::TooLarge { len: 13, max: 12 })
        ));
    }

    #[test]
    fn symmetric_prior_swaps_are_indistinguishable() {
        let prior = symmetric();
        let dec = BinaryDecoder::new(0.9, 0.2).unwrap();
        for len in 1..=6 {
            let a = enumerate_marginal(&prior, &dec, len).unwrap();
            let b = enumerate_marginal(&prior, &dec.swapped(), len).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn rank_one_line_is_indistinguishable() {
        let prior = BinaryMarkov::with_unigram(0.3, 0.0).unwrap();
        let c0 = 0.3 * 0.9 + 0.7 * 0.2;
        let other = BinaryDecoder::new(0.5, (c0 - 0.3 * 0.5) / 0.7).unwrap();
        let dec = BinaryDecoder::new(0.9, 0.2).unwrap();
        for len in 1..=6 {
            let a = enumerate_marginal(&prior, &dec, len).unwrap();
            let b = enumerate_marginal(&prior, &other, len).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn generic_instance_has_saddle_and_two_minima() {
        let prior = BinaryMarkov::from_transition([[0.8, 0.2], [0.4, 0.6]]).unwrap();
        let truth = BinaryDecoder::new(0.7, 0.4).unwrap();
        let c = observed_bigram(&prior.joint, &truth.matrix());
        let pts = stationary_points(&prior.joint, &c).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].kind, PointKind::Saddle);
        assert!(pts[1..].iter().all(|p| p.kind == PointKind::Minimum));
        assert!(pts.iter().all(|p| p.gradient_norm < 1e-6));
    }

    #[test]
    fn symmetric_minima_have_equal_loss() {
        let prior = symmetric();
        let truth = BinaryDecoder::new(0.9, 0.2).unwrap();
        let c = observed_bigram(&prior.joint, &truth.matrix());
        let pts = stationary_points(&prior.joint, &c).unwrap();
        assert_eq!(pts.len(), 3);
        assert_abs_diff_eq!(pts[1].eta, pts[2].zeta, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1].loss, pts[2].loss, epsilon = 1e-12);
    }

    #[test]
    fn analysis_verdicts() {
        let skewed = BinaryMarkov::from_transition([[0.8, 0.2], [0.4, 0.6]]).unwrap();
        let rep = analyze(&skewed, &BinaryDecoder::new(0.7, 0.4).unwrap()).unwrap();
        assert_eq!(rep.candidates.len(), 2);
        assert_eq!(rep.trigram_consistent.len(), 1);
        assert_eq!(rep.verdict, "identifiable from trigrams");
        let rep = analyze(&symmetric(), &BinaryDecoder::new(0.9, 0.2).unwrap()).unwrap();
        assert_eq!(rep.trigram_consistent.len(), 2);
        assert!(rep.verdict.starts_with("not identifiable"));
    }

    #[test]
    fn prior_validation() {
        assert!(BinaryMarkov::from_joint([[0.4, 0.2], [0.1, 0.3]]).is_err());
        assert!(BinaryMarkov::from_joint([[0.5, 0.0], [0.0, 0.6]]).is_err());
        assert!(BinaryDecoder::new(1.2, 0.0).is_err());
    }
}

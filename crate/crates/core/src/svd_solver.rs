//! Analytic recovery of a permutation decoder from bigram statistics.
//!
//! If `C = Oᵀ B O` with `O` a permutation matrix, the singular value
//! decompositions `B = Ux Λ Vxᵀ` and `C = Uy Λ Vyᵀ` share their spectrum and
//! their singular vectors agree up to a per-column sign, so
//! `O = Ux S Uyᵀ = Vx T Vyᵀ`. Because `O 𝟙 = 𝟙`, the signs follow from
//! `S Uyᵀ 𝟙 = Uxᵀ 𝟙` (and likewise for `T`). The recovery is exact only
//! when the singular values of `B` are distinct and non-zero.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative singular-value gap below which the spectrum counts as degenerate.
pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-6;

/// Below this `𝟙`-projection a column's sign is taken from the column
/// inner product instead.
pub const PROJECTION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumDiagnostics {
    /// Singular values of the plaintext bigram matrix, descending.
    pub plain_singular_values: Vec<f64>,
    /// Singular values of the ciphertext bigram matrix, descending.
    pub cipher_singular_values: Vec<f64>,
    /// `(σ_k − σ_{k+1}) / σ_0` for the plaintext spectrum, with the last
    /// entry `σ_{n−1} / σ_0`.
    pub relative_gaps: Vec<f64>,
    /// Largest absolute difference between the two spectra.
    pub spectrum_mismatch: f64,
    /// `‖Ux S Uyᵀ − Vx T Vyᵀ‖_F`.
    pub route_disagreement: f64,
    /// Set when the inputs are not an exact cipher pair (empirical stats):
    /// the estimate is still returned but is not guaranteed to be exact.
    pub noisy: bool,
}

#[derive(Debug, Clone)]
pub struct SvdRecovery {
    /// `Ux S Uyᵀ`.
    pub left: DMatrix<f64>,
    /// `Vx T Vyᵀ`.
    pub right: DMatrix<f64>,
    /// Average of the two routes.
    pub estimate: DMatrix<f64>,
    pub left_signs: Vec<f64>,
    pub right_signs: Vec<f64>,
    pub diagnostics: SpectrumDiagnostics,
}

struct SortedSvd {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v = svd
        .v_t
        .expect("right singular vectors requested")
        .transpose();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        sigma: DVector::from_fn(order.len(), |k, _| svd.singular_values[order[k]]),
        v: DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]),
    }
}

fn relative_gaps(sigma: &DVector<f64>) -> Vec<f64> {
    let n = sigma.len();
    let top = sigma[0];
    if top <= 0.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let next = if k + 1 < n { sigma[k + 1] } else { 0.0 };
            (sigma[k] - next) / top
        })
        .collect()
}

/// Per-column signs `s` such that `s_k (U_estᵀ 𝟙)_k = (U_refᵀ 𝟙)_k`.
///
/// When the `𝟙`-projection of a column is below [`PROJECTION_FLOOR`] the
/// sign of the inner product of the two columns is used instead.
pub fn sign_match(u_ref: &DMatrix<f64>, u_est: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(
        u_ref.shape(),
        u_est.shape(),
        "sign_match needs equal shapes"
    );
    (0..u_ref.ncols())
        .map(|k| {
            let pr = u_ref.column(k).sum();
            let pe = u_est.column(k).sum();
            let key = if pr.abs() < PROJECTION_FLOOR || pe.abs() < PROJECTION_FLOOR {
                u_ref.column(k).dot(&u_est.column(k))
            } else {
                pr * pe
            };
            if key < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

fn signed_product(a: &DMatrix<f64>, signs: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (k, &s) in signs.iter().enumerate() {
        scaled.column_mut(k).scale_mut(s);
    }
    scaled * b.transpose()
}

/// Recovers the decoder matrix from plaintext bigrams `b` and ciphertext
/// bigrams `c` with the default gap tolerance.
pub fn recover_svd(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<SvdRecovery> {
    recover_svd_with_tolerance(b, c, DEFAULT_GAP_TOLERANCE)
}

pub fn recover_svd_with_tolerance(
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    gap_tolerance: f64,
) -> Result<SvdRecovery> {
    if !b.is_square() || b.shape() != c.shape() {
        return Err(Error::Shape(format!(
            "expected two equal square matrices, got {:?} and {:?}",
            b.shape(),
            c.shape()
        )));
    }
    let x = sorted_svd(b);
    let gaps = relative_gaps(&x.sigma);
    if let Some((index, &gap)) = gaps.iter().enumerate().find(|(_, &g)| g < gap_tolerance) {
        return Err(Error::DegenerateSpectrum { index, gap });
    }
    let y = sorted_svd(c);

    let left_signs = sign_match(&x.u, &y.u);
    let right_signs = sign_match(&x.v, &y.v);
    let left = signed_product(&x.u, &left_signs, &y.u);
    let right = signed_product(&x.v, &right_signs, &y.v);
    let estimate = (&left + &right) * 0.5;

    let spectrum_mismatch = x
        .sigma
        .iter()
        .zip(y.sigma.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let route_disagreement = (&left - &right).norm();
    let cipher_degenerate = relative_gaps(&y.sigma).iter().any(|&g| g < gap_tolerance);
    let noisy = cipher_degenerate || spectrum_mismatch > 1e-9 || route_disagreement > 1e-6;

    Ok(SvdRecovery {
        left,
        right,
        estimate,
        left_signs,
        right_signs,
        diagnostics: SpectrumDiagnostics {
            plain_singular_values: x.sigma.iter().copied().collect(),
            cipher_singular_values: y.sigma.iter().copied().collect(),
            relative_gaps: gaps,
            spectrum_mismatch,
            route_disagreement,
            noisy,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{random_permutation, round_to_permutation, Permutation};
    use crate::rng;
    use rand::Rng as _;

    fn chain_bigram(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng::stream(seed, "chain");
        let mut p = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
        for mut row in p.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let mut pi = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..5000 {
            pi = p.transpose() * pi;
        }
        DMatrix::from_fn(n, n, |i, j| pi[i] * p[(i, j)])
    }

    #[test]
    fn identity_cipher_rounds_to_identity() {
        let b = chain_bigram(5, 1);
        let rec = recover_svd(&b, &b).unwrap();
        assert_eq!(
            round_to_permutation(&rec.estimate).unwrap(),
            Permutation::identity(5)
        );
        assert!(!rec.diagnostics.noisy);
    }

    #[test]
    fn recovers_random_cipher_exactly() {
        let b = chain_bigram(5, 2);
        let perm = random_permutation(5, 9);
        let o = perm.to_matrix();
        let c = o.transpose() * &b * &o;
        let rec = recover_svd(&b, &c).unwrap();
        assert_eq!(round_to_permutation(&rec.estimate).unwrap(), perm);
        let recon = rec.estimate.transpose() * &b * &rec.estimate;
        assert!((recon - &c).norm() <= 1e-6);
        assert!(rec.diagnostics.route_disagreement <= 1e-6);
        assert!(rec.diagnostics.spectrum_mismatch <= 1e-9);
    }

    #[test]
    fn rank_one_is_degenerate() {
        let b = chain_bigram(5, 3);
        let u = b.column_sum();
        let outer = &u * u.transpose();
        assert!(matches!(
            recover_svd(&outer, &outer),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn sign_match_examples() {
        let b = chain_bigram(6, 4);
        let u = sorted_svd(&b).u;
        assert_eq!(sign_match(&u, &u), vec![1.0; 6]);
        assert_eq!(sign_match(&u, &(-&u)), vec![-1.0; 6]);
        let mut flipped = u.clone();
        flipped.column_mut(1).neg_mut();
        flipped.column_mut(3).neg_mut();
        assert_eq!(
            sign_match(&u, &flipped),
            vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn sign_match_falls_back_on_orthogonal_columns() {
        // Second column is orthogonal to 𝟙.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let mut est = u.clone();
        est.column_mut(1).neg_mut();
        assert_eq!(sign_match(&u, &est), vec![1.0, -1.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            recover_svd(&DMatrix::zeros(2, 2), &DMatrix::zeros(3, 3)),
            Err(Error::Shape(_))
        ));
    }
}

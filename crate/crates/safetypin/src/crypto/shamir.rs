//! Shamir secret sharing over a prime field.
//!
//! The secret is the constant term of a degree `t-1` polynomial; share `i`
//! is the polynomial evaluated at `x = i` for `i` in `1..=n`. Index 0 is
//! the secret itself and is never a share.

use num_bigint::BigUint;
use num_traits::Zero;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::field::{FieldElement, PrimeField};
use super::CryptoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShamirShare {
    /// Evaluation point, in `1..=n`.
    pub index: u32,
    pub value: FieldElement,
}

/// Splits `secret` into `n` shares, any `t` of which reconstruct it.
pub fn share(
    field: &PrimeField,
    secret: &FieldElement,
    threshold: usize,
    count: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<ShamirShare>, CryptoError> {
    if threshold == 0 || threshold > count {
        return Err(CryptoError::Parameter(format!(
            "threshold {threshold} must be in 1..={count}"
        )));
    }
    if BigUint::from(count) >= *field.modulus() {
        return Err(CryptoError::Parameter(
            "share count must be below the field size".into(),
        ));
    }
    if secret >= field.modulus() {
        return Err(CryptoError::Parameter("secret outside the field".into()));
    }
    // coeffs[0] = secret, the rest uniform.
    let mut coeffs = Vec::with_capacity(threshold);
    coeffs.push(secret.clone());
    for _ in 1..threshold {
        coeffs.push(field.random(rng));
    }
    let shares = (1..=count as u64)
        .map(|x| {
            let xe = field.element_from_u64(x);
            // Horner evaluation.
            let mut acc = FieldElement::zero();
            for c in coeffs.iter().rev() {
                acc = field.add(&field.mul(&acc, &xe), c);
            }
            ShamirShare {
                index: x as u32,
                value: acc,
            }
        })
        .collect();
    Ok(shares)
}

/// Lagrange interpolation at `x = 0` over at least `threshold` shares with
/// distinct indices. Extra consistent shares are harmless.
pub fn reconstruct(
    field: &PrimeField,
    shares: &[ShamirShare],
    threshold: usize,
) -> Result<FieldElement, CryptoError> {
    if shares.len() < threshold {
        return Err(CryptoError::NotEnoughShares {
            have: shares.len(),
            need: threshold,
        });
    }
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.index == 0 {
            return Err(CryptoError::ZeroShareIndex);
        }
        if !seen.insert(s.index) {
            return Err(CryptoError::DuplicateShareIndex(s.index));
        }
    }
    let mut numerators = Vec::with_capacity(shares.len());
    let mut denominators = Vec::with_capacity(shares.len());
    for (j, sj) in shares.iter().enumerate() {
        let xj = field.element_from_u64(sj.index as u64);
        let mut num = field.element_from_u64(1);
        let mut den = field.element_from_u64(1);
        for (m, sm) in shares.iter().enumerate() {
            if m == j {
                continue;
            }
            let xm = field.element_from_u64(sm.index as u64);
            num = field.mul(&num, &xm);
            den = field.mul(&den, &field.sub(&xm, &xj));
        }
        numerators.push(num);
        denominators.push(den);
    }
    // One modular inverse for all denominators (Montgomery's trick).
    let mut prefix = Vec::with_capacity(denominators.len());
    let mut running = field.element_from_u64(1);
    for d in &denominators {
        prefix.push(running.clone());
        running = field.mul(&running, d);
    }
    let mut inv_running = field.inv(&running);
    let mut acc = FieldElement::zero();
    for j in (0..shares.len()).rev() {
        let inv_dj = field.mul(&inv_running, &prefix[j]);
        inv_running = field.mul(&inv_running, &denominators[j]);
        let lagrange = field.mul(&numerators[j], &inv_dj);
        acc = field.add(&acc, &field.mul(&shares[j].value, &lagrange));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Independent reconstruction oracle: solve the Vandermonde system by
    /// Gaussian elimination mod p and read off the constant term. A
    /// different algorithm from the Lagrange path in `reconstruct`.
    fn gaussian_oracle(field: &PrimeField, shares: &[ShamirShare]) -> FieldElement {
        let t = shares.len();
        // rows: [1, x, x^2, ..., x^{t-1} | y]
        let mut m: Vec<Vec<FieldElement>> = shares
            .iter()
            .map(|s| {
                let x = field.element_from_u64(s.index as u64);
                let mut row = Vec::with_capacity(t + 1);
                let mut pow = FieldElement::one();
                for _ in 0..t {
                    row.push(pow.clone());
                    pow = field.mul(&pow, &x);
                }
                row.push(s.value.clone());
                row
            })
            .collect();
        for col in 0..t {
            let pivot = (col..t)
                .find(|&r| !m[r][col].is_zero())
                .expect("singular system");
            m.swap(col, pivot);
            let inv = field.inv(&m[col][col].clone());
            for v in m[col].iter_mut() {
                *v = field.mul(v, &inv);
            }
            for r in 0..t {
                if r != col && !m[r][col].is_zero() {
                    let factor = m[r][col].clone();
                    for c in 0..=t {
                        let sub = field.mul(&factor, &m[col][c]);
                        m[r][c] = field.sub(&m[r][c], &sub);
                    }
                }
            }
        }
        m[0][t].clone()
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n, k, &mut cur, &mut out);
        out
    }

    #[test]
    fn one_of_one_is_constant_polynomial() {
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let secret = f.element_from_u64(42);
        let shares = share(&f, &secret, 1, 1, &mut rng).unwrap();
        assert_eq!(shares.len(), 1);
        assert_eq!(shares[0].value, secret); // constant polynomial
        assert_eq!(reconstruct(&f, &shares, 1).unwrap(), secret);
    }

    #[test]
    fn two_of_three_all_pairs_match_oracle() {
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let secret = f.element_from_u64(123);
        let shares = share(&f, &secret, 2, 3, &mut rng).unwrap();
        for pair in subsets(3, 2) {
            let sel: Vec<_> = pair.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(reconstruct(&f, &sel, 2).unwrap(), secret);
            assert_eq!(gaussian_oracle(&f, &sel), secret);
        }
    }

    #[test]
    fn every_t_subset_reconstructs_up_to_n8() {
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for n in 1..=8usize {
            for t in 1..=n {
                let secret = f.random(&mut rng);
                let shares = share(&f, &secret, t, n, &mut rng).unwrap();
                for subset in subsets(n, t) {
                    let sel: Vec<_> = subset.iter().map(|&i| shares[i].clone()).collect();
                    assert_eq!(reconstruct(&f, &sel, t).unwrap(), secret);
                    assert_eq!(gaussian_oracle(&f, &sel), secret);
                }
            }
        }
    }

    #[test]
    fn transport_field_round_trip() {
        let f = PrimeField::transport();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let secret = f.random(&mut rng);
        let shares = share(&f, &secret, 20, 40, &mut rng).unwrap();
        assert_eq!(reconstruct(&f, &shares, 20).unwrap(), secret);
        assert_eq!(reconstruct(&f, &shares[5..25], 20).unwrap(), secret);
    }

    #[test]
    fn parameter_errors() {
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let secret = f.element_from_u64(1);
        assert!(share(&f, &secret, 5, 3, &mut rng).is_err());
        assert!(share(&f, &secret, 0, 3, &mut rng).is_err());
        assert!(share(&f, &secret, 2, 251, &mut rng).is_err());
    }

    #[test]
    fn threshold_violation_errors() {
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let secret = f.element_from_u64(9);
        let shares = share(&f, &secret, 3, 5, &mut rng).unwrap();
        assert!(matches!(
            reconstruct(&f, &shares[..2], 3),
            Err(CryptoError::NotEnoughShares { have: 2, need: 3 })
        ));
        let mut dup = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert!(matches!(
            reconstruct(&f, &dup, 3),
            Err(CryptoError::DuplicateShareIndex(_))
        ));
        dup[0].index = 0;
        assert!(reconstruct(&f, &dup, 3).is_err());
    }

    #[test]
    fn t_minus_one_shares_are_information_free_chi2() {
        // For each sampled (t-1)-subset, complete the sharing with a random
        // extra point and reconstruct; the result must be uniform over the
        // field. chi-squared against uniform over F_251 with 250 dof.
        let f = PrimeField::small_test();
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let secret = f.element_from_u64(77);
        let t = 3;
        let n = 5;
        let trials = 25_100; // 100 expected per bucket
        let mut counts = vec![0u64; 251];
        for _ in 0..trials {
            let shares = share(&f, &secret, t, n, &mut rng).unwrap();
            // pick t-1 of the shares, plus a fabricated completion share
            let mut chosen: Vec<ShamirShare> = Vec::new();
            let mut idxs: Vec<usize> = (0..n).collect();
            for _ in 0..t - 1 {
                let k = rng.gen_range(0..idxs.len());
                chosen.push(shares[idxs.remove(k)].clone());
            }
            // completion at an unused index with a uniform value
            chosen.push(ShamirShare {
                index: shares[idxs[0]].index,
                value: f.random(&mut rng),
            });
            let v = reconstruct(&f, &chosen, t).unwrap();
            let v_u64: u64 = v.iter_u64_digits().next().unwrap_or(0);
            counts[v_u64 as usize] += 1;
        }
        let expect = trials as f64 / 251.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        // 250 dof: mean 250, sd ~22.4; 330 is beyond +3.5 sd.
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }
}

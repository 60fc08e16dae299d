//! Multidimensional rotation mapping over the normed division algebras
//! (reals, complex numbers, quaternions, octonions), built by Cayley–Dickson
//! doubling.
//!
//! Bob holds `y` and a uniformly random point `u ∈ {±1/√d}^d`. He publishes the
//! unit element `m` with `m ∘ ŷ = u`. Alice applies `m` to her own normalized
//! vector and obtains a noisy observation of `u`.

use crate::error::{invalid, Error, Result};

pub const DIMENSIONS: [usize; 4] = [1, 2, 4, 8];

fn check_dim(d: usize) -> Result<()> {
    if DIMENSIONS.contains(&d) {
        Ok(())
    } else {
        Err(invalid("d", format!("{d} not in {{1, 2, 4, 8}}")))
    }
}

pub fn conj(a: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = a.iter().map(|x| -x).collect();
    if let Some(first) = c.first_mut() {
        *first = -*first;
    }
    c
}

/// Cayley–Dickson product `(a, b)(c, d) = (ac − d̄b, da + bc̄)`.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 1 {
        return vec![a[0] * b[0]];
    }
    let h = n / 2;
    let (a1, a2) = a.split_at(h);
    let (b1, b2) = b.split_at(h);
    let left = sub(&mul(a1, b1), &mul(&conj(b2), a2));
    let right = add(&mul(b2, a1), &mul(a2, &conj(b1)));
    [left, right].concat()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let r = norm(a);
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Degenerate("zero or non-finite vector".into()));
    }
    Ok(a.iter().map(|x| x / r).collect())
}

/// Point of the hypercube `{±1/√d}^d` for bits (0 → +, 1 → −).
pub fn bits_to_point(bits: &[u8]) -> Vec<f64> {
    let s = 1.0 / (bits.len() as f64).sqrt();
    bits.iter().map(|&b| if b == 0 { s } else { -s }).collect()
}

/// `m = u ∘ conj(ŷ)`, so that `m ∘ ŷ = u` and `|m| = 1`.
pub fn multidim_map(y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_dim(y.len())?;
    if u.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: u.len(),
        });
    }
    let y_hat = normalized(y)?;
    Ok(mul(u, &conj(&y_hat)))
}

/// `v = m ∘ x̂`.
pub fn multidim_unmap(x: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len())?;
    if m.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: m.len(),
        });
    }
    Ok(mul(m, &normalized(x)?))
}

/// Log-likelihood ratios (positive favours bit 0) of the `d` virtual bits for
/// `y = t·x + z`, `z ~ N(0, σ²·I)`, given Alice's `x` and Bob's message `m`.
///
/// Bob's norm is replaced by its expectation given Alice's data,
/// `ρ = sqrt(t²|x|² + dσ²)`.
pub fn virtual_llrs(x: &[f64], m: &[f64], gain: f64, noise_var: f64) -> Result<Vec<f64>> {
    let v = multidim_unmap(x, m)?;
    let d = x.len() as f64;
    let rho = (gain * gain * norm(x).powi(2) + d * noise_var).sqrt();
    let scale = 2.0 * rho * gain * norm(x) / (d.sqrt() * noise_var);
    Ok(v.into_iter().map(|vi| scale * vi).collect())
}

/// Correlation SNR `c²/(1 − c²)` of the virtual channel `v ≈ a·u + noise`,
/// where `c` is the correlation between `u` and `v` components.
pub fn virtual_channel_snr(u: &[f64], v: &[f64]) -> f64 {
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        suv += a * b;
        suu += a * a;
        svv += b * b;
    }
    let c2 = suv * suv / (suu * svv);
    c2 / (1.0 - c2)
}

/// SNR of the binary-input AWGN channel seen by the decoder: for that channel
/// the mean sign-corrected LLR is `2·snr`. Averages over the per-block gain
/// `|x|`, which the receiver knows.
pub fn llr_channel_snr(llrs: &[f64], bits: &[u8]) -> f64 {
    let sum: f64 = llrs
        .iter()
        .zip(bits)
        .map(|(l, &b)| if b == 0 { *l } else { -*l })
        .sum();
    sum / (2.0 * llrs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_vec(r: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
    }

    fn random_bits(r: &mut impl Rng, d: usize) -> Vec<u8> {
        (0..d).map(|_| r.random_range(0..2u8)).collect()
    }

    #[test]
    fn sign_map() {
        let m = multidim_map(&[3.0], &[1.0]).unwrap();
        assert_eq!(m, vec![1.0]);
        let m = multidim_map(&[-3.0], &[1.0]).unwrap();
        assert_eq!(m, vec![-1.0]);
    }

    #[test]
    fn fixed_point_is_identity() {
        let mut r = rng(1);
        for d in DIMENSIONS {
            let u = bits_to_point(&random_bits(&mut r, d));
            let y: Vec<f64> = u.iter().map(|x| 2.5 * x).collect();
            let m = multidim_map(&y, &u).unwrap();
            assert!((m[0] - 1.0).abs() < 1e-12);
            assert!(m[1..].iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn map_then_apply_recovers_u() {
        let mut r = rng(2);
        for d in DIMENSIONS {
            for _ in 0..2000 {
                let y = random_vec(&mut r, d);
                let u = bits_to_point(&random_bits(&mut r, d));
                let m = multidim_map(&y, &u).unwrap();
                assert!((norm(&m) - 1.0).abs() < 1e-12);
                let v = multidim_unmap(&y, &m).unwrap();
                for (a, b) in v.iter().zip(&u) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn complex_case_is_plane_rotation() {
        let mut r = rng(3);
        for _ in 0..100 {
            let m = random_vec(&mut r, 2);
            let x = random_vec(&mut r, 2);
            let got = mul(&m, &x);
            let want = [m[0] * x[0] - m[1] * x[1], m[1] * x[0] + m[0] * x[1]];
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn left_multiplication_is_isometry() {
        let mut r = rng(4);
        for d in DIMENSIONS {
            for _ in 0..500 {
                let m = normalized(&random_vec(&mut r, d)).unwrap();
                let x = random_vec(&mut r, d);
                assert!((norm(&mul(&m, &x)) - norm(&x)).abs() < 1e-12 * norm(&x).max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(multidim_map(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).is_err());
        assert!(multidim_map(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(multidim_unmap(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(multidim_map(&[1.0, 2.0], &[1.0]).is_err());
    }
}

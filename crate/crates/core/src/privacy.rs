//! Toeplitz hashing for privacy amplification.
//!
//! The `out_len × in_len` matrix has `T[i][j] = d[i − j + in_len − 1]` for the
//! `in_len + out_len − 1` diagonal bits `d`. The product `T·x` is read off the
//! linear convolution `d ∗ x`, computed with an FFT and reduced mod 2.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};

/// Largest input for which the floating-point convolution stays exact.
pub const MAX_FFT_INPUT: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSpec {
    pub in_len: usize,
    pub out_len: usize,
    pub diagonal: Vec<u8>,
}

impl ToeplitzSpec {
    pub fn new(in_len: usize, out_len: usize, diagonal: Vec<u8>) -> Result<Self> {
        if out_len == 0 || out_len > in_len {
            return Err(invalid("out_len", format!("{out_len} not in (0, {in_len}]")));
        }
        if diagonal.len() != in_len + out_len - 1 {
            return Err(Error::LengthMismatch {
                expected: in_len + out_len - 1,
                actual: diagonal.len(),
            });
        }
        if diagonal.iter().any(|&b| b > 1) {
            return Err(invalid("diagonal", "bits must be 0 or 1"));
        }
        Ok(ToeplitzSpec {
            in_len,
            out_len,
            diagonal,
        })
    }

    /// Diagonal drawn from the privacy stream of `seed`, standing in for a
    /// pre-shared random string.
    pub fn from_seed(in_len: usize, out_len: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Privacy);
        let len = (in_len + out_len).saturating_sub(1);
        let diagonal = (0..len).map(|_| rng.random_range(0..2u8)).collect();
        Self::new(in_len, out_len, diagonal)
    }

    pub fn entry(&self, i: usize, j: usize) -> u8 {
        self.diagonal[i + self.in_len - 1 - j]
    }
}

pub fn toeplitz_hash(bits: &[u8], spec: &ToeplitzSpec) -> Result<Vec<u8>> {
    if bits.len() != spec.in_len {
        return Err(Error::LengthMismatch {
            expected: spec.in_len,
            actual: bits.len(),
        });
    }
    if spec.in_len > MAX_FFT_INPUT {
        return Err(invalid("in_len", format!("{} exceeds {MAX_FFT_INPUT}", spec.in_len)));
    }
    let n_in = spec.in_len;
    let conv_len = spec.diagonal.len() + n_in - 1;
    let size = conv_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let load = |v: &[u8]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (dst, &b) in buf.iter_mut().zip(v) {
            dst.re = b as f64;
        }
        buf
    };
    let mut a = load(&spec.diagonal);
    let mut b = load(bits);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = size as f64;
    Ok((0..spec.out_len)
        .map(|i| ((a[i + n_in - 1].re / scale).round() as i64 & 1) as u8)
        .collect())
}

/// `floor(n·(β·I − χ − Δ))`, clamped at zero; the flag marks a non-positive
/// bracket.
pub fn final_length(n_key_bits: usize, beta: f64, iab: f64, chi: f64, delta: f64) -> (usize, bool) {
    let per_bit = beta * iab - chi - delta;
    if per_bit <= 0.0 {
        return (0, true);
    }
    // Absorb the last-ulp error of the subtraction before flooring.
    let raw = n_key_bits as f64 * per_bit;
    ((raw + raw * 1e-12).floor() as usize, false)
}

/// Packs bits most-significant first.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i))))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], n_bits: usize) -> Result<Vec<u8>> {
    if n_bits > bytes.len() * 8 {
        return Err(Error::LengthMismatch {
            expected: n_bits.div_ceil(8),
            actual: bytes.len(),
        });
    }
    Ok((0..n_bits).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySidecar {
    pub session_id: String,
    pub in_len: usize,
    pub out_len: usize,
    pub beta: f64,
    pub iab: f64,
    pub chi: f64,
    pub delta: f64,
    pub insecure: bool,
    pub seed: u64,
}

/// Writes `<stem>.bin` (packed bits) and `<stem>.json`.
pub fn write_key(dir: &Path, stem: &str, bits: &[u8], sidecar: &KeySidecar) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.bin")), pack_bits(bits))?;
    let mut f = fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut f, sidecar).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;

    fn dense(bits: &[u8], spec: &ToeplitzSpec) -> Vec<u8> {
        (0..spec.out_len)
            .map(|i| (0..spec.in_len).fold(0u8, |acc, j| acc ^ (spec.entry(i, j) & bits[j])))
            .collect()
    }

    fn random_bits(r: &mut impl Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| r.random_range(0..2u8)).collect()
    }

    #[test]
    fn zero_input() {
        let spec = ToeplitzSpec::from_seed(100, 40, 1).unwrap();
        assert!(toeplitz_hash(&[0; 100], &spec).unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn small_dense_example() {
        // diagonal 10110 -> rows [d3 d2 d1 d0] = [1 1 0 1], [d4 d3 d2 d1] = [0 1 1 0]
        let spec = ToeplitzSpec::new(4, 2, vec![1, 0, 1, 1, 0]).unwrap();
        assert_eq!(spec.entry(0, 0), 1);
        let x = [1, 0, 1, 1];
        assert_eq!(toeplitz_hash(&x, &spec).unwrap(), vec![0, 1]);
        assert_eq!(toeplitz_hash(&x, &spec).unwrap(), dense(&x, &spec));
    }

    #[test]
    fn matches_dense_for_small_lengths() {
        let mut r = rng(3);
        for in_len in 1..=64 {
            for out_len in [1, in_len / 2, in_len].into_iter().filter(|&o| o > 0) {
                for s in 0..4 {
                    let spec = ToeplitzSpec::from_seed(in_len, out_len, s * 100 + in_len as u64).unwrap();
                    let x = random_bits(&mut r, in_len);
                    assert_eq!(toeplitz_hash(&x, &spec).unwrap(), dense(&x, &spec));
                }
            }
        }
    }

    #[test]
    fn linear_over_gf2() {
        let mut r = rng(4);
        let spec = ToeplitzSpec::from_seed(500, 200, 7).unwrap();
        for _ in 0..100 {
            let x = random_bits(&mut r, 500);
            let y = random_bits(&mut r, 500);
            let xy: Vec<u8> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
            let hx = toeplitz_hash(&x, &spec).unwrap();
            let hy = toeplitz_hash(&y, &spec).unwrap();
            let hxy: Vec<u8> = hx.iter().zip(&hy).map(|(a, b)| a ^ b).collect();
            assert_eq!(toeplitz_hash(&xy, &spec).unwrap(), hxy);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ToeplitzSpec::new(4, 5, vec![0; 8]).is_err());
        assert!(ToeplitzSpec::new(4, 2, vec![0; 4]).is_err());
        assert!(ToeplitzSpec::new(4, 0, vec![]).is_err());
        let spec = ToeplitzSpec::from_seed(4, 2, 0).unwrap();
        assert!(toeplitz_hash(&[0; 3], &spec).is_err());
    }

    #[test]
    fn final_length_values() {
        assert_eq!(final_length(1_000_000, 1.0, 0.0200, 0.0170, 0.0010), (2000, false));
        assert_eq!(final_length(1000, 1.0, 0.02, 0.015, 0.005).0, 0);
        assert_eq!(final_length(1000, 0.5, 0.02, 0.015, 0.0), (0, true));
    }

    #[test]
    fn pack_round_trip() {
        let bits = vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1];
        let packed = pack_bits(&bits);
        assert_eq!(packed, vec![0b1011_0001, 0b1100_0000]);
        assert_eq!(unpack_bits(&packed, 10).unwrap(), bits);
        assert!(unpack_bits(&packed, 17).is_err());
    }

    #[test]
    fn key_files() {
        let dir = tempfile::tempdir().unwrap();
        let side = KeySidecar {
            session_id: "s1".into(),
            in_len: 16,
            out_len: 8,
            beta: 0.95,
            iab: 0.02,
            chi: 0.01,
            delta: 0.0,
            insecure: false,
            seed: 3,
        };
        write_key(dir.path(), "key", &[1, 0, 1, 0, 1, 0, 1, 0], &side).unwrap();
        assert_eq!(std::fs::read(dir.path().join("key.bin")).unwrap(), vec![0xAA]);
        let json: KeySidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("key.json")).unwrap()).unwrap();
        assert_eq!(json, side);
    }
}

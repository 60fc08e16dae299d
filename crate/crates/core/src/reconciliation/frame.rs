//! One-frame reverse reconciliation with a disclosed syndrome.
//!
//! Bob draws uniformly random reference bits, publishes their syndrome, the
//! values of the shortened positions, and one rotation message per group of `d`
//! samples. Alice turns the messages into LLRs and decodes towards the syndrome.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::code::CodeSpec;
use super::decoder::{decode, leak_bits, DEFAULT_MAX_ITER, SATURATED_LLR};
use super::multidim::{bits_to_point, multidim_map, virtual_llrs};
use super::rate::{effective_rate, RateAdaptConfig, Slot};
use super::ReconciliationResult;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconcileOptions {
    pub dimension: usize,
    pub max_iter: usize,
    /// Amplitude gain in `bob = gain·alice + noise`.
    pub gain: f64,
    /// Variance of the additive noise in Bob's values.
    pub noise_var: f64,
}

impl ReconcileOptions {
    pub fn new(gain: f64, noise_var: f64) -> Self {
        ReconcileOptions {
            dimension: 8,
            max_iter: DEFAULT_MAX_ITER,
            gain,
            noise_var,
        }
    }
}

/// Bob's reference bits for a frame seed.
pub fn reference_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = stream_rng(seed, Stream::CodeBits);
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

pub fn reconcile_frame(
    alice_values: &[f64],
    bob_values: &[f64],
    code: &CodeSpec,
    adapt: &RateAdaptConfig,
    opts: &ReconcileOptions,
    seed: u64,
) -> Result<ReconciliationResult> {
    let n = code.n_bits;
    let d = opts.dimension;
    if alice_values.len() != bob_values.len() {
        return Err(Error::LengthMismatch {
            expected: bob_values.len(),
            actual: alice_values.len(),
        });
    }
    if bob_values.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: bob_values.len(),
        });
    }
    if d == 0 || !n.is_multiple_of(d) {
        return Err(invalid("dimension", format!("{d} does not divide n = {n}")));
    }
    if !(opts.noise_var > 0.0 && opts.gain > 0.0) {
        return Err(invalid("channel", "gain and noise variance must be > 0"));
    }
    effective_rate(code, adapt)?;

    // Bob
    let u = reference_bits(n, seed);
    let syndrome = code.syndrome(&u);
    let messages = bob_values
        .chunks(d)
        .zip(u.chunks(d))
        .map(|(y, bits)| multidim_map(y, &bits_to_point(bits)))
        .collect::<Result<Vec<_>>>()?;

    // Alice
    let mut llrs = Vec::with_capacity(n);
    for (x, m) in alice_values.chunks(d).zip(&messages) {
        llrs.extend(virtual_llrs(x, m, opts.gain, opts.noise_var)?);
    }
    for (i, slot) in adapt.mask(n).into_iter().enumerate() {
        match slot {
            Slot::Transmitted => {}
            Slot::Punctured => llrs[i] = 0.0,
            Slot::Shortened => llrs[i] = if u[i] == 0 { SATURATED_LLR } else { -SATURATED_LLR },
        }
    }
    let out = decode(&llrs, code, Some(&syndrome), opts.max_iter);
    let matches = out.converged && out.bits == u;
    Ok(ReconciliationResult {
        success: matches,
        corrected_bits: matches.then_some(out.bits),
        iterations: out.iterations,
        syndrome_leak_bits: leak_bits(code, adapt),
        verification_failed: out.converged && !matches,
    })
}

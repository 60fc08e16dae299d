//! Log-domain sum-product decoding with a target syndrome.

use super::code::CodeSpec;
use super::rate::RateAdaptConfig;
use super::ReconciliationResult;

/// Check-to-variable messages are clipped to this magnitude.
pub const LLR_CLIP: f64 = 30.0;
/// Channel LLR given to shortened (publicly known) bits.
pub const SATURATED_LLR: f64 = 1e3;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    /// Hard decisions satisfy the target syndrome and none is undetermined.
    pub converged: bool,
    pub bits: Vec<u8>,
    pub iterations: usize,
}

/// Sum-product decoding of `llrs` (positive favours 0) towards `syndrome`
/// (all zero when `None`). Stops as soon as the hard decisions satisfy every
/// check. A bit whose posterior LLR is exactly zero counts as undetermined.
pub fn decode(llrs: &[f64], code: &CodeSpec, syndrome: Option<&[u8]>, max_iter: usize) -> DecodeOutcome {
    assert_eq!(llrs.len(), code.n_bits, "llr length must equal the block length");
    let n = code.n_bits;
    let m = code.n_checks();
    let mut row_start = Vec::with_capacity(m + 1);
    let mut edge_var = Vec::with_capacity(code.n_edges());
    row_start.push(0);
    for row in &code.rows {
        edge_var.extend(row.iter().map(|&v| v as usize));
        row_start.push(edge_var.len());
    }
    let mut var_start = vec![0usize; n + 1];
    for &v in &edge_var {
        var_start[v + 1] += 1;
    }
    for v in 0..n {
        var_start[v + 1] += var_start[v];
    }
    let mut var_edges = vec![0usize; edge_var.len()];
    let mut fill = var_start.clone();
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[fill[v]] = e;
        fill[v] += 1;
    }
    let flip: Vec<bool> = match syndrome {
        Some(s) => s.iter().map(|&b| b == 1).collect(),
        None => vec![false; m],
    };

    // tanh(v2c / 2) per edge; edges of degree-one variables never change.
    let mut th: Vec<f64> = edge_var.iter().map(|&v| (0.5 * llrs[v]).tanh()).collect();
    let mut c2v = vec![0.0; edge_var.len()];
    let mut total = llrs.to_vec();
    let mut bits = vec![0u8; n];

    let satisfied = |total: &[f64], bits: &mut [u8]| -> bool {
        let mut undetermined = false;
        for (b, &t) in bits.iter_mut().zip(total) {
            *b = (t < 0.0) as u8;
            undetermined |= t == 0.0;
        }
        !undetermined
            && (0..m).all(|c| {
                let parity = edge_var[row_start[c]..row_start[c + 1]]
                    .iter()
                    .fold(0u8, |acc, &v| acc ^ bits[v]);
                (parity == 1) == flip[c]
            })
    };

    if satisfied(&total, &mut bits) {
        return DecodeOutcome {
            converged: true,
            bits,
            iterations: 0,
        };
    }

    for iter in 1..=max_iter {
        for c in 0..m {
            let (s, e) = (row_start[c], row_start[c + 1]);
            let t = &th[s..e];
            // leave-one-out products via a forward and a backward pass
            let mut fwd = 1.0;
            for (k, out) in c2v[s..e].iter_mut().enumerate() {
                *out = fwd;
                fwd *= t[k];
            }
            let mut bwd = 1.0;
            for k in (0..e - s).rev() {
                let prod = c2v[s + k] * bwd;
                bwd *= t[k];
                let mut msg = 2.0 * prod.atanh();
                if flip[c] {
                    msg = -msg;
                }
                c2v[s + k] = msg.clamp(-LLR_CLIP, LLR_CLIP);
            }
        }
        for v in 0..n {
            let edges = &var_edges[var_start[v]..var_start[v + 1]];
            let sum: f64 = llrs[v] + edges.iter().map(|&e| c2v[e]).sum::<f64>();
            total[v] = sum;
            if edges.len() > 1 {
                for &e in edges {
                    th[e] = (0.5 * (sum - c2v[e])).tanh();
                }
            }
        }
        if satisfied(&total, &mut bits) {
            return DecodeOutcome {
                converged: true,
                bits,
                iterations: iter,
            };
        }
    }
    DecodeOutcome {
        converged: false,
        bits,
        iterations: max_iter,
    }
}

/// Decodes towards a codeword (zero syndrome). Punctured positions are expected
/// to carry LLR 0 and shortened positions a saturated LLR; `adapt` enters the
/// leakage count `(n − k) + s`.
pub fn bp_decode(llrs: &[f64], code: &CodeSpec, adapt: &RateAdaptConfig, max_iter: usize) -> ReconciliationResult {
    let out = decode(llrs, code, None, max_iter);
    ReconciliationResult {
        success: out.converged,
        corrected_bits: out.converged.then_some(out.bits),
        iterations: out.iterations,
        syndrome_leak_bits: leak_bits(code, adapt),
        verification_failed: false,
    }
}

pub fn leak_bits(code: &CodeSpec, adapt: &RateAdaptConfig) -> usize {
    (code.n_bits - code.k_bits) + adapt.shortened.len()
}

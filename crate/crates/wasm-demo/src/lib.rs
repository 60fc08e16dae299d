//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string.

use std::sync::OnceLock;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cvqkd_core::config::RunConfig;
use cvqkd_core::keyrate::{loss_grid, mutual_information, sweep};
use cvqkd_core::privacy::{pack_bits, toeplitz_hash, unpack_bits, ToeplitzSpec};
use cvqkd_core::reconciliation::rate::counts_for_rate;
use cvqkd_core::reconciliation::{build_met_code, efficiency, CodeSpec, Ensemble};
use cvqkd_core::rng::{derive, Stream};

pub const DEMO_CODE_N: usize = 10_000;

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurvePoint {
    loss_db: f64,
    length_km: f64,
    k_asym_bps: f64,
    k_finite_bps: f64,
}

/// Key rate against loss for the Xi'an preset with the given overrides.
pub fn rate_curve(xi: f64, beta: f64, fer: f64, log10_block: f64, max_loss_db: f64, step_db: f64) -> Result<String, String> {
    let mut cfg = RunConfig::preset("xian").map_err(|e| e.to_string())?;
    cfg.system.channel.excess_noise_snu = xi;
    cfg.beta = beta;
    cfg.fer = fer;
    cfg.block_size = 10f64.powf(log10_block);
    cfg.validate().map_err(|e| e.to_string())?;
    let losses = loss_grid(0.0, max_loss_db, step_db).map_err(|e| e.to_string())?;
    let points = sweep(&cfg.rate_model(), &losses, cfg.system.channel.atten_db_per_km).map_err(|e| e.to_string())?;
    to_json(
        &points
            .iter()
            .map(|p| CurvePoint {
                loss_db: p.loss_db,
                length_km: p.length_km,
                k_asym_bps: p.k_asymptotic_bps,
                k_finite_bps: p.k_finite_bps,
            })
            .collect::<Vec<_>>(),
    )
}

fn demo_code() -> Result<&'static CodeSpec, String> {
    static CODE: OnceLock<Result<CodeSpec, String>> = OnceLock::new();
    CODE.get_or_init(|| {
        build_met_code(&Ensemble::met_rate_002(), DEMO_CODE_N, derive(1, Stream::Construction as u64))
            .map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(Clone::clone)
}

#[derive(Serialize)]
struct EfficiencyPoint {
    snr: f64,
    capacity: f64,
    beta_fixed: f64,
    beta_adapted: f64,
    punctured: usize,
    shortened: usize,
}

/// Efficiency of the rate-0.02 demo code over an SNR range, used as is and
/// with puncturing or shortening chosen to hit `target_beta`.
pub fn efficiency_curve(snr_lo: f64, snr_hi: f64, points: usize, target_beta: f64) -> Result<String, String> {
    if !(snr_lo > 0.0 && snr_hi > snr_lo && points >= 2) {
        return Err("need 0 < snr_lo < snr_hi and at least two points".into());
    }
    let code = demo_code()?;
    let mother = code.mother_rate();
    let out = (0..points)
        .map(|i| {
            let snr = snr_lo + (snr_hi - snr_lo) * i as f64 / (points - 1) as f64;
            let capacity = mutual_information(snr);
            let (p, s) = counts_for_rate(code, target_beta * capacity).map_err(|e| e.to_string())?;
            let rate = (code.k_bits - s) as f64 / (code.n_bits - p - s) as f64;
            Ok(EfficiencyPoint {
                snr,
                capacity,
                beta_fixed: efficiency(mother, snr).map_err(|e| e.to_string())?,
                beta_adapted: efficiency(rate, snr).map_err(|e| e.to_string())?,
                punctured: p,
                shortened: s,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    to_json(&out)
}

#[derive(Serialize)]
struct HashOutput {
    in_bits: usize,
    out_bits: usize,
    hex: String,
}

/// Toeplitz-hashes the bits of `hex_in` down to `out_bits` with a seeded matrix.
pub fn privacy_amplify(hex_in: &str, out_bits: usize, seed: u64) -> Result<String, String> {
    let clean: String = hex_in.chars().filter(|c| !c.is_whitespace()).collect();
    if clean.is_empty() || !clean.len().is_multiple_of(2) {
        return Err("input must be a non-empty, even-length hex string".into());
    }
    let bytes = (0..clean.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&clean[i..i + 2], 16).map_err(|e| format!("bad hex at {i}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let n = bytes.len() * 8;
    let bits = unpack_bits(&bytes, n).map_err(|e| e.to_string())?;
    let spec = ToeplitzSpec::from_seed(n, out_bits, derive(seed, Stream::Privacy as u64)).map_err(|e| e.to_string())?;
    let hashed = toeplitz_hash(&bits, &spec).map_err(|e| e.to_string())?;
    to_json(&HashOutput {
        in_bits: n,
        out_bits,
        hex: pack_bits(&hashed).iter().map(|b| format!("{b:02x}")).collect(),
    })
}

#[wasm_bindgen(js_name = rateCurve)]
pub fn rate_curve_js(xi: f64, beta: f64, fer: f64, log10_block: f64, max_loss_db: f64, step_db: f64) -> Result<String, JsError> {
    rate_curve(xi, beta, fer, log10_block, max_loss_db, step_db).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = efficiencyCurve)]
pub fn efficiency_curve_js(snr_lo: f64, snr_hi: f64, points: usize, target_beta: f64) -> Result<String, JsError> {
    efficiency_curve(snr_lo, snr_hi, points, target_beta).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = privacyAmplify)]
pub fn privacy_amplify_js(hex_in: &str, out_bits: usize, seed: u64) -> Result<String, JsError> {
    privacy_amplify(hex_in, out_bits, seed).map_err(|e| JsError::new(&e))
}

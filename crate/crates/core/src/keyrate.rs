//! Security math: mutual information, the Holevo bound for the Gaussian channel
//! with a trusted homodyne receiver, the finite-size penalty, the composite key
//! rate and the loss sweep.
//!
//! Reverse reconciliation is assumed throughout: Eve's information is bounded by
//! `χ(B:E)`, conditioned on Bob's measurement.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::link::{snr_from, transmittance, DetectorParams};
use crate::postproc::{expected_bounds, ExpectedBounds};

/// Tolerance below one accepted on symplectic eigenvalues before declaring the
/// covariance model unphysical.
pub const EIGEN_TOL: f64 = 1e-9;

/// How the detector noise is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverModel {
    /// Detector inefficiency and electronic noise are out of Eve's reach.
    #[default]
    Trusted,
    /// All noise is attributed to Eve.
    Paranoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    #[default]
    Asymptotic,
    Finite,
}

/// Von Neumann entropy of a thermal mode with mean photon number `x`:
/// `(x+1)·log2(x+1) − x·log2(x)`.
pub fn g_entropy(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (x + 1.0) * (x + 1.0).log2() - x * x.log2()
    }
}

fn entropy_of(nu: f64) -> Result<f64> {
    if nu < 1.0 - EIGEN_TOL || !nu.is_finite() {
        return Err(Error::ModelViolation(format!(
            "symplectic eigenvalue {nu} below 1"
        )));
    }
    Ok(g_entropy((nu - 1.0) / 2.0))
}

/// `0.5·log2(1 + snr)` bits per pulse (homodyne, one quadrature).
pub fn mutual_information(snr: f64) -> f64 {
    0.5 * (1.0 + snr.max(0.0)).log2()
}

/// Symplectic eigenvalues entering the Holevo bound: `[λ1, λ2]` of Eve's state
/// and `[λ3, λ4]` of her state conditioned on Bob's homodyne outcome.
pub fn symplectic_eigenvalues(va: f64, t: f64, xi: f64, eta: f64, v_el: f64) -> Result<[f64; 4]> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid("transmittance", format!("{t} not in (0, 1]")));
    }
    if !(va >= 0.0 && xi >= 0.0 && v_el >= 0.0 && eta > 0.0 && eta <= 1.0) {
        return Err(invalid("holevo inputs", "out of range"));
    }
    let v = va + 1.0;
    let chi_line = (1.0 - t) / t + xi;
    let chi_hom = (1.0 + v_el) / eta - 1.0;
    let chi_tot = chi_line + chi_hom / t;

    let a = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line).powi(2);
    let b = t * t * (v * chi_line + 1.0).powi(2);
    let (l1, l2) = eigen_pair(a, b);

    let sqrt_b = b.sqrt();
    let denom = t * (v + chi_tot);
    let c = (a * chi_hom + v * sqrt_b + t * (v + chi_line)) / denom;
    let d = sqrt_b * (v + sqrt_b * chi_hom) / denom;
    let (l3, l4) = eigen_pair(c, d);
    Ok([l1, l2, l3, l4])
}

/// Roots of `λ⁴ − a·λ² + b`, largest first; the smaller uses `λ1·λ2 = √b`.
fn eigen_pair(a: f64, b: f64) -> (f64, f64) {
    let disc = (a * a - 4.0 * b).max(0.0).sqrt();
    let l1 = ((a + disc) / 2.0).sqrt();
    let l2 = if l1 > 0.0 { b.sqrt() / l1 } else { 0.0 };
    (l1, l2)
}

/// Holevo information `χ(B:E)` in bits per pulse.
pub fn holevo_bound(va: f64, t: f64, xi: f64, eta: f64, v_el: f64) -> Result<f64> {
    let [l1, l2, l3, l4] = symplectic_eigenvalues(va, t, xi, eta, v_el)?;
    let chi = entropy_of(l1)? + entropy_of(l2)? - entropy_of(l3)? - entropy_of(l4)?;
    Ok(chi.max(0.0))
}

/// Holevo bound under the chosen receiver model.
pub fn holevo_bound_model(
    va: f64,
    t: f64,
    xi: f64,
    detector: &DetectorParams,
    model: ReceiverModel,
) -> Result<f64> {
    match model {
        ReceiverModel::Trusted => holevo_bound(va, t, xi, detector.efficiency, detector.electronic_noise_snu),
        ReceiverModel::Paranoid => {
            // Fold the detector into the channel: T' = ηT and the same total
            // input-referred noise.
            let eta_t = detector.efficiency * t;
            let xi_eff = xi + detector.electronic_noise_snu / eta_t;
            holevo_bound(va, eta_t, xi_eff, 1.0, 0.0)
        }
    }
}

/// Finite-size penalty `7·sqrt(log2(2/ε̄)/n)`.
pub fn delta_n(n: f64, eps_bar: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(invalid("n", format!("{n} must be >= 1")));
    }
    if !(eps_bar > 0.0 && eps_bar < 1.0) {
        return Err(invalid("eps_bar", format!("{eps_bar} not in (0, 1)")));
    }
    Ok(7.0 * ((2.0 / eps_bar).log2() / n).sqrt())
}

/// `f·(1−α)·(1−FER)·max(0, β·I − χ − Δ)`; the flag is set when the bracket is
/// not positive.
pub fn composite_rate(f_hz: f64, alpha: f64, fer: f64, beta: f64, iab: f64, chi: f64, delta: f64) -> (f64, bool) {
    let per_pulse = beta * iab - chi - delta;
    if per_pulse <= 0.0 {
        (0.0, true)
    } else {
        (f_hz * (1.0 - alpha) * (1.0 - fer) * per_pulse, false)
    }
}

/// Everything except the modulation variance and the transmittance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub excess_noise_snu: f64,
    pub detector: DetectorParams,
    pub beta: f64,
    pub fer: f64,
    pub overhead: f64,
    pub rep_rate_hz: f64,
    /// Samples per session, all used for both estimation and key (swapped order).
    pub block_size: f64,
    pub eps_pe: f64,
    pub eps_bar: f64,
    pub receiver: ReceiverModel,
}

impl RateModel {
    pub const DEFAULT_BLOCK_SIZE: f64 = 1e9;
    pub const DEFAULT_EPS: f64 = 1e-10;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta", format!("{} not in [0, 1]", self.beta)));
        }
        if !(0.0..1.0).contains(&self.fer) {
            return Err(invalid("fer", format!("{} not in [0, 1)", self.fer)));
        }
        if !(0.0..1.0).contains(&self.overhead) {
            return Err(invalid("overhead", format!("{} not in [0, 1)", self.overhead)));
        }
        if !(self.rep_rate_hz > 0.0) {
            return Err(invalid("rep_rate_hz", "must be > 0"));
        }
        if !(self.excess_noise_snu >= 0.0) {
            return Err(invalid("excess_noise_snu", "must be >= 0"));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub iab: f64,
    pub chi_be: f64,
    /// χ evaluated at the worst-case channel parameters.
    pub chi_be_finite: f64,
    pub delta_n: f64,
    pub beta: f64,
    pub fer: f64,
    pub alpha: f64,
    pub f_hz: f64,
    pub k_asymptotic_bps: f64,
    pub k_finite_bps: f64,
    pub insecure_asymptotic: bool,
    pub insecure_finite: bool,
    pub va: f64,
    pub transmittance: f64,
    pub xi: f64,
    pub eta: f64,
    pub v_el: f64,
    pub n: f64,
    pub eps_pe: f64,
    pub eps_bar: f64,
    /// Worst-case transmittance used by the finite-size figure.
    pub transmittance_low: f64,
    pub xi_high: f64,
    pub receiver: ReceiverModel,
}

impl KeyRateReport {
    pub fn rate(&self, mode: RateMode) -> f64 {
        match mode {
            RateMode::Asymptotic => self.k_asymptotic_bps,
            RateMode::Finite => self.k_finite_bps,
        }
    }
}

/// Key rate from point values `(t_hat, xi_hat)` for the asymptotic figure and
/// from worst-case values `(T_low, xi_high)` for the finite-size figure.
pub fn rate_from_bounds(
    model: &RateModel,
    va: f64,
    t: f64,
    xi: f64,
    worst: Option<(f64, f64)>,
) -> Result<KeyRateReport> {
    model.validate()?;
    let det = model.detector;
    let snr = snr_from(va, t, xi, det.efficiency, det.electronic_noise_snu);
    let iab = mutual_information(snr);
    let chi = holevo_bound_model(va, t, xi, &det, model.receiver)?;
    let (k_asym, insecure_asym) = composite_rate(model.rep_rate_hz, model.overhead, model.fer, model.beta, iab, chi, 0.0);

    let (t_low, xi_high, chi_fin, delta, k_fin, insecure_fin) = match worst {
        Some((t_low, xi_high)) => {
            let delta = delta_n(model.block_size, model.eps_bar)?;
            // A worst-case transmittance at or below zero leaves no key at all.
            let chi_fin = if t_low > 0.0 {
                Some(holevo_bound_model(va, t_low.min(1.0), xi_high, &det, model.receiver)?)
            } else {
                None
            };
            let (k, insecure) = match chi_fin {
                Some(c) => composite_rate(model.rep_rate_hz, model.overhead, model.fer, model.beta, iab, c, delta),
                None => (0.0, true),
            };
            (t_low, xi_high, chi_fin.unwrap_or(f64::INFINITY), delta, k, insecure)
        }
        None => (t, xi, chi, 0.0, k_asym, insecure_asym),
    };

    Ok(KeyRateReport {
        iab,
        chi_be: chi,
        chi_be_finite: chi_fin,
        delta_n: delta,
        beta: model.beta,
        fer: model.fer,
        alpha: model.overhead,
        f_hz: model.rep_rate_hz,
        k_asymptotic_bps: k_asym,
        k_finite_bps: k_fin.min(k_asym),
        insecure_asymptotic: insecure_asym,
        insecure_finite: insecure_fin,
        va,
        transmittance: t,
        xi,
        eta: det.efficiency,
        v_el: det.electronic_noise_snu,
        n: model.block_size,
        eps_pe: model.eps_pe,
        eps_bar: model.eps_bar,
        transmittance_low: t_low,
        xi_high,
        receiver: model.receiver,
    })
}

/// Key rate for a channel known exactly; the finite-size figure uses the
/// worst-case bounds an estimator over `block_size` samples would report.
pub fn secret_key_rate(model: &RateModel, va: f64, t: f64) -> Result<KeyRateReport> {
    let ExpectedBounds { transmittance_low, xi_high } = expected_bounds(
        va,
        t,
        model.excess_noise_snu,
        &model.detector,
        model.block_size,
        model.eps_pe,
    )?;
    rate_from_bounds(model, va, t, model.excess_noise_snu, Some((transmittance_low, xi_high)))
}

pub const VA_MIN: f64 = 0.01;
pub const VA_MAX: f64 = 100.0;
const VA_TOL: f64 = 1e-3;
const VA_GRID: usize = 61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaOptimum {
    pub va: f64,
    pub rate_bps: f64,
    /// Set when the rate is zero over the whole search range.
    pub all_zero: bool,
}

/// Maximizes the key rate over `V_A ∈ [0.01, 100]`.
///
/// The objective is zero on both ends of the range, which defeats a bare
/// golden-section search, so a log-spaced grid first brackets the maximum and
/// golden-section then refines inside the bracket to `1e-3` SNU.
pub fn optimize_va(model: &RateModel, loss_db: f64, mode: RateMode) -> Result<VaOptimum> {
    let t = transmittance(loss_db)?;
    let objective = |va: f64| -> Result<f64> { Ok(secret_key_rate(model, va, t)?.rate(mode)) };

    let grid: Vec<f64> = (0..VA_GRID)
        .map(|i| VA_MIN * (VA_MAX / VA_MIN).powf(i as f64 / (VA_GRID - 1) as f64))
        .collect();
    let values = grid.iter().map(|&v| objective(v)).collect::<Result<Vec<_>>>()?;
    let (best, &best_val) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    if best_val <= 0.0 {
        return Ok(VaOptimum {
            va: VA_MIN,
            rate_bps: 0.0,
            all_zero: true,
        });
    }
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(VA_GRID - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while hi - lo > VA_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1)?;
        }
    }
    let va = 0.5 * (lo + hi);
    let rate = objective(va)?;
    // Never report worse than the best grid point.
    if rate >= best_val {
        Ok(VaOptimum {
            va,
            rate_bps: rate,
            all_zero: false,
        })
    } else {
        Ok(VaOptimum {
            va: grid[best],
            rate_bps: best_val,
            all_zero: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub loss_db: f64,
    pub length_km: f64,
    pub va_asymptotic: f64,
    pub k_asymptotic_bps: f64,
    pub va_finite: f64,
    pub k_finite_bps: f64,
}

/// Key rate against loss, re-optimizing `V_A` per point and per mode.
pub fn sweep(model: &RateModel, losses_db: &[f64], atten_db_per_km: f64) -> Result<Vec<SweepPoint>> {
    if losses_db.is_empty() {
        return Err(invalid("losses_db", "empty loss range"));
    }
    let point = |&loss: &f64| -> Result<SweepPoint> {
        let asym = optimize_va(model, loss, RateMode::Asymptotic)?;
        let fin = optimize_va(model, loss, RateMode::Finite)?;
        Ok(SweepPoint {
            loss_db: loss,
            length_km: if atten_db_per_km > 0.0 { loss / atten_db_per_km } else { f64::NAN },
            va_asymptotic: asym.va,
            k_asymptotic_bps: asym.rate_bps,
            va_finite: fin.va,
            k_finite_bps: fin.rate_bps,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        losses_db.par_iter().map(point).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        losses_db.iter().map(point).collect()
    }
}

/// Evenly spaced losses from `start` to `end` inclusive.
pub fn loss_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(invalid("loss range", format!("{start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint], provenance: &str) -> Result<()> {
    writeln!(w, "# {provenance}")?;
    writeln!(w, "loss_db,length_km,k_asym_bps,k_finite_bps")?;
    for p in points {
        writeln!(
            w,
            "{:.4},{:.4},{:.6},{:.6}",
            p.loss_db, p.length_km, p.k_asymptotic_bps, p.k_finite_bps
        )?;
    }
    Ok(())
}

//! Sifting, channel parameter estimation and finite-size worst-case bounds, plus
//! the session driver that reconciles before estimating.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::link::DetectorParams;
use crate::optical::{rotate, AliceFrame, Basis, BobFrame, SlotRole};
use crate::reconciliation::{reconcile_frame, CodeSpec, RateAdaptConfig, ReconcileOptions};
use crate::rng::derive;

/// Smallest sample count for which the normal approximation is accepted.
pub const MIN_ESTIMATION_SAMPLES: usize = 1000;
pub const DEFAULT_EPS_PE: f64 = 1e-10;

/// Which signal slots survive sifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SiftPolicy {
    /// Alice keeps whichever quadrature Bob measured; every signal slot is kept.
    #[default]
    AllSignal,
    /// Only slots where Bob measured the given quadrature are kept.
    SingleQuadrature(Basis),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiftedBlock {
    pub alice: Vec<f64>,
    pub bob: Vec<f64>,
}

impl SiftedBlock {
    pub fn new(alice: Vec<f64>, bob: Vec<f64>) -> Result<Self> {
        if alice.len() != bob.len() {
            return Err(Error::LengthMismatch {
                expected: alice.len(),
                actual: bob.len(),
            });
        }
        Ok(SiftedBlock { alice, bob })
    }

    pub fn n(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn extend(&mut self, other: &SiftedBlock) {
        self.alice.extend_from_slice(&other.alice);
        self.bob.extend_from_slice(&other.bob);
    }
}

pub fn sift(alice: &AliceFrame, bob: &BobFrame) -> Result<SiftedBlock> {
    sift_with(alice, bob, SiftPolicy::AllSignal)
}

/// Pairs each kept outcome with Alice's quadrature in Bob's declared reference
/// frame (her `(x, p)` rotated by `phase_ref_rad`).
pub fn sift_with(alice: &AliceFrame, bob: &BobFrame, policy: SiftPolicy) -> Result<SiftedBlock> {
    if alice.frame_id != bob.frame_id {
        return Err(Error::FrameMismatch {
            alice: alice.frame_id,
            bob: bob.frame_id,
        });
    }
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch {
            expected: alice.len(),
            actual: bob.len(),
        });
    }
    let mut block = SiftedBlock::default();
    for i in 0..alice.len() {
        if alice.roles[i] != SlotRole::Signal || bob.roles[i] != SlotRole::Signal {
            continue;
        }
        let basis = bob.bases[i];
        if let SiftPolicy::SingleQuadrature(keep) = policy {
            if basis != keep {
                continue;
            }
        }
        let (x, p) = rotate(alice.x[i], alice.p[i], bob.phase_ref_rad);
        block.alice.push(match basis {
            Basis::X => x,
            Basis::P => p,
        });
        block.bob.push(bob.measurements[i]);
    }
    Ok(block)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// Estimated amplitude gain `√(ηT)`.
    pub t_hat: f64,
    /// Estimated conditional noise variance of Bob's outcome.
    pub sigma2_hat: f64,
    pub transmittance_hat: f64,
    /// Excess noise clamped at zero.
    pub xi_hat: f64,
    /// Excess noise as computed, possibly negative.
    pub xi_hat_raw: f64,
    pub xi_clamped: bool,
    pub n_used: usize,
    pub modulation_variance: f64,
    pub t_low: f64,
    pub sigma2_high: f64,
    pub xi_high: f64,
    pub eps_pe: f64,
}

impl ChannelEstimate {
    /// Transmittance fed to the key-rate model, clamped into `(0, 1]`.
    pub fn transmittance_for_keyrate(&self) -> f64 {
        self.transmittance_hat.clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// Worst-case transmittance `t_low²/η`; zero when `t_low ≤ 0`.
    pub fn transmittance_low(&self, detector: &DetectorParams) -> f64 {
        if self.t_low > 0.0 {
            (self.t_low * self.t_low / detector.efficiency).min(1.0)
        } else {
            0.0
        }
    }
}

/// Least-squares gain and residual variance of `b` against `a`, with
/// worst-case bounds at the default `eps_pe`.
pub fn estimate_channel(block: &SiftedBlock, detector: &DetectorParams, va: f64) -> Result<ChannelEstimate> {
    estimate_channel_eps(block, detector, va, DEFAULT_EPS_PE)
}

pub fn estimate_channel_eps(
    block: &SiftedBlock,
    detector: &DetectorParams,
    va: f64,
    eps_pe: f64,
) -> Result<ChannelEstimate> {
    detector.validate()?;
    let n = block.n();
    if n < MIN_ESTIMATION_SAMPLES {
        return Err(invalid(
            "n",
            format!("{n} samples, need at least {MIN_ESTIMATION_SAMPLES}"),
        ));
    }
    if !(va > 0.0) {
        return Err(invalid("modulation_variance", "must be > 0"));
    }
    let (mut saa, mut sab) = (0.0, 0.0);
    for (a, b) in block.alice.iter().zip(&block.bob) {
        saa += a * a;
        sab += a * b;
    }
    if saa == 0.0 {
        return Err(Error::Degenerate("Alice's values are all zero".into()));
    }
    let t_hat = sab / saa;
    let sigma2_hat = block
        .alice
        .iter()
        .zip(&block.bob)
        .map(|(a, b)| (b - t_hat * a).powi(2))
        .sum::<f64>()
        / n as f64;
    let transmittance_hat = t_hat * t_hat / detector.efficiency;
    let xi_hat_raw = excess_noise(sigma2_hat, t_hat, detector);
    let mut est = ChannelEstimate {
        t_hat,
        sigma2_hat,
        transmittance_hat,
        xi_hat: xi_hat_raw.max(0.0),
        xi_hat_raw,
        xi_clamped: xi_hat_raw < 0.0,
        n_used: n,
        modulation_variance: va,
        t_low: t_hat,
        sigma2_high: sigma2_hat,
        xi_high: xi_hat_raw.max(0.0),
        eps_pe,
    };
    let (t_low, xi_high) = worst_case_bounds(&est, detector, eps_pe)?;
    est.t_low = t_low;
    est.sigma2_high = sigma2_hat * (1.0 + normal_quantile(1.0 - eps_pe / 2.0)? * (2.0 / n as f64).sqrt());
    est.xi_high = xi_high;
    Ok(est)
}

/// `(σ² − 1 − v_el)/t²`, the input-referred excess noise.
fn excess_noise(sigma2: f64, t: f64, detector: &DetectorParams) -> f64 {
    (sigma2 - 1.0 - detector.electronic_noise_snu) / (t * t)
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("{p} not in (0, 1)")));
    }
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(n.inverse_cdf(p))
}

/// `(t_low, xi_high)` at confidence `1 − eps_pe` per parameter.
///
/// `t_low` is an amplitude gain; `xi_high` is evaluated with `t_low` and the
/// inflated noise variance and is never below the clamped point estimate.
pub fn worst_case_bounds(est: &ChannelEstimate, detector: &DetectorParams, eps_pe: f64) -> Result<(f64, f64)> {
    if !(eps_pe > 0.0 && eps_pe < 1.0) {
        return Err(invalid("eps_pe", format!("{eps_pe} not in (0, 1)")));
    }
    if est.n_used < MIN_ESTIMATION_SAMPLES {
        return Err(invalid(
            "n",
            format!("{} samples, need at least {MIN_ESTIMATION_SAMPLES}", est.n_used),
        ));
    }
    let (t_low, sigma2_high) = bounds_from_moments(
        est.t_hat,
        est.sigma2_hat,
        est.modulation_variance,
        est.n_used as f64,
        eps_pe,
    )?;
    let xi_high = if t_low > 0.0 {
        excess_noise(sigma2_high, t_low, detector).max(est.xi_hat)
    } else {
        f64::INFINITY
    };
    Ok((t_low, xi_high))
}

fn bounds_from_moments(t: f64, sigma2: f64, va: f64, n: f64, eps_pe: f64) -> Result<(f64, f64)> {
    let z = normal_quantile(1.0 - eps_pe / 2.0)?;
    let t_low = t - z * (sigma2 / (n * va)).sqrt();
    let sigma2_high = sigma2 * (1.0 + z * (2.0 / n).sqrt());
    Ok((t_low, sigma2_high))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedBounds {
    pub transmittance_low: f64,
    pub xi_high: f64,
}

/// Bounds an estimator over `n` samples reports when its point estimates land
/// exactly on the true channel. Used for analytic finite-size key rates.
pub fn expected_bounds(
    va: f64,
    t: f64,
    xi: f64,
    detector: &DetectorParams,
    n: f64,
    eps_pe: f64,
) -> Result<ExpectedBounds> {
    if !(n >= MIN_ESTIMATION_SAMPLES as f64) {
        return Err(invalid("n", format!("{n} samples, need at least {MIN_ESTIMATION_SAMPLES}")));
    }
    let gain = (detector.efficiency * t).sqrt();
    let sigma2 = 1.0 + detector.electronic_noise_snu + detector.efficiency * t * xi;
    let (t_low, sigma2_high) = bounds_from_moments(gain, sigma2, va, n, eps_pe)?;
    if t_low <= 0.0 {
        return Ok(ExpectedBounds {
            transmittance_low: 0.0,
            xi_high: f64::INFINITY,
        });
    }
    Ok(ExpectedBounds {
        transmittance_low: t_low * t_low / detector.efficiency,
        xi_high: excess_noise(sigma2_high, t_low, detector).max(xi),
    })
}

/// Order of parameter estimation and reconciliation within a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SessionOrder {
    /// Reconcile everything first; every sample feeds the estimate.
    Swapped,
    /// Disclose a fraction of the blocks for estimation, reconcile the rest.
    Legacy { pe_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub n_total: usize,
    pub n_used_pe: usize,
    pub blocks: usize,
    pub blocks_reconciled: usize,
    pub key_blocks: usize,
    pub failed_blocks: usize,
    pub fer_observed: f64,
    /// Key-contributing samples over all samples.
    pub key_fraction: f64,
    pub leak_bits: usize,
    pub estimate: Option<ChannelEstimate>,
    #[serde(skip)]
    pub key_bits: Vec<Vec<u8>>,
}

/// Runs one session over `blocks`, each sized to one code frame.
///
/// In swapped order all blocks are reconciled; decoded blocks yield key bits and,
/// with failed blocks disclosed in the clear, every sample enters estimation.
/// In legacy order the first `pe_fraction` of the blocks is disclosed for
/// estimation and only the remainder is reconciled.
pub fn swapped_order_session(
    blocks: &[SiftedBlock],
    code: &CodeSpec,
    adapt: &RateAdaptConfig,
    opts: &ReconcileOptions,
    detector: &DetectorParams,
    va: f64,
    eps_pe: f64,
    order: SessionOrder,
    seed: u64,
) -> Result<SessionOutcome> {
    let n_total: usize = blocks.iter().map(SiftedBlock::n).sum();
    let n_pe_blocks = match order {
        SessionOrder::Swapped => 0,
        SessionOrder::Legacy { pe_fraction } => {
            if !(0.0..=1.0).contains(&pe_fraction) {
                return Err(invalid("pe_fraction", format!("{pe_fraction} not in [0, 1]")));
            }
            (pe_fraction * blocks.len() as f64).round() as usize
        }
    };
    let to_reconcile = &blocks[n_pe_blocks..];

    let decode = |(i, b): (usize, &SiftedBlock)| {
        reconcile_frame(&b.alice, &b.bob, code, adapt, opts, derive(seed, i as u64))
    };
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        to_reconcile
            .par_iter()
            .enumerate()
            .map(decode)
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results = to_reconcile.iter().enumerate().map(decode).collect::<Result<Vec<_>>>()?;

    let mut key_bits = Vec::new();
    let mut key_samples = 0usize;
    let mut leak = 0usize;
    for (b, r) in to_reconcile.iter().zip(&results) {
        leak += r.syndrome_leak_bits;
        if let Some(bits) = &r.corrected_bits {
            key_bits.push(bits.clone());
            key_samples += b.n();
        }
    }
    let failed = results.len() - key_bits.len();

    let mut pe = SiftedBlock::default();
    match order {
        SessionOrder::Swapped => blocks.iter().for_each(|b| pe.extend(b)),
        SessionOrder::Legacy { .. } => blocks[..n_pe_blocks].iter().for_each(|b| pe.extend(b)),
    }
    let estimate = if pe.n() >= MIN_ESTIMATION_SAMPLES {
        Some(estimate_channel_eps(&pe, detector, va, eps_pe)?)
    } else {
        None
    };

    Ok(SessionOutcome {
        n_total,
        n_used_pe: pe.n(),
        blocks: blocks.len(),
        blocks_reconciled: results.len(),
        key_blocks: key_bits.len(),
        failed_blocks: failed,
        fer_observed: if results.is_empty() {
            0.0
        } else {
            failed as f64 / results.len() as f64
        },
        key_fraction: if n_total == 0 {
            0.0
        } else {
            key_samples as f64 / n_total as f64
        },
        leak_bits: leak,
        estimate,
        key_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn det() -> DetectorParams {
        DetectorParams::new(0.6, 0.1).unwrap()
    }

    fn synthetic(n: usize, va: f64, t: f64, xi: f64, d: &DetectorParams, seed: u64) -> SiftedBlock {
        let mut rng = stream_rng(seed, Stream::Channel);
        let gain = (d.efficiency * t).sqrt();
        let noise = (1.0 + d.electronic_noise_snu + d.efficiency * t * xi).sqrt();
        let mut block = SiftedBlock::default();
        for _ in 0..n {
            let a = va.sqrt() * rng.sample::<f64, _>(StandardNormal);
            block.alice.push(a);
            block.bob.push(gain * a + noise * rng.sample::<f64, _>(StandardNormal));
        }
        block
    }

    fn frames(n: usize, bases: Vec<Basis>, roles: Vec<SlotRole>) -> (AliceFrame, BobFrame) {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let alice = AliceFrame {
            frame_id: 3,
            x,
            p,
            roles: roles.clone(),
        };
        let bob = BobFrame {
            frame_id: 3,
            measurements: vec![0.0; n],
            bases,
            roles,
            phase_ref_rad: 0.0,
        };
        (alice, bob)
    }

    #[test]
    fn sift_all_x_keeps_everything() {
        let (a, b) = frames(100, vec![Basis::X; 100], vec![SlotRole::Signal; 100]);
        let s = sift(&a, &b).unwrap();
        assert_eq!(s.n(), 100);
        assert_eq!(s.alice[7], 7.0);
        let s = sift_with(&a, &b, SiftPolicy::SingleQuadrature(Basis::X)).unwrap();
        assert_eq!(s.n(), 100);
    }

    #[test]
    fn sift_picks_quadrature_and_drops_references() {
        let roles = vec![SlotRole::Reference, SlotRole::Signal, SlotRole::Signal, SlotRole::Signal];
        let (a, b) = frames(4, vec![Basis::X, Basis::P, Basis::X, Basis::P], roles);
        let s = sift(&a, &b).unwrap();
        assert_eq!(s.alice, vec![-1.0, 2.0, -3.0]);
    }

    #[test]
    fn sift_retention_single_quadrature() {
        let n = 1_000_000;
        let layout = crate::calibration::SlotLayout::new(10, 100.0).unwrap();
        let roles: Vec<SlotRole> = (0..n).map(|i| layout.role(i)).collect();
        let bases = crate::optical::draw_bases(&roles, 11);
        let (a, b) = frames(n, bases, roles);
        let s = sift_with(&a, &b, SiftPolicy::SingleQuadrature(Basis::X)).unwrap();
        let frac = s.n() as f64 / n as f64;
        let alpha = layout.overhead();
        assert!(frac >= 0.497 * (1.0 - alpha) && frac <= 0.503 * (1.0 - alpha), "{frac}");
    }

    #[test]
    fn sift_empty_overlap() {
        let (a, b) = frames(4, vec![Basis::P; 4], vec![SlotRole::Signal; 4]);
        let s = sift_with(&a, &b, SiftPolicy::SingleQuadrature(Basis::X)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn sift_rejects_mismatch() {
        let (a, mut b) = frames(4, vec![Basis::X; 4], vec![SlotRole::Signal; 4]);
        b.frame_id = 4;
        assert!(matches!(sift(&a, &b), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn noiseless_half_gain() {
        let alice: Vec<f64> = (0..2000).map(|i| ((i * 37 % 101) as f64) - 50.0).collect();
        let bob = alice.iter().map(|a| 0.5 * a).collect();
        let est = estimate_channel(&SiftedBlock::new(alice, bob).unwrap(), &det(), 1.0).unwrap();
        assert_eq!(est.t_hat, 0.5);
        assert_eq!(est.sigma2_hat, 0.0);
        assert!(est.xi_clamped);
        assert_eq!(est.xi_hat, 0.0);
        assert!(est.xi_hat_raw < 0.0);
    }

    #[test]
    fn estimator_ignores_declared_va() {
        let b = synthetic(5000, 4.0, 0.3, 0.05, &det(), 1);
        let e1 = estimate_channel(&b, &det(), 4.0).unwrap();
        let e2 = estimate_channel(&b, &det(), 40.0).unwrap();
        assert_eq!(e1.t_hat, e2.t_hat);
        assert_eq!(e1.sigma2_hat, e2.sigma2_hat);
        assert_eq!(e1.xi_hat, e2.xi_hat);
    }

    #[test]
    fn estimator_rejects_degenerate() {
        let b = SiftedBlock::new(vec![0.0; 2000], vec![1.0; 2000]).unwrap();
        assert!(matches!(estimate_channel(&b, &det(), 1.0), Err(Error::Degenerate(_))));
        let b = SiftedBlock::new(vec![1.0; 999], vec![1.0; 999]).unwrap();
        assert!(estimate_channel(&b, &det(), 1.0).is_err());
    }

    #[test]
    fn quantile_oracle() {
        assert!((normal_quantile(1.0 - 0.05 / 2.0).unwrap() - 1.959_963_985).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err());
    }

    #[test]
    fn bounds_shrink_with_n() {
        let d = det();
        let t = 10f64.powf(-1.248);
        let mut last = f64::INFINITY;
        for n in [1e6, 1e7, 1e8] {
            let b = expected_bounds(4.0, t, 0.04, &d, n, 1e-10).unwrap();
            let gap = b.xi_high - 0.04;
            assert!(gap > 0.0 && gap < last, "n={n}: {gap}");
            last = gap;
        }
        let b = expected_bounds(4.0, t, 0.04, &d, 1e30, 1e-10).unwrap();
        assert!((b.xi_high - 0.04).abs() < 1e-9);
        assert!((b.transmittance_low - t).abs() < 1e-12);
    }

    #[test]
    fn bounds_reject_bad_inputs() {
        let b = synthetic(2000, 4.0, 0.3, 0.05, &det(), 2);
        let est = estimate_channel(&b, &det(), 4.0).unwrap();
        assert!(worst_case_bounds(&est, &det(), 0.0).is_err());
        assert!(worst_case_bounds(&est, &det(), 1.0).is_err());
        let mut small = est;
        small.n_used = 10;
        assert!(worst_case_bounds(&small, &det(), 0.01).is_err());
        assert!(est.t_low <= est.t_hat && est.xi_high >= est.xi_hat);
    }

    proptest! {
        #[test]
        fn estimate_invariants(seed in 0u64..1000, loss in 0.0f64..20.0, xi in 0.0f64..0.2) {
            let t = 10f64.powf(-loss / 10.0);
            let b = synthetic(2000, 4.0, t, xi, &det(), seed);
            let e = estimate_channel(&b, &det(), 4.0).unwrap();
            prop_assert!(e.t_low <= e.t_hat);
            prop_assert!(e.xi_high >= e.xi_hat);
            prop_assert!(e.xi_hat >= 0.0);
            prop_assert!(e.transmittance_for_keyrate() <= 1.0);
        }
    }
}

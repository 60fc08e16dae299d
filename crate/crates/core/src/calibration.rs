//! Feedback loops for phase, polarization and timing, and the slot layout that
//! sets the system overhead.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::link::SystemParams;
use crate::optical::{
    self, draw_bases, homodyne_measure_with, rotate, wrap_angle, AliceFrame, Basis, BobFrame,
    DetectionNoise, DriftModel, DriftState, SlotRole,
};
use crate::rng::{derive, stream_rng, Stream};

/// Interleaving of phase-reference pulses into the pulse train.
///
/// Every `ref_period`-th pulse (the first of each period) is a reference of
/// amplitude `ref_amplitude` on the X quadrature. `ref_period == 0` means no
/// references at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub ref_period: usize,
    pub ref_amplitude: f64,
}

impl SlotLayout {
    pub const DEFAULT_REF_PERIOD: usize = 2;
    pub const DEFAULT_REF_AMPLITUDE: f64 = 250.0;

    pub fn new(ref_period: usize, ref_amplitude: f64) -> Result<Self> {
        if ref_period < 2 {
            return Err(invalid("ref_period", format!("{ref_period} must be >= 2")));
        }
        if !(ref_amplitude > 0.0 && ref_amplitude.is_finite()) {
            return Err(invalid("ref_amplitude", format!("{ref_amplitude} must be > 0")));
        }
        Ok(SlotLayout {
            ref_period,
            ref_amplitude,
        })
    }

    pub fn signal_only() -> Self {
        SlotLayout {
            ref_period: 0,
            ref_amplitude: 0.0,
        }
    }

    pub fn role(&self, index: usize) -> SlotRole {
        if self.ref_period > 0 && index.is_multiple_of(self.ref_period) {
            SlotRole::Reference
        } else {
            SlotRole::Signal
        }
    }

    /// The α of the key-rate formula.
    pub fn overhead(&self) -> f64 {
        if self.ref_period == 0 {
            0.0
        } else {
            1.0 / self.ref_period as f64
        }
    }
}

impl Default for SlotLayout {
    fn default() -> Self {
        SlotLayout {
            ref_period: Self::DEFAULT_REF_PERIOD,
            ref_amplitude: Self::DEFAULT_REF_AMPLITUDE,
        }
    }
}

/// One measured reference: the basis Bob used and the outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefMeasurement {
    pub basis: Basis,
    pub outcome: f64,
}

/// Least-squares (Gaussian maximum-likelihood) phase from reference pulses.
///
/// With unknown gain `g`, an X outcome is `c·x − s·p` and a P outcome is
/// `s·x + c·p`, where `(c, s) = g·(cos θ, sin θ)`. The 2×2 normal equations
/// give `(c, s)` and the phase is `atan2(s, c)`.
pub fn estimate_phase(ref_sent: &[(f64, f64)], ref_measured: &[RefMeasurement]) -> Result<f64> {
    if ref_sent.len() != ref_measured.len() {
        return Err(Error::LengthMismatch {
            expected: ref_sent.len(),
            actual: ref_measured.len(),
        });
    }
    if ref_sent.len() < 2 {
        return Err(Error::Degenerate("need at least two reference pulses".into()));
    }
    let has_x = ref_measured.iter().any(|m| m.basis == Basis::X);
    let has_p = ref_measured.iter().any(|m| m.basis == Basis::P);
    if !(has_x && has_p) {
        return Err(Error::Degenerate(
            "all references measured in a single basis".into(),
        ));
    }
    // Design rows are (x, −p) for X and (p, x) for P.
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    let mut bc = 0.0;
    let mut bs = 0.0;
    for (&(x, p), m) in ref_sent.iter().zip(ref_measured) {
        let (r1, r2) = match m.basis {
            Basis::X => (x, -p),
            Basis::P => (p, x),
        };
        a11 += r1 * r1;
        a12 += r1 * r2;
        a22 += r2 * r2;
        bc += r1 * m.outcome;
        bs += r2 * m.outcome;
    }
    let det = a11 * a22 - a12 * a12;
    if !(det > 1e-12 * (a11 + a22).powi(2)) {
        return Err(Error::Degenerate("references do not resolve both phase components".into()));
    }
    let c = (a22 * bc - a12 * bs) / det;
    let s = (a11 * bs - a12 * bc) / det;
    if c == 0.0 && s == 0.0 {
        return Err(Error::Degenerate("references carry no amplitude".into()));
    }
    Ok(wrap_angle(s.atan2(c)))
}

/// Declares that Bob's measurement frame is rotated by `phase_estimate`; sifting
/// compares against Alice's data rotated by the accumulated angle. Outcome
/// values, including reference slots, are left untouched.
pub fn apply_phase_correction(frame: &BobFrame, phase_estimate: f64) -> Result<BobFrame> {
    if !phase_estimate.is_finite() {
        return Err(invalid("phase_estimate", "must be finite"));
    }
    let mut out = frame.clone();
    out.phase_ref_rad = wrap_angle(frame.phase_ref_rad + phase_estimate);
    if out.phase_ref_rad.abs() < 1e-15 {
        out.phase_ref_rad = 0.0;
    }
    Ok(out)
}

/// Proportional controller for the dynamic polarization controller.
pub fn polarization_feedback(state: &DriftState, gain: f64) -> Result<f64> {
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(invalid("gain", format!("{gain} not in (0, 1]")));
    }
    Ok(-gain * state.pol_angle_rad)
}

/// Largest misalignment angle compatible with a given polarization extinction ratio.
pub fn max_angle_for_extinction(extinction_db: f64) -> f64 {
    10f64.powf(-extinction_db / 20.0).atan()
}

/// Reference waveform used for data/clock synchronization on the LO monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncPattern {
    pub chips: Vec<f64>,
    pub chip_period_s: f64,
    pub pulse_sigma_s: f64,
    /// Sampling grid of the monitor photodiode.
    pub grid_s: f64,
    /// Largest offset searched on either side of zero.
    pub max_offset_s: f64,
    /// Normalized correlation peak required to declare lock.
    pub threshold: f64,
}

impl SyncPattern {
    pub const GRID_S: f64 = 50e-12;

    pub fn new(n_chips: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Timing);
        let chips = (0..n_chips)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        SyncPattern {
            chips,
            chip_period_s: 1e-9,
            pulse_sigma_s: 0.4e-9,
            grid_s: Self::GRID_S,
            max_offset_s: 10.5e-9,
            threshold: 0.5,
        }
    }

    fn template_len(&self) -> usize {
        ((self.chips.len() as f64 + 2.0) * self.chip_period_s / self.grid_s).ceil() as usize
    }

    fn max_lag(&self) -> usize {
        (self.max_offset_s / self.grid_s).ceil() as usize
    }

    /// Continuous waveform value at time `t` (template starts at t = 0).
    fn waveform(&self, t: f64) -> f64 {
        let s2 = 2.0 * self.pulse_sigma_s * self.pulse_sigma_s;
        let first = self.chip_period_s;
        let k_mid = ((t - first) / self.chip_period_s).round() as i64;
        let span = (5.0 * self.pulse_sigma_s / self.chip_period_s).ceil() as i64 + 1;
        let mut v = 0.0;
        for k in (k_mid - span)..=(k_mid + span) {
            if k < 0 || k as usize >= self.chips.len() {
                continue;
            }
            let dt = t - first - k as f64 * self.chip_period_s;
            v += self.chips[k as usize] * (-dt * dt / s2).exp();
        }
        v
    }

    pub fn template(&self) -> Vec<f64> {
        (0..self.template_len())
            .map(|j| self.waveform(j as f64 * self.grid_s))
            .collect()
    }

    /// Monitor samples of the pattern delayed by `offset_s`, with additive white
    /// noise of standard deviation `noise_std` (relative to unit pulse height).
    pub fn synthesize(&self, offset_s: f64, noise_std: f64, seed: u64) -> Vec<f64> {
        let lag = self.max_lag();
        let len = self.template_len() + 2 * lag;
        let mut rng = stream_rng(seed, Stream::Timing);
        (0..len)
            .map(|j| {
                let t = (j as f64 - lag as f64) * self.grid_s - offset_s;
                let n: f64 = if noise_std > 0.0 {
                    noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                self.waveform(t) + n
            })
            .collect()
    }
}

/// Cross-correlation timing recovery with parabolic sub-sample interpolation.
pub fn timing_recovery(input: &[f64], pattern: &SyncPattern) -> Result<f64> {
    let tmpl = pattern.template();
    let lag = pattern.max_lag();
    if input.len() != tmpl.len() + 2 * lag {
        return Err(Error::LengthMismatch {
            expected: tmpl.len() + 2 * lag,
            actual: input.len(),
        });
    }
    let energy: f64 = tmpl.iter().map(|v| v * v).sum();
    let corr: Vec<f64> = (0..=2 * lag)
        .map(|s| tmpl.iter().zip(&input[s..]).map(|(a, b)| a * b).sum::<f64>() / energy)
        .collect();
    let (best, &peak) = corr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty correlation");
    if !(peak >= pattern.threshold) {
        return Err(Error::SyncLost {
            peak,
            threshold: pattern.threshold,
        });
    }
    let mut frac = 0.0;
    if best > 0 && best < corr.len() - 1 {
        let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            frac = 0.5 * (l - r) / denom;
        }
    }
    Ok((best as f64 - lag as f64 + frac) * pattern.grid_s)
}

/// Per-frame calibration residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub frame_id: u64,
    pub residual_phase_rad: f64,
    /// Relative loss of signal power at the polarization demultiplexer.
    pub pol_power_fluctuation: f64,
    pub timing_error_s: f64,
    /// False when timing recovery lost lock on this frame.
    pub timing_locked: bool,
}

pub fn write_report_csv<W: Write>(mut w: W, reports: &[CalibrationReport], provenance: &str) -> Result<()> {
    writeln!(w, "# {provenance}")?;
    writeln!(w, "frame_id,residual_phase_deg,pol_fluct,timing_error_ps")?;
    for r in reports {
        let timing = if r.timing_locked {
            format!("{:.6}", r.timing_error_s * 1e12)
        } else {
            "nan".to_string()
        };
        writeln!(
            w,
            "{},{:.9},{:.9e},{}",
            r.frame_id,
            r.residual_phase_rad.to_degrees(),
            r.pol_power_fluctuation,
            timing
        )?;
    }
    Ok(())
}

/// Settings of the closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub system: SystemParams,
    pub layout: SlotLayout,
    pub drift: DriftModel,
    pub noise: DetectionNoise,
    /// Simulated duration (s).
    pub duration_s: f64,
    /// Simulated time between recorded frames (s).
    pub frame_interval_s: f64,
    /// Period of the polarization/phase actuator loop (s).
    pub control_interval_s: f64,
    pub pulses_per_frame: usize,
    pub pol_gain: f64,
    pub sync_chips: usize,
    pub sync_noise_std: f64,
    pub seed: u64,
}

impl LoopConfig {
    pub fn n_frames(&self) -> usize {
        (self.duration_s / self.frame_interval_s).floor() as usize
    }
}

/// One frame after measurement and in-frame phase correction.
pub struct CalibratedFrame<'a> {
    pub alice: &'a AliceFrame,
    pub bob: &'a BobFrame,
    pub report: &'a CalibrationReport,
}

/// Drives the drift processes and the three feedback loops over a
/// time-compressed run. Frames are subsampled at `frame_interval_s`; the
/// polarization loop ticks at `control_interval_s` in between.
pub fn run_closed_loop<F>(cfg: &LoopConfig, mut on_frame: F) -> Result<Vec<CalibrationReport>>
where
    F: FnMut(CalibratedFrame<'_>) -> Result<()>,
{
    cfg.system.validate()?;
    if !(cfg.frame_interval_s > 0.0 && cfg.control_interval_s > 0.0) {
        return Err(invalid("frame_interval_s", "intervals must be > 0"));
    }
    if cfg.layout.ref_period == 0 {
        return Err(invalid("ref_period", "closed-loop phase tracking needs reference slots"));
    }
    let ticks_per_frame = (cfg.frame_interval_s / cfg.control_interval_s).round().max(1.0) as u64;
    let dt = cfg.frame_interval_s / ticks_per_frame as f64;
    let pattern = SyncPattern::new(cfg.sync_chips, cfg.seed);

    let mut drift = DriftState::default();
    let mut phase_act = 0.0;
    let mut timing_act = 0.0;
    let mut tick: u64 = 0;
    let mut reports = Vec::with_capacity(cfg.n_frames());

    for frame_id in 0..cfg.n_frames() as u64 {
        for _ in 1..ticks_per_frame {
            drift = optical::step_drift(&drift, dt, &cfg.drift, derive(cfg.seed ^ 0xD21F, tick))?;
            tick += 1;
            drift.pol_angle_rad += polarization_feedback(&drift, cfg.pol_gain)?;
        }
        // The frame sees the state after the last drift step, before its correction.
        drift = optical::step_drift(&drift, dt, &cfg.drift, derive(cfg.seed ^ 0xD21F, tick))?;
        tick += 1;

        let fseed = derive(cfg.seed, frame_id);
        let alice = optical::generate_frame(&cfg.system, cfg.pulses_per_frame, &cfg.layout, frame_id, fseed)?;
        let effective = DriftState {
            phase_rad: wrap_angle(drift.phase_rad - phase_act),
            pol_angle_rad: drift.pol_angle_rad,
            timing_offset_s: drift.timing_offset_s - timing_act,
        };
        let prop = optical::propagate(&alice, &cfg.system.channel, &effective, fseed);
        let bases = draw_bases(&alice.roles, fseed);
        let bob = homodyne_measure_with(&prop, &bases, &cfg.system.detector, cfg.noise, fseed)?;

        let (sent, measured) = reference_pairs(&alice, &bob);
        let estimate = estimate_phase(&sent, &measured)?;
        let corrected = apply_phase_correction(&bob, estimate)?;
        phase_act = wrap_angle(phase_act + estimate);

        let sync_noise = match cfg.noise {
            DetectionNoise::Physical => cfg.sync_noise_std,
            DetectionNoise::Noiseless => 0.0,
        };
        let input = pattern.synthesize(effective.timing_offset_s, sync_noise, fseed);
        let (timing_error_s, timing_locked) = match timing_recovery(&input, &pattern) {
            Ok(t) => {
                timing_act += t;
                (t - effective.timing_offset_s, true)
            }
            Err(Error::SyncLost { .. }) => (f64::NAN, false),
            Err(e) => return Err(e),
        };

        let report = CalibrationReport {
            frame_id,
            residual_phase_rad: wrap_angle(effective.phase_rad - estimate),
            pol_power_fluctuation: drift.pol_angle_rad.sin().powi(2),
            timing_error_s,
            timing_locked,
        };
        on_frame(CalibratedFrame {
            alice: &alice,
            bob: &corrected,
            report: &report,
        })?;
        reports.push(report);
        drift.pol_angle_rad += polarization_feedback(&drift, cfg.pol_gain)?;
    }
    Ok(reports)
}

/// Reference slots of a frame as (sent quadratures, measurement) pairs.
pub fn reference_pairs(alice: &AliceFrame, bob: &BobFrame) -> (Vec<(f64, f64)>, Vec<RefMeasurement>) {
    let mut sent = Vec::new();
    let mut meas = Vec::new();
    for i in 0..alice.len() {
        if alice.roles[i] == SlotRole::Reference {
            sent.push((alice.x[i], alice.p[i]));
            meas.push(RefMeasurement {
                basis: bob.bases[i],
                outcome: bob.measurements[i],
            });
        }
    }
    (sent, meas)
}

/// Noise-free reference outcomes for a known phase; used by tests and the demo.
pub fn ideal_reference_outcomes(sent: &[(f64, f64)], bases: &[Basis], gain: f64, phase: f64) -> Vec<RefMeasurement> {
    sent.iter()
        .zip(bases)
        .map(|(&(x, p), &basis)| {
            let (rx, rp) = rotate(x, p, phase);
            RefMeasurement {
                basis,
                outcome: gain * if basis == Basis::X { rx } else { rp },
            }
        })
        .collect()
}

/// Fraction of values whose magnitude is below `limit`.
pub fn fraction_below(values: impl Iterator<Item = f64>, limit: f64) -> f64 {
    let mut n = 0usize;
    let mut ok = 0usize;
    for v in values {
        n += 1;
        if v.abs() < limit {
            ok += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}

pub const DEG: f64 = PI / 180.0;

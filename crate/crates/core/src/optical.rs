//! Statistical model of the quantum layer: Gaussian modulation at Alice, a lossy
//! and noisy channel with slow drifts, and balanced homodyne detection at Bob.
//!
//! Pulses are not simulated as waveforms. Each pulse is one pair of quadratures
//! in shot-noise units; the channel rotates, attenuates and adds noise, and the
//! detector projects onto the quadrature selected by Bob's basis.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::SlotLayout;
use crate::error::{invalid, Error, Result};
use crate::link::{ChannelParams, DetectorParams, SystemParams};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    P,
}

impl Basis {
    pub fn code(self) -> u8 {
        match self {
            Basis::X => 0,
            Basis::P => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Basis::X),
            1 => Ok(Basis::P),
            _ => Err(Error::Parse(format!("bad basis code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotRole {
    Signal,
    Reference,
}

impl SlotRole {
    pub fn code(self) -> u8 {
        match self {
            SlotRole::Signal => 0,
            SlotRole::Reference => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(SlotRole::Signal),
            1 => Ok(SlotRole::Reference),
            _ => Err(Error::Parse(format!("bad slot role code {c}"))),
        }
    }
}

/// Quadratures prepared by Alice for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceFrame {
    pub frame_id: u64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub roles: Vec<SlotRole>,
}

impl AliceFrame {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Field quadratures arriving at Bob's detector, vacuum noise excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedFrame {
    pub frame_id: u64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub roles: Vec<SlotRole>,
}

/// Homodyne outcomes recorded by Bob.
///
/// `phase_ref_rad` is the rotation Bob declares to have been applied to his
/// measurement frame. Sifting compares each outcome against Alice's quadratures
/// rotated by this angle.
#[derive(Debug, Clone, PartialEq)]
pub struct BobFrame {
    pub frame_id: u64,
    pub measurements: Vec<f64>,
    pub bases: Vec<Basis>,
    pub roles: Vec<SlotRole>,
    pub phase_ref_rad: f64,
}

impl BobFrame {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Slowly varying misalignments between Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftState {
    pub phase_rad: f64,
    pub pol_angle_rad: f64,
    pub timing_offset_s: f64,
}

/// Diffusion rates of the drift random walks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// rad²/s
    pub phase_diffusion: f64,
    /// rad²/s
    pub pol_diffusion: f64,
    /// Reflecting bound on the polarization angle (rad).
    pub pol_bound_rad: f64,
    /// s²/s
    pub timing_diffusion: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel {
            phase_diffusion: 0.01,
            pol_diffusion: 1e-4,
            pol_bound_rad: PI / 2.0,
            timing_diffusion: 1e-20,
        }
    }
}

impl DriftModel {
    pub fn frozen() -> Self {
        DriftModel {
            phase_diffusion: 0.0,
            pol_diffusion: 0.0,
            pol_bound_rad: PI / 2.0,
            timing_diffusion: 0.0,
        }
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Rotation of a quadrature pair by `theta`.
#[inline]
pub fn rotate(x: f64, p: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (x * c - p * s, x * s + p * c)
}

pub fn generate_frame(
    params: &SystemParams,
    n_pulses: usize,
    layout: &SlotLayout,
    frame_id: u64,
    seed: u64,
) -> Result<AliceFrame> {
    if n_pulses == 0 {
        return Err(invalid("n_pulses", "frame must contain at least one pulse"));
    }
    params.validate()?;
    let std = params.modulation_variance_snu.sqrt();
    let mut rng = stream_rng(seed, Stream::Modulation);
    let mut x = Vec::with_capacity(n_pulses);
    let mut p = Vec::with_capacity(n_pulses);
    let mut roles = Vec::with_capacity(n_pulses);
    for i in 0..n_pulses {
        let role = layout.role(i);
        match role {
            SlotRole::Signal => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x.push(std * a);
                p.push(std * b);
            }
            SlotRole::Reference => {
                x.push(layout.ref_amplitude);
                p.push(0.0);
            }
        }
        roles.push(role);
    }
    Ok(AliceFrame {
        frame_id,
        x,
        p,
        roles,
    })
}

pub fn propagate(
    frame: &AliceFrame,
    channel: &ChannelParams,
    drift: &DriftState,
    seed: u64,
) -> PropagatedFrame {
    let t = channel.transmittance();
    let pol_amp = drift.pol_angle_rad.cos().abs();
    let gain = t.sqrt() * pol_amp;
    let noise_std = (t * channel.excess_noise_snu).sqrt() * pol_amp;
    let mut rng = stream_rng(seed, Stream::Channel);
    let n = frame.len();
    let mut x = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let (rx, rp) = rotate(frame.x[i], frame.p[i], drift.phase_rad);
        let (nx, np) = if noise_std > 0.0 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            (noise_std * a, noise_std * b)
        } else {
            (0.0, 0.0)
        };
        x.push(gain * rx + nx);
        p.push(gain * rp + np);
    }
    PropagatedFrame {
        frame_id: frame.frame_id,
        x,
        p,
        roles: frame.roles.clone(),
    }
}

/// Bob's basis string: uniform on signal slots, alternating X/P on references.
pub fn draw_bases(roles: &[SlotRole], seed: u64) -> Vec<Basis> {
    let mut rng = stream_rng(seed, Stream::Bases);
    let mut next_ref = Basis::X;
    roles
        .iter()
        .map(|r| match r {
            SlotRole::Signal => {
                if rng.random::<bool>() {
                    Basis::P
                } else {
                    Basis::X
                }
            }
            SlotRole::Reference => {
                let b = next_ref;
                next_ref = if b == Basis::X { Basis::P } else { Basis::X };
                b
            }
        })
        .collect()
}

/// Noise model of the homodyne detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DetectionNoise {
    /// Shot noise plus electronic noise.
    #[default]
    Physical,
    /// No additive noise at all; a diagnostic mode for end-to-end checks.
    Noiseless,
}

pub fn homodyne_measure(
    frame: &PropagatedFrame,
    bases: &[Basis],
    detector: &DetectorParams,
    seed: u64,
) -> Result<BobFrame> {
    homodyne_measure_with(frame, bases, detector, DetectionNoise::Physical, seed)
}

/// Outcome `√η·q + n` with `Var(n) = 1 + v_el`: vacuum entering the signal port and
/// the loss port together contribute one unit of shot noise.
pub fn homodyne_measure_with(
    frame: &PropagatedFrame,
    bases: &[Basis],
    detector: &DetectorParams,
    noise: DetectionNoise,
    seed: u64,
) -> Result<BobFrame> {
    if bases.len() != frame.x.len() {
        return Err(Error::LengthMismatch {
            expected: frame.x.len(),
            actual: bases.len(),
        });
    }
    detector.validate()?;
    let amp = detector.efficiency.sqrt();
    let noise_std = match noise {
        DetectionNoise::Physical => (1.0 + detector.electronic_noise_snu).sqrt(),
        DetectionNoise::Noiseless => 0.0,
    };
    let mut rng = stream_rng(seed, Stream::Detector);
    let measurements = bases
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let q = match b {
                Basis::X => frame.x[i],
                Basis::P => frame.p[i],
            };
            let n: f64 = if noise_std > 0.0 {
                noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            amp * q + n
        })
        .collect();
    Ok(BobFrame {
        frame_id: frame.frame_id,
        measurements,
        bases: bases.to_vec(),
        roles: frame.roles.clone(),
        phase_ref_rad: 0.0,
    })
}

pub fn step_drift(drift: &DriftState, dt_s: f64, model: &DriftModel, seed: u64) -> Result<DriftState> {
    if !(dt_s > 0.0) {
        return Err(invalid("dt_s", format!("{dt_s} must be > 0")));
    }
    let mut rng = stream_rng(seed, Stream::Drift);
    let mut step = |rate: f64| -> f64 {
        if rate > 0.0 {
            Normal::new(0.0, (rate * dt_s).sqrt())
                .expect("finite std")
                .sample(&mut rng)
        } else {
            0.0
        }
    };
    let phase = wrap_angle(drift.phase_rad + step(model.phase_diffusion));
    let pol = reflect(drift.pol_angle_rad + step(model.pol_diffusion), model.pol_bound_rad);
    let timing = drift.timing_offset_s + step(model.timing_diffusion);
    Ok(DriftState {
        phase_rad: phase,
        pol_angle_rad: pol,
        timing_offset_s: timing,
    })
}

fn reflect(v: f64, bound: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    if v.abs() <= bound {
        return v;
    }
    let period = 4.0 * bound;
    let mut w = (v + bound).rem_euclid(period);
    if w > 2.0 * bound {
        w = period - w;
    }
    w - bound
}

//! Run configuration: named presets plus a `key = value` text format.
//!
//! ```text
//! # comment
//! preset = xian          # optional, must be the first key
//! length_km = 30.02
//! detection = physical
//! bench_betas = 0.5, 0.6, 0.7
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys may appear once each;
//! unknown keys, repeated keys and malformed values are rejected with the line
//! number. [`RunConfig::to_text`] renders the complete configuration in the
//! same grammar, and its SHA-256 is the config hash quoted in every output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{LoopConfig, SlotLayout};
use crate::error::{Error, Result};
use crate::keyrate::{RateMode, RateModel, ReceiverModel};
use crate::link::{ChannelParams, DetectorParams, SystemParams};
use crate::optical::{DetectionNoise, DriftModel};
use crate::postproc::SessionOrder;
use crate::reconciliation::Ensemble;

pub const PRESETS: [&str; 3] = ["xian", "guangzhou", "zero-noise"];

/// Modulation variance that puts the Xi'an link SNR inside 0.0287–0.0296.
pub const FIELD_MODULATION_VARIANCE: f64 = 1.134;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub system: SystemParams,
    pub layout: SlotLayout,
    pub drift: DriftModel,
    pub detection: DetectionNoise,
    pub duration_s: f64,
    pub frame_interval_s: f64,
    pub control_interval_s: f64,
    pub pulses_per_frame: usize,
    pub pol_gain: f64,
    pub sync_chips: usize,
    pub sync_noise_std: f64,
    /// Efficiency and FER of the field operating point used by `keyrate`/`sweep`.
    pub beta: f64,
    pub fer: f64,
    pub block_size: f64,
    pub eps_pe: f64,
    pub eps_bar: f64,
    pub receiver: ReceiverModel,
    pub mode: RateMode,
    /// `met-0.02`, `regular:DV,DC`, or a path to an ensemble file.
    pub ensemble: String,
    pub code_n: usize,
    pub dimension: usize,
    pub max_iter: usize,
    /// Efficiency the desk-scale decoder is run at inside `simulate`.
    pub target_beta: f64,
    pub session_order: SessionOrder,
    pub sweep_start_db: f64,
    pub sweep_end_db: f64,
    pub sweep_step_db: f64,
    pub bench_snr: f64,
    pub bench_betas: Vec<f64>,
    pub bench_frames: usize,
    pub save_frames: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset("xian").expect("built-in preset")
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (length_km, atten) = match name {
            "xian" | "zero-noise" => (30.02, 0.416),
            "guangzhou" => (49.85, 0.233),
            other => {
                return Err(Error::Config {
                    line: 0,
                    message: format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
                })
            }
        };
        let zero = name == "zero-noise";
        let xi = if zero { 0.0 } else { 0.04 };
        let mut cfg = RunConfig {
            preset: Some(name.to_string()),
            system: SystemParams {
                modulation_variance_snu: FIELD_MODULATION_VARIANCE,
                channel: ChannelParams::new(length_km, atten, xi)?,
                detector: DetectorParams::default(),
                rep_rate_hz: 5e6,
                overhead: 0.0,
            },
            layout: SlotLayout::new(SlotLayout::DEFAULT_REF_PERIOD, SlotLayout::DEFAULT_REF_AMPLITUDE)?,
            drift: DriftModel::default(),
            detection: DetectionNoise::Physical,
            duration_s: 600.0,
            frame_interval_s: 1.0,
            control_interval_s: 0.1,
            pulses_per_frame: 4096,
            pol_gain: 0.5,
            sync_chips: 63,
            sync_noise_std: 0.1,
            beta: 0.95,
            fer: 0.1,
            block_size: RateModel::DEFAULT_BLOCK_SIZE,
            eps_pe: RateModel::DEFAULT_EPS,
            eps_bar: RateModel::DEFAULT_EPS,
            receiver: ReceiverModel::Trusted,
            mode: RateMode::Asymptotic,
            ensemble: "met-0.02".to_string(),
            code_n: 10_000,
            dimension: 8,
            max_iter: 100,
            target_beta: 0.4,
            session_order: SessionOrder::Swapped,
            sweep_start_db: 0.0,
            sweep_end_db: 35.0,
            sweep_step_db: 0.5,
            bench_snr: 0.0287,
            bench_betas: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            bench_frames: 200,
            save_frames: false,
            seed: 1,
        };
        cfg.system.overhead = cfg.layout.overhead();
        if zero {
            cfg.detection = DetectionNoise::Noiseless;
            cfg.drift = DriftModel::frozen();
            cfg.sync_noise_std = 0.0;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses the text format; keys not given keep the preset (default: Xi'an) values.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(RunConfig::default(), text)
    }

    /// Like [`Self::parse`], starting from `base` instead of the default preset.
    pub fn parse_onto(base: RunConfig, text: &str) -> Result<Self> {
        let mut cfg = base;
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(config_err(line, format!("expected `key = value`, got `{body}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(config_err(line, format!("duplicate key `{key}`")));
            }
            if key == "preset" {
                if !seen.is_empty() {
                    return Err(config_err(line, "`preset` must be the first key"));
                }
                cfg = RunConfig::preset(value).map_err(|e| config_err(line, strip_line(e)))?;
            } else {
                cfg.set(key, value).map_err(|m| config_err(line, m))?;
            }
            seen.push(key.to_string());
        }
        cfg.system.overhead = cfg.layout.overhead();
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "length_km" => self.system.channel.length_km = num(v)?,
            "atten_db_per_km" => self.system.channel.atten_db_per_km = num(v)?,
            "excess_noise_snu" => self.system.channel.excess_noise_snu = num(v)?,
            "efficiency" => self.system.detector.efficiency = num(v)?,
            "electronic_noise_snu" => self.system.detector.electronic_noise_snu = num(v)?,
            "modulation_variance_snu" => self.system.modulation_variance_snu = num(v)?,
            "rep_rate_hz" => self.system.rep_rate_hz = num(v)?,
            "ref_period" => self.layout.ref_period = num(v)?,
            "ref_amplitude" => self.layout.ref_amplitude = num(v)?,
            "phase_diffusion" => self.drift.phase_diffusion = num(v)?,
            "pol_diffusion" => self.drift.pol_diffusion = num(v)?,
            "pol_bound_rad" => self.drift.pol_bound_rad = num(v)?,
            "timing_diffusion" => self.drift.timing_diffusion = num(v)?,
            "detection" => {
                self.detection = match v {
                    "physical" => DetectionNoise::Physical,
                    "noiseless" => DetectionNoise::Noiseless,
                    _ => return Err(format!("detection must be physical|noiseless, got `{v}`")),
                }
            }
            "duration_s" => self.duration_s = num(v)?,
            "frame_interval_s" => self.frame_interval_s = num(v)?,
            "control_interval_s" => self.control_interval_s = num(v)?,
            "pulses_per_frame" => self.pulses_per_frame = num(v)?,
            "pol_gain" => self.pol_gain = num(v)?,
            "sync_chips" => self.sync_chips = num(v)?,
            "sync_noise_std" => self.sync_noise_std = num(v)?,
            "beta" => self.beta = num(v)?,
            "fer" => self.fer = num(v)?,
            "block_size" => self.block_size = num(v)?,
            "eps_pe" => self.eps_pe = num(v)?,
            "eps_bar" => self.eps_bar = num(v)?,
            "receiver" => self.receiver = parse_receiver(v)?,
            "mode" => self.mode = parse_mode(v)?,
            "ensemble" => self.ensemble = v.to_string(),
            "code_n" => self.code_n = num(v)?,
            "dimension" => self.dimension = num(v)?,
            "max_iter" => self.max_iter = num(v)?,
            "target_beta" => self.target_beta = num(v)?,
            "session_order" => {
                self.session_order = match v.split_once(':') {
                    None if v == "swapped" => SessionOrder::Swapped,
                    Some(("legacy", f)) => SessionOrder::Legacy { pe_fraction: num(f)? },
                    _ => return Err(format!("session_order must be swapped|legacy:FRACTION, got `{v}`")),
                }
            }
            "sweep_start_db" => self.sweep_start_db = num(v)?,
            "sweep_end_db" => self.sweep_end_db = num(v)?,
            "sweep_step_db" => self.sweep_step_db = num(v)?,
            "bench_snr" => self.bench_snr = num(v)?,
            "bench_betas" => {
                self.bench_betas = v.split(',').map(|t| num(t.trim())).collect::<std::result::Result<_, _>>()?
            }
            "bench_frames" => self.bench_frames = num(v)?,
            "save_frames" => {
                self.save_frames = v.parse().map_err(|_| format!("expected true|false, got `{v}`"))?
            }
            "seed" => self.seed = num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.layout.ref_period != 0 {
            SlotLayout::new(self.layout.ref_period, self.layout.ref_amplitude)?;
        }
        self.rate_model().validate()?;
        let check = |ok: bool, line: &str| {
            if ok {
                Ok(())
            } else {
                Err(config_err(0, line.to_string()))
            }
        };
        check(self.duration_s > 0.0 && self.frame_interval_s > 0.0, "duration_s and frame_interval_s must be > 0")?;
        check(self.control_interval_s > 0.0, "control_interval_s must be > 0")?;
        check(self.pulses_per_frame > 0, "pulses_per_frame must be > 0")?;
        check(self.pol_gain > 0.0 && self.pol_gain <= 1.0, "pol_gain must be in (0, 1]")?;
        check(self.sync_chips > 0 && self.sync_noise_std >= 0.0, "sync settings out of range")?;
        check(self.block_size >= 1.0, "block_size must be >= 1")?;
        check(
            self.eps_pe > 0.0 && self.eps_pe < 1.0 && self.eps_bar > 0.0 && self.eps_bar < 1.0,
            "eps_pe and eps_bar must be in (0, 1)",
        )?;
        check([1, 2, 4, 8].contains(&self.dimension), "dimension must be 1, 2, 4 or 8")?;
        check(self.code_n > 0 && self.code_n.is_multiple_of(self.dimension), "code_n must be a positive multiple of dimension")?;
        check(self.max_iter > 0, "max_iter must be > 0")?;
        check(self.target_beta > 0.0 && self.target_beta <= 1.0, "target_beta must be in (0, 1]")?;
        check(self.sweep_step_db > 0.0 && self.sweep_end_db >= self.sweep_start_db, "sweep range invalid")?;
        check(self.sweep_start_db >= 0.0, "sweep_start_db must be >= 0")?;
        check(self.bench_snr > 0.0 && self.bench_frames > 0, "bench_snr and bench_frames must be > 0")?;
        check(
            !self.bench_betas.is_empty() && self.bench_betas.iter().all(|b| *b > 0.0 && *b <= 1.0),
            "bench_betas must be a non-empty list in (0, 1]",
        )?;
        if let SessionOrder::Legacy { pe_fraction } = self.session_order {
            check((0.0..=1.0).contains(&pe_fraction), "legacy fraction must be in [0, 1]")?;
        }
        Ok(())
    }

    pub fn rate_model(&self) -> RateModel {
        RateModel {
            excess_noise_snu: self.system.channel.excess_noise_snu,
            detector: self.system.detector,
            beta: self.beta,
            fer: self.fer,
            overhead: self.system.overhead,
            rep_rate_hz: self.system.rep_rate_hz,
            block_size: self.block_size,
            eps_pe: self.eps_pe,
            eps_bar: self.eps_bar,
            receiver: self.receiver,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            system: self.system,
            layout: self.layout,
            drift: self.drift,
            noise: self.detection,
            duration_s: self.duration_s,
            frame_interval_s: self.frame_interval_s,
            control_interval_s: self.control_interval_s,
            pulses_per_frame: self.pulses_per_frame,
            pol_gain: self.pol_gain,
            sync_chips: self.sync_chips,
            sync_noise_std: self.sync_noise_std,
            seed: self.seed,
        }
    }

    /// Resolves the `ensemble` setting; relative paths are taken from `base`.
    pub fn load_ensemble(&self, base: &Path) -> Result<Ensemble> {
        if self.ensemble == "met-0.02" {
            return Ok(Ensemble::met_rate_002());
        }
        if let Some(spec) = self.ensemble.strip_prefix("regular:") {
            let parts: Vec<usize> = spec
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad regular ensemble `{spec}`")))?;
            let [dv, dc] = parts[..] else {
                return Err(Error::Parse(format!("regular ensemble needs DV,DC, got `{spec}`")));
            };
            return Ensemble::regular(dv, dc);
        }
        let path = base.join(&self.ensemble);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ensemble::parse(&text)
    }

    /// Every setting in the text grammar, in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.system;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(p) = &self.preset {
            kv("preset", p.clone());
        }
        kv("length_km", s.channel.length_km.to_string());
        kv("atten_db_per_km", s.channel.atten_db_per_km.to_string());
        kv("excess_noise_snu", s.channel.excess_noise_snu.to_string());
        kv("efficiency", s.detector.efficiency.to_string());
        kv("electronic_noise_snu", s.detector.electronic_noise_snu.to_string());
        kv("modulation_variance_snu", s.modulation_variance_snu.to_string());
        kv("rep_rate_hz", s.rep_rate_hz.to_string());
        kv("ref_period", self.layout.ref_period.to_string());
        kv("ref_amplitude", self.layout.ref_amplitude.to_string());
        kv("phase_diffusion", self.drift.phase_diffusion.to_string());
        kv("pol_diffusion", self.drift.pol_diffusion.to_string());
        kv("pol_bound_rad", self.drift.pol_bound_rad.to_string());
        kv("timing_diffusion", self.drift.timing_diffusion.to_string());
        kv(
            "detection",
            match self.detection {
                DetectionNoise::Physical => "physical",
                DetectionNoise::Noiseless => "noiseless",
            }
            .to_string(),
        );
        kv("duration_s", self.duration_s.to_string());
        kv("frame_interval_s", self.frame_interval_s.to_string());
        kv("control_interval_s", self.control_interval_s.to_string());
        kv("pulses_per_frame", self.pulses_per_frame.to_string());
        kv("pol_gain", self.pol_gain.to_string());
        kv("sync_chips", self.sync_chips.to_string());
        kv("sync_noise_std", self.sync_noise_std.to_string());
        kv("beta", self.beta.to_string());
        kv("fer", self.fer.to_string());
        kv("block_size", self.block_size.to_string());
        kv("eps_pe", self.eps_pe.to_string());
        kv("eps_bar", self.eps_bar.to_string());
        kv(
            "receiver",
            match self.receiver {
                ReceiverModel::Trusted => "trusted",
                ReceiverModel::Paranoid => "paranoid",
            }
            .to_string(),
        );
        kv(
            "mode",
            match self.mode {
                RateMode::Asymptotic => "asymptotic",
                RateMode::Finite => "finite",
            }
            .to_string(),
        );
        kv("ensemble", self.ensemble.clone());
        kv("code_n", self.code_n.to_string());
        kv("dimension", self.dimension.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("target_beta", self.target_beta.to_string());
        kv(
            "session_order",
            match self.session_order {
                SessionOrder::Swapped => "swapped".to_string(),
                SessionOrder::Legacy { pe_fraction } => format!("legacy:{pe_fraction}"),
            },
        );
        kv("sweep_start_db", self.sweep_start_db.to_string());
        kv("sweep_end_db", self.sweep_end_db.to_string());
        kv("sweep_step_db", self.sweep_step_db.to_string());
        kv("bench_snr", self.bench_snr.to_string());
        kv(
            "bench_betas",
            self.bench_betas.iter().map(f64::to_string).collect::<Vec<_>>().join(", "),
        );
        kv("bench_frames", self.bench_frames.to_string());
        kv("save_frames", self.save_frames.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line placed at the top of every CSV output.
    pub fn provenance(&self) -> String {
        format!(
            "cvqkd {} config {} seed {}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.seed
        )
    }
}

pub fn parse_receiver(v: &str) -> std::result::Result<ReceiverModel, String> {
    match v {
        "trusted" => Ok(ReceiverModel::Trusted),
        "paranoid" => Ok(ReceiverModel::Paranoid),
        _ => Err(format!("receiver must be trusted|paranoid, got `{v}`")),
    }
}

pub fn parse_mode(v: &str) -> std::result::Result<RateMode, String> {
    match v {
        "asymptotic" => Ok(RateMode::Asymptotic),
        "finite" => Ok(RateMode::Finite),
        _ => Err(format!("mode must be asymptotic|finite, got `{v}`")),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn strip_line(e: Error) -> String {
    match e {
        Error::Config { message, .. } => message,
        other => other.to_string(),
    }
}

//! End-to-end simulated session: closed-loop acquisition, sifting, swapped-order
//! reconciliation and estimation, key-rate evaluation and privacy amplification.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{fraction_below, run_closed_loop, write_report_csv, CalibrationReport, DEG};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frame_io::write_frame_pair;
use crate::keyrate::{rate_from_bounds, KeyRateReport, RateMode};
use crate::link::{loss_db, snr, snr_from};
use crate::optical::DetectionNoise;
use crate::postproc::{sift, swapped_order_session, SessionOutcome, SiftedBlock};
use crate::privacy::{final_length, toeplitz_hash, write_key, KeySidecar, ToeplitzSpec};
use crate::reconciliation::{build_met_code, effective_rate, efficiency, RateAdaptConfig, ReconcileOptions};
use crate::rng::{derive, Stream};

/// Floor on the noise variance handed to the LLR computation.
pub const MIN_NOISE_VAR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub frames: usize,
    pub phase_below_1deg: f64,
    pub max_abs_phase_deg: f64,
    pub max_pol_fluctuation: f64,
    pub timing_locked: f64,
    pub timing_below_200ps: f64,
    pub max_abs_timing_ps: f64,
}

impl CalibrationSummary {
    pub fn from_reports(reports: &[CalibrationReport]) -> Self {
        let locked: Vec<f64> = reports
            .iter()
            .filter(|r| r.timing_locked)
            .map(|r| r.timing_error_s)
            .collect();
        CalibrationSummary {
            frames: reports.len(),
            phase_below_1deg: fraction_below(reports.iter().map(|r| r.residual_phase_rad), DEG),
            max_abs_phase_deg: reports
                .iter()
                .map(|r| r.residual_phase_rad.abs().to_degrees())
                .fold(0.0, f64::max),
            max_pol_fluctuation: reports.iter().map(|r| r.pol_power_fluctuation).fold(0.0, f64::max),
            timing_locked: if reports.is_empty() {
                0.0
            } else {
                locked.len() as f64 / reports.len() as f64
            },
            timing_below_200ps: fraction_below(locked.iter().copied(), 200e-12),
            max_abs_timing_ps: locked.iter().map(|t| t.abs() * 1e12).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSummary {
    pub ensemble: String,
    pub n: usize,
    pub k: usize,
    pub punctured: usize,
    pub shortened: usize,
    pub effective_rate: f64,
    /// Efficiency of the effective rate at the nominal SNR.
    pub beta_nominal: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySummary {
    pub in_len: usize,
    pub out_len: usize,
    pub insecure: bool,
    /// `R_eff / I(A:B)` at the estimated channel.
    pub beta_realized: f64,
    pub mode: RateMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub version: String,
    pub config_hash: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub loss_db: f64,
    pub transmittance: f64,
    pub snr_nominal: f64,
    pub calibration: CalibrationSummary,
    pub sifted_samples: usize,
    pub discarded_samples: usize,
    pub code: CodeSummary,
    pub outcome: SessionOutcome,
    /// Field operating point (configured β and FER) at the estimated channel.
    pub keyrate_configured: Option<KeyRateReport>,
    /// Desk operating point (realized β, observed FER) at the estimated channel.
    pub keyrate_realized: Option<KeyRateReport>,
    pub key: KeySummary,
}

pub struct SessionArtifacts {
    pub report: SessionReport,
    pub calibration: Vec<CalibrationReport>,
    pub final_key: Vec<u8>,
}

/// Runs the session described by `cfg`; relative ensemble paths resolve
/// against `base`. Frames go to `frames_out` when given.
pub fn simulate(cfg: &RunConfig, base: &Path, frames_out: Option<&mut dyn Write>) -> Result<SessionArtifacts> {
    cfg.validate()?;
    let system = cfg.system;
    let det = system.detector;
    let t = system.transmittance();
    let va = system.modulation_variance_snu;
    let snr_nominal = snr(&system);

    let mut sifted = SiftedBlock::default();
    let mut sink = frames_out;
    let calibration = run_closed_loop(&cfg.loop_config(), |f| {
        if let Some(w) = sink.as_deref_mut() {
            write_frame_pair(&mut *w, f.alice, f.bob)?;
        }
        sifted.extend(&sift(f.alice, f.bob)?);
        Ok(())
    })?;

    let blocks: Vec<SiftedBlock> = sifted
        .alice
        .chunks_exact(cfg.code_n)
        .zip(sifted.bob.chunks_exact(cfg.code_n))
        .map(|(a, b)| SiftedBlock::new(a.to_vec(), b.to_vec()))
        .collect::<Result<_>>()?;
    let used = blocks.len() * cfg.code_n;

    let ensemble = cfg.load_ensemble(base)?;
    let code_seed = derive(cfg.seed, Stream::Construction as u64);
    let code = build_met_code(&ensemble, cfg.code_n, code_seed)?;
    let adapt = RateAdaptConfig::for_efficiency(&code, snr_nominal, cfg.target_beta, code_seed)?;
    let r_eff = effective_rate(&code, &adapt)?;

    let gain = (det.efficiency * t).sqrt();
    let noise_var = match cfg.detection {
        DetectionNoise::Physical => 1.0 + det.electronic_noise_snu + det.efficiency * t * system.channel.excess_noise_snu,
        DetectionNoise::Noiseless => 0.0,
    }
    .max(MIN_NOISE_VAR);
    let opts = ReconcileOptions {
        dimension: cfg.dimension,
        max_iter: cfg.max_iter,
        gain,
        noise_var,
    };
    let outcome = swapped_order_session(
        &blocks,
        &code,
        &adapt,
        &opts,
        &det,
        va,
        cfg.eps_pe,
        cfg.session_order,
        derive(cfg.seed, Stream::CodeBits as u64),
    )?;

    let mut model = cfg.rate_model();
    model.block_size = outcome.n_used_pe.max(1) as f64;
    let (configured, realized) = match &outcome.estimate {
        Some(est) => {
            let t_hat = est.transmittance_for_keyrate();
            let worst = Some((est.transmittance_low(&det), est.xi_high));
            let configured = rate_from_bounds(&model, va, t_hat, est.xi_hat, worst)?;
            let iab_hat = crate::keyrate::mutual_information(snr_from(
                va,
                t_hat,
                est.xi_hat,
                det.efficiency,
                det.electronic_noise_snu,
            ));
            let realized = if outcome.fer_observed < 1.0 && iab_hat > 0.0 {
                let mut m = model;
                m.beta = (r_eff / iab_hat).min(1.0);
                m.fer = outcome.fer_observed;
                Some(rate_from_bounds(&m, va, t_hat, est.xi_hat, worst)?)
            } else {
                None
            };
            (Some(configured), realized)
        }
        None => (None, None),
    };

    let key_in: Vec<u8> = outcome.key_bits.concat();
    let (out_len, insecure, beta_realized) = match &realized {
        Some(r) => {
            let (chi, delta) = match cfg.mode {
                RateMode::Asymptotic => (r.chi_be, 0.0),
                RateMode::Finite => (r.chi_be_finite, r.delta_n),
            };
            let (len, insecure) = final_length(key_in.len(), r.beta, r.iab, chi, delta);
            (len, insecure, r.beta)
        }
        None => (0, true, 0.0),
    };
    let final_key = if out_len > 0 {
        let spec = ToeplitzSpec::from_seed(key_in.len(), out_len, derive(cfg.seed, Stream::Privacy as u64))?;
        toeplitz_hash(&key_in, &spec)?
    } else {
        Vec::new()
    };

    let report = SessionReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        loss_db: loss_db(&system.channel),
        transmittance: t,
        snr_nominal,
        calibration: CalibrationSummary::from_reports(&calibration),
        sifted_samples: sifted.n(),
        discarded_samples: sifted.n() - used,
        code: CodeSummary {
            ensemble: cfg.ensemble.clone(),
            n: code.n_bits,
            k: code.k_bits,
            punctured: adapt.punctured.len(),
            shortened: adapt.shortened.len(),
            effective_rate: r_eff,
            beta_nominal: efficiency(r_eff, snr_nominal)?,
            dimension: cfg.dimension,
        },
        outcome,
        keyrate_configured: configured,
        keyrate_realized: realized,
        key: KeySummary {
            in_len: key_in.len(),
            out_len,
            insecure,
            beta_realized,
            mode: cfg.mode,
        },
    };
    Ok(SessionArtifacts {
        report,
        calibration,
        final_key,
    })
}

/// Runs [`simulate`] and writes `report.json`, `calibration.csv`, `key.bin`,
/// `key.json` and, with `save_frames`, `frames.bin` into `out_dir`.
pub fn simulate_to_dir(cfg: &RunConfig, base: &Path, out_dir: &Path) -> Result<SessionArtifacts> {
    fs::create_dir_all(out_dir)?;
    let artifacts = if cfg.save_frames {
        let mut w = BufWriter::new(fs::File::create(out_dir.join("frames.bin"))?);
        let a = simulate(cfg, base, Some(&mut w))?;
        w.flush()?;
        a
    } else {
        simulate(cfg, base, None)?
    };
    let report = &artifacts.report;

    let mut f = fs::File::create(out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(f)?;

    let csv = BufWriter::new(fs::File::create(out_dir.join("calibration.csv"))?);
    write_report_csv(csv, &artifacts.calibration, &cfg.provenance())?;

    let (iab, chi, delta) = match &report.keyrate_realized {
        Some(r) => match cfg.mode {
            RateMode::Asymptotic => (r.iab, r.chi_be, 0.0),
            RateMode::Finite => (r.iab, r.chi_be_finite, r.delta_n),
        },
        None => (0.0, 0.0, 0.0),
    };
    let sidecar = KeySidecar {
        session_id: format!("{}-{}", report.config_hash, cfg.seed),
        in_len: report.key.in_len,
        out_len: report.key.out_len,
        beta: report.key.beta_realized,
        iab,
        chi,
        delta,
        insecure: report.key.insecure,
        seed: cfg.seed,
    };
    write_key(out_dir, "key", &artifacts.final_key, &sidecar)?;
    Ok(artifacts)
}

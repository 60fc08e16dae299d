//! Rate adaptation by puncturing and shortening, reconciliation efficiency and
//! the operating-point search.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::code::CodeSpec;
use crate::error::{invalid, Error, Result};
use crate::keyrate::mutual_information;
use crate::rng::{stream_rng, Stream};

/// Punctured and shortened positions. The two sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RateAdaptConfig {
    pub punctured: Vec<usize>,
    pub shortened: Vec<usize>,
}

impl RateAdaptConfig {
    pub fn none() -> Self {
        Self::default()
    }

    /// `p` punctured and `s` shortened positions drawn from one seeded
    /// permutation: punctured sets are prefixes and shortened sets suffixes of
    /// it, so configurations with the same seed are nested.
    pub fn nested(code: &CodeSpec, p: usize, s: usize, seed: u64) -> Result<Self> {
        let n = code.n_bits;
        if p + s >= n {
            return Err(invalid("p + s", format!("{} must be below n = {n}", p + s)));
        }
        if s >= code.k_bits {
            return Err(invalid("s", format!("{s} leaves no information bits (k = {})", code.k_bits)));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream_rng(seed, Stream::Puncture));
        let mut punctured = perm[..p].to_vec();
        let mut shortened = perm[n - s..].to_vec();
        punctured.sort_unstable();
        shortened.sort_unstable();
        Ok(RateAdaptConfig { punctured, shortened })
    }

    /// Configuration whose effective rate is closest to `beta·C(snr)`.
    pub fn for_efficiency(code: &CodeSpec, snr: f64, beta: f64, seed: u64) -> Result<Self> {
        let target = beta * mutual_information(snr);
        let (p, s) = counts_for_rate(code, target)?;
        Self::nested(code, p, s, seed)
    }

    pub fn validate(&self, code: &CodeSpec) -> Result<()> {
        let n = code.n_bits;
        if self.punctured.len() + self.shortened.len() >= n {
            return Err(invalid("p + s", "must be below n"));
        }
        let mut seen = vec![false; n];
        for &i in self.punctured.iter().chain(&self.shortened) {
            if i >= n || seen[i] {
                return Err(invalid("positions", format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        effective_rate(code, self).map(|_| ())
    }

    pub fn mask(&self, n: usize) -> Vec<Slot> {
        let mut m = vec![Slot::Transmitted; n];
        for &i in &self.punctured {
            m[i] = Slot::Punctured;
        }
        for &i in &self.shortened {
            m[i] = Slot::Shortened;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Transmitted,
    Punctured,
    Shortened,
}

/// `(k − s)/(n − p − s)`.
pub fn effective_rate(code: &CodeSpec, adapt: &RateAdaptConfig) -> Result<f64> {
    let (n, k) = (code.n_bits as f64, code.k_bits as f64);
    let (p, s) = (adapt.punctured.len() as f64, adapt.shortened.len() as f64);
    let denom = n - p - s;
    if denom <= 0.0 {
        return Err(invalid("n − p − s", format!("{denom} must be > 0")));
    }
    let r = (k - s) / denom;
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid("effective rate", format!("{r} not in (0, 1)")));
    }
    Ok(r)
}

/// `β = R / (0.5·log2(1 + snr))`.
pub fn efficiency(rate: f64, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(invalid("snr", format!("{snr} must be > 0")));
    }
    Ok(rate / mutual_information(snr))
}

/// Puncture count `p` (for rates above the mother rate) or shorten count `s`
/// (below it) that brings the effective rate nearest to `target`.
pub fn counts_for_rate(code: &CodeSpec, target: f64) -> Result<(usize, usize)> {
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid("target rate", format!("{target} not in (0, 1)")));
    }
    let (n, k) = (code.n_bits as f64, code.k_bits as f64);
    if target >= code.mother_rate() {
        // k/(n − p) = R
        let p = (n - k / target).round().max(0.0) as usize;
        if p >= code.n_bits - code.k_bits {
            return Err(invalid("target rate", format!("{target} needs too much puncturing")));
        }
        Ok((p, 0))
    } else {
        // (k − s)/(n − s) = R
        let s = ((k - target * n) / (1.0 - target)).round().max(0.0) as usize;
        Ok((0, s.min(code.k_bits - 1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FerPoint {
    pub beta: f64,
    pub fer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub adapt: RateAdaptConfig,
    /// Efficiency realized by the integer `(p, s)` at the session SNR.
    pub beta: f64,
    pub fer: f64,
    /// `(1 − FER)·(β·I − χ − Δ)` in bits per pulse.
    pub objective: f64,
}

/// Picks the table entry maximizing `(1 − FER)·(β·I − χ − Δ)` at the mean of
/// `snr_samples`; ties go to the lower FER. Entries whose rate cannot be
/// realized by the code are skipped.
pub fn choose_operating_point(
    snr_samples: &[f64],
    code: &CodeSpec,
    fer_model: &[FerPoint],
    chi: f64,
    delta: f64,
    seed: u64,
) -> Result<OperatingPoint> {
    if snr_samples.is_empty() {
        return Err(invalid("snr_samples", "empty"));
    }
    let snr = snr_samples.iter().sum::<f64>() / snr_samples.len() as f64;
    let iab = mutual_information(snr);
    let mut best: Option<OperatingPoint> = None;
    for pt in fer_model {
        let Ok(adapt) = RateAdaptConfig::for_efficiency(code, snr, pt.beta, seed) else {
            continue;
        };
        let Ok(rate) = effective_rate(code, &adapt) else {
            continue;
        };
        let beta = rate / iab;
        let objective = (1.0 - pt.fer) * (beta * iab - chi - delta);
        let better = match &best {
            None => true,
            Some(b) => {
                objective > b.objective + 1e-15 || ((objective - b.objective).abs() <= 1e-15 && pt.fer < b.fer)
            }
        };
        if better {
            best = Some(OperatingPoint {
                adapt,
                beta,
                fer: pt.fer,
                objective,
            });
        }
    }
    best.ok_or_else(|| Error::Unsatisfiable("no realizable operating point".into()))
}

#[cfg(test)]
mod tests {
    use super::super::code::{build_met_code, Ensemble};
    use super::*;

    fn code_with(n: usize, k: usize) -> CodeSpec {
        // n − k independent single-bit checks plus coverage of the rest.
        let m = n - k;
        let mut rows: Vec<Vec<u32>> = (0..m).map(|i| vec![i as u32]).collect();
        for j in m..n {
            rows[j % m].push(j as u32);
        }
        CodeSpec::from_rows(n, rows, None, 0).unwrap()
    }

    #[test]
    fn effective_rate_values() {
        let code = code_with(100_000, 2000);
        assert_eq!(code.k_bits, 2000);
        let none = RateAdaptConfig::none();
        assert!((effective_rate(&code, &none).unwrap() - 0.02).abs() < 1e-15);
        let cfg = RateAdaptConfig::nested(&code, 0, 1000, 1).unwrap();
        assert!((effective_rate(&code, &cfg).unwrap() - 1000.0 / 99000.0).abs() < 1e-15);
    }

    #[test]
    fn efficiency_anchors() {
        assert!((efficiency(0.02, 0.0287).unwrap() - 0.9799).abs() < 5e-4);
        assert!((efficiency(0.02, 0.0296).unwrap() - 0.950).abs() < 1e-3);
        assert!((efficiency(0.5, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(efficiency(0.02, 0.0).is_err());
    }

    #[test]
    fn puncturing_inversion() {
        let code = code_with(100_000, 2000);
        for beta in [0.95, 0.97, 0.99] {
            let snr = 0.0287;
            let cfg = RateAdaptConfig::for_efficiency(&code, snr, beta, 4).unwrap();
            let got = efficiency(effective_rate(&code, &cfg).unwrap(), snr).unwrap();
            assert!((got - beta).abs() < 1e-3, "{beta}: {got}");
        }
        let cfg = RateAdaptConfig::for_efficiency(&code, 0.0287, 0.9, 4).unwrap();
        assert!(cfg.punctured.is_empty() && !cfg.shortened.is_empty());
    }

    #[test]
    fn nested_sets_are_disjoint_prefixes() {
        let code = code_with(1000, 100);
        let a = RateAdaptConfig::nested(&code, 10, 5, 3).unwrap();
        let b = RateAdaptConfig::nested(&code, 20, 5, 3).unwrap();
        assert!(a.punctured.iter().all(|i| b.punctured.contains(i)));
        assert_eq!(a.shortened, b.shortened);
        a.validate(&code).unwrap();
        assert!(RateAdaptConfig::nested(&code, 900, 100, 3).is_err());
    }

    #[test]
    fn zero_fer_picks_largest_beta() {
        let code = code_with(100_000, 2000);
        let table: Vec<FerPoint> = [0.9, 0.93, 0.96, 0.99]
            .iter()
            .map(|&beta| FerPoint { beta, fer: 0.0 })
            .collect();
        let op = choose_operating_point(&[0.0296], &code, &table, 0.015, 0.0, 1).unwrap();
        assert!((op.beta - 0.99).abs() < 1e-3);
        assert!(choose_operating_point(&[], &code, &table, 0.0, 0.0, 1).is_err());
        assert!(choose_operating_point(&[0.03], &code, &[], 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn interior_optimum_matches_grid_oracle() {
        let code = code_with(100_000, 2000);
        let snr = 0.0296;
        let iab = mutual_information(snr);
        let chi = 0.0175;
        let table: Vec<FerPoint> = (0..=10)
            .map(|i| {
                let beta = 0.90 + 0.009 * i as f64;
                FerPoint {
                    beta,
                    fer: 1.0 / (1.0 + (-(beta - 0.955) / 0.008).exp()),
                }
            })
            .collect();
        let op = choose_operating_point(&[snr], &code, &table, chi, 0.0, 1).unwrap();
        let oracle = table
            .iter()
            .max_by(|a, b| {
                ((1.0 - a.fer) * (a.beta * iab - chi)).total_cmp(&((1.0 - b.fer) * (b.beta * iab - chi)))
            })
            .unwrap();
        assert!((op.fer - oracle.fer).abs() < 1e-12);
        assert!(op.beta > table[0].beta + 1e-3 && op.beta < table[10].beta - 1e-3);
    }

    #[test]
    fn field_anchor_selects_95_percent() {
        let code = code_with(100_000, 2000);
        let table = [FerPoint { beta: 0.95, fer: 0.1 }, FerPoint { beta: 0.9799, fer: 0.9 }];
        let op = choose_operating_point(&[0.0296], &code, &table, 0.0165, 0.0, 1).unwrap();
        assert!((op.beta - 0.95).abs() < 1e-3);
        assert_eq!(op.fer, 0.1);
    }

    #[test]
    fn adaptive_beta_is_steadier_than_fixed() {
        let code = build_met_code(&Ensemble::met_rate_002(), 20_000, 2).unwrap();
        let trajectory: Vec<f64> = (0..50).map(|i| 0.0287 + 0.0009 * ((i as f64) * 0.7).sin().abs()).collect();
        let std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let fixed: Vec<f64> = trajectory
            .iter()
            .map(|&s| efficiency(code.mother_rate(), s).unwrap())
            .collect();
        let adaptive: Vec<f64> = trajectory
            .iter()
            .map(|&s| {
                let cfg = RateAdaptConfig::for_efficiency(&code, s, 0.95, 1).unwrap();
                efficiency(effective_rate(&code, &cfg).unwrap(), s).unwrap()
            })
            .collect();
        assert!(std(&adaptive) < std(&fixed));
        assert!(adaptive.iter().all(|b| (b - 0.95).abs() < 0.0095));
    }
}

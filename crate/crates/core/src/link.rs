//! Link-budget arithmetic and the shared parameter types.
//!
//! All noise quantities are in shot-noise units (SNU): the vacuum quadrature
//! variance is 1, Alice's total variance is `V = V_A + 1`, and the excess noise
//! is referred to the channel input.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Fiber channel between Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub length_km: f64,
    pub atten_db_per_km: f64,
    /// Excess noise referred to the channel input (SNU).
    pub excess_noise_snu: f64,
}

impl ChannelParams {
    pub fn new(length_km: f64, atten_db_per_km: f64, excess_noise_snu: f64) -> Result<Self> {
        let c = ChannelParams {
            length_km,
            atten_db_per_km,
            excess_noise_snu,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("length_km", self.length_km)?;
        non_negative("atten_db_per_km", self.atten_db_per_km)?;
        non_negative("excess_noise_snu", self.excess_noise_snu)
    }

    pub fn loss_db(&self) -> f64 {
        loss_db(self)
    }

    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db() / 10.0)
    }
}

/// Bob's balanced homodyne detector (trusted-receiver model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub electronic_noise_snu: f64,
}

impl DetectorParams {
    pub const DEFAULT_EFFICIENCY: f64 = 0.5;
    pub const DEFAULT_ELECTRONIC_NOISE: f64 = 0.1;

    pub fn new(efficiency: f64, electronic_noise_snu: f64) -> Result<Self> {
        let d = DetectorParams {
            efficiency,
            electronic_noise_snu,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", format!("{} not in (0, 1]", self.efficiency)));
        }
        non_negative("electronic_noise_snu", self.electronic_noise_snu)
    }

    /// Noise added by the detector, referred to its input: `(1 + v_el)/η − 1`.
    pub fn chi_hom(&self) -> f64 {
        (1.0 + self.electronic_noise_snu) / self.efficiency - 1.0
    }
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            efficiency: Self::DEFAULT_EFFICIENCY,
            electronic_noise_snu: Self::DEFAULT_ELECTRONIC_NOISE,
        }
    }
}

/// Complete link description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub modulation_variance_snu: f64,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub rep_rate_hz: f64,
    /// Fraction of pulses that never contribute key material.
    pub overhead: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.modulation_variance_snu > 0.0 && self.modulation_variance_snu.is_finite()) {
            return Err(invalid(
                "modulation_variance_snu",
                format!("{} must be > 0", self.modulation_variance_snu),
            ));
        }
        if !(self.rep_rate_hz > 0.0 && self.rep_rate_hz.is_finite()) {
            return Err(invalid("rep_rate_hz", format!("{} must be > 0", self.rep_rate_hz)));
        }
        if !(0.0..1.0).contains(&self.overhead) {
            return Err(invalid("overhead", format!("{} not in [0, 1)", self.overhead)));
        }
        self.channel.validate()?;
        self.detector.validate()
    }

    pub fn transmittance(&self) -> f64 {
        self.channel.transmittance()
    }

    pub fn snr(&self) -> f64 {
        snr(self)
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be finite and >= 0")))
    }
}

pub fn loss_db(channel: &ChannelParams) -> f64 {
    channel.length_km * channel.atten_db_per_km
}

pub fn transmittance(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(invalid("loss_db", format!("{loss_db} must be >= 0")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Inverse of [`transmittance`].
pub fn transmittance_to_db(t: f64) -> f64 {
    -10.0 * t.log10()
}

/// Trusted-receiver signal-to-noise ratio `ηT·V_A / (1 + v_el + ηT·ξ)`.
pub fn snr(params: &SystemParams) -> f64 {
    snr_from(
        params.modulation_variance_snu,
        params.transmittance(),
        params.channel.excess_noise_snu,
        params.detector.efficiency,
        params.detector.electronic_noise_snu,
    )
}

pub fn snr_from(va: f64, t: f64, xi: f64, eta: f64, v_el: f64) -> f64 {
    let gain = eta * t;
    gain * va / (1.0 + v_el + gain * xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(va: f64, t_db: f64, xi: f64, eta: f64, v_el: f64) -> SystemParams {
        SystemParams {
            modulation_variance_snu: va,
            channel: ChannelParams::new(t_db, 1.0, xi).unwrap(),
            detector: DetectorParams::new(eta, v_el).unwrap(),
            rep_rate_hz: 5e6,
            overhead: 0.0,
        }
    }

    #[test]
    fn field_link_budgets() {
        let xian = ChannelParams::new(30.02, 0.416, 0.04).unwrap();
        let gz = ChannelParams::new(49.85, 0.233, 0.04).unwrap();
        assert!((loss_db(&xian) - 12.48).abs() <= 0.01);
        assert!((loss_db(&gz) - 11.62).abs() <= 0.01);
        assert_eq!(loss_db(&ChannelParams::new(0.0, 0.3, 0.0).unwrap()), 0.0);
    }

    #[test]
    fn transmittance_values() {
        assert_eq!(transmittance(0.0).unwrap(), 1.0);
        assert!((transmittance(10.0).unwrap() - 0.1).abs() < 1e-15);
        // 10^(-1.248), evaluated at 30 digits
        let golden = 0.056_493_697_481_230_25;
        assert!((transmittance(12.48).unwrap() - golden).abs() < 1e-15);
        assert!(transmittance(-0.1).is_err());
    }

    #[test]
    fn snr_values() {
        assert_eq!(params(1.0, 0.0, 0.0, 1.0, 0.0).snr(), 1.0);
        assert_eq!(params(2.0, 0.0, 0.0, 1.0, 0.0).snr(), 2.0);
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(ChannelParams::new(-1.0, 0.2, 0.0).is_err());
        assert!(ChannelParams::new(1.0, 0.2, -0.01).is_err());
        assert!(DetectorParams::new(0.0, 0.1).is_err());
        assert!(DetectorParams::new(1.2, 0.1).is_err());
        assert!(DetectorParams::new(0.5, -0.1).is_err());
        let mut p = params(1.0, 0.0, 0.0, 1.0, 0.0);
        p.overhead = 1.0;
        assert!(p.validate().is_err());
        p.overhead = 0.1;
        p.modulation_variance_snu = 0.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn db_round_trip(loss in 0.0f64..80.0) {
            let back = transmittance_to_db(transmittance(loss).unwrap());
            prop_assert!((back - loss).abs() <= 1e-12 * loss.max(1.0));
        }

        #[test]
        fn transmittance_strictly_decreasing(a in 0.0f64..60.0, d in 1e-6f64..10.0) {
            prop_assert!(transmittance(a + d).unwrap() < transmittance(a).unwrap());
        }

        #[test]
        fn loss_linear_in_length(l in 0.0f64..200.0, a in 0.0f64..1.0) {
            let one = loss_db(&ChannelParams::new(l, a, 0.0).unwrap());
            let two = loss_db(&ChannelParams::new(2.0 * l, a, 0.0).unwrap());
            prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two.max(1.0));
        }

        #[test]
        fn snr_monotone(
            va in 0.1f64..50.0, loss in 0.0f64..30.0, xi in 0.0f64..0.2,
            eta in 0.2f64..0.99, v_el in 0.0f64..0.5,
        ) {
            let base = params(va, loss, xi, eta, v_el).snr();
            let h = 1e-3;
            prop_assert!(params(va * (1.0 + h), loss, xi, eta, v_el).snr() > base);
            prop_assert!(params(va, loss + h, xi, eta, v_el).snr() < base);
            prop_assert!(params(va, loss, xi, eta, v_el + h).snr() < base);
            prop_assert!(params(va, loss, xi + h, eta, v_el).snr() < base);
        }
    }
}

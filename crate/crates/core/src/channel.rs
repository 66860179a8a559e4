//! Shannon-rate link model between neighbouring RSUs.

use serde::{Deserialize, Serialize};

/// Link budget for the premigration RSU to coalition channel.
///
/// Transmit power and noise power are both absolute powers quoted against the
/// same 1 mW reference, so only their difference enters the SNR. The unit
/// channel gain is a plain dB ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Transmitter power, dBm.
    pub tx_power_dbm: f64,
    /// Unit channel power gain, dB.
    pub unit_gain_db: f64,
    /// Average distance between RSUs, metres.
    pub distance_m: f64,
    /// Path-loss exponent.
    pub pathloss_exp: f64,
    /// Average noise power, dBm.
    pub noise_power_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 40.0,
            unit_gain_db: -20.0,
            distance_m: 500.0,
            pathloss_exp: 2.0,
            noise_power_dbm: -150.0,
        }
    }
}

/// `10^(db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Absolute power in watts for a dBm figure.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return Err("distance must be positive".into());
        }
        if !(self.pathloss_exp >= 0.0 && self.pathloss_exp.is_finite()) {
            return Err("path-loss exponent must be non-negative".into());
        }
        for (name, v) in [
            ("tx power", self.tx_power_dbm),
            ("unit gain", self.unit_gain_db),
            ("noise power", self.noise_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Linear received SNR `rho * h0 * d^-eps / N0`.
    pub fn snr(&self) -> f64 {
        let tx = dbm_to_watts(self.tx_power_dbm);
        let noise = dbm_to_watts(self.noise_power_dbm);
        tx * db_to_linear(self.unit_gain_db) * self.distance_m.powf(-self.pathloss_exp) / noise
    }

    /// Spectral efficiency `log2(1 + SNR)` in bit/s/Hz. Multiplying by a
    /// bandwidth in MHz yields a rate in Mb/s.
    pub fn spectral_efficiency(&self) -> f64 {
        spectral_efficiency_from_snr(self.snr())
    }
}

pub fn spectral_efficiency_from_snr(snr: f64) -> f64 {
    (1.0 + snr).log2()
}

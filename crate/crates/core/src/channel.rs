//! Per-user, per-subcarrier channel gains for AWGN, flat Rayleigh and EPA
//! multipath channels, plus the additive noise source.
//!
//! Gains are frequency-domain and static for the duration of a consensus run.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AirconError, Result};

pub const DEFAULT_SUBCARRIERS: usize = 72;
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 1.92e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Flat,
    Epa,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Flat => "flat",
            ChannelKind::Epa => "epa",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = AirconError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "flat" => Ok(ChannelKind::Flat),
            "epa" => Ok(ChannelKind::Epa),
            other => Err(AirconError::config(format!("unsupported channel kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    #[serde(default = "default_subcarriers")]
    pub num_subcarriers: usize,
    #[serde(default = "default_sampling_rate")]
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_subcarriers() -> usize {
    DEFAULT_SUBCARRIERS
}

fn default_sampling_rate() -> f64 {
    DEFAULT_SAMPLING_RATE_HZ
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, snr_db: f64) -> Self {
        ChannelConfig {
            kind,
            snr_db,
            num_subcarriers: DEFAULT_SUBCARRIERS,
            sampling_rate_hz: DEFAULT_SAMPLING_RATE_HZ,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 {
            return Err(AirconError::config("num_subcarriers must be at least 1"));
        }
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(AirconError::config("sampling_rate_hz must be positive"));
        }
        // +inf is accepted and means a noiseless link
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(AirconError::config("snr_db must not be NaN or -inf"));
        }
        Ok(())
    }

    /// Noise variance per complex sample for unit per-user signal power.
    pub fn noise_var(&self) -> f64 {
        snr_db_to_noise_var(self.snr_db)
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Frequency of subcarrier `n`, `n / (N · T_s)`.
    pub fn subcarrier_freq_hz(&self, n: usize) -> f64 {
        n as f64 * self.sampling_rate_hz / self.num_subcarriers as f64
    }
}

pub fn snr_db_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Extended Pedestrian A tapped delay line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpaProfile {
    pub delays_ns: [f64; 7],
    pub powers_db: [f64; 7],
}

pub const EPA: EpaProfile = EpaProfile {
    delays_ns: [0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0],
    powers_db: [0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8],
};

impl EpaProfile {
    /// Linear tap powers normalized to unit total power.
    pub fn normalized_powers(&self) -> [f64; 7] {
        let mut p = self.powers_db.map(|db| 10f64.powf(db / 10.0));
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// Frequency correlation `E{h(f_i) h(f_j)*}` between two subcarriers.
    pub fn frequency_correlation(&self, delta_f_hz: f64) -> Complex64 {
        self.normalized_powers()
            .iter()
            .zip(self.delays_ns.iter())
            .map(|(p, d)| Complex64::from_polar(*p, -2.0 * PI * delta_f_hz * d * 1e-9))
            .sum()
    }

    /// Channel autocorrelation matrix at the given subcarrier indices.
    pub fn correlation_matrix(&self, cfg: &ChannelConfig, positions: &[usize]) -> DMatrix<Complex64> {
        DMatrix::from_fn(positions.len(), positions.len(), |i, j| {
            let df = cfg.subcarrier_freq_hz(positions[i]) - cfg.subcarrier_freq_hz(positions[j]);
            self.frequency_correlation(df)
        })
    }
}

/// Gains `h_kn` for K users over N subcarriers plus the BS noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    gains: Vec<Vec<Complex64>>,
    pub noise_var: f64,
}

impl ChannelRealization {
    pub fn new(gains: Vec<Vec<Complex64>>, noise_var: f64) -> Result<Self> {
        let n = gains.first().map(Vec::len).unwrap_or(0);
        if gains.iter().any(|row| row.len() != n) {
            return Err(AirconError::invalid("ragged gain matrix"));
        }
        if gains.iter().flatten().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(AirconError::invalid("non-finite channel gain"));
        }
        if !(noise_var >= 0.0) {
            return Err(AirconError::invalid("noise variance must be non-negative"));
        }
        Ok(ChannelRealization { gains, noise_var })
    }

    pub fn num_users(&self) -> usize {
        self.gains.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.gains.first().map(Vec::len).unwrap_or(0)
    }

    pub fn gain(&self, user: usize, subcarrier: usize) -> Complex64 {
        self.gains[user][subcarrier]
    }

    pub fn user_gains(&self, user: usize) -> &[Complex64] {
        &self.gains[user]
    }

    pub fn gains(&self) -> &[Vec<Complex64>] {
        &self.gains
    }

    pub(crate) fn gains_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.gains
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let d = Normal::new(0.0, (var / 2.0).sqrt()).expect("variance is finite and non-negative");
    Complex64::new(d.sample(rng), d.sample(rng))
}

/// Realizes a channel for `k` users using `cfg.seed`.
pub fn realize_channel(cfg: &ChannelConfig, k: usize) -> Result<ChannelRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    realize_channel_with(cfg, k, &mut rng)
}

/// Realizes a channel drawing from an explicit random stream.
///
/// EPA taps are independent zero-mean complex Gaussians with the table
/// powers (uniform phase, Rayleigh magnitude); the per-subcarrier gain is the
/// delay-line transfer function evaluated at `n / (N · T_s)`.
pub fn realize_channel_with<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    k: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    if k == 0 {
        return Err(AirconError::invalid("at least one user is required"));
    }
    let n = cfg.num_subcarriers;
    let gains = match cfg.kind {
        ChannelKind::Awgn => vec![vec![Complex64::new(1.0, 0.0); n]; k],
        ChannelKind::Flat => (0..k)
            .map(|_| vec![complex_gaussian(rng, 1.0); n])
            .collect(),
        ChannelKind::Epa => {
            let powers = EPA.normalized_powers();
            let freqs: Vec<f64> = (0..n).map(|i| cfg.subcarrier_freq_hz(i)).collect();
            (0..k)
                .map(|_| {
                    let taps: Vec<Complex64> = powers.iter().map(|p| complex_gaussian(rng, *p)).collect();
                    freqs
                        .iter()
                        .map(|f| {
                            taps.iter()
                                .zip(EPA.delays_ns.iter())
                                .map(|(a, d)| a * Complex64::from_polar(1.0, -2.0 * PI * f * d * 1e-9))
                                .sum()
                        })
                        .collect()
                })
                .collect()
        }
    };
    ChannelRealization::new(gains, cfg.noise_var())
}

/// Adds circularly-symmetric complex Gaussian noise of variance `noise_var`
/// per complex sample.
pub fn add_noise<R: Rng + ?Sized>(x: &[Complex64], noise_var: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(AirconError::invalid(format!("invalid noise variance {noise_var}")));
    }
    if noise_var == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter().map(|v| v + complex_gaussian(rng, noise_var)).collect())
}

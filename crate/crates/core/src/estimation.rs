//! Uplink CSI acquisition: pilot scheduling, LS and LMMSE estimation,
//! channel-inverting feedback coefficients and their interpolation across
//! subcarriers.
//!
//! User `k` sends unit pilots on subcarriers `k mod M, k mod M + M, ...` in
//! OFDM symbol `k / M`, so at most `M` users share a symbol.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, snr_db_to_noise_var, ChannelConfig, ChannelKind, ChannelRealization, EPA};
use crate::error::{AirconError, Result};
use crate::phy::{Downlink, PrecompensationMatrix};

/// Estimates below this magnitude are treated as deep fades.
pub const DEEP_FADE_THRESHOLD: f64 = 1e-6;

pub const DEFAULT_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMethod {
    /// Exact inversion of the true channel.
    Perfect,
    Ls,
    #[default]
    Lmmse,
}

impl EstimationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMethod::Perfect => "perfect",
            EstimationMethod::Ls => "ls",
            EstimationMethod::Lmmse => "lmmse",
        }
    }
}

/// Where the LMMSE filter's channel autocorrelation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RhhSource {
    /// Channel-model correlation (all-ones for AWGN and flat, EPA delay profile otherwise).
    #[default]
    Model,
    /// Sample autocorrelation of the LS estimates pooled over users.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(default)]
    pub method: EstimationMethod,
    /// Pilot stride `M`.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Number of pilot and feedback transmissions `R`.
    #[serde(default = "default_retransmissions")]
    pub retransmissions: usize,
    #[serde(default)]
    pub rhh: RhhSource,
    #[serde(default)]
    pub feedback: Downlink,
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

fn default_retransmissions() -> usize {
    1
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            method: EstimationMethod::Lmmse,
            stride: DEFAULT_STRIDE,
            retransmissions: 1,
            rhh: RhhSource::Model,
            feedback: Downlink::Ideal,
        }
    }
}

impl EstimationConfig {
    pub fn perfect() -> Self {
        EstimationConfig { method: EstimationMethod::Perfect, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(AirconError::config("pilot stride must be at least 1"));
        }
        if self.retransmissions == 0 {
            return Err(AirconError::config("retransmissions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotSchedule {
    stride: usize,
    num_users: usize,
    num_subcarriers: usize,
}

impl PilotSchedule {
    pub fn new(num_users: usize, stride: usize, num_subcarriers: usize) -> Result<Self> {
        if stride == 0 || stride > num_subcarriers {
            return Err(AirconError::invalid(format!(
                "stride {stride} outside [1, {num_subcarriers}]"
            )));
        }
        if num_users == 0 {
            return Err(AirconError::invalid("schedule needs at least one user"));
        }
        Ok(PilotSchedule { stride, num_users, num_subcarriers })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn offset(&self, user: usize) -> usize {
        user % self.stride
    }

    pub fn positions(&self, user: usize) -> Vec<usize> {
        (self.offset(user)..self.num_subcarriers).step_by(self.stride).collect()
    }

    /// OFDM symbol carrying `user`'s pilots.
    pub fn ofdm_symbol(&self, user: usize) -> usize {
        user / self.stride
    }

    pub fn num_ofdm_symbols(&self) -> usize {
        self.num_users.div_ceil(self.stride)
    }

    /// Downlink symbols for feedback: one data and one pilot symbol per uplink symbol.
    pub fn feedback_ofdm_symbols(&self) -> usize {
        2 * self.num_ofdm_symbols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiEstimate {
    pub positions: Vec<usize>,
    pub values: Vec<Complex64>,
    pub method: EstimationMethod,
}

/// Element-wise `y_i / x_i`.
pub fn estimate_ls(rx: &[Complex64], tx: &[Complex64]) -> Result<Vec<Complex64>> {
    if rx.len() != tx.len() {
        return Err(AirconError::invalid("received and transmitted pilots differ in length"));
    }
    rx.iter()
        .zip(tx)
        .map(|(y, x)| {
            if x.norm_sqr() == 0.0 {
                Err(AirconError::invalid("zero transmitted pilot"))
            } else {
                Ok(y / x)
            }
        })
        .collect()
}

/// `R (R + β/SNR · I)⁻¹ h_ls`, computed with an LU solve.
pub fn estimate_lmmse(
    ls: &[Complex64],
    rhh: &DMatrix<Complex64>,
    snr_linear: f64,
    beta: f64,
) -> Result<Vec<Complex64>> {
    let n = ls.len();
    if rhh.nrows() != n || rhh.ncols() != n {
        return Err(AirconError::invalid(format!(
            "autocorrelation is {}x{} for {n} pilots",
            rhh.nrows(),
            rhh.ncols()
        )));
    }
    if !(snr_linear > 0.0) || !(beta > 0.0) {
        return Err(AirconError::invalid("snr and beta must be positive"));
    }
    let scale = rhh.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    if (rhh - rhh.adjoint()).iter().any(|d| d.norm() > 1e-9 * scale) {
        return Err(AirconError::invalid("autocorrelation matrix is not Hermitian"));
    }
    let reg = rhh + DMatrix::from_diagonal_element(n, n, Complex64::new(beta / snr_linear, 0.0));
    let rhs = DVector::from_column_slice(ls);
    let w = reg
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AirconError::Estimation("regularized autocorrelation is singular".into()))?;
    if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(AirconError::Estimation("regularized autocorrelation is singular".into()));
    }
    Ok((rhh * w).iter().copied().collect())
}

/// The LMMSE filter `W = R (R + β/SNR · I)⁻¹` as a matrix, for reuse across
/// users sharing a pilot pattern length.
pub fn lmmse_filter(rhh: &DMatrix<Complex64>, snr_linear: f64, beta: f64) -> Result<DMatrix<Complex64>> {
    let n = rhh.nrows();
    if rhh.ncols() != n {
        return Err(AirconError::invalid("autocorrelation must be square"));
    }
    if !(snr_linear > 0.0) || !(beta > 0.0) {
        return Err(AirconError::invalid("snr and beta must be positive"));
    }
    let reg = rhh + DMatrix::from_diagonal_element(n, n, Complex64::new(beta / snr_linear, 0.0));
    // both factors are Hermitian, so W^H = (R + εI)⁻¹ R
    let wh = reg
        .lu()
        .solve(rhh)
        .ok_or_else(|| AirconError::Estimation("regularized autocorrelation is singular".into()))?;
    Ok(wh.adjoint())
}

/// Linear estimator applied to pilot observations.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotEstimator {
    Ls,
    Lmmse { rhh: DMatrix<Complex64>, snr_linear: f64, beta: f64 },
}

/// Averages `R` pilot receptions element-wise. The LS estimate of the mean is
/// then optionally filtered by LMMSE at the `R`-fold effective SNR.
pub fn estimate_with_retransmission(
    rounds: &[Vec<Complex64>],
    tx: &[Complex64],
    estimator: &PilotEstimator,
) -> Result<Vec<Complex64>> {
    if rounds.is_empty() {
        return Err(AirconError::invalid("at least one pilot reception is required"));
    }
    let r = rounds.len() as f64;
    let mut mean = vec![Complex64::new(0.0, 0.0); tx.len()];
    for rx in rounds {
        for (acc, v) in mean.iter_mut().zip(estimate_ls(rx, tx)?) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= r);
    match estimator {
        PilotEstimator::Ls => Ok(mean),
        PilotEstimator::Lmmse { rhh, snr_linear, beta } => estimate_lmmse(&mean, rhh, snr_linear * r, *beta),
    }
}

/// Feedback coefficients at pilot positions; `None` marks an excluded deep fade.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoefficients {
    pub positions: Vec<usize>,
    pub values: Vec<Option<Complex64>>,
}

impl SparseCoefficients {
    pub fn deep_fades(&self) -> impl Iterator<Item = usize> + '_ {
        self.positions
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| v.is_none())
            .map(|(p, _)| *p)
    }
}

/// `b = h̃* / |h̃|²` at each pilot position.
pub fn compute_feedback(est: &CsiEstimate) -> SparseCoefficients {
    let values = est
        .values
        .iter()
        .map(|h| (h.norm() >= DEEP_FADE_THRESHOLD).then(|| h.conj() / h.norm_sqr()))
        .collect();
    SparseCoefficients { positions: est.positions.clone(), values }
}

/// Linear interpolation of real and imaginary parts between usable pilot
/// positions, constant beyond the first and last.
pub fn interpolate_coeffs(sparse: &SparseCoefficients, n: usize) -> Result<Vec<Complex64>> {
    let known: Vec<(usize, Complex64)> = sparse
        .positions
        .iter()
        .zip(&sparse.values)
        .filter_map(|(p, v)| v.map(|c| (*p, c)))
        .collect();
    if known.len() < 2 {
        return Err(AirconError::invalid(format!(
            "interpolation needs two usable pilots, have {}",
            known.len()
        )));
    }
    if known.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(AirconError::invalid("pilot positions must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let c = if i <= known[0].0 {
            known[0].1
        } else if i >= known[known.len() - 1].0 {
            known[known.len() - 1].1
        } else {
            while known[seg + 1].0 < i {
                seg += 1;
            }
            let (p0, c0) = known[seg];
            let (p1, c1) = known[seg + 1];
            let w = (i - p0) as f64 / (p1 - p0) as f64;
            c0 * (1.0 - w) + c1 * w
        };
        out.push(c);
    }
    Ok(out)
}

fn unit_pilots(len: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); len]
}

fn model_rhh(cfg: &ChannelConfig, positions: &[usize]) -> DMatrix<Complex64> {
    match cfg.kind {
        ChannelKind::Awgn | ChannelKind::Flat => {
            DMatrix::from_element(positions.len(), positions.len(), Complex64::new(1.0, 0.0))
        }
        ChannelKind::Epa => EPA.correlation_matrix(cfg, positions),
    }
}

fn sample_rhh(ls: &[Vec<Complex64>], len: usize) -> DMatrix<Complex64> {
    let rows: Vec<&Vec<Complex64>> = ls.iter().filter(|v| v.len() >= len).collect();
    let mut r = DMatrix::from_element(len, len, Complex64::new(0.0, 0.0));
    for v in &rows {
        let col = DVector::from_column_slice(&v[..len]);
        r += &col * col.adjoint();
    }
    r / Complex64::new(rows.len().max(1) as f64, 0.0)
}

/// Result of one CSI acquisition pass.
#[derive(Debug, Clone)]
pub struct CsiAcquisition {
    pub precompensation: PrecompensationMatrix,
    pub estimates: Vec<CsiEstimate>,
}

/// Runs pilot transmission, BS estimation, feedback and user-side
/// interpolation for every user of `ch`.
pub fn acquire_precompensation<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    cfg: &ChannelConfig,
    est: &EstimationConfig,
    rng: &mut R,
) -> Result<CsiAcquisition> {
    est.validate()?;
    let k = ch.num_users();
    let n = ch.num_subcarriers();
    if est.method == EstimationMethod::Perfect {
        let estimates = (0..k)
            .map(|u| CsiEstimate {
                positions: (0..n).collect(),
                values: ch.user_gains(u).to_vec(),
                method: EstimationMethod::Perfect,
            })
            .collect();
        return Ok(CsiAcquisition { precompensation: PrecompensationMatrix::perfect(ch)?, estimates });
    }

    let schedule = PilotSchedule::new(k, est.stride, n)?;
    let r = est.retransmissions;
    let mut positions = Vec::with_capacity(k);
    let mut rounds = Vec::with_capacity(k);
    for user in 0..k {
        let pos = schedule.positions(user);
        let clean: Vec<Complex64> = pos.iter().map(|&p| ch.gain(user, p)).collect();
        let rx = (0..r)
            .map(|_| add_noise(&clean, ch.noise_var, rng))
            .collect::<Result<Vec<_>>>()?;
        positions.push(pos);
        rounds.push(rx);
    }

    let ls: Vec<Vec<Complex64>> = rounds
        .iter()
        .map(|rx| estimate_with_retransmission(rx, &unit_pilots(rx[0].len()), &PilotEstimator::Ls))
        .collect::<Result<_>>()?;

    // LMMSE at infinite SNR reduces to LS on the signal subspace, which LS
    // already occupies when there is no noise
    let use_lmmse = est.method == EstimationMethod::Lmmse && ch.noise_var > 0.0;
    let snr = r as f64 / ch.noise_var;
    // the model correlation depends only on the pilot spacing, so one filter
    // per pattern length serves every user
    let mut filters: Vec<(usize, DMatrix<Complex64>)> = Vec::new();
    let mut estimates = Vec::with_capacity(k);
    for user in 0..k {
        let pos = &positions[user];
        let values = if use_lmmse {
            let w = match filters.iter().find(|(len, _)| *len == pos.len()) {
                Some((_, w)) => w,
                None => {
                    let rhh = match est.rhh {
                        RhhSource::Model => model_rhh(cfg, pos),
                        RhhSource::Sample => sample_rhh(&ls, pos.len()),
                    };
                    filters.push((pos.len(), lmmse_filter(&rhh, snr, 1.0)?));
                    &filters[filters.len() - 1].1
                }
            };
            (w * DVector::from_column_slice(&ls[user])).iter().copied().collect()
        } else {
            ls[user].clone()
        };
        estimates.push(CsiEstimate { positions: pos.clone(), values, method: est.method });
    }

    let mut coeffs = Vec::with_capacity(k);
    for (user, e) in estimates.iter().enumerate() {
        let mut sparse = compute_feedback(e);
        if let Downlink::Noisy { snr_db } = est.feedback {
            let sd = (snr_db_to_noise_var(snr_db) / r as f64 / 2.0).sqrt();
            let d = Normal::new(0.0, sd).map_err(|e| AirconError::invalid(e.to_string()))?;
            for b in sparse.values.iter_mut().flatten() {
                *b *= Complex64::new(1.0 + d.sample(rng), d.sample(rng));
            }
        }
        let dense = interpolate_coeffs(&sparse, n).map_err(|_| AirconError::DeepFade {
            user,
            position: sparse.deep_fades().next().unwrap_or(0),
        })?;
        coeffs.push(dense);
    }
    Ok(CsiAcquisition { precompensation: PrecompensationMatrix::new(coeffs)?, estimates })
}

/// Residual compensation error `|b_kn h_kn - 1|` summarized per user over the
/// first `n` subcarriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub user: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

pub fn residual_compensation(
    ch: &ChannelRealization,
    pc: &PrecompensationMatrix,
    n: usize,
) -> Vec<ResidualStats> {
    (0..ch.num_users())
        .map(|user| {
            let mut r: Vec<f64> = (0..n.min(ch.num_subcarriers()))
                .map(|i| (ch.gain(user, i) * pc.coeff(user, i) - 1.0).norm())
                .collect();
            r.sort_by(f64::total_cmp);
            let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
            ResidualStats {
                user,
                mean,
                median: median_sorted(&r),
                max: r.last().copied().unwrap_or(0.0),
            }
        })
        .collect()
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn write_residual_csv<W: Write>(mut w: W, stats: &[ResidualStats]) -> std::io::Result<()> {
    writeln!(w, "user,mean,median,max")?;
    for s in stats {
        writeln!(w, "{},{:.6e},{:.6e},{:.6e}", s.user, s.mean, s.median, s.max)?;
    }
    Ok(())
}

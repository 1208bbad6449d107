//! One over-the-air computation round: channel-inverting pre-compensation,
//! superposition on the multiple-access channel, fine-lattice quantization at
//! the BS and downlink broadcast of the aggregate.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, snr_db_to_noise_var, ChannelRealization};
use crate::error::{AirconError, Result};
use crate::lattice::{quantize_to_fine, Codebook, HashSymbolVector, LatticePoint};

/// Transmit-side coefficients `b_kn`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecompensationMatrix {
    coeffs: Vec<Vec<Complex64>>,
}

impl PrecompensationMatrix {
    pub fn new(coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        if coeffs.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(AirconError::invalid("non-finite pre-compensation coefficient"));
        }
        Ok(PrecompensationMatrix { coeffs })
    }

    /// Exact channel inversion `b = h* / |h|²`.
    pub fn perfect(ch: &ChannelRealization) -> Result<Self> {
        let coeffs = ch
            .gains()
            .iter()
            .map(|row| row.iter().map(|h| h.conj() / h.norm_sqr()).collect())
            .collect();
        Self::new(coeffs)
    }

    /// Limits every coefficient magnitude to `max_magnitude`, keeping phase.
    pub fn clipped(&self, max_magnitude: f64) -> Result<Self> {
        if !(max_magnitude > 0.0) {
            return Err(AirconError::invalid("clip magnitude must be positive"));
        }
        let coeffs = self
            .coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|b| {
                        let m = b.norm();
                        if m > max_magnitude {
                            b * (max_magnitude / m)
                        } else {
                            *b
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(PrecompensationMatrix { coeffs })
    }

    pub fn coeff(&self, user: usize, subcarrier: usize) -> Complex64 {
        self.coeffs[user][subcarrier]
    }

    pub fn user_coeffs(&self, user: usize) -> &[Complex64] {
        &self.coeffs[user]
    }

    pub fn num_users(&self) -> usize {
        self.coeffs.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.coeffs.first().map(Vec::len).unwrap_or(0)
    }
}

/// The quantized aggregate `t`, one fine-lattice point per subcarrier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SuperposedVector {
    pub points: Vec<LatticePoint>,
}

impl SuperposedVector {
    /// The noiseless lattice sum of the given vectors.
    pub fn exact_sum<'a, I>(vectors: I, len: usize) -> SuperposedVector
    where
        I: IntoIterator<Item = &'a HashSymbolVector>,
    {
        let mut points = vec![LatticePoint::ORIGIN; len];
        for v in vectors {
            for (acc, p) in points.iter_mut().zip(v.symbols()) {
                *acc += *p;
            }
        }
        SuperposedVector { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of entries that differ from `other`.
    pub fn disagreements(&self, other: &SuperposedVector) -> usize {
        self.points.iter().zip(&other.points).filter(|(a, b)| a != b).count()
    }
}

/// Uplink view shared by all rounds of one consensus run.
#[derive(Debug, Clone, Copy)]
pub struct AirCompLink<'a> {
    channel: &'a ChannelRealization,
    precomp: &'a PrecompensationMatrix,
    codebook: &'a Codebook,
}

impl<'a> AirCompLink<'a> {
    pub fn new(
        channel: &'a ChannelRealization,
        precomp: &'a PrecompensationMatrix,
        codebook: &'a Codebook,
    ) -> Result<Self> {
        if precomp.num_users() != channel.num_users()
            || precomp.num_subcarriers() != channel.num_subcarriers()
        {
            return Err(AirconError::invalid(format!(
                "pre-compensation is {}x{} but channel is {}x{}",
                precomp.num_users(),
                precomp.num_subcarriers(),
                channel.num_users(),
                channel.num_subcarriers()
            )));
        }
        Ok(AirCompLink { channel, precomp, codebook })
    }

    pub fn channel(&self) -> &ChannelRealization {
        self.channel
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    /// Received samples after BS unscaling, before quantization:
    /// `ỹ_n = (Σ_k h_kn b_kn s x_kn + w_n) / s`.
    pub fn received<R: Rng + ?Sized>(
        &self,
        senders: &[(usize, &HashSymbolVector)],
        rng: &mut R,
    ) -> Result<Vec<Complex64>> {
        let n = match senders.first() {
            Some((_, v)) => v.len(),
            None => return Err(AirconError::invalid("no transmitting users")),
        };
        if n > self.channel.num_subcarriers() {
            return Err(AirconError::invalid(format!(
                "{n} symbols exceed {} subcarriers",
                self.channel.num_subcarriers()
            )));
        }
        let s = self.codebook.tx_power_scale();
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for &(user, v) in senders {
            if v.len() != n {
                return Err(AirconError::invalid("hash symbol vectors differ in length"));
            }
            if user >= self.channel.num_users() {
                return Err(AirconError::invalid(format!("unknown user {user}")));
            }
            let h = self.channel.user_gains(user);
            let b = self.precomp.user_coeffs(user);
            for (i, p) in v.symbols().iter().enumerate() {
                y[i] += h[i] * b[i] * (p.to_complex() * s);
            }
        }
        let mut y = add_noise(&y, self.channel.noise_var, rng)?;
        y.iter_mut().for_each(|v| *v /= s);
        Ok(y)
    }

    /// Superposes the senders' vectors and quantizes to the fine lattice.
    pub fn superpose<R: Rng + ?Sized>(
        &self,
        senders: &[(usize, &HashSymbolVector)],
        rng: &mut R,
    ) -> Result<SuperposedVector> {
        let y = self.received(senders, rng)?;
        let points = y.into_iter().map(quantize_to_fine).collect::<Result<Vec<_>>>()?;
        Ok(SuperposedVector { points })
    }
}

/// All `K` users transmit simultaneously; user `k` sends `vectors[k]`.
pub fn aircomp_round<R: Rng + ?Sized>(
    vectors: &[HashSymbolVector],
    ch: &ChannelRealization,
    pc: &PrecompensationMatrix,
    cb: &Codebook,
    rng: &mut R,
) -> Result<SuperposedVector> {
    if vectors.len() != ch.num_users() {
        return Err(AirconError::invalid(format!(
            "{} vectors for {} users",
            vectors.len(),
            ch.num_users()
        )));
    }
    let link = AirCompLink::new(ch, pc, cb)?;
    let senders: Vec<_> = vectors.iter().enumerate().collect();
    link.superpose(&senders, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Downlink {
    #[default]
    Ideal,
    Noisy { snr_db: f64 },
}

/// Delivers `t` to each of `num_users` users. In noisy mode the aggregate is
/// re-modulated with the uplink amplitude scale, passed through independent
/// per-user AWGN and re-quantized.
pub fn broadcast_aggregate<R: Rng + ?Sized>(
    t: &SuperposedVector,
    downlink: Downlink,
    num_users: usize,
    cb: &Codebook,
    rng: &mut R,
) -> Result<Vec<SuperposedVector>> {
    match downlink {
        Downlink::Ideal => Ok(vec![t.clone(); num_users]),
        Downlink::Noisy { snr_db } => {
            let s = cb.tx_power_scale();
            let nv = snr_db_to_noise_var(snr_db);
            let tx: Vec<Complex64> = t.points.iter().map(|p| p.to_complex() * s).collect();
            (0..num_users)
                .map(|_| {
                    let rx = add_noise(&tx, nv, rng)?;
                    let points = rx
                        .into_iter()
                        .map(|y| quantize_to_fine(y / s))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(SuperposedVector { points })
                })
                .collect()
        }
    }
}

/// Rotates each user's gains by a random phase uniform in `[-max, max]`,
/// modelling residual timing offset after the CSI snapshot.
pub fn apply_residual_phase<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    max_phase_rad: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if !(max_phase_rad >= 0.0) || !max_phase_rad.is_finite() {
        return Err(AirconError::invalid("max_phase_rad must be finite and non-negative"));
    }
    let mut out = ch.clone();
    if max_phase_rad == 0.0 {
        return Ok(out);
    }
    let dist = Uniform::new_inclusive(-max_phase_rad, max_phase_rad)
        .map_err(|e| AirconError::invalid(e.to_string()))?;
    for row in out.gains_mut() {
        let rot = Complex64::from_polar(1.0, dist.sample(rng));
        row.iter_mut().for_each(|g| *g *= rot);
    }
    Ok(out)
}

/// Writes pre-quantization samples as `subcarrier,re,im` CSV.
pub fn write_constellation_csv<W: Write>(mut w: W, samples: &[Complex64]) -> std::io::Result<()> {
    writeln!(w, "subcarrier,re,im")?;
    for (i, y) in samples.iter().enumerate() {
        writeln!(w, "{},{:.6},{:.6}", i, y.re, y.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{realize_channel, ChannelConfig, ChannelKind};
    use crate::lattice::build_codebook;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut ChaCha8Rng, cb: &Codebook, n: usize) -> HashSymbolVector {
        let s = (0..n).map(|_| cb.point(rng.random_range(0..8))).collect();
        HashSymbolVector::new(s, cb).unwrap()
    }

    fn noiseless(kind: ChannelKind, k: usize, seed: u64) -> ChannelRealization {
        let cfg = ChannelConfig { seed, ..ChannelConfig::new(kind, 0.0) };
        let ch = realize_channel(&cfg, k).unwrap();
        ChannelRealization::new(ch.gains().to_vec(), 0.0).unwrap()
    }

    #[test]
    fn identical_vectors_scale() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vector(&mut rng, &cb, 43);
        for kind in [ChannelKind::Awgn, ChannelKind::Flat, ChannelKind::Epa] {
            let ch = noiseless(kind, 3, 7);
            let pc = PrecompensationMatrix::perfect(&ch).unwrap();
            let t = aircomp_round(&vec![x.clone(); 3], &ch, &pc, &cb, &mut rng).unwrap();
            let expected: Vec<_> = x.symbols().iter().map(|p| *p * 3).collect();
            assert_eq!(t.points, expected, "{kind}");
        }
    }

    #[test]
    fn antipodal_pair_cancels() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vector(&mut rng, &cb, 43);
        let ch = noiseless(ChannelKind::Epa, 2, 3);
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let t = aircomp_round(&[x.clone(), x.negated()], &ch, &pc, &cb, &mut rng).unwrap();
        assert!(t.points.iter().all(|p| *p == LatticePoint::ORIGIN));
    }

    #[test]
    fn exhaustive_small_sums() {
        // every pair of codewords on every subcarrier of a 1-symbol vector
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = noiseless(ChannelKind::Flat, 3, 4);
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    let v: Vec<_> = [a, b, c]
                        .iter()
                        .map(|i| HashSymbolVector::new(vec![cb.point(*i)], &cb).unwrap())
                        .collect();
                    let t = aircomp_round(&v, &ch, &pc, &cb, &mut rng).unwrap();
                    assert_eq!(t, SuperposedVector::exact_sum(&v, 1));
                }
            }
        }
    }

    #[test]
    fn awgn_20db_seven_users() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ChannelConfig::new(ChannelKind::Awgn, 20.0);
        let ch = realize_channel(&cfg, 7).unwrap();
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let (mut ok, mut total) = (0usize, 0usize);
        for _ in 0..10_000 {
            let x = random_vector(&mut rng, &cb, 43);
            let vs = vec![x.clone(); 7];
            let t = aircomp_round(&vs, &ch, &pc, &cb, &mut rng).unwrap();
            let exact = SuperposedVector::exact_sum(&vs, 43);
            ok += 43 - t.disagreements(&exact);
            total += 43;
        }
        assert!(ok as f64 / total as f64 >= 0.99);
    }

    #[test]
    fn quantization_error_is_zero_mean() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = realize_channel(&ChannelConfig::new(ChannelKind::Awgn, 0.0), 5).unwrap();
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let (mut sr, mut si, mut n) = (0i64, 0i64, 0usize);
        for _ in 0..4000 {
            let vs: Vec<_> = (0..5).map(|_| random_vector(&mut rng, &cb, 43)).collect();
            let t = aircomp_round(&vs, &ch, &pc, &cb, &mut rng).unwrap();
            let exact = SuperposedVector::exact_sum(&vs, 43);
            for (a, b) in t.points.iter().zip(&exact.points) {
                sr += a.re - b.re;
                si += a.im - b.im;
                n += 1;
            }
        }
        // per-entry error sd ~ 0.9 at 0 dB
        let bound = 4.0 * 0.95 / (n as f64).sqrt();
        assert!((sr as f64 / n as f64).abs() < bound);
        assert!((si as f64 / n as f64).abs() < bound);
    }

    #[test]
    fn disagreement_falls_with_snr() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut last = usize::MAX;
        for snr in [-5.0, 0.0, 5.0, 10.0, 15.0] {
            let ch = realize_channel(&ChannelConfig::new(ChannelKind::Awgn, snr), 4).unwrap();
            let pc = PrecompensationMatrix::perfect(&ch).unwrap();
            let mut errs = 0;
            for _ in 0..500 {
                let vs: Vec<_> = (0..4).map(|_| random_vector(&mut rng, &cb, 43)).collect();
                let t = aircomp_round(&vs, &ch, &pc, &cb, &mut rng).unwrap();
                errs += t.disagreements(&SuperposedVector::exact_sum(&vs, 43));
            }
            assert!(errs <= last, "snr {snr}: {errs} > {last}");
            last = errs;
        }
    }

    #[test]
    fn dimension_errors() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = noiseless(ChannelKind::Awgn, 2, 0);
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let x = random_vector(&mut rng, &cb, 3);
        assert!(aircomp_round(std::slice::from_ref(&x), &ch, &pc, &cb, &mut rng).is_err());
        let y = random_vector(&mut rng, &cb, 4);
        assert!(aircomp_round(&[x.clone(), y], &ch, &pc, &cb, &mut rng).is_err());
        let long = random_vector(&mut rng, &cb, 100);
        assert!(aircomp_round(&[long.clone(), long], &ch, &pc, &cb, &mut rng).is_err());
        let small = ChannelRealization::new(vec![vec![Complex64::new(1.0, 0.0); 72]], 0.0).unwrap();
        let small_pc = PrecompensationMatrix::perfect(&small).unwrap();
        assert!(AirCompLink::new(&ch, &small_pc, &cb).is_err());
    }

    #[test]
    fn clip_limits_magnitude() {
        let ch = ChannelRealization::new(
            vec![vec![Complex64::new(0.01, 0.0), Complex64::new(0.0, 2.0)]],
            0.0,
        )
        .unwrap();
        let pc = PrecompensationMatrix::perfect(&ch).unwrap().clipped(10.0).unwrap();
        assert!((pc.coeff(0, 0).norm() - 10.0).abs() < 1e-12);
        assert!((pc.coeff(0, 1) - Complex64::new(0.0, -0.5)).norm() < 1e-12);
    }

    #[test]
    fn ideal_broadcast_is_exact() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = SuperposedVector { points: vec![LatticePoint::new(3, -2); 43] };
        let rx = broadcast_aggregate(&t, Downlink::Ideal, 5, &cb, &mut rng).unwrap();
        assert_eq!(rx.len(), 5);
        assert!(rx.iter().all(|r| *r == t));
    }

    fn downlink_disagreement(snr_db: f64) -> f64 {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut bad, mut total) = (0usize, 0usize);
        for _ in 0..200 {
            let vs: Vec<_> = (0..5).map(|_| random_vector(&mut rng, &cb, 43)).collect();
            let t = SuperposedVector::exact_sum(&vs, 43);
            for r in broadcast_aggregate(&t, Downlink::Noisy { snr_db }, 5, &cb, &mut rng).unwrap() {
                bad += r.disagreements(&t);
                total += t.len();
            }
        }
        bad as f64 / total as f64
    }

    #[test]
    fn noisy_broadcast_error_rates() {
        assert!(downlink_disagreement(30.0) < 1e-3);
        assert!(downlink_disagreement(-10.0) > 0.1);
    }

    #[test]
    fn residual_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = ChannelConfig { seed: 1, ..ChannelConfig::new(ChannelKind::Epa, 10.0) };
        let ch = realize_channel(&cfg, 3).unwrap();
        assert_eq!(apply_residual_phase(&ch, 0.0, &mut rng).unwrap(), ch);
        assert!(apply_residual_phase(&ch, -1.0, &mut rng).is_err());
        let rotated = apply_residual_phase(&ch, 1.0, &mut rng).unwrap();
        for (a, b) in rotated.gains().iter().flatten().zip(ch.gains().iter().flatten()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_phase_randomization_breaks_coherent_sum() {
        // with uniform phases E|Σ e^{jθ_k}|² = K, not K²
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 6;
        let ch = noiseless(ChannelKind::Awgn, k, 0);
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let x = HashSymbolVector::new(vec![cb.point(0); 1], &cb).unwrap();
        let senders: Vec<_> = (0..k).map(|u| (u, &x)).collect();
        let trials = 20_000;
        let mut power = 0.0;
        for _ in 0..trials {
            let rotated = apply_residual_phase(&ch, std::f64::consts::PI, &mut rng).unwrap();
            let link = AirCompLink::new(&rotated, &pc, &cb).unwrap();
            power += link.received(&senders, &mut rng).unwrap()[0].norm_sqr();
        }
        let mean = power / trials as f64;
        assert!((mean - k as f64).abs() < 0.3, "mean power {mean}");
        assert!(mean < (k * k) as f64);
    }

    #[test]
    fn single_user_magnitude_preserved_under_rotation() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ch = noiseless(ChannelKind::Flat, 1, 2);
        let pc = PrecompensationMatrix::perfect(&ch).unwrap();
        let x = random_vector(&mut rng, &cb, 43);
        let rotated = apply_residual_phase(&ch, 2.0, &mut rng).unwrap();
        let link = AirCompLink::new(&rotated, &pc, &cb).unwrap();
        let y = link.received(&[(0, &x)], &mut rng).unwrap();
        for (yi, p) in y.iter().zip(x.symbols()) {
            assert!((yi.norm() - p.to_complex().norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn constellation_dump() {
        let mut out = Vec::new();
        write_constellation_csv(&mut out, &[Complex64::new(1.0, -0.5)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "subcarrier,re,im\n0,1.000000,-0.500000\n");
    }
}

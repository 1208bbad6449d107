//! Malicious hash symbol vectors for the conspiracy attack model.
//!
//! Attackers know the honest vector and may only choose legal codewords; they
//! transmit through the same link and power normalization as everyone else.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AirconError, Result};
use crate::lattice::{Codebook, HashSymbolVector, LatticePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryStrategy {
    /// No attack. Users outside the consistent set hold a different block.
    #[default]
    None,
    /// Each malicious user sends independent uniform codewords.
    Random,
    /// All malicious users send `-x̄`.
    Antipodal,
    /// All malicious users send one vector with correlation `rho` to `x̄`.
    RhoTargeted { rho: f64 },
}

impl AdversaryStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdversaryStrategy::None => "none",
            AdversaryStrategy::Random => "random",
            AdversaryStrategy::Antipodal => "antipodal",
            AdversaryStrategy::RhoTargeted { .. } => "rho_targeted",
        }
    }

    /// Nominal correlation with the honest vector, where one is defined.
    pub fn rho(&self) -> Option<f64> {
        match self {
            AdversaryStrategy::None | AdversaryStrategy::Random => None,
            AdversaryStrategy::Antipodal => Some(-1.0),
            AdversaryStrategy::RhoTargeted { rho } => Some(*rho),
        }
    }

    /// True when all malicious users share one crafted vector.
    pub fn is_conspiracy(&self) -> bool {
        matches!(self, AdversaryStrategy::Antipodal | AdversaryStrategy::RhoTargeted { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let AdversaryStrategy::RhoTargeted { rho } = self {
            if !(-1.0..=1.0).contains(rho) {
                return Err(AirconError::invalid(format!("rho {rho} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

/// `x̂ᵀ x̄ / |x̄|²` over the real coordinates.
pub fn empirical_correlation(crafted: &HashSymbolVector, honest: &HashSymbolVector) -> f64 {
    honest.dot(crafted.symbols()) as f64 / honest.norm_sqr() as f64
}

/// Builds one malicious vector against `honest`.
///
/// `RhoTargeted` negates `f = round(N(1-ρ)/2)` positions. Codewords have
/// squared norm 1 or 2, so the split of `f` between the two norm classes is
/// chosen to put the flipped energy as close as possible to `|x̄|²(1-ρ)/2`;
/// positions are then uniform within each class. The achieved correlation is
/// within `1/|x̄|² ≤ 1/N` of `ρ`.
pub fn craft_vector<R: Rng + ?Sized>(
    strategy: &AdversaryStrategy,
    honest: &HashSymbolVector,
    cb: &Codebook,
    rng: &mut R,
) -> Result<HashSymbolVector> {
    strategy.validate()?;
    if honest.is_empty() {
        return Err(AirconError::invalid("honest vector is empty"));
    }
    let n = honest.len();
    match *strategy {
        AdversaryStrategy::None => Ok(honest.clone()),
        AdversaryStrategy::Random => Ok(random_vector(n, cb, rng)),
        AdversaryStrategy::Antipodal => Ok(honest.negated()),
        AdversaryStrategy::RhoTargeted { rho } => {
            let q = (1.0 - rho) / 2.0;
            let f = (n as f64 * q).round() as usize;
            let (ones, twos): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| honest.symbols()[i].norm_sqr() == 1);
            let target = honest.norm_sqr() as f64 * q;
            let lo = f.saturating_sub(ones.len());
            let hi = f.min(twos.len());
            // flipped energy is f + j for j norm-2 flips
            let j = ((target - f as f64).round().max(lo as f64) as usize).min(hi);
            let mut out = honest.symbols().to_vec();
            for idx in sample(rng, twos.len(), j) {
                out[twos[idx]] = -out[twos[idx]];
            }
            for idx in sample(rng, ones.len(), f - j) {
                out[ones[idx]] = -out[ones[idx]];
            }
            HashSymbolVector::new(out, cb)
        }
    }
}

/// `n` independent uniform codewords.
pub fn random_vector<R: Rng + ?Sized>(n: usize, cb: &Codebook, rng: &mut R) -> HashSymbolVector {
    let symbols: Vec<LatticePoint> = (0..n).map(|_| cb.point(rng.random_range(0..8u8))).collect();
    HashSymbolVector::from_symbols_unchecked(symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_codebook;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn honest(n: usize, seed: u64) -> HashSymbolVector {
        random_vector(n, &build_codebook(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn basic_strategies() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = honest(43, 9);
        let none = craft_vector(&AdversaryStrategy::None, &x, &cb, &mut rng).unwrap();
        assert_eq!(none, x);
        let anti = craft_vector(&AdversaryStrategy::Antipodal, &x, &cb, &mut rng).unwrap();
        assert_eq!(empirical_correlation(&anti, &x), -1.0);
        let one = craft_vector(&AdversaryStrategy::RhoTargeted { rho: 1.0 }, &x, &cb, &mut rng).unwrap();
        assert_eq!(one, x);
        let neg = craft_vector(&AdversaryStrategy::RhoTargeted { rho: -1.0 }, &x, &cb, &mut rng).unwrap();
        assert_eq!(neg, x.negated());
    }

    #[test]
    fn rho_zero_on_43_symbols() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..200 {
            let x = honest(43, seed);
            let xh = craft_vector(&AdversaryStrategy::RhoTargeted { rho: 0.0 }, &x, &cb, &mut rng).unwrap();
            let flips = x.symbols().iter().zip(xh.symbols()).filter(|(a, b)| a != b).count();
            assert!(flips == 21 || flips == 22, "flips {flips}");
            // independent inner product
            let dot: i64 = x.symbols().iter().zip(xh.symbols()).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            let norm: i64 = x.symbols().iter().map(|a| a.re * a.re + a.im * a.im).sum();
            assert!((dot as f64 / norm as f64).abs() <= 1.0 / 43.0);
        }
    }

    #[test]
    fn out_of_range_rho() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = honest(10, 1);
        for rho in [1.5, -1.01, f64::NAN] {
            assert!(craft_vector(&AdversaryStrategy::RhoTargeted { rho }, &x, &cb, &mut rng).is_err());
        }
    }

    #[test]
    fn random_correlation_is_centered() {
        let cb = build_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = honest(43, 5);
        let draws = 10_000;
        let samples: Vec<f64> = (0..draws)
            .map(|_| empirical_correlation(&craft_vector(&AdversaryStrategy::Random, &x, &cb, &mut rng).unwrap(), &x))
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!(mean.abs() < 3.0 * (var / draws as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn serde_forms() {
        #[derive(Deserialize)]
        struct W {
            adversary: AdversaryStrategy,
        }
        let w: W = toml::from_str("[adversary]\nkind = \"rho_targeted\"\nrho = -0.25\n").unwrap();
        assert_eq!(w.adversary, AdversaryStrategy::RhoTargeted { rho: -0.25 });
        let w: W = toml::from_str("[adversary]\nkind = \"antipodal\"\n").unwrap();
        assert_eq!(w.adversary, AdversaryStrategy::Antipodal);
        assert!(toml::from_str::<W>("[adversary]\nkind = \"sybil\"\n").is_err());
    }

    proptest! {
        #[test]
        fn rho_error_within_one_over_n(n in 1usize..120, seed in any::<u64>(), rho in -1.0f64..=1.0) {
            let cb = build_codebook();
            let x = honest(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
            let xh = craft_vector(&AdversaryStrategy::RhoTargeted { rho }, &x, &cb, &mut rng).unwrap();
            prop_assert!(xh.symbols().iter().all(|p| cb.contains(*p)));
            let err = (empirical_correlation(&xh, &x) - rho).abs();
            prop_assert!(err <= 1.0 / n as f64 + 1e-12, "n={} rho={} err={}", n, rho, err);
        }
    }
}

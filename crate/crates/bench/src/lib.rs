//! Shared fixtures for the criterion benches.

use aircon_core::adversary::random_vector;
use aircon_core::channel::realize_channel_with;
use aircon_core::{build_codebook, ChannelConfig, ChannelKind, ChannelRealization, HashSymbolVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `k` independent random hash symbol vectors of length `n`.
pub fn vectors(k: usize, n: usize, seed: u64) -> Vec<HashSymbolVector> {
    let cb = build_codebook();
    let mut r = rng(seed);
    (0..k).map(|_| random_vector(n, &cb, &mut r)).collect()
}

pub fn channel(kind: ChannelKind, snr_db: f64, k: usize, seed: u64) -> (ChannelConfig, ChannelRealization) {
    let cfg = ChannelConfig::new(kind, snr_db);
    let ch = realize_channel_with(&cfg, k, &mut rng(seed)).expect("valid channel config");
    (cfg, ch)
}

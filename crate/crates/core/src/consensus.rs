//! Two-round over-the-air consensus: prepare with `T_h1`, commit with `T_h2`,
//! then an AirComp reply that the primary checks against its own hash vector.
//!
//! The primary is user 0 and is always honest. Its block-level decision is
//! made at the base station.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{craft_vector, random_vector, AdversaryStrategy};
use crate::channel::{realize_channel_with, ChannelConfig, ChannelRealization};
use crate::error::{AirconError, Result};
use crate::estimation::{acquire_precompensation, EstimationConfig};
use crate::hash::{hash_block, CandidateBlock, DEFAULT_HASH_BITS};
use crate::lattice::{build_codebook, Codebook, HashSymbolVector};
use crate::phy::{apply_residual_phase, broadcast_aggregate, AirCompLink, Downlink, PrecompensationMatrix, SuperposedVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodePhase {
    Idle,
    PrePrepared,
    Prepared,
    Committed,
    Replied,
}

impl NodePhase {
    pub fn next(self) -> Option<NodePhase> {
        match self {
            NodePhase::Idle => Some(NodePhase::PrePrepared),
            NodePhase::PrePrepared => Some(NodePhase::Prepared),
            NodePhase::Prepared => Some(NodePhase::Committed),
            NodePhase::Committed => Some(NodePhase::Replied),
            NodePhase::Replied => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodePhase::Idle => "idle",
            NodePhase::PrePrepared => "pre_prepared",
            NodePhase::Prepared => "prepared",
            NodePhase::Committed => "committed",
            NodePhase::Replied => "replied",
        }
    }
}

impl fmt::Display for NodePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_t_h1")]
    pub t_h1: f64,
    #[serde(default = "default_t_h2")]
    pub t_h2: f64,
}

fn default_t_h1() -> f64 {
    0.22
}

fn default_t_h2() -> f64 {
    0.5
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { t_h1: default_t_h1(), t_h2: default_t_h2() }
    }
}

impl Thresholds {
    /// Largest tolerable malicious fraction, `(√17 - 1) / 8`.
    pub fn alpha_star() -> f64 {
        (17f64.sqrt() - 1.0) / 8.0
    }

    /// The first-round threshold that still admits every honest user when a
    /// fraction `alpha` is malicious: `1 - 2α`.
    pub fn t_h1_for_alpha(alpha: f64) -> f64 {
        1.0 - 2.0 * alpha
    }

    pub fn for_alpha(alpha: f64) -> Result<Thresholds> {
        let t = Thresholds { t_h1: Self::t_h1_for_alpha(alpha), t_h2: default_t_h2() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t_h1 && self.t_h1 < self.t_h2 && self.t_h2 <= 1.0) {
            return Err(AirconError::config(format!(
                "thresholds must satisfy 0 < t_h1 < t_h2 <= 1, got {} and {}",
                self.t_h1, self.t_h2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Round {
    Prepare,
    Commit,
    Reply,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcfReport {
    pub round: Round,
    pub per_user: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Achieved,
    NotAchieved,
}

impl Outcome {
    pub fn is_achieved(self) -> bool {
        self == Outcome::Achieved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    pub seed: u64,
    pub k: usize,
    pub m_true: usize,
    /// Phases visited by each user, starting at idle.
    pub phases: Vec<Vec<NodePhase>>,
    pub hcf_round1: Option<HcfReport>,
    pub hcf_round2: Option<HcfReport>,
    /// HCF of the primary's vector against the reply aggregate.
    pub hcf_reply: Option<f64>,
    pub repliers: Vec<usize>,
    pub outcome: Outcome,
    /// Set when the run aborted on a channel or estimation error.
    pub failure: Option<String>,
}

impl ConsensusTrace {
    pub fn final_phase(&self, user: usize) -> NodePhase {
        *self.phases[user].last().unwrap_or(&NodePhase::Idle)
    }
}

/// `Ĩ = tᵀx / (K |x|²)` with complex symbols read as pairs of reals.
pub fn compute_hcf(t: &SuperposedVector, x: &HashSymbolVector, k: usize) -> Result<f64> {
    if t.len() != x.len() {
        return Err(AirconError::invalid(format!("aggregate has {} entries, vector {}", t.len(), x.len())));
    }
    if k == 0 {
        return Err(AirconError::invalid("user count must be positive"));
    }
    let norm = x.norm_sqr();
    if norm == 0 {
        return Err(AirconError::invalid("zero-norm hash symbol vector"));
    }
    Ok(x.dot(&t.points) as f64 / (k as f64 * norm as f64))
}

/// Physical layer shared by the rounds of one run.
#[derive(Debug, Clone, Copy)]
pub struct PhyContext<'a> {
    pub link: AirCompLink<'a>,
    pub downlink: Downlink,
}

/// Users in phase `from` transmit `vectors`; everyone computes its HCF on the
/// broadcast aggregate with denominator `K`, and eligible users above
/// `threshold` advance one phase. Returns `None` when nobody is eligible.
pub fn run_round<R: Rng + ?Sized>(
    states: &mut [NodePhase],
    from: NodePhase,
    vectors: &[HashSymbolVector],
    threshold: f64,
    round: Round,
    phy: &PhyContext<'_>,
    rng: &mut R,
) -> Result<Option<(HcfReport, SuperposedVector)>> {
    let k = states.len();
    if vectors.len() != k {
        return Err(AirconError::invalid(format!("{} vectors for {k} users", vectors.len())));
    }
    let eligible: Vec<usize> = (0..k).filter(|&u| states[u] == from).collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let senders: Vec<(usize, &HashSymbolVector)> = eligible.iter().map(|&u| (u, &vectors[u])).collect();
    let t = phy.link.superpose(&senders, rng)?;
    let views = broadcast_aggregate(&t, phy.downlink, k, phy.link.codebook(), rng)?;
    let per_user = views
        .iter()
        .zip(vectors)
        .map(|(view, x)| compute_hcf(view, x, k))
        .collect::<Result<Vec<_>>>()?;
    if let Some(next) = from.next() {
        for &u in &eligible {
            if per_user[u] > threshold {
                states[u] = next;
            }
        }
    }
    Ok(Some((HcfReport { round, per_user }, t)))
}

/// One consensus instance: `m` users hold the primary's block, the remaining
/// `K - m` behave according to `adversary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub k: usize,
    pub m: usize,
    #[serde(default = "default_hash_bits")]
    pub hash_bits: usize,
    #[serde(default)]
    pub adversary: AdversaryStrategy,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub downlink: Downlink,
    /// Uniform per-user phase error in radians applied after CSI acquisition.
    #[serde(default)]
    pub residual_phase_rad: f64,
}

fn default_hash_bits() -> usize {
    DEFAULT_HASH_BITS
}

impl Scenario {
    pub fn new(k: usize, m: usize, channel: ChannelConfig) -> Self {
        Scenario {
            k,
            m,
            hash_bits: DEFAULT_HASH_BITS,
            adversary: AdversaryStrategy::None,
            channel,
            estimation: EstimationConfig::default(),
            thresholds: Thresholds::default(),
            downlink: Downlink::Ideal,
            residual_phase_rad: 0.0,
        }
    }

    /// Noiseless AWGN link with perfect pre-compensation.
    pub fn ideal(k: usize, m: usize) -> Self {
        let channel = ChannelConfig::new(crate::channel::ChannelKind::Awgn, f64::INFINITY);
        Scenario { estimation: EstimationConfig::perfect(), ..Scenario::new(k, m, channel) }
    }

    pub fn alpha(&self) -> f64 {
        (self.k - self.m) as f64 / self.k as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(AirconError::config("K must be at least 1"));
        }
        if self.m == 0 || self.m > self.k {
            return Err(AirconError::config(format!("m = {} outside [1, {}]", self.m, self.k)));
        }
        if self.hash_bits == 0 {
            return Err(AirconError::config("hash_bits must be at least 1"));
        }
        if self.hash_bits.div_ceil(3) > self.channel.num_subcarriers {
            return Err(AirconError::config(format!(
                "{} hash symbols do not fit on {} subcarriers",
                self.hash_bits.div_ceil(3),
                self.channel.num_subcarriers
            )));
        }
        if !(self.residual_phase_rad >= 0.0 && self.residual_phase_rad.is_finite()) {
            return Err(AirconError::config("residual_phase_rad must be finite and non-negative"));
        }
        self.channel.validate()?;
        self.estimation.validate()?;
        self.thresholds.validate()?;
        self.adversary.validate().map_err(|e| AirconError::config(e.to_string()))
    }
}

/// Independent random streams of one run.
const STREAM_HASHES: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_ESTIMATION: u64 = 2;
const STREAM_LINK: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Hash symbol vectors of all users: honest users `0..m` share the primary's.
pub fn scenario_vectors<R: Rng + ?Sized>(
    sc: &Scenario,
    cb: &Codebook,
    rng: &mut R,
) -> Result<Vec<HashSymbolVector>> {
    let mut payload = vec![0u8; 32];
    rng.fill(&mut payload[..]);
    let block = CandidateBlock::new(payload.clone(), 1)?;
    let honest = hash_block(&block, sc.hash_bits)?.to_symbols(cb)?;
    let mut vectors = vec![honest.clone(); sc.m];
    let shared = if sc.adversary.is_conspiracy() {
        Some(craft_vector(&sc.adversary, &honest, cb, rng)?)
    } else {
        None
    };
    for user in sc.m..sc.k {
        let v = match (&sc.adversary, &shared) {
            (_, Some(x)) => x.clone(),
            (AdversaryStrategy::Random, None) => random_vector(honest.len(), cb, rng),
            _ => {
                // a faulty user holding a different block
                let mut p = payload.clone();
                p.extend_from_slice(&(user as u64).to_be_bytes());
                hash_block(&CandidateBlock::new(p, 1)?, sc.hash_bits)?.to_symbols(cb)?
            }
        };
        vectors.push(v);
    }
    Ok(vectors)
}

fn acquire(sc: &Scenario, seed: u64) -> Result<(ChannelRealization, PrecompensationMatrix)> {
    let ch = realize_channel_with(&sc.channel, sc.k, &mut stream(seed, STREAM_CHANNEL))?;
    let mut est_rng = stream(seed, STREAM_ESTIMATION);
    let acq = acquire_precompensation(&ch, &sc.channel, &sc.estimation, &mut est_rng)?;
    let ch = if sc.residual_phase_rad > 0.0 {
        apply_residual_phase(&ch, sc.residual_phase_rad, &mut est_rng)?
    } else {
        ch
    };
    Ok((ch, acq.precompensation))
}

/// Received first-round samples at the base station, after unscaling and
/// before quantization, with every user transmitting.
pub fn prepare_samples(sc: &Scenario, seed: u64) -> Result<Vec<num_complex::Complex64>> {
    sc.validate()?;
    let cb = build_codebook();
    let vectors = scenario_vectors(sc, &cb, &mut stream(seed, STREAM_HASHES))?;
    let (ch, pc) = acquire(sc, seed)?;
    let link = AirCompLink::new(&ch, &pc, &cb)?;
    let senders: Vec<(usize, &HashSymbolVector)> = vectors.iter().enumerate().collect();
    link.received(&senders, &mut stream(seed, STREAM_LINK))
}

/// Runs pre-prepare, prepare, commit and reply for one scenario. All
/// randomness derives from `seed`.
pub fn run_consensus(sc: &Scenario, seed: u64) -> ConsensusTrace {
    let mut trace = ConsensusTrace {
        seed,
        k: sc.k,
        m_true: sc.m,
        phases: vec![vec![NodePhase::Idle]; sc.k],
        hcf_round1: None,
        hcf_round2: None,
        hcf_reply: None,
        repliers: Vec::new(),
        outcome: Outcome::NotAchieved,
        failure: None,
    };
    if let Err(e) = run_into(sc, seed, &mut trace) {
        trace.outcome = Outcome::NotAchieved;
        trace.failure = Some(e.to_string());
    }
    trace
}

fn run_into(sc: &Scenario, seed: u64, trace: &mut ConsensusTrace) -> Result<()> {
    sc.validate()?;
    let cb = build_codebook();
    let vectors = scenario_vectors(sc, &cb, &mut stream(seed, STREAM_HASHES))?;
    let (ch, pc) = acquire(sc, seed)?;
    let phy = PhyContext { link: AirCompLink::new(&ch, &pc, &cb)?, downlink: sc.downlink };
    let mut rng = stream(seed, STREAM_LINK);

    let mut states = vec![NodePhase::PrePrepared; sc.k];
    record(trace, &states);

    let r1 = run_round(&mut states, NodePhase::PrePrepared, &vectors, sc.thresholds.t_h1, Round::Prepare, &phy, &mut rng)?;
    trace.hcf_round1 = r1.map(|(r, _)| r);
    record(trace, &states);

    let r2 = run_round(&mut states, NodePhase::Prepared, &vectors, sc.thresholds.t_h2, Round::Commit, &phy, &mut rng)?;
    trace.hcf_round2 = r2.map(|(r, _)| r);
    record(trace, &states);

    let repliers: Vec<usize> = (0..sc.k).filter(|&u| states[u] == NodePhase::Committed).collect();
    if repliers.is_empty() {
        return Ok(());
    }
    let senders: Vec<(usize, &HashSymbolVector)> = repliers.iter().map(|&u| (u, &vectors[u])).collect();
    let t = phy.link.superpose(&senders, &mut rng)?;
    let hcf = compute_hcf(&t, &vectors[0], sc.k)?;
    for &u in &repliers {
        states[u] = NodePhase::Replied;
    }
    record(trace, &states);
    trace.hcf_reply = Some(hcf);
    trace.repliers = repliers;
    trace.outcome = if hcf > 0.5 { Outcome::Achieved } else { Outcome::NotAchieved };
    Ok(())
}

fn record(trace: &mut ConsensusTrace, states: &[NodePhase]) {
    for (hist, s) in trace.phases.iter_mut().zip(states) {
        if hist.last() != Some(s) {
            hist.push(*s);
        }
    }
}

/// Expected first-round HCF of an honest and a malicious user when a fraction
/// `alpha` sends a vector with correlation `rho` to the honest one.
pub fn expected_hcf(alpha: f64, rho: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&alpha) || !(-1.0..=1.0).contains(&rho) {
        return Err(AirconError::invalid(format!("alpha {alpha} or rho {rho} out of range")));
    }
    Ok((1.0 - alpha + alpha * rho, alpha + (1.0 - alpha) * rho))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackRegion {
    Safe,
    /// Correlations in `(rho_0, rho_1)` let malicious users pass the first
    /// round while honest users fail the second.
    Interval { rho_0: f64, rho_1: f64 },
}

impl AttackRegion {
    pub fn is_nonempty(&self) -> bool {
        matches!(self, AttackRegion::Interval { rho_0, rho_1 } if rho_0 < rho_1)
    }
}

/// `rho_0` solves `α + (1-α)ρ = 1 - 2α`, `rho_1` solves `1 - α + αρ = 0.5`.
pub fn attack_region(alpha: f64) -> AttackRegion {
    if alpha < Thresholds::alpha_star() {
        return AttackRegion::Safe;
    }
    AttackRegion::Interval {
        rho_0: (1.0 - 3.0 * alpha) / (1.0 - alpha),
        rho_1: (alpha - 0.5) / alpha,
    }
}

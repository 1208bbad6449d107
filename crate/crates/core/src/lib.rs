//! Signal-level simulator and protocol library for over-the-air BFT
//! consensus: users lattice-encode block hashes, transmit them simultaneously
//! over a simulated OFDM multiple-access channel, and vote by thresholding the
//! normalized inner product of their own hash with the received sum.
//!
//! ```
//! use aircon_core::{run_consensus, Scenario};
//!
//! let trace = run_consensus(&Scenario::ideal(7, 5), 42);
//! assert!(trace.outcome.is_achieved());
//! assert_eq!(trace.repliers.len(), 5);
//! ```

pub mod adversary;
pub mod channel;
pub mod consensus;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod hash;
pub mod lattice;
pub mod phy;

pub use adversary::{craft_vector, empirical_correlation, AdversaryStrategy};
pub use channel::{realize_channel, ChannelConfig, ChannelKind, ChannelRealization};
pub use consensus::{
    attack_region, compute_hcf, expected_hcf, run_consensus, run_round, AttackRegion, ConsensusTrace,
    HcfReport, NodePhase, Outcome, Round, Scenario, Thresholds,
};
pub use error::{AirconError, Result};
pub use estimation::{
    acquire_precompensation, compute_feedback, estimate_lmmse, estimate_ls, estimate_with_retransmission,
    interpolate_coeffs, EstimationConfig, EstimationMethod, PilotSchedule, RhhSource,
};
pub use experiment::{
    complexity_report, compute_cer, sweep, CerResult, ComplexityReport, ExperimentConfig, SweepAxis,
};
pub use hash::{hash_block, CandidateBlock, HashValue};
pub use lattice::{build_codebook, encode_bits, mod_coarse, quantize_to_fine, Codebook, HashSymbolVector, LatticePoint};
pub use phy::{aircomp_round, broadcast_aggregate, Downlink, PrecompensationMatrix, SuperposedVector};

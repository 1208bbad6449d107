//! Monte-Carlo driver: CER/ACER over honest-user counts, parameter sweeps
//! with reproducible per-trial seeds, CSV output and resource accounting.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryStrategy;
use crate::channel::ChannelConfig;
use crate::consensus::{run_consensus, ConsensusTrace, HcfReport, Scenario, Thresholds};
use crate::error::{AirconError, Result};
use crate::estimation::EstimationConfig;
use crate::hash::DEFAULT_HASH_BITS;
use crate::phy::Downlink;

pub const SCHEMA_ID: &str = "aircon-cer-v1";

pub const CSV_HEADER: [&str; 13] = [
    "schema_id", "seed", "axis", "axis_value", "channel", "snr_db", "K", "m", "trials", "errors", "cer",
    "cer_stderr", "acer_flag",
];

pub const TRACE_HEADER: [&str; 16] = [
    "seed", "K", "m_true", "adversary", "alpha", "rho", "channel", "snr_db", "R", "outcome", "repliers",
    "hcf1_honest_min", "hcf1_honest_max", "hcf2_honest_min", "hcf2_honest_max", "failure",
];

/// True when the run decided opposite to the honest majority.
pub fn is_consensus_error(trace: &ConsensusTrace) -> bool {
    let majority = trace.m_true > trace.k / 2;
    trace.outcome.is_achieved() != majority
}

/// Fraction of erroneous runs among traces sharing `K` and `m`.
pub fn compute_cer(traces: &[ConsensusTrace]) -> Result<f64> {
    let first = traces.first().ok_or_else(|| AirconError::invalid("no traces"))?;
    if traces.iter().any(|t| t.k != first.k || t.m_true != first.m_true) {
        return Err(AirconError::invalid("traces mix different K or m"));
    }
    Ok(traces.iter().filter(|t| is_consensus_error(t)).count() as f64 / traces.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CerEntry {
    pub m: usize,
    pub trials: usize,
    pub errors: usize,
}

impl CerEntry {
    pub fn cer(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    /// Binomial standard error `√(p(1-p)/n)`.
    pub fn stderr(&self) -> f64 {
        let p = self.cer();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CerResult {
    pub k: usize,
    pub per_m: Vec<CerEntry>,
}

impl CerResult {
    /// Arithmetic mean of the per-m CERs.
    pub fn acer(&self) -> f64 {
        self.per_m.iter().map(CerEntry::cer).sum::<f64>() / self.per_m.len() as f64
    }

    pub fn acer_stderr(&self) -> f64 {
        let n = self.per_m.len() as f64;
        self.per_m.iter().map(|e| e.stderr().powi(2)).sum::<f64>().sqrt() / n
    }

    pub fn total_errors(&self) -> usize {
        self.per_m.iter().map(|e| e.errors).sum()
    }

    pub fn total_trials(&self) -> usize {
        self.per_m.iter().map(|e| e.trials).sum()
    }

    pub fn entry(&self, m: usize) -> Option<&CerEntry> {
        self.per_m.iter().find(|e| e.m == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// The configured point only.
    Point,
    Snr,
    Retransmissions,
    K,
    M,
    Rho,
    Alpha,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Point => "point",
            SweepAxis::Snr => "snr",
            SweepAxis::Retransmissions => "retransmissions",
            SweepAxis::K => "k",
            SweepAxis::M => "m",
            SweepAxis::Rho => "rho",
            SweepAxis::Alpha => "alpha",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = AirconError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "point" => SweepAxis::Point,
            "snr" => SweepAxis::Snr,
            "retransmissions" | "r" => SweepAxis::Retransmissions,
            "k" => SweepAxis::K,
            "m" => SweepAxis::M,
            "rho" => SweepAxis::Rho,
            "alpha" => SweepAxis::Alpha,
            other => return Err(AirconError::config(format!("unknown sweep axis '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepValues {
    #[serde(default = "default_snr_values")]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_retransmission_values")]
    pub retransmissions: Vec<usize>,
    #[serde(default = "default_k_values", alias = "K")]
    pub k: Vec<usize>,
    /// Defaults to every `m` in `[1, K]`.
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default = "default_rho_values")]
    pub rho: Vec<f64>,
    #[serde(default = "default_alpha_values")]
    pub alpha: Vec<f64>,
}

fn default_snr_values() -> Vec<f64> {
    (-2..=4).map(|i| i as f64 * 5.0).collect()
}

fn default_retransmission_values() -> Vec<usize> {
    (1..=8).collect()
}

fn default_k_values() -> Vec<usize> {
    vec![3, 5, 7, 11, 21]
}

fn default_rho_values() -> Vec<f64> {
    (-4..=4).map(|i| i as f64 * 0.25).collect()
}

fn default_alpha_values() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}

impl Default for SweepValues {
    fn default() -> Self {
        SweepValues {
            snr_db: default_snr_values(),
            retransmissions: default_retransmission_values(),
            k: default_k_values(),
            m: Vec::new(),
            rho: default_rho_values(),
            alpha: default_alpha_values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(alias = "K")]
    pub k: usize,
    /// Honest-user counts evaluated at each point; empty means `1..=K`.
    #[serde(default)]
    pub m_values: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_hash_bits")]
    pub hash_bits: usize,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub adversary: AdversaryStrategy,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub downlink: Downlink,
    #[serde(default)]
    pub residual_phase_rad: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub sweep: SweepValues,
}

fn default_trials() -> usize {
    1000
}

fn default_hash_bits() -> usize {
    DEFAULT_HASH_BITS
}

impl ExperimentConfig {
    pub fn new(k: usize, channel: ChannelConfig) -> Self {
        ExperimentConfig {
            k,
            m_values: Vec::new(),
            trials: default_trials(),
            master_seed: 0,
            hash_bits: DEFAULT_HASH_BITS,
            channel,
            estimation: EstimationConfig::default(),
            adversary: AdversaryStrategy::None,
            thresholds: Thresholds::default(),
            downlink: Downlink::Ideal,
            residual_phase_rad: 0.0,
            output: None,
            sweep: SweepValues::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| AirconError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AirconError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(AirconError::config("trials must be at least 1"));
        }
        if let Some(m) = self.m_values.iter().find(|&&m| m == 0 || m > self.k) {
            return Err(AirconError::config(format!("m = {m} outside [1, {}]", self.k)));
        }
        self.scenario(self.k, self.k).validate()
    }

    fn m_list(&self, k: usize) -> Vec<usize> {
        if self.m_values.is_empty() || k != self.k {
            (1..=k).collect()
        } else {
            self.m_values.clone()
        }
    }

    pub fn scenario(&self, k: usize, m: usize) -> Scenario {
        Scenario {
            k,
            m,
            hash_bits: self.hash_bits,
            adversary: self.adversary,
            channel: self.channel.clone(),
            estimation: self.estimation,
            thresholds: self.thresholds,
            downlink: self.downlink,
            residual_phase_rad: self.residual_phase_rad,
        }
    }

    /// Points along `axis` as (axis value, modified config, m values).
    pub fn points(&self, axis: SweepAxis) -> Result<Vec<SweepPoint>> {
        let base = |value: f64, cfg: ExperimentConfig| {
            let m = cfg.m_list(cfg.k);
            SweepPoint { axis_value: value, config: cfg, m_values: m }
        };
        let pts: Vec<SweepPoint> = match axis {
            SweepAxis::Point => vec![base(0.0, self.clone())],
            SweepAxis::Snr => self
                .sweep
                .snr_db
                .iter()
                .map(|&s| {
                    let mut c = self.clone();
                    c.channel.snr_db = s;
                    base(s, c)
                })
                .collect(),
            SweepAxis::Retransmissions => self
                .sweep
                .retransmissions
                .iter()
                .map(|&r| {
                    let mut c = self.clone();
                    c.estimation.retransmissions = r;
                    base(r as f64, c)
                })
                .collect(),
            SweepAxis::K => self
                .sweep
                .k
                .iter()
                .map(|&k| {
                    let mut c = self.clone();
                    c.k = k;
                    c.m_values.clear();
                    base(k as f64, c)
                })
                .collect(),
            SweepAxis::M => {
                let ms = if self.sweep.m.is_empty() { self.m_list(self.k) } else { self.sweep.m.clone() };
                ms.into_iter()
                    .map(|m| SweepPoint { axis_value: m as f64, config: self.clone(), m_values: vec![m] })
                    .collect()
            }
            SweepAxis::Rho => self
                .sweep
                .rho
                .iter()
                .map(|&rho| {
                    let mut c = self.clone();
                    c.adversary = AdversaryStrategy::RhoTargeted { rho };
                    base(rho, c)
                })
                .collect(),
            SweepAxis::Alpha => self
                .sweep
                .alpha
                .iter()
                .map(|&alpha| {
                    let m = ((self.k as f64) * (1.0 - alpha)).round().clamp(1.0, self.k as f64) as usize;
                    SweepPoint { axis_value: alpha, config: self.clone(), m_values: vec![m] }
                })
                .collect(),
        };
        if pts.is_empty() {
            return Err(AirconError::config(format!("no values for sweep axis {axis}")));
        }
        for p in &pts {
            if p.config.k == 0 || p.m_values.iter().any(|&m| m == 0 || m > p.config.k) {
                return Err(AirconError::config(format!("sweep value {} leaves m outside [1, K]", p.axis_value)));
            }
            p.config.scenario(p.config.k, p.m_values[0]).validate()?;
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub config: ExperimentConfig,
    pub m_values: Vec<usize>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-trial seed from the master seed, point index, `m` and trial.
pub fn trial_seed(master: u64, point: u64, m: u64, trial: u64) -> u64 {
    [point, m, trial].iter().fold(splitmix64(master), |h, &v| splitmix64(h ^ v))
}

/// CER for every `m` of one point, trials in parallel.
pub fn run_point(point: &SweepPoint, point_index: u64) -> CerResult {
    let cfg = &point.config;
    let per_m = point
        .m_values
        .iter()
        .map(|&m| {
            let sc = cfg.scenario(cfg.k, m);
            let errors = (0..cfg.trials as u64)
                .into_par_iter()
                .filter(|&t| is_consensus_error(&run_consensus(&sc, trial_seed(cfg.master_seed, point_index, m as u64, t))))
                .count();
            CerEntry { m, trials: cfg.trials, errors }
        })
        .collect();
    CerResult { k: cfg.k, per_m }
}

/// All traces of one point, in (m, trial) order.
pub fn run_point_traces(point: &SweepPoint, point_index: u64) -> Vec<ConsensusTrace> {
    let cfg = &point.config;
    point
        .m_values
        .iter()
        .flat_map(|&m| {
            let sc = cfg.scenario(cfg.k, m);
            (0..cfg.trials as u64)
                .into_par_iter()
                .map(|t| run_consensus(&sc, trial_seed(cfg.master_seed, point_index, m as u64, t)))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Writes CSV rows to `out` one point at a time, flushing after each, so a
/// failure leaves every completed point on disk.
pub struct CerWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CerWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(CSV_HEADER)?;
        inner.flush()?;
        Ok(CerWriter { inner })
    }

    pub fn write_point(&mut self, axis: SweepAxis, point: &SweepPoint, result: &CerResult) -> Result<()> {
        let cfg = &point.config;
        let common = |m: String, trials: usize, errors: usize, cer: f64, se: f64, flag: u8| {
            vec![
                SCHEMA_ID.to_string(),
                cfg.master_seed.to_string(),
                axis.as_str().to_string(),
                format!("{:.4}", point.axis_value),
                cfg.channel.kind.as_str().to_string(),
                format!("{:.2}", cfg.channel.snr_db),
                cfg.k.to_string(),
                m,
                trials.to_string(),
                errors.to_string(),
                format!("{cer:.6}"),
                format!("{se:.6}"),
                flag.to_string(),
            ]
        };
        for e in &result.per_m {
            self.inner.write_record(common(e.m.to_string(), e.trials, e.errors, e.cer(), e.stderr(), 0))?;
        }
        self.inner.write_record(common(
            String::new(),
            result.total_trials(),
            result.total_errors(),
            result.acer(),
            result.acer_stderr(),
            1,
        ))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| AirconError::Io(e.into_error()))
    }
}

/// Results of a completed sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<(f64, CerResult)>,
}

/// Runs every point of `axis` and streams rows to `out`.
pub fn sweep<W: Write>(cfg: &ExperimentConfig, axis: SweepAxis, out: W) -> Result<SweepResult> {
    cfg.validate()?;
    let points = cfg.points(axis)?;
    let mut writer = CerWriter::new(out)?;
    let mut results = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let r = run_point(p, i as u64);
        writer.write_point(axis, p, &r)?;
        results.push((p.axis_value, r));
    }
    writer.into_inner()?;
    Ok(SweepResult { axis, points: results })
}

/// Sweep results without CSV output.
pub fn sweep_results(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<SweepResult> {
    sweep(cfg, axis, std::io::sink())
}

fn honest_range(report: &Option<HcfReport>, m: usize) -> (String, String) {
    match report {
        Some(r) => {
            let h = &r.per_user[..m];
            let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (format!("{lo:.6}"), format!("{hi:.6}"))
        }
        None => (String::new(), String::new()),
    }
}

/// One row per run.
pub fn write_trace_csv<W: Write>(out: W, sc_for: impl Fn(usize) -> Scenario, traces: &[ConsensusTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for t in traces {
        let sc = sc_for(t.m_true);
        let (h1lo, h1hi) = honest_range(&t.hcf_round1, t.m_true);
        let (h2lo, h2hi) = honest_range(&t.hcf_round2, t.m_true);
        w.write_record([
            t.seed.to_string(),
            t.k.to_string(),
            t.m_true.to_string(),
            sc.adversary.as_str().to_string(),
            format!("{:.6}", sc.alpha()),
            sc.adversary.rho().map(|r| format!("{r:.6}")).unwrap_or_default(),
            sc.channel.kind.as_str().to_string(),
            format!("{:.2}", sc.channel.snr_db),
            sc.estimation.retransmissions.to_string(),
            if t.outcome.is_achieved() { "achieved" } else { "not_achieved" }.to_string(),
            t.repliers.len().to_string(),
            h1lo,
            h1hi,
            h2lo,
            h2hi,
            t.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Resource-block accounting for one consensus instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub k: u64,
    pub n: u64,
    pub m: u64,
    pub pbft_messages: u64,
    pub pbft_rbs: u64,
    pub aircon_rbs: u64,
    pub aircon_ce_rbs: u64,
}

/// PBFT prepare/commit messages and RBs against the AirCon RBs with and
/// without CSI acquisition, for `K` users, `N` RBs per message and pilot
/// stride `M`.
pub fn complexity_report(k: u64, n: u64, m: u64) -> Result<ComplexityReport> {
    if k < 2 || n < 1 || m < 1 {
        return Err(AirconError::invalid(format!("need K >= 2, N >= 1, M >= 1; got {k}, {n}, {m}")));
    }
    let pbft_messages = (2 * k - 1) * (k - 1);
    Ok(ComplexityReport {
        k,
        n,
        m,
        pbft_messages,
        pbft_rbs: 2 * n * pbft_messages,
        aircon_rbs: 4 * n,
        aircon_ce_rbs: 4 * n + 4 * k.div_ceil(m) * n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;
    use crate::consensus::Outcome;

    fn ideal_cfg(k: usize, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            trials,
            estimation: EstimationConfig::perfect(),
            ..ExperimentConfig::new(k, ChannelConfig::new(ChannelKind::Awgn, f64::INFINITY))
        }
    }

    fn trace(k: usize, m: usize, outcome: Outcome) -> ConsensusTrace {
        let mut t = run_consensus(&Scenario::ideal(k, m), 0);
        t.outcome = outcome;
        t
    }

    #[test]
    fn cer_error_cases() {
        use Outcome::*;
        assert!(!is_consensus_error(&trace(7, 4, Achieved)));
        assert!(is_consensus_error(&trace(7, 4, NotAchieved)));
        assert!(is_consensus_error(&trace(7, 3, Achieved)));
        assert!(!is_consensus_error(&trace(7, 3, NotAchieved)));
        assert!(is_consensus_error(&trace(6, 3, Achieved)));
        let ts = vec![trace(7, 4, Achieved), trace(7, 4, NotAchieved), trace(7, 4, Achieved), trace(7, 4, Achieved)];
        assert_eq!(compute_cer(&ts).unwrap(), 0.25);
        assert!(compute_cer(&[]).is_err());
        assert!(compute_cer(&[trace(7, 4, Achieved), trace(7, 5, Achieved)]).is_err());
    }

    #[test]
    fn ideal_cer_is_zero() {
        let r = run_point(&ideal_cfg(7, 20).points(SweepAxis::Point).unwrap()[0], 0);
        assert_eq!(r.per_m.len(), 7);
        assert_eq!(r.total_errors(), 0);
        assert_eq!(r.acer(), 0.0);
    }

    #[test]
    fn acer_is_mean_of_column() {
        let r = CerResult {
            k: 3,
            per_m: vec![
                CerEntry { m: 1, trials: 10, errors: 1 },
                CerEntry { m: 2, trials: 10, errors: 4 },
                CerEntry { m: 3, trials: 10, errors: 0 },
            ],
        };
        assert!((r.acer() - (0.1 + 0.4) / 3.0).abs() < 1e-15);
        assert!((r.per_m[1].stderr() - (0.24f64 / 10.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..5 {
            for m in 1..8 {
                for t in 0..200 {
                    assert!(seen.insert(trial_seed(1, p, m, t)));
                }
            }
        }
        assert_eq!(trial_seed(1, 2, 3, 4), trial_seed(1, 2, 3, 4));
        assert_ne!(trial_seed(1, 2, 3, 4), trial_seed(2, 2, 3, 4));
    }

    #[test]
    fn csv_shape_and_reproducibility() {
        let mut cfg = ExperimentConfig {
            trials: 30,
            ..ExperimentConfig::new(5, ChannelConfig::new(ChannelKind::Flat, 0.0))
        };
        cfg.sweep.snr_db = vec![-5.0, 5.0];
        let run = |c: &ExperimentConfig| {
            let mut out = Vec::new();
            sweep(c, SweepAxis::Snr, &mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 2 * 6);
        assert!(lines[1].starts_with("aircon-cer-v1,0,snr,-5.0000,flat,-5.00,5,1,30,"));
        assert!(lines[6].ends_with(",1"));
        assert!(lines[6].split(',').nth(7).unwrap().is_empty());
        cfg.master_seed = 9;
        assert_ne!(a.replace(",0,snr", ",9,snr"), run(&cfg));
    }

    #[test]
    fn axes_build_points() {
        let cfg = ideal_cfg(7, 1);
        assert_eq!(cfg.points(SweepAxis::Snr).unwrap().len(), 7);
        assert_eq!(cfg.points(SweepAxis::Retransmissions).unwrap()[3].config.estimation.retransmissions, 4);
        let ks = cfg.points(SweepAxis::K).unwrap();
        assert_eq!(ks[4].m_values, (1..=21).collect::<Vec<_>>());
        assert_eq!(cfg.points(SweepAxis::M).unwrap().len(), 7);
        let a = cfg.points(SweepAxis::Alpha).unwrap();
        assert_eq!(a[1].m_values, vec![6]);
        let r = cfg.points(SweepAxis::Rho).unwrap();
        assert_eq!(r[0].config.adversary, AdversaryStrategy::RhoTargeted { rho: -1.0 });
        let mut bad = cfg.clone();
        bad.sweep.snr_db.clear();
        assert!(bad.points(SweepAxis::Snr).is_err());
        bad.sweep.k = vec![0];
        assert!(bad.points(SweepAxis::K).is_err());
        assert!("sideways".parse::<SweepAxis>().is_err());
        assert_eq!("R".parse::<SweepAxis>().unwrap(), SweepAxis::Retransmissions);
    }

    #[test]
    fn config_parsing() {
        let text = r#"
            K = 11
            trials = 50
            master_seed = 3
            m_values = [5, 6, 7]

            [channel]
            kind = "epa"
            snr_db = 0.0

            [estimation]
            method = "lmmse"
            stride = 4
            retransmissions = 2

            [adversary]
            kind = "rho_targeted"
            rho = -0.5

            [downlink]
            mode = "noisy"
            snr_db = 20.0

            [sweep]
            snr_db = [0.0, 10.0]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.k, 11);
        assert_eq!(cfg.m_values, vec![5, 6, 7]);
        assert_eq!(cfg.estimation.retransmissions, 2);
        assert_eq!(cfg.downlink, Downlink::Noisy { snr_db: 20.0 });
        assert_eq!(cfg.sweep.retransmissions, (1..=8).collect::<Vec<_>>());
        assert_eq!(cfg.thresholds, Thresholds::default());

        for bad in [
            "K = 5\ntrials = 0\n[channel]\nkind = \"awgn\"\nsnr_db = 0.0\n",
            "K = 5\nm_values = [6]\n[channel]\nkind = \"awgn\"\nsnr_db = 0.0\n",
            "K = 5\ncolour = 1\n[channel]\nkind = \"awgn\"\nsnr_db = 0.0\n",
            "K = 5\n[channel]\nkind = \"rician\"\nsnr_db = 0.0\n",
            "K = 5\n[channel]\nkind = \"awgn\"\nsnr_db = 0.0\n[thresholds]\nt_h1 = 0.7\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(AirconError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn trace_csv_rows() {
        let sc = Scenario { adversary: AdversaryStrategy::Antipodal, ..Scenario::ideal(7, 5) };
        let traces: Vec<_> = (0..3).map(|s| run_consensus(&sc, s)).collect();
        let mut out = Vec::new();
        write_trace_csv(&mut out, |_| sc.clone(), &traces).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], TRACE_HEADER.join(","));
        assert!(lines[1].starts_with("0,7,5,antipodal,0.285714,-1.000000,awgn,inf,1,achieved,5,0.428571,0.428571,0.714286,0.714286,"));
    }

    #[test]
    fn partial_results_survive_write_failure() {
        struct FailAfter {
            buf: Vec<u8>,
            budget: usize,
        }
        impl Write for FailAfter {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                if self.buf.len() + b.len() > self.budget {
                    return Err(std::io::Error::other("disk full"));
                }
                self.buf.extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut cfg = ideal_cfg(3, 2);
        cfg.sweep.snr_db = vec![0.0; 50];
        cfg.channel.kind = ChannelKind::Awgn;
        let mut sink = FailAfter { buf: Vec::new(), budget: 1500 };
        let err = sweep(&cfg, SweepAxis::Snr, &mut sink);
        assert!(matches!(err, Err(AirconError::Csv(_)) | Err(AirconError::Io(_))));
        let text = String::from_utf8(sink.buf).unwrap();
        assert!(text.lines().count() > 4);
        // every flushed line is complete
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn complexity_examples() {
        let r = complexity_report(2, 1, 1).unwrap();
        assert_eq!((r.pbft_messages, r.pbft_rbs, r.aircon_rbs), (3, 6, 4));
        assert_eq!(complexity_report(21, 43, 4).unwrap().aircon_ce_rbs, 1204);
        assert!(complexity_report(1, 1, 1).is_err());
        assert!(complexity_report(5, 0, 1).is_err());
        assert!(complexity_report(5, 1, 0).is_err());
        let ratio = |k| {
            let r = complexity_report(k, 43, 4).unwrap();
            r.pbft_rbs as f64 / r.aircon_rbs as f64
        };
        // doubling K roughly quadruples the ratio
        assert!((ratio(200) / ratio(100) - 4.0).abs() < 0.1);
    }
}

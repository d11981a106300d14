//! Closed-form timing model of one synchronous-SGD global parameter update.
//!
//! A cluster of `M` workers splits a single-node workload whose minibatch of
//! size `B` takes `C` seconds. Each global update runs `i` local iterations
//! (`T_cmt = i * C / M`) and then exchanges `M` copies of the `W`-byte
//! parameter set over a link of rate `chi` (`T_tnf = M * W / chi`).
//!
//! Compressed strategies are described by a [`CodecProfile`]: a size ratio
//! `rho` (compressed / original), an operation overhead `h` for computing in
//! the compressed domain, and the wall time to compress or decompress one
//! blob.
//!
//! Every phase of an update is expressed as `count * unit` where `unit` comes
//! from [`EventCosts`]. The event simulator in [`crate::simulator`] derives
//! the same counts by scheduling individual events, so both routes produce
//! bit-identical totals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound for worker-count scans.
pub const DEFAULT_M_LIMIT: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be strictly positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must be finite (got {value})")]
    NotFinite { field: &'static str, value: f64 },
    #[error("minibatch {minibatch} is smaller than the worker count {workers}")]
    MinibatchTooSmall { minibatch: u32, workers: u32 },
    #[error("compression ratio rho must lie in (0, 1] (got {0})")]
    InvalidRatio(f64),
    #[error("operation overhead h must be >= 1 (got {0})")]
    InvalidOverhead(f64),
    #[error("{field} must be >= 0 (got {value})")]
    Negative { field: &'static str, value: f64 },
    #[error("target factor r must be >= 1 (got {0})")]
    InvalidTarget(f64),
    #[error("strategy {0} requires a codec profile")]
    MissingProfile(Strategy),
    #[error("worker range is empty or not strictly ascending")]
    BadWorkerRange,
    #[error("training needs at least one update")]
    NoUpdates,
    #[error("{0} list is empty")]
    EmptyList(&'static str),
}

fn positive(field: &'static str, value: f64) -> Result<(), ConfigError> {
    if !value.is_finite() {
        return Err(ConfigError::NotFinite { field, value });
    }
    if value <= 0.0 {
        return Err(ConfigError::NonPositive { field, value });
    }
    Ok(())
}

fn non_negative(field: &'static str, value: f64) -> Result<(), ConfigError> {
    if !value.is_finite() {
        return Err(ConfigError::NotFinite { field, value });
    }
    if value < 0.0 {
        return Err(ConfigError::Negative { field, value });
    }
    Ok(())
}

/// Cluster and workload description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Number of worker nodes `M`.
    pub workers: u32,
    /// Single-node seconds per minibatch of size `B` (`C`).
    pub minibatch_time_s: f64,
    /// Local minibatch iterations per global update (`i`).
    pub iterations: u32,
    /// Total size of the weight parameters in bytes (`W`).
    pub weight_bytes: u64,
    /// Cluster transmission rate in bytes per second (`chi`).
    pub bandwidth_bytes_per_s: f64,
    /// Single-node minibatch size in samples (`B`).
    pub minibatch: u32,
    /// Dataset size in samples (`D`); only used for epoch accounting.
    pub dataset: u64,
}

impl ClusterConfig {
    /// AlexNet-sized scenario on a Gigabit Ethernet cluster.
    ///
    /// `W` is the 233 MiB caffemodel, `chi` is 1 Gbit/s, 200 iterations per
    /// update and 16 workers. The per-minibatch time of 0.5 s is a stand-in.
    pub fn alexnet_like() -> Self {
        Self {
            workers: 16,
            minibatch_time_s: 0.5,
            iterations: 200,
            weight_bytes: 244_318_208,
            bandwidth_bytes_per_s: 125_000_000.0,
            minibatch: 256,
            dataset: 1_281_167,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("workers", self.workers as f64)?;
        positive("minibatch_time_s", self.minibatch_time_s)?;
        positive("iterations", self.iterations as f64)?;
        positive("weight_bytes", self.weight_bytes as f64)?;
        positive("bandwidth_bytes_per_s", self.bandwidth_bytes_per_s)?;
        positive("minibatch", self.minibatch as f64)?;
        positive("dataset", self.dataset as f64)?;
        if self.minibatch < self.workers {
            return Err(ConfigError::MinibatchTooSmall { minibatch: self.minibatch, workers: self.workers });
        }
        let per_update = self.per_update_compute();
        if !per_update.is_finite() {
            return Err(ConfigError::NotFinite { field: "iterations * minibatch_time_s", value: per_update });
        }
        Ok(())
    }

    /// Same cluster with a different worker count.
    ///
    /// The result is not re-validated: scans may go past `B` workers, in
    /// which case the reported local minibatch `b` is fractional.
    pub fn with_workers(&self, workers: u32) -> Self {
        Self { workers, ..*self }
    }

    /// Single-node compute per global update, `C_u = i * C`.
    pub fn per_update_compute(&self) -> f64 {
        self.iterations as f64 * self.minibatch_time_s
    }

    /// Local minibatch size `b = B / M`.
    pub fn local_minibatch(&self) -> f64 {
        self.minibatch as f64 / self.workers as f64
    }

    /// Global updates needed for one pass over the dataset.
    pub fn updates_per_epoch(&self) -> f64 {
        self.dataset as f64 / (self.minibatch as f64 * self.iterations as f64)
    }
}

/// Analytic codec parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecProfile {
    /// Compressed size over original size, in `(0, 1]`.
    pub rho: f64,
    /// Compressed-domain operation time over original operation time, `>= 1`.
    pub op_overhead: f64,
    /// Seconds to compress one `W`-byte blob.
    pub compress_s: f64,
    /// Seconds to decompress one `W`-byte blob.
    pub decompress_s: f64,
}

impl CodecProfile {
    pub fn new(rho: f64, op_overhead: f64, compress_s: f64, decompress_s: f64) -> Result<Self, ConfigError> {
        let p = Self { rho, op_overhead, compress_s, decompress_s };
        p.validate()?;
        Ok(p)
    }

    /// Builds a profile from a size ratio quoted as original / compressed
    /// (e.g. `1.079`), the usual convention for compression tables.
    pub fn from_size_ratio(
        original_over_compressed: f64,
        op_overhead: f64,
        compress_s: f64,
        decompress_s: f64,
    ) -> Result<Self, ConfigError> {
        positive("size_ratio", original_over_compressed)?;
        Self::new(1.0 / original_over_compressed, op_overhead, compress_s, decompress_s)
    }

    /// Compressed-domain profile with no per-update codec cost.
    pub fn homomorphic(rho: f64, op_overhead: f64) -> Result<Self, ConfigError> {
        Self::new(rho, op_overhead, 0.0, 0.0)
    }

    /// Gzip on the AlexNet caffemodel: ratio 1.079, 8.079 s to compress and
    /// 1.898 s to decompress.
    pub fn gzip_alexnet() -> Self {
        Self::from_size_ratio(1.079, 1.0, 8.079, 1.898).expect("constant profile is valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho.is_finite() && self.rho > 0.0 && self.rho <= 1.0) {
            return Err(ConfigError::InvalidRatio(self.rho));
        }
        if !(self.op_overhead.is_finite() && self.op_overhead >= 1.0) {
            return Err(ConfigError::InvalidOverhead(self.op_overhead));
        }
        non_negative("compress_s", self.compress_s)?;
        non_negative("decompress_s", self.decompress_s)?;
        Ok(())
    }
}

/// How parameters travel between workers and the parameter server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Raw parameters, no compression.
    Vanilla,
    /// Compress before every transfer and decompress after it.
    #[serde(alias = "repetitive")]
    RepetitiveCodec,
    /// Compress once, train and aggregate in the compressed domain.
    #[serde(alias = "homomorphic")]
    OneTimeHomomorphic,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Vanilla, Strategy::RepetitiveCodec, Strategy::OneTimeHomomorphic];

    pub fn needs_profile(self) -> bool {
        !matches!(self, Strategy::Vanilla)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Vanilla => "vanilla",
            Strategy::RepetitiveCodec => "repetitive",
            Strategy::OneTimeHomomorphic => "homomorphic",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Strategy::Vanilla),
            "repetitive" | "repetitive_codec" => Ok(Strategy::RepetitiveCodec),
            "homomorphic" | "one_time_homomorphic" => Ok(Strategy::OneTimeHomomorphic),
            other => Err(format!("unknown strategy '{other}' (expected vanilla|repetitive|homomorphic)")),
        }
    }
}

/// Per-phase durations of one global parameter update, in seconds.
///
/// `t_cmt` is the local compute phase; everything else is time a worker
/// spends waiting on parameters and is folded into `t_tnf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub local_compute_s: f64,
    pub worker_compress_s: f64,
    pub push_transfer_s: f64,
    pub server_decompress_s: f64,
    pub aggregate_s: f64,
    pub server_compress_s: f64,
    pub broadcast_transfer_s: f64,
    pub worker_decompress_s: f64,
    pub t_cmt: f64,
    pub t_tnf: f64,
    pub t_update: f64,
}

impl PhaseBreakdown {
    /// Builds a breakdown from the eight phase durations, in protocol order.
    #[allow(clippy::too_many_arguments)]
    pub fn from_phases(
        local_compute_s: f64,
        worker_compress_s: f64,
        push_transfer_s: f64,
        server_decompress_s: f64,
        aggregate_s: f64,
        server_compress_s: f64,
        broadcast_transfer_s: f64,
        worker_decompress_s: f64,
    ) -> Self {
        let t_cmt = local_compute_s;
        let t_tnf = worker_compress_s
            + push_transfer_s
            + server_decompress_s
            + aggregate_s
            + server_compress_s
            + broadcast_transfer_s
            + worker_decompress_s;
        Self {
            local_compute_s,
            worker_compress_s,
            push_transfer_s,
            server_decompress_s,
            aggregate_s,
            server_compress_s,
            broadcast_transfer_s,
            worker_decompress_s,
            t_cmt,
            t_tnf,
            t_update: t_cmt + t_tnf,
        }
    }

    pub fn phases(&self) -> [f64; 8] {
        [
            self.local_compute_s,
            self.worker_compress_s,
            self.push_transfer_s,
            self.server_decompress_s,
            self.aggregate_s,
            self.server_compress_s,
            self.broadcast_transfer_s,
            self.worker_decompress_s,
        ]
    }

    /// Codec time spent inside one update (compress + decompress phases).
    pub fn codec_s(&self) -> f64 {
        self.worker_compress_s + self.server_decompress_s + self.server_compress_s + self.worker_decompress_s
    }
}

/// Unit durations of the individual events that make up one update.
///
/// The link time of one blob is split evenly between the push and the
/// broadcast direction, so a full exchange of `M` blobs costs `M * W / chi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventCosts {
    pub workers: u32,
    pub iterations: u32,
    /// One local minibatch, `h * C / M`.
    pub minibatch_s: f64,
    pub worker_compress_s: f64,
    /// One blob over the link in one direction, `rho * W / chi / 2`.
    pub blob_one_way_s: f64,
    pub server_decompress_s: f64,
    pub server_compress_s: f64,
    pub worker_decompress_s: f64,
}

impl EventCosts {
    pub fn new(cfg: &ClusterConfig, strategy: Strategy, profile: Option<&CodecProfile>) -> Result<Self, ConfigError> {
        let profile = match (strategy, profile) {
            (Strategy::Vanilla, _) => None,
            (s, None) => return Err(ConfigError::MissingProfile(s)),
            (_, Some(p)) => {
                p.validate()?;
                Some(p)
            }
        };
        Ok(Self::unchecked(cfg, strategy, profile))
    }

    fn unchecked(cfg: &ClusterConfig, strategy: Strategy, profile: Option<&CodecProfile>) -> Self {
        let c = local_minibatch_time(cfg);
        let blob = blob_transfer_time(cfg);
        let mut costs = Self {
            workers: cfg.workers,
            iterations: cfg.iterations,
            minibatch_s: c,
            worker_compress_s: 0.0,
            blob_one_way_s: 0.5 * blob,
            server_decompress_s: 0.0,
            server_compress_s: 0.0,
            worker_decompress_s: 0.0,
        };
        match (strategy, profile) {
            (Strategy::Vanilla, _) | (_, None) => {}
            (Strategy::RepetitiveCodec, Some(p)) => {
                costs.blob_one_way_s = 0.5 * (p.rho * blob);
                costs.worker_compress_s = p.compress_s;
                costs.server_decompress_s = p.decompress_s;
                costs.server_compress_s = p.compress_s;
                costs.worker_decompress_s = p.decompress_s;
            }
            (Strategy::OneTimeHomomorphic, Some(p)) => {
                costs.minibatch_s = p.op_overhead * c;
                costs.blob_one_way_s = 0.5 * (p.rho * blob);
            }
        }
        costs
    }

    /// Compressed-domain costs for arbitrary `h` and `rho`, without range checks.
    pub fn homomorphic_raw(cfg: &ClusterConfig, h: f64, rho: f64) -> Self {
        let c = local_minibatch_time(cfg);
        let blob = blob_transfer_time(cfg);
        Self {
            workers: cfg.workers,
            iterations: cfg.iterations,
            minibatch_s: h * c,
            worker_compress_s: 0.0,
            blob_one_way_s: 0.5 * (rho * blob),
            server_decompress_s: 0.0,
            server_compress_s: 0.0,
            worker_decompress_s: 0.0,
        }
    }

    /// Closed-form breakdown: workers run in parallel, the server and the
    /// shared link serve one blob at a time.
    pub fn closed_form(&self) -> PhaseBreakdown {
        let m = self.workers as f64;
        PhaseBreakdown::from_phases(
            self.iterations as f64 * self.minibatch_s,
            self.worker_compress_s,
            m * self.blob_one_way_s,
            m * self.server_decompress_s,
            0.0,
            self.server_compress_s,
            m * self.blob_one_way_s,
            self.worker_decompress_s,
        )
    }
}

/// Local minibatch time `c = C / M`.
pub fn local_minibatch_time(cfg: &ClusterConfig) -> f64 {
    cfg.minibatch_time_s / cfg.workers as f64
}

/// Computation time per update, `T_cmt = i * c`.
pub fn computation_time(cfg: &ClusterConfig) -> f64 {
    cfg.iterations as f64 * local_minibatch_time(cfg)
}

/// Time to move one `W`-byte parameter set through the link, `W / chi`.
pub fn blob_transfer_time(cfg: &ClusterConfig) -> f64 {
    cfg.weight_bytes as f64 / cfg.bandwidth_bytes_per_s
}

/// Parameter transfer time per update, `T_tnf = M * W / chi`.
pub fn transfer_time(cfg: &ClusterConfig) -> f64 {
    cfg.workers as f64 * blob_transfer_time(cfg)
}

pub fn update_time(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
) -> Result<PhaseBreakdown, ConfigError> {
    cfg.validate()?;
    Ok(EventCosts::new(cfg, strategy, profile)?.closed_form())
}

/// Compressed-domain update time for any `h` and `rho`, unvalidated.
pub fn homomorphic_update_time(cfg: &ClusterConfig, h: f64, rho: f64) -> PhaseBreakdown {
    EventCosts::homomorphic_raw(cfg, h, rho).closed_form()
}

/// Single-node per-update time over distributed per-update time.
pub fn speedup(cfg: &ClusterConfig, strategy: Strategy, profile: Option<&CodecProfile>) -> Result<f64, ConfigError> {
    let t = update_time(cfg, strategy, profile)?;
    Ok(cfg.per_update_compute() / t.t_update)
}

// Unvalidated speedup at an arbitrary worker count, for scans.
fn speedup_at(cfg: &ClusterConfig, workers: u32, strategy: Strategy, profile: Option<&CodecProfile>) -> f64 {
    let at = cfg.with_workers(workers);
    let t = EventCosts::unchecked(&at, strategy, profile).closed_form();
    at.per_update_compute() / t.t_update
}

/// Smallest `M >= 1` at which transfer time reaches computation time.
pub fn crossover_workers(cfg: &ClusterConfig) -> u32 {
    let dominates = |m: u32| {
        let at = cfg.with_workers(m);
        transfer_time(&at) >= computation_time(&at)
    };
    let continuous = (cfg.per_update_compute() * cfg.bandwidth_bytes_per_s / cfg.weight_bytes as f64).sqrt();
    let mut m = continuous.ceil().clamp(1.0, u32::MAX as f64) as u32;
    // The square root may land one off once rounding enters; settle on the
    // exact predicate.
    while m > 1 && dominates(m - 1) {
        m -= 1;
    }
    while !dominates(m) {
        m += 1;
    }
    m
}

/// Continuous minimiser of the update time over `M`, if it exists.
///
/// All strategies share the shape `A / M + K * M + const`, so the optimum is
/// `sqrt(A / K)`. Returns `None` when nothing grows with `M`.
pub fn continuous_optimum(cfg: &ClusterConfig, strategy: Strategy, profile: Option<&CodecProfile>) -> Option<f64> {
    let blob = blob_transfer_time(cfg);
    let (h, per_worker) = match (strategy, profile) {
        (Strategy::Vanilla, _) | (_, None) => (1.0, blob),
        (Strategy::RepetitiveCodec, Some(p)) => (1.0, p.rho * blob + p.decompress_s),
        (Strategy::OneTimeHomomorphic, Some(p)) => (p.op_overhead, p.rho * blob),
    };
    if per_worker <= 0.0 {
        return None;
    }
    Some((h * cfg.per_update_compute() / per_worker).sqrt())
}

/// Worker count in `[1, m_limit]` maximising speedup, with that speedup.
/// Ties go to the smaller worker count.
pub fn optimal_workers(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
    m_limit: u32,
) -> Result<(u32, f64), ConfigError> {
    cfg.validate()?;
    EventCosts::new(cfg, strategy, profile)?;
    positive("m_limit", m_limit as f64)?;

    let Some(x) = continuous_optimum(cfg, strategy, profile) else {
        return Ok((m_limit, speedup_at(cfg, m_limit, strategy, profile)));
    };
    let lo = x.floor().clamp(1.0, m_limit as f64) as u32;
    let hi = x.ceil().clamp(1.0, m_limit as f64) as u32;
    let first = lo.saturating_sub(1).max(1);
    let last = hi.saturating_add(1).min(m_limit);
    let mut best = (first, speedup_at(cfg, first, strategy, profile));
    for m in first + 1..=last {
        let s = speedup_at(cfg, m, strategy, profile);
        if s > best.1 {
            best = (m, s);
        }
    }
    Ok(best)
}

/// Largest operation overhead that keeps a compressed-domain update within
/// `r` times the ideal per-update time `C_u / M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub rho: f64,
    pub h_max: f64,
    pub target_factor: f64,
    /// `h_max >= 1`: some compressed-domain implementation can meet the target.
    pub feasible: bool,
}

/// `h_max = r - (M^2 * W / (C_u * chi)) * rho`.
pub fn frontier_h_max(cfg: &ClusterConfig, rho: f64, r: f64) -> Result<FrontierPoint, ConfigError> {
    if !(rho.is_finite() && rho > 0.0 && rho <= 1.0) {
        return Err(ConfigError::InvalidRatio(rho));
    }
    if !(r.is_finite() && r >= 1.0) {
        return Err(ConfigError::InvalidTarget(r));
    }
    Ok(frontier_h_max_raw(cfg, rho, r))
}

pub(crate) fn frontier_h_max_raw(cfg: &ClusterConfig, rho: f64, r: f64) -> FrontierPoint {
    let m = cfg.workers as f64;
    let slope = m * m * cfg.weight_bytes as f64 / (cfg.per_update_compute() * cfg.bandwidth_bytes_per_s);
    let h_max = r - slope * rho;
    FrontierPoint { rho, h_max, target_factor: r, feasible: h_max >= 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs())
    }

    fn cfg(workers: u32, iterations: u32) -> ClusterConfig {
        ClusterConfig { workers, iterations, ..ClusterConfig::alexnet_like() }
    }

    #[test]
    fn local_minibatch_time_examples() {
        assert_eq!(local_minibatch_time(&cfg(1, 200)), 0.5);
        assert_eq!(local_minibatch_time(&cfg(16, 200)), 0.03125);
        assert!(rel_eq(local_minibatch_time(&cfg(25, 200)), 0.02, 1e-15));
    }

    #[test]
    fn computation_time_examples() {
        assert_eq!(computation_time(&cfg(1, 200)), 100.0);
        assert_eq!(computation_time(&cfg(16, 200)), 6.25);
        assert_eq!(computation_time(&cfg(4, 20)), 2.5);
    }

    #[test]
    fn transfer_time_examples() {
        // 244_318_208 / 125e6 = 1.954545664
        assert!(rel_eq(transfer_time(&cfg(1, 200)), 1.954_545_664, 1e-12));
        assert!(rel_eq(transfer_time(&cfg(16, 200)), 31.272_730_624, 1e-12));
        let unit = ClusterConfig { weight_bytes: 1, bandwidth_bytes_per_s: 1.0, workers: 1, ..cfg(1, 1) };
        assert_eq!(transfer_time(&unit), 1.0);
    }

    #[test]
    fn vanilla_update_is_exact_sum() {
        let c = cfg(16, 200);
        let t = update_time(&c, Strategy::Vanilla, None).unwrap();
        assert_eq!(t.t_update, computation_time(&c) + transfer_time(&c));
        assert!(rel_eq(t.t_update, 37.522_730_624, 1e-12));
        assert_eq!(t.t_cmt, 6.25);
    }

    #[test]
    fn repetitive_update_with_gzip_profile() {
        let c = cfg(16, 200);
        let p = CodecProfile::gzip_alexnet();
        let t = update_time(&c, Strategy::RepetitiveCodec, Some(&p)).unwrap();
        // 6.25 + (8.079 + 16 * 1.898 + 8.079 + 1.898) + 31.272730624 / 1.079
        let expected = 6.25 + (8.079 + 16.0 * 1.898 + 8.079 + 1.898) + 31.272_730_624 / 1.079;
        assert!(rel_eq(t.t_update, expected, 1e-12));
        assert!(rel_eq(t.t_update, 83.657_068_233_549_58, 1e-9));
        let vanilla = update_time(&c, Strategy::Vanilla, None).unwrap();
        assert!(t.t_update > vanilla.t_update);
        // Codec time per update beats the transfer saving.
        assert!(t.codec_s() > (1.0 - p.rho) * transfer_time(&c));
    }

    #[test]
    fn homomorphic_update() {
        let c = cfg(16, 200);
        let p = CodecProfile::homomorphic(0.2, 1.3).unwrap();
        let t = update_time(&c, Strategy::OneTimeHomomorphic, Some(&p)).unwrap();
        assert!(rel_eq(t.t_update, 1.3 * 6.25 + 0.2 * 31.272_730_624, 1e-12));
        assert!((t.t_update - 14.38).abs() < 0.005);
    }

    #[test]
    fn missing_profile_is_rejected() {
        let c = cfg(16, 200);
        for s in [Strategy::RepetitiveCodec, Strategy::OneTimeHomomorphic] {
            assert_eq!(update_time(&c, s, None), Err(ConfigError::MissingProfile(s)));
        }
    }

    #[test]
    fn speedup_examples() {
        let single = speedup(&cfg(1, 200), Strategy::Vanilla, None).unwrap();
        assert!(rel_eq(single, 100.0 / (100.0 + 1.954_545_664), 1e-12));
        assert!(single < 1.0);
        let v = speedup(&cfg(16, 200), Strategy::Vanilla, None).unwrap();
        assert!(rel_eq(v, 100.0 / 37.522_730_624, 1e-12));
        let p = CodecProfile::homomorphic(0.2, 1.0).unwrap();
        let h = speedup(&cfg(16, 200), Strategy::OneTimeHomomorphic, Some(&p)).unwrap();
        assert!((h - 8.00).abs() < 0.005);
    }

    #[test]
    fn crossover_examples() {
        let base = cfg(1, 200);
        assert_eq!(crossover_workers(&base), 8);
        let unit =
            ClusterConfig { weight_bytes: 1, bandwidth_bytes_per_s: 1.0, minibatch_time_s: 1.0, iterations: 1, ..base };
        assert_eq!(crossover_workers(&unit), 1);
        let long = ClusterConfig { iterations: 20_000, ..base };
        assert_eq!(long.per_update_compute(), 10_000.0);
        assert_eq!(crossover_workers(&long), 72);
    }

    #[test]
    fn optimal_worker_examples() {
        let base = cfg(1, 200);
        let (m, s) = optimal_workers(&base, Strategy::Vanilla, None, DEFAULT_M_LIMIT).unwrap();
        assert_eq!(m, 7);
        assert!(rel_eq(s, speedup_at(&base, 7, Strategy::Vanilla, None), 0.0));

        let p = CodecProfile::homomorphic(0.2, 1.0).unwrap();
        let (m, _) = optimal_workers(&base, Strategy::OneTimeHomomorphic, Some(&p), DEFAULT_M_LIMIT).unwrap();
        assert_eq!(m, 16);

        // Negligible communication: speedup keeps growing to the limit.
        let free = ClusterConfig { weight_bytes: 1, bandwidth_bytes_per_s: 1e300, ..base };
        let (m, _) = optimal_workers(&free, Strategy::Vanilla, None, 64).unwrap();
        assert_eq!(m, 64);
    }

    #[test]
    fn frontier_examples() {
        let c = ClusterConfig { workers: 16, ..ClusterConfig::alexnet_like() };
        let p = frontier_h_max(&c, 0.2, 4.0).unwrap();
        // 4 - (256 * 1.954545664 / 100) * 0.2
        assert!(rel_eq(p.h_max, 4.0 - 256.0 * 1.954_545_664 / 100.0 * 0.2, 1e-12));
        assert!((p.h_max - 2.9993).abs() < 5e-5);
        assert!(p.feasible);
        let q = frontier_h_max(&c, 0.5, 4.0).unwrap();
        assert!(rel_eq(q.h_max, 4.0 - 256.0 * 1.954_545_664 / 100.0 * 0.5, 1e-12));
        assert!((q.h_max - 1.498_18).abs() < 5e-6);
        let tiny = frontier_h_max(&c, 1e-300, 4.0).unwrap();
        assert_eq!(tiny.h_max, 4.0);
        let infeasible = frontier_h_max(&c, 1.0, 1.0).unwrap();
        assert!(!infeasible.feasible);
        assert!(frontier_h_max(&c, 0.0, 4.0).is_err());
        assert!(frontier_h_max(&c, 0.2, 0.5).is_err());
    }

    #[test]
    fn frontier_is_tight() {
        let c = ClusterConfig { workers: 16, ..ClusterConfig::alexnet_like() };
        let p = frontier_h_max(&c, 0.2, 4.0).unwrap();
        let t = homomorphic_update_time(&c, p.h_max, 0.2);
        let target = c.per_update_compute() / 16.0 * 4.0;
        assert!(rel_eq(t.t_update, target, 1e-12));
    }

    #[test]
    fn config_validation() {
        let good = ClusterConfig::alexnet_like();
        assert!(good.validate().is_ok());
        assert!(ClusterConfig { workers: 0, ..good }.validate().is_err());
        assert!(ClusterConfig { minibatch_time_s: f64::NAN, ..good }.validate().is_err());
        assert!(ClusterConfig { bandwidth_bytes_per_s: -1.0, ..good }.validate().is_err());
        assert_eq!(
            ClusterConfig { minibatch: 8, ..good }.validate(),
            Err(ConfigError::MinibatchTooSmall { minibatch: 8, workers: 16 })
        );
        assert!(CodecProfile::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CodecProfile::new(1.5, 1.0, 0.0, 0.0).is_err());
        assert!(CodecProfile::new(0.5, 0.9, 0.0, 0.0).is_err());
        assert!(CodecProfile::new(0.5, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn table_ratio_is_inverted() {
        let p = CodecProfile::gzip_alexnet();
        assert!(rel_eq(p.rho, 0.926_784, 1e-6));
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("homomorphic".parse::<Strategy>().unwrap(), Strategy::OneTimeHomomorphic);
        assert!("gzip".parse::<Strategy>().is_err());
        let s: Strategy = serde_json::from_str("\"repetitive\"").unwrap();
        assert_eq!(s, Strategy::RepetitiveCodec);
    }
}

//! Event-level simulation of synchronous-SGD global parameter updates.
//!
//! One update runs eight strictly sequential phases. Within a phase every
//! actor (worker, server, shared link) processes its own queue of events;
//! workers run in parallel, the server and the link serve one blob at a
//! time. A phase ends when the last actor drains its queue.
//!
//! Without jitter every event of a kind has the same duration and the phase
//! span is `events * unit`, which makes the simulated totals bit-identical
//! to [`cost_model::update_time`](crate::cost_model::update_time). The
//! seeded jitter hook perturbs individual events for cross-checks against
//! the network harness.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{ClusterConfig, CodecProfile, ConfigError, EventCosts};
use crate::exec::Exec;

pub use crate::cost_model::{PhaseBreakdown, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LocalCompute,
    WorkerCompress,
    PushTransfer,
    ServerDecompress,
    Aggregate,
    ServerCompress,
    BroadcastTransfer,
    WorkerDecompress,
}

impl Phase {
    pub const ORDER: [Phase; 8] = [
        Phase::LocalCompute,
        Phase::WorkerCompress,
        Phase::PushTransfer,
        Phase::ServerDecompress,
        Phase::Aggregate,
        Phase::ServerCompress,
        Phase::BroadcastTransfer,
        Phase::WorkerDecompress,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Worker(u32),
    Server,
    Link,
}

/// Completion of one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_s: f64,
    pub phase: Phase,
    pub actor: Actor,
    /// 1-based position of the event in its actor's queue for this phase.
    pub seq: u32,
}

#[derive(Debug, Clone, Default)]
pub struct UpdateOutcome {
    pub breakdown: Option<PhaseBreakdown>,
    pub trace: Vec<TraceEvent>,
}

/// Simulator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulator {
    /// Relative half-width of uniform per-event jitter; zero disables it.
    pub jitter: f64,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for Simulator {
    fn default() -> Self {
        Self { jitter: 0.0, seed: 0, record_trace: false }
    }
}

// Non-NaN time key for the event heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Queue {
    actor: Actor,
    events: u32,
    done: u32,
    // Accumulated jitter on top of `events * unit`.
    extra: f64,
}

struct Engine {
    clock: f64,
    rng: Option<ChaCha8Rng>,
    jitter: f64,
    trace: Option<Vec<TraceEvent>>,
}

impl Engine {
    fn duration(&mut self, unit: f64) -> f64 {
        match self.rng.as_mut() {
            Some(rng) => unit * (1.0 + rng.random_range(-self.jitter..=self.jitter)),
            None => unit,
        }
    }

    /// Runs one phase to completion and returns its span.
    fn phase(&mut self, phase: Phase, queues: Vec<(Actor, u32)>, unit: f64) -> f64 {
        let mut queues: Vec<Queue> = queues
            .into_iter()
            .filter(|&(_, n)| n > 0)
            .map(|(actor, events)| Queue { actor, events, done: 0, extra: 0.0 })
            .collect();
        if queues.is_empty() {
            return 0.0;
        }
        let start = self.clock;
        let mut heap = BinaryHeap::with_capacity(queues.len());
        for (idx, q) in queues.iter_mut().enumerate() {
            let d = self.duration(unit);
            q.extra += d - unit;
            heap.push(Reverse((Time(start + d), idx)));
        }
        while let Some(Reverse((Time(t), idx))) = heap.pop() {
            let q = &mut queues[idx];
            q.done += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEvent { time_s: t, phase, actor: q.actor, seq: q.done });
            }
            if q.done < q.events {
                let d = match self.rng.as_mut() {
                    Some(rng) => unit * (1.0 + rng.random_range(-self.jitter..=self.jitter)),
                    None => unit,
                };
                q.extra += d - unit;
                heap.push(Reverse((Time(t + d), idx)));
            }
        }
        let span = queues.iter().map(|q| q.events as f64 * unit + q.extra).fold(f64::NEG_INFINITY, f64::max);
        self.clock = start + span;
        span
    }
}

impl Simulator {
    pub fn run_update(
        &self,
        cfg: &ClusterConfig,
        strategy: Strategy,
        profile: Option<&CodecProfile>,
    ) -> Result<UpdateOutcome, ConfigError> {
        cfg.validate()?;
        let costs = EventCosts::new(cfg, strategy, profile)?;
        let mut engine = self.engine(0);
        let breakdown = run_events(&mut engine, &costs, strategy);
        Ok(UpdateOutcome { breakdown: Some(breakdown), trace: engine.trace.unwrap_or_default() })
    }

    fn engine(&self, stream: u64) -> Engine {
        Engine {
            clock: 0.0,
            rng: (self.jitter > 0.0).then(|| ChaCha8Rng::seed_from_u64(crate::bench::mix_seed(self.seed, stream))),
            jitter: self.jitter,
            trace: self.record_trace.then(Vec::new),
        }
    }
}

fn run_events(engine: &mut Engine, costs: &EventCosts, strategy: Strategy) -> PhaseBreakdown {
    let m = costs.workers;
    let workers = |n: u32| (0..m).map(|w| (Actor::Worker(w), n)).collect::<Vec<_>>();
    let codec = strategy == Strategy::RepetitiveCodec;
    let per_update_codec = |n: u32| if codec { n } else { 0 };

    let compute = engine.phase(Phase::LocalCompute, workers(costs.iterations), costs.minibatch_s);
    let worker_compress = engine.phase(Phase::WorkerCompress, workers(per_update_codec(1)), costs.worker_compress_s);
    let push = engine.phase(Phase::PushTransfer, vec![(Actor::Link, m)], costs.blob_one_way_s);
    let server_decompress =
        engine.phase(Phase::ServerDecompress, vec![(Actor::Server, per_update_codec(m))], costs.server_decompress_s);
    // Aggregation cost is not part of the analytic model.
    let aggregate = engine.phase(Phase::Aggregate, vec![(Actor::Server, 0)], 0.0);
    let server_compress =
        engine.phase(Phase::ServerCompress, vec![(Actor::Server, per_update_codec(1))], costs.server_compress_s);
    let broadcast = engine.phase(Phase::BroadcastTransfer, vec![(Actor::Link, m)], costs.blob_one_way_s);
    let worker_decompress =
        engine.phase(Phase::WorkerDecompress, workers(per_update_codec(1)), costs.worker_decompress_s);

    PhaseBreakdown::from_phases(
        compute,
        worker_compress,
        push,
        server_decompress,
        aggregate,
        server_compress,
        broadcast,
        worker_decompress,
    )
}

pub fn simulate_update(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
) -> Result<PhaseBreakdown, ConfigError> {
    Ok(Simulator::default().run_update(cfg, strategy, profile)?.breakdown.expect("always set"))
}

// Update at an arbitrary worker count; the template has been validated.
fn simulate_at(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
) -> Result<PhaseBreakdown, ConfigError> {
    let costs = EventCosts::new(cfg, strategy, profile)?;
    Ok(run_events(&mut Simulator::default().engine(0), &costs, strategy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub total_s: f64,
    /// One-time compression before the first update (compressed-domain training only).
    pub initial_compress_s: f64,
    /// One-time decompression after the last update (compressed-domain training only).
    pub final_decompress_s: f64,
    pub updates: Vec<PhaseBreakdown>,
}

/// Runs `updates` consecutive global updates.
pub fn simulate_training(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
    updates: u32,
) -> Result<TrainingRun, ConfigError> {
    if updates == 0 {
        return Err(ConfigError::NoUpdates);
    }
    cfg.validate()?;
    let costs = EventCosts::new(cfg, strategy, profile)?;
    let (initial_compress_s, final_decompress_s) = match (strategy, profile) {
        (Strategy::OneTimeHomomorphic, Some(p)) => (p.compress_s, p.decompress_s),
        _ => (0.0, 0.0),
    };
    let mut engine = Simulator::default().engine(0);
    let mut total_s = initial_compress_s;
    let mut runs = Vec::with_capacity(updates as usize);
    for _ in 0..updates {
        let b = run_events(&mut engine, &costs, strategy);
        total_s += b.t_update;
        runs.push(b);
    }
    total_s += final_decompress_s;
    Ok(TrainingRun { total_s, initial_compress_s, final_decompress_s, updates: runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub workers: u32,
    pub t_cmt: f64,
    pub t_tnf: f64,
    pub t_update: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupCurve {
    pub strategy: Strategy,
    pub rows: Vec<CurveRow>,
}

fn check_range(workers: &[u32]) -> Result<(), ConfigError> {
    if workers.is_empty() || workers[0] == 0 || workers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::BadWorkerRange);
    }
    Ok(())
}

// Validates everything except the B >= M constraint, which sweeps may cross.
fn check_template(cfg: &ClusterConfig) -> Result<(), ConfigError> {
    ClusterConfig { workers: 1, minibatch: cfg.minibatch.max(1), ..*cfg }.validate()
}

pub fn sweep_workers(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
    workers: &[u32],
) -> Result<SpeedupCurve, ConfigError> {
    sweep_workers_with(cfg, strategy, profile, workers, Exec::default())
}

pub fn sweep_workers_with(
    cfg: &ClusterConfig,
    strategy: Strategy,
    profile: Option<&CodecProfile>,
    workers: &[u32],
    exec: Exec,
) -> Result<SpeedupCurve, ConfigError> {
    check_template(cfg)?;
    check_range(workers)?;
    let rows = exec
        .map(workers, |&m| {
            let at = cfg.with_workers(m);
            simulate_at(&at, strategy, profile).map(|b| CurveRow {
                workers: m,
                t_cmt: b.t_cmt,
                t_tnf: b.t_tnf,
                t_update: b.t_update,
                speedup: at.per_update_compute() / b.t_update,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpeedupCurve { strategy, rows })
}

/// Compressed-domain updates over a grid of operation overheads and ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HRhoGrid {
    pub workers: u32,
    /// `C_u`, the numerator of every cell's speedup.
    pub per_update_compute: f64,
    pub h: Vec<f64>,
    pub rho: Vec<f64>,
    /// `cells[i][j]` is the update for `h[i]`, `rho[j]`.
    pub cells: Vec<Vec<PhaseBreakdown>>,
}

pub fn sweep_h_rho(cfg: &ClusterConfig, h_list: &[f64], rho_list: &[f64]) -> Result<HRhoGrid, ConfigError> {
    sweep_h_rho_with(cfg, h_list, rho_list, Exec::default())
}

pub fn sweep_h_rho_with(
    cfg: &ClusterConfig,
    h_list: &[f64],
    rho_list: &[f64],
    exec: Exec,
) -> Result<HRhoGrid, ConfigError> {
    cfg.validate()?;
    if h_list.is_empty() {
        return Err(ConfigError::EmptyList("h"));
    }
    if rho_list.is_empty() {
        return Err(ConfigError::EmptyList("rho"));
    }
    let profiles = h_list
        .iter()
        .map(|&h| rho_list.iter().map(|&rho| CodecProfile::homomorphic(rho, h)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let cells = exec
        .map(&profiles, |row| {
            row.iter().map(|p| simulate_at(cfg, Strategy::OneTimeHomomorphic, Some(p))).collect::<Result<Vec<_>, _>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HRhoGrid {
        workers: cfg.workers,
        per_update_compute: cfg.per_update_compute(),
        h: h_list.to_vec(),
        rho: rho_list.to_vec(),
        cells,
    })
}

/// Speedup of the ideal, vanilla and compressed-domain (`h = 1`) variants
/// against worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupComparison {
    pub workers: Vec<u32>,
    pub rho: Vec<f64>,
    pub ideal: Vec<f64>,
    pub vanilla: Vec<f64>,
    /// `homomorphic[k][i]` is the speedup at `workers[i]` with ratio `rho[k]`.
    pub homomorphic: Vec<Vec<f64>>,
}

pub fn speedup_comparison(
    cfg: &ClusterConfig,
    workers: &[u32],
    rho_list: &[f64],
) -> Result<SpeedupComparison, ConfigError> {
    let vanilla = sweep_workers(cfg, Strategy::Vanilla, None, workers)?;
    let homomorphic = rho_list
        .iter()
        .map(|&rho| {
            let p = CodecProfile::homomorphic(rho, 1.0)?;
            let curve = sweep_workers(cfg, Strategy::OneTimeHomomorphic, Some(&p), workers)?;
            Ok(curve.rows.iter().map(|r| r.speedup).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, ConfigError>>()?;
    Ok(SpeedupComparison {
        workers: workers.to_vec(),
        rho: rho_list.to_vec(),
        ideal: workers.iter().map(|&m| m as f64).collect(),
        vanilla: vanilla.rows.iter().map(|r| r.speedup).collect(),
        homomorphic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::update_time;

    fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs())
    }

    fn alexnet16() -> ClusterConfig {
        ClusterConfig::alexnet_like()
    }

    #[test]
    fn vanilla_matches_closed_form_bitwise() {
        let c = alexnet16();
        let sim = simulate_update(&c, Strategy::Vanilla, None).unwrap();
        assert_eq!(sim, update_time(&c, Strategy::Vanilla, None).unwrap());
        assert!(rel_eq(sim.t_update, 37.522_730_624, 1e-12));
    }

    #[test]
    fn single_node() {
        let c = alexnet16().with_workers(1);
        let b = simulate_update(&c, Strategy::Vanilla, None).unwrap();
        assert_eq!(b.t_cmt, 100.0);
        assert!(rel_eq(b.t_tnf, 1.954_545_664, 1e-15));
    }

    #[test]
    fn repetitive_phases_sum() {
        let c = alexnet16();
        let p = CodecProfile::gzip_alexnet();
        let b = simulate_update(&c, Strategy::RepetitiveCodec, Some(&p)).unwrap();
        let sum: f64 = b.phases().iter().sum();
        assert!(rel_eq(sum, b.t_update, 1e-14));
        assert!(rel_eq(b.t_update, 83.657_068_233_549_58, 1e-9));
        assert_eq!(b.server_decompress_s, 16.0 * 1.898);
        assert_eq!(b.worker_compress_s, 8.079);
        assert_eq!(b.aggregate_s, 0.0);
    }

    #[test]
    fn trace_counts_events() {
        let c = ClusterConfig { workers: 4, iterations: 5, minibatch: 4, ..alexnet16() };
        let p = CodecProfile::gzip_alexnet();
        let sim = Simulator { record_trace: true, ..Simulator::default() };
        let out = sim.run_update(&c, Strategy::RepetitiveCodec, Some(&p)).unwrap();
        let count = |phase| out.trace.iter().filter(|e| e.phase == phase).count();
        assert_eq!(count(Phase::LocalCompute), 4 * 5);
        assert_eq!(count(Phase::WorkerCompress), 4);
        assert_eq!(count(Phase::PushTransfer), 4);
        assert_eq!(count(Phase::ServerDecompress), 4);
        assert_eq!(count(Phase::ServerCompress), 1);
        assert_eq!(count(Phase::BroadcastTransfer), 4);
        assert_eq!(count(Phase::WorkerDecompress), 4);
        assert!(out.trace.windows(2).all(|w| w[0].time_s <= w[1].time_s));
        let last = out.trace.last().unwrap().time_s;
        assert!(rel_eq(last, out.breakdown.unwrap().t_update, 1e-12));
    }

    #[test]
    fn jitter_is_seeded_and_bounded() {
        let c = alexnet16();
        let sim = Simulator { jitter: 0.1, seed: 7, record_trace: false };
        let a = sim.run_update(&c, Strategy::Vanilla, None).unwrap().breakdown.unwrap();
        let b = sim.run_update(&c, Strategy::Vanilla, None).unwrap().breakdown.unwrap();
        assert_eq!(a, b);
        let exact = simulate_update(&c, Strategy::Vanilla, None).unwrap();
        assert_ne!(a, exact);
        assert!((a.t_update / exact.t_update - 1.0).abs() <= 0.1);
    }

    #[test]
    fn training_totals() {
        let c = alexnet16();
        let one = simulate_training(&c, Strategy::Vanilla, None, 1).unwrap();
        assert_eq!(one.total_s, one.updates[0].t_update);

        let hom = CodecProfile::new(0.2, 1.3, 8.079, 1.898).unwrap();
        let run = simulate_training(&c, Strategy::OneTimeHomomorphic, Some(&hom), 10).unwrap();
        let per_update = 1.3 * 6.25 + 0.2 * 31.272_730_624;
        assert!(rel_eq(run.total_s, 8.079 + 10.0 * per_update + 1.898, 1e-12));
        assert!((run.total_s - 153.77).abs() < 0.01);

        let gz = CodecProfile::gzip_alexnet();
        let rep = simulate_training(&c, Strategy::RepetitiveCodec, Some(&gz), 10).unwrap();
        assert!(rel_eq(rep.total_s, 836.570_682_335_495_8, 1e-9));
        assert!(rep.total_s > run.total_s);
        assert_eq!(simulate_training(&c, Strategy::Vanilla, None, 0), Err(ConfigError::NoUpdates));
    }

    #[test]
    fn worker_sweep_shape() {
        let c = alexnet16();
        let range: Vec<u32> = (1..=25).collect();
        let curve = sweep_workers(&c, Strategy::Vanilla, None, &range).unwrap();
        assert_eq!(curve.rows.len(), 25);
        assert!(curve.rows.windows(2).all(|w| w[1].t_cmt < w[0].t_cmt && w[1].t_tnf > w[0].t_tnf));

        let single = sweep_workers(&c, Strategy::Vanilla, None, &[16]).unwrap();
        let direct = simulate_update(&c, Strategy::Vanilla, None).unwrap();
        assert_eq!(single.rows[0].t_update, direct.t_update);

        let ideal = CodecProfile::homomorphic(1e-300, 1.0).unwrap();
        let curve = sweep_workers(&c, Strategy::OneTimeHomomorphic, Some(&ideal), &range).unwrap();
        for r in &curve.rows {
            assert!(rel_eq(r.speedup, r.workers as f64, 1e-12));
        }

        assert_eq!(sweep_workers(&c, Strategy::Vanilla, None, &[]), Err(ConfigError::BadWorkerRange));
        assert_eq!(sweep_workers(&c, Strategy::Vanilla, None, &[3, 2]), Err(ConfigError::BadWorkerRange));
    }

    #[test]
    fn sweep_past_minibatch_size() {
        let c = ClusterConfig { minibatch: 8, workers: 8, ..alexnet16() };
        assert!(sweep_workers(&c, Strategy::Vanilla, None, &[1, 64, 1024]).is_ok());
    }

    #[test]
    fn h_rho_grid() {
        let c = alexnet16();
        let hs: Vec<f64> = (0..=10).map(|k| 1.0 + 0.1 * k as f64).collect();
        let grid = sweep_h_rho(&c, &hs, &[0.2, 0.5, 1.0]).unwrap();
        assert!((grid.cells[0][0].t_update - 12.50).abs() < 0.005);
        assert!((grid.cells[10][1].t_update - 28.14).abs() < 0.005);
        let vanilla = simulate_update(&c, Strategy::Vanilla, None).unwrap();
        assert_eq!(grid.cells[0][2].t_update, vanilla.t_update);
        for i in 0..hs.len() {
            for j in 0..3 {
                if i > 0 {
                    assert!(grid.cells[i][j].t_update >= grid.cells[i - 1][j].t_update);
                }
                if j > 0 {
                    assert!(grid.cells[i][j].t_update >= grid.cells[i][j - 1].t_update);
                }
            }
        }
        assert!(sweep_h_rho(&c, &[0.9], &[0.2]).is_err());
        assert!(sweep_h_rho(&c, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn modes_agree() {
        let c = alexnet16();
        let range: Vec<u32> = (1..=64).collect();
        let a = sweep_workers_with(&c, Strategy::Vanilla, None, &range, Exec::Sequential).unwrap();
        let b = sweep_workers_with(&c, Strategy::Vanilla, None, &range, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

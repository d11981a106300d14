//! Command-line driver shared by the `homcomp` binary and the tests.
//!
//! Settings come from an optional JSON [`RunConfig`] file; flags override
//! file values. The resolved config is echoed into every report: embedded in
//! JSON, placed in SVG metadata, and written next to CSV files as
//! `<output>.config.json`.

use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{self, BenchError, BenchSpec, CodecStats, WeightDistribution};
use crate::codec::CodecKind;
use crate::cost_model::{
    computation_time, continuous_optimum, crossover_workers, frontier_h_max, optimal_workers, speedup, update_time,
    ClusterConfig, CodecProfile, ConfigError, FrontierPoint, PhaseBreakdown, Strategy, DEFAULT_M_LIMIT,
};
use crate::net_harness::{
    run_server, run_worker, HarnessError, HarnessReport, LinkMode, Rate, ServerOptions, WorkerOptions, WorkerReport,
};
use crate::report::{self, fmt6, ReportError};
use crate::simulator::{self, TrainingRun};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("harness failure: {0}")]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Harness(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    /// Taken from the file extension when absent; CSV otherwise.
    pub format: Option<OutputFormat>,
}

impl OutputConfig {
    pub fn resolved_format(&self) -> OutputFormat {
        self.format.unwrap_or_else(|| match self.path.extension().and_then(|e| e.to_str()) {
            Some("json") => OutputFormat::Json,
            Some("svg") => OutputFormat::Svg,
            _ => OutputFormat::Csv,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Update-time components against worker count.
    #[default]
    Workers,
    /// Compressed-domain update time over the h and rho lists.
    Grid,
    /// Speedup of ideal, vanilla and compressed-domain variants against worker count.
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub workers: Vec<u32>,
    pub h: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Workers,
            workers: (1..=25).collect(),
            h: (10..=20).map(|k| k as f64 / 10.0).collect(),
            rho: vec![0.2, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub codecs: Vec<CodecKind>,
    pub blob_bytes: u64,
    pub distribution: WeightDistribution,
    pub seed: u64,
    pub repeats: u32,
    /// Operation overhead assigned to the derived profiles.
    pub h: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let spec = BenchSpec::default();
        Self {
            codecs: CodecKind::ALL.to_vec(),
            blob_bytes: spec.blob_bytes,
            distribution: spec.distribution,
            seed: spec.seed,
            repeats: spec.repeats,
            h: 1.0,
        }
    }
}

impl BenchConfig {
    pub fn spec(&self) -> BenchSpec {
        BenchSpec {
            blob_bytes: self.blob_bytes,
            distribution: self.distribution,
            seed: self.seed,
            repeats: self.repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub bind: String,
    pub connect: String,
    pub rounds: u32,
    pub codec: CodecKind,
    /// Overrides the cluster rate for the emulated link.
    pub chi_bytes_per_sec: Option<f64>,
    pub unlimited: bool,
    pub per_link: bool,
    /// Injected compute per round; `i * C / M` of the cluster when absent.
    pub compute_ms: Option<f64>,
    pub seed: u64,
    pub timeout_s: f64,
    pub worker_id: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            connect: "127.0.0.1:7878".into(),
            rounds: 3,
            codec: CodecKind::Quant(8),
            chi_bytes_per_sec: None,
            unlimited: false,
            per_link: false,
            compute_ms: None,
            seed: 0,
            timeout_s: 30.0,
            worker_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cluster: ClusterConfig,
    pub strategy: Strategy,
    pub profile: Option<CodecProfile>,
    pub sweep: SweepConfig,
    /// Target factor `r` for the frontier.
    pub target_factor: f64,
    pub updates: u32,
    pub bench: BenchConfig,
    pub harness: HarnessConfig,
    pub output: Option<OutputConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::alexnet_like(),
            strategy: Strategy::Vanilla,
            profile: None,
            sweep: SweepConfig::default(),
            target_factor: 4.0,
            updates: 10,
            bench: BenchConfig::default(),
            harness: HarnessConfig::default(),
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.cluster.validate()?;
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        if self.strategy.needs_profile() && self.profile.is_none() {
            return Err(ConfigError::MissingProfile(self.strategy).into());
        }
        if !(self.target_factor >= 1.0 && self.target_factor.is_finite()) {
            return Err(ConfigError::InvalidTarget(self.target_factor).into());
        }
        if self.updates == 0 {
            return Err(ConfigError::NoUpdates.into());
        }
        let s = &self.sweep;
        if s.workers.is_empty() || s.workers[0] == 0 || s.workers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::BadWorkerRange.into());
        }
        if s.h.is_empty() {
            return Err(ConfigError::EmptyList("h").into());
        }
        if s.rho.is_empty() {
            return Err(ConfigError::EmptyList("rho").into());
        }
        for &h in &s.h {
            if !(h >= 1.0 && h.is_finite()) {
                return Err(ConfigError::InvalidOverhead(h).into());
            }
        }
        for &rho in &s.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(ConfigError::InvalidRatio(rho).into());
            }
        }
        self.bench.spec().validate()?;
        if self.bench.codecs.is_empty() {
            return bad("bench.codecs is empty".into());
        }
        if !(self.bench.h >= 1.0 && self.bench.h.is_finite()) {
            return Err(ConfigError::InvalidOverhead(self.bench.h).into());
        }
        let hc = &self.harness;
        if hc.rounds == 0 {
            return bad("harness.rounds must be >= 1".into());
        }
        if let Some(chi) = hc.chi_bytes_per_sec {
            if !(chi > 0.0 && chi.is_finite()) {
                return bad(format!("harness.chi_bytes_per_sec must be > 0 (got {chi}); use unlimited instead"));
            }
        }
        if let Some(ms) = hc.compute_ms {
            if !(ms >= 0.0 && ms.is_finite()) {
                return bad(format!("harness.compute_ms must be >= 0 (got {ms})"));
            }
        }
        if !(hc.timeout_s > 0.0 && hc.timeout_s.is_finite()) {
            return bad(format!("harness.timeout_s must be > 0 (got {})", hc.timeout_s));
        }
        Ok(())
    }

    fn profile(&self) -> Option<&CodecProfile> {
        self.profile.as_ref()
    }

    pub fn server_options(&self) -> ServerOptions {
        let hc = &self.harness;
        let mut opts = ServerOptions::from_cluster(&self.cluster, hc.codec, hc.rounds);
        opts.rate = match (hc.unlimited, hc.chi_bytes_per_sec) {
            (true, _) => Rate::Unlimited,
            (false, Some(chi)) => Rate::BytesPerSec(chi),
            (false, None) => Rate::BytesPerSec(self.cluster.bandwidth_bytes_per_s),
        };
        opts.link = if hc.per_link { LinkMode::PerLink } else { LinkMode::Shared };
        opts.timeout = Duration::from_secs_f64(hc.timeout_s);
        opts
    }

    pub fn worker_options(&self) -> WorkerOptions {
        let hc = &self.harness;
        let mut w = WorkerOptions::from_cluster(&self.cluster, &hc.connect, hc.worker_id, hc.codec, hc.rounds);
        w.compute = Duration::from_secs_f64(hc.compute_ms.map_or(computation_time(&self.cluster), |ms| ms / 1000.0));
        w.seed = hc.seed;
        w.timeout = Duration::from_secs_f64(hc.timeout_s);
        w
    }
}

#[derive(Debug, Parser)]
#[command(name = "homcomp", version, about = "Update-time model, simulator, codecs and parameter-server harness")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form update time, speedup, crossover and optimal worker count.
    Model(ModelArgs),
    /// Sweep worker counts or the h/rho grid; writes CSV, JSON or SVG.
    Sweep(SweepArgs),
    /// Largest affordable operation overhead per compression ratio.
    Frontier(FrontierArgs),
    /// Event simulation of a multi-update training run.
    Simulate(SimulateArgs),
    /// Measure codecs on synthetic weights.
    Bench(BenchArgs),
    /// Run the parameter server.
    Serve(ServeArgs),
    /// Run one worker.
    Worker(WorkerArgs),
}

#[derive(Debug, Default, Args)]
pub struct ClusterArgs {
    /// Worker count M.
    #[arg(long)]
    pub workers: Option<u32>,
    /// Single-node seconds per minibatch (C).
    #[arg(long)]
    pub minibatch_time_s: Option<f64>,
    /// Local iterations per global update (i).
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Parameter bytes (W).
    #[arg(long)]
    pub weight_bytes: Option<u64>,
    /// Cluster transmission rate (chi).
    #[arg(long)]
    pub chi_bytes_per_sec: Option<f64>,
    /// Single-node minibatch size (B).
    #[arg(long)]
    pub minibatch: Option<u32>,
    #[arg(long)]
    pub dataset: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct ProfileArgs {
    /// vanilla | repetitive | homomorphic
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Compressed over original size.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Original over compressed size; sets rho to its inverse.
    #[arg(long, conflicts_with = "rho")]
    pub size_ratio: Option<f64>,
    /// Compressed-domain operation overhead.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub compress_s: Option<f64>,
    #[arg(long)]
    pub decompress_s: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct OutputArgs {
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum)]
    pub kind: Option<SweepKind>,
    /// Worker counts: `1..25` (inclusive) or `1,2,4`.
    #[arg(long, value_parser = u32_list)]
    pub m_range: Option<U32List>,
    /// Overheads: `1.0..2.0:0.1` or `1,1.5,2`.
    #[arg(long, value_parser = f64_list)]
    pub h_list: Option<F64List>,
    #[arg(long, value_parser = f64_list)]
    pub rho_list: Option<F64List>,
}

#[derive(Debug, Default, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Target factor r: the update may take r times the ideal compute time.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, value_parser = f64_list)]
    pub rho_list: Option<F64List>,
}

#[derive(Debug, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub updates: Option<u32>,
}

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// identity | deflate | quant8 | quant16; repeatable.
    #[arg(long = "codec")]
    pub codecs: Vec<CodecKind>,
    #[arg(long)]
    pub blob_bytes: Option<u64>,
    #[arg(long)]
    pub distribution: Option<WeightDistribution>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<u32>,
    /// Operation overhead for the derived profiles.
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct HarnessArgs {
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub codec: Option<CodecKind>,
    #[arg(long)]
    pub weight_bytes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub timeout_s: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub workers: Option<u32>,
    #[arg(long)]
    pub chi_bytes_per_sec: Option<f64>,
    /// Disable bandwidth emulation.
    #[arg(long, conflicts_with = "chi_bytes_per_sec")]
    pub unlimited: bool,
    /// Give every connection its own bucket instead of sharing one.
    #[arg(long)]
    pub per_link: bool,
}

#[derive(Debug, Default, Args)]
pub struct WorkerArgs {
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long)]
    pub worker_id: Option<u32>,
    /// Injected compute per round in milliseconds.
    #[arg(long)]
    pub compute_ms: Option<f64>,
    /// Worker count of the cluster; sets the default compute time.
    #[arg(long)]
    pub workers: Option<u32>,
}

/// Comma list or inclusive range of worker counts.
#[derive(Debug, Clone, PartialEq)]
pub struct U32List(pub Vec<u32>);

/// Comma list or stepped range of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);

fn u32_list(s: &str) -> Result<U32List, String> {
    parse_u32_list(s).map(U32List)
}

fn f64_list(s: &str) -> Result<F64List, String> {
    parse_f64_list(s).map(F64List)
}

fn parse_u32_list(s: &str) -> Result<Vec<u32>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("bad range end: {e}"))?;
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse::<u32>().map_err(|e| format!("bad value '{x}': {e}"))).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    if let Some((a, rest)) = s.split_once("..") {
        let (b, step) = rest.split_once(':').ok_or("range needs a step, e.g. 1.0..2.0:0.1")?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad number '{x}': {e}"));
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(format!("empty range {a}..{b}:{step}"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Drop accumulated rounding error.
        let snap = |v: f64| format!("{v:.12}").parse::<f64>().expect("formatted float parses");
        return Ok((0..=n).map(|k| snap(a + k as f64 * step)).collect());
    }
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad value '{x}': {e}"))).collect()
}

impl ClusterArgs {
    fn apply(&self, c: &mut ClusterConfig) {
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $(if let Some(v) = self.$f { c.$g = v; })* };
        }
        set!(workers => workers, minibatch_time_s => minibatch_time_s, iterations => iterations,
             weight_bytes => weight_bytes, chi_bytes_per_sec => bandwidth_bytes_per_s,
             minibatch => minibatch, dataset => dataset);
    }
}

impl ProfileArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        let touched = self.rho.is_some()
            || self.size_ratio.is_some()
            || self.h.is_some()
            || self.compress_s.is_some()
            || self.decompress_s.is_some();
        if cfg.profile.is_none() && cfg.strategy == Strategy::RepetitiveCodec {
            cfg.profile = Some(CodecProfile::gzip_alexnet());
        }
        if touched {
            let mut p =
                cfg.profile.unwrap_or(CodecProfile { rho: 1.0, op_overhead: 1.0, compress_s: 0.0, decompress_s: 0.0 });
            if let Some(v) = self.rho {
                p.rho = v;
            }
            if let Some(v) = self.size_ratio {
                p.rho = 1.0 / v;
            }
            if let Some(v) = self.h {
                p.op_overhead = v;
            }
            if let Some(v) = self.compress_s {
                p.compress_s = v;
            }
            if let Some(v) = self.decompress_s {
                p.decompress_s = v;
            }
            cfg.profile = Some(p);
        }
    }
}

impl OutputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(path) = &self.output {
            cfg.output = Some(OutputConfig { path: path.clone(), format: self.format });
        } else if let (Some(f), Some(o)) = (self.format, cfg.output.as_mut()) {
            o.format = Some(f);
        }
    }
}

impl HarnessArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let h = &mut cfg.harness;
        if let Some(v) = self.rounds {
            h.rounds = v;
        }
        if let Some(v) = self.codec {
            h.codec = v;
        }
        if let Some(v) = self.seed {
            h.seed = v;
        }
        if let Some(v) = self.timeout_s {
            h.timeout_s = v;
        }
        if let Some(v) = self.weight_bytes {
            cfg.cluster.weight_bytes = v;
        }
    }
}

// Harness runs care about M and W only; keep B >= M satisfied.
fn fit_minibatch(cfg: &mut RunConfig) {
    cfg.cluster.minibatch = cfg.cluster.minibatch.max(cfg.cluster.workers);
}

/// Merges the config file and the command's flags into one validated config.
pub fn resolve(base: Option<RunConfig>, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = base.unwrap_or_default();
    match command {
        Command::Model(a) => {
            a.cluster.apply(&mut cfg.cluster);
            a.profile.apply(&mut cfg);
            a.output.apply(&mut cfg);
        }
        Command::Sweep(a) => {
            a.cluster.apply(&mut cfg.cluster);
            a.profile.apply(&mut cfg);
            a.output.apply(&mut cfg);
            if let Some(k) = a.kind {
                cfg.sweep.kind = k;
            }
            if let Some(v) = &a.m_range {
                cfg.sweep.workers = v.0.clone();
            }
            if let Some(v) = &a.h_list {
                cfg.sweep.h = v.0.clone();
            }
            if let Some(v) = &a.rho_list {
                cfg.sweep.rho = v.0.clone();
            }
        }
        Command::Frontier(a) => {
            a.cluster.apply(&mut cfg.cluster);
            a.output.apply(&mut cfg);
            if let Some(r) = a.r {
                cfg.target_factor = r;
            }
            if let Some(v) = &a.rho_list {
                cfg.sweep.rho = v.0.clone();
            }
        }
        Command::Simulate(a) => {
            a.cluster.apply(&mut cfg.cluster);
            a.profile.apply(&mut cfg);
            a.output.apply(&mut cfg);
            if let Some(u) = a.updates {
                cfg.updates = u;
            }
        }
        Command::Bench(a) => {
            a.output.apply(&mut cfg);
            let b = &mut cfg.bench;
            if !a.codecs.is_empty() {
                b.codecs = a.codecs.clone();
            }
            if let Some(v) = a.blob_bytes {
                b.blob_bytes = v;
            }
            if let Some(v) = a.distribution {
                b.distribution = v;
            }
            if let Some(v) = a.seed {
                b.seed = v;
            }
            if let Some(v) = a.repeats {
                b.repeats = v;
            }
            if let Some(v) = a.h {
                b.h = v;
            }
        }
        Command::Serve(a) => {
            a.harness.apply(&mut cfg);
            a.output.apply(&mut cfg);
            if let Some(v) = &a.bind {
                cfg.harness.bind = v.clone();
            }
            if let Some(v) = a.workers {
                cfg.cluster.workers = v;
            }
            if let Some(v) = a.chi_bytes_per_sec {
                cfg.harness.chi_bytes_per_sec = Some(v);
                cfg.harness.unlimited = false;
            }
            cfg.harness.unlimited |= a.unlimited;
            cfg.harness.per_link |= a.per_link;
            fit_minibatch(&mut cfg);
        }
        Command::Worker(a) => {
            a.harness.apply(&mut cfg);
            a.output.apply(&mut cfg);
            if let Some(v) = &a.connect {
                cfg.harness.connect = v.clone();
            }
            if let Some(v) = a.worker_id {
                cfg.harness.worker_id = v;
            }
            if let Some(v) = a.compute_ms {
                cfg.harness.compute_ms = Some(v);
            }
            if let Some(v) = a.workers {
                cfg.cluster.workers = v;
            }
            fit_minibatch(&mut cfg);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let cfg = resolve(base, &cli.command)?;
    let text = match cli.command {
        Command::Model(_) => cmd_model(&cfg)?.render(),
        Command::Sweep(_) => cmd_sweep(&cfg)?,
        Command::Frontier(_) => cmd_frontier(&cfg)?,
        Command::Simulate(_) => cmd_simulate(&cfg)?,
        Command::Bench(_) => cmd_bench(&cfg)?.0,
        Command::Serve(_) => render_harness(&cmd_serve(&cfg)?),
        Command::Worker(_) => render_worker(&cmd_worker(&cfg)?),
    };
    print!("{text}");
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn with_config<T: Serialize>(cfg: &RunConfig, result: &T) -> String {
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "config": cfg, "result": result }))
        .expect("report serializes");
    s.push('\n');
    s
}

fn compact_config(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

/// Writes `content` to the configured output, with a config sidecar for CSV.
fn emit(cfg: &RunConfig, content: &str) -> Result<(), CliError> {
    if let Some(out) = &cfg.output {
        write_file(&out.path, content)?;
        if out.resolved_format() == OutputFormat::Csv {
            write_file(&sidecar_path(&out.path), &(cfg.to_json() + "\n"))?;
        }
        log::info!("wrote {}", out.path.display());
    }
    Ok(())
}

fn format_of(cfg: &RunConfig) -> OutputFormat {
    cfg.output.as_ref().map(OutputConfig::resolved_format).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub strategy: Strategy,
    pub workers: u32,
    pub breakdown: PhaseBreakdown,
    pub speedup: f64,
    /// Smallest M at which transfer time reaches computation time.
    pub crossover_workers: u32,
    pub continuous_optimum: Option<f64>,
    pub optimal_workers: u32,
    pub optimal_speedup: f64,
}

impl ModelReport {
    pub fn render(&self) -> String {
        let b = &self.breakdown;
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<22}{v}");
        };
        row("strategy", self.strategy.to_string());
        row("workers", self.workers.to_string());
        row("T_cmt (s)", fmt6(b.t_cmt));
        row("T_tnf (s)", fmt6(b.t_tnf));
        row("T_update (s)", fmt6(b.t_update));
        row("speedup", fmt6(self.speedup));
        row("crossover M", self.crossover_workers.to_string());
        row("continuous optimum M", self.continuous_optimum.map_or("none".into(), fmt6));
        row("optimal M", format!("{} (speedup {})", self.optimal_workers, fmt6(self.optimal_speedup)));
        out
    }
}

pub fn cmd_model(cfg: &RunConfig) -> Result<ModelReport, CliError> {
    let c = &cfg.cluster;
    let breakdown = update_time(c, cfg.strategy, cfg.profile())?;
    let (optimal, optimal_speedup) = optimal_workers(c, cfg.strategy, cfg.profile(), DEFAULT_M_LIMIT)?;
    let report = ModelReport {
        strategy: cfg.strategy,
        workers: c.workers,
        breakdown,
        speedup: speedup(c, cfg.strategy, cfg.profile())?,
        crossover_workers: crossover_workers(c),
        continuous_optimum: continuous_optimum(c, cfg.strategy, cfg.profile()),
        optimal_workers: optimal,
        optimal_speedup,
    };
    if cfg.output.is_some() {
        let content = match format_of(cfg) {
            OutputFormat::Json => with_config(cfg, &report),
            OutputFormat::Csv => {
                let b = &report.breakdown;
                format!(
                    "M,t_cmt,t_tnf,t_update,speedup,crossover_m,optimal_m\n{},{},{},{},{},{},{}\n",
                    report.workers,
                    fmt6(b.t_cmt),
                    fmt6(b.t_tnf),
                    fmt6(b.t_update),
                    fmt6(report.speedup),
                    report.crossover_workers,
                    report.optimal_workers
                )
            }
            OutputFormat::Svg => return Err(CliError::Config("model output has no SVG form; use csv or json".into())),
        };
        emit(cfg, &content)?;
    }
    Ok(report)
}

/// Renders the configured sweep in the configured format and writes it if
/// an output path is set. Returns the rendered content.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<String, CliError> {
    let c = &cfg.cluster;
    let s = &cfg.sweep;
    let meta = compact_config(cfg);
    let format = format_of(cfg);
    let content = match s.kind {
        SweepKind::Workers => {
            let curve = simulator::sweep_workers(c, cfg.strategy, cfg.profile(), &s.workers)?;
            match format {
                OutputFormat::Csv => report::curve_csv(&curve),
                OutputFormat::Json => with_config(cfg, &curve),
                OutputFormat::Svg => report::curve_svg(&curve, &meta)?,
            }
        }
        SweepKind::Grid => {
            let grid = simulator::sweep_h_rho(c, &s.h, &s.rho)?;
            match format {
                OutputFormat::Csv => report::grid_csv(&grid),
                OutputFormat::Json => with_config(cfg, &grid),
                OutputFormat::Svg => report::grid_svg(&grid, &meta)?,
            }
        }
        SweepKind::Compare => {
            let cmp = simulator::speedup_comparison(c, &s.workers, &s.rho)?;
            match format {
                OutputFormat::Csv => report::comparison_csv(&cmp),
                OutputFormat::Json => with_config(cfg, &cmp),
                OutputFormat::Svg => report::comparison_svg(&cmp, &meta)?,
            }
        }
    };
    emit(cfg, &content)?;
    Ok(content)
}

pub fn frontier_points(cfg: &RunConfig) -> Result<Vec<FrontierPoint>, CliError> {
    Ok(cfg
        .sweep
        .rho
        .iter()
        .map(|&rho| frontier_h_max(&cfg.cluster, rho, cfg.target_factor))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn cmd_frontier(cfg: &RunConfig) -> Result<String, CliError> {
    let points = frontier_points(cfg)?;
    let content = match format_of(cfg) {
        OutputFormat::Csv => report::frontier_csv(&points),
        OutputFormat::Json => with_config(cfg, &points),
        OutputFormat::Svg => {
            let xs: Vec<f64> = points.iter().map(|p| p.rho).collect();
            let series = vec![("h_max".to_string(), points.iter().map(|p| p.h_max.max(0.0)).collect())];
            report::line_chart(
                &format!("Operation overhead budget, r = {}", fmt6(cfg.target_factor)),
                "rho",
                "h_max",
                &xs,
                &series,
                &compact_config(cfg),
            )?
        }
    };
    emit(cfg, &content)?;
    Ok(content)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub strategy: Strategy,
    pub updates: u32,
    pub run: TrainingRun,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let run = simulator::simulate_training(&cfg.cluster, cfg.strategy, cfg.profile(), cfg.updates)?;
    let first = &run.updates[0];
    let mut text = String::new();
    let _ = writeln!(text, "strategy          {}", cfg.strategy);
    let _ = writeln!(text, "updates           {}", cfg.updates);
    let _ = writeln!(text, "per update (s)    {}", fmt6(first.t_update));
    let _ = writeln!(text, "  local compute   {}", fmt6(first.local_compute_s));
    let _ = writeln!(text, "  codec           {}", fmt6(first.codec_s()));
    let _ = writeln!(text, "  transfer        {}", fmt6(first.push_transfer_s + first.broadcast_transfer_s));
    if run.initial_compress_s > 0.0 || run.final_decompress_s > 0.0 {
        let _ =
            writeln!(text, "one-time codec (s) {} + {}", fmt6(run.initial_compress_s), fmt6(run.final_decompress_s));
    }
    let _ = writeln!(text, "total (s)         {}", fmt6(run.total_s));
    if cfg.output.is_some() {
        let report = SimulationReport { strategy: cfg.strategy, updates: cfg.updates, run };
        let content = match format_of(cfg) {
            OutputFormat::Json => with_config(cfg, &report),
            OutputFormat::Csv => {
                let mut csv = String::from("update,t_cmt,t_tnf,t_update\n");
                for (k, b) in report.run.updates.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{}", k + 1, fmt6(b.t_cmt), fmt6(b.t_tnf), fmt6(b.t_update));
                }
                csv
            }
            OutputFormat::Svg => {
                return Err(CliError::Config("simulate output has no SVG form; use csv or json".into()))
            }
        };
        emit(cfg, &content)?;
    }
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub stats: Vec<CodecStats>,
    pub profiles: Vec<CodecProfile>,
}

/// Returns the text table and the measurements.
pub fn cmd_bench(cfg: &RunConfig) -> Result<(String, BenchReport), CliError> {
    let spec = cfg.bench.spec();
    let blob = bench::make_synthetic_weights(&spec)?;
    let stats =
        cfg.bench.codecs.iter().map(|&c| bench::bench_blob(c, &blob, spec.repeats)).collect::<Result<Vec<_>, _>>()?;
    let profiles = stats.iter().map(|s| bench::profile_from_stats(s, cfg.bench.h)).collect::<Result<Vec<_>, _>>()?;
    let table = bench::format_table(&stats);
    let report = BenchReport { stats, profiles };
    if cfg.output.is_some() {
        let content = match format_of(cfg) {
            OutputFormat::Json => with_config(cfg, &report),
            OutputFormat::Csv => {
                let mut csv =
                    String::from("codec,original_bytes,encoded_bytes,ratio,compress_s,decompress_s,max_abs_err\n");
                for s in &report.stats {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        s.codec,
                        s.original_bytes,
                        s.encoded_bytes,
                        fmt6(s.ratio),
                        fmt6(s.compress_s),
                        fmt6(s.decompress_s),
                        fmt6(s.max_abs_err)
                    );
                }
                csv
            }
            OutputFormat::Svg => return Err(CliError::Config("bench output has no SVG form; use csv or json".into())),
        };
        emit(cfg, &content)?;
    }
    Ok((table, report))
}

fn emit_json<T: Serialize>(cfg: &RunConfig, value: &T) -> Result<(), CliError> {
    if let Some(out) = &cfg.output {
        if out.resolved_format() != OutputFormat::Json {
            return Err(CliError::Config("harness reports are written as JSON".into()));
        }
        write_file(&out.path, &with_config(cfg, value))?;
    }
    Ok(())
}

pub fn cmd_serve(cfg: &RunConfig) -> Result<HarnessReport, CliError> {
    let listener =
        TcpListener::bind(&cfg.harness.bind).map_err(|e| CliError::Io(format!("binding {}: {e}", cfg.harness.bind)))?;
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    let report = run_server(listener, &cfg.server_options())?;
    emit_json(cfg, &report)?;
    Ok(report)
}

pub fn cmd_worker(cfg: &RunConfig) -> Result<WorkerReport, CliError> {
    let report = run_worker(&cfg.worker_options())?;
    emit_json(cfg, &report)?;
    Ok(report)
}

pub fn render_harness(r: &HarnessReport) -> String {
    let mut out = String::from("round  push_s  aggregate_s  broadcast_s  end_to_end_s  modeled_t_tnf_s  rel_err\n");
    for k in &r.rounds {
        let _ = writeln!(
            out,
            "{:<6} {:<7} {:<12} {:<12} {:<13} {:<16} {}",
            k.round,
            fmt6(k.push_s),
            fmt6(k.aggregate_s),
            fmt6(k.broadcast_s),
            fmt6(k.end_to_end_s),
            k.modeled_t_tnf_s.map_or("-".into(), fmt6),
            k.relative_error.map_or("-".into(), fmt6)
        );
    }
    let _ = writeln!(out, "aggregation: {}", r.aggregation);
    out
}

pub fn render_worker(r: &WorkerReport) -> String {
    let mut out = format!("worker {}\nround  compute_s  encode_s  exchange_s  decode_s\n", r.worker_id);
    for k in &r.rounds {
        let _ = writeln!(
            out,
            "{:<6} {:<10} {:<9} {:<11} {}",
            k.round,
            fmt6(k.compute_s),
            fmt6(k.encode_s),
            fmt6(k.exchange_s),
            fmt6(k.decode_s)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("homcomp").chain(args.iter().copied())).unwrap()
    }

    fn resolved(args: &[&str]) -> Result<RunConfig, CliError> {
        resolve(None, &parse(args).command)
    }

    #[test]
    fn lists() {
        assert_eq!(parse_u32_list("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_u32_list("1..=2").unwrap(), vec![1, 2]);
        assert_eq!(parse_u32_list("3,5").unwrap(), vec![3, 5]);
        assert!(parse_u32_list("5..1").is_err());
        let h = parse_f64_list("1.0..2.0:0.1").unwrap();
        assert_eq!(h.len(), 11);
        assert_eq!(h[7], 1.7);
        assert_eq!(h[10], 2.0);
        assert_eq!(parse_f64_list("0.2, 0.5").unwrap(), vec![0.2, 0.5]);
        assert!(parse_f64_list("1..2").is_err());
    }

    #[test]
    fn model_defaults() {
        let cfg = resolved(&["model"]).unwrap();
        let r = cmd_model(&cfg).unwrap();
        let text = r.render();
        assert!(text.contains("6.25") && text.contains("31.2727") && text.contains("37.5227"), "{text}");
        let single = cmd_model(&resolved(&["model", "--workers", "1"]).unwrap()).unwrap();
        assert!(single.speedup <= 1.0);
    }

    #[test]
    fn homomorphic_flags() {
        let cfg = resolved(&["model", "--strategy", "homomorphic", "--h", "1.3", "--rho", "0.2"]).unwrap();
        let r = cmd_model(&cfg).unwrap();
        assert!((r.breakdown.t_update - 14.3795).abs() < 1e-3);
        assert!(matches!(resolved(&["model", "--strategy", "homomorphic"]), Err(CliError::Config(_))));
    }

    #[test]
    fn repetitive_defaults_to_gzip_profile() {
        let cfg = resolved(&["model", "--strategy", "repetitive"]).unwrap();
        assert_eq!(cfg.profile, Some(CodecProfile::gzip_alexnet()));
    }

    #[test]
    fn config_errors_exit_two() {
        let e = resolved(&["model", "--chi-bytes-per-sec", "0"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = resolved(&["model", "--workers", "512"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::from_json(r#"{"clustr": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cluster": {"workers": 4}}"#).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let cfg = resolved(&["sweep", "--kind", "grid", "--rho-list", "0.2,0.5"]).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn sweeps() {
        let csv = cmd_sweep(&resolved(&["sweep"]).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 26);
        let grid = cmd_sweep(&resolved(&["sweep", "--kind", "grid"]).unwrap()).unwrap();
        assert_eq!(grid.lines().count(), 23);
        assert!(grid.starts_with("h,rho,"));
        let cmp = cmd_sweep(&resolved(&["sweep", "--kind", "compare"]).unwrap()).unwrap();
        assert!(cmp.starts_with("M,ideal,vanilla,rho_0.2,rho_0.5\n"));
    }

    #[test]
    fn frontier_rows() {
        let csv = cmd_frontier(&resolved(&["frontier", "--r", "4"]).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "0.2,2.99927,4,true");
        assert!(lines[2].starts_with("0.5,1.49818,"));
        let tight = cmd_frontier(&resolved(&["frontier", "--r", "1", "--rho-list", "1"]).unwrap()).unwrap();
        assert!(tight.lines().nth(1).unwrap().ends_with(",false"));
    }

    #[test]
    fn simulate_text() {
        let cfg = resolved(&[
            "simulate",
            "--strategy",
            "homomorphic",
            "--rho",
            "0.2",
            "--h",
            "1.3",
            "--compress-s",
            "8.079",
            "--decompress-s",
            "1.898",
        ])
        .unwrap();
        let text = cmd_simulate(&cfg).unwrap();
        assert!(text.contains("total (s)         153.77"), "{text}");
    }
}

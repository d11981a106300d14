use std::io;
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameError, MsgType, HEADER_LEN, MAX_PAYLOAD};
use super::server::secs;
use super::{HarnessError, DEFAULT_TIMEOUT};
use crate::bench::{make_synthetic_weights, mix_seed, BenchSpec, WeightDistribution};
use crate::codec::{self, CodecKind, EncodedBlob, ParamBlob};
use crate::cost_model::{computation_time, ClusterConfig};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerOptions {
    pub server: String,
    pub worker_id: u32,
    pub rounds: u32,
    pub codec: CodecKind,
    pub weight_bytes: u64,
    /// Injected local compute per round (`i * C / M`).
    #[serde(with = "secs")]
    pub compute: Duration,
    pub seed: u64,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub connect_attempts: u32,
    /// Delay before the first retry; doubles on each further attempt.
    #[serde(with = "secs")]
    pub backoff: Duration,
    #[serde(skip)]
    pub exec: Exec,
}

impl WorkerOptions {
    pub fn from_cluster(cfg: &ClusterConfig, server: &str, worker_id: u32, codec: CodecKind, rounds: u32) -> Self {
        Self {
            server: server.to_string(),
            worker_id,
            rounds,
            codec,
            weight_bytes: cfg.weight_bytes,
            compute: Duration::from_secs_f64(computation_time(cfg)),
            seed: 0,
            timeout: DEFAULT_TIMEOUT,
            connect_attempts: 3,
            backoff: Duration::from_millis(100),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRound {
    pub round: u32,
    pub compute_s: f64,
    pub encode_s: f64,
    /// PUSH start to GLOBAL fully received.
    pub exchange_s: f64,
    pub decode_s: f64,
    pub push_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: u32,
    pub rounds: Vec<WorkerRound>,
    #[serde(skip)]
    pub last_global: Option<ParamBlob>,
}

/// The blob worker `worker_id` pushes in `round`; a pure function of its arguments.
pub fn worker_blob(seed: u64, worker_id: u32, round: u32, count: usize) -> ParamBlob {
    let spec = BenchSpec {
        blob_bytes: 4 * count as u64,
        distribution: WeightDistribution::Gaussian,
        seed: mix_seed(seed, (worker_id as u64) << 32 | round as u64),
        repeats: 3,
    };
    make_synthetic_weights(&spec).expect("count >= 1")
}

fn connect(opts: &WorkerOptions) -> Result<TcpStream, HarnessError> {
    let attempts = opts.connect_attempts.max(1);
    let mut delay = opts.backoff;
    let mut attempt = 1;
    loop {
        match TcpStream::connect(&opts.server) {
            Ok(s) => return Ok(s),
            Err(e) if attempt >= attempts => {
                return Err(HarnessError::Connect { addr: opts.server.clone(), attempts, source: e });
            }
            Err(e) => {
                log::warn!("worker {}: connect attempt {attempt} failed: {e}", opts.worker_id);
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

pub fn run_worker(opts: &WorkerOptions) -> Result<WorkerReport, HarnessError> {
    let count = (opts.weight_bytes / 4) as usize;
    let seed = opts.seed;
    run_worker_with(opts, &|id, round| worker_blob(seed, id, round, count))
}

/// Runs a worker that pushes `source(worker_id, round)` each round.
pub fn run_worker_with(
    opts: &WorkerOptions,
    source: &(dyn Fn(u32, u32) -> ParamBlob + Sync),
) -> Result<WorkerReport, HarnessError> {
    if opts.rounds == 0 {
        return Err(HarnessError::Config("rounds must be >= 1".into()));
    }
    let mut stream = connect(opts)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.timeout + opts.compute))?;
    stream.set_write_timeout(Some(opts.timeout))?;
    Frame::hello(opts.worker_id).write_to(&mut stream)?;

    let id = opts.worker_id;
    let protocol = |round, reason: String| HarnessError::Protocol { worker: id, round, reason };
    let read = |stream: &mut TcpStream, round| {
        Frame::read_from(stream, MAX_PAYLOAD).map_err(|e| match e {
            FrameError::Closed => protocol(round, "server closed the connection".into()),
            e => protocol(round, e.to_string()),
        })
    };

    let mut rounds = Vec::with_capacity(opts.rounds as usize);
    let mut last_global = None;
    for k in 1..=opts.rounds {
        let t = Instant::now();
        thread::sleep(opts.compute);
        let compute_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let blob = source(id, k);
        let push = Frame::new(MsgType::Push, k, codec::encode_with(opts.codec, &blob, opts.exec).to_bytes());
        let encode_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        push.write_to(&mut stream).map_err(|e| protocol(k, format!("sending PUSH: {e}")))?;
        let global = read(&mut stream, k)?;
        let exchange_s = t.elapsed().as_secs_f64();
        if global.msg_type != MsgType::Global || global.round != k {
            return Err(protocol(
                k,
                format!("expected GLOBAL for round {k}, got {:?} for round {}", global.msg_type, global.round),
            ));
        }

        let t = Instant::now();
        let enc = EncodedBlob::from_bytes(&global.payload)?;
        let decoded = codec::decode_with(opts.codec, &enc, opts.exec)?;
        let decode_s = t.elapsed().as_secs_f64();
        rounds.push(WorkerRound {
            round: k,
            compute_s,
            encode_s,
            exchange_s,
            decode_s,
            push_bytes: push.wire_len() as u64,
        });
        last_global = Some(decoded);
    }

    let done_round = opts.rounds + 1;
    let done = read(&mut stream, done_round)?;
    if done.msg_type != MsgType::Done || done.round != done_round {
        return Err(protocol(done_round, format!("expected DONE, got {:?} for round {}", done.msg_type, done.round)));
    }
    Frame::done(done_round).write_to(&mut stream)?;
    // Let the server read our DONE before the socket goes away.
    let _ = stream.shutdown(std::net::Shutdown::Write);
    let mut sink = [0u8; HEADER_LEN];
    let _ = io::Read::read(&mut stream, &mut sink);
    Ok(WorkerReport { worker_id: id, rounds, last_global })
}

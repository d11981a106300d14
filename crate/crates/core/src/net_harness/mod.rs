//! Parameter-server emulation over TCP.
//!
//! One server and `M` workers exchange length-prefixed frames. Each round the
//! workers sleep for their compute time, push an encoded blob, and block
//! until the server broadcasts the aggregate. The server paces all traffic
//! through token buckets so loopback behaves like a link of rate `chi`.
//!
//! `chi` is read as the rate of one full exchange: a blob going up and the
//! aggregate coming back together take `W / chi` per worker, so a round moves
//! `M * W` bytes in `M * W / chi` seconds. The buckets therefore run at
//! `2 * chi`.

pub mod frame;
pub mod throttle;

mod server;
mod worker;

use std::io;
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::codec::CodecError;

pub use server::{run_server, HarnessReport, LinkMode, RoundReport, ServerOptions};
pub use throttle::{throttle, Limiter, Rate, Throttled, TokenBucket};
pub use worker::{run_worker, run_worker_with, worker_blob, WorkerOptions, WorkerReport, WorkerRound};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid harness setup: {0}")]
    Config(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("round {round} aborted, worker {worker}: {reason}")]
    RoundAborted { round: u32, worker: u32, reason: String },
    #[error("shutdown failed, worker {worker}: {reason}")]
    Shutdown { worker: u32, reason: String },
    #[error("worker {worker}, round {round}: {reason}")]
    Protocol { worker: u32, round: u32, reason: String },
    #[error("cannot reach {addr} after {attempts} attempts: {source}")]
    Connect { addr: String, attempts: u32, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Result of a server and its workers run in one process.
#[derive(Debug)]
pub struct LocalRun {
    pub server: HarnessReport,
    pub workers: Vec<WorkerReport>,
}

/// Runs the server and `opts.workers` worker threads on loopback.
///
/// `worker` is the template for every worker; its address and id are
/// filled in here.
pub fn run_local(opts: &ServerOptions, worker: &WorkerOptions) -> Result<LocalRun, HarnessError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    thread::scope(|s| {
        let server = s.spawn(|| run_server(listener, opts));
        let workers: Vec<_> = (0..opts.workers)
            .map(|id| {
                let w = WorkerOptions { server: addr.clone(), worker_id: id, ..worker.clone() };
                s.spawn(move || run_worker(&w))
            })
            .collect();
        let workers: Vec<_> = workers.into_iter().map(|h| h.join().expect("worker thread panicked")).collect();
        let server = server.join().expect("server thread panicked");
        // The server's diagnosis names the failing worker, so prefer it.
        let server = server?;
        Ok(LocalRun { server, workers: workers.into_iter().collect::<Result<_, _>>()? })
    })
}

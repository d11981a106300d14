use std::io;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameError, MsgType, HEADER_LEN, MAX_PAYLOAD};
use super::throttle::{Limiter, Rate, Throttled};
use super::{HarnessError, DEFAULT_TIMEOUT};
use crate::codec::{self, CodecId, CodecKind, EncodedBlob, ParamBlob, QuantizedBlob, ENVELOPE_LEN};
use crate::cost_model::ClusterConfig;
use crate::exec::Exec;

/// How connections share the emulated bandwidth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// One bucket for all connections: transfer time grows linearly in `M`.
    #[default]
    Shared,
    /// One bucket per connection.
    PerLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptions {
    pub workers: u32,
    pub rounds: u32,
    pub codec: CodecKind,
    pub weight_bytes: u64,
    /// Cluster rate `chi`.
    pub rate: Rate,
    pub link: LinkMode,
    #[serde(with = "secs")]
    pub timeout: Duration,
    #[serde(skip)]
    pub exec: Exec,
}

pub(super) mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl ServerOptions {
    pub fn from_cluster(cfg: &ClusterConfig, codec: CodecKind, rounds: u32) -> Self {
        Self {
            workers: cfg.workers,
            rounds,
            codec,
            weight_bytes: cfg.weight_bytes,
            rate: Rate::BytesPerSec(cfg.bandwidth_bytes_per_s),
            link: LinkMode::Shared,
            timeout: DEFAULT_TIMEOUT,
            exec: Exec::default(),
        }
    }

    /// Floats per blob.
    pub fn element_count(&self) -> usize {
        (self.weight_bytes / 4) as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.weight_bytes < 4 || self.weight_bytes / 4 > u32::MAX as u64 {
            return bad(format!("weight_bytes must be in [4, 16 GiB) (got {})", self.weight_bytes));
        }
        if let Rate::BytesPerSec(r) = self.rate {
            Rate::bytes_per_sec(r).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.timeout.is_zero() {
            return bad("timeout must be > 0".into());
        }
        Ok(())
    }

    fn max_payload(&self) -> u32 {
        // Deflate can expand incompressible input slightly.
        let raw = self.weight_bytes + self.weight_bytes / 64 + 1024 + ENVELOPE_LEN as u64;
        raw.min(MAX_PAYLOAD as u64) as u32
    }

    fn bucket_rate(&self) -> Rate {
        match self.rate {
            Rate::Unlimited => Rate::Unlimited,
            Rate::BytesPerSec(chi) => Rate::BytesPerSec(2.0 * chi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    /// First PUSH header arriving to the last PUSH fully received.
    pub push_s: f64,
    pub aggregate_s: f64,
    pub broadcast_s: f64,
    /// Start of the round (workers computing) to the last GLOBAL written.
    pub end_to_end_s: f64,
    pub measured_transfer_s: f64,
    /// Transfer time the rate alone predicts for the bytes moved; absent when unthrottled.
    pub modeled_t_tnf_s: Option<f64>,
    pub relative_error: Option<f64>,
    pub push_bytes: u64,
    pub global_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessReport {
    pub options: ServerOptions,
    /// `compressed_domain` when the server averages without decoding.
    pub aggregation: String,
    pub rounds: Vec<RoundReport>,
    pub mean_relative_error: Option<f64>,
    pub max_relative_error: Option<f64>,
    #[serde(skip)]
    pub last_global: Option<EncodedBlob>,
}

struct Conn {
    id: u32,
    stream: Throttled<TcpStream>,
}

impl Conn {
    fn set_timeout(&self, t: Duration) -> io::Result<()> {
        self.stream.get_ref().set_read_timeout(Some(t))?;
        self.stream.get_ref().set_write_timeout(Some(t))
    }
}

/// Serves `opts.rounds` rounds to `opts.workers` workers on `listener`.
pub fn run_server(listener: TcpListener, opts: &ServerOptions) -> Result<HarnessReport, HarnessError> {
    opts.validate()?;
    let mut conns = accept_workers(&listener, opts)?;
    log::info!("all {} workers connected", conns.len());
    let mut rounds = Vec::with_capacity(opts.rounds as usize);
    let mut last_global = None;
    for k in 1..=opts.rounds {
        let (report, global) = run_round(&mut conns, k, opts)?;
        log::info!(
            "round {k}: push {:.3}s aggregate {:.3}s broadcast {:.3}s",
            report.push_s,
            report.aggregate_s,
            report.broadcast_s
        );
        rounds.push(report);
        last_global = Some(global);
    }
    shutdown(&mut conns, opts.rounds + 1, opts.timeout)?;

    let errors: Vec<f64> = rounds.iter().filter_map(|r| r.relative_error).collect();
    let mean_relative_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    let max_relative_error = errors.iter().copied().reduce(f64::max);
    Ok(HarnessReport {
        options: opts.clone(),
        aggregation: if opts.codec.is_homomorphic() { "compressed_domain" } else { "decode_mean_encode" }.into(),
        rounds,
        mean_relative_error,
        max_relative_error,
        last_global,
    })
}

fn accept_workers(listener: &TcpListener, opts: &ServerOptions) -> Result<Vec<Conn>, HarnessError> {
    let deadline = Instant::now() + opts.timeout;
    let shared = Limiter::new(opts.bucket_rate()).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut slots: Vec<Option<Conn>> = (0..opts.workers).map(|_| None).collect();
    let mut connected = 0;
    listener.set_nonblocking(true)?;
    while connected < opts.workers {
        let stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(HarnessError::Handshake(format!(
                        "only {connected} of {} workers connected before the timeout",
                        opts.workers
                    )));
                }
                thread::sleep(Duration::from_millis(2));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let limiter = match opts.link {
            LinkMode::Shared => shared.clone(),
            LinkMode::PerLink => Limiter::new(opts.bucket_rate()).expect("rate validated"),
        };
        let mut conn = Conn { id: u32::MAX, stream: Throttled::new(stream, limiter) };
        conn.set_timeout(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1)))?;
        let hello = Frame::read_from(&mut conn.stream, 4)
            .map_err(|e| HarnessError::Handshake(format!("reading HELLO: {e}")))?;
        if hello.msg_type != MsgType::Hello || hello.round != 0 || hello.payload.len() != 4 {
            return Err(HarnessError::Handshake(format!(
                "expected HELLO for round 0 with a 4-byte id, got {:?} round {} with {} bytes",
                hello.msg_type,
                hello.round,
                hello.payload.len()
            )));
        }
        let id = u32::from_le_bytes(hello.payload[..4].try_into().expect("4 bytes"));
        match slots.get_mut(id as usize) {
            None => {
                return Err(HarnessError::Handshake(format!("worker id {id} out of range 0..{}", opts.workers)));
            }
            Some(Some(_)) => return Err(HarnessError::Handshake(format!("worker id {id} connected twice"))),
            Some(slot) => {
                conn.id = id;
                *slot = Some(conn);
                connected += 1;
                log::debug!("worker {id} connected");
            }
        }
    }
    Ok(slots.into_iter().map(|c| c.expect("every slot filled")).collect())
}

struct Push {
    first_byte: Instant,
    done: Instant,
    wire: usize,
    blob: EncodedBlob,
}

fn read_push(conn: &mut Conn, round: u32, opts: &ServerOptions) -> Result<Push, String> {
    let (frame, first_byte) = Frame::read_timed(&mut conn.stream, opts.max_payload()).map_err(|e| match e {
        FrameError::Closed => "disconnected".to_string(),
        e if e.is_timeout() => format!("no PUSH within {:?}", opts.timeout),
        e => e.to_string(),
    })?;
    let done = Instant::now();
    if frame.msg_type != MsgType::Push || frame.round != round {
        return Err(format!("expected PUSH for round {round}, got {:?} for round {}", frame.msg_type, frame.round));
    }
    let blob = EncodedBlob::from_bytes(&frame.payload).map_err(|e| format!("bad blob: {e}"))?;
    if blob.codec_id != opts.codec.id() {
        return Err(format!("blob encoded with {:?}, server expects {}", blob.codec_id, opts.codec));
    }
    if blob.original_count as usize != opts.element_count() {
        return Err(format!("blob has {} values, expected {}", blob.original_count, opts.element_count()));
    }
    Ok(Push { first_byte, done, wire: frame.wire_len(), blob })
}

/// Averages the pushed blobs, in the compressed domain when the codec allows it.
fn aggregate(codec: CodecKind, blobs: &[EncodedBlob], exec: Exec) -> Result<EncodedBlob, crate::codec::CodecError> {
    let count = blobs[0].original_count;
    match codec {
        CodecKind::Quant(bits) => {
            let qs = blobs
                .iter()
                .map(|b| {
                    let q = QuantizedBlob::from_payload(&b.payload, count as usize)?;
                    if q.bits() != bits {
                        return Err(crate::codec::CodecError::InvalidBits(q.bits()));
                    }
                    Ok(q)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let avg = codec::h_average_with(&qs, exec)?;
            Ok(EncodedBlob { codec_id: CodecId::Quant, original_count: count, payload: avg.to_payload() })
        }
        _ => {
            let decoded = blobs.iter().map(|b| codec::decode_with(codec, b, exec)).collect::<Result<Vec<_>, _>>()?;
            Ok(codec::encode_with(codec, &ParamBlob::mean(&decoded)?, exec))
        }
    }
}

fn run_round(conns: &mut [Conn], round: u32, opts: &ServerOptions) -> Result<(RoundReport, EncodedBlob), HarnessError> {
    let start = Instant::now();
    for c in conns.iter() {
        c.set_timeout(opts.timeout)?;
    }
    let pushes: Vec<(u32, Result<Push, String>)> = thread::scope(|s| {
        let handles: Vec<_> = conns.iter_mut().map(|c| s.spawn(move || (c.id, read_push(c, round, opts)))).collect();
        handles.into_iter().map(|h| h.join().expect("reader thread panicked")).collect()
    });
    let mut ok = Vec::with_capacity(pushes.len());
    for (worker, p) in pushes {
        match p {
            Ok(p) if p.done.duration_since(start) > opts.timeout => {
                return Err(HarnessError::RoundAborted { round, worker, reason: "round timed out".into() });
            }
            Ok(p) => ok.push(p),
            Err(reason) => return Err(HarnessError::RoundAborted { round, worker, reason }),
        }
    }
    let first = ok.iter().map(|p| p.first_byte).min().expect("at least one worker");
    let push_end = ok.iter().map(|p| p.done).max().expect("at least one worker");
    let push_s = push_end.duration_since(first).as_secs_f64();

    let t = Instant::now();
    let blobs: Vec<EncodedBlob> = ok.iter().map(|p| p.blob.clone()).collect();
    let global = aggregate(opts.codec, &blobs, opts.exec).map_err(|e| HarnessError::RoundAborted {
        round,
        worker: conns[0].id,
        reason: format!("aggregation: {e}"),
    })?;
    let aggregate_s = t.elapsed().as_secs_f64();

    let frame = Frame::new(MsgType::Global, round, global.to_bytes());
    let t = Instant::now();
    let sent: Vec<(u32, io::Result<()>)> = thread::scope(|s| {
        let frame = &frame;
        let handles: Vec<_> =
            conns.iter_mut().map(|c| s.spawn(move || (c.id, frame.write_to(&mut c.stream)))).collect();
        handles.into_iter().map(|h| h.join().expect("writer thread panicked")).collect()
    });
    for (worker, r) in sent {
        r.map_err(|e| HarnessError::RoundAborted { round, worker, reason: format!("broadcast: {e}") })?;
    }
    let end = Instant::now();
    let broadcast_s = end.duration_since(t).as_secs_f64();

    let push_bytes: u64 = ok.iter().map(|p| p.wire as u64).sum();
    let global_bytes = frame.wire_len() as u64;
    let modeled = match opts.rate {
        Rate::Unlimited => None,
        Rate::BytesPerSec(chi) => {
            let bytes = match opts.link {
                LinkMode::Shared => push_bytes + global_bytes * conns.len() as u64,
                LinkMode::PerLink => ok.iter().map(|p| p.wire as u64).max().unwrap_or(0) + global_bytes,
            };
            Some(bytes as f64 / (2.0 * chi))
        }
    };
    let measured = push_s + broadcast_s;
    Ok((
        RoundReport {
            round,
            push_s,
            aggregate_s,
            broadcast_s,
            end_to_end_s: end.duration_since(start).as_secs_f64(),
            measured_transfer_s: measured,
            modeled_t_tnf_s: modeled,
            relative_error: modeled.map(|m| (measured - m).abs() / m),
            push_bytes,
            global_bytes,
        },
        global,
    ))
}

fn shutdown(conns: &mut [Conn], round: u32, timeout: Duration) -> Result<(), HarnessError> {
    for c in conns.iter_mut() {
        c.set_timeout(timeout)?;
        Frame::done(round)
            .write_to(&mut c.stream)
            .map_err(|e| HarnessError::Shutdown { worker: c.id, reason: e.to_string() })?;
    }
    for c in conns.iter_mut() {
        let f = Frame::read_from(&mut c.stream, HEADER_LEN as u32)
            .map_err(|e| HarnessError::Shutdown { worker: c.id, reason: e.to_string() })?;
        if f.msg_type != MsgType::Done || f.round != round {
            return Err(HarnessError::Shutdown {
                worker: c.id,
                reason: format!("expected DONE for round {round}, got {:?} for round {}", f.msg_type, f.round),
            });
        }
    }
    Ok(())
}

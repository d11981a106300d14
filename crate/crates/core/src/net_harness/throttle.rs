//! Token-bucket rate limiting for byte streams.

use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest burst the bucket grants, and the largest single I/O call.
pub const BURST_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    Unlimited,
    BytesPerSec(f64),
}

#[derive(Debug, Error, PartialEq)]
#[error("rate must be finite and > 0 (got {0}); use Rate::Unlimited for no limit")]
pub struct InvalidRate(pub f64);

impl Rate {
    pub fn bytes_per_sec(rate: f64) -> Result<Self, InvalidRate> {
        if rate.is_finite() && rate > 0.0 {
            Ok(Rate::BytesPerSec(rate))
        } else {
            Err(InvalidRate(rate))
        }
    }
}

/// A bucket that is empty at first use and may go into debt; callers sleep
/// off the debt.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    tokens: f64,
    last: Option<Instant>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Result<Self, InvalidRate> {
        Rate::bytes_per_sec(rate)?;
        Ok(Self { rate, burst: BURST_BYTES as f64, tokens: 0.0, last: None })
    }

    /// Charges `n` bytes and returns how long the caller must wait.
    pub fn reserve(&mut self, n: usize) -> Duration {
        let now = Instant::now();
        let dt = self.last.map_or(0.0, |t| now.duration_since(t).as_secs_f64());
        self.last = Some(now);
        self.tokens = (self.tokens + dt * self.rate).min(self.burst) - n as f64;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.rate)
        }
    }
}

/// Handle to a bucket that may be shared by several streams.
#[derive(Debug, Clone)]
pub struct Limiter(Option<Arc<Mutex<TokenBucket>>>);

impl Limiter {
    pub fn new(rate: Rate) -> Result<Self, InvalidRate> {
        match rate {
            Rate::Unlimited => Ok(Limiter(None)),
            Rate::BytesPerSec(r) => Ok(Limiter(Some(Arc::new(Mutex::new(TokenBucket::new(r)?))))),
        }
    }

    pub fn unlimited() -> Self {
        Limiter(None)
    }

    fn pay(&self, n: usize) {
        if let Some(bucket) = &self.0 {
            let wait = bucket.lock().expect("bucket lock").reserve(n);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
    }
}

/// Stream wrapper that paces both reads and writes through a [`Limiter`].
#[derive(Debug)]
pub struct Throttled<S> {
    inner: S,
    limiter: Limiter,
}

impl<S> Throttled<S> {
    pub fn new(inner: S, limiter: Limiter) -> Self {
        Self { inner, limiter }
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

/// Wraps `inner` with its own bucket at `rate`.
pub fn throttle<S>(inner: S, rate: Rate) -> Result<Throttled<S>, InvalidRate> {
    Ok(Throttled::new(inner, Limiter::new(rate)?))
}

impl<S: Write> Write for Throttled<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = buf.len().min(BURST_BYTES);
        self.limiter.pay(n);
        self.inner.write_all(&buf[..n])?;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<S: Read> Read for Throttled<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let cap = buf.len().min(BURST_BYTES);
        let n = self.inner.read(&mut buf[..cap])?;
        self.limiter.pay(n);
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timed_write(rate: f64, bytes: usize) -> f64 {
        let mut t = throttle(io::sink(), Rate::bytes_per_sec(rate).unwrap()).unwrap();
        let data = vec![0u8; bytes];
        let start = Instant::now();
        t.write_all(&data).unwrap();
        start.elapsed().as_secs_f64()
    }

    #[test]
    fn rate_lower_bound() {
        assert!(timed_write(1e6, 2_000_000) >= 2.0);
    }

    #[test]
    fn rate_accuracy() {
        let elapsed = timed_write(10e6, 10_000_000);
        assert!((1.0..=1.05).contains(&elapsed), "elapsed {elapsed}");
    }

    #[test]
    fn unlimited_passthrough() {
        let mut t = throttle(Vec::new(), Rate::Unlimited).unwrap();
        let start = Instant::now();
        t.write_all(&vec![7u8; 4 << 20]).unwrap();
        assert!(start.elapsed() < Duration::from_millis(500));
        assert_eq!(t.into_inner().len(), 4 << 20);

        let src = vec![1u8; 300_000];
        let mut r = throttle(&src[..], Rate::Unlimited).unwrap();
        let mut out = Vec::new();
        r.read_to_end(&mut out).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn reads_are_paced() {
        let src = vec![1u8; 1_000_000];
        let mut r = throttle(&src[..], Rate::bytes_per_sec(4e6).unwrap()).unwrap();
        let start = Instant::now();
        let mut out = Vec::new();
        r.read_to_end(&mut out).unwrap();
        assert!(start.elapsed().as_secs_f64() >= 0.25);
        assert_eq!(out.len(), src.len());
    }

    #[test]
    fn rejects_bad_rates() {
        assert_eq!(Rate::bytes_per_sec(0.0), Err(InvalidRate(0.0)));
        assert!(Rate::bytes_per_sec(f64::INFINITY).is_err());
        assert!(TokenBucket::new(-1.0).is_err());
    }

    #[test]
    fn shared_bucket_splits_rate() {
        let limiter = Limiter::new(Rate::bytes_per_sec(8e6).unwrap()).unwrap();
        let start = Instant::now();
        thread::scope(|s| {
            for _ in 0..4 {
                let l = limiter.clone();
                s.spawn(move || Throttled::new(io::sink(), l).write_all(&vec![0u8; 1_000_000]).unwrap());
            }
        });
        let elapsed = start.elapsed().as_secs_f64();
        assert!((0.5..0.6).contains(&elapsed), "elapsed {elapsed}");
    }
}

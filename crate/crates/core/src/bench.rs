//! Desk-scale codec measurements.
//!
//! Synthetic weight blobs stand in for real checkpoints. Timings are the
//! median of an odd number of single-threaded repeats; ratios depend only on
//! the blob contents, so they are reproducible for a fixed seed.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, CodecKind, ParamBlob, DEFLATE_LEVEL};
use crate::cost_model::{CodecProfile, ConfigError};
use crate::exec::{Exec, CHUNK};

/// 23 MiB, a tenth of the AlexNet caffemodel.
pub const DEFAULT_BLOB_BYTES: u64 = 23 * 1024 * 1024;

// Standard deviation of synthetic weights; typical of trained conv/fc layers.
const WEIGHT_STD: f32 = 0.05;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("blob_bytes must be at least 4 (got {0})")]
    BlobTooSmall(u64),
    #[error("repeats must be an odd number >= 3 (got {0})")]
    BadRepeats(u32),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    Gaussian,
    /// Gaussian values interleaved with runs of repeated values.
    Structured,
    Zeros,
}

impl std::str::FromStr for WeightDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "structured" => Ok(Self::Structured),
            "zeros" => Ok(Self::Zeros),
            other => Err(format!("unknown distribution '{other}' (expected gaussian|structured|zeros)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub blob_bytes: u64,
    pub distribution: WeightDistribution,
    pub seed: u64,
    pub repeats: u32,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { blob_bytes: DEFAULT_BLOB_BYTES, distribution: WeightDistribution::Structured, seed: 42, repeats: 3 }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.blob_bytes < 4 {
            return Err(BenchError::BlobTooSmall(self.blob_bytes));
        }
        if self.repeats < 3 || self.repeats.is_multiple_of(2) {
            return Err(BenchError::BadRepeats(self.repeats));
        }
        Ok(())
    }
}

/// Measured codec behaviour on one blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecStats {
    pub codec: CodecKind,
    pub original_bytes: u64,
    pub encoded_bytes: u64,
    /// Compressed over original size.
    pub ratio: f64,
    pub compress_s: f64,
    pub decompress_s: f64,
    pub max_abs_err: f64,
    pub repeats: u32,
    /// Compression level, for DEFLATE.
    pub deflate_level: Option<u32>,
}

impl CodecStats {
    /// Original over compressed size.
    pub fn size_ratio(&self) -> f64 {
        1.0 / self.ratio
    }
}

/// SplitMix64 finaliser; derives independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn make_synthetic_weights(spec: &BenchSpec) -> Result<ParamBlob, BenchError> {
    make_synthetic_weights_with(spec, Exec::default())
}

/// Generates `blob_bytes / 4` weights. Each 64 Ki-element chunk has its own
/// seeded stream, so the output does not depend on the execution mode.
pub fn make_synthetic_weights_with(spec: &BenchSpec, exec: Exec) -> Result<ParamBlob, BenchError> {
    if spec.blob_bytes < 4 {
        return Err(BenchError::BlobTooSmall(spec.blob_bytes));
    }
    let count = (spec.blob_bytes / 4) as usize;
    let mut values = vec![0f32; count];
    let normal = Normal::new(0.0f32, WEIGHT_STD).expect("valid normal");
    match spec.distribution {
        WeightDistribution::Zeros => {}
        WeightDistribution::Gaussian => exec.for_each_chunk_mut(&mut values, CHUNK, |ci, chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, ci as u64));
            chunk.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }),
        WeightDistribution::Structured => exec.for_each_chunk_mut(&mut values, CHUNK, |ci, chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, ci as u64));
            fill_structured(chunk, &normal, &mut rng);
        }),
    }
    Ok(ParamBlob::new(values)?)
}

// Alternates Gaussian stretches with short runs of one repeated weight,
// roughly one element in twelve sitting in a run.
fn fill_structured(chunk: &mut [f32], normal: &Normal<f32>, rng: &mut ChaCha8Rng) {
    let mut i = 0;
    while i < chunk.len() {
        let noisy = rng.random_range(64..448usize).min(chunk.len() - i);
        for v in &mut chunk[i..i + noisy] {
            *v = normal.sample(rng);
        }
        i += noisy;
        let run = rng.random_range(8..32usize).min(chunk.len() - i);
        let value = if rng.random_bool(0.5) { 0.0 } else { normal.sample(rng) };
        chunk[i..i + run].fill(value);
        i += run;
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Times `repeats` encodes and decodes of one synthetic blob.
pub fn bench_codec(codec: CodecKind, spec: &BenchSpec) -> Result<CodecStats, BenchError> {
    spec.validate()?;
    let blob = make_synthetic_weights(spec)?;
    bench_blob(codec, &blob, spec.repeats)
}

pub fn bench_blob(codec: CodecKind, blob: &ParamBlob, repeats: u32) -> Result<CodecStats, BenchError> {
    if repeats < 3 || repeats.is_multiple_of(2) {
        return Err(BenchError::BadRepeats(repeats));
    }
    let mut compress = Vec::with_capacity(repeats as usize);
    let mut decompress = Vec::with_capacity(repeats as usize);
    let mut encoded = None;
    let mut decoded = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let e = codec::encode_with(codec, blob, Exec::Sequential);
        compress.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let d = codec::decode_with(codec, &e, Exec::Sequential)?;
        decompress.push(t.elapsed().as_secs_f64());
        encoded = Some(e);
        decoded = Some(d);
    }
    let (encoded, decoded) = (encoded.expect("repeats >= 3"), decoded.expect("repeats >= 3"));
    let max_abs_err =
        blob.values().iter().zip(decoded.values()).map(|(a, b)| (*a as f64 - *b as f64).abs()).fold(0.0, f64::max);
    Ok(CodecStats {
        codec,
        original_bytes: blob.byte_len() as u64,
        encoded_bytes: encoded.payload.len() as u64,
        ratio: encoded.ratio(),
        compress_s: median(compress),
        decompress_s: median(decompress),
        max_abs_err,
        repeats,
        deflate_level: (codec == CodecKind::Deflate).then_some(DEFLATE_LEVEL),
    })
}

/// Turns a measurement into cost-model input. `h` cannot be measured here
/// and must come from the caller.
pub fn profile_from_stats(stats: &CodecStats, h: f64) -> Result<CodecProfile, ConfigError> {
    if stats.ratio > 1.0 {
        log::warn!("{} expands the data (ratio {:.4}); clamping rho to 1.0", stats.codec, stats.ratio);
    }
    CodecProfile::new(stats.ratio.min(1.0), h, stats.compress_s, stats.decompress_s)
}

fn human_bytes(n: u64) -> String {
    const UNITS: [&str; 4] = ["B", "KiB", "MiB", "GiB"];
    let mut v = n as f64;
    let mut unit = 0;
    while v >= 1024.0 && unit < UNITS.len() - 1 {
        v /= 1024.0;
        unit += 1;
    }
    if unit == 0 {
        format!("{n}B")
    } else {
        format!("{v:.1}{}", UNITS[unit])
    }
}

/// Aligned text table in the layout of a classic compression report.
pub fn format_table(rows: &[CodecStats]) -> String {
    let header = ["Codec", "Size", "Compression ratio", "Compression time", "Decompression time", "rho", "Max abs err"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|s| {
            [
                s.codec.to_string(),
                human_bytes(s.original_bytes),
                format!("{:.3}", s.size_ratio()),
                format!("{:.3}s", s.compress_s),
                format!("{:.3}s", s.decompress_s),
                format!("{:.4}", s.ratio),
                format!("{:.3e}", s.max_abs_err),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bytes: u64, distribution: WeightDistribution) -> BenchSpec {
        BenchSpec { blob_bytes: bytes, distribution, seed: 42, repeats: 3 }
    }

    #[test]
    fn zeros_kib() {
        let b = make_synthetic_weights(&spec(1024, WeightDistribution::Zeros)).unwrap();
        assert_eq!(b.len(), 256);
        assert!(b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_deterministic_across_modes() {
        let s = spec(1 << 20, WeightDistribution::Structured);
        let a = make_synthetic_weights_with(&s, Exec::Sequential).unwrap();
        let b = make_synthetic_weights_with(&s, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let g = spec(1 << 16, WeightDistribution::Gaussian);
        assert_eq!(make_synthetic_weights(&g).unwrap(), make_synthetic_weights(&g).unwrap());
        let other = BenchSpec { seed: 43, ..g };
        assert_ne!(make_synthetic_weights(&g).unwrap(), make_synthetic_weights(&other).unwrap());
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(spec(2, WeightDistribution::Zeros).validate(), Err(BenchError::BlobTooSmall(2))));
        let even = BenchSpec { repeats: 4, ..spec(64, WeightDistribution::Zeros) };
        assert!(matches!(even.validate(), Err(BenchError::BadRepeats(4))));
        let one = BenchSpec { repeats: 1, ..spec(64, WeightDistribution::Zeros) };
        assert!(one.validate().is_err());
    }

    #[test]
    fn identity_stats() {
        let s = bench_codec(CodecKind::Identity, &spec(4096, WeightDistribution::Gaussian)).unwrap();
        assert_eq!(s.ratio, 1.0);
        assert_eq!(s.max_abs_err, 0.0);
        let p = profile_from_stats(&s, 1.0).unwrap();
        assert_eq!(p.rho, 1.0);
        assert_eq!(p.op_overhead, 1.0);
    }

    #[test]
    fn deflate_on_zeros() {
        let s = bench_codec(CodecKind::Deflate, &spec(1 << 20, WeightDistribution::Zeros)).unwrap();
        assert!(s.ratio < 0.01);
        assert!(s.compress_s > 0.0);
        assert_eq!(s.deflate_level, Some(6));
    }

    #[test]
    fn profile_inverts_and_clamps() {
        let mut s = bench_codec(CodecKind::Identity, &spec(64, WeightDistribution::Zeros)).unwrap();
        s.ratio = 1.0 / 1.079;
        let p = profile_from_stats(&s, 1.0).unwrap();
        assert!((p.rho - 0.9268).abs() < 1e-4);
        s.ratio = 1.2;
        assert_eq!(profile_from_stats(&s, 1.0).unwrap().rho, 1.0);
        assert!(profile_from_stats(&s, 0.5).is_err());
    }

    #[test]
    fn table_has_a_row_per_stat() {
        let s = bench_codec(CodecKind::Identity, &spec(4096, WeightDistribution::Gaussian)).unwrap();
        let t = format_table(&[s.clone(), s]);
        assert_eq!(t.lines().count(), 4);
        assert!(t.starts_with("Codec"));
        assert!(t.contains("4.0KiB"));
    }
}

use homcomp::codec::{
    self, average_error_bound, decode, encode, h_add, h_average, h_scale, quantize, CodecKind, EncodedBlob, ParamBlob,
    QuantizedBlob,
};
use homcomp::exec::Exec;
use proptest::prelude::*;

// Rounding of the f32 result on top of an f64 bound.
fn slack(v: f64) -> f64 {
    f32::EPSILON as f64 * v.abs().max(1e-30)
}

fn values(max_len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1e3f32..1e3, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lossless_roundtrip(v in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 1..2000)) {
        let blob = ParamBlob::new(v).unwrap();
        for codec in [CodecKind::Identity, CodecKind::Deflate] {
            let enc = encode(codec, &blob);
            let wire = EncodedBlob::from_bytes(&enc.to_bytes()).unwrap();
            let back = decode(codec, &wire).unwrap();
            prop_assert_eq!(
                back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                blob.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn quant_error_within_half_step(v in values(3000), wide in any::<bool>()) {
        let bits = if wide { 16 } else { 8 };
        let q = quantize(&v, bits).unwrap();
        let s = q.scale();
        for (x, d) in v.iter().zip(q.dequantize()) {
            let err = (*x as f64 - d as f64).abs();
            prop_assert!(err <= s / 2.0 + slack(*x as f64), "err {err} step {s}");
        }
    }

    #[test]
    fn h_add_within_half_output_step(a in values(500), shift in -50f32..50.0, gain in 0.01f32..100.0, wide in any::<bool>()) {
        let bits = if wide { 16 } else { 8 };
        let b: Vec<f32> = a.iter().rev().map(|x| x * gain + shift).collect();
        let (qa, qb) = (quantize(&a, bits).unwrap(), quantize(&b, bits).unwrap());
        let sum = h_add(&qa, &qb).unwrap();
        prop_assert!(sum.scale() >= qa.scale().max(qb.scale()));
        let (da, db, ds) = (qa.dequantize(), qb.dequantize(), sum.dequantize());
        for j in 0..a.len() {
            let want = da[j] as f64 + db[j] as f64;
            let err = (ds[j] as f64 - want).abs();
            prop_assert!(err <= sum.scale() / 2.0 + slack(want) + slack(da[j] as f64) + slack(db[j] as f64));
        }
    }

    #[test]
    fn h_average_within_bound(seed in any::<u64>(), m_idx in 0usize..3, len in 1usize..800, wide in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let m = [2usize, 4, 16][m_idx];
        let bits = if wide { 16 } else { 8 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<Vec<f32>> = (0..m)
            .map(|_| {
                let (lo, span) = (rng.random_range(-10.0f32..10.0), rng.random_range(0.001f32..20.0));
                (0..len).map(|_| lo + span * rng.random::<f32>()).collect()
            })
            .collect();
        let qs: Vec<QuantizedBlob> = blobs.iter().map(|b| quantize(b, bits).unwrap()).collect();
        let avg = h_average(&qs).unwrap();
        let bound = average_error_bound(&avg, m);
        for (j, g) in avg.dequantize().iter().enumerate() {
            let mean = blobs.iter().map(|b| b[j] as f64).sum::<f64>() / m as f64;
            let err = (*g as f64 - mean).abs();
            prop_assert!(err <= bound + slack(mean), "m {m} err {err} bound {bound}");
        }
    }

    #[test]
    fn h_scale_is_exact_up_to_rounding(v in values(500), alpha in -20.0f64..20.0) {
        let q = quantize(&v, 8).unwrap();
        let scaled = h_scale(&q, alpha).unwrap();
        for (d, s) in q.dequantize().iter().zip(scaled.dequantize()) {
            let want = alpha * *d as f64;
            prop_assert!((s as f64 - want).abs() <= 4.0 * slack(want) + 1e-12 * alpha.abs().max(1.0) * q.scale());
        }
    }

    #[test]
    fn encoding_is_deterministic(v in values(2000)) {
        let blob = ParamBlob::new(v).unwrap();
        for codec in CodecKind::ALL {
            prop_assert_eq!(encode(codec, &blob).to_bytes(), encode(codec, &blob).to_bytes());
            prop_assert_eq!(
                codec::encode_with(codec, &blob, Exec::Sequential),
                codec::encode_with(codec, &blob, Exec::Parallel)
            );
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(enc) = EncodedBlob::from_bytes(&bytes) {
            let _ = codec::decode_any(&enc);
            for codec in CodecKind::ALL {
                let _ = decode(codec, &enc);
            }
        }
    }
}

#[test]
fn parallel_kernels_match_sequential_on_large_blobs() {
    let v: Vec<f32> = (0..300_000u64).map(|i| ((i * 7919) % 1000) as f32 * 0.01 - 5.0).collect();
    let a = codec::quant::quantize_with(&v, 8, Exec::Sequential).unwrap();
    let b = codec::quant::quantize_with(&v, 8, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    let blobs = vec![a.clone(), h_scale(&a, 0.5).unwrap(), h_scale(&a, -2.0).unwrap()];
    assert_eq!(
        codec::h_average_with(&blobs, Exec::Sequential).unwrap(),
        codec::h_average_with(&blobs, Exec::Parallel).unwrap()
    );
    assert_eq!(a.dequantize_with(Exec::Sequential), a.dequantize_with(Exec::Parallel));
}

#[test]
fn deflate_shrinks_zeros() {
    let blob = ParamBlob::new(vec![0.0; 100_000]).unwrap();
    assert!(encode(CodecKind::Deflate, &blob).ratio() < 0.01);
}

#[test]
fn wire_layout() {
    let blob = ParamBlob::new(vec![0.0, 0.5, 1.0]).unwrap();
    let bytes = encode(CodecKind::Quant(8), &blob).to_bytes();
    let scale = (1.0f32 / 255.0).to_le_bytes();
    let mut want = vec![2u8, 3, 0, 0, 0, 12, 0, 0, 0];
    want.extend_from_slice(&scale);
    want.extend_from_slice(&0f32.to_le_bytes());
    want.extend_from_slice(&[8, 0, 128, 255]);
    assert_eq!(bytes, want);
}

use fedcom_core::compression::{decompress, encode, CompressorKind, CompressorSpec, Payload, HEADER_BYTES};
use fedcom_core::linalg;
use fedcom_core::rng::derive_stream;
use proptest::prelude::*;

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..40)
}

fn kind_for(d: usize) -> impl Strategy<Value = CompressorKind> {
    prop_oneof![
        Just(CompressorKind::Identity),
        (1u32..=16).prop_map(|bits| CompressorKind::StochasticQuantizer { bits }),
        (1..=d).prop_map(|k| CompressorKind::RandK { k }),
        (1..=d).prop_map(|k| CompressorKind::TopK { k }),
    ]
}

fn case() -> impl Strategy<Value = (Vec<f64>, CompressorKind, u64)> {
    vector().prop_flat_map(|x| {
        let d = x.len();
        (Just(x), kind_for(d), any::<u64>())
    })
}

fn index_bits(d: usize) -> u64 {
    let mut bits = 0;
    while (1usize << bits) < d {
        bits += 1;
    }
    bits
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wire_length_matches_declared_bits((x, kind, seed) in case()) {
        let spec = CompressorSpec::new(kind, x.len()).unwrap();
        let msg = spec.compress(&x, &mut derive_stream(seed, 0, 0)).unwrap();
        prop_assert_eq!(msg.bit_size, spec.message_bits());
        let bytes = encode(&msg);
        prop_assert_eq!(bytes.len() as u64, HEADER_BYTES as u64 + msg.bit_size.div_ceil(8));
    }

    #[test]
    fn bit_formulas((x, kind, _seed) in case()) {
        let d = x.len() as u64;
        let expected = match kind {
            CompressorKind::Identity => 32 * d,
            CompressorKind::StochasticQuantizer { bits } => 64 + u64::from(bits) * d,
            CompressorKind::RandK { k } | CompressorKind::TopK { k } => k as u64 * (index_bits(x.len()) + 32),
        };
        prop_assert_eq!(CompressorSpec::new(kind, x.len()).unwrap().message_bits(), expected);
    }

    #[test]
    fn compression_is_a_function_of_the_stream((x, kind, seed) in case()) {
        let spec = CompressorSpec::new(kind, x.len()).unwrap();
        let a = spec.compress(&x, &mut derive_stream(seed, 3, 7)).unwrap();
        let b = spec.compress(&x, &mut derive_stream(seed, 3, 7)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn decompress_restores_the_dimension((x, kind, seed) in case()) {
        let spec = CompressorSpec::new(kind, x.len()).unwrap();
        let msg = spec.compress(&x, &mut derive_stream(seed, 0, 0)).unwrap();
        prop_assert_eq!(decompress(&msg).unwrap().len(), x.len());
    }

    #[test]
    fn identity_is_lossless(x in vector(), seed in any::<u64>()) {
        let spec = CompressorSpec::identity(x.len());
        let msg = spec.compress(&x, &mut derive_stream(seed, 0, 0)).unwrap();
        prop_assert_eq!(decompress(&msg).unwrap(), x);
    }

    #[test]
    fn quantizer_stays_in_range_and_on_adjacent_levels(x in vector(), bits in 1u32..=12, seed in any::<u64>()) {
        let spec = CompressorSpec::new(CompressorKind::StochasticQuantizer { bits }, x.len()).unwrap();
        let msg = spec.compress(&x, &mut derive_stream(seed, 0, 0)).unwrap();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / f64::from((1u32 << bits) - 1);
        let y = decompress(&msg).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert!(*yi >= lo - 1e-9 && *yi <= hi + 1e-9);
            prop_assert!((yi - xi).abs() <= step * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn top_k_keeps_the_largest_magnitudes(x in vector(), frac in 0.0f64..1.0) {
        let d = x.len();
        let k = 1 + ((d - 1) as f64 * frac) as usize;
        let spec = CompressorSpec::new(CompressorKind::TopK { k }, d).unwrap();
        let msg = spec.compress(&x, &mut derive_stream(0, 0, 0)).unwrap();
        let Payload::Sparse(kept) = &msg.payload else { panic!("top-k must be sparse") };
        prop_assert_eq!(kept.len(), k);
        prop_assert!(kept.windows(2).all(|w| w[0].0 < w[1].0));
        let smallest_kept = kept.iter().map(|e| e.1.abs()).fold(f64::INFINITY, f64::min);
        for (i, v) in x.iter().enumerate() {
            match kept.iter().find(|e| e.0 as usize == i) {
                Some(e) => prop_assert_eq!(e.1, *v),
                None => prop_assert!(v.abs() <= smallest_kept),
            }
        }
        // Dropping coordinates never increases the norm.
        prop_assert!(linalg::norm(&decompress(&msg).unwrap()) <= linalg::norm(&x));
    }

    #[test]
    fn rand_k_keeps_k_rescaled_coordinates(x in vector(), frac in 0.0f64..1.0, seed in any::<u64>()) {
        let d = x.len();
        let k = 1 + ((d - 1) as f64 * frac) as usize;
        let spec = CompressorSpec::new(CompressorKind::RandK { k }, d).unwrap();
        let msg = spec.compress(&x, &mut derive_stream(seed, 0, 0)).unwrap();
        let Payload::Sparse(kept) = &msg.payload else { panic!("rand-k must be sparse") };
        prop_assert_eq!(kept.len(), k);
        prop_assert!(kept.windows(2).all(|w| w[0].0 < w[1].0));
        let scale = d as f64 / k as f64;
        for (i, v) in kept {
            prop_assert_eq!(*v, x[*i as usize] * scale);
        }
    }

    #[test]
    fn mean_of_identical_vectors_is_exact(x in vector(), m in 1usize..12) {
        let copies: Vec<&[f64]> = (0..m).map(|_| x.as_slice()).collect();
        let avg = linalg::mean(&copies);
        for (a, b) in avg.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }
}

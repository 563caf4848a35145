use proptest::prelude::*;
use sua_core::ring::{FixedPointCodec, RingModulus, RingVector};

fn modulus() -> impl Strategy<Value = RingModulus> {
    (1u32..=64).prop_map(|b| RingModulus::new(b).unwrap())
}

proptest! {
    #[test]
    fn addition_is_a_group(m in modulus(), a: u64, b: u64, c: u64) {
        let (a, b, c) = (m.reduce(a), m.reduce(b), m.reduce(c));
        prop_assert_eq!(m.add(a, b), m.add(b, a));
        prop_assert_eq!(m.add(m.add(a, b), c), m.add(a, m.add(b, c)));
        prop_assert_eq!(m.add(a, 0), a);
        prop_assert_eq!(m.add(a, m.sub(0, a)), 0);
        prop_assert_eq!(m.sub(m.add(a, b), b), a);
    }

    #[test]
    fn addition_matches_wide_arithmetic(m in modulus(), a: u64, b: u64) {
        let (a, b) = (m.reduce(a), m.reduce(b));
        let wide = (a as u128 + b as u128) % m.modulus();
        prop_assert_eq!(m.add(a, b) as u128, wide);
        let diff = (a as u128 + m.modulus() - b as u128) % m.modulus();
        prop_assert_eq!(m.sub(a, b) as u128, diff);
    }

    #[test]
    fn vector_bytes_roundtrip(m in modulus(), seed: u64, len in 0usize..40) {
        let mut rng = sua_core::rng::RandomSource::seeded(seed);
        let v = RingVector::random(m, len, &mut rng);
        prop_assert_eq!(RingVector::from_bytes(m, &v.to_bytes()).unwrap(), v.clone());
        prop_assert_eq!(v.payload_bits(), len as u64 * m.bits() as u64);
    }

    #[test]
    fn codec_roundtrip_within_resolution(x in -32767.0f64..32767.0) {
        let c = FixedPointCodec::default();
        let d = c.decode(c.encode(x).unwrap());
        prop_assert!((d - x).abs() <= c.resolution() + 1e-12);
    }

    #[test]
    fn codec_is_additively_homomorphic(xs in prop::collection::vec(-3000.0f64..3000.0, 2..10)) {
        let c = FixedPointCodec::default();
        let mut acc = RingVector::zeros(c.modulus, 1);
        for &x in &xs {
            acc.add_assign(&c.encode_vector(&[x]).unwrap()).unwrap();
        }
        let want: f64 = xs.iter().sum();
        let got = c.decode_vector(&acc)[0];
        prop_assert!((got - want).abs() <= xs.len() as f64 * c.resolution() + 1e-9);
    }
}

#[test]
fn codec_rejects_out_of_range() {
    let c = FixedPointCodec::default();
    let bound = c.magnitude_bound();
    assert!(c.encode(bound).is_ok());
    assert!(c.encode(-bound).is_ok());
    assert!(c.encode(bound + 1.0).is_err());
    assert!(c.encode(f64::NAN).is_err());
}

#[test]
fn negative_values_decode_centered() {
    let c = FixedPointCodec::default();
    let e = c.encode(-1.5).unwrap();
    assert_eq!(e.value(), (1u64 << 32) - 3 * (1 << 15));
    assert_eq!(c.decode(e), -1.5);
}

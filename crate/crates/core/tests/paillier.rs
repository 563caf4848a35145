use num_bigint::{BigUint, RandBigInt};
use proptest::prelude::*;
use sua_core::paillier::{
    dec, enc, encrypt_vector, encrypt_vector_par, he_add, he_scale, keygen, paillier_aggregate, decrypt_vector, add_vectors,
    KeyMode, PackingLayout, PaillierKeypair,
};
use sua_core::ring::{RingModulus, RingVector};
use sua_core::rng::RandomSource;
use sua_core::transport::BandwidthModel;

fn key() -> PaillierKeypair {
    keygen(256, KeyMode::Test, &mut RandomSource::seeded(1)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn addition_and_scaling_are_homomorphic(seed: u64, k in 0u64..1000) {
        let kp = key();
        let mut rng = RandomSource::seeded(seed);
        let n = kp.public.n().clone();
        let a = rng.gen_biguint_below(&n);
        let b = rng.gen_biguint_below(&n);
        let ca = enc(&a, &kp.public, &mut rng).unwrap();
        let cb = enc(&b, &kp.public, &mut rng).unwrap();
        prop_assert_eq!(dec(&he_add(&ca, &cb, &kp.public).unwrap(), &kp).unwrap(), (&a + &b) % &n);
        let k = BigUint::from(k);
        prop_assert_eq!(dec(&he_scale(&ca, &k, &kp.public).unwrap(), &kp).unwrap(), (&a * &k) % &n);
    }

    #[test]
    fn packed_sum_matches_ring_sum(seed: u64, parties in 2usize..6, len in 1usize..30) {
        let kp = key();
        let m = RingModulus::new(32).unwrap();
        let mut rng = RandomSource::seeded(seed);
        let vectors: Vec<_> = (0..parties).map(|_| RingVector::random(m, len, &mut rng)).collect();
        let mut want = RingVector::zeros(m, len);
        for v in &vectors {
            want.add_assign(v).unwrap();
        }
        let (got, report) = paillier_aggregate(&vectors, &kp, 15, &mut rng, &BandwidthModel::default()).unwrap();
        prop_assert_eq!(got, want);
        let layout = PackingLayout::new(32, 15, kp.public.bits()).unwrap();
        prop_assert_eq!(report.ciphertexts_per_party, layout.plaintexts_for(len));
    }
}

#[test]
fn encryption_is_randomized() {
    let kp = key();
    let mut rng = RandomSource::seeded(2);
    let m = BigUint::from(7u32);
    let a = enc(&m, &kp.public, &mut rng).unwrap();
    let b = enc(&m, &kp.public, &mut rng).unwrap();
    assert_ne!(a, b);
    assert_eq!(dec(&a, &kp).unwrap(), dec(&b, &kp).unwrap());
}

#[test]
fn parallel_encryption_is_thread_count_independent() {
    let kp = key();
    let layout = PackingLayout::new(32, 15, kp.public.bits()).unwrap();
    let values: Vec<u64> = (0..50).collect();
    let a = encrypt_vector_par(&values, &layout, &kp.public, &mut RandomSource::seeded(3)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| encrypt_vector_par(&values, &layout, &kp.public, &mut RandomSource::seeded(3)).unwrap());
    assert_eq!(a, b);
    assert_eq!(decrypt_vector(&a, 50, &layout, &kp).unwrap(), values);
}

#[test]
fn slot_sums_wrap_mod_ring() {
    let kp = key();
    let layout = PackingLayout::new(8, 15, kp.public.bits()).unwrap();
    let mut rng = RandomSource::seeded(4);
    let parties: Vec<_> =
        (0..3).map(|_| encrypt_vector(&[200, 100, 1], &layout, &kp.public, &mut rng).unwrap()).collect();
    let sum = add_vectors(&parties, &kp.public).unwrap();
    assert_eq!(decrypt_vector(&sum, 3, &layout, &kp).unwrap(), vec![(600 % 256) as u64, 300 % 256, 3]);
}

#[test]
fn slot_count_for_benchmark_key() {
    let layout = PackingLayout::new(32, 15, 1024).unwrap();
    assert_eq!(layout.slots, 1023 / 47);
    assert_eq!(layout.plaintexts_for(109_386), 109_386usize.div_ceil(21));
    assert!(layout.check_headroom(10).is_ok());
    assert!(layout.check_headroom(1 << 16).is_err());
}

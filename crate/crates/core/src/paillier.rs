//! Paillier additive homomorphic encryption with integer packing, used as the
//! homomorphic-encryption aggregation baseline.
//!
//! The generator is fixed to g = N + 1, so g^m = 1 + mN mod N² and encryption
//! costs a single exponentiation r^N. Decryption uses the CRT split over p²
//! and q²; the textbook λ/μ route is kept as [`dec_textbook`] for
//! cross-checking.

use std::fmt;
use std::time::Instant;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocols::PartyId;
use crate::ring::{RingModulus, RingVector};
use crate::rng::RandomSource;
use crate::transport::{BandwidthModel, CostLedger, CostPhase, TrafficClass, SERVER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaillierError {
    #[error("key size {bits} bits not allowed in {mode:?} mode (minimum {min})")]
    KeySize { bits: u32, mode: KeyMode, min: u32 },
    #[error("plaintext out of range [0, N)")]
    PlaintextRange,
    #[error("ciphertexts were produced under a different public key")]
    KeyMismatch,
    #[error("value {value} does not fit in {bits} bits")]
    SlotValue { value: u64, bits: u32 },
    #[error("{count} values exceed the {slots} slots per plaintext")]
    TooManySlots { count: usize, slots: usize },
    #[error("{parties} parties could carry across {pad}-bit slot padding")]
    SlotOverflow { parties: usize, pad: u32 },
    #[error("packing layout leaves no room: slot width {width} bits, key {key_bits} bits")]
    Layout { width: u32, key_bits: u32 },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed key or ciphertext encoding: {0}")]
    Malformed(String),
}

/// Minimum-key-size policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    /// Small keys for fast tests (≥ 256 bits).
    Test,
    /// ≥ 512 bits.
    Standard,
    /// ≥ 1024 bits; required for timing comparisons.
    Benchmark,
}

impl KeyMode {
    pub fn min_bits(self) -> u32 {
        match self {
            KeyMode::Test => 256,
            KeyMode::Standard => 512,
            KeyMode::Benchmark => 1024,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    bits: u32,
    fingerprint: u64,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey {
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    /// L_p(g^(p−1) mod p²)^(−1) mod p, and likewise for q.
    hp: BigUint,
    hq: BigUint,
    /// p^(−1) mod q, for CRT recombination.
    p_inv_q: BigUint,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PaillierKeypair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits, {:016x})", self.bits, self.fingerprint)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

impl fmt::Debug for PaillierKeypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PaillierKeypair({:?})", self.public)
    }
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let bits = n.bits() as u32;
        let digest = Sha256::digest(n.to_bytes_be());
        let fingerprint = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        Self { n, n_squared, bits, fingerprint }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Serialized ciphertext width in bytes.
    pub fn ciphertext_bytes(&self) -> usize {
        (self.n_squared.bits() as usize).div_ceil(8)
    }
}

impl PrivateKey {
    fn from_primes(p: BigUint, q: BigUint, n: &BigUint) -> Self {
        let one = BigUint::one();
        let p1 = &p - &one;
        let q1 = &q - &one;
        let lambda = p1.lcm(&q1);
        // with g = N + 1: L(g^λ mod N²) = λ mod N
        let mu = (&lambda % n).modinv(n).expect("λ invertible mod N for distinct primes");
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let g = n + &one;
        let hp = l_func(&g.modpow(&p1, &p_squared), &p).modinv(&p).expect("invertible");
        let hq = l_func(&g.modpow(&q1, &q_squared), &q).modinv(&q).expect("invertible");
        let p_inv_q = p.modinv(&q).expect("distinct primes");
        Self { p, q, lambda, mu, p_squared, q_squared, hp, hq, p_inv_q }
    }
}

fn l_func(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u32) / d
}

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251, 257,
];

/// Miller–Rabin with `rounds` random bases; error probability ≤ 4^(−rounds).
pub fn is_probable_prime(n: &BigUint, rounds: u32, rng: &mut RandomSource) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let one = BigUint::one();
    let n1 = n - &one;
    let s = n1.trailing_zeros().expect("n − 1 > 0");
    let d = &n1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn random_prime(bits: u64, rng: &mut RandomSource) -> BigUint {
    loop {
        let mut c = rng.gen_biguint(bits);
        // top two bits set so the product of two such primes has exactly 2·bits bits
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 40, rng) {
            return c;
        }
    }
}

/// Generates a keypair whose modulus N has exactly `bits` bits.
pub fn keygen(bits: u32, mode: KeyMode, rng: &mut RandomSource) -> Result<PaillierKeypair, PaillierError> {
    if bits < mode.min_bits() || !bits.is_multiple_of(2) {
        return Err(PaillierError::KeySize { bits, mode, min: mode.min_bits() });
    }
    let half = bits as u64 / 2;
    loop {
        let p = random_prime(half, rng);
        let q = random_prime(half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        debug_assert_eq!(n.bits(), bits as u64);
        let private = PrivateKey::from_primes(p, q, &n);
        return Ok(PaillierKeypair { public: PublicKey::from_modulus(n), private });
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key: u64,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// 4-byte big-endian length, then the big-endian magnitude.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mag = self.value.to_bytes_be();
        let mut out = (mag.len() as u32).to_be_bytes().to_vec();
        out.extend(mag);
        out
    }

    pub fn from_bytes(bytes: &[u8], pk: &PublicKey) -> Result<Self, PaillierError> {
        if bytes.len() < 4 {
            return Err(PaillierError::Malformed("missing length".into()));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 4 + len {
            return Err(PaillierError::Malformed(format!("length {len} vs {} bytes", bytes.len() - 4)));
        }
        let value = BigUint::from_bytes_be(&bytes[4..]);
        if value >= pk.n_squared {
            return Err(PaillierError::Malformed("ciphertext not below N²".into()));
        }
        Ok(Self { value, key: pk.fingerprint })
    }
}

pub fn enc(m: &BigUint, pk: &PublicKey, rng: &mut RandomSource) -> Result<Ciphertext, PaillierError> {
    if *m >= pk.n {
        return Err(PaillierError::PlaintextRange);
    }
    let r = loop {
        let r = rng.gen_biguint_below(&pk.n);
        if !r.is_zero() && r.gcd(&pk.n).is_one() {
            break r;
        }
    };
    let gm = (BigUint::one() + m * &pk.n) % &pk.n_squared;
    let value = (gm * r.modpow(&pk.n, &pk.n_squared)) % &pk.n_squared;
    Ok(Ciphertext { value, key: pk.fingerprint })
}

/// CRT decryption.
pub fn dec(c: &Ciphertext, kp: &PaillierKeypair) -> Result<BigUint, PaillierError> {
    if c.key != kp.public.fingerprint {
        return Err(PaillierError::KeyMismatch);
    }
    let sk = &kp.private;
    let one = BigUint::one();
    let mp = l_func(&(&c.value % &sk.p_squared).modpow(&(&sk.p - &one), &sk.p_squared), &sk.p) * &sk.hp % &sk.p;
    let mq = l_func(&(&c.value % &sk.q_squared).modpow(&(&sk.q - &one), &sk.q_squared), &sk.q) * &sk.hq % &sk.q;
    // m = mp + p·((mq − mp)·p^(−1) mod q)
    let diff = (&mq + &sk.q - (&mp % &sk.q)) % &sk.q;
    Ok(&mp + &sk.p * ((diff * &sk.p_inv_q) % &sk.q))
}

/// Textbook decryption m = L(c^λ mod N²)·μ mod N.
pub fn dec_textbook(c: &Ciphertext, kp: &PaillierKeypair) -> Result<BigUint, PaillierError> {
    if c.key != kp.public.fingerprint {
        return Err(PaillierError::KeyMismatch);
    }
    let pk = &kp.public;
    let x = c.value.modpow(&kp.private.lambda, &pk.n_squared);
    Ok(l_func(&x, &pk.n) * &kp.private.mu % &pk.n)
}

/// Ciphertext of m1 + m2 mod N.
pub fn he_add(c1: &Ciphertext, c2: &Ciphertext, pk: &PublicKey) -> Result<Ciphertext, PaillierError> {
    if c1.key != pk.fingerprint || c2.key != pk.fingerprint {
        return Err(PaillierError::KeyMismatch);
    }
    Ok(Ciphertext { value: (&c1.value * &c2.value) % &pk.n_squared, key: pk.fingerprint })
}

/// Ciphertext of k·m mod N.
pub fn he_scale(c: &Ciphertext, k: &BigUint, pk: &PublicKey) -> Result<Ciphertext, PaillierError> {
    if c.key != pk.fingerprint {
        return Err(PaillierError::KeyMismatch);
    }
    Ok(Ciphertext { value: c.value.modpow(k, &pk.n_squared), key: pk.fingerprint })
}

/// Slot layout for packing b-bit integers into one plaintext.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingLayout {
    pub value_bits: u32,
    pub pad: u32,
    pub slots: usize,
}

impl PackingLayout {
    /// As many `value_bits + pad` slots as fit strictly below N.
    pub fn new(value_bits: u32, pad: u32, key_bits: u32) -> Result<Self, PaillierError> {
        let width = value_bits + pad;
        // N ≥ 2^(key_bits − 1), so slots·width ≤ key_bits − 1 keeps the packed value below N
        let slots = (key_bits.saturating_sub(1) / width.max(1)) as usize;
        if width == 0 || slots == 0 || value_bits > 64 {
            return Err(PaillierError::Layout { width, key_bits });
        }
        Ok(Self { value_bits, pad, slots })
    }

    pub fn slot_width(&self) -> u32 {
        self.value_bits + self.pad
    }

    /// Refuses party counts whose slot sums could carry into the next slot.
    pub fn check_headroom(&self, parties: usize) -> Result<(), PaillierError> {
        if self.pad < 64 && parties as u128 >= 1u128 << self.pad {
            return Err(PaillierError::SlotOverflow { parties, pad: self.pad });
        }
        Ok(())
    }

    pub fn plaintexts_for(&self, len: usize) -> usize {
        len.div_ceil(self.slots)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedPlaintext {
    pub layout: PackingLayout,
    pub count: usize,
    pub value: BigUint,
}

/// Packs up to `layout.slots` values, slot 0 in the least significant bits.
pub fn pack(values: &[u64], layout: &PackingLayout) -> Result<PackedPlaintext, PaillierError> {
    if values.len() > layout.slots {
        return Err(PaillierError::TooManySlots { count: values.len(), slots: layout.slots });
    }
    let w = layout.slot_width() as usize;
    let mut value = BigUint::zero();
    for (i, &v) in values.iter().enumerate().rev() {
        if layout.value_bits < 64 && v >> layout.value_bits != 0 {
            return Err(PaillierError::SlotValue { value: v, bits: layout.value_bits });
        }
        value <<= w;
        value += v;
        debug_assert!(i < layout.slots);
    }
    Ok(PackedPlaintext { layout: *layout, count: values.len(), value })
}

/// Splits a packed plaintext back into its slots (full slot width, so summed
/// slots come back un-truncated).
pub fn unpack(p: &PackedPlaintext) -> Vec<u128> {
    let w = p.layout.slot_width() as usize;
    let mask = (BigUint::one() << w) - 1u32;
    let mut x = p.value.clone();
    (0..p.count)
        .map(|_| {
            let slot = &x & &mask;
            x >>= w;
            slot.to_u64_digits().iter().rev().fold(0u128, |acc, &d| (acc << 64) | d as u128)
        })
        .collect()
}

/// Packs and encrypts a vector, one ciphertext per `layout.slots` values.
pub fn encrypt_vector(
    values: &[u64],
    layout: &PackingLayout,
    pk: &PublicKey,
    rng: &mut RandomSource,
) -> Result<Vec<Ciphertext>, PaillierError> {
    values
        .chunks(layout.slots)
        .map(|chunk| enc(&pack(chunk, layout)?.value, pk, rng))
        .collect()
}

/// Multi-threaded [`encrypt_vector`]; chunk `i` uses child stream `i` of
/// `rng`, so output does not depend on the thread count.
pub fn encrypt_vector_par(
    values: &[u64],
    layout: &PackingLayout,
    pk: &PublicKey,
    rng: &mut RandomSource,
) -> Result<Vec<Ciphertext>, PaillierError> {
    let chunks: Vec<(usize, &[u64])> = values.chunks(layout.slots).enumerate().collect();
    let base = rng.child(u64::MAX);
    chunks
        .into_par_iter()
        .map(|(i, chunk)| {
            let mut r = base.clone().child(i as u64);
            enc(&pack(chunk, layout)?.value, pk, &mut r)
        })
        .collect()
}

/// Decrypts and unpacks `len` values, reducing each slot sum mod 2^b.
pub fn decrypt_vector(
    cts: &[Ciphertext],
    len: usize,
    layout: &PackingLayout,
    kp: &PaillierKeypair,
) -> Result<Vec<u64>, PaillierError> {
    if layout.plaintexts_for(len) != cts.len() {
        return Err(PaillierError::LengthMismatch { left: layout.plaintexts_for(len), right: cts.len() });
    }
    let mask: u128 = if layout.value_bits >= 64 { u64::MAX as u128 } else { (1u128 << layout.value_bits) - 1 };
    let mut out = Vec::with_capacity(len);
    for (i, c) in cts.iter().enumerate() {
        let count = (len - i * layout.slots).min(layout.slots);
        let packed = PackedPlaintext { layout: *layout, count, value: dec(c, kp)? };
        out.extend(unpack(&packed).into_iter().map(|s| (s & mask) as u64));
    }
    Ok(out)
}

/// Element-wise homomorphic sum of several parties' ciphertext vectors.
pub fn add_vectors(parties: &[Vec<Ciphertext>], pk: &PublicKey) -> Result<Vec<Ciphertext>, PaillierError> {
    let Some(first) = parties.first() else {
        return Ok(Vec::new());
    };
    let mut acc = first.clone();
    for other in &parties[1..] {
        if other.len() != acc.len() {
            return Err(PaillierError::LengthMismatch { left: acc.len(), right: other.len() });
        }
        for (a, c) in acc.iter_mut().zip(other) {
            *a = he_add(a, c, pk)?;
        }
    }
    Ok(acc)
}

/// Structured-text key file with decimal integers.
#[derive(Serialize, Deserialize)]
pub struct KeyFile {
    pub key_bits: u32,
    pub n: String,
    pub p: Option<String>,
    pub q: Option<String>,
}

impl PaillierKeypair {
    pub fn to_key_file(&self) -> KeyFile {
        KeyFile {
            key_bits: self.public.bits,
            n: self.public.n.to_str_radix(10),
            p: Some(self.private.p.to_str_radix(10)),
            q: Some(self.private.q.to_str_radix(10)),
        }
    }

    pub fn from_key_file(f: &KeyFile) -> Result<Self, PaillierError> {
        let parse = |s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| PaillierError::Malformed(format!("not a decimal integer: {s}")))
        };
        let n = parse(&f.n)?;
        let (Some(p), Some(q)) = (&f.p, &f.q) else {
            return Err(PaillierError::Malformed("private key file needs p and q".into()));
        };
        let (p, q) = (parse(p)?, parse(q)?);
        if &p * &q != n || p == q {
            return Err(PaillierError::Malformed("p·q does not match N".into()));
        }
        let private = PrivateKey::from_primes(p, q, &n);
        Ok(Self { public: PublicKey::from_modulus(n), private })
    }
}

/// Counts and timings of one Paillier aggregation.
#[derive(Clone, Debug, Default)]
pub struct AggregateReport {
    pub ciphertexts_per_party: usize,
    pub ledger: CostLedger,
}

/// Paillier aggregation: each party packs and encrypts its vector, an
/// aggregator without the secret key multiplies ciphertexts together, and
/// the key holders decrypt. The result equals the element-wise sum mod 2^b.
///
/// Every party decrypts the same aggregate; the decryption is performed once
/// and its measured time is charged to each party.
pub fn paillier_aggregate(
    vectors: &[RingVector],
    kp: &PaillierKeypair,
    pad: u32,
    rng: &mut RandomSource,
    bandwidth: &BandwidthModel,
) -> Result<(RingVector, AggregateReport), PaillierError> {
    let Some(first) = vectors.first() else {
        return Err(PaillierError::LengthMismatch { left: 1, right: 0 });
    };
    let modulus: RingModulus = first.modulus();
    let len = first.len();
    for v in vectors {
        if v.len() != len {
            return Err(PaillierError::LengthMismatch { left: len, right: v.len() });
        }
    }
    let layout = PackingLayout::new(modulus.bits(), pad, kp.public.bits)?;
    layout.check_headroom(vectors.len())?;
    let pk = &kp.public;
    let ct_bits = pk.ciphertext_bytes() as u64 * 8;
    let mut ledger = CostLedger::new();

    let mut uploads = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        let party = PartyId(i as u32);
        let t = Instant::now();
        let cts = encrypt_vector(v.values(), &layout, pk, rng)?;
        ledger.add_cpu(party, CostPhase::Encrypt, t.elapsed().as_secs_f64());
        ledger.add_ops(party, cts.len() as u64, 2 * cts.len() as u64);
        for _ in &cts {
            ledger.record_transfer(party, SERVER, TrafficClass::Protocol, layout.slot_width() as u64 * layout.slots as u64, ct_bits);
        }
        ledger.add_sim_comm(party, bandwidth.transfer_seconds(ct_bits * cts.len() as u64));
        uploads.push(cts);
    }

    let t = Instant::now();
    let summed = add_vectors(&uploads, pk)?;
    ledger.add_cpu(SERVER, CostPhase::Add, t.elapsed().as_secs_f64());
    ledger.add_ops(SERVER, 0, ((vectors.len() - 1) * summed.len()) as u64);

    let t = Instant::now();
    let values = decrypt_vector(&summed, len, &layout, kp)?;
    let dec_secs = t.elapsed().as_secs_f64();
    for i in 0..vectors.len() {
        let party = PartyId(i as u32);
        ledger.add_cpu(party, CostPhase::Decrypt, dec_secs);
        ledger.add_ops(party, 2 * summed.len() as u64, 4 * summed.len() as u64);
        for _ in &summed {
            ledger.record_transfer(SERVER, party, TrafficClass::Broadcast, layout.slot_width() as u64 * layout.slots as u64, ct_bits);
        }
        ledger.add_sim_comm(party, bandwidth.transfer_seconds(ct_bits * summed.len() as u64));
    }
    let sum = RingVector::from_values(modulus, values).expect("reduced mod 2^b");
    Ok((sum, AggregateReport { ciphertexts_per_party: summed.len(), ledger }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_key(seed: u64) -> PaillierKeypair {
        keygen(256, KeyMode::Test, &mut RandomSource::seeded(seed)).unwrap()
    }

    #[test]
    fn keygen_sizes_and_policy() {
        let kp = small_key(1);
        assert_eq!(kp.public.n().bits(), 256);
        assert!(matches!(keygen(256, KeyMode::Standard, &mut RandomSource::seeded(1)), Err(PaillierError::KeySize { .. })));
        assert!(matches!(keygen(257, KeyMode::Test, &mut RandomSource::seeded(1)), Err(PaillierError::KeySize { .. })));
        assert_ne!(small_key(1).public.n(), small_key(2).public.n());
    }

    #[test]
    fn primality() {
        let mut rng = RandomSource::seeded(0);
        for p in [2u32, 3, 5, 7919, 104729, 2147483647] {
            assert!(is_probable_prime(&BigUint::from(p), 20, &mut rng), "{p}");
        }
        // Carmichael numbers and a prime square
        for c in [1u64, 561, 1105, 1729, 294409, 7919 * 7919, 4] {
            assert!(!is_probable_prime(&BigUint::from(c), 20, &mut rng), "{c}");
        }
    }

    #[test]
    fn crt_matches_textbook() {
        let kp = small_key(3);
        let mut rng = RandomSource::seeded(4);
        for _ in 0..50 {
            let m = rng.gen_biguint_below(kp.public.n());
            let c = enc(&m, &kp.public, &mut rng).unwrap();
            assert_eq!(dec(&c, &kp).unwrap(), m);
            assert_eq!(dec_textbook(&c, &kp).unwrap(), m);
        }
    }

    #[test]
    fn range_and_key_checks() {
        let kp = small_key(5);
        let other = small_key(6);
        let mut rng = RandomSource::seeded(7);
        assert_eq!(enc(kp.public.n(), &kp.public, &mut rng), Err(PaillierError::PlaintextRange));
        let c = enc(&BigUint::from(3u32), &kp.public, &mut rng).unwrap();
        let d = enc(&BigUint::from(3u32), &other.public, &mut rng).unwrap();
        assert_eq!(he_add(&c, &d, &kp.public), Err(PaillierError::KeyMismatch));
        assert_eq!(dec(&d, &kp), Err(PaillierError::KeyMismatch));
    }

    #[test]
    fn ciphertext_bytes_roundtrip() {
        let kp = small_key(8);
        let c = enc(&BigUint::from(42u32), &kp.public, &mut RandomSource::seeded(1)).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(Ciphertext::from_bytes(&bytes, &kp.public).unwrap(), c);
        assert!(Ciphertext::from_bytes(&bytes[..bytes.len() - 1], &kp.public).is_err());
    }

    #[test]
    fn key_file_roundtrip() {
        let kp = small_key(9);
        let text = serde_json::to_string(&kp.to_key_file()).unwrap();
        let back = PaillierKeypair::from_key_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, kp);
        let mut bad = kp.to_key_file();
        bad.q = Some("7".into());
        assert!(PaillierKeypair::from_key_file(&bad).is_err());
    }

    #[test]
    fn layout_examples() {
        assert_eq!(PackingLayout::new(32, 15, 1024).unwrap().slots, 21);
        assert_eq!(PackingLayout::new(32, 15, 256).unwrap().slots, 5);
        assert!(PackingLayout::new(32, 15, 40).is_err());
        let l = PackingLayout::new(32, 15, 1024).unwrap();
        assert!(l.check_headroom(10).is_ok());
        assert!(l.check_headroom(1 << 15).is_err());
        assert_eq!(pack(&[0], &l).unwrap().value, BigUint::zero());
        assert!(matches!(pack(&[1u64 << 32], &l), Err(PaillierError::SlotValue { .. })));
        assert!(matches!(pack(&[0; 22], &l), Err(PaillierError::TooManySlots { .. })));
    }
}

//! Arithmetic in Z_l with l = 2^b, and the fixed-point codec that maps real
//! gradients into the ring.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingError {
    #[error("modulus bit width must be in 1..=64, got {0}")]
    InvalidBits(u32),
    #[error("modulus mismatch: 2^{left} vs 2^{right}")]
    ModulusMismatch { left: u32, right: u32 },
    #[error("value {value} does not fit in 2^{bits}")]
    OutOfRange { value: u64, bits: u32 },
    #[error("{frac_bits} fractional bits leave no integer range in a {bits}-bit ring")]
    InvalidFracBits { frac_bits: u32, bits: u32 },
    #[error("{}encoding overflow: |{value}| exceeds bound {bound}", index.map(|i| format!("component {i}: ")).unwrap_or_default())]
    Overflow { value: f64, bound: f64, index: Option<usize> },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed ring vector encoding: {0}")]
    Malformed(String),
}

/// Power-of-two ring modulus l = 2^b.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct RingModulus {
    bits: u32,
}

impl RingModulus {
    pub const DEFAULT_BITS: u32 = 32;

    pub fn new(bits: u32) -> Result<Self, RingError> {
        if bits == 0 || bits > 64 {
            return Err(RingError::InvalidBits(bits));
        }
        Ok(Self { bits })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    /// l as a wide integer (2^64 does not fit in `u64`).
    pub fn modulus(self) -> u128 {
        1u128 << self.bits
    }

    /// l − 1, usable as an AND mask.
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Serialized width of one element.
    pub fn byte_width(self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    #[inline]
    pub fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    pub fn element(self, value: u64) -> Result<RingElement, RingError> {
        if value & !self.mask() != 0 {
            return Err(RingError::OutOfRange { value, bits: self.bits });
        }
        Ok(RingElement { value, modulus: self })
    }

    fn check(self, other: RingModulus) -> Result<(), RingError> {
        if self != other {
            return Err(RingError::ModulusMismatch { left: self.bits, right: other.bits });
        }
        Ok(())
    }
}

impl Default for RingModulus {
    fn default() -> Self {
        Self { bits: Self::DEFAULT_BITS }
    }
}

impl TryFrom<u32> for RingModulus {
    type Error = RingError;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        Self::new(bits)
    }
}

impl From<RingModulus> for u32 {
    fn from(m: RingModulus) -> u32 {
        m.bits
    }
}

/// One element of Z_l; always `value < l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u64,
    modulus: RingModulus,
}

impl RingElement {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> RingModulus {
        self.modulus
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

pub fn ring_add(a: RingElement, b: RingElement, m: RingModulus) -> Result<RingElement, RingError> {
    m.check(a.modulus)?;
    m.check(b.modulus)?;
    Ok(RingElement { value: m.add(a.value, b.value), modulus: m })
}

pub fn ring_sub(a: RingElement, b: RingElement, m: RingModulus) -> Result<RingElement, RingError> {
    m.check(a.modulus)?;
    m.check(b.modulus)?;
    Ok(RingElement { value: m.sub(a.value, b.value), modulus: m })
}

/// Uniform draw from [0, l). Masking a uniform 64-bit word is exact because l
/// divides 2^64.
pub fn uniform_random<R: RngCore + ?Sized>(m: RingModulus, rng: &mut R) -> RingElement {
    RingElement { value: m.reduce(rng.next_u64()), modulus: m }
}

/// Fixed-length vector of ring elements sharing one modulus.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RingVector {
    modulus: RingModulus,
    elems: Vec<u64>,
}

impl RingVector {
    pub fn zeros(modulus: RingModulus, len: usize) -> Self {
        Self { modulus, elems: vec![0; len] }
    }

    pub fn from_values(modulus: RingModulus, values: Vec<u64>) -> Result<Self, RingError> {
        if let Some(&bad) = values.iter().find(|&&v| v & !modulus.mask() != 0) {
            return Err(RingError::OutOfRange { value: bad, bits: modulus.bits });
        }
        Ok(Self { modulus, elems: values })
    }

    /// Reduces every value mod l instead of rejecting out-of-range input.
    pub fn from_reduced(modulus: RingModulus, values: impl IntoIterator<Item = u64>) -> Self {
        Self { modulus, elems: values.into_iter().map(|v| modulus.reduce(v)).collect() }
    }

    pub fn random<R: RngCore + ?Sized>(modulus: RingModulus, len: usize, rng: &mut R) -> Self {
        Self { modulus, elems: (0..len).map(|_| modulus.reduce(rng.next_u64())).collect() }
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.elems
    }

    pub fn into_values(self) -> Vec<u64> {
        self.elems
    }

    pub fn get(&self, i: usize) -> Option<RingElement> {
        self.elems.get(i).map(|&value| RingElement { value, modulus: self.modulus })
    }

    /// Payload size counted in ring bits, b per element.
    pub fn payload_bits(&self) -> u64 {
        self.elems.len() as u64 * self.modulus.bits as u64
    }

    fn check_shape(&self, other: &RingVector) -> Result<(), RingError> {
        self.modulus.check(other.modulus)?;
        if self.len() != other.len() {
            return Err(RingError::LengthMismatch { left: self.len(), right: other.len() });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &RingVector) -> Result<(), RingError> {
        self.check_shape(other)?;
        let m = self.modulus;
        for (a, &b) in self.elems.iter_mut().zip(&other.elems) {
            *a = m.add(*a, b);
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &RingVector) -> Result<(), RingError> {
        self.check_shape(other)?;
        let m = self.modulus;
        for (a, &b) in self.elems.iter_mut().zip(&other.elems) {
            *a = m.sub(*a, b);
        }
        Ok(())
    }

    pub fn add(&self, other: &RingVector) -> Result<RingVector, RingError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &RingVector) -> Result<RingVector, RingError> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    /// Element bytes only: little-endian, `byte_width` bytes each.
    pub fn body_bytes(&self) -> Vec<u8> {
        let w = self.modulus.byte_width();
        let mut out = Vec::with_capacity(self.elems.len() * w);
        for v in &self.elems {
            out.extend_from_slice(&v.to_le_bytes()[..w]);
        }
        out
    }

    pub fn from_body_bytes(modulus: RingModulus, bytes: &[u8]) -> Result<Self, RingError> {
        let w = modulus.byte_width();
        if !bytes.len().is_multiple_of(w) {
            return Err(RingError::Malformed(format!(
                "{} bytes is not a multiple of element width {w}",
                bytes.len()
            )));
        }
        let mut elems = Vec::with_capacity(bytes.len() / w);
        for chunk in bytes.chunks_exact(w) {
            let mut buf = [0u8; 8];
            buf[..w].copy_from_slice(chunk);
            let v = u64::from_le_bytes(buf);
            if v & !modulus.mask() != 0 {
                return Err(RingError::OutOfRange { value: v, bits: modulus.bits });
            }
            elems.push(v);
        }
        Ok(Self { modulus, elems })
    }

    /// 8-byte little-endian element count followed by the element bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.elems.len() as u64).to_le_bytes().to_vec();
        out.extend(self.body_bytes());
        out
    }

    pub fn from_bytes(modulus: RingModulus, bytes: &[u8]) -> Result<Self, RingError> {
        if bytes.len() < 8 {
            return Err(RingError::Malformed("missing length prefix".into()));
        }
        let (head, body) = bytes.split_at(8);
        let len = u64::from_le_bytes(head.try_into().expect("8 bytes")) as usize;
        let expected = len
            .checked_mul(modulus.byte_width())
            .ok_or_else(|| RingError::Malformed("length prefix overflows".into()))?;
        if body.len() != expected {
            return Err(RingError::Malformed(format!(
                "length prefix says {len} elements, body has {} bytes",
                body.len()
            )));
        }
        Self::from_body_bytes(modulus, body)
    }
}

/// Two's-complement fixed-point embedding of reals into Z_l.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub modulus: RingModulus,
    pub frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { modulus: RingModulus::default(), frac_bits: 16 }
    }
}

impl FixedPointCodec {
    pub fn new(modulus: RingModulus, frac_bits: u32) -> Result<Self, RingError> {
        if frac_bits >= modulus.bits() {
            return Err(RingError::InvalidFracBits { frac_bits, bits: modulus.bits() });
        }
        Ok(Self { modulus, frac_bits })
    }

    fn scale(&self) -> f64 {
        2f64.powi(self.frac_bits as i32)
    }

    /// Largest encodable magnitude M = 2^(b−1−f) − 2^(−f).
    pub fn magnitude_bound(&self) -> f64 {
        let b = self.modulus.bits() as i32;
        let f = self.frac_bits as i32;
        2f64.powi(b - 1 - f) - 2f64.powi(-f)
    }

    /// Worst-case rounding error of a single encode/decode.
    pub fn resolution(&self) -> f64 {
        2f64.powi(-(self.frac_bits as i32) - 1)
    }

    fn encode_raw(&self, x: f64, index: Option<usize>) -> Result<u64, RingError> {
        let bound = self.magnitude_bound();
        if !x.is_finite() || x.abs() > bound {
            return Err(RingError::Overflow { value: x, bound, index });
        }
        let k = (x * self.scale()).round() as i128;
        let l = self.modulus.modulus() as i128;
        Ok(k.rem_euclid(l) as u64)
    }

    fn decode_raw(&self, v: u64) -> f64 {
        let l = self.modulus.modulus() as i128;
        let v = v as i128;
        let centered = if v >= l / 2 { v - l } else { v };
        centered as f64 / self.scale()
    }

    pub fn encode(&self, x: f64) -> Result<RingElement, RingError> {
        let value = self.encode_raw(x, None)?;
        Ok(RingElement { value, modulus: self.modulus })
    }

    pub fn decode(&self, e: RingElement) -> f64 {
        self.decode_raw(e.value)
    }

    pub fn encode_vector(&self, xs: &[f64]) -> Result<RingVector, RingError> {
        let elems = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| self.encode_raw(x, Some(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RingVector { modulus: self.modulus, elems })
    }

    pub fn decode_vector(&self, v: &RingVector) -> Vec<f64> {
        v.elems.iter().map(|&e| self.decode_raw(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;

    fn m(bits: u32) -> RingModulus {
        RingModulus::new(bits).unwrap()
    }

    #[test]
    fn add_examples() {
        let m5 = m(5);
        let r = ring_add(m5.element(3).unwrap(), m5.element(5).unwrap(), m5).unwrap();
        assert_eq!(r.value(), 8);
        let r = ring_add(m5.element(30).unwrap(), m5.element(5).unwrap(), m5).unwrap();
        assert_eq!(r.value(), 3);

        let m32 = m(32);
        let mut rng = RandomSource::seeded(1);
        let zero = m32.element(0).unwrap();
        for _ in 0..100 {
            let x = uniform_random(m32, &mut rng);
            assert_eq!(ring_add(x, zero, m32).unwrap(), x);
        }
    }

    #[test]
    fn sub_examples() {
        let m5 = m(5);
        let r = ring_sub(m5.element(3).unwrap(), m5.element(5).unwrap(), m5).unwrap();
        assert_eq!(r.value(), 30);

        let m32 = m(32);
        let mut rng = RandomSource::seeded(2);
        for _ in 0..1000 {
            let a = uniform_random(m32, &mut rng);
            let b = uniform_random(m32, &mut rng);
            assert_eq!(ring_sub(a, a, m32).unwrap().value(), 0);
            assert_eq!(ring_sub(ring_add(a, b, m32).unwrap(), b, m32).unwrap(), a);
        }
    }

    #[test]
    fn mismatched_moduli_rejected() {
        let a = m(5).element(1).unwrap();
        let b = m(6).element(1).unwrap();
        assert!(matches!(ring_add(a, b, m(5)), Err(RingError::ModulusMismatch { .. })));
        assert!(matches!(ring_sub(a, b, m(6)), Err(RingError::ModulusMismatch { .. })));
    }

    #[test]
    fn modulus_bounds() {
        assert!(RingModulus::new(0).is_err());
        assert!(RingModulus::new(65).is_err());
        let m64 = m(64);
        assert_eq!(m64.add(u64::MAX, 1), 0);
        assert_eq!(m(8).element(256), Err(RingError::OutOfRange { value: 256, bits: 8 }));
    }

    #[test]
    fn random_draws_in_range_and_replayable() {
        let m8 = m(8);
        let mut a = RandomSource::seeded(9);
        let mut b = RandomSource::seeded(9);
        for _ in 0..1000 {
            let x = uniform_random(m8, &mut a);
            assert!(x.value() < 256);
            assert_eq!(x, uniform_random(m8, &mut b));
        }
    }

    #[test]
    fn encode_examples() {
        let c = FixedPointCodec::default();
        assert_eq!(c.encode(0.0).unwrap().value(), 0);
        assert_eq!(c.encode(1.5).unwrap().value(), 98304);
        assert_eq!(c.encode(-1.0).unwrap().value(), 4294901760);
        assert_eq!(c.decode(c.modulus.element(0).unwrap()), 0.0);
        assert_eq!(c.decode(c.modulus.element(4294967296 - 65536).unwrap()), -1.0);
    }

    #[test]
    fn encode_overflow() {
        let c = FixedPointCodec::default();
        let bound = c.magnitude_bound();
        assert_eq!(bound, 32768.0 - 1.0 / 65536.0);
        assert!(c.encode(bound).is_ok());
        assert!(c.encode(-bound).is_ok());
        assert!(matches!(c.encode(32768.0), Err(RingError::Overflow { index: None, .. })));
        assert!(c.encode(f64::NAN).is_err());
        let err = c.encode_vector(&[0.0, 1.0, 1e9]).unwrap_err();
        assert!(matches!(err, RingError::Overflow { index: Some(2), .. }));
    }

    #[test]
    fn vector_examples() {
        let c = FixedPointCodec::default();
        let v = c.encode_vector(&[0.0, 1.5, -1.0]).unwrap();
        assert_eq!(v.values(), &[0, 98304, 4294901760]);
        assert!(c.encode_vector(&[]).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_within_half_ulp() {
        let c = FixedPointCodec::default();
        let mut rng = RandomSource::seeded(11);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen_range(-100.0..100.0)).collect();
        for x in &xs {
            let y = c.decode(c.encode(*x).unwrap());
            assert!((y - x).abs() <= 2f64.powi(-17));
        }
    }

    #[test]
    fn grid_is_exact() {
        let c = FixedPointCodec::new(m(16), 4).unwrap();
        let bound = c.magnitude_bound();
        let mut k = -(bound * 16.0) as i64;
        while (k as f64) / 16.0 <= bound {
            let x = k as f64 / 16.0;
            assert_eq!(c.decode(c.encode(x).unwrap()), x);
            k += 1;
        }
    }

    #[test]
    fn frac_bits_must_leave_sign_bit() {
        assert!(FixedPointCodec::new(m(8), 8).is_err());
        assert_eq!(FixedPointCodec::new(m(5), 0).unwrap().magnitude_bound(), 15.0);
    }

    #[test]
    fn serialization_layout() {
        let v = RingVector::from_values(m(32), vec![1, 0x0102_0304]).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..], &[4, 3, 2, 1]);
        assert_eq!(RingVector::from_bytes(m(32), &bytes).unwrap(), v);
        assert!(RingVector::from_bytes(m(32), &bytes[..11]).is_err());
        // 5-bit ring: one byte per element, value must stay below 32
        assert!(RingVector::from_body_bytes(m(5), &[40]).is_err());
    }
}

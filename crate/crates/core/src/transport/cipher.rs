//! Pairwise symmetric channel encryption.
//!
//! `Aes128Ecb` exists to match an ECB-mode benchmark configuration. ECB leaks
//! equality of plaintext blocks and provides no integrity, so it is not a
//! secure channel for structured data; use `Aes128Aead` (AES-128-GCM) for
//! anything real.

use std::collections::BTreeMap;
use std::fmt;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::protocols::PartyId;

const BLOCK: usize = 16;
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cipher {
    None,
    #[serde(rename = "ecb")]
    Aes128Ecb,
    #[serde(rename = "aead")]
    Aes128Aead,
}

impl Cipher {
    /// Ciphertext length for a plaintext of `len` bytes.
    pub fn ciphertext_len(self, len: usize) -> usize {
        match self {
            Cipher::None => len,
            // PKCS#7 always adds at least one byte
            Cipher::Aes128Ecb => (len / BLOCK + 1) * BLOCK,
            Cipher::Aes128Aead => NONCE_LEN + len + TAG_LEN,
        }
    }
}

impl fmt::Display for Cipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cipher::None => "none",
            Cipher::Aes128Ecb => "ecb",
            Cipher::Aes128Aead => "aead",
        })
    }
}

impl std::str::FromStr for Cipher {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Cipher::None),
            "ecb" | "aes128_ecb" => Ok(Cipher::Aes128Ecb),
            "aead" | "aes128_aead" | "gcm" => Ok(Cipher::Aes128Aead),
            other => Err(format!("unknown cipher '{other}'")),
        }
    }
}

/// Channel parameters shared by all parties of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub cipher: Cipher,
    /// `Cipher::None` is only accepted when this is set.
    pub simulation: bool,
}

impl ChannelConfig {
    pub fn simulated(cipher: Cipher) -> Self {
        Self { cipher, simulation: true }
    }

    pub fn real(cipher: Cipher) -> Self {
        Self { cipher, simulation: false }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.cipher == Cipher::None && !self.simulation {
            return Err(TransportError::Config("unencrypted channels are only allowed in simulation".into()));
        }
        Ok(())
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::simulated(Cipher::Aes128Aead)
    }
}

/// 128-bit pre-shared key for one ordered pair.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct ChannelKey(pub [u8; 16]);

impl fmt::Debug for ChannelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChannelKey(..)")
    }
}

/// Pre-shared keys, one per ordered pair of parties, distributed out of band.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyStore {
    keys: BTreeMap<(PartyId, PartyId), ChannelKey>,
}

#[derive(Serialize, Deserialize)]
struct KeyFileEntry {
    from: u32,
    to: u32,
    key: String,
}

impl KeyStore {
    /// Fresh random keys for every ordered pair among `n` parties.
    pub fn generate<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut keys = BTreeMap::new();
        for a in 0..n as u32 {
            for b in 0..n as u32 {
                if a != b {
                    let mut k = [0u8; 16];
                    rng.fill_bytes(&mut k);
                    keys.insert((PartyId(a), PartyId(b)), ChannelKey(k));
                }
            }
        }
        Self { keys }
    }

    pub fn insert(&mut self, from: PartyId, to: PartyId, key: ChannelKey) {
        self.keys.insert((from, to), key);
    }

    pub fn get(&self, from: PartyId, to: PartyId) -> Option<ChannelKey> {
        self.keys.get(&(from, to)).copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// JSON list of `{from, to, key}` with hex-encoded keys.
    pub fn to_json(&self) -> String {
        let entries: Vec<KeyFileEntry> = self
            .keys
            .iter()
            .map(|((f, t), k)| KeyFileEntry { from: f.0, to: t.0, key: hex::encode(k.0) })
            .collect();
        serde_json::to_string_pretty(&entries).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, TransportError> {
        let entries: Vec<KeyFileEntry> =
            serde_json::from_str(text).map_err(|e| TransportError::Config(format!("key file: {e}")))?;
        let mut store = KeyStore::default();
        for e in entries {
            let raw = hex::decode(&e.key).map_err(|e| TransportError::Config(format!("key file: {e}")))?;
            let key: [u8; 16] = raw
                .try_into()
                .map_err(|_| TransportError::Config(format!("key for {}->{} is not 128 bits", e.from, e.to)))?;
            store.insert(PartyId(e.from), PartyId(e.to), ChannelKey(key));
        }
        Ok(store)
    }
}

fn pkcs7_pad(data: &[u8]) -> Vec<u8> {
    let pad = BLOCK - data.len() % BLOCK;
    let mut out = Vec::with_capacity(data.len() + pad);
    out.extend_from_slice(data);
    out.resize(data.len() + pad, pad as u8);
    out
}

fn nonce_bytes(counter: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[..8].copy_from_slice(&counter.to_le_bytes());
    n
}

/// Encrypts a payload. `counter` must be unique per key (AEAD nonce); `aad`
/// is authenticated but not encrypted.
pub fn encrypt_payload(plaintext: &[u8], cipher: Cipher, key: &ChannelKey, counter: u64, aad: &[u8]) -> Vec<u8> {
    match cipher {
        Cipher::None => plaintext.to_vec(),
        Cipher::Aes128Ecb => {
            let aes = Aes128::new(GenericArray::from_slice(&key.0));
            let mut buf = pkcs7_pad(plaintext);
            for block in buf.chunks_exact_mut(BLOCK) {
                aes.encrypt_block(GenericArray::from_mut_slice(block));
            }
            buf
        }
        Cipher::Aes128Aead => {
            let aead = Aes128Gcm::new(GenericArray::from_slice(&key.0));
            let nonce = nonce_bytes(counter);
            let ct = aead
                .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
                .expect("AES-GCM encryption cannot fail for in-range lengths");
            let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
            out.extend_from_slice(&nonce);
            out.extend(ct);
            out
        }
    }
}

pub fn decrypt_payload(ciphertext: &[u8], cipher: Cipher, key: &ChannelKey, aad: &[u8]) -> Result<Vec<u8>, TransportError> {
    match cipher {
        Cipher::None => Ok(ciphertext.to_vec()),
        Cipher::Aes128Ecb => {
            if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK) {
                return Err(TransportError::Channel("ECB ciphertext is not a whole number of blocks".into()));
            }
            let aes = Aes128::new(GenericArray::from_slice(&key.0));
            let mut buf = ciphertext.to_vec();
            for block in buf.chunks_exact_mut(BLOCK) {
                aes.decrypt_block(GenericArray::from_mut_slice(block));
            }
            let pad = *buf.last().expect("non-empty") as usize;
            if pad == 0 || pad > BLOCK || !buf[buf.len() - pad..].iter().all(|&b| b as usize == pad) {
                return Err(TransportError::Channel("bad ECB padding".into()));
            }
            buf.truncate(buf.len() - pad);
            Ok(buf)
        }
        Cipher::Aes128Aead => {
            if ciphertext.len() < NONCE_LEN + TAG_LEN {
                return Err(TransportError::Authentication);
            }
            let aead = Aes128Gcm::new(GenericArray::from_slice(&key.0));
            let (nonce, ct) = ciphertext.split_at(NONCE_LEN);
            aead.decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad })
                .map_err(|_| TransportError::Authentication)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;

    fn key(b: u8) -> ChannelKey {
        ChannelKey([b; 16])
    }

    #[test]
    fn roundtrip_all_ciphers() {
        let mut rng = RandomSource::seeded(4);
        for (i, cipher) in [Cipher::None, Cipher::Aes128Ecb, Cipher::Aes128Aead].into_iter().enumerate() {
            for trial in 0..50 {
                let len = if trial == 0 { 0 } else { rng.gen_range(0..4096) };
                let mut msg = vec![0u8; len];
                rng.fill_bytes(&mut msg);
                let ct = encrypt_payload(&msg, cipher, &key(7), trial, b"hdr");
                assert_eq!(ct.len(), cipher.ciphertext_len(len), "cipher {i}");
                assert_eq!(decrypt_payload(&ct, cipher, &key(7), b"hdr").unwrap(), msg);
            }
        }
    }

    #[test]
    fn ecb_lengths_and_block_equality() {
        assert_eq!(Cipher::Aes128Ecb.ciphertext_len(0), 16);
        assert_eq!(Cipher::Aes128Ecb.ciphertext_len(15), 16);
        assert_eq!(Cipher::Aes128Ecb.ciphertext_len(16), 32);
        let msg = [0x42u8; 32];
        let ct = encrypt_payload(&msg, Cipher::Aes128Ecb, &key(1), 0, &[]);
        assert_eq!(ct[..16], ct[16..32]);
        assert_ne!(ct[..16], msg[..16]);
    }

    #[test]
    fn aead_rejects_wrong_key_and_aad() {
        let ct = encrypt_payload(b"gradient", Cipher::Aes128Aead, &key(1), 3, b"a");
        assert_eq!(decrypt_payload(&ct, Cipher::Aes128Aead, &key(2), b"a"), Err(TransportError::Authentication));
        assert_eq!(decrypt_payload(&ct, Cipher::Aes128Aead, &key(1), b"b"), Err(TransportError::Authentication));
        assert!(decrypt_payload(&ct[..10], Cipher::Aes128Aead, &key(1), b"a").is_err());
    }

    #[test]
    fn none_cipher_needs_simulation() {
        assert!(ChannelConfig::real(Cipher::None).validate().is_err());
        assert!(ChannelConfig::simulated(Cipher::None).validate().is_ok());
        assert!(ChannelConfig::real(Cipher::Aes128Ecb).validate().is_ok());
    }

    #[test]
    fn keystore_json_roundtrip() {
        let ks = KeyStore::generate(3, &mut RandomSource::seeded(1));
        assert_eq!(ks.len(), 6);
        assert_eq!(KeyStore::from_json(&ks.to_json()).unwrap(), ks);
        assert!(KeyStore::from_json(r#"[{"from":0,"to":1,"key":"00ff"}]"#).is_err());
    }
}

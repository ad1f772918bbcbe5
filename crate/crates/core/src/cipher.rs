//! Field-level triple encryption of record identities and the digest primitives
//! used by the ledger and the trust-history check chain.
//!
//! Identities are encrypted with three-key DES in encrypt-decrypt-encrypt order,
//! `C = E_k3(D_k2(E_k1(P)))`, over PKCS#7-padded 8-octet blocks. Encryption is
//! deterministic so the same identity always maps to the same token; the token is
//! what the rest of the system uses as the entity's public key.

use std::fmt;
use std::str::FromStr;

use des::cipher::generic_array::GenericArray;
use des::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use des::Des;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const BLOCK_LEN: usize = 8;
pub const DIGEST_LEN: usize = 32;

/// Environment variable consulted for a key set when none is given on the command line.
pub const KEYS_ENV: &str = "TBTM_KEYS";

#[derive(Debug, Error, PartialEq)]
pub enum CipherError {
    #[error("key {index} must be 8 octets (16 hex digits), got {len}")]
    KeyLength { index: usize, len: usize },
    #[error("key {index} is not valid hex: {source}")]
    KeyHex {
        index: usize,
        #[source]
        source: hex::FromHexError,
    },
    #[error("expected three comma-separated keys, got {0}")]
    KeyCount(usize),
    #[error("keys are not pairwise distinct; refusing degenerate key set")]
    DegenerateKeys,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("ciphertext length {0} is not a positive multiple of the block size")]
    BlockAlignment(usize),
    #[error("invalid padding after decryption (tampered token or wrong keys)")]
    BadPadding,
    #[error("token is not valid hex: {0}")]
    TokenHex(#[from] hex::FromHexError),
}

/// Three independent DES keys (k1, k2, k3).
#[derive(Clone)]
pub struct KeySet {
    raw: [[u8; 8]; 3],
    ciphers: [Des; 3],
}

impl KeySet {
    /// Builds a key set, rejecting repeated keys.
    pub fn new(k1: [u8; 8], k2: [u8; 8], k3: [u8; 8]) -> Result<Self, CipherError> {
        if k1 == k2 || k2 == k3 || k1 == k3 {
            return Err(CipherError::DegenerateKeys);
        }
        Ok(Self::build([k1, k2, k3]))
    }

    /// Builds a key set that may repeat keys. With all three equal the scheme
    /// collapses to single DES, so callers are expected to warn.
    pub fn new_allow_degenerate(k1: [u8; 8], k2: [u8; 8], k3: [u8; 8]) -> Self {
        Self::build([k1, k2, k3])
    }

    fn build(raw: [[u8; 8]; 3]) -> Self {
        let ciphers = raw.map(|k| Des::new(GenericArray::from_slice(&k)));
        Self { raw, ciphers }
    }

    /// Parses `k1hex,k2hex,k3hex`.
    pub fn from_hex_list(list: &str) -> Result<Self, CipherError> {
        let raw = parse_key_list(list)?;
        Self::new(raw[0], raw[1], raw[2])
    }

    /// Like [`KeySet::from_hex_list`], but accepts repeated keys.
    pub fn from_hex_list_allow_degenerate(list: &str) -> Result<Self, CipherError> {
        let raw = parse_key_list(list)?;
        Ok(Self::new_allow_degenerate(raw[0], raw[1], raw[2]))
    }

    /// Reads [`KEYS_ENV`]; `Ok(None)` when it is unset.
    pub fn from_env() -> Result<Option<Self>, CipherError> {
        match std::env::var(KEYS_ENV) {
            Ok(v) => Self::from_hex_list(&v).map(Some),
            Err(_) => Ok(None),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        let [a, b, c] = &self.raw;
        a == b || b == c || a == c
    }

    pub fn to_hex_list(&self) -> String {
        self.raw.iter().map(hex::encode).collect::<Vec<_>>().join(",")
    }

    /// Encrypts one block with k1 alone, exposed for known-answer checks.
    pub fn inner_encrypt_block(&self, block: [u8; 8]) -> [u8; 8] {
        let mut b = GenericArray::clone_from_slice(&block);
        self.ciphers[0].encrypt_block(&mut b);
        b.into()
    }

    fn ede_encrypt(&self, block: &mut [u8]) {
        let b = GenericArray::from_mut_slice(block);
        self.ciphers[0].encrypt_block(b);
        self.ciphers[1].decrypt_block(b);
        self.ciphers[2].encrypt_block(b);
    }

    fn ede_decrypt(&self, block: &mut [u8]) {
        let b = GenericArray::from_mut_slice(block);
        self.ciphers[2].decrypt_block(b);
        self.ciphers[1].encrypt_block(b);
        self.ciphers[0].decrypt_block(b);
    }
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeySet(<redacted>)")
    }
}

fn parse_key_list(list: &str) -> Result<[[u8; 8]; 3], CipherError> {
    let parts: Vec<&str> = list.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CipherError::KeyCount(parts.len()));
    }
    let mut out = [[0u8; 8]; 3];
    for (index, part) in parts.iter().enumerate() {
        let bytes = hex::decode(part).map_err(|source| CipherError::KeyHex { index: index + 1, source })?;
        if bytes.len() != 8 {
            return Err(CipherError::KeyLength { index: index + 1, len: bytes.len() });
        }
        out[index].copy_from_slice(&bytes);
    }
    Ok(out)
}

/// Ciphertext of one identity field. Serialized as lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CipherToken(Vec<u8>);

impl CipherToken {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, CipherError> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(BLOCK_LEN) {
            return Err(CipherError::BlockAlignment(bytes.len()));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    /// Raw mutable access; only useful for tamper simulations.
    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }
}

impl FromStr for CipherToken {
    type Err = CipherError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_bytes(hex::decode(s)?)
    }
}

impl fmt::Display for CipherToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CipherToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CipherToken({})", self.to_hex())
    }
}

impl Serialize for CipherToken {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CipherToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Encrypts a non-empty plaintext field.
pub fn encrypt_field(plaintext: &[u8], keys: &KeySet) -> Result<CipherToken, CipherError> {
    if plaintext.is_empty() {
        return Err(CipherError::EmptyPlaintext);
    }
    let pad = BLOCK_LEN - plaintext.len() % BLOCK_LEN;
    let mut buf = Vec::with_capacity(plaintext.len() + pad);
    buf.extend_from_slice(plaintext);
    buf.resize(plaintext.len() + pad, pad as u8);
    for block in buf.chunks_exact_mut(BLOCK_LEN) {
        keys.ede_encrypt(block);
    }
    Ok(CipherToken(buf))
}

/// Inverse of [`encrypt_field`]. Fails on bad padding, which is what a wrong
/// key set or a modified token usually produces.
pub fn decrypt_field(token: &CipherToken, keys: &KeySet) -> Result<Vec<u8>, CipherError> {
    let mut buf = token.0.clone();
    if buf.is_empty() || !buf.len().is_multiple_of(BLOCK_LEN) {
        return Err(CipherError::BlockAlignment(buf.len()));
    }
    for block in buf.chunks_exact_mut(BLOCK_LEN) {
        keys.ede_decrypt(block);
    }
    let pad = *buf.last().expect("non-empty") as usize;
    if pad == 0 || pad > BLOCK_LEN || buf[buf.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(CipherError::BadPadding);
    }
    buf.truncate(buf.len() - pad);
    Ok(buf)
}

/// 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Digest of two digests laid end to end.
pub fn digest_pair(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Canonical text of a trust value for hashing: twelve fractional digits,
/// ties to even, negative zero folded into zero.
pub fn encode_trust(value: f64) -> String {
    let s = format!("{value:.12}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

pub fn trust_digest(value: f64) -> Digest {
    digest(encode_trust(value).as_bytes())
}

/// Advances a trust-history check value by one entry:
/// `digest(prev || digest(encode(new_trust)))`.
pub fn chain_digest(prev: &Digest, new_trust: f64) -> Digest {
    digest_pair(prev, &trust_digest(new_trust))
}

/// Check value of a whole history; `None` for an empty one.
pub fn chain_history(history: &[f64]) -> Option<Digest> {
    let (first, rest) = history.split_first()?;
    Some(rest.iter().fold(trust_digest(*first), |acc, &t| chain_digest(&acc, t)))
}

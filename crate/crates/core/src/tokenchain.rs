//! Append-only ledger of encrypted access service records.
//!
//! Records are encrypted field-wise, grouped into blocks, committed under a
//! binary Merkle root and chained through the previous header's digest. Each
//! header must carry the smallest nonce, searched upward from zero, whose header
//! digest has at least `difficulty` leading zero bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{digest, digest_pair, encrypt_field, CipherError, CipherToken, Digest, KeySet};

/// Upper bound on difficulty bits; anything above this is not desk-scale.
pub const MAX_DIFFICULTY: u32 = 32;
pub const DEFAULT_BLOCK_SIZE: usize = 100;
pub const DEFAULT_DIFFICULTY: u32 = 8;

/// Sentinel identity for records without a distinct service.
pub const NULL_SERVICE: &str = "NULL";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("cannot build a Merkle root over zero records")]
    EmptyRecords,
    #[error("difficulty {0} exceeds the supported maximum of {MAX_DIFFICULTY} bits")]
    DifficultyTooHigh(u32),
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("nonce space exhausted without meeting difficulty {0}")]
    NonceExhausted(u32),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("ledger failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error("ledger file line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One plaintext interaction `(s, o, e, score)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessServiceRecord {
    pub s: String,
    pub o: String,
    pub e: String,
    pub score: f64,
    pub s_max: f64,
}

impl AccessServiceRecord {
    pub fn new(s: impl Into<String>, o: impl Into<String>, e: impl Into<String>, score: f64, s_max: f64) -> Self {
        Self { s: s.into(), o: o.into(), e: e.into(), score, s_max }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.s.is_empty() || self.o.is_empty() || self.e.is_empty() {
            return Err("identities must be non-empty".into());
        }
        validate_score(self.score, self.s_max)
    }

    pub fn encrypt(&self, keys: &KeySet) -> Result<EncryptedRecord, CipherError> {
        Ok(EncryptedRecord {
            cs: encrypt_field(self.s.as_bytes(), keys)?,
            co: encrypt_field(self.o.as_bytes(), keys)?,
            ce: encrypt_field(self.e.as_bytes(), keys)?,
            score: self.score,
            s_max: self.s_max,
        })
    }
}

pub(crate) fn validate_score(score: f64, s_max: f64) -> Result<(), String> {
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(format!("s_max must be positive, got {s_max}"));
    }
    if !(0.0..=s_max).contains(&score) {
        return Err(format!("score {score} outside [0, {s_max}]"));
    }
    Ok(())
}

/// Ledger payload: encrypted identities with the score left in the clear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedRecord {
    pub cs: CipherToken,
    pub co: CipherToken,
    pub ce: CipherToken,
    pub score: f64,
    pub s_max: f64,
}

impl EncryptedRecord {
    /// `cs|co|ce|score|s_max`. Reals use the shortest round-trip rendering so
    /// every bit of the stored value is committed.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        format!(
            "{}|{}|{}|{}|{}",
            self.cs.to_hex(),
            self.co.to_hex(),
            self.ce.to_hex(),
            render_real(self.score),
            render_real(self.s_max)
        )
        .into_bytes()
    }

    pub fn leaf(&self) -> Digest {
        digest(&self.canonical_bytes())
    }
}

fn render_real(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub id: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub nonce: u64,
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        digest(self.preimage(self.nonce).as_bytes())
    }

    fn preimage(&self, nonce: u64) -> String {
        format!("{}|{}|{}|{}|{}", self.id, self.prev_hash, self.merkle_root, nonce, self.timestamp)
    }
}

/// On-disk layout is flat: header fields and `records` side by side on one line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    #[serde(flatten)]
    pub header: BlockHeader,
    pub records: Vec<EncryptedRecord>,
}

/// Source of block timestamps.
pub trait Clock {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

/// Binary Merkle root over record leaves; an odd node is paired with itself.
pub fn merkle_root(records: &[EncryptedRecord]) -> Result<Digest, LedgerError> {
    if records.is_empty() {
        return Err(LedgerError::EmptyRecords);
    }
    let mut level: Vec<Digest> = records.iter().map(EncryptedRecord::leaf).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| digest_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
    }
    Ok(level[0])
}

/// Mines a block on top of `prev` (or as block 0 when `None`).
pub fn mine_block(
    pending: Vec<EncryptedRecord>,
    prev: Option<&BlockHeader>,
    difficulty: u32,
    clock: &dyn Clock,
) -> Result<Block, LedgerError> {
    mine_block_bounded(pending, prev, difficulty, clock, u64::MAX)
}

pub(crate) fn mine_block_bounded(
    pending: Vec<EncryptedRecord>,
    prev: Option<&BlockHeader>,
    difficulty: u32,
    clock: &dyn Clock,
    max_nonce: u64,
) -> Result<Block, LedgerError> {
    if difficulty > MAX_DIFFICULTY {
        return Err(LedgerError::DifficultyTooHigh(difficulty));
    }
    let merkle_root = merkle_root(&pending)?;
    let (id, prev_hash) = match prev {
        Some(h) => (h.id + 1, h.digest()),
        None => (0, Digest::ZERO),
    };
    let mut header = BlockHeader { id, prev_hash, merkle_root, nonce: 0, timestamp: clock.now() };
    header.nonce = search_nonce(&header, difficulty, 0, max_nonce).ok_or(LedgerError::NonceExhausted(difficulty))?;
    Ok(Block { header, records: pending })
}

fn search_nonce(header: &BlockHeader, difficulty: u32, from: u64, to_inclusive: u64) -> Option<u64> {
    (from..=to_inclusive).find(|&n| digest(header.preimage(n).as_bytes()).leading_zero_bits() >= difficulty)
}

/// Per-block outcome of [`Ledger::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCheck {
    pub id: u64,
    pub position: usize,
    pub linkage_ok: bool,
    pub merkle_ok: bool,
    pub difficulty_ok: bool,
}

impl BlockCheck {
    pub fn ok(&self) -> bool {
        self.linkage_ok && self.merkle_ok && self.difficulty_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub blocks: Vec<BlockCheck>,
}

impl ValidationReport {
    pub fn valid(&self) -> bool {
        self.blocks.iter().all(BlockCheck::ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| !b.ok())
    }

    pub fn summary(&self) -> String {
        let bad: Vec<String> = self
            .failures()
            .map(|b| {
                let mut what = Vec::new();
                if !b.linkage_ok {
                    what.push("linkage");
                }
                if !b.merkle_ok {
                    what.push("merkle");
                }
                if !b.difficulty_ok {
                    what.push("difficulty");
                }
                format!("block {}: {}", b.position, what.join("+"))
            })
            .collect();
        if bad.is_empty() {
            format!("{} blocks valid", self.blocks.len())
        } else {
            bad.join("; ")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    blocks: Vec<Block>,
    difficulty: u32,
}

impl Ledger {
    pub fn new(difficulty: u32) -> Result<Self, LedgerError> {
        if difficulty > MAX_DIFFICULTY {
            return Err(LedgerError::DifficultyTooHigh(difficulty));
        }
        Ok(Self { blocks: Vec::new(), difficulty })
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Raw mutable access for tamper simulations; bypasses every invariant.
    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.blocks.iter().map(|b| b.records.len()).sum()
    }

    /// Encrypts `records`, splits them into blocks of at most `block_size` and
    /// mines each block onto the tip. Returns the number of blocks added.
    pub fn append_records(
        &mut self,
        records: &[AccessServiceRecord],
        keys: &KeySet,
        block_size: usize,
        clock: &dyn Clock,
    ) -> Result<usize, LedgerError> {
        if block_size == 0 {
            return Err(LedgerError::ZeroBlockSize);
        }
        let mut encrypted = Vec::with_capacity(records.len());
        for (index, r) in records.iter().enumerate() {
            r.validate().map_err(|reason| LedgerError::InvalidRecord { index, reason })?;
            encrypted.push(r.encrypt(keys)?);
        }
        self.append_encrypted(encrypted, block_size, clock)
    }

    pub fn append_encrypted(
        &mut self,
        records: Vec<EncryptedRecord>,
        block_size: usize,
        clock: &dyn Clock,
    ) -> Result<usize, LedgerError> {
        if block_size == 0 {
            return Err(LedgerError::ZeroBlockSize);
        }
        let mut added = 0;
        let mut iter = records.into_iter().peekable();
        while iter.peek().is_some() {
            let chunk: Vec<EncryptedRecord> = iter.by_ref().take(block_size).collect();
            let block = mine_block(chunk, self.blocks.last().map(|b| &b.header), self.difficulty, clock)?;
            self.blocks.push(block);
            added += 1;
        }
        Ok(added)
    }

    /// Checks linkage, Merkle roots and the proof of work of every block. The
    /// work check also confirms the nonce is the smallest valid one, so a
    /// rewritten nonce is caught even on the tip block.
    pub fn validate(&self) -> ValidationReport {
        let mut prev: Option<&BlockHeader> = None;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(position, block)| {
                let h = &block.header;
                let linkage_ok = match prev {
                    None => h.id == 0 && h.prev_hash == Digest::ZERO,
                    Some(p) => h.id == p.id + 1 && h.prev_hash == p.digest(),
                };
                let merkle_ok = merkle_root(&block.records).map(|r| r == h.merkle_root).unwrap_or(false);
                let difficulty_ok = h.digest().leading_zero_bits() >= self.difficulty
                    && (h.nonce == 0 || search_nonce(h, self.difficulty, 0, h.nonce - 1).is_none());
                prev = Some(h);
                BlockCheck { id: h.id, position, linkage_ok, merkle_ok, difficulty_ok }
            })
            .collect();
        ValidationReport { blocks }
    }

    /// Streams records in block order, refusing an invalid ledger.
    pub fn read_records(&self) -> Result<impl Iterator<Item = &EncryptedRecord>, LedgerError> {
        let report = self.validate();
        if !report.valid() {
            return Err(LedgerError::Invalid(report.summary()));
        }
        Ok(self.blocks.iter().flat_map(|b| b.records.iter()))
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), LedgerError> {
        for block in &self.blocks {
            serde_json::to_writer(&mut w, block).map_err(|source| LedgerError::Parse { line: 0, source })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads blocks as written by [`Ledger::save`]. No validation happens here.
    pub fn read_jsonl<R: BufRead>(r: R, difficulty: u32) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new(difficulty)?;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(&line).map_err(|source| LedgerError::Parse { line: i + 1, source })?;
            ledger.blocks.push(block);
        }
        Ok(ledger)
    }

    pub fn load(path: &Path, difficulty: u32) -> Result<Self, LedgerError> {
        Self::read_jsonl(BufReader::new(File::open(path)?), difficulty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::decrypt_field;

    fn keys() -> KeySet {
        KeySet::from_hex_list("0123456789abcdef,23456789abcdef01,456789abcdef0123").unwrap()
    }

    fn sample(n: usize) -> Vec<AccessServiceRecord> {
        (0..n)
            .map(|i| AccessServiceRecord::new(format!("u{i}"), format!("p{}", i % 3), "svc", (i % 11) as f64, 10.0))
            .collect()
    }

    fn enc(n: usize) -> Vec<EncryptedRecord> {
        let k = keys();
        sample(n).iter().map(|r| r.encrypt(&k).unwrap()).collect()
    }

    #[test]
    fn merkle_small_trees() {
        let r = enc(3);
        assert_eq!(merkle_root(&r[..1]).unwrap(), r[0].leaf());
        assert_eq!(merkle_root(&r[..2]).unwrap(), digest_pair(&r[0].leaf(), &r[1].leaf()));
        let l = digest_pair(&r[0].leaf(), &r[1].leaf());
        let rr = digest_pair(&r[2].leaf(), &r[2].leaf());
        assert_eq!(merkle_root(&r).unwrap(), digest_pair(&l, &rr));
        assert!(matches!(merkle_root(&[]), Err(LedgerError::EmptyRecords)));
    }

    #[test]
    fn mining_targets() {
        let b = mine_block(enc(2), None, 0, &FixedClock(7)).unwrap();
        assert_eq!(b.header.nonce, 0);
        assert_eq!(b.header.prev_hash, Digest::ZERO);
        let b = mine_block(enc(2), None, 8, &FixedClock(7)).unwrap();
        assert_eq!(b.header.digest().0[0], 0);
        assert!(matches!(
            mine_block(enc(1), None, 33, &FixedClock(0)),
            Err(LedgerError::DifficultyTooHigh(33))
        ));
    }

    #[test]
    fn nonce_exhaustion_is_an_error() {
        let r = mine_block_bounded(enc(1), None, 24, &FixedClock(0), 3);
        assert!(matches!(r, Err(LedgerError::NonceExhausted(24))));
    }

    #[test]
    fn append_chunks_and_validates() {
        let mut l = Ledger::new(4).unwrap();
        assert_eq!(l.append_records(&sample(10), &keys(), 4, &FixedClock(1)).unwrap(), 3);
        let sizes: Vec<usize> = l.blocks().iter().map(|b| b.records.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(l.validate().valid());
        let before = l.clone();
        assert_eq!(l.append_records(&[], &keys(), 4, &FixedClock(1)).unwrap(), 0);
        assert_eq!(l, before);
        assert!(matches!(l.append_records(&sample(1), &keys(), 0, &FixedClock(1)), Err(LedgerError::ZeroBlockSize)));
    }

    #[test]
    fn tamper_detection_names_the_block() {
        let mut l = Ledger::new(4).unwrap();
        l.append_records(&sample(10), &keys(), 2, &FixedClock(1)).unwrap();
        assert!(l.validate().valid());

        let mut t = l.clone();
        t.blocks_mut()[2].records[0].score += 1.0;
        let rep = t.validate();
        assert!(!rep.valid());
        assert!(!rep.blocks[2].merkle_ok);

        let mut t = l.clone();
        t.blocks_mut()[3].header.prev_hash = Digest::ZERO;
        let rep = t.validate();
        assert!(!rep.blocks[3].linkage_ok);
        assert!(t.read_records().is_err());
    }

    #[test]
    fn tip_nonce_rewrite_is_caught() {
        let mut l = Ledger::new(6).unwrap();
        l.append_records(&sample(3), &keys(), 3, &FixedClock(1)).unwrap();
        let n = l.blocks()[0].header.nonce;
        for flip in 0..16 {
            let mut t = l.clone();
            t.blocks_mut()[0].header.nonce = n ^ (1 << flip);
            assert!(!t.validate().valid(), "flip {flip}");
        }
    }

    #[test]
    fn read_preserves_order_and_decrypts() {
        let k = keys();
        let input = sample(5);
        let mut l = Ledger::new(2).unwrap();
        l.append_records(&input[..2], &k, 2, &FixedClock(1)).unwrap();
        l.append_records(&input[2..3], &k, 2, &FixedClock(2)).unwrap();
        l.append_records(&input[3..], &k, 2, &FixedClock(3)).unwrap();
        let out: Vec<&EncryptedRecord> = l.read_records().unwrap().collect();
        assert_eq!(out.len(), 5);
        for (orig, got) in input.iter().zip(out) {
            assert_eq!(decrypt_field(&got.cs, &k).unwrap(), orig.s.as_bytes());
            assert_eq!(got.score, orig.score);
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut l = Ledger::new(3).unwrap();
        l.append_records(&sample(5), &keys(), 2, &FixedClock(99)).unwrap();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("{\"id\":0,\"prev_hash\":\"0000"));
        assert!(first.contains("\"records\":[{\"cs\":\""));
        let back = Ledger::read_jsonl(&buf[..], 3).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn record_validation() {
        assert!(AccessServiceRecord::new("a", "b", NULL_SERVICE, 5.0, 5.0).validate().is_ok());
        assert!(AccessServiceRecord::new("a", "b", "c", 5.5, 5.0).validate().is_err());
        assert!(AccessServiceRecord::new("", "b", "c", 1.0, 5.0).validate().is_err());
        assert!(AccessServiceRecord::new("a", "b", "c", 1.0, 0.0).validate().is_err());
    }
}

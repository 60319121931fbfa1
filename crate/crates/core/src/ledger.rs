//! Per-domain append-only hash-chained ledger, and deterministic merging
//! of ledgers exchanged between domains.
//!
//! ```text
//! block 0:   prev = 00..00          hash_0 = H(fields_0)
//! block i:   prev = hash_{i-1}      hash_i = H(fields_i)
//! ```
//!
//! `H` is SHA-256 over the canonical serialization: each field as a
//! big-endian `u64` length followed by its bytes, in the order index,
//! prev_hash, author, tick, payload kind, payload body. Integers are
//! encoded as 8 big-endian bytes, the author as its canonical id text.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::DomainController;
use crate::identity::{parse_ie_id, Asn, IeId};

pub const HASH_LEN: usize = 32;
/// First line of every ledger file.
pub const FILE_MAGIC: &str = "a2rd-ledger";
pub const FILE_VERSION: &str = "1";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BlockHash(pub [u8; HASH_LEN]);

impl BlockHash {
    pub const ZERO: BlockHash = BlockHash([0; HASH_LEN]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockHash({}…)", &self.to_hex()[..16])
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayloadKind {
    IrrChangeAnnounce,
    KnowledgeVersionAnnounce,
    Freeform,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 3] = [
        PayloadKind::IrrChangeAnnounce,
        PayloadKind::KnowledgeVersionAnnounce,
        PayloadKind::Freeform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::IrrChangeAnnounce => "IrrChangeAnnounce",
            PayloadKind::KnowledgeVersionAnnounce => "KnowledgeVersionAnnounce",
            PayloadKind::Freeform => "Freeform",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PayloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PayloadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown payload kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    pub kind: PayloadKind,
    pub body: Vec<u8>,
}

impl Payload {
    pub fn new(kind: PayloadKind, body: impl Into<Vec<u8>>) -> Self {
        Self {
            kind,
            body: body.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LedgerBlock {
    pub index: u64,
    pub prev_hash: BlockHash,
    pub author: IeId,
    pub tick: u64,
    pub payload: Payload,
    pub hash: BlockHash,
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
    out.extend_from_slice(bytes);
}

impl LedgerBlock {
    /// The bytes the block hash is computed over.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let author = self.author.to_string();
        let mut out = Vec::with_capacity(96 + author.len() + self.payload.body.len());
        put_field(&mut out, &self.index.to_be_bytes());
        put_field(&mut out, &self.prev_hash.0);
        put_field(&mut out, author.as_bytes());
        put_field(&mut out, &self.tick.to_be_bytes());
        put_field(&mut out, self.payload.kind.as_str().as_bytes());
        put_field(&mut out, &self.payload.body);
        out
    }

    pub fn compute_hash(&self) -> BlockHash {
        BlockHash(Sha256::digest(self.canonical_bytes()).into())
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.index,
            self.prev_hash,
            self.author,
            self.tick,
            self.payload.kind,
            hex::encode(&self.payload.body),
            self.hash
        )
    }

    /// Inverse of [`LedgerBlock::to_line`]; the digest is not checked.
    pub fn from_line(line: &str) -> Result<LedgerBlock, String> {
        parse_block_line(line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{author} does not belong to AS{origin}")]
    ForeignAuthor { author: IeId, origin: Asn },
    #[error("{0} is not an active IE")]
    EvictedAuthor(IeId),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("chain invalid, first bad block {0}")]
    ChainInvalid(u64),
    #[error("ledger of AS{origin} does not verify (first bad block {index})")]
    UnverifiedInput { origin: Asn, index: u64 },
    #[error("AS{origin} block {index} appears with two different hashes")]
    ConflictingDuplicate { origin: Asn, index: u64 },
    #[error("cannot export an unverified ledger (first bad block {0})")]
    ExportUnverified(u64),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyResult {
    Ok,
    FirstBadIndex(u64),
}

impl VerifyResult {
    pub fn is_ok(self) -> bool {
        self == VerifyResult::Ok
    }
}

impl fmt::Display for VerifyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyResult::Ok => f.write_str("Ok"),
            VerifyResult::FirstBadIndex(i) => write!(f, "FirstBadIndex({i})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    origin_asn: Asn,
    blocks: Vec<LedgerBlock>,
}

impl Ledger {
    pub fn new(origin_asn: Asn) -> Self {
        Self {
            origin_asn,
            blocks: Vec::new(),
        }
    }

    /// Reassemble a ledger from raw blocks without checking them.
    pub fn from_parts(origin_asn: Asn, blocks: Vec<LedgerBlock>) -> Self {
        Self { origin_asn, blocks }
    }

    pub fn origin_asn(&self) -> Asn {
        self.origin_asn
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<LedgerBlock> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head_hash(&self) -> BlockHash {
        self.blocks.last().map_or(BlockHash::ZERO, |b| b.hash)
    }

    /// Append a block authored by an Active IE of this ledger's domain.
    pub fn append_block(
        &mut self,
        registry: &DomainController,
        author: &IeId,
        tick: u64,
        payload: Payload,
    ) -> Result<&LedgerBlock, LedgerError> {
        if author.asn() != self.origin_asn || registry.asn() != self.origin_asn {
            return Err(LedgerError::ForeignAuthor {
                author: author.clone(),
                origin: self.origin_asn,
            });
        }
        if !registry.is_active(author) {
            return Err(LedgerError::EvictedAuthor(author.clone()));
        }
        let mut block = LedgerBlock {
            index: self.blocks.len() as u64,
            prev_hash: self.head_hash(),
            author: author.clone(),
            tick,
            payload,
            hash: BlockHash::ZERO,
        };
        block.hash = block.compute_hash();
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn verify(&self) -> VerifyResult {
        verify_chain(self)
    }

    /// File form: a header line then one block per line.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("{FILE_MAGIC}\t{FILE_VERSION}\t{}\n", self.origin_asn);
        for block in &self.blocks {
            let _ = writeln!(out, "{}", block.to_line());
        }
        out
    }

    /// Parse the file form without checking the chain.
    pub fn parse_file_string(text: &str) -> Result<Ledger, LedgerError> {
        let perr = |line: usize, message: &str| LedgerError::ParseError {
            line,
            message: message.to_string(),
        };
        let mut lines = text.split_terminator('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let [FILE_MAGIC, FILE_VERSION, origin] = fields[..] else {
            return Err(perr(1, "bad header"));
        };
        let origin: Asn = origin.parse().map_err(|_| perr(1, "bad origin ASN"))?;
        let mut blocks = Vec::new();
        for (line_no, line) in lines {
            blocks.push(parse_block_line(line).map_err(|m| perr(line_no, &m))?);
        }
        Ok(Ledger::from_parts(origin, blocks))
    }
}

fn parse_u64_strict(s: &str) -> Result<u64, String> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return Err(format!("bad integer `{s}`"));
    }
    s.parse().map_err(|_| format!("integer `{s}` out of range"))
}

fn parse_hex_strict(s: &str) -> Result<Vec<u8>, String> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(format!("hex `{s}` must be lowercase"));
    }
    hex::decode(s).map_err(|e| format!("bad hex: {e}"))
}

fn parse_hash(s: &str) -> Result<BlockHash, String> {
    let bytes = parse_hex_strict(s)?;
    let arr: [u8; HASH_LEN] = bytes
        .try_into()
        .map_err(|_| format!("digest `{s}` is not {HASH_LEN} bytes"))?;
    Ok(BlockHash(arr))
}

fn parse_block_line(line: &str) -> Result<LedgerBlock, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [index, prev, author, tick, kind, body, hash] = fields[..] else {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    };
    let author_id = parse_ie_id(author).map_err(|e| e.to_string())?;
    if author_id.to_string() != author {
        return Err(format!("author `{author}` is not canonical"));
    }
    Ok(LedgerBlock {
        index: parse_u64_strict(index)?,
        prev_hash: parse_hash(prev)?,
        author: author_id,
        tick: parse_u64_strict(tick)?,
        payload: Payload::new(kind.parse()?, parse_hex_strict(body)?),
        hash: parse_hash(hash)?,
    })
}

/// Find the earliest block whose index, linkage, origin or digest is wrong.
pub fn verify_chain(ledger: &Ledger) -> VerifyResult {
    let mut expected_prev = BlockHash::ZERO;
    for (i, block) in ledger.blocks.iter().enumerate() {
        let i = i as u64;
        if block.index != i
            || block.prev_hash != expected_prev
            || block.author.asn() != ledger.origin_asn
            || block.compute_hash() != block.hash
        {
            return VerifyResult::FirstBadIndex(i);
        }
        expected_prev = block.hash;
    }
    VerifyResult::Ok
}

/// Write `ledger` to `path`. Refuses ledgers that do not verify.
pub fn export_ledger(ledger: &Ledger, path: &Path) -> Result<(), LedgerError> {
    if let VerifyResult::FirstBadIndex(i) = verify_chain(ledger) {
        return Err(LedgerError::ExportUnverified(i));
    }
    std::fs::write(path, ledger.to_file_string()).map_err(|e| LedgerError::Io(e.to_string()))
}

/// Read and verify a ledger file.
pub fn import_ledger(path: &Path) -> Result<Ledger, LedgerError> {
    let text = std::fs::read_to_string(path).map_err(|e| LedgerError::Io(e.to_string()))?;
    import_ledger_str(&text)
}

pub fn import_ledger_str(text: &str) -> Result<Ledger, LedgerError> {
    let ledger = Ledger::parse_file_string(text)?;
    match verify_chain(&ledger) {
        VerifyResult::Ok => Ok(ledger),
        VerifyResult::FirstBadIndex(i) => Err(LedgerError::ChainInvalid(i)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedBlock {
    pub origin: Asn,
    pub block: LedgerBlock,
}

/// Read-only union of several ledgers, ordered by (tick, origin, index).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergedView {
    blocks: Vec<MergedBlock>,
}

impl MergedView {
    pub fn blocks(&self) -> &[MergedBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// One line per block: tick, origin, index, author, kind, hash.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.blocks {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                m.block.tick, m.origin, m.block.index, m.block.author, m.block.payload.kind, m.block.hash
            );
        }
        out
    }
}

pub fn merge(ledgers: &[Ledger]) -> Result<MergedView, LedgerError> {
    let mut by_key: BTreeMap<(Asn, u64), &LedgerBlock> = BTreeMap::new();
    for ledger in ledgers {
        if let VerifyResult::FirstBadIndex(index) = verify_chain(ledger) {
            return Err(LedgerError::UnverifiedInput {
                origin: ledger.origin_asn,
                index,
            });
        }
    }
    for ledger in ledgers {
        for block in &ledger.blocks {
            let key = (ledger.origin_asn, block.index);
            if let Some(existing) = by_key.insert(key, block) {
                if existing.hash != block.hash {
                    return Err(LedgerError::ConflictingDuplicate {
                        origin: key.0,
                        index: key.1,
                    });
                }
            }
        }
    }
    let mut blocks: Vec<MergedBlock> = by_key
        .into_iter()
        .map(|((origin, _), block)| MergedBlock {
            origin,
            block: block.clone(),
        })
        .collect();
    blocks.sort_by_key(|m| (m.block.tick, m.origin, m.block.index));
    Ok(MergedView { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{create_domain, DomainConfig, LayerRequest};

    fn registry(asn: u32) -> DomainController {
        let block = format!("2001:db8:{:x}::/48", asn & 0xffff).parse().unwrap();
        let mut d = create_domain(DomainConfig::new(Asn(asn), block)).unwrap();
        d.request_registration(LayerRequest::Specialized, None).unwrap();
        d
    }

    fn ledger_of(asn: u32, n: u64) -> (Ledger, DomainController) {
        let reg = registry(asn);
        let mut l = Ledger::new(Asn(asn));
        let author = parse_ie_id(&format!("{asn}:1")).unwrap();
        for t in 0..n {
            l.append_block(&reg, &author, t * 2, Payload::new(PayloadKind::Freeform, format!("b{t}")))
                .unwrap();
        }
        (l, reg)
    }

    #[test]
    fn genesis_and_chain_rule() {
        let (l, _) = ledger_of(65001, 2);
        assert_eq!(l.blocks()[0].index, 0);
        assert_eq!(l.blocks()[0].prev_hash, BlockHash::ZERO);
        assert_eq!(l.blocks()[1].index, 1);
        assert_eq!(l.blocks()[1].prev_hash, l.blocks()[0].hash);
    }

    #[test]
    fn canonical_bytes_layout() {
        let (l, _) = ledger_of(65001, 1);
        let b = &l.blocks()[0];
        let bytes = b.canonical_bytes();
        let mut expected = Vec::new();
        expected.extend_from_slice(&8u64.to_be_bytes());
        expected.extend_from_slice(&0u64.to_be_bytes());
        expected.extend_from_slice(&32u64.to_be_bytes());
        expected.extend_from_slice(&[0; 32]);
        expected.extend_from_slice(&7u64.to_be_bytes());
        expected.extend_from_slice(b"65001:1");
        expected.extend_from_slice(&8u64.to_be_bytes());
        expected.extend_from_slice(&0u64.to_be_bytes());
        expected.extend_from_slice(&8u64.to_be_bytes());
        expected.extend_from_slice(b"Freeform");
        expected.extend_from_slice(&2u64.to_be_bytes());
        expected.extend_from_slice(b"b0");
        assert_eq!(bytes, expected);
        assert_eq!(b.hash.0, <[u8; 32]>::from(Sha256::digest(&expected)));
    }

    #[test]
    fn append_rejects_foreign_and_evicted_authors() {
        let (mut l, mut reg) = ledger_of(65001, 0);
        let foreign = parse_ie_id("65002:1").unwrap();
        assert!(matches!(
            l.append_block(&reg, &foreign, 0, Payload::new(PayloadKind::Freeform, "x")),
            Err(LedgerError::ForeignAuthor { .. })
        ));
        let author = parse_ie_id("65001:1").unwrap();
        reg.evict(&author).unwrap();
        assert_eq!(
            l.append_block(&reg, &author, 0, Payload::new(PayloadKind::Freeform, "x")),
            Err(LedgerError::EvictedAuthor(author))
        );
        assert!(l.is_empty());
    }

    #[test]
    fn tamper_and_truncate() {
        let (l, _) = ledger_of(65001, 5);
        assert_eq!(verify_chain(&l), VerifyResult::Ok);
        let mut blocks = l.clone().into_blocks();
        blocks[2].payload.body[0] ^= 1;
        assert_eq!(
            verify_chain(&Ledger::from_parts(Asn(65001), blocks)),
            VerifyResult::FirstBadIndex(2)
        );
        let mut blocks = l.into_blocks();
        blocks.pop();
        assert_eq!(verify_chain(&Ledger::from_parts(Asn(65001), blocks)), VerifyResult::Ok);
    }

    #[test]
    fn file_round_trip_and_tamper() {
        let (l, _) = ledger_of(65001, 3);
        let text = l.to_file_string();
        assert_eq!(import_ledger_str(&text).unwrap(), l);
        assert_eq!(import_ledger_str(&text).unwrap().to_file_string(), text);

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[2].split('\t').map(String::from).collect();
        let last = fields.last_mut().unwrap();
        let flipped = if last.ends_with('0') { '1' } else { '0' };
        last.pop();
        last.push(flipped);
        lines[2] = fields.join("\t");
        let tampered = lines.join("\n") + "\n";
        assert_eq!(import_ledger_str(&tampered), Err(LedgerError::ChainInvalid(1)));

        assert!(matches!(import_ledger_str(""), Err(LedgerError::ParseError { line: 1, .. })));
        assert!(matches!(
            import_ledger_str("a2rd-ledger\t1\t65001\n0\tzz\n"),
            Err(LedgerError::ParseError { line: 2, .. })
        ));
        let empty = Ledger::new(Asn(7));
        assert_eq!(import_ledger_str(&empty.to_file_string()).unwrap(), empty);
    }

    #[test]
    fn merge_orders_and_dedups() {
        let (a, _) = ledger_of(65002, 1);
        let (b, _) = ledger_of(65001, 1);
        let view = merge(&[a.clone(), b.clone()]).unwrap();
        let origins: Vec<Asn> = view.blocks().iter().map(|m| m.origin).collect();
        assert_eq!(origins, [Asn(65001), Asn(65002)]);
        assert_eq!(view, merge(&[b.clone(), a.clone()]).unwrap());
        assert_eq!(merge(&[a.clone(), a.clone()]).unwrap(), merge(std::slice::from_ref(&a)).unwrap());

        let mut blocks = a.clone().into_blocks();
        blocks[0].tick += 1;
        let tampered = Ledger::from_parts(Asn(65002), blocks);
        assert!(matches!(
            merge(&[b.clone(), tampered]),
            Err(LedgerError::UnverifiedInput { index: 0, .. })
        ));

        // same origin, different history
        let reg = registry(65002);
        let mut other = Ledger::new(Asn(65002));
        other
            .append_block(&reg, &parse_ie_id("65002:1").unwrap(), 9, Payload::new(PayloadKind::Freeform, "z"))
            .unwrap();
        assert_eq!(
            merge(&[a, other]),
            Err(LedgerError::ConflictingDuplicate { origin: Asn(65002), index: 0 })
        );
    }
}

//! Multiplicity-encoded multi-signature model.
//!
//! Signatures are modeled as bookkeeping over message digests rather than real
//! pairing-based cryptography. The algebra is the part that matters for the
//! rest of the crate: aggregates carry a per-signer multiplicity vector, can
//! always be re-aggregated with integer exponents, and never expose their
//! constituents. Indivisibility is enforced by the API surface: there is no
//! operation that extracts a `Signature` from an `AggregateSignature`.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Per-round identifier of a committee member.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SignerId(pub u32);

impl fmt::Display for SignerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 32-byte digest identifying the signed message.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageDigest(pub [u8; 32]);

impl MessageDigest {
    pub const ZERO: MessageDigest = MessageDigest([0u8; 32]);

    /// Sha-256 of arbitrary bytes; the fixed hash used for all identities.
    pub fn of_bytes(data: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(data);
        MessageDigest(h.finalize().into())
    }
}

impl fmt::Debug for MessageDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigAggError {
    #[error("aggregate() called with no parts")]
    EmptyInput,
    #[error("parts reference different message digests")]
    MixedMessages,
    #[error("aggregation exponent must be at least 1")]
    ZeroExponent,
}

/// A single signature. Produced only by [`sign`]; deterministic per
/// `(signer, message)`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Signature {
    signer: SignerId,
    message: MessageDigest,
}

impl Signature {
    pub fn signer(&self) -> SignerId {
        self.signer
    }

    pub fn message(&self) -> MessageDigest {
        self.message
    }
}

/// Sign a message digest.
pub fn sign(signer: SignerId, message: MessageDigest) -> Signature {
    Signature { signer, message }
}

/// Sparse map from signer to multiplicity. Zero counts are never stored.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct MultiplicityVector {
    entries: BTreeMap<SignerId, u32>,
}

impl MultiplicityVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (SignerId, u32)>) -> Self {
        let mut v = Self::new();
        for (id, count) in entries {
            v.add(id, count);
        }
        v
    }

    pub fn add(&mut self, id: SignerId, count: u32) {
        if count > 0 {
            *self.entries.entry(id).or_insert(0) += count;
        }
    }

    pub fn count(&self, id: SignerId) -> u32 {
        self.entries.get(&id).copied().unwrap_or(0)
    }

    pub fn contains(&self, id: SignerId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn distinct_signers(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SignerId, u32)> + '_ {
        self.entries.iter().map(|(id, c)| (*id, *c))
    }

    /// Canonical serialization: ascending signer id, `(id: u32, count: u32)`
    /// pairs, little-endian. Used in QC digests and CSV output.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * 8);
        for (id, count) in &self.entries {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out
    }
}

/// An aggregate signature: a message digest plus the multiplicity of every
/// contributing signer. Constituents are not recoverable.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AggregateSignature {
    message: MessageDigest,
    multiplicities: MultiplicityVector,
}

impl AggregateSignature {
    pub fn message(&self) -> MessageDigest {
        self.message
    }

    pub fn multiplicities(&self) -> &MultiplicityVector {
        &self.multiplicities
    }

    pub fn distinct_signers(&self) -> usize {
        self.multiplicities.distinct_signers()
    }

    pub fn contains(&self, id: SignerId) -> bool {
        self.multiplicities.contains(id)
    }
}

impl From<&Signature> for AggregateSignature {
    fn from(sig: &Signature) -> Self {
        AggregateSignature {
            message: sig.message,
            multiplicities: MultiplicityVector::from_entries([(sig.signer, 1)]),
        }
    }
}

/// One input to [`aggregate`]: either a bare signature or an existing
/// aggregate.
#[derive(Clone, Debug)]
pub enum Part<'a> {
    Single(&'a Signature),
    Aggregate(&'a AggregateSignature),
}

impl<'a> From<&'a Signature> for Part<'a> {
    fn from(s: &'a Signature) -> Self {
        Part::Single(s)
    }
}

impl<'a> From<&'a AggregateSignature> for Part<'a> {
    fn from(a: &'a AggregateSignature) -> Self {
        Part::Aggregate(a)
    }
}

impl Part<'_> {
    fn message(&self) -> MessageDigest {
        match self {
            Part::Single(s) => s.message,
            Part::Aggregate(a) => a.message,
        }
    }
}

/// Aggregate `parts`, each raised to an integer exponent.
///
/// The resulting multiplicity of signer `s` is the sum over parts of
/// `exponent * part's count of s`. All parts must share one message digest
/// and every exponent must be at least 1.
pub fn aggregate(parts: &[(Part<'_>, u32)]) -> Result<AggregateSignature, SigAggError> {
    let (first, _) = parts.first().ok_or(SigAggError::EmptyInput)?;
    let message = first.message();
    let mut multiplicities = MultiplicityVector::new();
    for (part, exponent) in parts {
        if *exponent == 0 {
            return Err(SigAggError::ZeroExponent);
        }
        if part.message() != message {
            return Err(SigAggError::MixedMessages);
        }
        match part {
            Part::Single(sig) => multiplicities.add(sig.signer, *exponent),
            Part::Aggregate(agg) => {
                for (id, count) in agg.multiplicities.iter() {
                    multiplicities.add(id, count * exponent);
                }
            }
        }
    }
    Ok(AggregateSignature {
        message,
        multiplicities,
    })
}

/// Check an aggregate against an expected multiplicity vector for a message.
///
/// True exactly when the aggregate's digest matches and its multiplicities
/// equal `expected` entry for entry.
pub fn verify(
    agg: &AggregateSignature,
    expected: &MultiplicityVector,
    message: MessageDigest,
) -> bool {
    agg.message == message && agg.multiplicities == *expected
}

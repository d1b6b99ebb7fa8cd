//! Privacy transforms applied to raw feature values before they reach the store.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncation of {0} bits is outside 0..=32")]
    TruncationBits(u32),
    #[error("IPv6 address `{0}` is not supported, only IPv4")]
    Ipv6(String),
    #[error("invalid IPv4 address `{0}`")]
    InvalidIp(String),
    #[error("hash iterations must be at least 1")]
    Iterations,
}

/// An IPv4 address in dotted-quad form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ipv4Value(pub Ipv4Addr);

impl Ipv4Value {
    pub fn from_u32(bits: u32) -> Self {
        Self(Ipv4Addr::from(bits))
    }

    pub fn to_u32(self) -> u32 {
        u32::from(self.0)
    }

    pub fn octets(self) -> [u8; 4] {
        self.0.octets()
    }
}

impl FromStr for Ipv4Value {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.contains(':') {
            return Err(CodecError::Ipv6(s.to_string()));
        }
        s.parse::<Ipv4Addr>()
            .map(Self)
            .map_err(|_| CodecError::InvalidIp(s.to_string()))
    }
}

impl fmt::Display for Ipv4Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Zeroes the last `bits` bits of the address.
pub fn truncate_ip(ip: Ipv4Value, bits: u32) -> Result<Ipv4Value, CodecError> {
    if bits > 32 {
        return Err(CodecError::TruncationBits(bits));
    }
    let mask = u32::MAX.checked_shl(bits).unwrap_or(0);
    Ok(Ipv4Value::from_u32(ip.to_u32() & mask))
}

/// Salted, iterated digest of feature values with one global salt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashPolicy {
    salt: Vec<u8>,
    iterations: u32,
}

impl HashPolicy {
    /// Identifier of the digest recorded in dataset metadata.
    pub const DIGEST_ID: &'static str = "sha256";

    pub fn new(salt: impl Into<Vec<u8>>, iterations: u32) -> Result<Self, CodecError> {
        if iterations == 0 {
            return Err(CodecError::Iterations);
        }
        Ok(Self {
            salt: salt.into(),
            iterations,
        })
    }

    pub fn salt(&self) -> &[u8] {
        &self.salt
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }
}

/// `H(H(...H(raw || salt)))` with `iterations` applications, as lowercase hex.
///
/// The salt is appended once, to the innermost input; later rounds hash the
/// previous raw 32-byte digest.
pub fn hash_value(raw: &[u8], policy: &HashPolicy) -> String {
    let mut digest = Sha256::new()
        .chain_update(raw)
        .chain_update(&policy.salt)
        .finalize();
    for _ in 1..policy.iterations {
        digest = Sha256::digest(digest);
    }
    hex::encode(digest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseAgent {
    pub token: String,
    /// No `product/version` token was recognised; `token` is the input unchanged.
    pub opaque: bool,
}

/// Reduces every dotted numeric version (`87.0.4280.88`) to its first component.
pub fn coarse_user_agent(ua: &str) -> CoarseAgent {
    let recognised = ua
        .split(|c: char| c.is_whitespace())
        .any(|word| match word.split_once('/') {
            Some((product, version)) => !product.is_empty() && !version.is_empty(),
            None => false,
        });
    if !recognised {
        return CoarseAgent {
            token: ua.to_string(),
            opaque: true,
        };
    }

    let bytes = ua.as_bytes();
    let mut out = String::with_capacity(ua.len());
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            let ch = ua[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        out.push_str(&ua[start..i]);
        // swallow `.digits` groups following the major component
        while i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    CoarseAgent {
        token: out,
        opaque: false,
    }
}

/// Codec settings applied to every raw feature vector: optional IP truncation,
/// optional user-agent coarsening, then optional hashing of all values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecChain {
    pub truncation_bits: u32,
    pub coarse_user_agent: bool,
    pub hash: Option<HashPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Ip,
    UserAgent,
    Other,
}

impl FeatureKind {
    pub fn of(feature_id: &str) -> Self {
        match feature_id {
            crate::model::FeatureSchema::IP => Self::Ip,
            crate::model::FeatureSchema::USER_AGENT => Self::UserAgent,
            _ => Self::Other,
        }
    }
}

impl CodecChain {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.truncation_bits == 0 && !self.coarse_user_agent && self.hash.is_none()
    }

    pub fn encode(&self, kind: FeatureKind, raw: &str) -> Result<String, CodecError> {
        let plain = match kind {
            FeatureKind::Ip => {
                let ip: Ipv4Value = raw.parse()?;
                truncate_ip(ip, self.truncation_bits)?.to_string()
            }
            FeatureKind::UserAgent if self.coarse_user_agent => coarse_user_agent(raw).token,
            _ => raw.to_string(),
        };
        Ok(match &self.hash {
            Some(policy) => hash_value(plain.as_bytes(), policy),
            None => plain,
        })
    }
}

//! Identifier space for Intelligent Elements and the AS number space.
//!
//! An IE identifier is `<asn>:<suffix>[:<suffix>...]`. The final suffix
//! selects the layer:
//!
//! ```text
//! 0                      controller
//! 1 ..= 9999             specialized
//! 10000 ..= 4294967295   colony
//! ```
//!
//! Deeper paths describe auxiliary subdomains. Every suffix before the last
//! must be a colony suffix, since only colony IEs originate a subdomain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Suffix of the domain controller.
pub const CONTROLLER_SUFFIX: u32 = 0;
/// Lowest specialized suffix.
pub const SPECIALIZED_MIN: u32 = 1;
/// Highest specialized suffix.
pub const SPECIALIZED_MAX: u32 = 9_999;
/// Lowest colony suffix.
pub const COLONY_MIN: u32 = 10_000;
/// Highest colony suffix.
pub const COLONY_MAX: u32 = u32::MAX;

/// Private-use ASN ranges (16-bit and 32-bit).
pub const PRIVATE_ASN_RANGES: [(u32, u32); 2] = [(64_512, 65_534), (4_200_000_000, 4_294_967_294)];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("malformed identifier `{0}`")]
    MalformedId(String),
    #[error("AS number `{0}` does not fit in 32 bits")]
    AsnOutOfRange(String),
    #[error("suffix `{0}` does not fit in 32 bits")]
    SuffixOutOfRange(String),
    #[error("suffix {suffix} at position {position} is not a colony suffix and cannot host a subdomain")]
    IllegalNesting { position: usize, suffix: u32 },
    #[error("{0} is not a colony IE")]
    NotAColony(IeId),
}

/// A 32-bit Autonomous System number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Asn(pub u32);

impl Asn {
    pub const fn value(self) -> u32 {
        self.0
    }

    pub fn is_private(self) -> bool {
        is_private_asn(self)
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for Asn {
    fn from(value: u32) -> Self {
        Self(value)
    }
}

impl FromStr for Asn {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_decimal(s) {
            Some(Some(v)) => Ok(Asn(v)),
            Some(None) => Err(IdError::AsnOutOfRange(s.to_string())),
            None => Err(IdError::MalformedId(s.to_string())),
        }
    }
}

/// Returns `true` iff `asn` lies in one of the two private-use ranges.
pub fn is_private_asn(asn: Asn) -> bool {
    PRIVATE_ASN_RANGES
        .iter()
        .any(|&(lo, hi)| (lo..=hi).contains(&asn.0))
}

/// The layer an IE lives in, derived from its identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Controller,
    Specialized,
    Colony,
    AuxiliaryController,
    AuxiliarySpecialized,
    AuxiliaryColony,
}

impl LayerKind {
    pub fn is_colony(self) -> bool {
        matches!(self, LayerKind::Colony | LayerKind::AuxiliaryColony)
    }

    pub fn is_controller(self) -> bool {
        matches!(self, LayerKind::Controller | LayerKind::AuxiliaryController)
    }

    pub fn is_specialized(self) -> bool {
        matches!(self, LayerKind::Specialized | LayerKind::AuxiliarySpecialized)
    }

    /// Controller and specialized layers, at any depth. These are the IEs
    /// allowed to carry traffic out of the AS.
    pub fn is_upper(self) -> bool {
        !self.is_colony()
    }

    pub fn is_auxiliary(self) -> bool {
        matches!(
            self,
            LayerKind::AuxiliaryController
                | LayerKind::AuxiliarySpecialized
                | LayerKind::AuxiliaryColony
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Controller => "Controller",
            LayerKind::Specialized => "Specialized",
            LayerKind::Colony => "Colony",
            LayerKind::AuxiliaryController => "AuxiliaryController",
            LayerKind::AuxiliarySpecialized => "AuxiliarySpecialized",
            LayerKind::AuxiliaryColony => "AuxiliaryColony",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Controller" => LayerKind::Controller,
            "Specialized" => LayerKind::Specialized,
            "Colony" => LayerKind::Colony,
            "AuxiliaryController" => LayerKind::AuxiliaryController,
            "AuxiliarySpecialized" => LayerKind::AuxiliarySpecialized,
            "AuxiliaryColony" => LayerKind::AuxiliaryColony,
            other => return Err(format!("unknown layer `{other}`")),
        })
    }
}

/// Layer of a single suffix at depth 1.
fn base_layer(suffix: u32) -> LayerKind {
    if suffix == CONTROLLER_SUFFIX {
        LayerKind::Controller
    } else if suffix <= SPECIALIZED_MAX {
        LayerKind::Specialized
    } else {
        LayerKind::Colony
    }
}

/// Hierarchical IE identifier: host ASN plus a non-empty suffix path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IeId {
    asn: Asn,
    path: Vec<u32>,
}

impl IeId {
    pub fn new(asn: Asn, path: Vec<u32>) -> Result<Self, IdError> {
        if path.is_empty() {
            return Err(IdError::MalformedId(format!("{asn}")));
        }
        if let Some((position, &suffix)) = path[..path.len() - 1]
            .iter()
            .enumerate()
            .find(|(_, s)| **s < COLONY_MIN)
        {
            return Err(IdError::IllegalNesting { position, suffix });
        }
        Ok(Self { asn, path })
    }

    /// The `x:0` controller of AS `x`.
    pub fn controller(asn: Asn) -> Self {
        Self {
            asn,
            path: vec![CONTROLLER_SUFFIX],
        }
    }

    pub fn asn(&self) -> Asn {
        self.asn
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn suffix(&self) -> u32 {
        *self.path.last().expect("path is non-empty")
    }

    /// Path of the (sub)domain this IE belongs to: every suffix but the last.
    pub fn domain_path(&self) -> &[u32] {
        &self.path[..self.path.len() - 1]
    }

    pub fn layer(&self) -> LayerKind {
        classify_layer(self)
    }

    /// The controller of the (sub)domain this IE belongs to.
    pub fn domain_controller(&self) -> IeId {
        let mut path = self.domain_path().to_vec();
        path.push(CONTROLLER_SUFFIX);
        IeId {
            asn: self.asn,
            path,
        }
    }

    /// Same domain, different final suffix. Only called with suffixes in a
    /// valid range, so nesting still holds.
    pub(crate) fn sibling(&self, suffix: u32) -> IeId {
        let mut path = self.domain_path().to_vec();
        path.push(suffix);
        IeId {
            asn: self.asn,
            path,
        }
    }
}

impl fmt::Display for IeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_ie_id(self))
    }
}

impl FromStr for IeId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ie_id(s)
    }
}

impl Serialize for IeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_ie_id(self))
    }
}

impl<'de> Deserialize<'de> for IeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_ie_id(&text).map_err(serde::de::Error::custom)
    }
}

/// Strict decimal: ASCII digits only, no sign, no leading zeros.
/// `None` = not a decimal token, `Some(None)` = decimal but ≥ 2³².
fn parse_decimal(token: &str) -> Option<Option<u32>> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if token.len() > 1 && token.starts_with('0') {
        return None;
    }
    if token.len() > 10 {
        return Some(None);
    }
    let value: u64 = token.parse().ok()?;
    Some(u32::try_from(value).ok())
}

/// Parse `asn:s1[:s2...]`, with an optional leading `IE`.
pub fn parse_ie_id(text: &str) -> Result<IeId, IdError> {
    let body = text.strip_prefix("IE").unwrap_or(text);
    let tokens: Vec<&str> = body.split(':').collect();
    if tokens.len() < 2 {
        return Err(IdError::MalformedId(text.to_string()));
    }
    let asn = match parse_decimal(tokens[0]) {
        Some(Some(v)) => Asn(v),
        Some(None) => return Err(IdError::AsnOutOfRange(tokens[0].to_string())),
        None => return Err(IdError::MalformedId(text.to_string())),
    };
    let mut path = Vec::with_capacity(tokens.len() - 1);
    for token in &tokens[1..] {
        match parse_decimal(token) {
            Some(Some(v)) => path.push(v),
            Some(None) => return Err(IdError::SuffixOutOfRange(token.to_string())),
            None => return Err(IdError::MalformedId(text.to_string())),
        }
    }
    IeId::new(asn, path)
}

pub fn format_ie_id(id: &IeId) -> String {
    let mut out = id.asn.0.to_string();
    for s in &id.path {
        out.push(':');
        out.push_str(&s.to_string());
    }
    out
}

pub fn classify_layer(id: &IeId) -> LayerKind {
    let base = base_layer(id.suffix());
    if id.depth() == 1 {
        return base;
    }
    match base {
        LayerKind::Controller => LayerKind::AuxiliaryController,
        LayerKind::Specialized => LayerKind::AuxiliarySpecialized,
        _ => LayerKind::AuxiliaryColony,
    }
}

/// The `:j:0` controller of the subdomain hanging off colony IE `parent`.
pub fn derive_subdomain_controller(parent: &IeId) -> Result<IeId, IdError> {
    if !classify_layer(parent).is_colony() {
        return Err(IdError::NotAColony(parent.clone()));
    }
    let mut path = parent.path.clone();
    path.push(CONTROLLER_SUFFIX);
    Ok(IeId {
        asn: parent.asn,
        path,
    })
}

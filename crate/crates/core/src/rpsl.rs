//! The RPSL object subset handled by the iIRR: `route`, `route6` and
//! `aut-num`.
//!
//! Parsing follows the RFC 2622 flat-text rules: `name: value` lines,
//! continuation lines start with whitespace or `+`, `#` starts an
//! end-of-line comment, and an object ends at a blank line. Attribute names
//! are case-insensitive and stored lowercased. Attributes other than the
//! keyed ones are carried through untouched.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};

use ipnet::{Ipv4Net, Ipv6Net};
use thiserror::Error;

use crate::identity::Asn;

/// Column at which serialized values start.
pub const VALUE_COLUMN: usize = 16;
/// Longest value chunk written on one line before wrapping.
pub const WRAP_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectClass {
    AutNum,
    Route,
    Route6,
}

impl ObjectClass {
    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::AutNum => "aut-num",
            ObjectClass::Route => "route",
            ObjectClass::Route6 => "route6",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "aut-num" => Some(ObjectClass::AutNum),
            "route" => Some(ObjectClass::Route),
            "route6" => Some(ObjectClass::Route6),
            _ => None,
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            ObjectClass::AutNum => &["as-name"],
            ObjectClass::Route | ObjectClass::Route6 => &["origin"],
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Attribute {
    pub name: String,
    pub value: String,
}

impl Attribute {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Primary key of a stored object. Ordering puts `aut-num` first, then
/// routes by prefix and origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RpslKey {
    AutNum(Asn),
    Route(Ipv4Net, Asn),
    Route6(Ipv6Net, Asn),
}

impl RpslKey {
    pub fn class(&self) -> ObjectClass {
        match self {
            RpslKey::AutNum(_) => ObjectClass::AutNum,
            RpslKey::Route(..) => ObjectClass::Route,
            RpslKey::Route6(..) => ObjectClass::Route6,
        }
    }

    /// The AS the object belongs to: origin for routes, the number itself
    /// for `aut-num`.
    pub fn asn(&self) -> Asn {
        match *self {
            RpslKey::AutNum(a) | RpslKey::Route(_, a) | RpslKey::Route6(_, a) => a,
        }
    }
}

impl fmt::Display for RpslKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RpslKey::AutNum(a) => write!(f, "aut-num AS{a}"),
            RpslKey::Route(p, a) => write!(f, "route {p} AS{a}"),
            RpslKey::Route6(p, a) => write!(f, "route6 {p} AS{a}"),
        }
    }
}

impl std::str::FromStr for RpslKey {
    type Err = String;

    /// Inverse of `Display`: `aut-num AS1`, `route 192.0.2.0/24 AS1`,
    /// `route6 2001:db8::/32 AS1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed key `{s}`");
        let parts: Vec<&str> = s.split(' ').collect();
        match parts[..] {
            ["aut-num", asn] => parse_as_number(asn).map(RpslKey::AutNum).map_err(|_| bad()),
            ["route", prefix, asn] => Ok(RpslKey::Route(
                parse_v4_prefix(prefix).map_err(|_| bad())?,
                parse_as_number(asn).map_err(|_| bad())?,
            )),
            ["route6", prefix, asn] => Ok(RpslKey::Route6(
                parse_v6_prefix(prefix).map_err(|_| bad())?,
                parse_as_number(asn).map_err(|_| bad())?,
            )),
            _ => Err(bad()),
        }
    }
}

/// One RPSL object. The first attribute always names a supported class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RpslObject {
    class: ObjectClass,
    attributes: Vec<Attribute>,
}

impl RpslObject {
    /// Build an object from an attribute list. Only the class is checked
    /// here; use [`validate_object`] for the rest.
    pub fn new(attributes: Vec<Attribute>) -> Result<Self, RpslErrorKind> {
        let first = attributes.first().ok_or(RpslErrorKind::Empty)?;
        let class = ObjectClass::from_name(&first.name)
            .ok_or_else(|| RpslErrorKind::UnknownClass(first.name.clone()))?;
        Ok(Self { class, attributes })
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn into_attributes(self) -> Vec<Attribute> {
        self.attributes
    }

    /// First value of `name`.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value.as_str())
    }

    /// The primary key, or `None` if the keyed attributes are missing or
    /// malformed.
    pub fn key(&self) -> Option<RpslKey> {
        let head = self.attributes[0].value.as_str();
        match self.class {
            ObjectClass::AutNum => parse_as_number(head).ok().map(RpslKey::AutNum),
            ObjectClass::Route => {
                let origin = parse_as_number(self.get("origin")?).ok()?;
                parse_v4_prefix(head).ok().map(|p| RpslKey::Route(p, origin))
            }
            ObjectClass::Route6 => {
                let origin = parse_as_number(self.get("origin")?).ok()?;
                parse_v6_prefix(head).ok().map(|p| RpslKey::Route6(p, origin))
            }
        }
    }

    /// Whether `name` is part of the primary key of this class.
    pub fn is_key_attribute(&self, name: &str) -> bool {
        name == self.class.name() || (self.class != ObjectClass::AutNum && name == "origin")
    }
}

impl fmt::Display for RpslObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_object(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    InvalidAttributeName,
    IllegalCharacter,
    UntrimmedValue,
    DuplicateAttribute,
    MissingRequiredAttribute,
    MalformedPrefix,
    MalformedOrigin,
    OriginOutOfRange,
    MalformedAsName,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Violation {
    pub attribute: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.attribute, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RpslErrorKind {
    #[error("no attributes")]
    Empty,
    #[error("unknown object class `{0}`")]
    UnknownClass(String),
    #[error("missing required attribute `{0}`")]
    MissingRequiredAttribute(String),
    #[error("malformed line")]
    MalformedLine,
    #[error("malformed prefix `{0}`")]
    MalformedPrefix(String),
    #[error("malformed origin `{0}`")]
    MalformedOrigin(String),
    #[error("attribute `{attribute}` violates {rule}")]
    Invalid { attribute: String, rule: Rule },
    #[error("content after the end of the object")]
    TrailingContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct RpslError {
    pub line: usize,
    pub kind: RpslErrorKind,
}

/// `AS<decimal>`, case-insensitive prefix.
pub fn parse_as_number(value: &str) -> Result<Asn, Rule> {
    let digits = value
        .get(..2)
        .filter(|p| p.eq_ignore_ascii_case("as"))
        .map(|_| &value[2..])
        .ok_or(Rule::MalformedOrigin)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Rule::MalformedOrigin);
    }
    digits
        .parse::<u32>()
        .map(Asn)
        .map_err(|_| Rule::OriginOutOfRange)
}

pub fn format_as_number(asn: Asn) -> String {
    format!("AS{asn}")
}

fn split_prefix(value: &str) -> Option<(&str, u8)> {
    let (addr, len) = value.split_once('/')?;
    if len.is_empty() || len.len() > 3 || !len.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((addr, len.parse().ok()?))
}

/// IPv4 CIDR prefix with no host bits set.
pub fn parse_v4_prefix(value: &str) -> Result<Ipv4Net, Rule> {
    let (addr, len) = split_prefix(value).ok_or(Rule::MalformedPrefix)?;
    let addr: Ipv4Addr = addr.parse().map_err(|_| Rule::MalformedPrefix)?;
    let net = Ipv4Net::new(addr, len).map_err(|_| Rule::MalformedPrefix)?;
    if net.trunc() != net {
        return Err(Rule::MalformedPrefix);
    }
    Ok(net)
}

/// IPv6 CIDR prefix with no host bits set.
pub fn parse_v6_prefix(value: &str) -> Result<Ipv6Net, Rule> {
    let (addr, len) = split_prefix(value).ok_or(Rule::MalformedPrefix)?;
    let addr: Ipv6Addr = addr.parse().map_err(|_| Rule::MalformedPrefix)?;
    let net = Ipv6Net::new(addr, len).map_err(|_| Rule::MalformedPrefix)?;
    if net.trunc() != net {
        return Err(Rule::MalformedPrefix);
    }
    Ok(net)
}

fn valid_attribute_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn valid_as_name(value: &str) -> bool {
    valid_attribute_name(value)
}

/// Check every invariant of `obj`. Violations are listed in attribute
/// order, followed by missing required attributes in a fixed order.
pub fn validate_object(obj: &RpslObject) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |attribute: &str, rule| {
        out.push(Violation {
            attribute: attribute.to_string(),
            rule,
        })
    };
    let class = obj.class;
    let mut seen_key = false;
    let mut seen_origin = false;
    let mut seen_as_name = false;
    for attr in &obj.attributes {
        let name = attr.name.as_str();
        let value = attr.value.as_str();
        if !valid_attribute_name(name) || name.chars().any(|c| c.is_ascii_uppercase()) {
            push(name, Rule::InvalidAttributeName);
            continue;
        }
        if value.contains(['#', '\n', '\r']) {
            push(name, Rule::IllegalCharacter);
            continue;
        }
        if value.trim() != value {
            push(name, Rule::UntrimmedValue);
            continue;
        }
        let seen = if name == class.name() {
            Some(&mut seen_key)
        } else if name == "origin" && class != ObjectClass::AutNum {
            Some(&mut seen_origin)
        } else if name == "as-name" && class == ObjectClass::AutNum {
            Some(&mut seen_as_name)
        } else {
            None
        };
        let Some(seen) = seen else { continue };
        if std::mem::replace(seen, true) {
            push(name, Rule::DuplicateAttribute);
            continue;
        }
        let check = match name {
            "route" => parse_v4_prefix(value).map(|_| ()),
            "route6" => parse_v6_prefix(value).map(|_| ()),
            "origin" | "aut-num" => parse_as_number(value).map(|_| ()),
            "as-name" if !valid_as_name(value) => Err(Rule::MalformedAsName),
            _ => Ok(()),
        };
        if let Err(rule) = check {
            push(name, rule);
        }
    }
    for &required in class.required() {
        let present = match required {
            "origin" => seen_origin,
            "as-name" => seen_as_name,
            _ => unreachable!(),
        };
        if !present && !obj.attributes.iter().any(|a| a.name == required) {
            push(required, Rule::MissingRequiredAttribute);
        }
    }
    out
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Attributes collected from one object's lines, with the line each
/// attribute started on.
fn parse_lines<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Vec<(usize, Attribute)>, RpslError> {
    let mut attrs: Vec<(usize, Attribute)> = Vec::new();
    for (line_no, raw) in lines {
        let line = strip_comment(raw);
        if line.trim().is_empty() {
            continue;
        }
        let first = line.chars().next().expect("non-empty");
        if first.is_whitespace() || first == '+' {
            let Some((_, prev)) = attrs.last_mut() else {
                return Err(RpslError {
                    line: line_no,
                    kind: RpslErrorKind::MalformedLine,
                });
            };
            let piece = if first == '+' { &line[1..] } else { line }.trim();
            if !piece.is_empty() {
                if !prev.value.is_empty() {
                    prev.value.push(' ');
                }
                prev.value.push_str(piece);
            }
            continue;
        }
        let Some((name, value)) = line.split_once(':') else {
            return Err(RpslError {
                line: line_no,
                kind: RpslErrorKind::MalformedLine,
            });
        };
        if !valid_attribute_name(name) {
            return Err(RpslError {
                line: line_no,
                kind: RpslErrorKind::MalformedLine,
            });
        }
        attrs.push((line_no, Attribute::new(name.to_ascii_lowercase(), value.trim())));
    }
    Ok(attrs)
}

fn build_object(first_line: usize, attrs: Vec<(usize, Attribute)>) -> Result<RpslObject, RpslError> {
    let lines: Vec<usize> = attrs.iter().map(|(l, _)| *l).collect();
    let obj = RpslObject::new(attrs.into_iter().map(|(_, a)| a).collect()).map_err(|kind| {
        RpslError {
            line: lines.first().copied().unwrap_or(first_line),
            kind,
        }
    })?;
    let Some(v) = validate_object(&obj).into_iter().next() else {
        return Ok(obj);
    };
    let line = obj
        .attributes
        .iter()
        .position(|a| a.name == v.attribute)
        .map_or(lines[0], |i| lines[i]);
    let kind = match v.rule {
        Rule::MissingRequiredAttribute => RpslErrorKind::MissingRequiredAttribute(v.attribute),
        Rule::MalformedPrefix => {
            RpslErrorKind::MalformedPrefix(obj.get(&v.attribute).unwrap_or_default().to_string())
        }
        Rule::MalformedOrigin | Rule::OriginOutOfRange => {
            RpslErrorKind::MalformedOrigin(obj.get(&v.attribute).unwrap_or_default().to_string())
        }
        rule => RpslErrorKind::Invalid {
            attribute: v.attribute,
            rule,
        },
    };
    Err(RpslError { line, kind })
}

/// Parse exactly one object. Leading blank or comment lines are allowed;
/// any content after the terminating blank line is an error.
pub fn parse_object(text: &str) -> Result<RpslObject, RpslError> {
    let mut blocks = split_blocks(text);
    let Some((first_line, lines)) = blocks.next() else {
        return Err(RpslError {
            line: 1,
            kind: RpslErrorKind::Empty,
        });
    };
    if let Some((line, _)) = blocks.next() {
        return Err(RpslError {
            line,
            kind: RpslErrorKind::TrailingContent,
        });
    }
    build_object(first_line, parse_lines(lines.into_iter())?)
}

/// Parse a flat file of blank-line separated objects. One result per
/// object, in file order.
pub fn parse_objects(text: &str) -> Vec<Result<RpslObject, RpslError>> {
    split_blocks(text)
        .map(|(first_line, lines)| {
            parse_lines(lines.into_iter()).and_then(|attrs| build_object(first_line, attrs))
        })
        .collect()
}

/// Group lines into objects. Blank lines separate objects; comment-only
/// lines neither separate nor start one. Yields the first content line of
/// each group.
fn split_blocks(text: &str) -> impl Iterator<Item = (usize, Vec<(usize, &str)>)> {
    let mut blocks: Vec<(usize, Vec<(usize, &str)>)> = Vec::new();
    let mut current: Vec<(usize, &str)> = Vec::new();
    let mut content_start: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            if let Some(start) = content_start.take() {
                blocks.push((start, std::mem::take(&mut current)));
            }
            current.clear();
            continue;
        }
        if content_start.is_none() && !strip_comment(raw).trim().is_empty() {
            content_start = Some(line_no);
        }
        current.push((line_no, raw));
    }
    if let Some(start) = content_start {
        blocks.push((start, current));
    }
    blocks.into_iter()
}

fn pad(head: &str) -> String {
    if head.len() >= VALUE_COLUMN {
        format!("{head} ")
    } else {
        format!("{head:<width$}", width = VALUE_COLUMN)
    }
}

/// Split `value` into chunks of at most [`WRAP_WIDTH`] characters such
/// that joining them with a single space gives back `value`. A chunk only
/// exceeds the width when it has no usable break point.
fn wrap_value(value: &str) -> Vec<&str> {
    if value.chars().count() <= WRAP_WIDTH {
        return vec![value];
    }
    // A space is a break point when neither neighbour is whitespace, so
    // the single-space join on re-parse is exact.
    let chars: Vec<(usize, char)> = value.char_indices().collect();
    let mut words = Vec::new();
    let mut start = 0;
    for w in chars.windows(3) {
        let [(_, before), (i, ' '), (_, after)] = *w else { continue };
        if !before.is_whitespace() && !after.is_whitespace() {
            words.push(&value[start..i]);
            start = i + 1;
        }
    }
    words.push(&value[start..]);

    let mut chunks = Vec::new();
    let mut chunk_start = 0usize;
    let mut chunk_end = 0usize;
    let mut offset = 0usize;
    for (n, word) in words.iter().enumerate() {
        let word_start = offset;
        let word_end = offset + word.len();
        offset = word_end + 1;
        if n == 0 {
            chunk_end = word_end;
            continue;
        }
        if value[chunk_start..word_end].chars().count() <= WRAP_WIDTH {
            chunk_end = word_end;
        } else {
            chunks.push(&value[chunk_start..chunk_end]);
            chunk_start = word_start;
            chunk_end = word_end;
        }
    }
    chunks.push(&value[chunk_start..chunk_end]);
    chunks
}

/// Canonical text form: values start at column 16, long values wrap onto
/// `+` continuation lines. Ends with a newline.
pub fn serialize_object(obj: &RpslObject) -> String {
    let mut out = String::new();
    for attr in &obj.attributes {
        let chunks = wrap_value(&attr.value);
        let head = format!("{}:", attr.name);
        if chunks[0].is_empty() {
            out.push_str(&head);
        } else {
            out.push_str(&pad(&head));
            out.push_str(chunks[0]);
        }
        out.push('\n');
        for chunk in &chunks[1..] {
            out.push_str(&pad("+"));
            out.push_str(chunk);
            out.push('\n');
        }
    }
    out
}

/// Blank-line separated objects.
pub fn serialize_objects<'a>(objects: impl IntoIterator<Item = &'a RpslObject>) -> String {
    objects
        .into_iter()
        .map(serialize_object)
        .collect::<Vec<_>>()
        .join("\n")
}

//! Shared domain types: prefixes, AS paths, RIB entries, route changes.

use std::collections::BTreeSet;
use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Autonomous system number.
pub type Asn = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    V4,
    V6,
}

impl Family {
    pub fn max_len(self) -> u8 {
        match self {
            Family::V4 => 32,
            Family::V6 => 128,
        }
    }
}

/// An IP prefix as a family-tagged, left-aligned bit string.
///
/// Bits beyond `len` are always zero; the constructor masks them.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    family: Family,
    bits: u128,
    len: u8,
}

impl Prefix {
    /// `bits` are left-aligned: bit 0 of the address is the most significant
    /// bit of `bits` (an IPv4 address occupies the top 32 bits).
    pub fn new(family: Family, bits: u128, len: u8) -> Result<Self, CoreError> {
        if len > family.max_len() {
            return Err(CoreError::InvalidArgument(format!(
                "prefix length {len} exceeds family bound {}",
                family.max_len()
            )));
        }
        let mask = if len == 0 {
            0
        } else {
            u128::MAX << (128 - u32::from(len))
        };
        Ok(Self {
            family,
            bits: bits & mask,
            len,
        })
    }

    pub fn v4(addr: Ipv4Addr, len: u8) -> Result<Self, CoreError> {
        Self::new(Family::V4, u128::from(u32::from(addr)) << 96, len)
    }

    pub fn v6(addr: Ipv6Addr, len: u8) -> Result<Self, CoreError> {
        Self::new(Family::V6, u128::from(addr), len)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit `i` of the address, for `i < len`.
    pub fn bit(&self, i: u8) -> u8 {
        debug_assert!(i < self.len);
        ((self.bits >> (127 - u32::from(i))) & 1) as u8
    }

    /// True when `self` covers `other` (same family, `self` no longer than
    /// `other`, and the first `self.len` bits agree).
    pub fn covers(&self, other: &Prefix) -> bool {
        if self.family != other.family || self.len > other.len {
            return false;
        }
        if self.len == 0 {
            return true;
        }
        let mask = u128::MAX << (128 - u32::from(self.len));
        (self.bits ^ other.bits) & mask == 0
    }

    /// The prefix made of the first `len` bits of `self`'s address.
    pub fn truncated(&self, len: u8) -> Prefix {
        debug_assert!(len <= self.len);
        Prefix::new(self.family, self.bits, len).expect("len shrinks")
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::V4 => {
                let addr = Ipv4Addr::from((self.bits >> 96) as u32);
                write!(f, "{addr}/{}", self.len)
            }
            Family::V6 => {
                let addr = Ipv6Addr::from(self.bits);
                write!(f, "{addr}/{}", self.len)
            }
        }
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Prefix {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| CoreError::InvalidArgument(format!("prefix {s:?} lacks '/'")))?;
        let len: u8 = len
            .parse()
            .map_err(|_| CoreError::InvalidArgument(format!("bad prefix length in {s:?}")))?;
        if let Ok(v4) = addr.parse::<Ipv4Addr>() {
            Prefix::v4(v4, len)
        } else if let Ok(v6) = addr.parse::<Ipv6Addr>() {
            Prefix::v6(v6, len)
        } else {
            Err(CoreError::InvalidArgument(format!("bad address in {s:?}")))
        }
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// One position of an AS path: a single ASN or an unordered AS set.
///
/// Construction canonicalizes a one-member set to `Asn`, so equality and
/// hashing treat `{x}` and `x` as the same element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathElement {
    Asn(Asn),
    Set(BTreeSet<Asn>),
}

impl PathElement {
    pub fn set(members: impl IntoIterator<Item = Asn>) -> Result<Self, CoreError> {
        let set: BTreeSet<Asn> = members.into_iter().collect();
        match set.len() {
            0 => Err(CoreError::InvalidArgument("empty AS set".into())),
            1 => Ok(PathElement::Asn(*set.iter().next().unwrap())),
            _ => Ok(PathElement::Set(set)),
        }
    }

    /// All ASNs at this position (one for a singleton, each member for a set).
    pub fn asns(&self) -> impl Iterator<Item = Asn> + '_ {
        match self {
            PathElement::Asn(a) => Members::One(std::iter::once(*a)),
            PathElement::Set(s) => Members::Many(s.iter().copied()),
        }
    }
}

enum Members<'a> {
    One(std::iter::Once<Asn>),
    Many(std::iter::Copied<std::collections::btree_set::Iter<'a, Asn>>),
}

impl Iterator for Members<'_> {
    type Item = Asn;
    fn next(&mut self) -> Option<Asn> {
        match self {
            Members::One(it) => it.next(),
            Members::Many(it) => it.next(),
        }
    }
}

impl fmt::Display for PathElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathElement::Asn(a) => write!(f, "{a}"),
            PathElement::Set(s) => {
                let inner: Vec<String> = s.iter().map(u32::to_string).collect();
                write!(f, "{{{}}}", inner.join(","))
            }
        }
    }
}

impl Serialize for PathElement {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PathElement::Asn(a) => serializer.serialize_u32(*a),
            PathElement::Set(s) => {
                let mut seq = serializer.serialize_seq(Some(s.len()))?;
                for a in s {
                    seq.serialize_element(a)?;
                }
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for PathElement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ElemVisitor;

        impl<'de> Visitor<'de> for ElemVisitor {
            type Value = PathElement;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an ASN or an array of ASNs")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<PathElement, E> {
                u32::try_from(v)
                    .map(PathElement::Asn)
                    .map_err(|_| E::custom(format!("ASN {v} out of range")))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<PathElement, A::Error> {
                let mut members = Vec::new();
                while let Some(a) = seq.next_element::<u32>()? {
                    members.push(a);
                }
                PathElement::set(members).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_any(ElemVisitor)
    }
}

/// A non-empty sequence of path elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct AsPath {
    elements: Vec<PathElement>,
}

impl AsPath {
    pub fn new(elements: Vec<PathElement>) -> Result<Self, CoreError> {
        if elements.is_empty() {
            return Err(CoreError::InvalidArgument("empty AS path".into()));
        }
        Ok(Self { elements })
    }

    pub fn from_asns(asns: &[Asn]) -> Self {
        Self {
            elements: asns.iter().copied().map(PathElement::Asn).collect(),
        }
    }

    pub fn elements(&self) -> &[PathElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &PathElement {
        &self.elements[0]
    }

    pub fn last(&self) -> &PathElement {
        self.elements.last().unwrap()
    }

    /// All ASNs anywhere in the path, set members included.
    pub fn asns(&self) -> impl Iterator<Item = Asn> + '_ {
        self.elements.iter().flat_map(PathElement::asns)
    }
}

impl fmt::Display for AsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elements.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for AsPath {
    type Err = CoreError;

    /// Space-separated elements; an AS set is `{a,b,c}` with no inner spaces.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut elements = Vec::new();
        for token in s.split_whitespace() {
            if let Some(inner) = token.strip_prefix('{') {
                let inner = inner.strip_suffix('}').ok_or_else(|| {
                    CoreError::InvalidArgument(format!("unclosed AS set {token:?}"))
                })?;
                let members = inner
                    .split(',')
                    .map(|m| {
                        m.parse::<u32>().map_err(|_| {
                            CoreError::InvalidArgument(format!("bad ASN {m:?} in set"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                elements.push(PathElement::set(members)?);
            } else {
                let asn = token
                    .parse::<u32>()
                    .map_err(|_| CoreError::InvalidArgument(format!("bad ASN {token:?}")))?;
                elements.push(PathElement::Asn(asn));
            }
        }
        AsPath::new(elements)
    }
}

impl<'de> Deserialize<'de> for AsPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let elements = Vec::<PathElement>::deserialize(deserializer)?;
        AsPath::new(elements).map_err(de::Error::custom)
    }
}

/// One RIB snapshot line: what `vantage` currently believes about `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RibEntry {
    pub vantage: Asn,
    pub prefix: Prefix,
    pub path: AsPath,
}

/// An observed divergence between the remembered and announced path for a
/// prefix at one vantage point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteChange {
    pub ts: i64,
    pub vantage: Asn,
    #[serde(rename = "prefix")]
    pub announced_prefix: Prefix,
    pub matched_prefix: Prefix,
    #[serde(rename = "hist_path")]
    pub historical_path: AsPath,
    #[serde(rename = "upd_path")]
    pub updated_path: AsPath,
}

//! Control messages between proxies, caches and the controller.
//!
//! They travel as in-process calls, but every message has a fixed field
//! layout and serializes to one JSON object so traces can show exactly what
//! was exchanged. Each carries a monotone sequence number (see [`Envelope`]).

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::httpsem::ContentName;

/// Address and port of a cache's serving endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheLocation {
    pub cache_id: u32,
    pub ip: Ipv4Addr,
    pub port: u16,
}

/// Inclusive port range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    pub first: u16,
    pub last: u16,
}

impl PortRange {
    pub fn new(first: u16, last: u16) -> Self {
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            usize::from(self.last - self.first) + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, port: u16) -> bool {
        (self.first..=self.last).contains(&port)
    }

    pub fn overlaps(&self, other: &PortRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.first <= other.last && other.first <= self.last
    }

    pub fn iter(&self) -> impl Iterator<Item = u16> {
        self.first..=self.last
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.first, self.last)
    }
}

/// Proxy → controller at start-up: ports usable as content handles, and
/// ports the proxy accepts redirected client sessions on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub proxy_id: u32,
    pub port_range: PortRange,
    pub listen_range: PortRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub proxy_id: u32,
    pub content_name: ContentName,
    pub client_ip: Ipv4Addr,
    pub client_port: u16,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
}

/// `cache_location` set: fetch from that cache. Otherwise fetch from the
/// origin, using `handle_port` as source port when one was allocated.
/// A handle comes back in both cases; on a hit it tags the proxy→cache
/// session so the egress rewrite can be installed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub cache_location: Option<CacheLocation>,
    pub handle_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Release {
    pub proxy_id: u32,
    pub handle_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetFilter {
    pub filename: ContentName,
    pub server_ip: Ipv4Addr,
    pub dst_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredAck {
    pub content_name: ContentName,
    pub cache_id: u32,
    pub server_ip: Ipv4Addr,
    pub dst_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// The stream ended incomplete, malformed, or with an error status.
    Discarded,
    /// A 206 chunk was captured but the file is not fully covered yet.
    Partial,
}

/// Cache → controller: the filter is done without a stored entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReleased {
    pub cache_id: u32,
    pub server_ip: Ipv4Addr,
    pub dst_port: u16,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Body {
    Register(Register),
    Query(Query),
    Reply(Reply),
    Release(Release),
    SetFilter(SetFilter),
    StoredAck(StoredAck),
    FilterReleased(FilterReleased),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Register(_) => "REGISTER",
            Body::Query(_) => "QUERY",
            Body::Reply(_) => "REPLY",
            Body::Release(_) => "RELEASE",
            Body::SetFilter(_) => "SET_FILTER",
            Body::StoredAck(_) => "STORED_ACK",
            Body::FilterReleased(_) => "FILTER_RELEASED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Envelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }
}

/// Hands out the monotone sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn wrap(&mut self, body: Body) -> Envelope {
        self.next += 1;
        Envelope { seq: self.next, body }
    }

    pub fn last(&self) -> u64 {
        self.next
    }
}

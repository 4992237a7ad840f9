//! Event trace shared by every simulated component.
//!
//! One line per event, tab separated: `time component event detail`. Packet
//! hops are recorded too but flagged so that non-verbose dumps can skip them.
//! A few events additionally carry a [`Milestone`], a structured timestamp the
//! delay analysis reads back without parsing text.

use std::fmt;
use std::net::SocketAddrV4;

use sha2::{Digest, Sha256};

use crate::netmodel::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Milestone {
    /// Client issued a request (its SYN left the host).
    ClientStart { request: u32, local: SocketAddrV4 },
    /// Last response byte reached the client.
    ClientDone {
        request: u32,
        local: SocketAddrV4,
        bytes: u64,
    },
    /// The proxy holds the complete request header from `client`.
    ProxyRequest { client: SocketAddrV4, bytes: u64 },
    /// The proxy opened its upstream session (SYN sent).
    ProxyUpstream {
        client: SocketAddrV4,
        local: SocketAddrV4,
        remote: SocketAddrV4,
    },
    /// The upstream response is complete at the proxy.
    ProxyUpstreamDone { local: SocketAddrV4, bytes: u64 },
    /// A responder (origin or cache) received a complete request and sent its reply.
    Served {
        local: SocketAddrV4,
        peer: SocketAddrV4,
        request_bytes: u64,
        response_bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: Time,
    pub component: String,
    pub event: String,
    pub detail: String,
    pub packet: bool,
    pub milestone: Option<Milestone>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.time, self.component, self.event, self.detail)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        time: Time,
        component: impl Into<String>,
        event: impl Into<String>,
        detail: impl Into<String>,
    ) {
        self.events.push(TraceEvent {
            time,
            component: component.into(),
            event: event.into(),
            detail: detail.into(),
            packet: false,
            milestone: None,
        });
    }

    pub fn packet(
        &mut self,
        time: Time,
        component: impl Into<String>,
        event: impl Into<String>,
        detail: impl Into<String>,
    ) {
        self.events.push(TraceEvent {
            time,
            component: component.into(),
            event: event.into(),
            detail: detail.into(),
            packet: true,
            milestone: None,
        });
    }

    pub fn milestone(&mut self, time: Time, component: impl Into<String>, milestone: Milestone) {
        self.events.push(TraceEvent {
            time,
            component: component.into(),
            event: "milestone".into(),
            detail: format!("{milestone:?}"),
            packet: false,
            milestone: Some(milestone),
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn milestones(&self) -> impl Iterator<Item = (Time, &Milestone)> {
        self.events
            .iter()
            .filter_map(|e| e.milestone.as_ref().map(|m| (e.time, m)))
    }

    /// Events whose `event` column equals `name`.
    pub fn find<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.event == name)
    }

    /// SHA-256 over every rendered line, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for event in &self.events {
            hasher.update(event.to_string().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn render(&self, verbose: bool) -> String {
        let mut out = String::new();
        for event in self.events.iter().filter(|e| verbose || !e.packet) {
            out.push_str(&event.to_string());
            out.push('\n');
        }
        out
    }
}

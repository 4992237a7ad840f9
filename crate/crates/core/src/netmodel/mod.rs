//! Deterministic discrete-event network simulator.
//!
//! Time is an integer count of abstract units. Links have a one-way
//! propagation delay and a serialization rate in bytes per unit; each link
//! direction is a FIFO channel. Hosts run a small TCP-like stack
//! ([`tcp::TcpStack`]) and an application; switches run the flow tables from
//! [`crate::switchfab`] and escalate misses to a [`ControlPlane`].

use std::fmt;

use thiserror::Error;

mod link;
mod packet;
mod queue;
mod sim;
pub mod tcp;
mod topology;

pub use link::{Direction, FaultKind, LinkFault, Transmission, Trigger};
pub use packet::{SimPacket, TcpFlags};
pub use queue::EventQueue;
pub use sim::{Application, ControlEnv, ControlPlane, Host, HostCtx, Simulator, DEFAULT_MSS};
pub use topology::{Hop, Link, LinkId, NodeInfo, Port, Topology};

/// Simulated time in abstract integer units.
pub type Time = u64;

/// Switch port number; 1-based, assigned in link declaration order.
pub type PortNo = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Host,
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub id: u32,
    pub kind: NodeKind,
}

impl NodeId {
    pub fn is_switch(self) -> bool {
        self.kind == NodeKind::Switch
    }

    pub fn is_host(self) -> bool {
        self.kind == NodeKind::Host
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Host => write!(f, "h{}", self.id),
            NodeKind::Switch => write!(f, "s{}", self.id),
        }
    }
}

/// What a host does in a scenario. Switches have no role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HostRole {
    Client,
    Server,
    Proxy,
    Cache,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown link {0}")]
    UnknownLink(u32),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate node name {0}")]
    DuplicateName(String),
    #[error("duplicate address {0}")]
    DuplicateAddress(std::net::Ipv4Addr),
    #[error("link endpoints must be distinct")]
    SelfLink,
    #[error("link rate must be positive")]
    ZeroRate,
    #[error("host {0} already has a link")]
    HostAlreadyLinked(String),
    #[error("node {node} is not attached to link {link}")]
    NotAttached { node: String, link: u32 },
    #[error("invalid packet: {0}")]
    InvalidPacket(String),
    #[error("local port {0} already in use")]
    PortInUse(u16),
    #[error("no free ephemeral port")]
    PortsExhausted,
    #[error("connection {0} is not open")]
    NotOpen(u64),
}

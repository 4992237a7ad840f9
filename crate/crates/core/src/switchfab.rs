//! Match/action switches.
//!
//! Each switch has a flow table evaluated highest priority first, older rule
//! first on ties. A table miss parks the packet in a per-switch buffer and
//! reports it for escalation; installing rules later releases any parked
//! packet that now matches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};

use thiserror::Error;

use crate::netmodel::{NodeId, PortNo, SimPacket, Topology};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchFields {
    pub src_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_ip: Option<Ipv4Addr>,
    pub dst_port: Option<u16>,
}

impl MatchFields {
    pub fn dst_ip(ip: Ipv4Addr) -> Self {
        Self {
            dst_ip: Some(ip),
            ..Self::default()
        }
    }

    pub fn between(src: SocketAddrV4, dst: SocketAddrV4) -> Self {
        Self {
            src_ip: Some(*src.ip()),
            src_port: Some(src.port()),
            dst_ip: Some(*dst.ip()),
            dst_port: Some(dst.port()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.src_ip.is_none() && self.src_port.is_none() && self.dst_ip.is_none() && self.dst_port.is_none()
    }

    pub fn matches(&self, pkt: &SimPacket) -> bool {
        self.src_ip.is_none_or(|ip| ip == *pkt.src.ip())
            && self.src_port.is_none_or(|p| p == pkt.src.port())
            && self.dst_ip.is_none_or(|ip| ip == *pkt.dst.ip())
            && self.dst_port.is_none_or(|p| p == pkt.dst.port())
    }
}

impl fmt::Display for MatchFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let any = |v: Option<String>| v.unwrap_or_else(|| "*".into());
        write!(
            f,
            "{}:{}>{}:{}",
            any(self.src_ip.map(|v| v.to_string())),
            any(self.src_port.map(|v| v.to_string())),
            any(self.dst_ip.map(|v| v.to_string())),
            any(self.dst_port.map(|v| v.to_string())),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Output(PortNo),
    RewriteDst(SocketAddrV4),
    RewriteSrc(SocketAddrV4),
    /// Emit a copy of the packet as it stands at this point in the list.
    Duplicate(PortNo),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Output(p) => write!(f, "output({p})"),
            Action::RewriteDst(a) => write!(f, "rewrite_dst({a})"),
            Action::RewriteSrc(a) => write!(f, "rewrite_src({a})"),
            Action::Duplicate(p) => write!(f, "duplicate({p})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRule {
    pub priority: u16,
    pub matches: MatchFields,
    pub actions: Vec<Action>,
    /// Installed once and kept for the life of the run.
    pub is_static: bool,
}

impl FlowRule {
    pub fn new(priority: u16, matches: MatchFields, actions: Vec<Action>) -> Self {
        Self {
            priority,
            matches,
            actions,
            is_static: false,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.is_static = true;
        self
    }
}

impl fmt::Display for FlowRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prio={} match={} actions=[", self.priority, self.matches)?;
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("]")?;
        if self.is_static {
            f.write_str(" static")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("{0} is not a switch in this fabric")]
    UnknownSwitch(NodeId),
    #[error("switch {switch} has no port {port}")]
    NoSuchPort { switch: NodeId, port: PortNo },
    #[error("rule must set at least one match field")]
    EmptyMatch,
}

/// What happened to a packet offered to a switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Emit(Vec<(PortNo, SimPacket)>),
    /// No rule matched; the packet is parked under this buffer id.
    Miss(u64),
}

#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    /// Kept in evaluation order: priority descending, then installation order.
    rules: Vec<(u64, FlowRule)>,
}

impl FlowTable {
    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.iter().map(|(_, r)| r)
    }

    pub fn lookup(&self, pkt: &SimPacket) -> Option<&FlowRule> {
        self.rules().find(|r| r.matches.matches(pkt))
    }

    fn install(&mut self, seq: u64, rule: FlowRule) {
        if let Some(slot) = self
            .rules
            .iter_mut()
            .find(|(_, r)| r.priority == rule.priority && r.matches == rule.matches)
        {
            slot.1 = rule;
            return;
        }
        let at = self
            .rules
            .iter()
            .position(|(_, r)| r.priority < rule.priority)
            .unwrap_or(self.rules.len());
        self.rules.insert(at, (seq, rule));
    }

    fn remove(&mut self, matches: &MatchFields, priority: Option<u16>) -> usize {
        let before = self.rules.len();
        self.rules
            .retain(|(_, r)| !(r.matches == *matches && priority.is_none_or(|p| p == r.priority)));
        before - self.rules.len()
    }
}

/// Applies a rule's actions to `pkt` in order.
pub fn apply_actions(actions: &[Action], pkt: &SimPacket) -> Vec<(PortNo, SimPacket)> {
    let mut work = pkt.clone();
    let mut out = Vec::new();
    for action in actions {
        match *action {
            Action::Output(port) | Action::Duplicate(port) => out.push((port, work.clone())),
            Action::RewriteDst(addr) => work.dst = addr,
            Action::RewriteSrc(addr) => work.src = addr,
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Parked {
    id: u64,
    in_port: PortNo,
    packet: SimPacket,
}

/// Every switch's table plus the packets parked on a miss.
#[derive(Debug, Clone, Default)]
pub struct Fabric {
    tables: BTreeMap<NodeId, FlowTable>,
    ports: BTreeMap<NodeId, BTreeSet<PortNo>>,
    parked: BTreeMap<NodeId, Vec<Parked>>,
    next_seq: u64,
}

impl Fabric {
    pub fn new(topo: &Topology) -> Self {
        let mut fabric = Self::default();
        for sw in topo.switches() {
            fabric.tables.insert(sw, FlowTable::default());
            fabric.ports.insert(sw, topo.ports(sw).iter().map(|p| p.no).collect());
        }
        fabric
    }

    pub fn table(&self, switch: NodeId) -> Option<&FlowTable> {
        self.tables.get(&switch)
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.tables.keys().copied()
    }

    pub fn rule_count(&self) -> usize {
        self.tables.values().map(|t| t.rules.len()).sum()
    }

    pub fn parked_count(&self) -> usize {
        self.parked.values().map(Vec::len).sum()
    }

    /// Adds `rule`, replacing any rule with identical match and priority.
    pub fn install_rule(&mut self, switch: NodeId, rule: FlowRule) -> Result<(), FabricError> {
        let ports = self.ports.get(&switch).ok_or(FabricError::UnknownSwitch(switch))?;
        if rule.matches.is_empty() {
            return Err(FabricError::EmptyMatch);
        }
        for action in &rule.actions {
            if let Action::Output(port) | Action::Duplicate(port) = *action {
                if !ports.contains(&port) {
                    return Err(FabricError::NoSuchPort { switch, port });
                }
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.tables
            .get_mut(&switch)
            .expect("ports and tables agree")
            .install(seq, rule);
        Ok(())
    }

    /// Removes rules with exactly this match (and priority, when given).
    pub fn remove_rule(
        &mut self,
        switch: NodeId,
        matches: &MatchFields,
        priority: Option<u16>,
    ) -> Result<usize, FabricError> {
        let table = self.tables.get_mut(&switch).ok_or(FabricError::UnknownSwitch(switch))?;
        Ok(table.remove(matches, priority))
    }

    pub fn process(&mut self, switch: NodeId, in_port: PortNo, packet: SimPacket) -> Result<Verdict, FabricError> {
        let table = self.tables.get(&switch).ok_or(FabricError::UnknownSwitch(switch))?;
        if let Some(rule) = table.lookup(&packet) {
            return Ok(Verdict::Emit(apply_actions(&rule.actions, &packet)));
        }
        let id = self.next_seq;
        self.next_seq += 1;
        self.parked
            .entry(switch)
            .or_default()
            .push(Parked { id, in_port, packet });
        Ok(Verdict::Miss(id))
    }

    /// Drops a parked packet the controller refused to handle.
    pub fn discard(&mut self, switch: NodeId, id: u64) -> Option<SimPacket> {
        let parked = self.parked.get_mut(&switch)?;
        let at = parked.iter().position(|p| p.id == id)?;
        Some(parked.remove(at).packet)
    }

    /// Re-runs every parked packet against the current tables, returning the
    /// emissions of those that now match, in parking order per switch.
    pub fn reevaluate(&mut self) -> Vec<(NodeId, PortNo, SimPacket)> {
        let mut out = Vec::new();
        for (switch, parked) in self.parked.iter_mut() {
            let table = &self.tables[switch];
            parked.retain(|p| match table.lookup(&p.packet) {
                Some(rule) => {
                    out.extend(
                        apply_actions(&rule.actions, &p.packet)
                            .into_iter()
                            .map(|(port, pkt)| (*switch, port, pkt)),
                    );
                    false
                }
                None => true,
            });
        }
        out
    }

    /// Where a parked packet entered, for diagnostics.
    pub fn parked_in_port(&self, switch: NodeId, id: u64) -> Option<PortNo> {
        self.parked.get(&switch)?.iter().find(|p| p.id == id).map(|p| p.in_port)
    }
}

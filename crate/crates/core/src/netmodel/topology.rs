use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::Ipv4Addr;

use super::{HostRole, NetError, NodeId, NodeKind, PortNo, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub id: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub one_way_delay: Time,
    /// Bytes per time unit.
    pub rate: u64,
}

impl Link {
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        match self.endpoints {
            (a, b) if a == node => Some(b),
            (a, b) if b == node => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub name: String,
    pub ip: Option<Ipv4Addr>,
    pub role: Option<HostRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub no: PortNo,
    pub link: LinkId,
    pub peer: NodeId,
}

/// One traversal of a link in a given direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub delay: Time,
    pub rate: u64,
}

/// Nodes and links. Hosts attach through exactly one link and never forward;
/// routes are shortest paths in hops with ties broken toward the smaller
/// neighbour id (then smaller port number).
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: Vec<NodeInfo>,
    links: Vec<Link>,
    ports: BTreeMap<NodeId, Vec<Port>>,
    by_name: HashMap<String, NodeId>,
    by_ip: HashMap<Ipv4Addr, NodeId>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_node(
        &mut self,
        name: &str,
        kind: NodeKind,
        ip: Option<Ipv4Addr>,
        role: Option<HostRole>,
    ) -> Result<NodeId, NetError> {
        if self.by_name.contains_key(name) {
            return Err(NetError::DuplicateName(name.to_string()));
        }
        if let Some(ip) = ip {
            if self.by_ip.contains_key(&ip) {
                return Err(NetError::DuplicateAddress(ip));
            }
        }
        let id = NodeId {
            id: self.nodes.len() as u32 + 1,
            kind,
        };
        self.nodes.push(NodeInfo {
            id,
            name: name.to_string(),
            ip,
            role,
        });
        self.by_name.insert(name.to_string(), id);
        if let Some(ip) = ip {
            self.by_ip.insert(ip, id);
        }
        self.ports.insert(id, Vec::new());
        Ok(id)
    }

    pub fn add_switch(&mut self, name: &str) -> Result<NodeId, NetError> {
        self.add_node(name, NodeKind::Switch, None, None)
    }

    pub fn add_host(&mut self, name: &str, ip: Ipv4Addr, role: HostRole) -> Result<NodeId, NetError> {
        self.add_node(name, NodeKind::Host, Some(ip), Some(role))
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, one_way_delay: Time, rate: u64) -> Result<LinkId, NetError> {
        if a == b {
            return Err(NetError::SelfLink);
        }
        if rate == 0 {
            return Err(NetError::ZeroRate);
        }
        for n in [a, b] {
            let ports = self.ports.get(&n).ok_or_else(|| NetError::UnknownNode(n.to_string()))?;
            if n.is_host() && !ports.is_empty() {
                return Err(NetError::HostAlreadyLinked(self.name(n).to_string()));
            }
        }
        let id = LinkId(self.links.len() as u32);
        self.links.push(Link {
            id,
            endpoints: (a, b),
            one_way_delay,
            rate,
        });
        for (n, peer) in [(a, b), (b, a)] {
            let ports = self.ports.get_mut(&n).expect("checked above");
            let no = ports.len() as PortNo + 1;
            ports.push(Port { no, link: id, peer });
        }
        Ok(id)
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeInfo> {
        self.nodes.get(id.id.checked_sub(1)? as usize).filter(|n| n.id == id)
    }

    pub fn name(&self, id: NodeId) -> &str {
        self.node(id).map(|n| n.name.as_str()).unwrap_or("?")
    }

    pub fn by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn by_ip(&self, ip: Ipv4Addr) -> Option<NodeId> {
        self.by_ip.get(&ip).copied()
    }

    pub fn ip(&self, id: NodeId) -> Option<Ipv4Addr> {
        self.node(id)?.ip
    }

    pub fn role(&self, id: NodeId) -> Option<HostRole> {
        self.node(id)?.role
    }

    pub fn hosts_with_role(&self, role: HostRole) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.iter().filter(move |n| n.role == Some(role))
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id).filter(|id| id.is_switch())
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id.0 as usize)
    }

    pub fn ports(&self, node: NodeId) -> &[Port] {
        self.ports.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn port(&self, node: NodeId, no: PortNo) -> Option<Port> {
        self.ports(node).iter().find(|p| p.no == no).copied()
    }

    /// The switch a host hangs off, if its single link goes to a switch.
    pub fn attachment(&self, host: NodeId) -> Option<NodeId> {
        self.ports(host).first().map(|p| p.peer).filter(|n| n.is_switch())
    }

    /// Hop distances from `origin` to every reachable node. Hosts other than
    /// the origin are leaves: reached, never expanded.
    pub fn hop_distances(&self, origin: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(origin, 0);
        queue.push_back(origin);
        while let Some(u) = queue.pop_front() {
            if u != origin && u.is_host() {
                continue;
            }
            let du = dist[&u];
            for port in self.ports(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(port.peer) {
                    e.insert(du + 1);
                    queue.push_back(port.peer);
                }
            }
        }
        dist
    }

    pub fn hops(&self, from: NodeId, to: NodeId) -> Option<u32> {
        self.hop_distances(to).get(&from).copied()
    }

    fn next_hop_with(&self, node: NodeId, dst: NodeId, dist: &BTreeMap<NodeId, u32>) -> Option<Port> {
        let here = *dist.get(&node)?;
        if here == 0 {
            return None;
        }
        self.ports(node)
            .iter()
            .filter(|p| dist.get(&p.peer) == Some(&(here - 1)))
            .filter(|p| p.peer == dst || p.peer.is_switch())
            .min_by_key(|p| (p.peer, p.no))
            .copied()
    }

    /// Port on `node` leading one hop closer to `dst`.
    pub fn next_hop(&self, node: NodeId, dst: NodeId) -> Option<Port> {
        let dist = self.hop_distances(dst);
        self.next_hop_with(node, dst, &dist)
    }

    /// The routed path from `src` to `dst`, following [`Self::next_hop`].
    pub fn route(&self, src: NodeId, dst: NodeId) -> Option<Vec<Hop>> {
        let dist = self.hop_distances(dst);
        let mut hops = Vec::new();
        let mut at = src;
        while at != dst {
            let port = self.next_hop_with(at, dst, &dist)?;
            let link = self.link(port.link)?;
            hops.push(Hop {
                link: link.id,
                from: at,
                to: port.peer,
                delay: link.one_way_delay,
                rate: link.rate,
            });
            at = port.peer;
        }
        Some(hops)
    }

    /// Switches visited on the routed path from `src` to `dst`, in order.
    pub fn switches_on_route(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let route = self.route(src, dst)?;
        Some(route.iter().map(|h| h.to).filter(|n| n.is_switch()).collect())
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes.first() {
            None => true,
            Some(first) => {
                // Hosts are leaves, so start from a switch when one exists.
                let start = self.switches().next().unwrap_or(first.id);
                self.hop_distances(start).len() == self.nodes.len()
            }
        }
    }
}

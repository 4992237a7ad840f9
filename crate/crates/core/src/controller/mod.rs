//! The content-management controller.
//!
//! It owns the per-proxy handle pools, the cache dictionary (content name →
//! cache holding it), the request dictionary ((server, handle) → content
//! name), the caching policy, and all rule installation on the fabric:
//!
//! * plain forwarding, installed reactively on packet-in;
//! * the static redirect pair at a client's ingress switch that steers its
//!   port-80 sessions to the proxy and restores the server as source on the
//!   way back;
//! * per-transfer rules installed at query time: the egress source restore
//!   for the client session, and the fork that duplicates the
//!   server→proxy stream toward the chosen cache.
//!
//! Every mutation is followed by an audit of the state invariants; any
//! violation is kept in [`Controller::violations`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::net::{Ipv4Addr, SocketAddrV4};

use thiserror::Error;

use crate::httpsem::ContentName;
use crate::msg::{
    Body, CacheLocation, DiscardReason, Envelope, FilterReleased, PortRange, Query, Register, Reply, Sequencer,
    SetFilter, StoredAck,
};
use crate::netmodel::{ControlEnv, ControlPlane, HostRole, NodeId, PortNo, SimPacket, Time, Topology};
use crate::switchfab::{Action, Fabric, FlowRule, MatchFields};

mod policy;
mod pool;
mod routing;

pub use policy::{Admission, CacheCandidate, CachePolicy, Selection, StandardPolicy};
pub use pool::{PoolError, PortPool};
pub use routing::compute_fork_switch;

pub const PRIO_ROUTE: u16 = 1;
pub const PRIO_REDIRECT: u16 = 10;
pub const PRIO_FORK: u16 = 20;
pub const PRIO_RESTORE: u16 = 30;

pub const HTTP_PORT: u16 = 80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("proxy {0} already registered")]
    DuplicateProxy(u32),
    #[error("range {0} overlaps a range already registered")]
    OverlappingRange(PortRange),
    #[error("unknown proxy {0}")]
    UnknownProxy(u32),
    #[error("controller unavailable")]
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Forwarding only: no redirection, no content handling.
    Direct,
    /// Redirect client HTTP sessions through the proxy.
    ContentFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingState {
    Live,
    Released,
}

/// A handle's lease: which content it carries, for which client and server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandleMapping {
    pub content_name: ContentName,
    pub client: SocketAddrV4,
    pub server: SocketAddrV4,
    pub proxy_id: u32,
    pub handle: u16,
    pub state: MappingState,
    /// Where the content is fetched from: `None` means the origin.
    pub source: Option<CacheLocation>,
    pub allocated_at: Time,
    pub released_at: Option<Time>,
}

#[derive(Debug, Clone)]
struct Lease {
    mapping: HandleMapping,
    /// Rules to delete when the lease ends.
    session_rules: Vec<(NodeId, MatchFields, u16)>,
    fork_rules: Vec<(NodeId, MatchFields, u16)>,
    /// A cache is capturing this transfer and has not reported back.
    filter_cache: Option<u32>,
    release_requested: bool,
}

#[derive(Debug, Clone)]
struct ProxyRecord {
    node: NodeId,
    ip: Ipv4Addr,
    handles: PortPool,
    listen: PortPool,
    /// Redirect listen port for each (client ip, original server).
    redirects: BTreeMap<(Ipv4Addr, SocketAddrV4), u16>,
}

#[derive(Debug, Clone, Copy)]
struct CacheRecord {
    node: NodeId,
    location: CacheLocation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub queries: u64,
    pub hits: u64,
    pub misses: u64,
    pub pool_exhausted: u64,
    pub forks: u64,
    pub stored_acks: u64,
    pub filters_released: u64,
    pub releases: u64,
    pub packet_ins: u64,
    pub refused: u64,
}

/// Read-only view for assertions and dumps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub cache_dictionary: BTreeMap<ContentName, CacheLocation>,
    pub request_dictionary: BTreeMap<(Ipv4Addr, u16), ContentName>,
    pub live: Vec<HandleMapping>,
    /// proxy id → (free, in use)
    pub pools: BTreeMap<u32, (usize, Vec<u16>)>,
    pub counters: Counters,
}

pub struct Controller {
    mode: Mode,
    available: bool,
    policy: Box<dyn CachePolicy>,
    proxies: BTreeMap<u32, ProxyRecord>,
    caches: BTreeMap<u32, CacheRecord>,
    cache_dictionary: HashMap<ContentName, CacheLocation>,
    request_dictionary: BTreeMap<(Ipv4Addr, u16), ContentName>,
    leases: BTreeMap<(u32, u16), Lease>,
    history: Vec<HandleMapping>,
    notices: Vec<(NodeId, Envelope)>,
    seq: Sequencer,
    counters: Counters,
    violations: Vec<String>,
}

impl Controller {
    pub fn new(mode: Mode, policy: Box<dyn CachePolicy>) -> Self {
        Self {
            mode,
            available: true,
            policy,
            proxies: BTreeMap::new(),
            caches: BTreeMap::new(),
            cache_dictionary: HashMap::new(),
            request_dictionary: BTreeMap::new(),
            leases: BTreeMap::new(),
            history: Vec::new(),
            notices: Vec::new(),
            seq: Sequencer::default(),
            counters: Counters::default(),
            violations: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// While unavailable, queries fail and proxies fall back to plain relaying.
    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    pub fn add_cache(&mut self, cache_id: u32, node: NodeId, ip: Ipv4Addr) {
        self.caches.insert(
            cache_id,
            CacheRecord {
                node,
                location: CacheLocation {
                    cache_id,
                    ip,
                    port: HTTP_PORT,
                },
            },
        );
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Every mapping ever allocated, released ones included, in allocation order.
    pub fn mappings(&self) -> Vec<HandleMapping> {
        let mut all = self.history.clone();
        all.extend(self.leases.values().map(|l| l.mapping.clone()));
        all.sort_by_key(|m| (m.allocated_at, m.proxy_id, m.handle, m.released_at));
        all
    }

    pub fn live_mappings(&self) -> impl Iterator<Item = &HandleMapping> {
        self.leases.values().map(|l| &l.mapping)
    }

    pub fn lookup_cache(&self, name: &ContentName) -> Option<CacheLocation> {
        self.cache_dictionary.get(name).copied()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            cache_dictionary: self.cache_dictionary.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            request_dictionary: self.request_dictionary.clone(),
            live: self.live_mappings().cloned().collect(),
            pools: self
                .proxies
                .iter()
                .map(|(id, p)| (*id, (p.handles.free_count(), p.handles.in_use().collect())))
                .collect(),
            counters: self.counters.clone(),
        }
    }

    /// Human-readable dump of dictionaries, pools and installed rules.
    pub fn dump(&self, topo: &Topology, fabric: &Fabric) -> String {
        let snap = self.snapshot();
        let mut out = String::new();
        let _ = writeln!(out, "policy\t{}", self.policy.describe());
        for (name, loc) in &snap.cache_dictionary {
            let _ = writeln!(
                out,
                "cache_dictionary\t{name}\tcache{}@{}:{}",
                loc.cache_id, loc.ip, loc.port
            );
        }
        for ((ip, port), name) in &snap.request_dictionary {
            let _ = writeln!(out, "request_dictionary\t{ip}:{port}\t{name}");
        }
        for (id, (free, used)) in &snap.pools {
            let _ = writeln!(out, "pool\tproxy{id}\tfree={free}\tin_use={used:?}");
        }
        for m in &snap.live {
            let _ = writeln!(
                out,
                "live\tproxy{}:{}\t{}\t{}\t{}",
                m.proxy_id, m.handle, m.content_name, m.client, m.server
            );
        }
        for sw in fabric.switches() {
            for rule in fabric.table(sw).into_iter().flat_map(|t| t.rules()) {
                let _ = writeln!(out, "rule\t{}\t{rule}", topo.name(sw));
            }
        }
        let _ = writeln!(out, "counters\t{:?}", snap.counters);
        out
    }

    fn log_msg(&mut self, env: &mut ControlEnv<'_>, dir: &str, body: Body) -> Envelope {
        let envelope = self.seq.wrap(body);
        env.trace.record(
            env.now,
            "controller",
            format!("{dir} {}", envelope.body.kind()),
            envelope.to_json(),
        );
        envelope
    }

    fn install(&mut self, env: &mut ControlEnv<'_>, switch: NodeId, rule: FlowRule, why: &str) -> bool {
        let text = format!("{} {rule} ({why})", env.topo.name(switch));
        match env.fabric.install_rule(switch, rule) {
            Ok(()) => {
                env.trace.record(env.now, "controller", "install", text);
                true
            }
            Err(e) => {
                env.trace
                    .record(env.now, "controller", "install_failed", format!("{text}: {e}"));
                false
            }
        }
    }

    fn remove(&mut self, env: &mut ControlEnv<'_>, rules: Vec<(NodeId, MatchFields, u16)>, why: &str) {
        for (sw, m, prio) in rules {
            if env.fabric.remove_rule(sw, &m, Some(prio)).unwrap_or(0) > 0 {
                env.trace.record(
                    env.now,
                    "controller",
                    "remove",
                    format!("{} prio={prio} match={m} ({why})", env.topo.name(sw)),
                );
            }
        }
    }

    // ---- registration -------------------------------------------------

    pub fn register_proxy(
        &mut self,
        env: &mut ControlEnv<'_>,
        node: NodeId,
        reg: Register,
    ) -> Result<(), ControllerError> {
        self.log_msg(env, "recv", Body::Register(reg.clone()));
        if self.proxies.contains_key(&reg.proxy_id) {
            return Err(ControllerError::DuplicateProxy(reg.proxy_id));
        }
        let handles = PortPool::new(reg.port_range)?;
        let listen = PortPool::new(reg.listen_range)?;
        if reg.port_range.overlaps(&reg.listen_range) {
            return Err(ControllerError::OverlappingRange(reg.listen_range));
        }
        // Handles must be unique across proxies so (server, handle) alone
        // identifies a transfer at the caches.
        if self
            .proxies
            .values()
            .any(|p| p.handles.range().overlaps(&reg.port_range))
        {
            return Err(ControllerError::OverlappingRange(reg.port_range));
        }
        let ip = env.topo.ip(node).ok_or(ControllerError::UnknownProxy(reg.proxy_id))?;
        self.proxies.insert(
            reg.proxy_id,
            ProxyRecord {
                node,
                ip,
                handles,
                listen,
                redirects: BTreeMap::new(),
            },
        );
        self.audit(env.now);
        Ok(())
    }

    pub fn pool(&self, proxy_id: u32) -> Option<&PortPool> {
        self.proxies.get(&proxy_id).map(|p| &p.handles)
    }

    /// The server a client originally addressed, given the proxy port the
    /// session was redirected to.
    pub fn original_destination(&self, proxy_id: u32, listen_port: u16, client_ip: Ipv4Addr) -> Option<SocketAddrV4> {
        self.proxies
            .get(&proxy_id)?
            .redirects
            .iter()
            .find(|((ip, _), port)| *ip == client_ip && **port == listen_port)
            .map(|((_, server), _)| *server)
    }

    // ---- forwarding and redirection -----------------------------------

    fn nearest_proxy(&self, topo: &Topology, switch: NodeId) -> Option<u32> {
        let dist = topo.hop_distances(switch);
        self.proxies
            .iter()
            .filter_map(|(id, p)| dist.get(&p.node).map(|d| (*d, *id)))
            .min()
            .map(|(_, id)| id)
    }

    fn is_client_ingress(topo: &Topology, switch: NodeId, src: Ipv4Addr) -> bool {
        topo.by_ip(src)
            .filter(|h| topo.role(*h) == Some(HostRole::Client))
            .and_then(|h| topo.attachment(h))
            == Some(switch)
    }

    fn serves_clients(topo: &Topology, switch: NodeId) -> bool {
        topo.hosts_with_role(HostRole::Client)
            .any(|h| topo.attachment(h.id) == Some(switch))
    }

    fn try_redirect(&mut self, env: &mut ControlEnv<'_>, switch: NodeId, packet: &SimPacket) -> bool {
        let client_ip = *packet.src.ip();
        let server = packet.dst;
        let Some(proxy_id) = self.nearest_proxy(env.topo, switch) else {
            return false;
        };
        let proxy = self.proxies.get_mut(&proxy_id).expect("nearest exists");
        let (proxy_ip, proxy_node) = (proxy.ip, proxy.node);
        let listen_port = match proxy.redirects.get(&(client_ip, server)) {
            Some(p) => *p,
            None => match proxy.listen.allocate() {
                Some(p) => {
                    proxy.redirects.insert((client_ip, server), p);
                    p
                }
                None => {
                    env.trace.record(
                        env.now,
                        "controller",
                        "redirect_exhausted",
                        format!("proxy{proxy_id} {client_ip}->{server}"),
                    );
                    return false;
                }
            },
        };
        let (Some(to_proxy), Some(client_node)) = (env.topo.next_hop(switch, proxy_node), env.topo.by_ip(client_ip))
        else {
            return false;
        };
        let Some(to_client) = env.topo.next_hop(switch, client_node) else {
            return false;
        };
        let proxy_addr = SocketAddrV4::new(proxy_ip, listen_port);
        let forward = FlowRule::new(
            PRIO_REDIRECT,
            MatchFields {
                src_ip: Some(client_ip),
                dst_ip: Some(*server.ip()),
                dst_port: Some(server.port()),
                ..MatchFields::default()
            },
            vec![Action::RewriteDst(proxy_addr), Action::Output(to_proxy.no)],
        )
        .fixed();
        let reverse = FlowRule::new(
            PRIO_REDIRECT,
            MatchFields {
                src_ip: Some(proxy_ip),
                src_port: Some(listen_port),
                dst_ip: Some(client_ip),
                ..MatchFields::default()
            },
            vec![Action::RewriteSrc(server), Action::Output(to_client.no)],
        )
        .fixed();
        self.install(env, switch, forward, "redirect to proxy")
            && self.install(env, switch, reverse, "restore server on replies")
    }

    fn install_route(&mut self, env: &mut ControlEnv<'_>, switch: NodeId, packet: &SimPacket) -> bool {
        let Some(dst) = env.topo.by_ip(*packet.dst.ip()) else {
            return false;
        };
        let Some(port) = env.topo.next_hop(switch, dst) else {
            return false;
        };
        // Where clients attach, routes are pinned to source and destination
        // port, so a later client's first packet toward port 80 still misses
        // and can be redirected.
        let matches = if Self::serves_clients(env.topo, switch) {
            MatchFields {
                src_ip: Some(*packet.src.ip()),
                dst_ip: Some(*packet.dst.ip()),
                dst_port: Some(packet.dst.port()),
                ..MatchFields::default()
            }
        } else {
            MatchFields::dst_ip(*packet.dst.ip())
        };
        self.install(
            env,
            switch,
            FlowRule::new(PRIO_ROUTE, matches, vec![Action::Output(port.no)]).fixed(),
            "route",
        )
    }

    // ---- queries ------------------------------------------------------

    fn candidates(&self) -> Vec<CacheCandidate> {
        self.caches
            .keys()
            .map(|id| CacheCandidate {
                cache_id: *id,
                entries: self.cache_dictionary.values().filter(|l| l.cache_id == *id).count(),
            })
            .collect()
    }

    /// Answers a proxy's content query. On a hit the reply names the cache;
    /// on a miss it carries the handle to use toward the origin (none if the
    /// pool is exhausted), and caching rules are set up when the policy
    /// agrees.
    pub fn handle_query(&mut self, env: &mut ControlEnv<'_>, q: Query) -> Result<Reply, ControllerError> {
        if !self.available {
            env.trace
                .record(env.now, "controller", "unavailable", q.content_name.to_string());
            return Err(ControllerError::Unavailable);
        }
        self.log_msg(env, "recv", Body::Query(q.clone()));
        if !self.proxies.contains_key(&q.proxy_id) {
            return Err(ControllerError::UnknownProxy(q.proxy_id));
        }
        self.counters.queries += 1;
        self.policy.record_request(&q.content_name);
        let client = SocketAddrV4::new(q.client_ip, q.client_port);
        let server = SocketAddrV4::new(q.server_ip, q.server_port);
        let hit = self.cache_dictionary.get(&q.content_name).copied();
        if hit.is_some() {
            self.counters.hits += 1;
        } else {
            self.counters.misses += 1;
        }

        let proxy = self.proxies.get_mut(&q.proxy_id).expect("checked");
        let proxy_ip = proxy.ip;
        let listen_port = proxy
            .redirects
            .iter()
            .find(|((ip, srv), _)| *ip == q.client_ip && *srv == server)
            .map(|(_, p)| *p);
        let Some(handle) = proxy.handles.allocate() else {
            self.counters.pool_exhausted += 1;
            let reply = Reply {
                cache_location: hit,
                handle_port: None,
            };
            self.log_msg(env, "send", Body::Reply(reply.clone()));
            self.audit(env.now);
            return Ok(reply);
        };

        let mut lease = Lease {
            mapping: HandleMapping {
                content_name: q.content_name.clone(),
                client,
                server,
                proxy_id: q.proxy_id,
                handle,
                state: MappingState::Live,
                source: hit,
                allocated_at: env.now,
                released_at: None,
            },
            session_rules: Vec::new(),
            fork_rules: Vec::new(),
            filter_cache: None,
            release_requested: false,
        };
        self.request_dictionary
            .insert((q.server_ip, handle), q.content_name.clone());
        env.trace.record(
            env.now,
            "controller",
            "allocate",
            format!(
                "proxy{} handle={handle} name={} client={client}",
                q.proxy_id, q.content_name
            ),
        );

        // Egress restore for this client session: whatever the proxy sends
        // the client leaves the ingress switch with the server as source.
        if let (Some(listen_port), Some(client_node)) = (listen_port, env.topo.by_ip(q.client_ip)) {
            if let Some((ingress, port)) = env
                .topo
                .attachment(client_node)
                .and_then(|sw| env.topo.next_hop(sw, client_node).map(|p| (sw, p)))
            {
                let m = MatchFields::between(SocketAddrV4::new(proxy_ip, listen_port), client);
                let rule = FlowRule::new(
                    PRIO_RESTORE,
                    m,
                    vec![Action::RewriteSrc(server), Action::Output(port.no)],
                );
                if self.install(env, ingress, rule, "egress source restore") {
                    lease.session_rules.push((ingress, m, PRIO_RESTORE));
                }
            }
        }

        if hit.is_none() {
            self.setup_fork(env, &q, proxy_ip, handle, &mut lease);
        }
        self.leases.insert((q.proxy_id, handle), lease);
        let reply = Reply {
            cache_location: hit,
            handle_port: Some(handle),
        };
        self.log_msg(env, "send", Body::Reply(reply.clone()));
        self.audit(env.now);
        Ok(reply)
    }

    fn setup_fork(&mut self, env: &mut ControlEnv<'_>, q: &Query, proxy_ip: Ipv4Addr, handle: u16, lease: &mut Lease) {
        let candidates = self.candidates();
        if !self.policy.should_cache(&q.content_name, q.server_ip, &candidates) {
            env.trace.record(
                env.now,
                "controller",
                "no_cache",
                format!("policy declined {}", q.content_name),
            );
            return;
        }
        let Some(cache_id) = self.policy.select_cache(&q.content_name, &candidates) else {
            return;
        };
        let cache = self.caches[&cache_id];
        let proxy_node = self.proxies[&q.proxy_id].node;
        let Some(server_node) = env.topo.by_ip(q.server_ip) else {
            return;
        };
        let Some(fork) = compute_fork_switch(env.topo, server_node, proxy_node, cache.node) else {
            env.trace.record(
                env.now,
                "controller",
                "no_cache",
                format!("no fork point for {}", q.content_name),
            );
            return;
        };
        let flow = MatchFields::between(
            SocketAddrV4::new(q.server_ip, q.server_port),
            SocketAddrV4::new(proxy_ip, handle),
        );
        let (Some(to_cache), Some(to_proxy)) =
            (env.topo.next_hop(fork, cache.node), env.topo.next_hop(fork, proxy_node))
        else {
            return;
        };
        let rule = FlowRule::new(
            PRIO_FORK,
            flow,
            vec![Action::Duplicate(to_cache.no), Action::Output(to_proxy.no)],
        );
        if !self.install(env, fork, rule, "fork toward cache") {
            return;
        }
        lease.fork_rules.push((fork, flow, PRIO_FORK));
        // Carry the copy the rest of the way to the cache.
        let route = env.topo.route(fork, cache.node).unwrap_or_default();
        for hop in route.iter().filter(|h| h.to.is_switch()) {
            if let Some(port) = env.topo.next_hop(hop.to, cache.node) {
                let rule = FlowRule::new(PRIO_FORK, flow, vec![Action::Output(port.no)]);
                if self.install(env, hop.to, rule, "fork copy toward cache") {
                    lease.fork_rules.push((hop.to, flow, PRIO_FORK));
                }
            }
        }
        self.counters.forks += 1;
        lease.filter_cache = Some(cache_id);
        let filter = SetFilter {
            filename: q.content_name.clone(),
            server_ip: q.server_ip,
            dst_port: handle,
        };
        let envelope = self.log_msg(env, "send", Body::SetFilter(filter));
        self.notices.push((cache.node, envelope));
    }

    // ---- completion ---------------------------------------------------

    fn lease_for_filter(&self, server_ip: Ipv4Addr, handle: u16) -> Option<(u32, u16)> {
        self.leases
            .iter()
            .find(|(_, l)| *l.mapping.server.ip() == server_ip && l.mapping.handle == handle)
            .map(|(k, _)| *k)
    }

    /// The cache holds the complete body: record where, drop the fork.
    pub fn on_stored_ack(&mut self, env: &mut ControlEnv<'_>, ack: StoredAck) {
        self.log_msg(env, "recv", Body::StoredAck(ack.clone()));
        let expected = self.request_dictionary.get(&(ack.server_ip, ack.dst_port));
        if expected != Some(&ack.content_name) {
            env.trace.record(
                env.now,
                "controller",
                "ignored",
                format!("ack for unknown {}", ack.content_name),
            );
            return;
        }
        let Some(cache) = self.caches.get(&ack.cache_id).copied() else {
            env.trace.record(
                env.now,
                "controller",
                "ignored",
                format!("ack from unknown cache {}", ack.cache_id),
            );
            return;
        };
        self.counters.stored_acks += 1;
        self.cache_dictionary.insert(ack.content_name.clone(), cache.location);
        env.trace.record(
            env.now,
            "controller",
            "cached",
            format!("{} -> cache{}", ack.content_name, ack.cache_id),
        );
        if let Some(key) = self.lease_for_filter(ack.server_ip, ack.dst_port) {
            self.finish_filter(env, key, "stored");
        }
        self.audit(env.now);
    }

    /// The cache gave up on (or only partly captured) a transfer.
    pub fn on_filter_released(&mut self, env: &mut ControlEnv<'_>, msg: FilterReleased) {
        self.log_msg(env, "recv", Body::FilterReleased(msg.clone()));
        self.counters.filters_released += 1;
        if let Some(key) = self.lease_for_filter(msg.server_ip, msg.dst_port) {
            let why = match msg.reason {
                DiscardReason::Discarded => "discarded",
                DiscardReason::Partial => "partial",
            };
            self.finish_filter(env, key, why);
        }
        self.audit(env.now);
    }

    fn finish_filter(&mut self, env: &mut ControlEnv<'_>, key: (u32, u16), why: &str) {
        let Some(lease) = self.leases.get_mut(&key) else {
            return;
        };
        lease.filter_cache = None;
        let rules = std::mem::take(&mut lease.fork_rules);
        let release_now = lease.release_requested;
        self.remove(env, rules, why);
        if release_now {
            self.complete_release(env, key);
        }
    }

    /// Proxy is done with a handle. Returned to the pool at once, or once the
    /// cache reports back if it is still capturing. Unknown handles are a no-op.
    pub fn on_release(&mut self, env: &mut ControlEnv<'_>, proxy_id: u32, handle: u16) {
        self.log_msg(
            env,
            "recv",
            Body::Release(crate::msg::Release {
                proxy_id,
                handle_port: handle,
            }),
        );
        let Some(lease) = self.leases.get_mut(&(proxy_id, handle)) else {
            return;
        };
        if lease.release_requested {
            return;
        }
        lease.release_requested = true;
        if lease.filter_cache.is_some() {
            env.trace.record(
                env.now,
                "controller",
                "release_deferred",
                format!("proxy{proxy_id} handle={handle} awaiting cache"),
            );
        } else {
            self.complete_release(env, (proxy_id, handle));
        }
        self.audit(env.now);
    }

    fn complete_release(&mut self, env: &mut ControlEnv<'_>, key: (u32, u16)) {
        let Some(mut lease) = self.leases.remove(&key) else {
            return;
        };
        let rules: Vec<_> = lease
            .session_rules
            .drain(..)
            .chain(lease.fork_rules.drain(..))
            .collect();
        self.remove(env, rules, "release");
        let server_ip = *lease.mapping.server.ip();
        self.request_dictionary.remove(&(server_ip, key.1));
        if let Some(p) = self.proxies.get_mut(&key.0) {
            p.handles.release(key.1);
        }
        self.counters.releases += 1;
        lease.mapping.state = MappingState::Released;
        lease.mapping.released_at = Some(env.now);
        env.trace.record(
            env.now,
            "controller",
            "released",
            format!("proxy{} handle={}", key.0, key.1),
        );
        self.history.push(lease.mapping);
    }

    // ---- invariants ---------------------------------------------------

    fn audit(&mut self, now: Time) {
        let mut problems = Vec::new();
        for (id, proxy) in &self.proxies {
            if let Err(e) = proxy.handles.check() {
                problems.push(format!("proxy{id}: {e}"));
            }
            for port in proxy.handles.in_use() {
                let leased = self.leases.get(&(*id, port));
                match leased {
                    None => problems.push(format!("proxy{id}: port {port} in use without a lease")),
                    Some(l) => {
                        let key = (*l.mapping.server.ip(), port);
                        if self.request_dictionary.get(&key) != Some(&l.mapping.content_name) {
                            problems.push(format!("proxy{id}: port {port} lacks its request entry"));
                        }
                    }
                }
            }
        }
        let live_ports: usize = self.proxies.values().map(|p| p.handles.live_count()).sum();
        if live_ports != self.leases.len() || self.request_dictionary.len() != self.leases.len() {
            problems.push(format!(
                "{} ports in use, {} leases, {} request entries",
                live_ports,
                self.leases.len(),
                self.request_dictionary.len()
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in self.leases.values() {
            let key = (l.mapping.proxy_id, *l.mapping.server.ip(), l.mapping.handle);
            if !seen.insert(key) {
                problems.push(format!("two live mappings share {key:?}"));
            }
        }
        for p in problems {
            self.violations.push(format!("t={now}: {p}"));
        }
    }
}

impl ControlPlane for Controller {
    type Notice = Envelope;

    fn packet_in(&mut self, env: &mut ControlEnv<'_>, switch: NodeId, _in_port: PortNo, packet: &SimPacket) -> bool {
        self.counters.packet_ins += 1;
        if env.topo.by_ip(*packet.src.ip()).is_none() {
            env.trace.record(
                env.now,
                "controller",
                "audit",
                format!("packet from unknown node: {packet}"),
            );
            self.counters.refused += 1;
            return false;
        }
        if self.mode == Mode::ContentFlow
            && packet.dst.port() == HTTP_PORT
            && Self::is_client_ingress(env.topo, switch, *packet.src.ip())
            && self.try_redirect(env, switch, packet)
        {
            return true;
        }
        let ok = self.install_route(env, switch, packet);
        if !ok {
            self.counters.refused += 1;
        }
        ok
    }

    fn take_notices(&mut self) -> Vec<(NodeId, Envelope)> {
        std::mem::take(&mut self.notices)
    }
}

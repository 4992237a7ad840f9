use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};

use bytes::Bytes;
use thiserror::Error;

use crate::cache::{CacheApp, Store};
use crate::controller::{Controller, HandleMapping, Mode, Snapshot, StandardPolicy, HTTP_PORT};
use crate::httpsem::{content_name, ContentName};
use crate::msg::PortRange;
use crate::netmodel::{HostRole, NetError, NodeId, Simulator, Time, Topology};
use crate::proxy::{ProxyApp, ProxyConfig, ProxyStats};
use crate::trace::{Milestone, Trace};

use super::apps::{ClientApp, ClientOutcome, ClientRequest, NodeApp, OriginServer};
use super::config::{NodeRole, ScenarioConfig};
use super::fixtures::{fixture, foreign_tag};
use super::metrics::{RequestMetrics, RunMetrics, ServedBy};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("still {pending} events pending after {events} events")]
    Stalled { events: u64, pending: usize },
}

/// One workload entry resolved against the built topology.
#[derive(Debug, Clone)]
pub struct RequestSpec {
    pub index: u32,
    pub label: String,
    pub client: NodeId,
    pub client_name: String,
    pub server: SocketAddrV4,
    pub content: Option<ContentName>,
    pub method: String,
    pub range: Option<crate::httpsem::ByteRange>,
    pub at: Time,
    pub after: Option<u32>,
    pub gap: Time,
}

/// A scenario ready to run.
pub struct World {
    pub sim: Simulator<NodeApp, Controller>,
    pub topology: Topology,
    pub requests: Vec<RequestSpec>,
    pub fixtures: BTreeMap<ContentName, Bytes>,
    pub mode: Mode,
    pub max_events: u64,
    name: String,
    handle_ranges: Vec<PortRange>,
    cache_ips: BTreeSet<Ipv4Addr>,
}

pub struct RunReport {
    pub scenario: String,
    pub metrics: RunMetrics,
    pub trace: Trace,
    pub topology: Topology,
    pub snapshot: Snapshot,
    /// Every handle lease of the run, released ones included.
    pub mappings: Vec<HandleMapping>,
    pub violations: Vec<String>,
    pub outcomes: BTreeMap<String, ClientOutcome>,
    pub caches: BTreeMap<String, Store>,
    pub proxies: BTreeMap<String, ProxyStats>,
    /// Proxy processing delay, by proxy name.
    pub proxy_delays: BTreeMap<String, Time>,
    pub requests: Vec<RequestSpec>,
    pub fixtures: BTreeMap<ContentName, Bytes>,
    /// Controller state and remaining rules, as text.
    pub dump: String,
    pub rules_left: usize,
    pub events: u64,
    pub mss: usize,
}

fn host_role(role: NodeRole) -> HostRole {
    match role {
        NodeRole::Client => HostRole::Client,
        NodeRole::Server => HostRole::Server,
        NodeRole::Proxy => HostRole::Proxy,
        NodeRole::Cache | NodeRole::Switch => HostRole::Cache,
    }
}

impl World {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let p = &cfg.policy;
        let mut topo = Topology::new();
        let mut ids = BTreeMap::new();
        for n in &cfg.nodes {
            let id = match (n.role, n.ip) {
                (NodeRole::Switch, _) => topo.add_switch(&n.name)?,
                (role, Some(ip)) => topo.add_host(&n.name, ip, host_role(role))?,
                (_, None) => return Err(NetError::UnknownNode(n.name.clone()).into()),
            };
            ids.insert(n.name.clone(), id);
        }
        let node = |name: &str| {
            ids.get(name)
                .copied()
                .ok_or_else(|| NetError::UnknownNode(name.to_string()))
        };
        let mut faults = Vec::new();
        for l in &cfg.links {
            let link = topo.add_link(node(&l.a)?, node(&l.b)?, l.delay, l.rate)?;
            faults.extend(l.faults.iter().map(|f| (link, *f)));
        }

        let mut control = Controller::new(p.mode, Box::new(StandardPolicy::new(p.admission, p.selection)));
        control.set_available(p.controller_up);
        let mut cache_ips = BTreeSet::new();
        for n in cfg.nodes.iter().filter(|n| n.role == NodeRole::Cache) {
            let ip = n.ip.expect("validated");
            control.add_cache(n.id.expect("assigned"), node(&n.name)?, ip);
            cache_ips.insert(ip);
        }

        let mut fixtures = BTreeMap::new();
        for c in &cfg.contents {
            fixtures.insert(c.name(), Bytes::from(fixture(p.seed, &c.name(), c.size)));
        }

        let mut requests = Vec::new();
        let mut labels = BTreeMap::new();
        for (i, r) in cfg.workload.iter().enumerate() {
            let index = i as u32;
            labels.insert(r.label.clone(), index);
            let server_ip = cfg.node(&r.server).and_then(|n| n.ip).expect("validated");
            requests.push(RequestSpec {
                index,
                label: r.label.clone(),
                client: node(&r.client)?,
                client_name: r.client.clone(),
                server: SocketAddrV4::new(server_ip, HTTP_PORT),
                content: (r.method == "GET").then(|| content_name(&r.server, &r.path).expect("validated")),
                method: r.method.clone(),
                range: r.range,
                at: r.at,
                after: r.after.as_ref().map(|a| labels[a]),
                gap: r.gap,
            });
        }

        let topology = topo.clone();
        let mut sim = Simulator::new(topo, control, p.mss);
        sim.set_trace_packets(p.trace_packets);
        for (link, fault) in faults {
            sim.add_fault(link, fault)?;
        }
        let mut handle_ranges = Vec::new();
        for n in cfg.nodes.iter().filter(|n| n.role != NodeRole::Switch) {
            let id = node(&n.name)?;
            let app = match n.role {
                NodeRole::Client => {
                    let mut app = ClientApp::default();
                    for (spec, decl) in requests.iter().zip(&cfg.workload).filter(|(s, _)| s.client == id) {
                        app.add(ClientRequest {
                            index: spec.index,
                            server: spec.server,
                            host: decl.server.clone(),
                            path: decl.path.clone(),
                            range: decl.range,
                            method: decl.method.clone(),
                            body: decl.body,
                        });
                    }
                    NodeApp::Client(app)
                }
                NodeRole::Server => {
                    let mut app = OriginServer::default();
                    for c in cfg.contents.iter().filter(|c| c.server == n.name) {
                        app.add_content(&c.path, fixtures[&c.name()].clone());
                    }
                    NodeApp::Server(app)
                }
                NodeRole::Proxy => {
                    let handles = n.handles.expect("assigned");
                    handle_ranges.push(handles);
                    NodeApp::Proxy(ProxyApp::new(ProxyConfig {
                        proxy_id: n.id.expect("assigned"),
                        handles,
                        listen: n.listen.expect("assigned"),
                        delay: n.delay,
                    }))
                }
                NodeRole::Cache => {
                    NodeApp::Cache(CacheApp::new(n.id.expect("assigned"), Store::new()).with_grace(p.grace))
                }
                NodeRole::Switch => unreachable!("filtered"),
            };
            sim.add_app(id, app)?;
            sim.schedule_start(id, 0);
        }
        for r in requests.iter().filter(|r| r.after.is_none()) {
            sim.schedule_timer(r.client, r.at, u64::from(r.index));
        }
        Ok(Self {
            sim,
            topology,
            requests,
            fixtures,
            mode: p.mode,
            max_events: p.max_events,
            name: cfg.name.clone(),
            handle_ranges,
            cache_ips,
        })
    }

    fn outcome(&self, spec: &RequestSpec) -> Option<&ClientOutcome> {
        self.sim.host(spec.client)?.app.as_client()?.outcomes.get(&spec.index)
    }

    /// Runs to quiescence, releasing `after=` requests as their
    /// predecessors settle.
    pub fn run(mut self) -> Result<RunReport, RunError> {
        let mut waiting: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for r in &self.requests {
            if let Some(pred) = r.after {
                waiting.entry(pred).or_default().push(r.index);
            }
        }
        let mut budget = self.max_events;
        loop {
            if !waiting.is_empty() {
                let settled: Vec<(u32, Time)> = waiting
                    .keys()
                    .filter_map(|&pred| {
                        let out = self.outcome(&self.requests[pred as usize])?;
                        out.is_settled().then_some((pred, self.sim.now()))
                    })
                    .collect();
                for (pred, at) in settled {
                    for dep in waiting.remove(&pred).unwrap_or_default() {
                        let spec = &self.requests[dep as usize];
                        self.sim.schedule_timer(spec.client, at + spec.gap, u64::from(dep));
                    }
                }
            }
            if budget == 0 {
                return Err(RunError::Stalled {
                    events: self.sim.dispatched(),
                    pending: self.sim.pending(),
                });
            }
            budget -= 1;
            if !self.sim.step() && waiting.is_empty() {
                break;
            }
            if self.sim.pending() == 0 && !waiting.is_empty() {
                // Predecessors that never settle leave dependents unstarted.
                let stuck = waiting.keys().all(|&pred| {
                    self.outcome(&self.requests[pred as usize])
                        .is_none_or(|o| !o.is_settled())
                });
                if stuck {
                    break;
                }
            }
        }
        Ok(self.report())
    }

    fn served_by(&self, trace: &Trace, local: Option<SocketAddrV4>) -> (ServedBy, Option<u16>) {
        let upstream = local.and_then(|l| {
            trace.milestones().find_map(|(_, m)| match m {
                Milestone::ProxyUpstream { client, local, remote } if *client == l => Some((*local, *remote)),
                _ => None,
            })
        });
        match upstream {
            None => (ServedBy::Direct, None),
            Some((local, remote)) => {
                let handle = self
                    .handle_ranges
                    .iter()
                    .any(|r| r.contains(local.port()))
                    .then_some(local.port());
                let by = if self.cache_ips.contains(remote.ip()) {
                    ServedBy::Cache
                } else if handle.is_some() {
                    ServedBy::Origin
                } else {
                    ServedBy::PassThrough
                };
                (by, handle)
            }
        }
    }

    fn report(self) -> RunReport {
        let control = self.sim.control();
        let snapshot = control.snapshot();
        let mappings = control.mappings();
        let dump = control.dump(&self.topology, self.sim.fabric());
        let rules_left = self.sim.fabric().rule_count();
        let events = self.sim.dispatched();
        let mss = self
            .sim
            .hosts()
            .next()
            .map_or(crate::netmodel::DEFAULT_MSS, |h| h.stack.mss());
        let mut violations: Vec<String> = control
            .violations()
            .iter()
            .map(|v| format!("controller: {v}"))
            .collect();

        let mut outcomes = BTreeMap::new();
        let mut metrics = RunMetrics {
            scenario: self.name.clone(),
            requests: Vec::new(),
        };
        let trace = self.sim.trace().clone();
        for spec in &self.requests {
            let out = self.outcome(spec).cloned().unwrap_or_default();
            let (served_by, handle) = self.served_by(&trace, out.local);
            let label = &spec.label;
            if out.started.is_none() {
                violations.push(format!("request {label}: never started"));
            } else if out.failed {
                violations.push(format!("request {label}: connection failed"));
            } else if out.finished.is_none() {
                violations.push(format!("request {label}: response incomplete"));
            }
            let status = out.status();
            if let (Some(name), Some(body), Some(s)) = (&spec.content, out.body(), status) {
                let full = &self.fixtures[name];
                let expected = match (s, spec.range) {
                    (200, _) => Some(&full[..]),
                    (206, Some(r)) => {
                        let last = (r.last as usize).min(full.len().saturating_sub(1));
                        full.get(r.first as usize..=last)
                    }
                    _ => None,
                };
                if let Some(expected) = expected {
                    let offset = if s == 206 {
                        spec.range.map_or(0, |r| r.first as usize)
                    } else {
                        0
                    };
                    if let Some(at) = foreign_tag(name, offset, body) {
                        violations.push(format!("request {label}: foreign content at byte {at}"));
                    } else if body != expected {
                        violations.push(format!("request {label}: body differs from {name}"));
                    }
                }
            }
            if self.mode == Mode::ContentFlow && !out.sources.is_empty() {
                let others: Vec<_> = out.sources.iter().filter(|s| **s != spec.server).collect();
                if !others.is_empty() {
                    violations.push(format!(
                        "request {label}: response seen from {others:?}, not {}",
                        spec.server
                    ));
                }
            }
            if self.mode == Mode::ContentFlow
                && !self.handle_ranges.is_empty()
                && out.started.is_some()
                && served_by == ServedBy::Direct
            {
                violations.push(format!(
                    "request {label}: reached {} without passing a proxy",
                    spec.server
                ));
            }
            if served_by == ServedBy::Cache
                && !mappings
                    .iter()
                    .any(|m| Some(m.client) == out.local && m.source.is_some())
            {
                violations.push(format!(
                    "request {label}: served by a cache the controller did not name"
                ));
            }
            metrics.requests.push(RequestMetrics {
                index: spec.index,
                label: label.clone(),
                client: spec.client_name.clone(),
                content: spec
                    .content
                    .as_ref()
                    .map_or_else(|| format!("{} (no content)", spec.method), |c| c.to_string()),
                hit: served_by == ServedBy::Cache,
                served_by,
                handle,
                status,
                bytes: out.body().map_or(0, |b| b.len() as u64),
                started: out.started,
                finished: out.finished,
            });
            outcomes.insert(label.clone(), out);
        }

        let mut caches = BTreeMap::new();
        let mut proxies = BTreeMap::new();
        let mut proxy_delays = BTreeMap::new();
        for host in self.sim.hosts() {
            if let Some(c) = host.app.as_cache() {
                caches.insert(host.name.clone(), c.cache.store().clone());
            }
            if let Some(p) = host.app.as_proxy() {
                if let Some(e) = &p.startup_error {
                    violations.push(format!("proxy {}: {e}", host.name));
                }
                proxies.insert(host.name.clone(), p.stats.clone());
                proxy_delays.insert(host.name.clone(), p.config.delay);
            }
        }
        for (name, loc) in &snapshot.cache_dictionary {
            let holder = self
                .sim
                .hosts()
                .filter_map(|h| h.app.as_cache())
                .find(|c| c.cache.id == loc.cache_id);
            if !holder.is_some_and(|c| c.cache.store().contains(name)) {
                violations.push(format!(
                    "cache{} is listed for {name} but does not hold it",
                    loc.cache_id
                ));
            }
        }

        RunReport {
            scenario: self.name,
            metrics,
            trace,
            topology: self.topology,
            snapshot,
            mappings,
            violations,
            outcomes,
            caches,
            proxies,
            proxy_delays,
            requests: self.requests,
            fixtures: self.fixtures,
            dump,
            rules_left,
            events,
            mss,
        }
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    World::build(cfg)?.run()
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn outcome(&self, label: &str) -> Option<&ClientOutcome> {
        self.outcomes.get(label)
    }

    pub fn request(&self, label: &str) -> Option<&RequestSpec> {
        self.requests.iter().find(|r| r.label == label)
    }
}

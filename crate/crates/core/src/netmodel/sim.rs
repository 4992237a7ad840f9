use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::SocketAddrV4;

use super::link::Channel;
use super::tcp::{ConnId, SocketEvent, TcpStack};
use super::{
    Direction, EventQueue, LinkFault, LinkId, NetError, NodeId, PortNo, SimPacket, Time, Topology, Transmission,
};
use crate::switchfab::{Fabric, Verdict};
use crate::trace::Trace;

pub const DEFAULT_MSS: usize = 1460;

/// What the switches escalate table misses to.
pub trait ControlPlane {
    /// Out-of-band messages the control plane pushes to hosts.
    type Notice: Clone + fmt::Debug;

    /// Called for a packet no rule matched. Return `false` to refuse it; the
    /// packet is then dropped. Rules installed through `env` take effect
    /// immediately and the packet is re-evaluated.
    fn packet_in(&mut self, env: &mut ControlEnv<'_>, switch: NodeId, in_port: PortNo, packet: &SimPacket) -> bool;

    /// Notices queued since the last call, each addressed to a host.
    fn take_notices(&mut self) -> Vec<(NodeId, Self::Notice)>;
}

/// The parts of the simulator a control plane may touch.
pub struct ControlEnv<'a> {
    pub now: Time,
    pub topo: &'a Topology,
    pub fabric: &'a mut Fabric,
    pub trace: &'a mut Trace,
}

/// Behaviour running on a host, driven by socket events, timers and notices.
pub trait Application<C: ControlPlane> {
    fn on_start(&mut self, _ctx: &mut HostCtx<'_, C>) {}
    fn on_socket(&mut self, ctx: &mut HostCtx<'_, C>, event: SocketEvent);
    fn on_timer(&mut self, _ctx: &mut HostCtx<'_, C>, _token: u64) {}
    fn on_notice(&mut self, _ctx: &mut HostCtx<'_, C>, _notice: C::Notice) {}
    /// A packet addressed to some other host reached this one. Return `true`
    /// if the application consumed it.
    fn on_tap(&mut self, _ctx: &mut HostCtx<'_, C>, _packet: &SimPacket) -> bool {
        false
    }
}

pub struct Host<A> {
    pub node: NodeId,
    pub name: String,
    pub stack: TcpStack,
    pub app: A,
}

/// Handle given to an application while one of its callbacks runs.
pub struct HostCtx<'a, C: ControlPlane> {
    pub now: Time,
    pub node: NodeId,
    pub name: &'a str,
    pub stack: &'a mut TcpStack,
    pub trace: &'a mut Trace,
    out: &'a mut Vec<SimPacket>,
    timers: &'a mut Vec<(Time, u64)>,
    control: &'a mut C,
    topo: &'a Topology,
    fabric: &'a mut Fabric,
}

impl<C: ControlPlane> HostCtx<'_, C> {
    pub fn connect(&mut self, remote: SocketAddrV4, local_port: Option<u16>) -> Result<ConnId, NetError> {
        self.stack.connect(remote, local_port, self.out)
    }

    pub fn send(&mut self, conn: ConnId, data: &[u8]) -> Result<(), NetError> {
        self.stack.send(conn, data, self.out)
    }

    pub fn close(&mut self, conn: ConnId) -> Result<(), NetError> {
        self.stack.close(conn, self.out)
    }

    /// Fires `on_timer(token)` after `delay` units.
    pub fn set_timer(&mut self, delay: Time, token: u64) {
        self.timers.push((self.now + delay, token));
    }

    pub fn topology(&self) -> &Topology {
        self.topo
    }

    pub fn log(&mut self, event: &str, detail: impl Into<String>) {
        self.trace.record(self.now, self.name, event, detail);
    }

    /// Synchronous call into the control plane.
    pub fn with_control<R>(&mut self, f: impl FnOnce(&mut C, &mut ControlEnv<'_>) -> R) -> R {
        let mut env = ControlEnv {
            now: self.now,
            topo: self.topo,
            fabric: self.fabric,
            trace: self.trace,
        };
        f(self.control, &mut env)
    }
}

enum Event<N> {
    Arrive {
        node: NodeId,
        port: PortNo,
        packet: SimPacket,
    },
    Start {
        node: NodeId,
    },
    Timer {
        node: NodeId,
        token: u64,
    },
    Notice {
        node: NodeId,
        notice: N,
    },
}

/// The event loop: hosts with applications, switches with flow tables, and
/// one control plane, connected by the links of a [`Topology`].
pub struct Simulator<A, C: ControlPlane> {
    topo: Topology,
    fabric: Fabric,
    control: C,
    hosts: BTreeMap<NodeId, Host<A>>,
    channels: HashMap<(LinkId, Direction), Channel>,
    faults: BTreeMap<LinkId, Vec<LinkFault>>,
    queue: EventQueue<Event<C::Notice>>,
    trace: Trace,
    mss: usize,
    trace_packets: bool,
    dispatched: u64,
}

impl<A: Application<C>, C: ControlPlane> Simulator<A, C> {
    pub fn new(topo: Topology, control: C, mss: usize) -> Self {
        Self {
            fabric: Fabric::new(&topo),
            topo,
            control,
            hosts: BTreeMap::new(),
            channels: HashMap::new(),
            faults: BTreeMap::new(),
            queue: EventQueue::new(),
            trace: Trace::new(),
            mss,
            trace_packets: true,
            dispatched: 0,
        }
    }

    /// Packet hops are traced by default; large sweeps may turn this off.
    pub fn set_trace_packets(&mut self, on: bool) {
        self.trace_packets = on;
    }

    pub fn add_app(&mut self, node: NodeId, app: A) -> Result<(), NetError> {
        let info = self
            .topo
            .node(node)
            .ok_or_else(|| NetError::UnknownNode(node.to_string()))?;
        let ip = info
            .ip
            .ok_or_else(|| NetError::UnknownNode(format!("{} is not a host", info.name)))?;
        self.hosts.insert(
            node,
            Host {
                node,
                name: info.name.clone(),
                stack: TcpStack::new(ip, self.mss),
                app,
            },
        );
        Ok(())
    }

    pub fn add_fault(&mut self, link: LinkId, fault: LinkFault) -> Result<(), NetError> {
        self.topo.link(link).ok_or(NetError::UnknownLink(link.0))?;
        self.faults.entry(link).or_default().push(fault);
        Ok(())
    }

    pub fn schedule_start(&mut self, node: NodeId, at: Time) {
        self.queue.schedule(at, Event::Start { node });
    }

    pub fn schedule_timer(&mut self, node: NodeId, at: Time, token: u64) {
        self.queue.schedule(at, Event::Timer { node, token });
    }

    pub fn now(&self) -> Time {
        self.queue.now()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn control(&self) -> &C {
        &self.control
    }

    pub fn control_mut(&mut self) -> &mut C {
        &mut self.control
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_parts(self) -> (Trace, C, BTreeMap<NodeId, Host<A>>) {
        (self.trace, self.control, self.hosts)
    }

    pub fn host(&self, node: NodeId) -> Option<&Host<A>> {
        self.hosts.get(&node)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &Host<A>> {
        self.hosts.values()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Puts `packet` on `link` from endpoint `from`, scheduling its arrival at
    /// the far end. The arrival time covers serialization behind whatever is
    /// already queued in that direction plus the link's one-way delay.
    pub fn deliver(&mut self, from: NodeId, link: LinkId, packet: SimPacket) -> Result<Transmission, NetError> {
        packet.validate(self.mss)?;
        let l = self.topo.link(link).ok_or(NetError::UnknownLink(link.0))?;
        if l.other(from).is_none() {
            return Err(NetError::NotAttached {
                node: from.to_string(),
                link: link.0,
            });
        }
        Ok(self.transmit_on(from, link, packet))
    }

    fn transmit_on(&mut self, from: NodeId, link: LinkId, packet: SimPacket) -> Transmission {
        let l = self.topo.link(link).expect("caller checked");
        let (dir, to) = if l.endpoints.0 == from {
            (Direction::Forward, l.endpoints.1)
        } else {
            (Direction::Reverse, l.endpoints.0)
        };
        let (delay, rate) = (l.one_way_delay, l.rate);
        let now = self.queue.now();
        let ch = self.channels.entry((link, dir)).or_default();
        let arrival = ch.transmit(now, packet.len(), delay, rate);
        let faults = self
            .faults
            .get(&link)
            .into_iter()
            .flatten()
            .filter(|f| f.direction == dir);
        let tx = ch.apply_faults(packet.len(), arrival, faults);
        if self.trace_packets {
            let detail = format!("{packet} {}->{} {tx:?}", self.topo.name(from), self.topo.name(to));
            self.trace.packet(now, self.topo.name(from), "tx", detail);
        }
        let port = self
            .topo
            .ports(to)
            .iter()
            .find(|p| p.link == link)
            .map(|p| p.no)
            .expect("link endpoints have ports");
        match tx {
            Transmission::Deliver(at) | Transmission::Delayed(at) => {
                self.queue.schedule(at, Event::Arrive { node: to, port, packet });
            }
            Transmission::Duplicate(at) => {
                self.queue.schedule(
                    at,
                    Event::Arrive {
                        node: to,
                        port,
                        packet: packet.clone(),
                    },
                );
                self.queue.schedule(at, Event::Arrive { node: to, port, packet });
            }
            Transmission::Dropped => {}
        }
        tx
    }

    fn emit_from_port(&mut self, node: NodeId, port: PortNo, packet: SimPacket) {
        match self.topo.port(node, port) {
            Some(p) => {
                self.transmit_on(node, p.link, packet);
            }
            None => {
                let now = self.queue.now();
                self.trace.record(
                    now,
                    self.topo.name(node).to_string(),
                    "drop",
                    format!("no port {port}: {packet}"),
                );
            }
        }
    }

    /// Runs one event. Returns `false` when nothing is pending.
    pub fn step(&mut self) -> bool {
        let Some((_, event)) = self.queue.pop() else {
            return false;
        };
        self.dispatched += 1;
        match event {
            Event::Arrive { node, port, packet } if node.is_switch() => self.switch_arrive(node, port, packet),
            Event::Arrive { node, packet, .. } => self.host_arrive(node, packet),
            Event::Start { node } => self.with_app(node, |app, ctx| app.on_start(ctx)),
            Event::Timer { node, token } => self.with_app(node, |app, ctx| app.on_timer(ctx, token)),
            Event::Notice { node, notice } => self.with_app(node, |app, ctx| app.on_notice(ctx, notice)),
        }
        self.after_dispatch();
        true
    }

    /// Runs until the queue drains or `max_events` more events have fired.
    /// Returns `true` if the queue drained.
    pub fn run_until_idle(&mut self, max_events: u64) -> bool {
        for _ in 0..max_events {
            if !self.step() {
                return true;
            }
        }
        self.queue.is_empty()
    }

    fn after_dispatch(&mut self) {
        let now = self.queue.now();
        for (node, notice) in self.control.take_notices() {
            self.queue.schedule(now, Event::Notice { node, notice });
        }
        for (switch, port, packet) in self.fabric.reevaluate() {
            self.emit_from_port(switch, port, packet);
        }
    }

    fn switch_arrive(&mut self, switch: NodeId, in_port: PortNo, packet: SimPacket) {
        let now = self.queue.now();
        let verdict = match self.fabric.process(switch, in_port, packet.clone()) {
            Ok(v) => v,
            Err(e) => {
                self.trace
                    .record(now, self.topo.name(switch).to_string(), "drop", e.to_string());
                return;
            }
        };
        match verdict {
            Verdict::Emit(out) => {
                for (port, pkt) in out {
                    self.emit_from_port(switch, port, pkt);
                }
            }
            Verdict::Miss(id) => {
                let name = self.topo.name(switch).to_string();
                self.trace
                    .record(now, name.clone(), "packet_in", format!("port={in_port} {packet}"));
                let mut env = ControlEnv {
                    now,
                    topo: &self.topo,
                    fabric: &mut self.fabric,
                    trace: &mut self.trace,
                };
                let handled = self.control.packet_in(&mut env, switch, in_port, &packet);
                if !handled {
                    self.fabric.discard(switch, id);
                    self.trace.record(now, name, "drop", format!("refused {packet}"));
                    if packet.is_syn() {
                        self.refuse_syn(&packet);
                    }
                }
            }
        }
    }

    fn refuse_syn(&mut self, packet: &SimPacket) {
        let Some(origin) = self.topo.by_ip(*packet.src.ip()) else {
            return;
        };
        let Some(event) = self
            .hosts
            .get_mut(&origin)
            .and_then(|h| h.stack.fail_local_port(packet.src.port()))
        else {
            return;
        };
        self.with_app(origin, |app, ctx| app.on_socket(ctx, event));
    }

    fn host_arrive(&mut self, node: NodeId, packet: SimPacket) {
        let now = self.queue.now();
        let foreign = self.hosts.get(&node).is_some_and(|h| *packet.dst.ip() != h.stack.ip());
        if foreign {
            let mut consumed = false;
            self.with_app(node, |app, ctx| consumed = app.on_tap(ctx, &packet));
            if !consumed {
                self.trace
                    .record(now, self.topo.name(node).to_string(), "stray", packet.to_string());
            }
            return;
        }
        let mut out = Vec::new();
        let events = match self.hosts.get_mut(&node) {
            Some(host) => host.stack.on_packet(&packet, &mut out),
            None => None,
        };
        let Some(events) = events else {
            self.trace
                .record(now, self.topo.name(node).to_string(), "stray", packet.to_string());
            return;
        };
        for pkt in out {
            self.send_from_host(node, pkt);
        }
        for event in events {
            self.with_app(node, |app, ctx| app.on_socket(ctx, event));
        }
    }

    fn send_from_host(&mut self, node: NodeId, packet: SimPacket) {
        let now = self.queue.now();
        if let Err(e) = packet.validate(self.mss) {
            self.trace
                .record(now, self.topo.name(node).to_string(), "drop", e.to_string());
            return;
        }
        match self.topo.ports(node).first().map(|p| p.link) {
            Some(link) => {
                self.transmit_on(node, link, packet);
            }
            None => {
                self.trace.record(
                    now,
                    self.topo.name(node).to_string(),
                    "drop",
                    format!("unlinked {packet}"),
                );
            }
        }
    }

    fn with_app(&mut self, node: NodeId, f: impl FnOnce(&mut A, &mut HostCtx<'_, C>)) {
        let now = self.queue.now();
        let mut out = Vec::new();
        let mut timers = Vec::new();
        {
            let Some(host) = self.hosts.get_mut(&node) else {
                return;
            };
            let Host { name, stack, app, .. } = host;
            let mut ctx = HostCtx {
                now,
                node,
                name,
                stack,
                trace: &mut self.trace,
                out: &mut out,
                timers: &mut timers,
                control: &mut self.control,
                topo: &self.topo,
                fabric: &mut self.fabric,
            };
            f(app, &mut ctx);
        }
        for pkt in out {
            self.send_from_host(node, pkt);
        }
        for (at, token) in timers {
            self.queue.schedule(at, Event::Timer { node, token });
        }
    }
}

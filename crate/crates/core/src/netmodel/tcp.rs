//! A TCP-like byte-stream stack without retransmission or congestion control.
//!
//! Handshake is SYN, SYN|ACK, ACK; the active side is connected when the
//! SYN|ACK arrives and the passive side when the ACK arrives. Closing sends a
//! FIN; the peer answers with FIN|ACK as soon as every byte before the FIN has
//! arrived, so teardown costs two traversals. Out-of-order segments are held
//! until the gap fills and duplicates are discarded.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};

use bytes::Bytes;

use super::{NetError, SimPacket, TcpFlags};

pub type ConnId = u64;

pub const EPHEMERAL_START: u16 = 49152;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SocketEvent {
    Connected(ConnId),
    Accepted {
        conn: ConnId,
        listen_port: u16,
    },
    /// In-order bytes; `from` is the source address the packet carried.
    Data {
        conn: ConnId,
        data: Bytes,
        from: SocketAddrV4,
    },
    /// The peer closed; this side has already answered and is gone.
    PeerClosed(ConnId),
    /// Our FIN was answered.
    Closed(ConnId),
    /// The network could not set the connection up.
    Failed(ConnId),
}

impl SocketEvent {
    pub fn conn(&self) -> ConnId {
        match *self {
            SocketEvent::Connected(c)
            | SocketEvent::PeerClosed(c)
            | SocketEvent::Closed(c)
            | SocketEvent::Failed(c) => c,
            SocketEvent::Accepted { conn, .. } | SocketEvent::Data { conn, .. } => conn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnState {
    SynSent,
    SynReceived,
    Established,
    FinSent,
}

#[derive(Debug, Clone)]
struct Conn {
    local: SocketAddrV4,
    remote: SocketAddrV4,
    state: ConnState,
    active: bool,
    listen_port: Option<u16>,
    snd_nxt: u32,
    rcv_nxt: u32,
    out_of_order: BTreeMap<u32, Bytes>,
    peer_fin_at: Option<u32>,
    /// Data and close requested before the handshake finished.
    queued: Vec<Bytes>,
    close_queued: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnInfo {
    pub local: SocketAddrV4,
    pub remote: SocketAddrV4,
    pub state: ConnState,
    pub sent: u32,
    pub received: u32,
}

#[derive(Debug, Clone)]
pub struct TcpStack {
    ip: Ipv4Addr,
    mss: usize,
    conns: BTreeMap<ConnId, Conn>,
    listeners: BTreeSet<u16>,
    next_conn: ConnId,
    next_ephemeral: u16,
}

impl TcpStack {
    pub fn new(ip: Ipv4Addr, mss: usize) -> Self {
        Self {
            ip,
            mss: mss.max(1),
            conns: BTreeMap::new(),
            listeners: BTreeSet::new(),
            next_conn: 1,
            next_ephemeral: EPHEMERAL_START,
        }
    }

    pub fn ip(&self) -> Ipv4Addr {
        self.ip
    }

    pub fn mss(&self) -> usize {
        self.mss
    }

    pub fn listen(&mut self, port: u16) -> Result<(), NetError> {
        if port == 0 || self.port_busy(port) {
            return Err(NetError::PortInUse(port));
        }
        self.listeners.insert(port);
        Ok(())
    }

    pub fn is_listening(&self, port: u16) -> bool {
        self.listeners.contains(&port)
    }

    pub fn info(&self, conn: ConnId) -> Option<ConnInfo> {
        self.conns.get(&conn).map(|c| ConnInfo {
            local: c.local,
            remote: c.remote,
            state: c.state,
            sent: c.snd_nxt,
            received: c.rcv_nxt,
        })
    }

    pub fn open_connections(&self) -> usize {
        self.conns.len()
    }

    fn port_busy(&self, port: u16) -> bool {
        self.listeners.contains(&port) || self.conns.values().any(|c| c.active && c.local.port() == port)
    }

    fn ephemeral(&mut self) -> Result<u16, NetError> {
        let span = u32::from(u16::MAX - EPHEMERAL_START) + 1;
        for _ in 0..span {
            let port = self.next_ephemeral;
            self.next_ephemeral = if port == u16::MAX { EPHEMERAL_START } else { port + 1 };
            if !self.port_busy(port) {
                return Ok(port);
            }
        }
        Err(NetError::PortsExhausted)
    }

    /// Opens a connection, sending the SYN into `out`. `local_port` pins the
    /// source port (how the proxy applies a controller handle).
    pub fn connect(
        &mut self,
        remote: SocketAddrV4,
        local_port: Option<u16>,
        out: &mut Vec<SimPacket>,
    ) -> Result<ConnId, NetError> {
        let port = match local_port {
            Some(p) if p == 0 || self.port_busy(p) => return Err(NetError::PortInUse(p)),
            Some(p) => p,
            None => self.ephemeral()?,
        };
        let local = SocketAddrV4::new(self.ip, port);
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            Conn {
                local,
                remote,
                state: ConnState::SynSent,
                active: true,
                listen_port: None,
                snd_nxt: 0,
                rcv_nxt: 0,
                out_of_order: BTreeMap::new(),
                peer_fin_at: None,
                queued: Vec::new(),
                close_queued: false,
            },
        );
        out.push(SimPacket::control(local, remote, 0, 0, TcpFlags::SYN));
        Ok(id)
    }

    /// Segments `data` into MSS-sized packets with consecutive offsets.
    pub fn send(&mut self, conn: ConnId, data: &[u8], out: &mut Vec<SimPacket>) -> Result<(), NetError> {
        let mss = self.mss;
        let c = self.conns.get_mut(&conn).ok_or(NetError::NotOpen(conn))?;
        match c.state {
            ConnState::SynSent | ConnState::SynReceived => {
                c.queued.push(Bytes::copy_from_slice(data));
                Ok(())
            }
            ConnState::FinSent => Err(NetError::NotOpen(conn)),
            ConnState::Established => {
                emit_data(c, data, mss, out);
                Ok(())
            }
        }
    }

    pub fn close(&mut self, conn: ConnId, out: &mut Vec<SimPacket>) -> Result<(), NetError> {
        let c = self.conns.get_mut(&conn).ok_or(NetError::NotOpen(conn))?;
        match c.state {
            ConnState::SynSent | ConnState::SynReceived => c.close_queued = true,
            ConnState::FinSent => {}
            ConnState::Established => emit_fin(c, out),
        }
        Ok(())
    }

    /// Forgets an active connection whose SYN the network refused.
    pub fn fail_local_port(&mut self, port: u16) -> Option<SocketEvent> {
        let id = self
            .conns
            .iter()
            .find(|(_, c)| c.active && c.local.port() == port && c.state == ConnState::SynSent)
            .map(|(id, _)| *id)?;
        self.conns.remove(&id);
        Some(SocketEvent::Failed(id))
    }

    fn demux(&self, pkt: &SimPacket) -> Option<ConnId> {
        let exact = self
            .conns
            .iter()
            .find(|(_, c)| c.local == pkt.dst && c.remote == pkt.src)
            .map(|(id, _)| *id);
        // An active connection owns its local port outright, so a reply whose
        // source was not restored still lands here and is visible to the app.
        exact.or_else(|| {
            self.conns
                .iter()
                .find(|(_, c)| c.active && c.local == pkt.dst)
                .map(|(id, _)| *id)
        })
    }

    /// Processes one arriving packet. Replies go to `out`; the return value
    /// lists what the application should see, in order. Packets for no
    /// connection or listener are dropped and reported as `None`.
    pub fn on_packet(&mut self, pkt: &SimPacket, out: &mut Vec<SimPacket>) -> Option<Vec<SocketEvent>> {
        if pkt.dst.ip() != &self.ip {
            return None;
        }
        let Some(id) = self.demux(pkt) else {
            if pkt.flags == TcpFlags::SYN && self.listeners.contains(&pkt.dst.port()) {
                return Some(self.accept_syn(pkt, out));
            }
            return None;
        };
        let mss = self.mss;
        let c = self.conns.get_mut(&id).expect("demuxed");
        let mut events = Vec::new();

        if pkt.is_syn() {
            if c.state == ConnState::SynSent && pkt.flags.contains(TcpFlags::ACK) {
                c.state = ConnState::Established;
                out.push(SimPacket::control(c.local, c.remote, 0, 0, TcpFlags::ACK));
                events.push(SocketEvent::Connected(id));
                flush_queued(c, mss, out);
            }
            return Some(events);
        }

        if c.state == ConnState::SynReceived {
            c.state = ConnState::Established;
            events.push(SocketEvent::Accepted {
                conn: id,
                listen_port: c.listen_port.unwrap_or(c.local.port()),
            });
            flush_queued(c, mss, out);
        }

        if !pkt.payload.is_empty() {
            receive_data(c, id, pkt, &mut events);
        }
        if pkt.is_fin() {
            c.peer_fin_at.get_or_insert(pkt.seq);
        }
        if c.peer_fin_at == Some(c.rcv_nxt) {
            if c.state != ConnState::FinSent {
                out.push(SimPacket::control(
                    c.local,
                    c.remote,
                    c.snd_nxt,
                    c.rcv_nxt,
                    TcpFlags::FIN | TcpFlags::ACK,
                ));
                events.push(SocketEvent::PeerClosed(id));
            } else {
                events.push(SocketEvent::Closed(id));
            }
            self.conns.remove(&id);
        }
        Some(events)
    }

    fn accept_syn(&mut self, pkt: &SimPacket, out: &mut Vec<SimPacket>) -> Vec<SocketEvent> {
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            Conn {
                local: pkt.dst,
                remote: pkt.src,
                state: ConnState::SynReceived,
                active: false,
                listen_port: Some(pkt.dst.port()),
                snd_nxt: 0,
                rcv_nxt: 0,
                out_of_order: BTreeMap::new(),
                peer_fin_at: None,
                queued: Vec::new(),
                close_queued: false,
            },
        );
        out.push(SimPacket::control(
            pkt.dst,
            pkt.src,
            0,
            0,
            TcpFlags::SYN | TcpFlags::ACK,
        ));
        Vec::new()
    }
}

fn emit_data(c: &mut Conn, data: &[u8], mss: usize, out: &mut Vec<SimPacket>) {
    for chunk in data.chunks(mss) {
        out.push(SimPacket {
            src: c.local,
            dst: c.remote,
            seq: c.snd_nxt,
            ack: c.rcv_nxt,
            flags: TcpFlags::ACK,
            payload: Bytes::copy_from_slice(chunk),
        });
        c.snd_nxt = c.snd_nxt.wrapping_add(chunk.len() as u32);
    }
}

fn emit_fin(c: &mut Conn, out: &mut Vec<SimPacket>) {
    out.push(SimPacket::control(
        c.local,
        c.remote,
        c.snd_nxt,
        c.rcv_nxt,
        TcpFlags::FIN | TcpFlags::ACK,
    ));
    c.state = ConnState::FinSent;
}

fn flush_queued(c: &mut Conn, mss: usize, out: &mut Vec<SimPacket>) {
    for data in std::mem::take(&mut c.queued) {
        emit_data(c, &data, mss, out);
    }
    if std::mem::take(&mut c.close_queued) {
        emit_fin(c, out);
    }
}

fn receive_data(c: &mut Conn, id: ConnId, pkt: &SimPacket, events: &mut Vec<SocketEvent>) {
    if pkt.seq > c.rcv_nxt {
        c.out_of_order.entry(pkt.seq).or_insert_with(|| pkt.payload.clone());
        return;
    }
    let mut next = Some((pkt.seq, pkt.payload.clone()));
    while let Some((seq, seg)) = next {
        let end = seq.wrapping_add(seg.len() as u32);
        if end > c.rcv_nxt {
            events.push(SocketEvent::Data {
                conn: id,
                data: seg.slice((c.rcv_nxt - seq) as usize..),
                from: pkt.src,
            });
            c.rcv_nxt = end;
        }
        next = match c.out_of_order.first_key_value() {
            Some((&s, _)) if s <= c.rcv_nxt => c.out_of_order.remove_entry(&s),
            _ => None,
        };
    }
}

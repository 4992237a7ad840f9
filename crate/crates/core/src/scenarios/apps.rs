//! The host programs a scenario runs: HTTP clients, origin servers, and the
//! proxy and cache wrapped into one application type.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;

use bytes::Bytes;

use crate::cache::CacheApp;
use crate::controller::{Controller, HTTP_PORT};
use crate::httpsem::{self, ByteRange, ContentRange, HttpError, RequestVerdict};
use crate::msg::Envelope;
use crate::netmodel::tcp::{ConnId, SocketEvent};
use crate::netmodel::{Application, HostCtx, SimPacket, Time};
use crate::proxy::ProxyApp;
use crate::trace::Milestone;

#[derive(Debug, Clone)]
pub struct ClientRequest {
    pub index: u32,
    pub server: SocketAddrV4,
    pub host: String,
    pub path: String,
    pub range: Option<ByteRange>,
    pub method: String,
    pub body: usize,
}

impl ClientRequest {
    fn render(&self) -> Vec<u8> {
        if self.method == "GET" {
            httpsem::render_get(&self.host, &self.path, self.range)
        } else {
            httpsem::render_upload(&self.method, &self.host, &self.path, &vec![b'u'; self.body])
        }
    }
}

/// What a client saw for one request.
#[derive(Debug, Clone, Default)]
pub struct ClientOutcome {
    pub local: Option<SocketAddrV4>,
    pub started: Option<Time>,
    /// Arrival of the last response byte.
    pub finished: Option<Time>,
    pub response: Vec<u8>,
    /// Source addresses of every response segment.
    pub sources: BTreeSet<SocketAddrV4>,
    pub failed: bool,
    pub closed: bool,
}

impl ClientOutcome {
    pub fn is_settled(&self) -> bool {
        self.finished.is_some() || self.failed || self.closed
    }

    pub fn status(&self) -> Option<u16> {
        httpsem::parse_response_meta(&self.response).ok().map(|m| m.status)
    }

    pub fn body(&self) -> Option<&[u8]> {
        httpsem::strip_headers(&self.response).ok()
    }
}

#[derive(Debug, Default)]
pub struct ClientApp {
    requests: BTreeMap<u32, ClientRequest>,
    pub outcomes: BTreeMap<u32, ClientOutcome>,
    conns: BTreeMap<ConnId, u32>,
}

impl ClientApp {
    pub fn add(&mut self, request: ClientRequest) {
        self.outcomes.insert(request.index, ClientOutcome::default());
        self.requests.insert(request.index, request);
    }

    fn complete(&mut self, ctx: &mut HostCtx<'_, Controller>, index: u32, at: Time) {
        let out = self.outcomes.get_mut(&index).expect("known request");
        if out.finished.is_some() {
            return;
        }
        out.finished = Some(at);
        let bytes = out.body().map_or(0, |b| b.len() as u64);
        if let Some(local) = out.local {
            ctx.trace.milestone(
                at,
                ctx.name,
                Milestone::ClientDone {
                    request: index,
                    local,
                    bytes,
                },
            );
        }
    }
}

impl Application<Controller> for ClientApp {
    fn on_timer(&mut self, ctx: &mut HostCtx<'_, Controller>, token: u64) {
        let index = token as u32;
        let Some(req) = self.requests.get(&index) else {
            return;
        };
        match ctx.connect(req.server, None) {
            Ok(conn) => {
                let local = ctx.stack.info(conn).expect("just opened").local;
                self.conns.insert(conn, index);
                let out = self.outcomes.get_mut(&index).expect("known request");
                out.local = Some(local);
                out.started = Some(ctx.now);
                ctx.trace
                    .milestone(ctx.now, ctx.name, Milestone::ClientStart { request: index, local });
            }
            Err(e) => {
                ctx.log("connect_failed", e.to_string());
                self.outcomes.get_mut(&index).expect("known request").failed = true;
            }
        }
    }

    fn on_socket(&mut self, ctx: &mut HostCtx<'_, Controller>, event: SocketEvent) {
        let Some(&index) = self.conns.get(&event.conn()) else {
            return;
        };
        match event {
            SocketEvent::Connected(conn) => {
                let bytes = self.requests[&index].render();
                let _ = ctx.send(conn, &bytes);
            }
            SocketEvent::Data { data, from, .. } => {
                let out = self.outcomes.get_mut(&index).expect("known request");
                out.response.extend_from_slice(&data);
                out.sources.insert(from);
                if let Ok(meta) = httpsem::parse_response_meta(&out.response) {
                    if let Some(len) = meta.content_length {
                        if out.response.len() as u64 >= meta.header_len as u64 + len {
                            self.complete(ctx, index, ctx.now);
                        }
                    }
                }
            }
            SocketEvent::PeerClosed(conn) | SocketEvent::Closed(conn) => {
                self.conns.remove(&conn);
                let out = self.outcomes.get_mut(&index).expect("known request");
                out.closed = true;
                let unframed = httpsem::parse_response_meta(&out.response)
                    .map(|m| m.content_length.is_none())
                    .unwrap_or(false);
                if unframed {
                    self.complete(ctx, index, ctx.now);
                }
            }
            SocketEvent::Failed(conn) => {
                self.conns.remove(&conn);
                self.outcomes.get_mut(&index).expect("known request").failed = true;
                ctx.log("request_failed", format!("request {index}"));
            }
            SocketEvent::Accepted { .. } => {}
        }
    }
}

/// An HTTP origin: serves its fixtures by path, honouring single ranges.
#[derive(Debug, Default)]
pub struct OriginServer {
    contents: BTreeMap<String, Bytes>,
    pending: BTreeMap<ConnId, (SocketAddrV4, Vec<u8>)>,
    pub served: u64,
}

impl OriginServer {
    pub fn add_content(&mut self, path: &str, body: Bytes) {
        self.contents.insert(path.to_string(), body);
    }

    fn respond(&self, verdict: RequestVerdict) -> Vec<u8> {
        match verdict {
            RequestVerdict::Content(req) => match self.contents.get(&req.path) {
                None => httpsem::render_response(404, b""),
                Some(body) => match req.range {
                    None => httpsem::render_response(200, body),
                    Some(r) => {
                        let total = body.len() as u64;
                        match ContentRange::new(r.first, r.last.min(total.saturating_sub(1)), total) {
                            Ok(cr) => httpsem::render_partial(cr, &body[cr.first as usize..=cr.last as usize]),
                            Err(_) => httpsem::render_response(416, b""),
                        }
                    }
                },
            },
            RequestVerdict::PassThrough(req) => {
                let n = req.content_length.unwrap_or(0);
                httpsem::render_response(
                    200,
                    format!("{} {} accepted {n} bytes", req.method, req.path).as_bytes(),
                )
            }
        }
    }
}

impl Application<Controller> for OriginServer {
    fn on_start(&mut self, ctx: &mut HostCtx<'_, Controller>) {
        if let Err(e) = ctx.stack.listen(HTTP_PORT) {
            ctx.log("error", e.to_string());
        }
    }

    fn on_socket(&mut self, ctx: &mut HostCtx<'_, Controller>, event: SocketEvent) {
        match event {
            SocketEvent::Accepted { conn, .. } => {
                if let Some(info) = ctx.stack.info(conn) {
                    self.pending.insert(conn, (info.remote, Vec::new()));
                }
            }
            SocketEvent::Data { conn, data, .. } => {
                let Some((_, buf)) = self.pending.get_mut(&conn) else {
                    return;
                };
                buf.extend_from_slice(&data);
                let (peer, buf) = &self.pending[&conn];
                let peer = *peer;
                let response = match httpsem::parse_request(buf) {
                    Err(HttpError::Incomplete) => return,
                    Err(_) => httpsem::render_response(400, b""),
                    Ok(v) => {
                        let (header, body_len) = match &v {
                            RequestVerdict::Content(r) | RequestVerdict::PassThrough(r) => {
                                (r.raw_header_len, r.content_length.unwrap_or(0))
                            }
                        };
                        if (buf.len() as u64) < header as u64 + body_len {
                            return;
                        }
                        self.respond(v)
                    }
                };
                let request_bytes = self.pending.remove(&conn).map_or(0, |(_, b)| b.len() as u64);
                self.served += 1;
                if let Some(local) = ctx.stack.info(conn).map(|i| i.local) {
                    ctx.trace.milestone(
                        ctx.now,
                        ctx.name,
                        Milestone::Served {
                            local,
                            peer,
                            request_bytes,
                            response_bytes: response.len() as u64,
                        },
                    );
                }
                let _ = ctx.send(conn, &response);
                let _ = ctx.close(conn);
            }
            SocketEvent::PeerClosed(conn) | SocketEvent::Closed(conn) | SocketEvent::Failed(conn) => {
                self.pending.remove(&conn);
            }
            SocketEvent::Connected(_) => {}
        }
    }
}

/// Every kind of host a scenario can hold.
pub enum NodeApp {
    Client(ClientApp),
    Server(OriginServer),
    Proxy(ProxyApp),
    Cache(CacheApp),
}

impl NodeApp {
    pub fn as_client(&self) -> Option<&ClientApp> {
        match self {
            NodeApp::Client(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_proxy(&self) -> Option<&ProxyApp> {
        match self {
            NodeApp::Proxy(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_cache(&self) -> Option<&CacheApp> {
        match self {
            NodeApp::Cache(c) => Some(c),
            _ => None,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $app:ident => $call:expr) => {
        match $self {
            NodeApp::Client($app) => $call,
            NodeApp::Server($app) => $call,
            NodeApp::Proxy($app) => $call,
            NodeApp::Cache($app) => $call,
        }
    };
}

impl Application<Controller> for NodeApp {
    fn on_start(&mut self, ctx: &mut HostCtx<'_, Controller>) {
        dispatch!(self, a => a.on_start(ctx))
    }

    fn on_socket(&mut self, ctx: &mut HostCtx<'_, Controller>, event: SocketEvent) {
        dispatch!(self, a => a.on_socket(ctx, event))
    }

    fn on_timer(&mut self, ctx: &mut HostCtx<'_, Controller>, token: u64) {
        dispatch!(self, a => a.on_timer(ctx, token))
    }

    fn on_notice(&mut self, ctx: &mut HostCtx<'_, Controller>, notice: Envelope) {
        dispatch!(self, a => a.on_notice(ctx, notice))
    }

    fn on_tap(&mut self, ctx: &mut HostCtx<'_, Controller>, packet: &SimPacket) -> bool {
        dispatch!(self, a => a.on_tap(ctx, packet))
    }
}

//! Transparent, late-binding HTTP proxy.
//!
//! Client sessions reach the proxy through redirect rules, so the proxy is
//! the client's TCP peer. Nothing is opened upstream until the GET has been
//! read and the controller consulted: a hit sends the request to the named
//! cache, a miss sends it to the origin from the controller-assigned handle
//! port, which lets the network tell this transfer apart from every other.
//! Anything that is not a GET, or any request made while the controller is
//! unreachable, is relayed to the origin from an ordinary ephemeral port.
//!
//! The upstream response is relayed to the client segment by segment and
//! the session closes when the upstream does; the handle is then returned.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddrV4;

use thiserror::Error;

use crate::controller::{Controller, ControllerError};
use crate::httpsem::{self, HttpError, RequestVerdict};
use crate::msg::{PortRange, Query, Register, Reply};
use crate::netmodel::tcp::{ConnId, SocketEvent};
use crate::netmodel::{Application, HostCtx, Time};
use crate::trace::Milestone;

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub proxy_id: u32,
    /// Ports offered to the controller as content handles.
    pub handles: PortRange,
    /// Ports redirected client sessions arrive on.
    pub listen: PortRange,
    /// Processing time between a complete request and the upstream SYN.
    pub delay: Time,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProxyError {
    #[error("registration refused: {0}")]
    Register(#[from] ControllerError),
    #[error("cannot listen on {0}")]
    Listen(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingRequest,
    /// Request read; waiting out the processing delay.
    Querying,
    StreamingOrigin,
    StreamingCache,
    /// Relaying without content handling.
    PassThrough,
    Closing,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::AwaitingRequest => "awaiting_request",
            SessionState::Querying => "querying",
            SessionState::StreamingOrigin => "streaming_origin",
            SessionState::StreamingCache => "streaming_cache",
            SessionState::PassThrough => "pass_through",
            SessionState::Closing => "closing",
        };
        f.write_str(s)
    }
}

/// Where a session's upstream goes once the request is understood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    Origin { server: SocketAddrV4, handle: u16 },
    Cache { at: SocketAddrV4, handle: u16 },
    Plain { server: SocketAddrV4 },
}

#[derive(Debug, Clone)]
pub struct ProxySession {
    pub client: SocketAddrV4,
    pub listen_port: u16,
    pub state: SessionState,
    pub content: Option<httpsem::ContentName>,
    pub upstream: Option<ConnId>,
    pub handle: Option<u16>,
    upstream_local: Option<SocketAddrV4>,
    request: Vec<u8>,
    plan: Option<Plan>,
    relayed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub sessions: u64,
    pub queries: u64,
    pub from_origin: u64,
    pub from_cache: u64,
    pub pass_through: u64,
    pub fail_open: u64,
    pub releases: u64,
}

pub struct ProxyApp {
    pub config: ProxyConfig,
    sessions: BTreeMap<ConnId, ProxySession>,
    /// upstream connection → client connection
    upstreams: BTreeMap<ConnId, ConnId>,
    pub startup_error: Option<ProxyError>,
    pub stats: ProxyStats,
}

impl ProxyApp {
    pub fn new(config: ProxyConfig) -> Self {
        Self {
            config,
            sessions: BTreeMap::new(),
            upstreams: BTreeMap::new(),
            startup_error: None,
            stats: ProxyStats::default(),
        }
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ProxySession> {
        self.sessions.values()
    }

    fn start(&mut self, ctx: &mut HostCtx<'_, Controller>) -> Result<(), ProxyError> {
        let reg = Register {
            proxy_id: self.config.proxy_id,
            port_range: self.config.handles,
            listen_range: self.config.listen,
        };
        let node = ctx.node;
        ctx.with_control(|c, env| c.register_proxy(env, node, reg))?;
        for port in self.config.listen.iter() {
            ctx.stack.listen(port).map_err(|_| ProxyError::Listen(port))?;
        }
        Ok(())
    }

    fn on_client_data(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId, data: &[u8]) {
        let Some(s) = self.sessions.get_mut(&conn) else {
            return;
        };
        if s.state != SessionState::AwaitingRequest {
            // Request body bytes: follow the request upstream.
            if let Some(up) = s.upstream {
                let _ = ctx.send(up, data);
            } else {
                s.request.extend_from_slice(data);
            }
            return;
        }
        s.request.extend_from_slice(data);
        let verdict = httpsem::parse_request(&s.request);
        if matches!(verdict, Err(HttpError::Incomplete)) {
            return;
        }
        let (client, listen_port, bytes) = (s.client, s.listen_port, s.request.len() as u64);
        ctx.trace
            .milestone(ctx.now, ctx.name, Milestone::ProxyRequest { client, bytes });
        let proxy_id = self.config.proxy_id;
        let origin = ctx.with_control(|c, _| c.original_destination(proxy_id, listen_port, *client.ip()));
        let Some(server) = origin else {
            ctx.log("no_origin", format!("{client} on port {listen_port}"));
            self.finish(ctx, conn);
            return;
        };
        let s = self.sessions.get_mut(&conn).expect("present");
        let plan = match verdict {
            Ok(RequestVerdict::Content(req)) => match req.content_name() {
                Ok(name) => {
                    s.content = Some(name.clone());
                    self.stats.queries += 1;
                    let q = Query {
                        proxy_id,
                        content_name: name,
                        client_ip: *client.ip(),
                        client_port: client.port(),
                        server_ip: *server.ip(),
                        server_port: server.port(),
                    };
                    match ctx.with_control(|c, env| c.handle_query(env, q)) {
                        Ok(Reply {
                            cache_location: Some(loc),
                            handle_port: Some(handle),
                        }) => Plan::Cache {
                            at: SocketAddrV4::new(loc.ip, loc.port),
                            handle,
                        },
                        Ok(Reply {
                            cache_location: None,
                            handle_port: Some(handle),
                        }) => Plan::Origin { server, handle },
                        Ok(Reply { handle_port: None, .. }) => {
                            ctx.log("no_handle", format!("{client} relayed without a handle"));
                            Plan::Plain { server }
                        }
                        Err(e) => {
                            self.stats.fail_open += 1;
                            ctx.log("fail_open", format!("{client}: {e}"));
                            Plan::Plain { server }
                        }
                    }
                }
                Err(_) => Plan::Plain { server },
            },
            _ => Plan::Plain { server },
        };
        let s = self.sessions.get_mut(&conn).expect("present");
        s.plan = Some(plan);
        if let Plan::Origin { handle, .. } | Plan::Cache { handle, .. } = plan {
            s.handle = Some(handle);
        }
        if self.config.delay > 0 {
            s.state = SessionState::Querying;
            ctx.set_timer(self.config.delay, conn);
        } else {
            self.open_upstream(ctx, conn);
        }
    }

    fn open_upstream(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId) {
        let Some(s) = self.sessions.get_mut(&conn) else {
            return;
        };
        let Some(plan) = s.plan else {
            return;
        };
        let (remote, local_port, state) = match plan {
            Plan::Origin { server, handle } => (server, Some(handle), SessionState::StreamingOrigin),
            Plan::Cache { at, handle } => (at, Some(handle), SessionState::StreamingCache),
            Plan::Plain { server } => (server, None, SessionState::PassThrough),
        };
        let client = s.client;
        match ctx.connect(remote, local_port) {
            Ok(up) => {
                let local = ctx.stack.info(up).map(|i| i.local).expect("just opened");
                let s = self.sessions.get_mut(&conn).expect("present");
                s.upstream = Some(up);
                s.upstream_local = Some(local);
                s.state = state;
                let request = std::mem::take(&mut s.request);
                self.upstreams.insert(up, conn);
                match state {
                    SessionState::StreamingOrigin => self.stats.from_origin += 1,
                    SessionState::StreamingCache => self.stats.from_cache += 1,
                    _ => self.stats.pass_through += 1,
                }
                ctx.trace
                    .milestone(ctx.now, ctx.name, Milestone::ProxyUpstream { client, local, remote });
                ctx.log("upstream", format!("{client} via {local} to {remote} ({state})"));
                let _ = ctx.send(up, &request);
            }
            Err(e) => {
                ctx.log("upstream_failed", format!("{client} to {remote}: {e}"));
                self.finish(ctx, conn);
            }
        }
    }

    fn on_upstream_event(&mut self, ctx: &mut HostCtx<'_, Controller>, up: ConnId, event: SocketEvent) {
        let Some(&conn) = self.upstreams.get(&up) else {
            return;
        };
        match event {
            SocketEvent::Data { data, .. } => {
                if let Some(s) = self.sessions.get_mut(&conn) {
                    s.relayed += data.len() as u64;
                    let _ = ctx.send(conn, &data);
                }
            }
            SocketEvent::PeerClosed(_) | SocketEvent::Closed(_) | SocketEvent::Failed(_) => {
                self.upstreams.remove(&up);
                if let Some(s) = self.sessions.get_mut(&conn) {
                    s.upstream = None;
                    if let Some(local) = s.upstream_local {
                        ctx.trace.milestone(
                            ctx.now,
                            ctx.name,
                            Milestone::ProxyUpstreamDone {
                                local,
                                bytes: s.relayed,
                            },
                        );
                    }
                }
                self.finish(ctx, conn);
            }
            SocketEvent::Connected(_) | SocketEvent::Accepted { .. } => {}
        }
    }

    /// Ends the client side and gives back the handle, once.
    fn finish(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId) {
        let Some(s) = self.sessions.get_mut(&conn) else {
            return;
        };
        if s.state != SessionState::Closing {
            s.state = SessionState::Closing;
            let _ = ctx.close(conn);
        }
        if let Some(up) = s.upstream.take() {
            self.upstreams.remove(&up);
            let _ = ctx.close(up);
        }
        self.release(ctx, conn);
    }

    fn release(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId) {
        let Some(handle) = self.sessions.get_mut(&conn).and_then(|s| s.handle.take()) else {
            return;
        };
        self.stats.releases += 1;
        let proxy_id = self.config.proxy_id;
        ctx.with_control(|c, env| c.on_release(env, proxy_id, handle));
    }

    fn on_client_gone(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId) {
        if let Some(s) = self.sessions.get_mut(&conn) {
            s.state = SessionState::Closing;
        }
        self.finish(ctx, conn);
        self.sessions.remove(&conn);
    }
}

impl Application<Controller> for ProxyApp {
    fn on_start(&mut self, ctx: &mut HostCtx<'_, Controller>) {
        if let Err(e) = self.start(ctx) {
            ctx.log("startup_error", e.to_string());
            self.startup_error = Some(e);
        }
    }

    fn on_socket(&mut self, ctx: &mut HostCtx<'_, Controller>, event: SocketEvent) {
        let id = event.conn();
        if self.upstreams.contains_key(&id) {
            self.on_upstream_event(ctx, id, event);
            return;
        }
        match event {
            SocketEvent::Accepted { conn, listen_port } => {
                let Some(info) = ctx.stack.info(conn) else {
                    return;
                };
                self.stats.sessions += 1;
                self.sessions.insert(
                    conn,
                    ProxySession {
                        client: info.remote,
                        listen_port,
                        state: SessionState::AwaitingRequest,
                        content: None,
                        upstream: None,
                        handle: None,
                        upstream_local: None,
                        request: Vec::new(),
                        plan: None,
                        relayed: 0,
                    },
                );
            }
            SocketEvent::Data { conn, data, .. } => self.on_client_data(ctx, conn, &data),
            SocketEvent::PeerClosed(conn) | SocketEvent::Closed(conn) | SocketEvent::Failed(conn) => {
                self.on_client_gone(ctx, conn)
            }
            SocketEvent::Connected(_) => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut HostCtx<'_, Controller>, token: u64) {
        if self.sessions.get(&token).map(|s| s.state) == Some(SessionState::Querying) {
            self.open_upstream(ctx, token);
        }
    }
}

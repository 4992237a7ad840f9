use std::collections::BTreeMap;
use std::net::SocketAddrV4;

use crate::controller::{Controller, HTTP_PORT};
use crate::httpsem::{self, RequestVerdict};
use crate::msg::{Body, Envelope};
use crate::netmodel::tcp::{ConnId, SocketEvent};
use crate::netmodel::{Application, HostCtx, SimPacket, Time};
use crate::trace::Milestone;

use super::{Cache, FlowFilter, Outcome, Store, StreamKey, TapEffect};

/// How long a stream whose FIN arrived with bytes missing is given for
/// stragglers before it is finalized anyway.
pub const GRACE_PERIOD: Time = 1_000;

/// The cache host: taps forked packets, reports to the controller, and
/// answers proxy requests for stored content on port 80.
pub struct CacheApp {
    pub cache: Cache,
    grace: Time,
    gapped: BTreeMap<u64, StreamKey>,
    next_token: u64,
    requests: BTreeMap<ConnId, (SocketAddrV4, Vec<u8>)>,
    pub outcomes: Vec<(Time, Outcome)>,
    pub served: u64,
}

impl CacheApp {
    pub fn new(id: u32, store: Store) -> Self {
        Self {
            cache: Cache::new(id, store),
            grace: GRACE_PERIOD,
            gapped: BTreeMap::new(),
            next_token: 0,
            requests: BTreeMap::new(),
            outcomes: Vec::new(),
            served: 0,
        }
    }

    pub fn with_grace(mut self, grace: Time) -> Self {
        self.grace = grace;
        self
    }

    fn finalize(&mut self, ctx: &mut HostCtx<'_, Controller>, key: StreamKey) {
        let Some(outcome) = self.cache.finalize(key, ctx.now) else {
            return;
        };
        match &outcome {
            Outcome::Stored(ack) => {
                ctx.log(
                    "stored",
                    format!("{} from {}:{}", ack.content_name, key.server_ip, key.dst_port),
                );
                let ack = ack.clone();
                ctx.with_control(|c, env| c.on_stored_ack(env, ack));
            }
            Outcome::Partial(notice) => {
                ctx.log("partial", format!("{}:{}", key.server_ip, key.dst_port));
                let notice = notice.clone();
                ctx.with_control(|c, env| c.on_filter_released(env, notice));
            }
            Outcome::Discarded { why, notice } => {
                ctx.log("discard", format!("{}:{} {why}", key.server_ip, key.dst_port));
                let notice = notice.clone();
                ctx.with_control(|c, env| c.on_filter_released(env, notice));
            }
        }
        self.outcomes.push((ctx.now, outcome));
    }

    fn serve(&mut self, ctx: &mut HostCtx<'_, Controller>, conn: ConnId) {
        let Some((peer, buf)) = self.requests.get(&conn) else {
            return;
        };
        let (peer, request_bytes) = (*peer, buf.len() as u64);
        let response = match httpsem::parse_request(buf) {
            Err(httpsem::HttpError::Incomplete) => return,
            Ok(RequestVerdict::Content(req)) => match req.content_name() {
                Ok(name) => self.cache.serve(&name, req.range),
                Err(_) => httpsem::render_response(400, b""),
            },
            Ok(RequestVerdict::PassThrough(_)) | Err(_) => httpsem::render_response(400, b""),
        };
        self.requests.remove(&conn);
        self.served += 1;
        let local = ctx.stack.info(conn).map(|i| i.local);
        if let Some(local) = local {
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
}

impl Application<Controller> for CacheApp {
    fn on_start(&mut self, ctx: &mut HostCtx<'_, Controller>) {
        if let Err(e) = ctx.stack.listen(HTTP_PORT) {
            ctx.log("error", e.to_string());
        }
    }

    fn on_socket(&mut self, ctx: &mut HostCtx<'_, Controller>, event: SocketEvent) {
        match event {
            SocketEvent::Accepted { conn, .. } => {
                if let Some(info) = ctx.stack.info(conn) {
                    self.requests.insert(conn, (info.remote, Vec::new()));
                }
            }
            SocketEvent::Data { conn, data, .. } => {
                if let Some((_, buf)) = self.requests.get_mut(&conn) {
                    buf.extend_from_slice(&data);
                    self.serve(ctx, conn);
                }
            }
            SocketEvent::PeerClosed(conn) | SocketEvent::Closed(conn) | SocketEvent::Failed(conn) => {
                self.requests.remove(&conn);
            }
            SocketEvent::Connected(_) => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut HostCtx<'_, Controller>, token: u64) {
        if let Some(key) = self.gapped.remove(&token) {
            self.finalize(ctx, key);
        }
    }

    fn on_notice(&mut self, ctx: &mut HostCtx<'_, Controller>, notice: Envelope) {
        if let Body::SetFilter(filter) = notice.body {
            let text = format!("{} {}:{}", filter.filename, filter.server_ip, filter.dst_port);
            match self.cache.set_filter(FlowFilter::from(filter)) {
                Ok(()) => ctx.log("filter", text),
                Err(e) => ctx.log("filter_rejected", e.to_string()),
            }
        }
    }

    fn on_tap(&mut self, ctx: &mut HostCtx<'_, Controller>, packet: &SimPacket) -> bool {
        match self.cache.on_packet(packet) {
            TapEffect::Ignored => false,
            TapEffect::Buffered => true,
            TapEffect::Complete(key) => {
                self.gapped.retain(|_, k| *k != key);
                self.finalize(ctx, key);
                true
            }
            TapEffect::Gapped(key) => {
                if !self.gapped.values().any(|k| *k == key) {
                    let token = self.next_token;
                    self.next_token += 1;
                    self.gapped.insert(token, key);
                    ctx.set_timer(self.grace, token);
                }
                true
            }
        }
    }
}

//! One-sided transparent cache.
//!
//! The cache never holds a TCP session for the content it stores. It sees a
//! copy of the server→proxy response stream (duplicated at the fork switch),
//! groups packets by (server, handle, ack), reassembles them once the FIN
//! arrives and every byte before it is present, and files the body under the
//! content name the controller announced in a flow filter. 206 responses are
//! merged per content name until the ranges cover the whole file.
//!
//! [`Cache`] is the pure state machine; [`CacheApp`] wires it to the
//! simulator and serves stored content over HTTP.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use bytes::Bytes;
use thiserror::Error;

use crate::httpsem::{self, ByteRange, ContentName, ContentRange};
use crate::msg::{DiscardReason, FilterReleased, SetFilter, StoredAck};
use crate::netmodel::{SimPacket, Time};

mod app;
mod assembly;
mod ranges;
mod store;

pub use app::{CacheApp, GRACE_PERIOD};
pub use assembly::{AssemblyBuffer, StreamKey};
pub use ranges::RangeAccumulator;
pub use store::{file_name, CacheEntry, Store};

/// A controller instruction: file the stream from `server_ip` to handle
/// `dst_port` under `filename`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowFilter {
    pub filename: ContentName,
    pub server_ip: Ipv4Addr,
    pub dst_port: u16,
}

impl From<SetFilter> for FlowFilter {
    fn from(m: SetFilter) -> Self {
        Self {
            filename: m.filename,
            server_ip: m.server_ip,
            dst_port: m.dst_port,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("filter for {server_ip}:{dst_port} already live ({existing})")]
    FilterConflict {
        server_ip: Ipv4Addr,
        dst_port: u16,
        existing: ContentName,
    },
}

/// What one tapped packet did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapEffect {
    /// No filter covers the packet, or it carries nothing to keep.
    Ignored,
    Buffered,
    /// FIN seen and the stream is gap-free: ready to finalize.
    Complete(StreamKey),
    /// FIN seen but bytes are missing; they may still arrive.
    Gapped(StreamKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Stored(StoredAck),
    /// A 206 slice was merged; the file is not yet fully covered.
    Partial(FilterReleased),
    Discarded {
        why: String,
        notice: FilterReleased,
    },
}

pub struct Cache {
    pub id: u32,
    filters: BTreeMap<(Ipv4Addr, u16), FlowFilter>,
    buffers: BTreeMap<StreamKey, AssemblyBuffer>,
    ranges: HashMap<ContentName, RangeAccumulator>,
    store: Store,
    duplicates: u64,
}

impl Cache {
    pub fn new(id: u32, store: Store) -> Self {
        Self {
            id,
            filters: BTreeMap::new(),
            buffers: BTreeMap::new(),
            ranges: HashMap::new(),
            store,
            duplicates: 0,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn filters(&self) -> impl Iterator<Item = &FlowFilter> {
        self.filters.values()
    }

    pub fn accumulator(&self, name: &ContentName) -> Option<&RangeAccumulator> {
        self.ranges.get(name)
    }

    pub fn pending_buffers(&self) -> usize {
        self.buffers.len()
    }

    /// Duplicate segments discarded so far.
    pub fn duplicates(&self) -> u64 {
        self.duplicates + self.buffers.values().map(AssemblyBuffer::duplicates).sum::<u64>()
    }

    pub fn set_filter(&mut self, filter: FlowFilter) -> Result<(), CacheError> {
        let key = (filter.server_ip, filter.dst_port);
        if let Some(existing) = self.filters.get(&key) {
            return Err(CacheError::FilterConflict {
                server_ip: filter.server_ip,
                dst_port: filter.dst_port,
                existing: existing.filename.clone(),
            });
        }
        self.filters.insert(key, filter);
        Ok(())
    }

    pub fn on_packet(&mut self, pkt: &SimPacket) -> TapEffect {
        let fkey = (*pkt.src.ip(), pkt.dst.port());
        if !self.filters.contains_key(&fkey) || (pkt.is_empty() && !pkt.is_fin()) {
            return TapEffect::Ignored;
        }
        let key = StreamKey {
            server_ip: fkey.0,
            dst_port: fkey.1,
            ack: pkt.ack,
        };
        let buf = self.buffers.entry(key).or_insert_with(|| AssemblyBuffer::new(key));
        buf.insert(pkt.seq, pkt.payload.clone());
        if pkt.is_fin() {
            buf.set_fin(pkt.seq);
        }
        match (buf.fin_seen(), buf.is_complete()) {
            (false, _) => TapEffect::Buffered,
            (true, true) => TapEffect::Complete(key),
            (true, false) => TapEffect::Gapped(key),
        }
    }

    fn release_notice(&self, key: StreamKey, reason: DiscardReason) -> FilterReleased {
        FilterReleased {
            cache_id: self.id,
            server_ip: key.server_ip,
            dst_port: key.dst_port,
            reason,
        }
    }

    fn discard(&self, key: StreamKey, why: impl Into<String>) -> Outcome {
        Outcome::Discarded {
            why: why.into(),
            notice: self.release_notice(key, DiscardReason::Discarded),
        }
    }

    /// Ends capture of one stream and decides its fate. The filter is
    /// retired whatever the outcome. `None` if nothing was buffered under `key`.
    pub fn finalize(&mut self, key: StreamKey, now: Time) -> Option<Outcome> {
        let buf = self.buffers.remove(&key)?;
        self.duplicates += buf.duplicates();
        let filter = self.filters.remove(&(key.server_ip, key.dst_port))?;
        if !buf.is_complete() {
            return Some(self.discard(key, "missing bytes"));
        }
        let raw = buf.assemble();
        let meta = match httpsem::parse_response_meta(&raw) {
            Ok(m) => m,
            Err(e) => return Some(self.discard(key, format!("unparseable response: {e}"))),
        };
        if meta.is_error() {
            return Some(self.discard(key, format!("status {}", meta.status)));
        }
        let body = Bytes::copy_from_slice(&raw[meta.header_len..]);
        let name = filter.filename;
        match meta.status {
            206 => {
                let Some(range) = meta.content_range else {
                    return Some(self.discard(key, "206 without Content-Range"));
                };
                Some(self.merge_range(key, name, range, body, now))
            }
            200 => {
                if let Some(len) = meta.content_length {
                    if len != body.len() as u64 {
                        return Some(self.discard(key, format!("{} of {len} body bytes", body.len())));
                    }
                }
                Some(self.commit(key, name, body, now))
            }
            other => Some(self.discard(key, format!("status {other} not cacheable"))),
        }
    }

    fn merge_range(
        &mut self,
        key: StreamKey,
        name: ContentName,
        range: ContentRange,
        body: Bytes,
        now: Time,
    ) -> Outcome {
        if self.store.contains(&name) {
            return self.commit(key, name, Bytes::new(), now);
        }
        let acc = self
            .ranges
            .entry(name.clone())
            .or_insert_with(|| RangeAccumulator::new(name.clone(), range.total));
        if let Err(e) = acc.add(range, body) {
            return self.discard(key, e);
        }
        if !acc.is_complete() {
            return Outcome::Partial(self.release_notice(key, DiscardReason::Partial));
        }
        let acc = self.ranges.remove(&name).expect("present");
        self.commit(key, name, Bytes::from(acc.assemble()), now)
    }

    fn commit(&mut self, key: StreamKey, name: ContentName, body: Bytes, now: Time) -> Outcome {
        let entry = CacheEntry {
            name: name.clone(),
            body,
            stored_at: now,
        };
        if let Err(e) = self.store.insert(entry) {
            return self.discard(key, format!("store failed: {e}"));
        }
        Outcome::Stored(StoredAck {
            content_name: name,
            cache_id: self.id,
            server_ip: key.server_ip,
            dst_port: key.dst_port,
        })
    }

    /// A complete HTTP response for `name`: 200 with the body, 206 for a
    /// satisfiable range, 416 otherwise, 404 if nothing is stored.
    pub fn serve(&self, name: &ContentName, range: Option<ByteRange>) -> Vec<u8> {
        let Some(entry) = self.store.get(name) else {
            return httpsem::render_response(404, b"");
        };
        let total = entry.body.len() as u64;
        match range {
            None => httpsem::render_response(200, &entry.body),
            Some(r) => match ContentRange::new(r.first, r.last.min(total.saturating_sub(1)), total) {
                Ok(cr) => httpsem::render_partial(cr, &entry.body[cr.first as usize..=cr.last as usize]),
                Err(_) => httpsem::render_response(416, b""),
            },
        }
    }
}

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use bytes::Bytes;

/// Groups the packets of one captured response: same server, same handle,
/// same acknowledgement number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey {
    pub server_ip: Ipv4Addr,
    pub dst_port: u16,
    pub ack: u32,
}

/// Segments of one response seen on the tap, deduplicated by sequence number.
#[derive(Debug, Clone)]
pub struct AssemblyBuffer {
    pub key: StreamKey,
    segments: BTreeMap<u32, Bytes>,
    fin_seq: Option<u32>,
    duplicates: u64,
}

impl AssemblyBuffer {
    pub fn new(key: StreamKey) -> Self {
        Self {
            key,
            segments: BTreeMap::new(),
            fin_seq: None,
            duplicates: 0,
        }
    }

    /// Adds a segment; returns `false` (and keeps the first copy) if one with
    /// the same sequence number is already held.
    pub fn insert(&mut self, seq: u32, payload: Bytes) -> bool {
        if payload.is_empty() {
            return false;
        }
        if self.segments.contains_key(&seq) {
            self.duplicates += 1;
            return false;
        }
        self.segments.insert(seq, payload);
        true
    }

    pub fn set_fin(&mut self, seq: u32) {
        self.fin_seq.get_or_insert(seq);
    }

    pub fn fin_seen(&self) -> bool {
        self.fin_seq.is_some()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn start(&self) -> u32 {
        self.segments
            .keys()
            .next()
            .copied()
            .unwrap_or(self.fin_seq.unwrap_or(0))
    }

    /// Bytes covered without a gap from the first segment on.
    fn contiguous_end(&self) -> u32 {
        let mut cursor = self.start();
        for (&seq, seg) in &self.segments {
            if seq > cursor {
                break;
            }
            cursor = cursor.max(seq + seg.len() as u32);
        }
        cursor
    }

    /// FIN seen and every byte before it is present.
    pub fn is_complete(&self) -> bool {
        match self.fin_seq {
            Some(fin) => self.contiguous_end() == fin,
            None => false,
        }
    }

    /// The stream in sequence order. Only meaningful when complete.
    pub fn assemble(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity((self.contiguous_end() - self.start()) as usize);
        let mut cursor = self.start();
        for (&seq, seg) in &self.segments {
            if seq > cursor {
                break;
            }
            let skip = (cursor - seq) as usize;
            if skip < seg.len() {
                out.extend_from_slice(&seg[skip..]);
                cursor = seq + seg.len() as u32;
            }
        }
        out
    }
}

use std::collections::BTreeMap;

use bytes::Bytes;

use crate::httpsem::{ContentName, ContentRange};

/// Collects the 206 slices of one file until they cover all of it.
#[derive(Debug, Clone)]
pub struct RangeAccumulator {
    pub content: ContentName,
    pub total: u64,
    /// Disjoint, non-adjacent covered intervals, `first → last` inclusive.
    received: BTreeMap<u64, u64>,
    chunks: BTreeMap<u64, Bytes>,
}

impl RangeAccumulator {
    pub fn new(content: ContentName, total: u64) -> Self {
        Self {
            content,
            total,
            received: BTreeMap::new(),
            chunks: BTreeMap::new(),
        }
    }

    /// Records `body` as bytes `range.first..=range.last`. Rejects a slice
    /// for a different total or whose length disagrees with its range.
    pub fn add(&mut self, range: ContentRange, body: Bytes) -> Result<(), String> {
        if range.total != self.total {
            return Err(format!("total {} differs from {}", range.total, self.total));
        }
        if body.len() as u64 != range.len() {
            return Err(format!("body of {} bytes for a {}-byte range", body.len(), range.len()));
        }
        self.chunks.insert(range.first, body);
        self.cover(range.first, range.last);
        Ok(())
    }

    fn cover(&mut self, mut first: u64, mut last: u64) {
        // Absorb every interval that overlaps or touches [first, last].
        let touching: Vec<(u64, u64)> = self
            .received
            .range(..=last.saturating_add(1))
            .filter(|(_, &l)| l.saturating_add(1) >= first)
            .map(|(&f, &l)| (f, l))
            .collect();
        for (f, l) in touching {
            self.received.remove(&f);
            first = first.min(f);
            last = last.max(l);
        }
        self.received.insert(first, last);
    }

    pub fn covered(&self) -> u64 {
        self.received.iter().map(|(f, l)| l - f + 1).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.covered() == self.total
    }

    pub fn ranges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.received.iter().map(|(f, l)| (*f, *l))
    }

    /// The merged file; bytes not yet received are zero.
    pub fn assemble(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.total as usize];
        for (&first, chunk) in &self.chunks {
            let at = first as usize;
            out[at..at + chunk.len()].copy_from_slice(chunk);
        }
        out
    }
}

use std::collections::HashMap;
use std::net::Ipv4Addr;

use crate::httpsem::ContentName;

/// A cache the policy may choose, with its current load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheCandidate {
    pub cache_id: u32,
    /// Entries the controller knows this cache holds.
    pub entries: usize,
}

/// Decides whether a missed content is cached, and where.
pub trait CachePolicy: Send {
    /// Called once per query, hit or miss, before any decision.
    fn record_request(&mut self, name: &ContentName);
    fn should_cache(&self, name: &ContentName, server: Ipv4Addr, caches: &[CacheCandidate]) -> bool;
    fn select_cache(&self, name: &ContentName, caches: &[CacheCandidate]) -> Option<u32>;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    All,
    None,
    /// Cache from the k-th request for a name onward.
    Popularity(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Lowest cache id.
    First,
    /// Fewest entries; lowest id on ties.
    LeastLoaded,
}

#[derive(Debug, Clone)]
pub struct StandardPolicy {
    pub admission: Admission,
    pub selection: Selection,
    requests: HashMap<ContentName, u32>,
}

impl StandardPolicy {
    pub fn new(admission: Admission, selection: Selection) -> Self {
        Self {
            admission,
            selection,
            requests: HashMap::new(),
        }
    }

    pub fn requests_for(&self, name: &ContentName) -> u32 {
        self.requests.get(name).copied().unwrap_or(0)
    }
}

impl Default for StandardPolicy {
    fn default() -> Self {
        Self::new(Admission::All, Selection::First)
    }
}

impl CachePolicy for StandardPolicy {
    fn record_request(&mut self, name: &ContentName) {
        *self.requests.entry(name.clone()).or_default() += 1;
    }

    fn should_cache(&self, name: &ContentName, _server: Ipv4Addr, caches: &[CacheCandidate]) -> bool {
        if caches.is_empty() {
            return false;
        }
        match self.admission {
            Admission::All => true,
            Admission::None => false,
            Admission::Popularity(k) => self.requests_for(name) >= k,
        }
    }

    fn select_cache(&self, _name: &ContentName, caches: &[CacheCandidate]) -> Option<u32> {
        match self.selection {
            Selection::First => caches.iter().map(|c| c.cache_id).min(),
            Selection::LeastLoaded => caches
                .iter()
                .min_by_key(|c| (c.entries, c.cache_id))
                .map(|c| c.cache_id),
        }
    }

    fn describe(&self) -> String {
        format!("{:?}/{:?}", self.admission, self.selection)
    }
}

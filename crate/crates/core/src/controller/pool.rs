use std::collections::BTreeSet;

use thiserror::Error;

use crate::msg::PortRange;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("empty port range")]
    Empty,
    #[error("port range {0} leaves [1024, 65535]")]
    OutOfBounds(PortRange),
}

/// Free and in-use ports of one advertised range. Allocation always takes
/// the smallest free port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortPool {
    range: PortRange,
    free: BTreeSet<u16>,
    in_use: BTreeSet<u16>,
}

impl PortPool {
    pub fn new(range: PortRange) -> Result<Self, PoolError> {
        if range.is_empty() {
            return Err(PoolError::Empty);
        }
        if range.first < 1024 {
            return Err(PoolError::OutOfBounds(range));
        }
        Ok(Self {
            range,
            free: range.iter().collect(),
            in_use: BTreeSet::new(),
        })
    }

    pub fn range(&self) -> PortRange {
        self.range
    }

    pub fn size(&self) -> usize {
        self.range.len()
    }

    pub fn allocate(&mut self) -> Option<u16> {
        let port = self.free.pop_first()?;
        self.in_use.insert(port);
        Some(port)
    }

    /// Returns `port` to the free set; `false` if it was not in use.
    pub fn release(&mut self, port: u16) -> bool {
        if self.in_use.remove(&port) {
            self.free.insert(port);
            true
        } else {
            false
        }
    }

    pub fn is_in_use(&self, port: u16) -> bool {
        self.in_use.contains(&port)
    }

    pub fn in_use(&self) -> impl Iterator<Item = u16> + '_ {
        self.in_use.iter().copied()
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn live_count(&self) -> usize {
        self.in_use.len()
    }

    /// Free and in-use partition the advertised range.
    pub fn check(&self) -> Result<(), String> {
        if let Some(p) = self.free.intersection(&self.in_use).next() {
            return Err(format!("port {p} both free and in use"));
        }
        if self.free.len() + self.in_use.len() != self.range.len() {
            return Err(format!(
                "pool {} accounts for {} ports",
                self.range,
                self.free.len() + self.in_use.len()
            ));
        }
        if self.free.iter().chain(&self.in_use).any(|p| !self.range.contains(*p)) {
            return Err(format!("pool {} holds a foreign port", self.range));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advertised_range_sets_size() {
        assert_eq!(PortPool::new(PortRange::new(8000, 8099)).unwrap().size(), 100);
        assert_eq!(PortPool::new(PortRange::new(8001, 8000)), Err(PoolError::Empty));
        assert!(PortPool::new(PortRange::new(80, 90)).is_err());
    }

    #[test]
    fn smallest_free_first_and_reuse() {
        let mut pool = PortPool::new(PortRange::new(8000, 8001)).unwrap();
        assert_eq!(pool.allocate(), Some(8000));
        assert_eq!(pool.allocate(), Some(8001));
        assert_eq!(pool.allocate(), None);
        assert!(pool.release(8000));
        assert!(!pool.release(8000));
        assert_eq!(pool.allocate(), Some(8000));
        pool.check().unwrap();
    }
}

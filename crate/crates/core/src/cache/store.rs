use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};

use crate::httpsem::ContentName;
use crate::netmodel::Time;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub name: ContentName,
    pub body: Bytes,
    pub stored_at: Time,
}

/// Committed entries, optionally mirrored to one file per entry.
#[derive(Debug, Clone, Default)]
pub struct Store {
    entries: BTreeMap<ContentName, CacheEntry>,
    dir: Option<PathBuf>,
}

/// File name for an entry: the content name, percent-encoded.
pub fn file_name(name: &ContentName) -> String {
    utf8_percent_encode(name.as_str(), NON_ALPHANUMERIC).to_string()
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            entries: BTreeMap::new(),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Commits an entry. An existing entry under the same name is kept.
    pub fn insert(&mut self, entry: CacheEntry) -> io::Result<bool> {
        if self.entries.contains_key(&entry.name) {
            return Ok(false);
        }
        if let Some(dir) = &self.dir {
            std::fs::write(dir.join(file_name(&entry.name)), &entry.body)?;
        }
        self.entries.insert(entry.name.clone(), entry);
        Ok(true)
    }

    pub fn get(&self, name: &ContentName) -> Option<&CacheEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &ContentName) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &ContentName> {
        self.entries.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_under_encoded_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::persistent(dir.path()).unwrap();
        let name: ContentName = "www.server.com/pictures/a b.jpg".parse().unwrap();
        let entry = CacheEntry {
            name: name.clone(),
            body: Bytes::from_static(b"jpeg"),
            stored_at: 3,
        };
        assert!(store.insert(entry.clone()).unwrap());
        assert!(!store.insert(entry).unwrap());
        let path = dir.path().join("www%2Eserver%2Ecom%2Fpictures%2Fa%20b%2Ejpg");
        assert_eq!(std::fs::read(path).unwrap(), b"jpeg");
        assert_eq!(store.get(&name).unwrap().body.as_ref(), b"jpeg");
    }
}

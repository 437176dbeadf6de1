use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CachedHandle {
    pub handle: u32,
    /// Symbol size in bytes, once learned from a full-size write.
    pub size: Option<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub entries: usize,
}

/// Symbol name to handle map. Failed lookups are never stored.
#[derive(Default)]
pub struct HandleCache {
    entries: Mutex<HashMap<String, CachedHandle>>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl HandleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<CachedHandle> {
        let found = self.entries.lock().get(name).copied();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Look without touching the counters.
    pub fn peek(&self, name: &str) -> Option<CachedHandle> {
        self.entries.lock().get(name).copied()
    }

    pub fn insert(&self, name: &str, handle: u32) {
        let mut map = self.entries.lock();
        match map.get_mut(name) {
            Some(e) if e.handle == handle => {}
            Some(e) => *e = CachedHandle { handle, size: None },
            None => {
                map.insert(name.to_owned(), CachedHandle { handle, size: None });
            }
        }
    }

    pub fn record_size(&self, name: &str, handle: u32, size: u32) {
        if let Some(e) = self.entries.lock().get_mut(name) {
            if e.handle == handle {
                e.size = Some(size);
            }
        }
    }

    /// Drop `name` if it still maps to `handle`. A concurrent caller may
    /// already have replaced a stale entry; that entry is kept.
    pub fn evict(&self, name: &str, handle: u32) -> bool {
        let mut map = self.entries.lock();
        if map.get(name).is_some_and(|e| e.handle == handle) {
            map.remove(name);
            self.evictions.fetch_add(1, Ordering::Relaxed);
            true
        } else {
            false
        }
    }

    pub fn remove(&self, name: &str) -> Option<CachedHandle> {
        self.entries.lock().remove(name)
    }

    pub fn clear(&self) {
        self.entries.lock().clear();
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            entries: self.entries.lock().len(),
        }
    }
}

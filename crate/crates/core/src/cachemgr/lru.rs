use std::collections::{BTreeMap, HashMap};

struct Entry {
    size: u64,
    tick: u64,
}

/// Byte-budgeted recency index. Only sizes are tracked; the bytes live in
/// the cache store.
pub struct LruIndex {
    capacity: u64,
    used: u64,
    clock: u64,
    entries: HashMap<String, Entry>,
    order: BTreeMap<u64, String>,
}

impl LruIndex {
    pub fn new(capacity: u64) -> Self {
        LruIndex {
            capacity,
            used: 0,
            clock: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn next_tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Marks `key` most recently used. Returns false if absent.
    pub fn touch(&mut self, key: &str) -> bool {
        let tick = self.next_tick();
        let Some(e) = self.entries.get_mut(key) else {
            return false;
        };
        self.order.remove(&e.tick);
        e.tick = tick;
        self.order.insert(tick, key.to_string());
        true
    }

    /// Inserts or resizes `key` as most recently used, evicting least
    /// recently used entries until it fits. Returns the evicted keys, or
    /// `None` if the object alone exceeds the capacity (nothing changes).
    pub fn insert(&mut self, key: &str, size: u64) -> Option<Vec<String>> {
        if size > self.capacity {
            return None;
        }
        self.remove(key);
        let mut evicted = Vec::new();
        while self.used + size > self.capacity {
            let (&tick, _) = self.order.iter().next().expect("used > 0 implies entries");
            let victim = self.order.remove(&tick).expect("present");
            let e = self.entries.remove(&victim).expect("indexed");
            self.used -= e.size;
            evicted.push(victim);
        }
        let tick = self.next_tick();
        self.entries.insert(key.to_string(), Entry { size, tick });
        self.order.insert(tick, key.to_string());
        self.used += size;
        Some(evicted)
    }

    pub fn remove(&mut self, key: &str) -> bool {
        match self.entries.remove(key) {
            Some(e) => {
                self.order.remove(&e.tick);
                self.used -= e.size;
                true
            }
            None => false,
        }
    }

    /// Keys from least to most recently used.
    pub fn keys_by_recency(&self) -> Vec<String> {
        self.order.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_slot_trace() {
        let mut lru = LruIndex::new(2);
        let mut misses = Vec::new();
        for k in ["k1", "k2", "k3", "k1"] {
            if !lru.touch(k) {
                misses.push(k);
                lru.insert(k, 1).unwrap();
            }
        }
        assert_eq!(misses, vec!["k1", "k2", "k3", "k1"]);
        assert_eq!(lru.keys_by_recency(), vec!["k3", "k1"]);
    }

    #[test]
    fn oversize_is_refused() {
        let mut lru = LruIndex::new(10);
        lru.insert("a", 4).unwrap();
        assert!(lru.insert("big", 11).is_none());
        assert_eq!(lru.used(), 4);
        assert_eq!(lru.insert("b", 10).unwrap(), vec!["a".to_string()]);
        assert_eq!(lru.used(), 10);
    }

    #[test]
    fn resize_in_place() {
        let mut lru = LruIndex::new(10);
        lru.insert("a", 4).unwrap();
        lru.insert("a", 6).unwrap();
        assert_eq!(lru.used(), 6);
        assert_eq!(lru.len(), 1);
    }
}

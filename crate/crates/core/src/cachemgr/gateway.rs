use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use serde::Serialize;

use crate::s3probe::{S3Client, S3Error};

use super::lru::LruIndex;

/// Whole-object storage as seen by dataset consumers.
pub trait ObjectStore: Send + Sync {
    fn get(&self, key: &str) -> Result<Vec<u8>, S3Error>;
    fn put(&self, key: &str, content: &[u8]) -> Result<u64, S3Error>;
    fn delete(&self, key: &str) -> Result<(), S3Error>;
}

/// One bucket behind an S3 endpoint.
#[derive(Clone)]
pub struct S3Bucket {
    client: S3Client,
    bucket: String,
}

impl S3Bucket {
    pub fn new(client: S3Client, bucket: impl Into<String>) -> Self {
        S3Bucket {
            client,
            bucket: bucket.into(),
        }
    }

    pub fn bucket(&self) -> &str {
        &self.bucket
    }
}

impl ObjectStore for S3Bucket {
    fn get(&self, key: &str) -> Result<Vec<u8>, S3Error> {
        self.client.get_object(&self.bucket, key)
    }

    fn put(&self, key: &str, content: &[u8]) -> Result<u64, S3Error> {
        self.client.put_object(&self.bucket, key, content)
    }

    fn delete(&self, key: &str) -> Result<(), S3Error> {
        self.client.delete_object(&self.bucket, key)
    }
}

/// In-memory store with an optional fixed delay per call and a call counter.
#[derive(Default)]
pub struct MemoryStore {
    objects: Mutex<HashMap<String, (u64, Vec<u8>)>>,
    delay: Duration,
    gets: AtomicU64,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    pub fn with_delay(delay: Duration) -> Self {
        MemoryStore {
            delay,
            ..Default::default()
        }
    }

    pub fn gets(&self) -> u64 {
        self.gets.load(Ordering::SeqCst)
    }

    pub fn total_bytes(&self) -> u64 {
        self.lock().values().map(|(_, v)| v.len() as u64).sum()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lock().contains_key(key)
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, (u64, Vec<u8>)>> {
        self.objects.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn pause(&self) {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
    }
}

impl ObjectStore for MemoryStore {
    fn get(&self, key: &str) -> Result<Vec<u8>, S3Error> {
        self.gets.fetch_add(1, Ordering::SeqCst);
        self.pause();
        self.lock()
            .get(key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| S3Error::NoSuchKey(key.to_string()))
    }

    fn put(&self, key: &str, content: &[u8]) -> Result<u64, S3Error> {
        self.pause();
        let mut objects = self.lock();
        let version = objects.get(key).map_or(1, |(v, _)| v + 1);
        objects.insert(key.to_string(), (version, content.to_vec()));
        Ok(version)
    }

    fn delete(&self, key: &str) -> Result<(), S3Error> {
        self.lock().remove(key);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub bytes_served_from_cache: u64,
    pub bytes_fetched_from_origin: u64,
    pub origin_fetches: u64,
    pub writes: u64,
    pub bypassed: u64,
}

impl CacheStats {
    pub fn hit_ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

type FlightResult = Result<Arc<Vec<u8>>, S3Error>;

#[derive(Default)]
struct Flight {
    result: Mutex<Option<FlightResult>>,
    done: Condvar,
}

impl Flight {
    fn wait(&self) -> FlightResult {
        let mut slot = self.result.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(r) = slot.as_ref() {
                return r.clone();
            }
            slot = self.done.wait(slot).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn finish(&self, r: FlightResult) {
        *self.result.lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
        self.done.notify_all();
    }
}

struct State {
    index: LruIndex,
    generation: HashMap<String, u64>,
    flights: HashMap<String, Arc<Flight>>,
    stats: CacheStats,
    peak_used: u64,
}

/// Read-through cache in front of an origin store.
///
/// Reads hit the cache store when the key is indexed, otherwise one caller
/// fetches from the origin while concurrent callers for the same key wait
/// for its result. Writes go to the origin and drop the cached copy.
pub struct CacheGateway {
    origin: Arc<dyn ObjectStore>,
    cache: Arc<dyn ObjectStore>,
    state: Mutex<State>,
}

impl CacheGateway {
    pub fn new(origin: Arc<dyn ObjectStore>, cache: Arc<dyn ObjectStore>, capacity_bytes: u64) -> Self {
        CacheGateway {
            origin,
            cache,
            state: Mutex::new(State {
                index: LruIndex::new(capacity_bytes),
                generation: HashMap::new(),
                flights: HashMap::new(),
                stats: CacheStats::default(),
                peak_used: 0,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn stats(&self) -> CacheStats {
        self.lock().stats
    }

    pub fn cached_bytes(&self) -> u64 {
        self.lock().index.used()
    }

    /// Largest value [`CacheGateway::cached_bytes`] has ever taken.
    pub fn peak_cached_bytes(&self) -> u64 {
        self.lock().peak_used
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.lock().index.capacity()
    }

    pub fn cached_keys(&self) -> Vec<String> {
        self.lock().index.keys_by_recency()
    }

    pub fn read(&self, key: &str) -> Result<Vec<u8>, S3Error> {
        let flight = {
            let mut st = self.lock();
            if st.index.touch(key) {
                None
            } else if let Some(f) = st.flights.get(key) {
                Some((Arc::clone(f), false))
            } else {
                let f = Arc::new(Flight::default());
                st.flights.insert(key.to_string(), Arc::clone(&f));
                Some((f, true))
            }
        };
        match flight {
            None => match self.cache.get(key) {
                Ok(bytes) => {
                    let mut st = self.lock();
                    st.stats.hits += 1;
                    st.stats.bytes_served_from_cache += bytes.len() as u64;
                    Ok(bytes)
                }
                // Evicted between the index check and the read.
                Err(_) => {
                    self.lock().index.remove(key);
                    self.read(key)
                }
            },
            Some((f, false)) => {
                let bytes = f.wait()?;
                let mut st = self.lock();
                st.stats.hits += 1;
                st.stats.bytes_served_from_cache += bytes.len() as u64;
                Ok(bytes.as_ref().clone())
            }
            Some((f, true)) => self.fetch(key, &f),
        }
    }

    fn fetch(&self, key: &str, flight: &Flight) -> Result<Vec<u8>, S3Error> {
        let generation = self.lock().generation.get(key).copied().unwrap_or(0);
        let fetched = self.origin.get(key);
        let bytes = match fetched {
            Ok(b) => b,
            Err(e) => {
                let mut st = self.lock();
                st.flights.remove(key);
                st.stats.misses += 1;
                st.stats.origin_fetches += 1;
                drop(st);
                flight.finish(Err(e.clone()));
                return Err(e);
            }
        };
        let size = bytes.len() as u64;
        let evicted = {
            let mut st = self.lock();
            st.stats.misses += 1;
            st.stats.origin_fetches += 1;
            st.stats.bytes_fetched_from_origin += size;
            // A write since the fetch began makes these bytes stale.
            if st.generation.get(key).copied().unwrap_or(0) != generation {
                None
            } else {
                match st.index.insert(key, size) {
                    Some(ev) => {
                        st.stats.evictions += ev.len() as u64;
                        st.peak_used = st.peak_used.max(st.index.used());
                        Some(ev)
                    }
                    None => {
                        st.stats.bypassed += 1;
                        None
                    }
                }
            }
        };
        let shared = Arc::new(bytes);
        if let Some(evicted) = evicted {
            for k in evicted {
                let _ = self.cache.delete(&k);
            }
            if self.cache.put(key, &shared).is_err() {
                self.lock().index.remove(key);
            }
        }
        self.lock().flights.remove(key);
        flight.finish(Ok(Arc::clone(&shared)));
        Ok(Arc::try_unwrap(shared).unwrap_or_else(|a| a.as_ref().clone()))
    }

    /// Writes through to the origin and invalidates the cached copy.
    pub fn write(&self, key: &str, content: &[u8]) -> Result<u64, S3Error> {
        let version = self.origin.put(key, content)?;
        let was_cached = {
            let mut st = self.lock();
            *st.generation.entry(key.to_string()).or_insert(0) += 1;
            st.stats.writes += 1;
            st.index.remove(key)
        };
        if was_cached {
            let _ = self.cache.delete(key);
        }
        Ok(version)
    }
}

impl ObjectStore for CacheGateway {
    fn get(&self, key: &str) -> Result<Vec<u8>, S3Error> {
        self.read(key)
    }

    fn put(&self, key: &str, content: &[u8]) -> Result<u64, S3Error> {
        self.write(key, content)
    }

    fn delete(&self, key: &str) -> Result<(), S3Error> {
        self.origin.delete(key)?;
        let was_cached = {
            let mut st = self.lock();
            *st.generation.entry(key.to_string()).or_insert(0) += 1;
            st.index.remove(key)
        };
        if was_cached {
            let _ = self.cache.delete(key);
        }
        Ok(())
    }
}

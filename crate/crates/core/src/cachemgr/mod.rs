//! Frequency-based cache admission.
//!
//! Accesses are counted per dataset over a sliding window. Once a dataset
//! reaches the threshold it can be attached to a [`CacheGateway`]; from then
//! on [`CacheManager::store_for`] hands consumers the gateway instead of the
//! origin, with the same [`ObjectStore`] interface.

mod gateway;
mod lru;
mod window;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;

pub use gateway::{CacheGateway, CacheStats, MemoryStore, ObjectStore, S3Bucket};
pub use lru::LruIndex;
pub use window::AccessWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub dataset_id: String,
    /// Offset from an arbitrary fixed origin shared by the whole stream.
    pub timestamp: Duration,
    pub bytes: u64,
    pub operation: Operation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum EvictionOrder {
    #[default]
    LeastRecentlyUsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachePolicyConfig {
    pub window_length: Duration,
    pub access_threshold: u32,
    pub capacity_bytes: u64,
    pub eviction_order: EvictionOrder,
}

impl Default for CachePolicyConfig {
    fn default() -> Self {
        CachePolicyConfig {
            window_length: Duration::from_secs(60),
            access_threshold: 3,
            capacity_bytes: 64 << 20,
            eviction_order: EvictionOrder::LeastRecentlyUsed,
        }
    }
}

impl CachePolicyConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.access_threshold < 1 {
            return Err(CacheError::InvalidConfig("accessThreshold must be at least 1".into()));
        }
        if self.capacity_bytes == 0 {
            return Err(CacheError::InvalidConfig("capacityBytes must be positive".into()));
        }
        if self.window_length.is_zero() {
            return Err(CacheError::InvalidConfig("windowLength must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CacheError {
    #[error("invalid cache configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset {0} has no registered origin")]
    UnknownDataset(String),
    #[error("dataset {0} is not frequently accessed")]
    NotFrequent(String),
}

/// Location of a bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Endpoint {
    pub endpoint: String,
    pub bucket: String,
}

/// Where a dataset's reads are served from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EffectiveEndpoint {
    pub dataset: String,
    pub origin: Endpoint,
    pub serving: Endpoint,
    pub cached: bool,
}

struct DatasetEntry {
    origin: Endpoint,
    origin_store: Arc<dyn ObjectStore>,
    gateway: Option<(Endpoint, Arc<CacheGateway>)>,
}

pub struct CacheManager {
    config: CachePolicyConfig,
    window: AccessWindow,
    datasets: Mutex<HashMap<String, DatasetEntry>>,
}

impl CacheManager {
    pub fn new(config: CachePolicyConfig) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(CacheManager {
            window: AccessWindow::new(config.window_length),
            config,
            datasets: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &CachePolicyConfig {
        &self.config
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, DatasetEntry>> {
        self.datasets.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Returns the dataset's in-window count after recording.
    pub fn record_access(&self, rec: &AccessRecord) -> usize {
        self.window.record(rec)
    }

    pub fn access_count(&self, dataset_id: &str) -> usize {
        self.window.count(dataset_id)
    }

    pub fn should_cache(&self, dataset_id: &str) -> bool {
        self.window.count(dataset_id) >= self.config.access_threshold as usize
    }

    pub fn register_origin(&self, dataset_id: &str, origin: Endpoint, store: Arc<dyn ObjectStore>) {
        self.lock().insert(
            dataset_id.to_string(),
            DatasetEntry {
                origin,
                origin_store: store,
                gateway: None,
            },
        );
    }

    /// Routes the dataset's reads through a gateway backed by `cache_store`.
    /// Attaching twice keeps the first gateway.
    pub fn attach_gateway(
        &self,
        dataset_id: &str,
        cache: Endpoint,
        cache_store: Arc<dyn ObjectStore>,
    ) -> Result<EffectiveEndpoint, CacheError> {
        if !self.should_cache(dataset_id) {
            return Err(CacheError::NotFrequent(dataset_id.to_string()));
        }
        let mut map = self.lock();
        let entry = map
            .get_mut(dataset_id)
            .ok_or_else(|| CacheError::UnknownDataset(dataset_id.to_string()))?;
        if entry.gateway.is_none() {
            let gw = CacheGateway::new(
                Arc::clone(&entry.origin_store),
                cache_store,
                self.config.capacity_bytes,
            );
            entry.gateway = Some((cache, Arc::new(gw)));
        }
        Ok(describe(dataset_id, entry))
    }

    pub fn effective_endpoint(&self, dataset_id: &str) -> Option<EffectiveEndpoint> {
        self.lock().get(dataset_id).map(|e| describe(dataset_id, e))
    }

    /// The store consumers should read the dataset from.
    pub fn store_for(&self, dataset_id: &str) -> Option<Arc<dyn ObjectStore>> {
        self.lock().get(dataset_id).map(|e| match &e.gateway {
            Some((_, gw)) => Arc::clone(gw) as Arc<dyn ObjectStore>,
            None => Arc::clone(&e.origin_store),
        })
    }

    pub fn gateway(&self, dataset_id: &str) -> Option<Arc<CacheGateway>> {
        self.lock()
            .get(dataset_id)
            .and_then(|e| e.gateway.as_ref().map(|(_, g)| Arc::clone(g)))
    }
}

fn describe(dataset_id: &str, e: &DatasetEntry) -> EffectiveEndpoint {
    match &e.gateway {
        Some((ep, _)) => EffectiveEndpoint {
            dataset: dataset_id.to_string(),
            origin: e.origin.clone(),
            serving: ep.clone(),
            cached: true,
        },
        None => EffectiveEndpoint {
            dataset: dataset_id.to_string(),
            origin: e.origin.clone(),
            serving: e.origin.clone(),
            cached: false,
        },
    }
}

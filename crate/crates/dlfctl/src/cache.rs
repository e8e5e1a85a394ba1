//! Cache trace runner behind `dlfctl cache run`.
//!
//! A shuffled trace that reads every object `reuse` times is replayed twice
//! against a latency-floored stub origin: once straight from the origin, once
//! through a [`CacheManager`] that attaches a gateway as soon as the dataset
//! crosses the access threshold. Every read is checked against the origin
//! bytes and the cache size is checked after every operation.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::Serialize;

use dlf_core::cachemgr::{
    AccessRecord, CacheManager, CachePolicyConfig, CacheStats, Endpoint, ObjectStore, Operation, S3Bucket,
};
use dlf_core::s3probe::{LatencyModel, S3Client, StubBucketConfig, StubOptions, StubServer, Verb};

use crate::scenario::{random_bytes, seeded_rng};
use crate::{CmdResult, Failure};

const DATASET: &str = "shards";
const ORIGIN: &str = "origin";
const CACHE: &str = "cache";

#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub objects: usize,
    pub reuse: usize,
    pub origin_latency: Duration,
    /// Defaults to the total object size.
    pub capacity_bytes: Option<u64>,
    pub access_threshold: u32,
    pub seed: u64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            objects: 20,
            reuse: 3,
            origin_latency: Duration::from_millis(4),
            capacity_bytes: None,
            access_threshold: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRun {
    pub stats: CacheStats,
    pub hit_ratio: f64,
    pub reads: u64,
    pub origin_gets_direct: u64,
    pub origin_gets_cached: u64,
    pub fidelity_failures: u64,
    pub capacity_violations: u64,
    pub capacity_bytes: u64,
    pub peak_cached_bytes: u64,
    /// Read index at which the gateway was attached.
    pub attached_after: u64,
    pub direct_ms: f64,
    pub cached_ms: f64,
}

impl TraceRun {
    /// The properties a run must satisfy; an empty list means all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.fidelity_failures > 0 {
            v.push(format!("{} reads returned wrong bytes", self.fidelity_failures));
        }
        if self.capacity_violations > 0 {
            v.push(format!("capacity exceeded after {} operations", self.capacity_violations));
        }
        if self.origin_gets_direct - self.origin_gets_cached != self.stats.hits {
            v.push(format!(
                "origin GETs fell by {}, hits were {}",
                self.origin_gets_direct - self.origin_gets_cached,
                self.stats.hits
            ));
        }
        v
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("trace run serializes")
    }

    /// Flat string map, for storing in a ConfigMap.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let serde_json::Value::Object(top) = serde_json::to_value(self).expect("serializes") else {
            unreachable!("struct serializes to an object")
        };
        let mut out = BTreeMap::new();
        for (k, v) in top {
            match v {
                serde_json::Value::Object(inner) => {
                    for (ik, iv) in inner {
                        out.insert(format!("{k}.{ik}"), iv.to_string());
                    }
                }
                other => {
                    out.insert(k, other.to_string());
                }
            }
        }
        out
    }
}

fn failed<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Assertion(e.to_string())
}

pub fn run_trace(opts: &TraceOptions) -> CmdResult<TraceRun> {
    if opts.objects == 0 || opts.reuse == 0 {
        return Err(Failure::user("objects and reuse must be positive"));
    }
    let mut rng = seeded_rng(opts.seed, 5);
    let objects: BTreeMap<String, Vec<u8>> = (0..opts.objects)
        .map(|i| (format!("shard-{i:04}"), random_bytes(&mut rng, 1000, 4000)))
        .collect();
    let total: u64 = objects.values().map(|v| v.len() as u64).sum();
    let capacity = opts.capacity_bytes.unwrap_or(total);

    let creds = dlf_core::s3probe::Credentials::new("cache-user", "cache-secret");
    let mut origin_cfg = StubBucketConfig::new(ORIGIN, creds.clone())
        .with_latency(LatencyModel::new(opts.origin_latency, Duration::ZERO));
    origin_cfg.objects = objects.clone();
    let stub = StubServer::start(vec![origin_cfg, StubBucketConfig::new(CACHE, creds.clone())], StubOptions::default())
        .map_err(failed)?;
    let client = S3Client::new(&stub.endpoint(), Some(creds), Duration::from_secs(10)).map_err(failed)?;
    let origin: Arc<dyn ObjectStore> = Arc::new(S3Bucket::new(client.clone(), ORIGIN));
    let cache: Arc<dyn ObjectStore> = Arc::new(S3Bucket::new(client, CACHE));
    let ep = |b: &str| Endpoint {
        endpoint: stub.endpoint(),
        bucket: b.to_string(),
    };

    let keys: Vec<&String> = objects.keys().collect();
    let mut trace: Vec<&String> = keys.iter().flat_map(|k| std::iter::repeat(*k).take(opts.reuse)).collect();
    trace.shuffle(&mut rng);

    let gets = || stub.request_count(ORIGIN, Verb::Get);
    let start = Instant::now();
    for key in &trace {
        origin.get(key).map_err(failed)?;
    }
    let direct = start.elapsed();
    let origin_gets_direct = gets();

    let manager = CacheManager::new(CachePolicyConfig {
        capacity_bytes: capacity,
        access_threshold: opts.access_threshold,
        ..CachePolicyConfig::default()
    })
    .map_err(|e| Failure::user(e.to_string()))?;
    manager.register_origin(DATASET, ep(ORIGIN), Arc::clone(&origin));

    let mut fidelity_failures = 0;
    let mut capacity_violations = 0;
    let mut attached_after = None;
    let start = Instant::now();
    for (i, key) in trace.iter().enumerate() {
        manager.record_access(&AccessRecord {
            dataset_id: DATASET.into(),
            timestamp: start.elapsed(),
            bytes: objects[*key].len() as u64,
            operation: Operation::Read,
        });
        if attached_after.is_none() && manager.should_cache(DATASET) {
            manager.attach_gateway(DATASET, ep(CACHE), Arc::clone(&cache)).map_err(failed)?;
            attached_after = Some(i as u64);
        }
        let store = manager.store_for(DATASET).expect("registered");
        if store.get(key).map_err(failed)? != objects[*key] {
            fidelity_failures += 1;
        }
        if let Some(gw) = manager.gateway(DATASET) {
            if gw.cached_bytes() > capacity {
                capacity_violations += 1;
            }
        }
    }
    let cached = start.elapsed();
    let origin_gets_cached = gets() - origin_gets_direct;
    let gw = manager.gateway(DATASET);
    let stats = gw.as_ref().map(|g| g.stats()).unwrap_or_default();
    Ok(TraceRun {
        hit_ratio: stats.hit_ratio(),
        stats,
        reads: trace.len() as u64,
        origin_gets_direct,
        origin_gets_cached,
        fidelity_failures,
        capacity_violations,
        capacity_bytes: capacity,
        peak_cached_bytes: gw.map_or(0, |g| g.peak_cached_bytes()),
        attached_after: attached_after.unwrap_or(trace.len() as u64),
        direct_ms: direct.as_secs_f64() * 1000.0,
        cached_ms: cached.as_secs_f64() * 1000.0,
    })
}

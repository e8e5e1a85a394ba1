use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::model::{DatasetSpec, Kind};
use crate::statestore::{EventType, ObjectKey, Store, StoredObject, WatchEvent};

use super::queue::{Backoff, WorkQueue};
use super::reconcile::{reconcile, Action, ReconcileOutcome};
use super::{DatasetKey, Prober};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub workers: usize,
    pub backoff: Backoff,
    /// Upper bound on how long [`ControllerHandle::stop`] waits for in-flight
    /// passes.
    pub drain_timeout: Duration,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            workers: 2,
            backoff: Backoff::default(),
            drain_timeout: Duration::from_secs(5),
        }
    }
}

impl ControllerConfig {
    pub fn with_workers(workers: usize) -> Self {
        ControllerConfig {
            workers,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub reconciles: u64,
    pub relists: u64,
    pub per_key: BTreeMap<DatasetKey, u64>,
    pub last_outcome: BTreeMap<DatasetKey, ReconcileOutcome>,
}

struct Shared {
    store: Arc<Store>,
    prober: Arc<dyn Prober>,
    queue: WorkQueue<DatasetKey>,
    retry: Duration,
    stopping: AtomicBool,
    cursor: AtomicU64,
    stats: Mutex<ControllerStats>,
}

/// A running operator. Dropping the handle stops it.
pub struct ControllerHandle {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    drain_timeout: Duration,
}

/// Starts the informer and `config.workers` reconcile workers.
///
/// The informer lists all Datasets, then follows the store's event stream.
/// Dataset events enqueue the Dataset's key; events on objects owned by a
/// Dataset enqueue the owner. If the stream falls behind the store's history
/// it lists again and enqueues every Dataset.
pub fn run_controller(
    store: Arc<Store>,
    prober: Arc<dyn Prober>,
    config: ControllerConfig,
) -> ControllerHandle {
    assert!(config.workers >= 1, "controller needs at least one worker");
    let shared = Arc::new(Shared {
        store,
        prober,
        queue: WorkQueue::new(config.backoff),
        retry: config.backoff.base,
        stopping: AtomicBool::new(false),
        cursor: AtomicU64::new(0),
        stats: Mutex::new(ControllerStats::default()),
    });
    let (initial, sequence) = shared.store.list_at(Kind::Dataset);
    let mut seen = HashMap::new();
    for obj in &initial {
        seen.insert(obj.key(), Trigger::of(obj));
        shared.queue.add(DatasetKey::of(obj));
    }
    shared.cursor.store(sequence, Ordering::SeqCst);

    let mut threads = Vec::new();
    let informer = Arc::clone(&shared);
    threads.push(
        std::thread::Builder::new()
            .name("dlf-informer".into())
            .spawn(move || informer_loop(&informer, seen))
            .expect("spawn informer"),
    );
    for i in 0..config.workers {
        let worker = Arc::clone(&shared);
        threads.push(
            std::thread::Builder::new()
                .name(format!("dlf-worker-{i}"))
                .spawn(move || worker_loop(&worker))
                .expect("spawn worker"),
        );
    }
    ControllerHandle {
        shared,
        threads,
        drain_timeout: config.drain_timeout,
    }
}

/// The parts of a Dataset whose change needs a new pass. Status and
/// annotation writes, which the operator makes itself, are not among them.
#[derive(PartialEq)]
struct Trigger {
    spec: Option<DatasetSpec>,
    deletion_requested: bool,
    finalizers: Vec<String>,
}

impl Trigger {
    fn of(obj: &StoredObject) -> Self {
        Trigger {
            spec: obj.as_dataset().map(|d| d.spec),
            deletion_requested: obj.meta.deletion_requested,
            finalizers: obj.meta.finalizers.clone(),
        }
    }
}

impl DatasetKey {
    fn of(obj: &StoredObject) -> Self {
        DatasetKey::new(&obj.meta.namespace, &obj.meta.name)
    }
}

fn route(shared: &Shared, seen: &mut HashMap<ObjectKey, Trigger>, ev: WatchEvent) {
    let obj = &ev.object;
    match obj.kind() {
        Kind::Dataset => {
            let key = obj.key();
            let enqueue = match ev.event_type {
                EventType::Deleted => {
                    seen.remove(&key);
                    true
                }
                EventType::Added | EventType::Modified => {
                    let trigger = Trigger::of(obj);
                    let changed = seen.get(&key) != Some(&trigger);
                    seen.insert(key, trigger);
                    changed
                }
            };
            if enqueue {
                shared.queue.add(DatasetKey::of(obj));
            }
        }
        Kind::Secret | Kind::VolumeClaim => {
            for owner in obj.meta.owner_refs.iter().filter(|r| r.kind == Kind::Dataset) {
                shared
                    .queue
                    .add(DatasetKey::new(&obj.meta.namespace, &owner.name));
            }
        }
        _ => {}
    }
}

fn relist(shared: &Shared, seen: &mut HashMap<ObjectKey, Trigger>) -> u64 {
    let (objects, sequence) = shared.store.list_at(Kind::Dataset);
    seen.clear();
    for obj in &objects {
        seen.insert(obj.key(), Trigger::of(obj));
        shared.queue.add(DatasetKey::of(obj));
    }
    shared.stats.lock().unwrap_or_else(|e| e.into_inner()).relists += 1;
    sequence
}

fn informer_loop(shared: &Shared, mut seen: HashMap<ObjectKey, Trigger>) {
    let mut cursor = shared.cursor.load(Ordering::SeqCst);
    'outer: while !shared.stopping.load(Ordering::SeqCst) {
        let mut stream = match shared.store.watch(None, None, cursor) {
            Ok(s) => s,
            Err(_) => {
                cursor = relist(shared, &mut seen);
                shared.cursor.store(cursor, Ordering::SeqCst);
                continue;
            }
        };
        while !shared.stopping.load(Ordering::SeqCst) {
            match stream.next_timeout(POLL) {
                Ok(Some(ev)) => {
                    cursor = ev.sequence;
                    route(shared, &mut seen, ev);
                    shared.cursor.store(cursor, Ordering::SeqCst);
                }
                Ok(None) => {}
                Err(_) => {
                    cursor = relist(shared, &mut seen);
                    shared.cursor.store(cursor, Ordering::SeqCst);
                    continue 'outer;
                }
            }
        }
    }
}

fn worker_loop(shared: &Shared) {
    while !shared.stopping.load(Ordering::SeqCst) {
        let Some(key) = shared.queue.get(POLL) else {
            continue;
        };
        let outcome = reconcile(&key, &shared.store, shared.prober.as_ref(), shared.retry);
        match &outcome.action {
            Action::RequeueAfter(d) => {
                shared.queue.add_rate_limited(key.clone(), *d);
            }
            _ => shared.queue.forget(&key),
        }
        {
            let mut stats = shared.stats.lock().unwrap_or_else(|e| e.into_inner());
            stats.reconciles += 1;
            *stats.per_key.entry(key.clone()).or_insert(0) += 1;
            stats.last_outcome.insert(key.clone(), outcome);
        }
        shared.queue.done(&key);
    }
}

impl ControllerHandle {
    pub fn stats(&self) -> ControllerStats {
        self.shared
            .stats
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.shared.store
    }

    fn quiet(&self, include_delayed: bool) -> bool {
        let q = &self.shared.queue;
        let queue_quiet = if include_delayed {
            q.is_idle()
        } else {
            q.is_settled()
        };
        queue_quiet
            && self.shared.cursor.load(Ordering::SeqCst) >= self.shared.store.current_sequence()
    }

    fn wait(&self, timeout: Duration, include_delayed: bool) -> bool {
        let deadline = Instant::now() + timeout;
        let mut streak = 0;
        while Instant::now() < deadline {
            if self.quiet(include_delayed) {
                streak += 1;
                // A second observation rules out an event committed between
                // the queue check and the cursor check.
                if streak >= 2 {
                    return true;
                }
            } else {
                streak = 0;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        false
    }

    /// Waits until every event has been routed, no key is queued or being
    /// processed and no retry is scheduled. Returns false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        self.wait(timeout, true)
    }

    /// Like [`ControllerHandle::wait_idle`] but ignores scheduled retries,
    /// for stores holding Datasets that keep failing their probe.
    pub fn wait_settled(&self, timeout: Duration) -> bool {
        self.wait(timeout, false)
    }

    /// Stops taking new keys, lets in-flight passes finish (bounded by the
    /// configured drain timeout) and joins the threads.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.shared.queue.shutdown();
        let deadline = Instant::now() + self.drain_timeout;
        while self.shared.queue.inflight_len() > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(1));
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ControllerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.shutdown();
        }
    }
}

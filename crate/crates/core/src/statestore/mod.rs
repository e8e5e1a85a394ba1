//! In-memory simulated cluster API.
//!
//! Objects are keyed by `(kind, namespace, name)`. Every committed mutation
//! gets the next store-wide sequence number and appends exactly one
//! [`WatchEvent`] to a bounded history, from which watch streams replay and
//! then follow live changes.

mod snapshot;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::model::{
    validate_meta, Dataset, DatasetSpec, DatasetStatus, Kind, ObjectMeta,
};
use crate::resources::{ConfigMapData, PodSpec, SecretData, VolumeClaimSpec};

pub use snapshot::{dump_snapshot, load_snapshot, parse_documents, render_documents};

pub const DEFAULT_HISTORY_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBody {
    pub spec: DatasetSpec,
    pub status: DatasetStatus,
}

/// Kind-specific content. The kind of a [`StoredObject`] is derived from its
/// payload, so the two can never disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Dataset(DatasetBody),
    VolumeClaim(VolumeClaimSpec),
    Secret(SecretData),
    ConfigMap(ConfigMapData),
    Pod(PodSpec),
    Namespace,
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Dataset(_) => Kind::Dataset,
            Payload::VolumeClaim(_) => Kind::VolumeClaim,
            Payload::Secret(_) => Kind::Secret,
            Payload::ConfigMap(_) => Kind::ConfigMap,
            Payload::Pod(_) => Kind::Pod,
            Payload::Namespace => Kind::Namespace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub meta: ObjectMeta,
    pub payload: Payload,
}

impl StoredObject {
    pub fn new(meta: ObjectMeta, payload: Payload) -> Self {
        StoredObject { meta, payload }
    }

    pub fn namespace(name: impl Into<String>) -> Self {
        StoredObject {
            meta: ObjectMeta::new("", name),
            payload: Payload::Namespace,
        }
    }

    pub fn with_label(mut self, key: &str, value: &str) -> Self {
        self.meta.labels.insert(key.to_string(), value.to_string());
        self
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    pub fn key(&self) -> ObjectKey {
        ObjectKey::new(self.kind(), &self.meta.namespace, &self.meta.name)
    }

    pub fn as_dataset(&self) -> Option<Dataset> {
        match &self.payload {
            Payload::Dataset(b) => Some(Dataset {
                meta: self.meta.clone(),
                spec: b.spec.clone(),
                status: b.status.clone(),
            }),
            _ => None,
        }
    }

    pub fn as_pod(&self) -> Option<&PodSpec> {
        match &self.payload {
            Payload::Pod(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_secret(&self) -> Option<&SecretData> {
        match &self.payload {
            Payload::Secret(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_claim(&self) -> Option<&VolumeClaimSpec> {
        match &self.payload {
            Payload::VolumeClaim(c) => Some(c),
            _ => None,
        }
    }
}

impl From<Dataset> for StoredObject {
    fn from(ds: Dataset) -> Self {
        StoredObject {
            meta: ds.meta,
            payload: Payload::Dataset(DatasetBody {
                spec: ds.spec,
                status: ds.status,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey {
    pub kind: Kind,
    pub namespace: String,
    pub name: String,
}

impl ObjectKey {
    pub fn new(kind: Kind, namespace: &str, name: &str) -> Self {
        ObjectKey {
            kind,
            namespace: namespace.to_string(),
            name: name.to_string(),
        }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.namespace.is_empty() {
            write!(f, "{}/{}", self.kind, self.name)
        } else {
            write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventType {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatchEvent {
    pub sequence: u64,
    pub event_type: EventType,
    pub object: StoredObject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeletionOutcome {
    Removed,
    TerminatingPending,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(ObjectKey),
    #[error("{0} not found")]
    NotFound(ObjectKey),
    #[error("conflict on {key}: expected resourceVersion {expected}, current {current}")]
    Conflict {
        key: ObjectKey,
        expected: u64,
        current: u64,
    },
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("watch history expired: requested after {requested}, oldest retained {oldest}")]
    SequenceExpired { requested: u64, oldest: u64 },
    #[error("watch requested from sequence {requested} beyond current {current}")]
    FutureSequence { requested: u64, current: u64 },
}

struct Inner {
    objects: BTreeMap<ObjectKey, StoredObject>,
    history: VecDeque<WatchEvent>,
    sequence: u64,
    history_limit: usize,
    next_uid: u64,
}

impl Inner {
    fn emit(&mut self, event_type: EventType, object: StoredObject) {
        self.sequence += 1;
        self.history.push_back(WatchEvent {
            sequence: self.sequence,
            event_type,
            object,
        });
        while self.history.len() > self.history_limit {
            self.history.pop_front();
        }
    }

    fn oldest_retained(&self) -> u64 {
        self.history
            .front()
            .map_or(self.sequence + 1, |e| e.sequence)
    }
}

/// The shared cluster state. All operations are atomic with respect to each
/// other; hand out clones of an `Arc<Store>` to concurrent actors.
pub struct Store {
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl Default for Store {
    fn default() -> Self {
        Store::with_history_limit(DEFAULT_HISTORY_LIMIT)
    }
}

impl Store {
    pub fn new() -> Arc<Store> {
        Arc::new(Store::default())
    }

    pub fn with_history_limit(limit: usize) -> Store {
        Store {
            inner: Mutex::new(Inner {
                objects: BTreeMap::new(),
                history: VecDeque::new(),
                sequence: 0,
                history_limit: limit.max(1),
                next_uid: 1,
            }),
            changed: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_meta(obj: &StoredObject) -> Result<(), StoreError> {
        validate_meta(&obj.meta, obj.kind().is_namespaced()).map_err(|errs| {
            let text: Vec<String> = errs.iter().map(ToString::to_string).collect();
            StoreError::InvalidObject(text.join("; "))
        })?;
        if let Payload::Pod(p) = &obj.payload {
            p.validate().map_err(StoreError::InvalidObject)?;
        }
        Ok(())
    }

    /// Stores a new object, assigning its uid and `resourceVersion = 1`.
    pub fn create(&self, mut obj: StoredObject) -> Result<StoredObject, StoreError> {
        Self::check_meta(&obj)?;
        let key = obj.key();
        let mut inner = self.lock();
        if inner.objects.contains_key(&key) {
            return Err(StoreError::AlreadyExists(key));
        }
        obj.meta.uid = format!("uid-{:08}", inner.next_uid);
        inner.next_uid += 1;
        obj.meta.resource_version = 1;
        obj.meta.deletion_requested = false;
        inner.objects.insert(key, obj.clone());
        inner.emit(EventType::Added, obj.clone());
        drop(inner);
        self.changed.notify_all();
        Ok(obj)
    }

    pub fn get(&self, kind: Kind, namespace: &str, name: &str) -> Result<StoredObject, StoreError> {
        let key = ObjectKey::new(kind, namespace, name);
        self.lock()
            .objects
            .get(&key)
            .cloned()
            .ok_or(StoreError::NotFound(key))
    }

    pub fn get_dataset(&self, namespace: &str, name: &str) -> Result<Dataset, StoreError> {
        let obj = self.get(Kind::Dataset, namespace, name)?;
        Ok(obj.as_dataset().expect("dataset key holds dataset payload"))
    }

    /// Replaces labels, annotations, owner refs, finalizers and payload of an
    /// existing object if `expected_version` is still current. `uid` and the
    /// deletion flag are kept from the stored copy. An update that empties the
    /// finalizers of an object whose deletion was requested removes it.
    pub fn update(
        &self,
        mut obj: StoredObject,
        expected_version: u64,
    ) -> Result<StoredObject, StoreError> {
        Self::check_meta(&obj)?;
        let key = obj.key();
        let mut inner = self.lock();
        let current = inner
            .objects
            .get(&key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if current.meta.resource_version != expected_version {
            return Err(StoreError::Conflict {
                key,
                expected: expected_version,
                current: current.meta.resource_version,
            });
        }
        if !obj.meta.uid.is_empty() && obj.meta.uid != current.meta.uid {
            return Err(StoreError::InvalidObject(format!(
                "uid mismatch for {key}: {} vs {}",
                obj.meta.uid, current.meta.uid
            )));
        }
        obj.meta.uid = current.meta.uid.clone();
        obj.meta.deletion_requested = current.meta.deletion_requested;
        obj.meta.resource_version = current.meta.resource_version + 1;
        if obj.meta.deletion_requested && obj.meta.finalizers.is_empty() {
            inner.objects.remove(&key);
            inner.emit(EventType::Deleted, obj.clone());
        } else {
            inner.objects.insert(key, obj.clone());
            inner.emit(EventType::Modified, obj.clone());
        }
        drop(inner);
        self.changed.notify_all();
        Ok(obj)
    }

    /// Removes an object, or marks it terminating while finalizers remain.
    /// Repeating the call on a terminating object is a no-op.
    pub fn delete(
        &self,
        kind: Kind,
        namespace: &str,
        name: &str,
    ) -> Result<DeletionOutcome, StoreError> {
        let key = ObjectKey::new(kind, namespace, name);
        let mut inner = self.lock();
        let current = inner
            .objects
            .get_mut(&key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if current.meta.finalizers.is_empty() {
            let mut obj = inner.objects.remove(&key).expect("present");
            obj.meta.resource_version += 1;
            obj.meta.deletion_requested = true;
            inner.emit(EventType::Deleted, obj);
            drop(inner);
            self.changed.notify_all();
            return Ok(DeletionOutcome::Removed);
        }
        if current.meta.deletion_requested {
            return Ok(DeletionOutcome::TerminatingPending);
        }
        current.meta.deletion_requested = true;
        current.meta.resource_version += 1;
        let snapshot = current.clone();
        inner.emit(EventType::Modified, snapshot);
        drop(inner);
        self.changed.notify_all();
        Ok(DeletionOutcome::TerminatingPending)
    }

    /// Live objects of `kind` whose labels contain every selector pair.
    /// `namespace = None` lists across all namespaces.
    pub fn list(
        &self,
        kind: Kind,
        namespace: Option<&str>,
        selector: &BTreeMap<String, String>,
    ) -> Vec<StoredObject> {
        let inner = self.lock();
        inner
            .objects
            .values()
            .filter(|o| o.kind() == kind)
            .filter(|o| namespace.map_or(true, |ns| o.meta.namespace == ns))
            .filter(|o| {
                selector
                    .iter()
                    .all(|(k, v)| o.meta.labels.get(k) == Some(v))
            })
            .cloned()
            .collect()
    }

    /// Like [`Store::list`] across all namespaces, together with the sequence
    /// number the listing reflects. Watching from that sequence observes
    /// every later change exactly once.
    pub fn list_at(&self, kind: Kind) -> (Vec<StoredObject>, u64) {
        let inner = self.lock();
        let objs = inner
            .objects
            .values()
            .filter(|o| o.kind() == kind)
            .cloned()
            .collect();
        (objs, inner.sequence)
    }

    /// All live objects, in key order.
    pub fn all_objects(&self) -> Vec<StoredObject> {
        self.lock().objects.values().cloned().collect()
    }

    pub fn current_sequence(&self) -> u64 {
        self.lock().sequence
    }

    /// Starts a stream of events with sequence greater than `from_sequence`.
    /// `kind` and `namespace` of `None` match everything.
    pub fn watch(
        self: &Arc<Self>,
        kind: Option<Kind>,
        namespace: Option<&str>,
        from_sequence: u64,
    ) -> Result<WatchStream, StoreError> {
        let inner = self.lock();
        if from_sequence > inner.sequence {
            return Err(StoreError::FutureSequence {
                requested: from_sequence,
                current: inner.sequence,
            });
        }
        let oldest = inner.oldest_retained();
        if from_sequence + 1 < oldest {
            return Err(StoreError::SequenceExpired {
                requested: from_sequence,
                oldest,
            });
        }
        Ok(WatchStream {
            store: Arc::clone(self),
            kind,
            namespace: namespace.map(str::to_string),
            cursor: from_sequence,
        })
    }

    /// Inserts objects verbatim (uids and versions included) without
    /// emitting events. Used to restore snapshots into a fresh store.
    pub fn restore(&self, objects: Vec<StoredObject>) -> Result<(), StoreError> {
        let mut inner = self.lock();
        for obj in objects {
            Self::check_meta(&obj)?;
            let key = obj.key();
            if inner.objects.contains_key(&key) {
                return Err(StoreError::AlreadyExists(key));
            }
            if let Some(n) = obj
                .meta
                .uid
                .strip_prefix("uid-")
                .and_then(|s| s.parse::<u64>().ok())
            {
                inner.next_uid = inner.next_uid.max(n + 1);
            }
            inner.objects.insert(key, obj);
        }
        Ok(())
    }
}

/// A cursor over the store's event history.
pub struct WatchStream {
    store: Arc<Store>,
    kind: Option<Kind>,
    namespace: Option<String>,
    cursor: u64,
}

impl WatchStream {
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    fn matches(&self, ev: &WatchEvent) -> bool {
        self.kind.map_or(true, |k| ev.object.kind() == k)
            && self
                .namespace
                .as_deref()
                .map_or(true, |ns| ev.object.meta.namespace == ns)
    }

    fn poll(&mut self, inner: &Inner) -> Result<Option<WatchEvent>, StoreError> {
        let oldest = inner.oldest_retained();
        if self.cursor + 1 < oldest {
            return Err(StoreError::SequenceExpired {
                requested: self.cursor,
                oldest,
            });
        }
        let start = (self.cursor + 1 - oldest) as usize;
        for ev in inner.history.iter().skip(start) {
            self.cursor = ev.sequence;
            if self.matches(ev) {
                return Ok(Some(ev.clone()));
            }
        }
        Ok(None)
    }

    /// Next matching event, waiting up to `timeout` for one to be committed.
    pub fn next_timeout(&mut self, timeout: Duration) -> Result<Option<WatchEvent>, StoreError> {
        let deadline = Instant::now() + timeout;
        let store = Arc::clone(&self.store);
        let mut inner = store.lock();
        loop {
            if let Some(ev) = self.poll(&inner)? {
                return Ok(Some(ev));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            inner = store
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Every matching event already committed, without blocking.
    pub fn drain(&mut self) -> Result<Vec<WatchEvent>, StoreError> {
        let store = Arc::clone(&self.store);
        let inner = store.lock();
        let mut out = Vec::new();
        while let Some(ev) = self.poll(&inner)? {
            out.push(ev);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CosSpec, CLEANUP_FINALIZER};

    fn dataset(name: &str) -> StoredObject {
        Dataset::new(
            "default",
            name,
            DatasetSpec::Cos(CosSpec::new("http://s3.example.test", "example-bucket", "k", "s")),
        )
        .into()
    }

    #[test]
    fn create_assigns_first_version() {
        let store = Store::new();
        let obj = store.create(dataset("example-dataset")).unwrap();
        assert_eq!(obj.meta.resource_version, 1);
        assert!(!obj.meta.uid.is_empty());
        let got = store.get(Kind::Dataset, "default", "example-dataset").unwrap();
        assert_eq!(got.payload, dataset("example-dataset").payload);
    }

    #[test]
    fn create_twice_is_already_exists() {
        let store = Store::new();
        store.create(dataset("a")).unwrap();
        assert!(matches!(store.create(dataset("a")), Err(StoreError::AlreadyExists(_))));
    }

    #[test]
    fn invalid_names_rejected() {
        let store = Store::new();
        assert!(matches!(store.create(dataset("Bad_Name")), Err(StoreError::InvalidObject(_))));
        let mut ns = StoredObject::namespace("team");
        ns.meta.namespace = "x".into();
        assert!(store.create(ns).is_err());
    }

    #[test]
    fn stale_update_conflicts() {
        let store = Store::new();
        let v1 = store.create(dataset("a")).unwrap();
        let v2 = store.update(v1.clone(), 1).unwrap();
        assert!(v2.meta.resource_version > v1.meta.resource_version);
        let err = store.update(v1, 1).unwrap_err();
        assert!(matches!(err, StoreError::Conflict { expected: 1, current: 2, .. }));
        assert!(matches!(
            store.update(dataset("missing"), 1),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn delete_without_finalizers_removes() {
        let store = Store::new();
        store.create(dataset("a")).unwrap();
        assert_eq!(
            store.delete(Kind::Dataset, "default", "a").unwrap(),
            DeletionOutcome::Removed
        );
        assert!(matches!(
            store.delete(Kind::Dataset, "default", "a"),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn finalizer_delays_deletion_until_removed() {
        let store = Store::new();
        let mut obj = dataset("a");
        obj.meta.finalizers.push(CLEANUP_FINALIZER.into());
        store.create(obj).unwrap();
        assert_eq!(
            store.delete(Kind::Dataset, "default", "a").unwrap(),
            DeletionOutcome::TerminatingPending
        );
        assert_eq!(
            store.delete(Kind::Dataset, "default", "a").unwrap(),
            DeletionOutcome::TerminatingPending
        );
        let live = store.get(Kind::Dataset, "default", "a").unwrap();
        assert!(live.meta.deletion_requested);
        assert_eq!(store.list(Kind::Dataset, None, &BTreeMap::new()).len(), 1);

        let mut cleared = live.clone();
        cleared.meta.finalizers.clear();
        store.update(cleared, live.meta.resource_version).unwrap();
        assert!(matches!(
            store.get(Kind::Dataset, "default", "a"),
            Err(StoreError::NotFound(_))
        ));

        let mut w = store.watch(None, None, 0).unwrap();
        let kinds: Vec<_> = w.drain().unwrap().into_iter().map(|e| e.event_type).collect();
        assert_eq!(
            kinds,
            [EventType::Added, EventType::Modified, EventType::Deleted]
        );
    }

    #[test]
    fn update_cannot_clear_deletion_flag() {
        let store = Store::new();
        let mut obj = dataset("a");
        obj.meta.finalizers.push("x".into());
        store.create(obj).unwrap();
        store.delete(Kind::Dataset, "default", "a").unwrap();
        let mut live = store.get(Kind::Dataset, "default", "a").unwrap();
        let v = live.meta.resource_version;
        live.meta.deletion_requested = false;
        let after = store.update(live, v).unwrap();
        assert!(after.meta.deletion_requested);
    }

    #[test]
    fn namespace_label_selector() {
        let store = Store::new();
        store
            .create(StoredObject::namespace("ml").with_label("monitor-pods-datasets", "enabled"))
            .unwrap();
        store.create(StoredObject::namespace("other")).unwrap();
        let sel = BTreeMap::from([("monitor-pods-datasets".to_string(), "enabled".to_string())]);
        let found = store.list(Kind::Namespace, None, &sel);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].meta.name, "ml");
        assert_eq!(store.list(Kind::Namespace, None, &BTreeMap::new()).len(), 2);
    }

    #[test]
    fn watch_replays_then_follows() {
        let store = Store::new();
        let a = store.create(dataset("a")).unwrap();
        store.update(a, 1).unwrap();
        store.delete(Kind::Dataset, "default", "a").unwrap();
        let mut w1 = store.watch(Some(Kind::Dataset), None, 0).unwrap();
        let mut w2 = store.watch(Some(Kind::Dataset), None, 0).unwrap();
        let e1 = w1.drain().unwrap();
        assert_eq!(e1.len(), 3);
        assert_eq!(e1, w2.drain().unwrap());
        assert!(e1.windows(2).all(|p| p[0].sequence < p[1].sequence));

        let s2 = Arc::clone(&store);
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            s2.create(dataset("b")).unwrap();
        });
        let ev = w1.next_timeout(Duration::from_secs(5)).unwrap().unwrap();
        assert_eq!(ev.object.meta.name, "b");
        assert_eq!(ev.event_type, EventType::Added);
        t.join().unwrap();
        assert!(w1.next_timeout(Duration::from_millis(10)).unwrap().is_none());
    }

    #[test]
    fn bounded_history_expires_old_cursors() {
        let store = Arc::new(Store::with_history_limit(3));
        for i in 0..5 {
            store.create(dataset(&format!("d{i}"))).unwrap();
        }
        assert!(matches!(
            store.watch(None, None, 0),
            Err(StoreError::SequenceExpired { requested: 0, oldest: 3 })
        ));
        let mut w = store.watch(None, None, 2).unwrap();
        assert_eq!(w.drain().unwrap().len(), 3);
        assert!(matches!(
            store.watch(None, None, 99),
            Err(StoreError::FutureSequence { .. })
        ));

        let mut lagging = store.watch(None, None, 4).unwrap();
        for i in 5..10 {
            store.create(dataset(&format!("d{i}"))).unwrap();
        }
        assert!(matches!(lagging.drain(), Err(StoreError::SequenceExpired { .. })));
    }

    #[test]
    fn restore_continues_uid_sequence() {
        let store = Store::new();
        let mut o = dataset("a");
        o.meta.uid = "uid-00000041".into();
        o.meta.resource_version = 7;
        store.restore(vec![o]).unwrap();
        assert_eq!(store.current_sequence(), 0);
        let b = store.create(dataset("b")).unwrap();
        assert_eq!(b.meta.uid, "uid-00000042");
    }
}

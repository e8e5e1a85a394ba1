//! Deduplicating work queue with per-key exclusion and exponential retry.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::hash::Hash;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(50),
            cap: Duration::from_secs(5),
        }
    }
}

impl Backoff {
    /// Delay before retry number `failures` (1-based): `base * 2^(failures-1)`,
    /// clamped to `cap`.
    pub fn delay(&self, failures: u32) -> Duration {
        let exp = failures.saturating_sub(1).min(31);
        self.base
            .checked_mul(1u32 << exp)
            .map_or(self.cap, |d| d.min(self.cap))
    }
}

struct State<K> {
    pending: VecDeque<K>,
    queued: HashSet<K>,
    inflight: HashSet<K>,
    dirty: HashSet<K>,
    delayed: BinaryHeap<Reverse<(Instant, u64, K)>>,
    delayed_seq: u64,
    failures: HashMap<K, u32>,
    shutting_down: bool,
}

impl<K: Clone + Eq + Hash + Ord> State<K> {
    fn enqueue(&mut self, key: K) {
        if self.inflight.contains(&key) {
            self.dirty.insert(key);
        } else if self.queued.insert(key.clone()) {
            self.pending.push_back(key);
        }
    }

    fn promote_due(&mut self, now: Instant) {
        while let Some(Reverse((at, _, _))) = self.delayed.peek() {
            if *at > now {
                break;
            }
            let Reverse((_, _, key)) = self.delayed.pop().expect("peeked");
            self.enqueue(key);
        }
    }
}

/// FIFO of keys where a key is pending at most once and never handed to two
/// workers at the same time. Adding a key that is being processed marks it
/// dirty; it is queued again when the worker calls [`WorkQueue::done`].
pub struct WorkQueue<K> {
    state: Mutex<State<K>>,
    cond: Condvar,
    backoff: Backoff,
}

impl<K: Clone + Eq + Hash + Ord> WorkQueue<K> {
    pub fn new(backoff: Backoff) -> Self {
        WorkQueue {
            state: Mutex::new(State {
                pending: VecDeque::new(),
                queued: HashSet::new(),
                inflight: HashSet::new(),
                dirty: HashSet::new(),
                delayed: BinaryHeap::new(),
                delayed_seq: 0,
                failures: HashMap::new(),
                shutting_down: false,
            }),
            cond: Condvar::new(),
            backoff,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<K>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn add(&self, key: K) {
        let mut st = self.lock();
        if st.shutting_down {
            return;
        }
        st.enqueue(key);
        drop(st);
        self.cond.notify_one();
    }

    pub fn add_after(&self, key: K, delay: Duration) {
        if delay.is_zero() {
            return self.add(key);
        }
        let mut st = self.lock();
        if st.shutting_down {
            return;
        }
        st.delayed_seq += 1;
        let seq = st.delayed_seq;
        st.delayed.push(Reverse((Instant::now() + delay, seq, key)));
        drop(st);
        self.cond.notify_one();
    }

    /// Schedules a retry after the key's next backoff step, but never sooner
    /// than `at_least`. Returns the delay used.
    pub fn add_rate_limited(&self, key: K, at_least: Duration) -> Duration {
        let failures = {
            let mut st = self.lock();
            let n = st.failures.entry(key.clone()).or_insert(0);
            *n = n.saturating_add(1);
            *n
        };
        let delay = self.backoff.delay(failures).max(at_least);
        self.add_after(key, delay);
        delay
    }

    /// Clears the retry history of a key after a successful pass.
    pub fn forget(&self, key: &K) {
        self.lock().failures.remove(key);
    }

    pub fn failures(&self, key: &K) -> u32 {
        self.lock().failures.get(key).copied().unwrap_or(0)
    }

    /// Takes the next ready key, waiting up to `timeout`. Returns `None` on
    /// timeout or once the queue is shut down.
    pub fn get(&self, timeout: Duration) -> Option<K> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if st.shutting_down {
                return None;
            }
            let now = Instant::now();
            st.promote_due(now);
            if let Some(key) = st.pending.pop_front() {
                st.queued.remove(&key);
                st.inflight.insert(key.clone());
                return Some(key);
            }
            if now >= deadline {
                return None;
            }
            let mut wait = deadline - now;
            if let Some(Reverse((at, _, _))) = st.delayed.peek() {
                wait = wait.min(at.saturating_duration_since(now));
            }
            st = self
                .cond
                .wait_timeout(st, wait.max(Duration::from_micros(100)))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Releases a key taken with [`WorkQueue::get`].
    pub fn done(&self, key: &K) {
        let mut st = self.lock();
        st.inflight.remove(key);
        if st.dirty.remove(key) && !st.shutting_down {
            st.enqueue(key.clone());
            drop(st);
            self.cond.notify_one();
        }
    }

    pub fn shutdown(&self) {
        self.lock().shutting_down = true;
        self.cond.notify_all();
    }

    pub fn is_shutting_down(&self) -> bool {
        self.lock().shutting_down
    }

    pub fn pending_len(&self) -> usize {
        self.lock().pending.len()
    }

    pub fn inflight_len(&self) -> usize {
        self.lock().inflight.len()
    }

    pub fn delayed_len(&self) -> usize {
        self.lock().delayed.len()
    }

    /// Nothing pending, in flight or dirty. Delayed retries are ignored.
    pub fn is_settled(&self) -> bool {
        let st = self.lock();
        st.pending.is_empty() && st.inflight.is_empty() && st.dirty.is_empty()
    }

    /// Settled and no retries scheduled either.
    pub fn is_idle(&self) -> bool {
        let st = self.lock();
        st.pending.is_empty() && st.inflight.is_empty() && st.dirty.is_empty() && st.delayed.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: Duration = Duration::from_millis(5);

    #[test]
    fn backoff_schedule() {
        let b = Backoff::default();
        assert_eq!(b.delay(1), Duration::from_millis(50));
        assert_eq!(b.delay(2), Duration::from_millis(100));
        assert_eq!(b.delay(7), Duration::from_millis(3200));
        assert_eq!(b.delay(8), Duration::from_secs(5));
        assert_eq!(b.delay(200), Duration::from_secs(5));
    }

    #[test]
    fn duplicate_adds_coalesce() {
        let q = WorkQueue::new(Backoff::default());
        q.add("a");
        q.add("b");
        q.add("a");
        assert_eq!(q.pending_len(), 2);
        assert_eq!(q.get(T), Some("a"));
        assert_eq!(q.get(T), Some("b"));
        assert_eq!(q.get(T), None);
    }

    #[test]
    fn inflight_key_is_not_handed_out_twice() {
        let q = WorkQueue::new(Backoff::default());
        q.add("a");
        assert_eq!(q.get(T), Some("a"));
        q.add("a");
        q.add("a");
        assert_eq!(q.get(T), None);
        q.done(&"a");
        assert_eq!(q.get(T), Some("a"));
        q.done(&"a");
        assert!(q.is_idle());
    }

    #[test]
    fn delayed_keys_become_ready() {
        let q = WorkQueue::new(Backoff::default());
        q.add_after("a", Duration::from_millis(20));
        assert_eq!(q.get(Duration::from_millis(1)), None);
        assert!(!q.is_idle());
        assert!(q.is_settled());
        let start = Instant::now();
        assert_eq!(q.get(Duration::from_secs(1)), Some("a"));
        assert!(start.elapsed() >= Duration::from_millis(15));
    }

    #[test]
    fn rate_limited_retries_grow_and_reset() {
        let q = WorkQueue::new(Backoff {
            base: Duration::from_millis(1),
            cap: Duration::from_millis(4),
        });
        let delays: Vec<_> = (0..4)
            .map(|_| q.add_rate_limited("k", Duration::ZERO))
            .collect();
        assert_eq!(
            delays,
            [1, 2, 4, 4].map(Duration::from_millis).to_vec()
        );
        assert_eq!(q.failures(&"k"), 4);
        q.forget(&"k");
        assert_eq!(q.failures(&"k"), 0);
    }

    #[test]
    fn shutdown_wakes_waiters() {
        let q = std::sync::Arc::new(WorkQueue::<u32>::new(Backoff::default()));
        let q2 = q.clone();
        let h = std::thread::spawn(move || q2.get(Duration::from_secs(10)));
        std::thread::sleep(Duration::from_millis(10));
        q.shutdown();
        assert_eq!(h.join().unwrap(), None);
        q.add(1);
        assert_eq!(q.pending_len(), 0);
    }
}

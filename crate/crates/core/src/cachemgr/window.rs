use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use super::AccessRecord;

struct State {
    now: Duration,
    events: HashMap<String, VecDeque<Duration>>,
}

/// Per-dataset access timestamps within a sliding window. The window at time
/// `now` is the half-open interval `(now - length, now]`.
pub struct AccessWindow {
    length: Duration,
    state: Mutex<State>,
}

impl AccessWindow {
    pub fn new(length: Duration) -> Self {
        AccessWindow {
            length,
            state: Mutex::new(State {
                now: Duration::ZERO,
                events: HashMap::new(),
            }),
        }
    }

    pub fn length(&self) -> Duration {
        self.length
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends a record and prunes everything that fell out of the window.
    /// A timestamp older than the latest one seen is treated as the latest,
    /// keeping the stream non-decreasing. Returns the dataset's count.
    pub fn record(&self, rec: &AccessRecord) -> usize {
        let mut st = self.lock();
        let now = rec.timestamp.max(st.now);
        st.now = now;
        let length = self.length;
        let q = st.events.entry(rec.dataset_id.clone()).or_default();
        q.push_back(now);
        prune(q, now, length);
        q.len()
    }

    /// In-window count for `dataset_id` at the latest recorded time.
    pub fn count(&self, dataset_id: &str) -> usize {
        let now = self.lock().now;
        self.count_at(dataset_id, now)
    }

    /// In-window count at `now`, which may be later than the last record.
    /// Only entries already outside the window at the latest recorded time
    /// are pruned, so probing ahead does not lose state.
    pub fn count_at(&self, dataset_id: &str, now: Duration) -> usize {
        let mut st = self.lock();
        let (length, latest) = (self.length, st.now);
        match st.events.get_mut(dataset_id) {
            Some(q) => {
                prune(q, latest, length);
                q.iter().filter(|t| in_window(**t, now, length)).count()
            }
            None => 0,
        }
    }

    pub fn now(&self) -> Duration {
        self.lock().now
    }
}

fn in_window(t: Duration, now: Duration, length: Duration) -> bool {
    t <= now && now.saturating_sub(t) < length
}

fn prune(q: &mut VecDeque<Duration>, now: Duration, length: Duration) {
    while let Some(&t) = q.front() {
        if now.saturating_sub(t) >= length {
            q.pop_front();
        } else {
            break;
        }
    }
}

use std::collections::VecDeque;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{HubError, Result};
use crate::model::{DeviceId, EventRecord};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const MAX_POLL_TIMEOUT_MS: u64 = 30_000;
pub const MAX_POLL_BATCH: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubscriptionFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<DeviceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_name: Option<String>,
}

impl SubscriptionFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn device_event(device_id: DeviceId, event_name: impl Into<String>) -> Self {
        Self {
            device_id: Some(device_id),
            event_name: Some(event_name.into()),
        }
    }

    pub fn matches(&self, rec: &EventRecord) -> bool {
        self.device_id.as_ref().is_none_or(|d| *d == rec.device_id)
            && self
                .event_name
                .as_deref()
                .is_none_or(|e| e == rec.event_name)
    }
}

/// Result of one long-poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polled {
    pub events: Vec<EventRecord>,
    pub overflowed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub enqueued: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub queued: usize,
}

#[derive(Debug, Default)]
struct QueueState {
    queue: VecDeque<EventRecord>,
    overflowed: bool,
    closed: bool,
    stats: QueueStats,
}

/// A filtered, bounded, drop-oldest event queue drained by long-polls.
#[derive(Debug)]
pub struct Subscription {
    id: String,
    filter: SubscriptionFilter,
    capacity: usize,
    internal: bool,
    created_at_utc_ms: i64,
    last_poll_utc_ms: AtomicI64,
    last_touch: Mutex<Instant>,
    state: Mutex<QueueState>,
    ready: Condvar,
    // serializes concurrent polls on the same subscription
    poll_gate: Mutex<()>,
}

impl Subscription {
    pub(crate) fn new(
        filter: SubscriptionFilter,
        capacity: usize,
        internal: bool,
        now_ms: i64,
    ) -> Self {
        let mut raw = [0u8; 16];
        rand::rng().fill_bytes(&mut raw);
        Self {
            id: hex::encode(raw),
            filter,
            capacity: capacity.max(1),
            internal,
            created_at_utc_ms: now_ms,
            last_poll_utc_ms: AtomicI64::new(now_ms),
            last_touch: Mutex::new(Instant::now()),
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            poll_gate: Mutex::new(()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn filter(&self) -> &SubscriptionFilter {
        &self.filter
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_internal(&self) -> bool {
        self.internal
    }

    pub fn created_at_utc_ms(&self) -> i64 {
        self.created_at_utc_ms
    }

    pub fn last_poll_utc_ms(&self) -> i64 {
        self.last_poll_utc_ms.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> QueueStats {
        let st = self.state.lock();
        QueueStats {
            queued: st.queue.len(),
            ..st.stats
        }
    }

    pub(crate) fn idle_for(&self) -> Duration {
        self.last_touch.lock().elapsed()
    }

    /// Enqueues if the filter matches. Returns whether the record was taken.
    pub(crate) fn offer(&self, rec: &EventRecord) -> bool {
        if !self.filter.matches(rec) {
            return false;
        }
        let mut st = self.state.lock();
        if st.closed {
            return false;
        }
        if st.queue.len() >= self.capacity {
            st.queue.pop_front();
            st.overflowed = true;
            st.stats.dropped += 1;
        }
        st.queue.push_back(rec.clone());
        st.stats.enqueued += 1;
        drop(st);
        self.ready.notify_all();
        true
    }

    pub(crate) fn close(&self) {
        self.state.lock().closed = true;
        self.ready.notify_all();
    }

    /// Long-poll: returns queued events immediately, otherwise waits up to
    /// `timeout` for one to arrive. Once the subscription is closed and
    /// drained, returns [`HubError::PlatformStopped`].
    pub fn poll(&self, timeout: Duration, max_batch: usize, now_ms: i64) -> Result<Polled> {
        let _gate = self.poll_gate.lock();
        self.touch(now_ms);
        let deadline = Instant::now() + timeout;
        let max_batch = max_batch.max(1);
        let mut st = self.state.lock();
        loop {
            if !st.queue.is_empty() {
                let n = st.queue.len().min(max_batch);
                let events: Vec<EventRecord> = st.queue.drain(..n).collect();
                st.stats.delivered += n as u64;
                let overflowed = std::mem::take(&mut st.overflowed);
                return Ok(Polled { events, overflowed });
            }
            if st.closed {
                return Err(HubError::PlatformStopped);
            }
            if self.ready.wait_until(&mut st, deadline).timed_out() && st.queue.is_empty() {
                if st.closed {
                    return Err(HubError::PlatformStopped);
                }
                let overflowed = std::mem::take(&mut st.overflowed);
                return Ok(Polled {
                    events: Vec::new(),
                    overflowed,
                });
            }
        }
    }

    fn touch(&self, now_ms: i64) {
        self.last_poll_utc_ms.store(now_ms, Ordering::Relaxed);
        *self.last_touch.lock() = Instant::now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Payload;

    fn rec(dev: &str, name: &str, seq: u64) -> EventRecord {
        EventRecord {
            device_id: DeviceId::new(dev).unwrap(),
            seq,
            event_name: name.into(),
            payload: Payload::new(),
            timestamp_utc_ms: 0,
            chain_depth: 0,
        }
    }

    #[test]
    fn filter_semantics() {
        let f = SubscriptionFilter::device_event(DeviceId::new("door1").unwrap(), "doorOpened");
        assert!(f.matches(&rec("door1", "doorOpened", 1)));
        assert!(!f.matches(&rec("door1", "doorClosed", 2)));
        assert!(!f.matches(&rec("door2", "doorOpened", 1)));
        assert!(SubscriptionFilter::all().matches(&rec("x", "y", 1)));
    }

    #[test]
    fn batching_preserves_fifo() {
        let sub = Subscription::new(SubscriptionFilter::all(), 8, false, 0);
        for i in 1..=3 {
            sub.offer(&rec("d", "e", i));
        }
        let a = sub.poll(Duration::ZERO, 2, 0).unwrap();
        let b = sub.poll(Duration::ZERO, 2, 0).unwrap();
        assert_eq!(
            a.events.iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(b.events.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn overflow_drops_oldest_and_flag_clears_on_report() {
        let sub = Subscription::new(SubscriptionFilter::all(), 4, false, 0);
        for i in 1..=10 {
            sub.offer(&rec("d", "e", i));
        }
        let p = sub.poll(Duration::ZERO, 100, 0).unwrap();
        assert!(p.overflowed);
        assert_eq!(
            p.events.iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![7, 8, 9, 10]
        );
        assert_eq!(sub.stats().dropped, 6);
        let again = sub.poll(Duration::ZERO, 100, 0).unwrap();
        assert!(!again.overflowed);
        assert!(again.events.is_empty());
    }

    #[test]
    fn empty_poll_waits_for_timeout() {
        let sub = Subscription::new(SubscriptionFilter::all(), 4, false, 0);
        let t0 = Instant::now();
        let p = sub.poll(Duration::from_millis(100), 10, 0).unwrap();
        let waited = t0.elapsed();
        assert!(p.events.is_empty() && !p.overflowed);
        assert!(waited >= Duration::from_millis(95), "{waited:?}");
        assert!(waited < Duration::from_millis(1_000), "{waited:?}");
    }

    #[test]
    fn closed_subscription_drains_then_reports_stop() {
        let sub = Subscription::new(SubscriptionFilter::all(), 4, false, 0);
        sub.offer(&rec("d", "e", 1));
        sub.close();
        assert_eq!(sub.poll(Duration::ZERO, 10, 0).unwrap().events.len(), 1);
        assert!(matches!(
            sub.poll(Duration::from_secs(5), 10, 0),
            Err(HubError::PlatformStopped)
        ));
    }

    #[test]
    fn ids_are_32_hex_chars_and_distinct() {
        let a = Subscription::new(SubscriptionFilter::all(), 1, false, 0);
        let b = Subscription::new(SubscriptionFilter::all(), 1, false, 0);
        assert_eq!(a.id().len(), 32);
        assert!(a.id().bytes().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a.id(), b.id());
    }
}

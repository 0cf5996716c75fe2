//! Time source abstraction. Everything that stamps or paces events goes
//! through a [`Clock`] so tests can run against a [`VirtualClock`].

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch, UTC.
    fn now_ms(&self) -> i64;

    /// Block (or jump, for virtual clocks) until `now_ms() >= target_ms`.
    fn advance_to(&self, target_ms: i64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }

    fn advance_to(&self, target_ms: i64) {
        let now = self.now_ms();
        if target_ms > now {
            std::thread::sleep(Duration::from_millis((target_ms - now) as u64));
        }
    }
}

/// Manually driven clock. Never moves unless told to.
#[derive(Debug)]
pub struct VirtualClock {
    now: AtomicI64,
}

impl VirtualClock {
    pub fn new(start_ms: i64) -> Self {
        Self {
            now: AtomicI64::new(start_ms),
        }
    }

    pub fn set(&self, ms: i64) {
        self.now.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, delta_ms: i64) {
        self.now.fetch_add(delta_ms, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> i64 {
        self.now.load(Ordering::SeqCst)
    }

    fn advance_to(&self, target_ms: i64) {
        self.now.fetch_max(target_ms, Ordering::SeqCst);
    }
}

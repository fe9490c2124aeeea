//! Request pacing with a sliding 60-second window: with a budget of `r`
//! requests per minute, no 60-second window ever observes more than `r`
//! dispatches. Time is injected so tests can drive a virtual clock.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Milliseconds on a monotone scale private to this clock.
    fn now_millis(&self) -> u64;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Test clock: `sleep` advances time instantly.
pub struct VirtualClock {
    now: Mutex<u64>,
    cond: Condvar,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self {
            now: Mutex::new(0),
            cond: Condvar::new(),
        }
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d.as_millis() as u64;
        self.cond.notify_all();
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now_millis(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += d.as_millis() as u64;
        self.cond.notify_all();
    }
}

const WINDOW_MS: u64 = 60_000;

pub struct RateLimiter {
    capacity: u32,
    clock: Arc<dyn Clock>,
    dispatched: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        Self {
            capacity: requests_per_minute.max(1),
            clock,
            dispatched: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a dispatch slot is free, then claims it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut log = self.dispatched.lock().unwrap();
                let now = self.clock.now_millis();
                while let Some(&front) = log.front() {
                    if now.saturating_sub(front) >= WINDOW_MS {
                        log.pop_front();
                    } else {
                        break;
                    }
                }
                if (log.len() as u32) < self.capacity {
                    log.push_back(now);
                    return;
                }
                // Oldest dispatch leaves the window at front + WINDOW_MS.
                let front = *log.front().unwrap();
                Duration::from_millis((front + WINDOW_MS).saturating_sub(now).max(1))
            };
            self.clock.sleep(wait);
        }
    }
}

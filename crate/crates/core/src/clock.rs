use std::sync::{Arc, Mutex};

use chrono::Utc;

use crate::Timestamp;

/// Source of "now" for components that run both under simulation and live.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

/// Manually advanced clock shared between the simulator and anything serving
/// requests against simulated state.
#[derive(Debug, Clone)]
pub struct SimClock {
    inner: Arc<Mutex<Timestamp>>,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        Self { inner: Arc::new(Mutex::new(start)) }
    }

    /// Moves the clock forward. Going backwards is ignored.
    pub fn advance_to(&self, t: Timestamp) {
        let mut now = self.inner.lock().expect("clock poisoned");
        if t > *now {
            *now = t;
        }
    }

    pub fn advance_by(&self, d: chrono::Duration) {
        let mut now = self.inner.lock().expect("clock poisoned");
        *now += d;
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        *self.inner.lock().expect("clock poisoned")
    }
}

/// Wall time, shifted so it reads `base` at construction. Serving saved
/// simulated state uses it so timers keep their relative spacing.
#[derive(Debug, Clone, Copy)]
pub struct RebasedClock {
    base: Timestamp,
    started: std::time::Instant,
}

impl RebasedClock {
    pub fn new(base: Timestamp) -> Self {
        Self { base, started: std::time::Instant::now() }
    }
}

impl Clock for RebasedClock {
    fn now(&self) -> Timestamp {
        self.base + chrono::Duration::from_std(self.started.elapsed()).unwrap_or_else(|_| chrono::Duration::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn sim_clock_is_monotone() {
        let t0 = Utc.with_ymd_and_hms(2016, 4, 5, 9, 0, 0).unwrap();
        let clock = SimClock::new(t0);
        clock.advance_by(chrono::Duration::hours(2));
        clock.advance_to(t0);
        assert_eq!(clock.now(), t0 + chrono::Duration::hours(2));
        let shared = clock.clone();
        shared.advance_by(chrono::Duration::minutes(1));
        assert_eq!(clock.now(), t0 + chrono::Duration::minutes(121));
    }
}

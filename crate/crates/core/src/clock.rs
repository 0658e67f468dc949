//! Time sources shared by the fuzzer, the monitor, and the mock device.
//!
//! Everything that stamps an event (edge timestamps, case send times,
//! verdict windows) reads the same [`Clock`]. In production that is
//! [`SystemClock`]; in tests a [`VirtualClock`] makes the entire stack
//! deterministic: time only moves when the test (or the campaign loop)
//! advances it, and registered tickers run synchronously inside
//! [`VirtualClock::advance`] before it returns.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

/// Nanoseconds since an epoch. For [`SystemClock`] the epoch is the Unix
/// epoch so independent processes on one host share a timeline.
pub type Nanos = u64;

pub const MILLISECOND: Nanos = 1_000_000;
pub const SECOND: Nanos = 1_000_000_000;

/// A monotone nanosecond time source.
pub trait Clock: Send + Sync {
    fn now(&self) -> Nanos;
}

/// Wall-clock time (Unix epoch nanoseconds).
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Nanos {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("system clock before unix epoch")
            .as_nanos() as Nanos
    }
}

/// A ticker is invoked with the new time after every [`VirtualClock::advance`]
/// and must process all of its due work up to that instant before returning.
pub type Ticker = Box<dyn FnMut(Nanos) + Send>;

/// Manually advanced clock for deterministic tests.
///
/// Tickers run in registration order, synchronously, inside `advance`.
/// A ticker must not call `advance` itself.
pub struct VirtualClock {
    now: AtomicU64,
    tickers: Mutex<Vec<Ticker>>,
}

impl VirtualClock {
    pub fn new(start: Nanos) -> Arc<Self> {
        Arc::new(Self {
            now: AtomicU64::new(start),
            tickers: Mutex::new(Vec::new()),
        })
    }

    /// Move time forward by `delta` and run all tickers at the new instant.
    pub fn advance(&self, delta: Nanos) {
        let now = self.now.fetch_add(delta, Ordering::SeqCst) + delta;
        let mut tickers = self.tickers.lock().expect("ticker lock poisoned");
        for t in tickers.iter_mut() {
            t(now);
        }
    }

    /// Advance to an absolute instant; no-op if `target` is in the past.
    pub fn advance_to(&self, target: Nanos) {
        let now = self.now.load(Ordering::SeqCst);
        if target > now {
            self.advance(target - now);
        }
    }

    pub fn register_ticker(&self, ticker: Ticker) {
        self.tickers.lock().expect("ticker lock poisoned").push(ticker);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Nanos {
        self.now.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_advances_and_ticks() {
        let clock = VirtualClock::new(100);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        clock.register_ticker(Box::new(move |now| sink.lock().unwrap().push(now)));

        assert_eq!(clock.now(), 100);
        clock.advance(50);
        clock.advance_to(200);
        clock.advance_to(150); // past target: no-op
        assert_eq!(clock.now(), 200);
        assert_eq!(*seen.lock().unwrap(), vec![150, 200]);
    }
}

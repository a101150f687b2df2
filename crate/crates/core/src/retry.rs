//! Exponential-backoff retry shared by the tool layer and judge backends.
//!
//! Delays are `base * 2^k` for the k-th failure. Sleeping goes through the
//! [`Sleeper`] trait so tests can record or skip delays; production code uses
//! [`ThreadSleeper`].

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Max attempt count and backoff base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 100,
        }
    }
}

impl RetryPolicy {
    /// Policy that never waits — for tests and offline runs.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
        }
    }

    /// Delay before the retry that follows the k-th failure (k starts at 0).
    pub fn delay_ms(&self, failures: u32) -> u64 {
        self.base_delay_ms.saturating_mul(1u64 << failures.min(20))
    }

    /// Run `op` until it succeeds or `max_attempts` is exhausted, sleeping
    /// between attempts. `op` receives the 1-based attempt number. Returns
    /// the last error with the number of attempts made.
    pub fn run<T, E>(
        &self,
        sleeper: &dyn Sleeper,
        mut op: impl FnMut(u32) -> Result<T, E>,
    ) -> RetryOutcome<T, E> {
        let max = self.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 1..=max {
            match op(attempt) {
                Ok(value) => {
                    return RetryOutcome {
                        attempts: attempt,
                        result: Ok(value),
                    }
                }
                Err(e) => {
                    last_err = Some(e);
                    if attempt < max {
                        sleeper.sleep_ms(self.delay_ms(attempt - 1));
                    }
                }
            }
        }
        RetryOutcome {
            attempts: max,
            result: Err(last_err.expect("at least one attempt ran")),
        }
    }
}

/// Result of a retried operation plus how many attempts it took.
pub struct RetryOutcome<T, E> {
    pub attempts: u32,
    pub result: Result<T, E>,
}

/// Injectable sleep, so tests never wait on wall-clock time.
pub trait Sleeper: Send + Sync {
    fn sleep_ms(&self, ms: u64);
}

/// Real sleeping via `std::thread::sleep`.
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep_ms(&self, ms: u64) {
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }
}

/// A sleeper that never waits — the default for offline pipelines and tests.
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep_ms(&self, _ms: u64) {}
}

/// Shared no-op sleeper instance.
pub static NO_SLEEP: NoSleep = NoSleep;

/// Records requested delays instead of waiting. Useful in tests asserting
/// the backoff schedule.
#[derive(Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<u64>>,
}

impl RecordingSleeper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delays(&self) -> Vec<u64> {
        self.delays.lock().expect("sleeper lock").clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep_ms(&self, ms: u64) {
        self.delays.lock().expect("sleeper lock").push(ms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn succeeds_after_transient_failures() {
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 10,
        };
        let sleeper = RecordingSleeper::new();
        let outcome = policy.run(&sleeper, |attempt| {
            if attempt < 3 {
                Err("transient")
            } else {
                Ok(attempt)
            }
        });
        assert_eq!(outcome.attempts, 3);
        assert_eq!(outcome.result.unwrap(), 3);
        // backoff doubles: 10, 20
        assert_eq!(sleeper.delays(), vec![10, 20]);
    }

    #[test]
    fn exhausts_attempts_and_returns_last_error() {
        let policy = RetryPolicy::immediate(3);
        let sleeper = RecordingSleeper::new();
        let outcome = policy.run(&sleeper, |attempt| -> Result<(), String> {
            Err(format!("failure {attempt}"))
        });
        assert_eq!(outcome.attempts, 3);
        assert_eq!(outcome.result.unwrap_err(), "failure 3");
    }

    #[test]
    fn first_try_success_never_sleeps() {
        let policy = RetryPolicy::default();
        let sleeper = RecordingSleeper::new();
        let outcome = policy.run(&sleeper, |_| Ok::<_, ()>(42));
        assert_eq!(outcome.attempts, 1);
        assert!(sleeper.delays().is_empty());
    }

    #[test]
    fn delay_schedule_is_exponential() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 7,
        };
        assert_eq!(policy.delay_ms(0), 7);
        assert_eq!(policy.delay_ms(1), 14);
        assert_eq!(policy.delay_ms(2), 28);
    }
}

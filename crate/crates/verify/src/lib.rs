//! Runs acceptance criteria and reports one line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:<12} {:>7.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Runs one criterion. `Ok` carries the measured values, `Err` the reason it
/// failed. Exceeding `limit` fails an otherwise passing criterion, and a
/// panic counts as a failure.
pub fn criterion(name: &'static str, limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(Ok(d)) if elapsed <= limit => (true, d),
        Ok(Ok(d)) => (false, format!("{d}; took longer than {}s", limit.as_secs_f64())),
        Ok(Err(e)) => (false, e),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    Outcome { name, passed, detail, elapsed }
}

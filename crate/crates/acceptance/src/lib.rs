//! Runner for the acceptance gate in `tests/acceptance.rs`.
//!
//! Each criterion is a closure returning a one-line summary on success or a
//! reason on failure; panics count as failures.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

pub type Outcome = Result<String, String>;

pub struct Criterion {
    pub name: &'static str,
    /// Wall-clock budget; exceeding it fails the criterion.
    pub budget: Option<Duration>,
    pub check: Box<dyn FnOnce() -> Outcome>,
}

impl Criterion {
    pub fn new(name: &'static str, budget: Option<Duration>, check: impl FnOnce() -> Outcome + 'static) -> Self {
        Self {
            name,
            budget,
            check: Box::new(check),
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Runs every criterion, prints one `PASS`/`FAIL` line each and returns the
/// number of failures.
pub fn run(criteria: Vec<Criterion>) -> usize {
    let mut failures = 0;
    for c in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(p))));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(msg), Some(b)) if elapsed > b => Err(format!("{msg}; exceeded budget {:.0?}", b)),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("PASS {}: {msg} [{:.1}s]", c.name, elapsed.as_secs_f64()),
            Err(msg) => {
                failures += 1;
                println!("FAIL {}: {msg} [{:.1}s]", c.name, elapsed.as_secs_f64());
            }
        }
    }
    failures
}

/// Fails with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

//! Records which blocks' parameters are read on the current thread.
//!
//! Every read of a block's weights, bias or normalization parameters goes
//! through an accessor that reports the block id here. [`trace`] collects
//! those reports for the duration of a closure; outside a trace recording
//! is a no-op.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

thread_local! {
    static LOG: RefCell<Option<Vec<u64>>> = const { RefCell::new(None) };
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[inline]
pub(crate) fn record(id: u64) {
    LOG.with(|log| {
        if let Some(v) = log.borrow_mut().as_mut() {
            v.push(id);
        }
    });
}

/// Runs `f` and returns the ids of every block whose parameters it read,
/// deduplicated and sorted.
pub fn trace<R>(f: impl FnOnce() -> R) -> (R, Vec<u64>) {
    let outer = LOG.with(|log| log.borrow_mut().replace(Vec::new()));
    let out = f();
    let mut ids = LOG.with(|log| {
        let mut log = log.borrow_mut();
        let mine = log.take().unwrap_or_default();
        *log = outer;
        if let Some(outer) = log.as_mut() {
            outer.extend_from_slice(&mine);
        }
        mine
    });
    ids.sort_unstable();
    ids.dedup();
    (out, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_traces_propagate_outward() {
        let ((_, inner), outer) = trace(|| {
            record(1);
            trace(|| record(2))
        });
        assert_eq!(inner, vec![2]);
        assert_eq!(outer, vec![1, 2]);
        record(3);
        let (_, empty) = trace(|| ());
        assert!(empty.is_empty());
    }
}

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

/// Bounded FIFO shared by every producer and the single consumer.
///
/// `push` never blocks so that producers holding other locks (the registry
/// emits under its own lock) cannot deadlock against the consumer. Producers
/// that can afford to wait call [`WorkQueue::wait_for_capacity`] first.
pub struct WorkQueue<T> {
    items: Mutex<VecDeque<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
}

impl<T> WorkQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Mutex::new(VecDeque::new()),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, VecDeque<T>> {
        self.items.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, item: T) {
        self.lock().push_back(item);
        self.not_empty.notify_one();
    }

    /// Blocks until the queue is below capacity or `timeout` passes.
    pub fn wait_for_capacity(&self, timeout: Duration) -> bool {
        let guard = self.lock();
        let (guard, res) = self
            .not_full
            .wait_timeout_while(guard, timeout, |q| q.len() >= self.capacity)
            .unwrap_or_else(|e| e.into_inner());
        drop(guard);
        !res.timed_out()
    }

    pub fn try_pop(&self) -> Option<T> {
        let item = self.lock().pop_front();
        if item.is_some() {
            self.not_full.notify_all();
        }
        item
    }

    /// Waits up to `timeout` for an item.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.lock();
        loop {
            if let Some(item) = guard.pop_front() {
                drop(guard);
                self.not_full.notify_all();
                return Some(item);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            guard = self
                .not_empty
                .wait_timeout(guard, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Wakes a consumer blocked in `pop_timeout` without adding an item.
    pub fn wake(&self) {
        self.not_empty.notify_all();
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

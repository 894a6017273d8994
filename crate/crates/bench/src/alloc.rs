//! Allocation counting for memory measurements.
//!
//! Install [`CountingAlloc`] as the global allocator of a binary:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: sre_bench::alloc::CountingAlloc = sre_bench::alloc::CountingAlloc;
//! ```
//!
//! Live bytes are tracked per thread as well as globally. The per-thread
//! count is exact for work done on one thread, which is how the virtual-clock
//! engine runs, and is unaffected by unrelated threads.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, AtomicIsize, Ordering};

pub struct CountingAlloc;

static GLOBAL_LIVE: AtomicIsize = AtomicIsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

thread_local! {
    static THREAD_LIVE: Cell<isize> = const { Cell::new(0) };
}

fn record(delta: isize) {
    GLOBAL_LIVE.fetch_add(delta, Ordering::Relaxed);
    // try_with: the slot may already be gone during thread teardown
    let _ = THREAD_LIVE.try_with(|c| c.set(c.get() + delta));
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// True once [`CountingAlloc`] has served an allocation in this process.
pub fn installed() -> bool {
    let _probe = Box::new(0u64);
    INSTALLED.load(Ordering::Relaxed)
}

/// Net bytes allocated by the calling thread since it started.
pub fn thread_live_bytes() -> isize {
    THREAD_LIVE.with(|c| c.get())
}

/// Net bytes allocated by the whole process.
pub fn global_live_bytes() -> isize {
    GLOBAL_LIVE.load(Ordering::Relaxed)
}

/// Resident set size in bytes, where the platform exposes it.
pub fn rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::Serialize;

/// A message sent by rule code through `engine.notify`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Notification {
    pub seq: u64,
    pub at: u64,
    pub rule: String,
    pub level: String,
    pub message: String,
}

type Hook = Box<dyn Fn(&Notification) + Send + Sync>;

/// Bounded in-memory ring of recent notifications with an optional JSON-lines
/// file behind it. Pushing never blocks: the ring drops its oldest entry and
/// the file writer drops lines it cannot keep up with, both counted.
pub struct NotificationSink {
    ring: Mutex<VecDeque<Notification>>,
    capacity: usize,
    next_seq: AtomicU64,
    dropped: AtomicU64,
    file_dropped: AtomicU64,
    file: Option<SyncSender<String>>,
    hook: Mutex<Option<Arc<Hook>>>,
}

impl NotificationSink {
    pub fn new(capacity: usize) -> Self {
        Self {
            ring: Mutex::new(VecDeque::with_capacity(capacity.min(4096))),
            capacity: capacity.max(1),
            next_seq: AtomicU64::new(1),
            dropped: AtomicU64::new(0),
            file_dropped: AtomicU64::new(0),
            file: None,
            hook: Mutex::new(None),
        }
    }

    /// Also appends every notification to `path` as one JSON object per line.
    pub fn with_file(capacity: usize, path: &Path) -> std::io::Result<Self> {
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        let (tx, rx) = sync_channel::<String>(4096);
        thread::Builder::new()
            .name("notify-writer".into())
            .spawn(move || {
                let mut out = BufWriter::new(file);
                while let Ok(line) = rx.recv() {
                    let _ = writeln!(out, "{line}");
                    while let Ok(line) = rx.try_recv() {
                        let _ = writeln!(out, "{line}");
                    }
                    let _ = out.flush();
                }
            })?;
        let mut sink = Self::new(capacity);
        sink.file = Some(tx);
        Ok(sink)
    }

    /// Installs a callback invoked synchronously for each notification.
    pub fn set_hook(&self, hook: impl Fn(&Notification) + Send + Sync + 'static) {
        *self.hook.lock().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(Box::new(hook)));
    }

    pub fn push(&self, at: u64, rule: &str, level: &str, message: &str) -> Notification {
        let n = Notification {
            seq: self.next_seq.fetch_add(1, Ordering::Relaxed),
            at,
            rule: rule.to_owned(),
            level: level.to_owned(),
            message: message.to_owned(),
        };
        {
            let mut ring = self.ring.lock().unwrap_or_else(|e| e.into_inner());
            if ring.len() == self.capacity {
                ring.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            ring.push_back(n.clone());
        }
        if let Some(tx) = &self.file {
            let line = serde_json::to_string(&n).unwrap_or_default();
            if let Err(TrySendError::Full(_)) = tx.try_send(line) {
                self.file_dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        let hook = self.hook.lock().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(hook) = hook {
            hook(&n);
        }
        n
    }

    /// Notifications currently held, oldest first.
    pub fn recent(&self) -> Vec<Notification> {
        self.ring
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.ring.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries evicted from the ring.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Lines the file writer could not accept.
    pub fn file_dropped(&self) -> u64 {
        self.file_dropped.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.next_seq.load(Ordering::Relaxed) - 1
    }
}

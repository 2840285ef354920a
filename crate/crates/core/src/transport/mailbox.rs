use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::Tag;
use crate::error::{Error, Result};

/// Per-`(source, tag)` matching state. The n-th posted receive takes the
/// n-th arrived message, whatever order the waits happen in.
#[derive(Default)]
struct Slot {
    arrived: u64,
    posted: u64,
    ready: BTreeMap<u64, Vec<f64>>,
}

#[derive(Default)]
struct State {
    slots: HashMap<(usize, Tag), Slot>,
    closed: HashMap<usize, String>,
}

/// Incoming message store of one rank.
#[derive(Default)]
pub(crate) struct Mailbox {
    state: Mutex<State>,
    arrived: Condvar,
}

impl Mailbox {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn deposit(&self, src: usize, tag: Tag, payload: Vec<f64>) {
        let mut st = self.lock();
        let slot = st.slots.entry((src, tag)).or_default();
        let idx = slot.arrived;
        slot.arrived += 1;
        slot.ready.insert(idx, payload);
        drop(st);
        self.arrived.notify_all();
    }

    pub(crate) fn post(&self, src: usize, tag: Tag) -> u64 {
        let mut st = self.lock();
        let slot = st.slots.entry((src, tag)).or_default();
        let seq = slot.posted;
        slot.posted += 1;
        seq
    }

    /// Records that no further messages will arrive from `src`. Messages
    /// already deposited stay available.
    pub(crate) fn close_peer(&self, src: usize, reason: impl Into<String>) {
        self.lock().closed.entry(src).or_insert_with(|| reason.into());
        self.arrived.notify_all();
    }

    pub(crate) fn take(&self, src: usize, tag: Tag, seq: u64, timeout: Duration) -> Result<Vec<f64>> {
        let start = Instant::now();
        let mut st = self.lock();
        loop {
            if let Some(slot) = st.slots.get_mut(&(src, tag)) {
                if let Some(msg) = slot.ready.remove(&seq) {
                    return Ok(msg);
                }
            }
            if let Some(reason) = st.closed.get(&src) {
                return Err(Error::Transport {
                    peer: src,
                    message: format!("no message with tag {tag}: {reason}"),
                });
            }
            let elapsed = start.elapsed();
            if elapsed >= timeout {
                return Err(Error::Timeout {
                    what: format!("receive from rank {src} with tag {tag}"),
                    elapsed,
                });
            }
            st = self
                .arrived
                .wait_timeout(st, timeout - elapsed)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posting_order_decides_matching() {
        let mb = Mailbox::default();
        let a = mb.post(1, 7);
        let b = mb.post(1, 7);
        mb.deposit(1, 7, vec![1.0]);
        mb.deposit(1, 7, vec![2.0]);
        let t = Duration::from_millis(10);
        assert_eq!(mb.take(1, 7, b, t).unwrap(), vec![2.0]);
        assert_eq!(mb.take(1, 7, a, t).unwrap(), vec![1.0]);
    }

    #[test]
    fn unmatched_receive_times_out() {
        let mb = Mailbox::default();
        let s = mb.post(0, 1);
        mb.deposit(0, 2, vec![]);
        let err = mb.take(0, 1, s, Duration::from_millis(20)).unwrap_err();
        assert!(matches!(err, Error::Timeout { .. }));
    }

    #[test]
    fn closed_peer_fails_fast_but_keeps_delivered_data() {
        let mb = Mailbox::default();
        let s0 = mb.post(3, 0);
        let s1 = mb.post(3, 0);
        mb.deposit(3, 0, vec![4.0]);
        mb.close_peer(3, "connection reset");
        let t = Duration::from_secs(5);
        assert_eq!(mb.take(3, 0, s0, t).unwrap(), vec![4.0]);
        let start = Instant::now();
        match mb.take(3, 0, s1, t) {
            Err(Error::Transport { peer, .. }) => assert_eq!(peer, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(start.elapsed() < Duration::from_secs(1));
    }
}

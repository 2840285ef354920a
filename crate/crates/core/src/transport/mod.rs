//! Point-to-point messaging between ranks.
//!
//! A [`Comm`] is one rank's handle on a communication world. Messages carry
//! 64-bit floats and are matched by exact `(source, destination, tag)`;
//! messages sharing that triple are delivered in posting order. Two backends
//! exist: [`inproc`] runs every rank as a thread of the current process, and
//! [`tcp`] connects separate processes over sockets.
//!
//! Sends are buffered eagerly, so a send buffer may be reused as soon as
//! [`Comm::isend`] returns; [`Comm::wait_send`] exists to keep the
//! non-blocking contract explicit at call sites.

pub mod frame;
pub mod inproc;
mod mailbox;
pub mod tcp;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

pub(crate) use mailbox::Mailbox;

pub type Tag = u32;

/// Tags at or above this value are reserved for collectives.
pub const RESERVED_TAG_BASE: Tag = 0xFFFF_0000;

pub(crate) const TAG_BARRIER_IN: Tag = RESERVED_TAG_BASE + 1;
pub(crate) const TAG_BARRIER_OUT: Tag = RESERVED_TAG_BASE + 2;
pub(crate) const TAG_REDUCE_IN: Tag = RESERVED_TAG_BASE + 3;
pub(crate) const TAG_REDUCE_OUT: Tag = RESERVED_TAG_BASE + 4;
pub(crate) const TAG_GATHER: Tag = RESERVED_TAG_BASE + 5;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

/// A transfer that has been posted but not yet waited on.
#[derive(Debug)]
#[must_use = "a posted transfer must be waited on"]
pub struct TransferHandle {
    peer: usize,
    tag: Tag,
    direction: Direction,
    seq: u64,
}

impl TransferHandle {
    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }
}

/// What a backend has to provide: delivery of one message to a peer's
/// mailbox, and a mailbox of its own for incoming messages.
pub(crate) trait Backend: Send + Sync {
    fn rank(&self) -> usize;
    fn nprocs(&self) -> usize;
    fn deliver(&self, dst: usize, tag: Tag, payload: &[f64]) -> Result<()>;
    fn mailbox(&self) -> &Mailbox;
    fn name(&self) -> &'static str;
    fn rank_exited(&self, _panicked: bool) {}
}

/// One rank's endpoint in a communication world. Cheap to clone; clones share
/// the same connections and lifecycle state.
#[derive(Clone)]
pub struct Comm {
    pub(crate) backend: Arc<dyn Backend>,
    grid_active: Arc<AtomicBool>,
    timeout: Duration,
    send_delay: Option<Duration>,
}

impl std::fmt::Debug for Comm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Comm")
            .field("backend", &self.backend.name())
            .field("rank", &self.rank())
            .field("nprocs", &self.nprocs())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Comm {
    pub(crate) fn new(backend: Arc<dyn Backend>, timeout: Duration) -> Self {
        Self {
            backend,
            grid_active: Arc::new(AtomicBool::new(false)),
            timeout,
            send_delay: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.backend.rank()
    }

    pub fn nprocs(&self) -> usize {
        self.backend.nprocs()
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sleeps for `delay` before every point-to-point send. Used to emulate a
    /// slow network when measuring communication hiding.
    pub fn with_send_delay(mut self, delay: Duration) -> Self {
        self.send_delay = Some(delay);
        self
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.nprocs() {
            return Err(Error::Bounds(format!(
                "peer rank {peer} outside 0..{}",
                self.nprocs()
            )));
        }
        Ok(())
    }

    pub fn isend(&self, peer: usize, tag: Tag, data: &[f64]) -> Result<TransferHandle> {
        self.check_peer(peer)?;
        if let Some(delay) = self.send_delay {
            thread::sleep(delay);
        }
        if peer == self.rank() {
            self.backend
                .mailbox()
                .deposit(peer, tag, data.to_vec());
        } else {
            self.backend.deliver(peer, tag, data)?;
        }
        Ok(TransferHandle {
            peer,
            tag,
            direction: Direction::Send,
            seq: 0,
        })
    }

    pub fn irecv(&self, peer: usize, tag: Tag) -> Result<TransferHandle> {
        self.check_peer(peer)?;
        let seq = self.backend.mailbox().post(peer, tag);
        Ok(TransferHandle {
            peer,
            tag,
            direction: Direction::Recv,
            seq,
        })
    }

    pub fn wait_send(&self, handle: TransferHandle) -> Result<()> {
        match handle.direction {
            Direction::Send => Ok(()),
            Direction::Recv => Err(Error::Protocol(format!(
                "wait_send on a receive from rank {} tag {}",
                handle.peer, handle.tag
            ))),
        }
    }

    /// Completes a receive into `buf`, which must match the message length.
    pub fn wait_recv(&self, handle: TransferHandle, buf: &mut [f64]) -> Result<()> {
        let (peer, tag) = (handle.peer, handle.tag);
        let msg = self.wait_recv_vec(handle)?;
        if msg.len() != buf.len() {
            return Err(Error::Protocol(format!(
                "message from rank {peer} tag {tag} has {} values, expected {}",
                msg.len(),
                buf.len()
            )));
        }
        buf.copy_from_slice(&msg);
        Ok(())
    }

    pub fn wait_recv_vec(&self, handle: TransferHandle) -> Result<Vec<f64>> {
        if handle.direction != Direction::Recv {
            return Err(Error::Protocol(format!(
                "wait_recv on a send to rank {} tag {}",
                handle.peer, handle.tag
            )));
        }
        self.backend
            .mailbox()
            .take(handle.peer, handle.tag, handle.seq, self.timeout)
    }

    /// Blocking convenience: post and complete a receive of unknown length.
    pub fn recv_vec(&self, peer: usize, tag: Tag) -> Result<Vec<f64>> {
        let h = self.irecv(peer, tag)?;
        self.wait_recv_vec(h)
    }

    /// Returns once every rank has entered the barrier.
    pub fn barrier(&self) -> Result<()> {
        let n = self.nprocs();
        if n == 1 {
            return Ok(());
        }
        if self.rank() == 0 {
            for peer in 1..n {
                self.recv_vec(peer, TAG_BARRIER_IN)?;
            }
            for peer in 1..n {
                self.wait_send(self.isend(peer, TAG_BARRIER_OUT, &[])?)?;
            }
        } else {
            self.wait_send(self.isend(0, TAG_BARRIER_IN, &[])?)?;
            self.recv_vec(0, TAG_BARRIER_OUT)?;
        }
        Ok(())
    }

    /// Marks a global grid as active on this rank; fails if one already is.
    pub(crate) fn activate_grid(&self) -> Result<()> {
        if self.grid_active.swap(true, Ordering::SeqCst) {
            return Err(Error::State(
                "a global grid is already initialized; finalize it first".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn deactivate_grid(&self) {
        self.grid_active.store(false, Ordering::SeqCst);
    }

    pub fn grid_active(&self) -> bool {
        self.grid_active.load(Ordering::SeqCst)
    }
}

/// Reads the message timeout from `IGRID_TIMEOUT_SECS`, falling back to
/// [`DEFAULT_TIMEOUT`].
pub fn timeout_from_env() -> Result<Duration> {
    match std::env::var("IGRID_TIMEOUT_SECS") {
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0 && v.is_finite())
            .map(Duration::from_secs_f64)
            .ok_or_else(|| Error::Config(format!("IGRID_TIMEOUT_SECS={s:?} is not a positive number"))),
        Err(_) => Ok(DEFAULT_TIMEOUT),
    }
}

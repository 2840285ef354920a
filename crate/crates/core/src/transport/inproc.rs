//! In-process backend: every rank is a thread, every rank owns a mailbox, and
//! a send is a push into the destination's mailbox.

use std::panic;
use std::sync::Arc;
use std::thread;

use super::{Backend, Comm, Mailbox, Tag, DEFAULT_TIMEOUT};
use crate::error::{Error, Result};

struct World {
    boxes: Vec<Mailbox>,
}

struct InProc {
    rank: usize,
    world: Arc<World>,
}

impl Backend for InProc {
    fn rank(&self) -> usize {
        self.rank
    }

    fn nprocs(&self) -> usize {
        self.world.boxes.len()
    }

    fn deliver(&self, dst: usize, tag: Tag, payload: &[f64]) -> Result<()> {
        self.world.boxes[dst].deposit(self.rank, tag, payload.to_vec());
        Ok(())
    }

    fn mailbox(&self) -> &Mailbox {
        &self.world.boxes[self.rank]
    }

    fn name(&self) -> &'static str {
        "inproc"
    }

    /// Marks this rank as gone in every other mailbox, so peers still
    /// waiting on it fail instead of hanging until the timeout.
    fn rank_exited(&self, panicked: bool) {
        let reason = if panicked { "rank panicked" } else { "rank exited" };
        for (r, mb) in self.world.boxes.iter().enumerate() {
            if r != self.rank {
                mb.close_peer(self.rank, reason);
            }
        }
    }
}

/// Creates one [`Comm`] per rank of a fresh in-process world. The caller is
/// responsible for driving each on its own thread.
pub fn world(nprocs: usize) -> Result<Vec<Comm>> {
    if nprocs == 0 {
        return Err(Error::Config("a world needs at least one rank".into()));
    }
    let world = Arc::new(World {
        boxes: (0..nprocs).map(|_| Mailbox::default()).collect(),
    });
    Ok((0..nprocs)
        .map(|rank| {
            Comm::new(
                Arc::new(InProc {
                    rank,
                    world: Arc::clone(&world),
                }),
                DEFAULT_TIMEOUT,
            )
        })
        .collect())
}

/// Runs the backend's exit hook when a rank's thread ends, panicking or not.
struct ExitGuard(Comm);

impl Drop for ExitGuard {
    fn drop(&mut self) {
        self.0.backend.rank_exited(thread::panicking());
    }
}

/// Runs `f` on `nprocs` threads, one per rank, and collects each rank's
/// result in rank order. A panic on any rank is resumed on the caller.
pub fn launch<T, F>(nprocs: usize, f: F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(Comm) -> Result<T> + Sync,
{
    launch_with(world(nprocs)?, f)
}

/// Like [`launch`] but over comms the caller already configured.
pub fn launch_with<T, F>(comms: Vec<Comm>, f: F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(Comm) -> Result<T> + Sync,
{
    let f = &f;
    let outcomes: Vec<thread::Result<Result<T>>> = thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                thread::Builder::new()
                    .name(format!("rank-{}", comm.rank()))
                    .spawn_scoped(s, move || {
                        let _guard = ExitGuard(comm.clone());
                        f(comm)
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    outcomes
        .into_iter()
        .map(|o| o.unwrap_or_else(|p| panic::resume_unwind(p)))
        .map(Ok)
        .collect()
}

/// Runs `f` on every rank and fails with the first rank error, if any.
pub fn run<T, F>(nprocs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> Result<T> + Sync,
{
    launch(nprocs, f)?.into_iter().collect()
}

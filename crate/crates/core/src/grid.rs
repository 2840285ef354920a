//! Implicit global grid.
//!
//! Each rank holds a local grid of `n_d` points per axis; neighbouring local
//! grids share `o_d` layers. The global grid is never stored anywhere: its
//! size and every index map follow from the local size, the overlap and the
//! process topology.
//!
//! * non-periodic axis: `global_n = n·p − (p − 1)·o`
//! * periodic axis: `global_n = (n − o)·p`
//!
//! Local layer `l` (1-based) of the rank at coordinate `c` is global layer
//! `l + c·(n − o)`, taken modulo `global_n` on periodic axes.

use std::sync::Mutex;

use crate::array::Array3;
use crate::error::{Error, Result};
use crate::halo::{AxisHalo, BufferPool, DistributedField};
use crate::topology::{dims_create, rank_of_coords, ProcessTopology, NDIMS};
use crate::transport::{Comm, TAG_GATHER, TAG_REDUCE_IN, TAG_REDUCE_OUT};

pub const DEFAULT_OVERLAP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridOptions {
    /// Fixed process counts per axis; `None` lets the topology choose.
    pub dims: [Option<usize>; NDIMS],
    pub periodic: [bool; NDIMS],
    /// Layers shared by neighbouring local grids; even and at least 2.
    pub overlap: [usize; NDIMS],
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            dims: [None; NDIMS],
            periodic: [false; NDIMS],
            overlap: [DEFAULT_OVERLAP; NDIMS],
        }
    }
}

impl GridOptions {
    pub fn with_dims(mut self, dims: [usize; NDIMS]) -> Self {
        self.dims = dims.map(Some);
        self
    }

    pub fn with_periodic(mut self, periodic: [bool; NDIMS]) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn with_overlap(mut self, overlap: [usize; NDIMS]) -> Self {
        self.overlap = overlap;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Max,
    Min,
    Sum,
}

impl ReduceOp {
    fn code(self) -> f64 {
        match self {
            ReduceOp::Max => 0.0,
            ReduceOp::Min => 1.0,
            ReduceOp::Sum => 2.0,
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceOp::Max => a.max(b),
            ReduceOp::Min => a.min(b),
            ReduceOp::Sum => a + b,
        }
    }
}

/// Global extent along one axis.
pub fn global_extent(n: usize, overlap: usize, procs: usize, periodic: bool) -> usize {
    if periodic {
        (n - overlap) * procs
    } else {
        n * procs - (procs - 1) * overlap
    }
}

/// Local layers (1-based, inclusive) a rank owns along one axis of a field.
/// Owned ranges of all ranks on an axis partition the field's global layers.
pub fn owned_layers(halo: &AxisHalo, size: usize, first: bool, last: bool, periodic: bool) -> (usize, usize) {
    let h = halo.width();
    let inner_lo = halo.overlap() - h + 1;
    if periodic {
        (inner_lo, size - h)
    } else {
        (if first { 1 } else { inner_lo }, if last { size } else { size - h })
    }
}

/// The global grid as seen by one rank.
#[derive(Debug)]
pub struct GlobalGrid {
    n: [usize; NDIMS],
    overlap: [usize; NDIMS],
    topology: ProcessTopology,
    global_n: [usize; NDIMS],
    comm: Comm,
    finalized: bool,
    pool: Mutex<BufferPool>,
}

impl GlobalGrid {
    /// Creates the implicit global grid for local size `n` on every rank of
    /// `comm`'s world.
    pub fn init(comm: &Comm, n: [usize; NDIMS], opts: &GridOptions) -> Result<Self> {
        for d in 0..NDIMS {
            let o = opts.overlap[d];
            if o < 2 || o % 2 != 0 {
                return Err(Error::Config(format!(
                    "overlap on axis {d} must be even and at least 2, got {o}"
                )));
            }
            if n[d] <= o {
                return Err(Error::Size(format!(
                    "local size {} on axis {d} must exceed the overlap {o}",
                    n[d]
                )));
            }
        }
        let dims = dims_create(comm.nprocs(), NDIMS, opts.dims)?;
        let topology = ProcessTopology::new(dims, opts.periodic, comm.rank())?;
        comm.activate_grid()?;
        let global_n = [0, 1, 2].map(|d| global_extent(n[d], opts.overlap[d], dims[d], opts.periodic[d]));
        Ok(Self {
            n,
            overlap: opts.overlap,
            topology,
            global_n,
            comm: comm.clone(),
            finalized: false,
            pool: Mutex::new(BufferPool::default()),
        })
    }

    fn ensure_active(&self) -> Result<()> {
        if self.finalized {
            return Err(Error::State("global grid has been finalized".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> [usize; NDIMS] {
        self.n
    }

    pub fn overlap(&self) -> [usize; NDIMS] {
        self.overlap
    }

    pub fn topology(&self) -> &ProcessTopology {
        &self.topology
    }

    pub fn comm(&self) -> &Comm {
        &self.comm
    }

    /// This rank's id.
    pub fn me(&self) -> usize {
        self.topology.rank()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn global_size(&self, axis: usize) -> Result<usize> {
        self.ensure_active()?;
        self.global_n
            .get(axis)
            .copied()
            .ok_or_else(|| Error::Bounds(format!("axis {axis} outside 0..3")))
    }

    pub fn global_sizes(&self) -> Result<[usize; NDIMS]> {
        self.ensure_active()?;
        Ok(self.global_n)
    }

    /// Global index of local layer `local` (both 1-based) along `axis`,
    /// without periodic wrapping.
    pub fn local_to_global(&self, axis: usize, local: usize) -> Result<usize> {
        self.ensure_active()?;
        if axis >= NDIMS {
            return Err(Error::Bounds(format!("axis {axis} outside 0..3")));
        }
        let max = self.n[axis] + self.overlap[axis];
        if local == 0 || local > max {
            return Err(Error::Bounds(format!(
                "local layer {local} on axis {axis} outside 1..={max}"
            )));
        }
        Ok(local + self.topology.coords()[axis] * (self.n[axis] - self.overlap[axis]))
    }

    /// Physical coordinate `(g − 1)·spacing` of local layer `local`, with
    /// the global index wrapped on periodic axes.
    pub fn global_coord(&self, axis: usize, local: usize, spacing: f64) -> Result<f64> {
        let mut g = self.local_to_global(axis, local)?;
        if self.topology.periodic()[axis] {
            g = (g - 1) % self.global_n[axis] + 1;
        }
        Ok((g - 1) as f64 * spacing)
    }

    /// Reduces one value per rank; every rank receives the result. Values are
    /// combined in rank order, so sums are reproducible.
    pub fn allreduce(&self, value: f64, op: ReduceOp) -> Result<f64> {
        self.ensure_active()?;
        let comm = &self.comm;
        let n = comm.nprocs();
        if n == 1 {
            return Ok(value);
        }
        if comm.rank() == 0 {
            let mut acc = value;
            let mut mismatch = None;
            for peer in 1..n {
                let msg = comm.recv_vec(peer, TAG_REDUCE_IN)?;
                if msg.len() != 2 || msg[1] != op.code() {
                    mismatch.get_or_insert(peer);
                    continue;
                }
                acc = op.apply(acc, msg[0]);
            }
            let reply = match mismatch {
                None => [acc, op.code()],
                Some(_) => [f64::NAN, -1.0],
            };
            for peer in 1..n {
                comm.wait_send(comm.isend(peer, TAG_REDUCE_OUT, &reply)?)?;
            }
            match mismatch {
                None => Ok(acc),
                Some(peer) => Err(Error::Protocol(format!(
                    "allreduce: rank {peer} used a different operation than {op:?}"
                ))),
            }
        } else {
            comm.wait_send(comm.isend(0, TAG_REDUCE_IN, &[value, op.code()])?)?;
            let msg = comm.recv_vec(0, TAG_REDUCE_OUT)?;
            if msg.len() != 2 || msg[1] != op.code() {
                return Err(Error::Protocol(
                    "allreduce: ranks disagree on the reduction operation".into(),
                ));
            }
            Ok(msg[0])
        }
    }

    /// Global extent of a field with local sizes `sizes`.
    pub fn global_field_dims(&self, sizes: [usize; NDIMS]) -> [usize; NDIMS] {
        [0, 1, 2].map(|d| {
            if self.topology.periodic()[d] {
                self.global_n[d]
            } else {
                self.global_n[d] + sizes[d] - self.n[d]
            }
        })
    }

    /// Local layers (1-based, inclusive) owned by the rank at `coords`.
    fn owned_box(&self, field: &DistributedField, coords: [usize; NDIMS]) -> [(usize, usize); NDIMS] {
        let dims = self.topology.dims();
        let sizes = field.sizes();
        [0, 1, 2].map(|d| {
            owned_layers(
                field.halo().axis(d),
                sizes[d],
                coords[d] == 0,
                coords[d] + 1 == dims[d],
                self.topology.periodic()[d],
            )
        })
    }

    /// Assembles the global field on `root` from every rank's owned layers.
    /// Returns `None` on the other ranks.
    pub fn gather(&self, field: &DistributedField, root: usize) -> Result<Option<Array3>> {
        self.ensure_active()?;
        let comm = &self.comm;
        if root >= comm.nprocs() {
            return Err(Error::Bounds(format!("root {root} outside 0..{}", comm.nprocs())));
        }
        field.check_grid(self)?;
        let sizes = field.sizes();
        let mine = self.owned_box(field, self.topology.coords());
        if comm.rank() != root {
            let mut msg = Vec::with_capacity(3 + field.data().len());
            msg.extend(sizes.map(|s| s as f64));
            let a = field.data();
            for k in mine[2].0..=mine[2].1 {
                for j in mine[1].0..=mine[1].1 {
                    let row = a.offset(mine[0].0 - 1, j - 1, k - 1);
                    msg.extend_from_slice(&a.as_slice()[row..row + mine[0].1 + 1 - mine[0].0]);
                }
            }
            comm.wait_send(comm.isend(root, TAG_GATHER, &msg)?)?;
            return Ok(None);
        }

        let gdims = self.global_field_dims(sizes);
        let mut out = Array3::zeros(gdims);
        let dims = self.topology.dims();
        let periodic = self.topology.periodic();
        let stride = [0, 1, 2].map(|d| self.n[d] - self.overlap[d]);
        for r in 0..comm.nprocs() {
            let coords = crate::topology::coords_of_rank(r, dims)?;
            debug_assert_eq!(rank_of_coords(coords, dims)?, r);
            let owned = self.owned_box(field, coords);
            let received;
            let values: &[f64] = if r == root {
                received = pack_box(field.data(), owned);
                &received
            } else {
                received = comm.recv_vec(r, TAG_GATHER)?;
                if received.len() < 3 || received[..3] != sizes.map(|s| s as f64) {
                    return Err(Error::Protocol(format!(
                        "gather: rank {r} contributed a field of different shape"
                    )));
                }
                &received[3..]
            };
            let count: usize = owned.iter().map(|(lo, hi)| hi + 1 - lo).product();
            if values.len() != count {
                return Err(Error::Protocol(format!(
                    "gather: rank {r} sent {} values, expected {count}",
                    values.len()
                )));
            }
            let global = |d: usize, l: usize| {
                let g0 = l - 1 + coords[d] * stride[d];
                if periodic[d] {
                    g0 % gdims[d]
                } else {
                    g0
                }
            };
            let mut it = values.iter();
            for k in owned[2].0..=owned[2].1 {
                for j in owned[1].0..=owned[1].1 {
                    for i in owned[0].0..=owned[0].1 {
                        out[[global(0, i), global(1, j), global(2, k)]] = *it.next().unwrap();
                    }
                }
            }
        }
        Ok(Some(out))
    }

    /// Number of buffers the halo buffer pool has allocated so far.
    pub fn pool_allocations(&self) -> usize {
        self.pool().allocations()
    }

    pub(crate) fn pool(&self) -> std::sync::MutexGuard<'_, BufferPool> {
        self.pool.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Releases the buffer pool and retires the grid. Collective.
    pub fn finalize(&mut self) -> Result<()> {
        self.ensure_active()?;
        self.comm.barrier()?;
        self.pool().clear();
        self.finalized = true;
        self.comm.deactivate_grid();
        Ok(())
    }
}

impl Drop for GlobalGrid {
    fn drop(&mut self) {
        if !self.finalized {
            self.comm.deactivate_grid();
        }
    }
}

fn pack_box(a: &Array3, owned: [(usize, usize); NDIMS]) -> Vec<f64> {
    let mut v = Vec::new();
    for k in owned[2].0..=owned[2].1 {
        for j in owned[1].0..=owned[1].1 {
            for i in owned[0].0..=owned[0].1 {
                v.push(a[[i - 1, j - 1, k - 1]]);
            }
        }
    }
    v
}

//! Halo updates.
//!
//! A field of local size `s` along an axis whose grid has local size `n` and
//! overlap `o` shares `ol = s − (n − o)` layers with each neighbour. The halo
//! width is `h = ⌊ol / 2⌋`; with 1-based layers:
//!
//! | range        | layers                      |
//! |--------------|-----------------------------|
//! | `recv_lower` | `1 ..= h`                   |
//! | `send_lower` | `ol − h + 1 ..= ol`         |
//! | `send_upper` | `s − ol + 1 ..= s − ol + h` |
//! | `recv_upper` | `s − h + 1 ..= s`           |
//!
//! When `ol` is odd the middle shared layer is neither sent nor received;
//! both neighbours compute it from identical inputs.
//!
//! Axes are exchanged one after another (x, y, z). Slabs span the full field
//! extent in the other two axes, so edge and corner halos come out right
//! without diagonal messages.

use std::collections::HashMap;
use std::ops::RangeInclusive;

use crate::array::{Array3, RawArray3, Region};
use crate::error::{Error, Result};
use crate::grid::GlobalGrid;
use crate::topology::NDIMS;
use crate::transport::{Comm, Tag, TransferHandle, RESERVED_TAG_BASE};

/// Side of the local domain along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Lower, Side::Upper];

    fn opposite(self) -> Side {
        match self {
            Side::Lower => Side::Upper,
            Side::Upper => Side::Lower,
        }
    }
}

/// Message tag for one slab: `(field·3 + axis)·2 + direction`, where
/// direction 0 travels toward the lower neighbour.
pub fn halo_tag(field_index: usize, axis: usize, toward: Side) -> Tag {
    let dir = match toward {
        Side::Lower => 0,
        Side::Upper => 1,
    };
    ((field_index * 3 + axis) * 2 + dir) as Tag
}

const MAX_FIELDS: usize = (RESERVED_TAG_BASE as usize) / 6;

/// Exchange ranges of one field along one axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisHalo {
    ol: usize,
    h: usize,
    send_lower: RangeInclusive<usize>,
    recv_lower: RangeInclusive<usize>,
    send_upper: RangeInclusive<usize>,
    recv_upper: RangeInclusive<usize>,
}

impl AxisHalo {
    /// Ranges for a field of size `size` sharing `ol` layers with each
    /// neighbour. Requires `ol ≤ size`.
    pub fn new(size: usize, ol: usize) -> Self {
        assert!(ol <= size, "field overlap {ol} exceeds field size {size}");
        let h = ol / 2;
        Self {
            ol,
            h,
            send_lower: ol - h + 1..=ol,
            recv_lower: 1..=h,
            send_upper: size - ol + 1..=size - ol + h,
            recv_upper: size - h + 1..=size,
        }
    }

    /// Field overlap `ol`.
    pub fn overlap(&self) -> usize {
        self.ol
    }

    /// Halo width `h`.
    pub fn width(&self) -> usize {
        self.h
    }

    pub fn send(&self, side: Side) -> RangeInclusive<usize> {
        match side {
            Side::Lower => self.send_lower.clone(),
            Side::Upper => self.send_upper.clone(),
        }
    }

    pub fn recv(&self, side: Side) -> RangeInclusive<usize> {
        match side {
            Side::Lower => self.recv_lower.clone(),
            Side::Upper => self.recv_upper.clone(),
        }
    }

    pub fn exchanges(&self) -> bool {
        self.h > 0
    }
}

/// Exchange ranges of one field on all three axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloSpec {
    sizes: [usize; NDIMS],
    axes: [AxisHalo; NDIMS],
}

impl HaloSpec {
    /// Requires `n − o ≤ s ≤ n + o` on every axis, and a halo width of at
    /// most `n − o` so that no layer is both sent and received.
    pub fn new(n: [usize; NDIMS], overlap: [usize; NDIMS], sizes: [usize; NDIMS]) -> Result<Self> {
        for d in 0..NDIMS {
            let (s, n, o) = (sizes[d], n[d], overlap[d]);
            if s + o < n || s > n + o {
                return Err(Error::Staggering {
                    axis: d,
                    size: s,
                    n,
                    overlap: o,
                });
            }
            let h = (s + o - n) / 2;
            if h > n - o {
                return Err(Error::Size(format!(
                    "field of size {s} on axis {d} exchanges {h} halo layers per side, \
                     but local size {n} with overlap {o} leaves only {} unshared layers",
                    n - o
                )));
            }
        }
        Ok(Self {
            sizes,
            axes: [0, 1, 2].map(|d| AxisHalo::new(sizes[d], sizes[d] + overlap[d] - n[d])),
        })
    }

    pub fn sizes(&self) -> [usize; NDIMS] {
        self.sizes
    }

    pub fn axis(&self, axis: usize) -> &AxisHalo {
        &self.axes[axis]
    }

    /// Values in one slab of `axis`: `h` times the other two extents.
    pub fn slab_len(&self, axis: usize) -> usize {
        let other: usize = (0..NDIMS).filter(|&d| d != axis).map(|d| self.sizes[d]).product();
        self.axes[axis].h * other
    }

    /// 0-based box covered by `layers` (1-based) of `axis`, full extent elsewhere.
    fn slab(&self, axis: usize, layers: RangeInclusive<usize>) -> Region {
        let mut r = Region::full(self.sizes);
        r.lo[axis] = layers.start() - 1;
        r.hi[axis] = *layers.end();
        r
    }

    pub fn send_region(&self, axis: usize, side: Side) -> Region {
        self.slab(axis, self.axes[axis].send(side))
    }

    pub fn recv_region(&self, axis: usize, side: Side) -> Region {
        self.slab(axis, self.axes[axis].recv(side))
    }
}

/// Halo specification of a field of local size `sizes` on `grid`.
pub fn halo_spec(grid: &GlobalGrid, sizes: [usize; NDIMS]) -> Result<HaloSpec> {
    HaloSpec::new(grid.n(), grid.overlap(), sizes)
}

/// One rank's part of a distributed field.
#[derive(Debug, Clone)]
pub struct DistributedField {
    name: String,
    data: Array3,
    halo: HaloSpec,
    grid_shape: ([usize; NDIMS], [usize; NDIMS]),
}

impl DistributedField {
    pub fn new(grid: &GlobalGrid, name: impl Into<String>, sizes: [usize; NDIMS], fill: f64) -> Result<Self> {
        Self::from_array(grid, name, Array3::filled(sizes, fill))
    }

    pub fn from_array(grid: &GlobalGrid, name: impl Into<String>, data: Array3) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            halo: halo_spec(grid, data.dims())?,
            data,
            grid_shape: (grid.n(), grid.overlap()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sizes(&self) -> [usize; NDIMS] {
        self.data.dims()
    }

    pub fn halo(&self) -> &HaloSpec {
        &self.halo
    }

    pub fn data(&self) -> &Array3 {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3 {
        &mut self.data
    }

    pub fn into_data(self) -> Array3 {
        self.data
    }

    pub(crate) fn exchange_view(&mut self) -> ExchangeField<'_> {
        ExchangeField {
            raw: self.data.raw(),
            spec: &self.halo,
        }
    }

    pub(crate) fn check_grid(&self, grid: &GlobalGrid) -> Result<()> {
        if self.grid_shape != (grid.n(), grid.overlap()) {
            return Err(Error::Shape(format!(
                "field {:?} was created for a grid with local size {:?} and overlap {:?}",
                self.name, self.grid_shape.0, self.grid_shape.1
            )));
        }
        Ok(())
    }

    /// Copies the send slab on `side` of `axis` into `buf`.
    pub fn pack(&self, axis: usize, side: Side, buf: &mut [f64]) -> Result<()> {
        check_capacity(&self.halo, axis, buf.len())?;
        let region = self.halo.send_region(axis, side);
        let a = &self.data;
        let mut out = buf.iter_mut();
        for k in region.range(2) {
            for j in region.range(1) {
                let row = a.offset(region.lo[0], j, k);
                for (src, dst) in a.as_slice()[row..row + region.extent(0)].iter().zip(out.by_ref()) {
                    *dst = *src;
                }
            }
        }
        Ok(())
    }

    /// Writes `buf` into the receive slab on `side` of `axis`.
    pub fn unpack(&mut self, axis: usize, side: Side, buf: &[f64]) -> Result<()> {
        check_capacity(&self.halo, axis, buf.len())?;
        let region = self.halo.recv_region(axis, side);
        let raw = self.data.raw();
        // SAFETY: exclusive borrow of the field.
        unsafe { unpack_raw(raw, region, buf) };
        Ok(())
    }
}

fn check_capacity(spec: &HaloSpec, axis: usize, len: usize) -> Result<()> {
    let want = spec.slab_len(axis);
    if len != want {
        return Err(Error::Pool(format!(
            "buffer holds {len} values, slab of axis {axis} needs {want}"
        )));
    }
    Ok(())
}

/// # Safety
/// No other thread may write `region` of `a` during the call.
unsafe fn pack_raw(a: RawArray3<'_>, region: Region, buf: &mut [f64]) {
    let mut out = buf.iter_mut();
    for k in region.range(2) {
        for j in region.range(1) {
            for i in region.range(0) {
                *out.next().expect("slab buffer sized by spec") = a.read(i, j, k);
            }
        }
    }
}

/// # Safety
/// No other thread may access `region` of `a` during the call.
unsafe fn unpack_raw(a: RawArray3<'_>, region: Region, buf: &[f64]) {
    let mut src = buf.iter();
    for k in region.range(2) {
        for j in region.range(1) {
            let row = a.row_mut(region.lo[0], region.hi[0], j, k);
            for (dst, v) in row.iter_mut().zip(src.by_ref()) {
                *dst = *v;
            }
        }
    }
}

#[derive(Debug, Default)]
struct SlabBuffers {
    send: Vec<f64>,
    recv: Vec<f64>,
}

/// Send and receive buffers keyed by field shape, axis and side. Buffers are
/// allocated on first use and reused by every later update.
#[derive(Debug, Default)]
pub struct BufferPool {
    slots: HashMap<([usize; NDIMS], usize, Side), SlabBuffers>,
    allocations: usize,
}

impl BufferPool {
    pub fn allocations(&self) -> usize {
        self.allocations
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }

    fn buffers(&mut self, spec: &HaloSpec, axis: usize, side: Side) -> Result<&mut SlabBuffers> {
        let len = spec.slab_len(axis);
        let key = (spec.sizes(), axis, side);
        if !self.slots.contains_key(&key) {
            self.allocations += 2;
            self.slots.insert(
                key,
                SlabBuffers {
                    send: vec![0.0; len],
                    recv: vec![0.0; len],
                },
            );
        }
        let b = self.slots.get_mut(&key).expect("inserted above");
        if b.send.len() != len || b.recv.len() != len {
            return Err(Error::Pool(format!(
                "pooled buffers for {key:?} hold {} values, need {len}",
                b.send.len()
            )));
        }
        Ok(b)
    }
}

/// A field prepared for exchange: raw access plus its ranges.
pub(crate) struct ExchangeField<'a> {
    pub(crate) raw: RawArray3<'a>,
    pub(crate) spec: &'a HaloSpec,
}

fn annotate(err: Error, axis: usize) -> Error {
    match err {
        Error::Transport { peer, message } => Error::Transport {
            peer,
            message: format!("halo update on axis {axis}: {message}"),
        },
        Error::Timeout { what, elapsed } => Error::Timeout {
            what: format!("halo update on axis {axis}: {what}"),
            elapsed,
        },
        other => other,
    }
}

/// Exchanges all fields axis by axis.
///
/// # Safety
/// For the duration of the call no other thread may access the send or
/// receive slabs of any field.
pub(crate) unsafe fn exchange(grid: &GlobalGrid, fields: &[ExchangeField<'_>]) -> Result<()> {
    if fields.len() > MAX_FIELDS {
        return Err(Error::Config(format!("at most {MAX_FIELDS} fields per halo update")));
    }
    let topo = grid.topology();
    let comm = grid.comm();
    let mut pool = grid.pool();
    for axis in 0..NDIMS {
        let nb = topo.neighbors(axis);
        if nb.lower.is_none() && nb.upper.is_none() {
            continue;
        }
        if topo.dims()[axis] == 1 {
            // Periodic axis on a single rank: copy through the same buffers.
            for f in fields.iter().filter(|f| f.spec.axis(axis).exchanges()) {
                for side in Side::BOTH {
                    let bufs = pool.buffers(f.spec, axis, side)?;
                    pack_raw(f.raw, f.spec.send_region(axis, side), &mut bufs.send);
                    unpack_raw(f.raw, f.spec.recv_region(axis, side.opposite()), &bufs.send);
                }
            }
            continue;
        }
        exchange_axis(comm, &mut pool, axis, [nb.lower, nb.upper], fields).map_err(|e| annotate(e, axis))?;
    }
    Ok(())
}

unsafe fn exchange_axis(
    comm: &Comm,
    pool: &mut BufferPool,
    axis: usize,
    neighbors: [Option<usize>; 2],
    fields: &[ExchangeField<'_>],
) -> Result<()> {
    let peer = |side: Side| match side {
        Side::Lower => neighbors[0],
        Side::Upper => neighbors[1],
    };
    // Post every receive first. A slab arriving from the upper neighbour was
    // sent toward its lower side, and vice versa.
    let mut recvs: Vec<(usize, Side, TransferHandle)> = Vec::new();
    for (fi, f) in fields.iter().enumerate() {
        if !f.spec.axis(axis).exchanges() {
            continue;
        }
        for side in Side::BOTH {
            if let Some(p) = peer(side) {
                let h = comm.irecv(p, halo_tag(fi, axis, side.opposite()))?;
                recvs.push((fi, side, h));
            }
        }
    }
    let mut sends = Vec::new();
    for (fi, f) in fields.iter().enumerate() {
        if !f.spec.axis(axis).exchanges() {
            continue;
        }
        for side in Side::BOTH {
            if let Some(p) = peer(side) {
                let bufs = pool.buffers(f.spec, axis, side)?;
                pack_raw(f.raw, f.spec.send_region(axis, side), &mut bufs.send);
                sends.push(comm.isend(p, halo_tag(fi, axis, side), &bufs.send)?);
            }
        }
    }
    for h in sends {
        comm.wait_send(h)?;
    }
    for (fi, side, h) in recvs {
        let f = &fields[fi];
        let bufs = pool.buffers(f.spec, axis, side)?;
        comm.wait_recv(h, &mut bufs.recv)?;
        unpack_raw(f.raw, f.spec.recv_region(axis, side), &bufs.recv);
    }
    Ok(())
}

/// Updates the halos of `fields` from their neighbours. Collective: every
/// rank must pass the same number of fields in the same order.
pub fn update_halo(grid: &GlobalGrid, fields: &mut [&mut DistributedField]) -> Result<()> {
    if grid.is_finalized() {
        return Err(Error::State("global grid has been finalized".into()));
    }
    for f in fields.iter() {
        f.check_grid(grid)?;
    }
    let prepared: Vec<ExchangeField<'_>> = fields.iter_mut().map(|f| f.exchange_view()).collect();
    // SAFETY: every field is exclusively borrowed for the whole call.
    unsafe { exchange(grid, &prepared) }
}

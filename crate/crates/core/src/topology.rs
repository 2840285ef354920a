//! Cartesian process topology.
//!
//! Ranks are laid out on a `p_x × p_y × p_z` box. Linearization is row-major
//! with the last axis varying fastest: `rank = (c_x·p_y + c_y)·p_z + c_z`.
//! One- and two-dimensional layouts are expressed with trailing size-1 axes.

use crate::error::{Error, Result};

/// Number of axes handled internally.
pub const NDIMS: usize = 3;

pub type Dims = [usize; NDIMS];
pub type Coords = [usize; NDIMS];

/// Ranks adjacent to one rank along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AxisNeighbors {
    pub lower: Option<usize>,
    pub upper: Option<usize>,
}

/// Picks a process grid for `nprocs` ranks.
///
/// Axes at or beyond `ndims` are pinned to 1. `fixed[d] = Some(k)` pins axis
/// `d` to `k` ranks. Among all admissible ordered factorizations the one with
/// the smallest spread `max − min` over the active axes wins; ties go to the
/// lexicographically largest vector.
pub fn dims_create(nprocs: usize, ndims: usize, fixed: [Option<usize>; NDIMS]) -> Result<Dims> {
    let fail = |reason: String| Error::Constraint { nprocs, reason };
    if nprocs == 0 {
        return Err(fail("rank count must be positive".into()));
    }
    if !(1..=NDIMS).contains(&ndims) {
        return Err(fail(format!("ndims must be in 1..=3, got {ndims}")));
    }
    let mut pinned = fixed;
    for (axis, slot) in pinned.iter_mut().enumerate() {
        match *slot {
            Some(0) => return Err(fail(format!("axis {axis} fixed to zero ranks"))),
            Some(k) if axis >= ndims && k != 1 => {
                return Err(fail(format!("axis {axis} is inactive but fixed to {k}")))
            }
            None if axis >= ndims => *slot = Some(1),
            _ => {}
        }
    }

    let divisors: Vec<usize> = (1..=nprocs).filter(|d| nprocs % d == 0).collect();
    let candidates = |axis: usize| -> Vec<usize> {
        match pinned[axis] {
            Some(k) => vec![k],
            None => divisors.clone(),
        }
    };

    let mut best: Option<(usize, Dims)> = None;
    for &a in &candidates(0) {
        if nprocs % a != 0 {
            continue;
        }
        for &b in &candidates(1) {
            if (nprocs / a) % b != 0 {
                continue;
            }
            let c = nprocs / a / b;
            if pinned[2].is_some_and(|k| k != c) {
                continue;
            }
            let dims = [a, b, c];
            let active = &dims[..ndims];
            let spread = active.iter().max().unwrap() - active.iter().min().unwrap();
            let better = match &best {
                None => true,
                Some((s, d)) => spread < *s || (spread == *s && dims > *d),
            };
            if better {
                best = Some((spread, dims));
            }
        }
    }
    best.map(|(_, d)| d)
        .ok_or_else(|| fail(format!("fixed axes {fixed:?} do not divide the rank count")))
}

pub fn rank_of_coords(coords: Coords, dims: Dims) -> Result<usize> {
    for axis in 0..NDIMS {
        if coords[axis] >= dims[axis] {
            return Err(Error::Bounds(format!(
                "coordinate {} on axis {axis} outside 0..{}",
                coords[axis], dims[axis]
            )));
        }
    }
    Ok((coords[0] * dims[1] + coords[1]) * dims[2] + coords[2])
}

pub fn coords_of_rank(rank: usize, dims: Dims) -> Result<Coords> {
    let total: usize = dims.iter().product();
    if rank >= total {
        return Err(Error::Bounds(format!("rank {rank} outside 0..{total}")));
    }
    Ok([
        rank / (dims[1] * dims[2]),
        (rank / dims[2]) % dims[1],
        rank % dims[2],
    ])
}

/// One rank's view of the Cartesian process grid. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessTopology {
    ndims: usize,
    dims: Dims,
    periodic: [bool; NDIMS],
    nprocs: usize,
    rank: usize,
    coords: Coords,
}

impl ProcessTopology {
    pub fn new(dims: Dims, periodic: [bool; NDIMS], rank: usize) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Config(format!("process grid {dims:?} has an empty axis")));
        }
        let coords = coords_of_rank(rank, dims)?;
        let ndims = dims.iter().rposition(|&p| p > 1).map_or(1, |i| i + 1);
        Ok(Self {
            ndims,
            dims,
            periodic,
            nprocs: dims.iter().product(),
            rank,
            coords,
        })
    }

    /// Number of leading axes that carry more than one rank (at least 1).
    pub fn ndims(&self) -> usize {
        self.ndims
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn periodic(&self) -> [bool; NDIMS] {
        self.periodic
    }

    pub fn nprocs(&self) -> usize {
        self.nprocs
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coords(&self) -> Coords {
        self.coords
    }

    pub fn is_first(&self, axis: usize) -> bool {
        self.coords[axis] == 0
    }

    pub fn is_last(&self, axis: usize) -> bool {
        self.coords[axis] + 1 == self.dims[axis]
    }

    pub fn neighbors(&self, axis: usize) -> AxisNeighbors {
        let p = self.dims[axis];
        let c = self.coords[axis];
        let shifted = |to: Option<usize>| {
            to.map(|c_new| {
                let mut coords = self.coords;
                coords[axis] = c_new;
                rank_of_coords(coords, self.dims).expect("neighbor coordinates in range")
            })
        };
        let (lower, upper) = if self.periodic[axis] {
            (Some((c + p - 1) % p), Some((c + 1) % p))
        } else {
            (c.checked_sub(1), (c + 1 < p).then_some(c + 1))
        };
        AxisNeighbors {
            lower: shifted(lower),
            upper: shifted(upper),
        }
    }

    pub fn all_neighbors(&self) -> [AxisNeighbors; NDIMS] {
        [0, 1, 2].map(|axis| self.neighbors(axis))
    }
}

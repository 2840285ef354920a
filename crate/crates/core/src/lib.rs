//! Distributed stencil computations on implicit global grids.
//!
//! Write a solver for one local grid, then:
//!
//! 1. create the implicit global grid with [`GlobalGrid::init`],
//! 2. refresh halos after every sweep with [`update_halo`] (or hide the
//!    exchange behind computation with [`hide_communication`]),
//! 3. call [`GlobalGrid::finalize`].
//!
//! Ranks talk through a [`Comm`], backed either by threads of one process
//! ([`transport::inproc`]) or by TCP sockets ([`transport::tcp`]).

pub mod array;
pub mod bench;
pub mod cli;
pub mod error;
pub mod grid;
pub mod halo;
pub mod heat3d;
pub mod overlap;
pub mod topology;
pub mod transport;

pub use array::{Array3, Region};
pub use error::{Error, Result};
pub use grid::{GlobalGrid, GridOptions, ReduceOp};
pub use halo::{halo_spec, update_halo, DistributedField, HaloSpec, Side};
pub use overlap::{hide_communication, BoundaryWidths, FieldWriter};
pub use topology::{dims_create, ProcessTopology};
pub use transport::Comm;

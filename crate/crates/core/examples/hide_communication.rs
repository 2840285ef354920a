//! Overlap a slow halo update with the inner part of a stencil sweep and
//! check that the result matches the sequential schedule.

use std::time::{Duration, Instant};

use igrid::heat3d::{step_region, Stencil};
use igrid::transport::inproc;
use igrid::{hide_communication, update_halo, Array3, BoundaryWidths, DistributedField, GlobalGrid, GridOptions, Region};

fn main() -> igrid::Result<()> {
    let n = [48, 48, 48];
    let delay = Duration::from_millis(20);
    let results = inproc::run(2, |comm| {
        let comm = comm.with_send_delay(delay);
        let mut grid = GlobalGrid::init(&comm, n, &GridOptions::default())?;
        let t = Array3::from_fn(n, |i, j, k| ((i * 7 + j * 3 + k) % 11) as f64);
        let ci = Array3::filled(n, 0.5);
        let st = Stencil { lam: 1.0, dt: 1e-5, h: [0.01; 3] };
        let interior = Region::interior(n);
        let kernel = |_: Region, w: &mut [igrid::FieldWriter<'_>]| step_region(&mut w[0], &t, &ci, &st);

        let mut seq = DistributedField::new(&grid, "seq", n, 0.0)?;
        let t0 = Instant::now();
        igrid::overlap::sweep(interior, &mut [&mut seq], kernel)?;
        update_halo(&grid, &mut [&mut seq])?;
        let sequential = t0.elapsed();

        let mut ovl = DistributedField::new(&grid, "ovl", n, 0.0)?;
        let t0 = Instant::now();
        hide_communication(&grid, BoundaryWidths([16, 2, 2]), interior, &mut [&mut ovl], kernel)?;
        let overlapped = t0.elapsed();

        let same = seq.data().bit_eq(ovl.data());
        grid.finalize()?;
        Ok((sequential, overlapped, same))
    })?;
    for (rank, (s, o, same)) in results.iter().enumerate() {
        println!("rank {rank}: sequential {s:?}, overlapped {o:?}, identical = {same}");
    }
    Ok(())
}

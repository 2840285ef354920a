//! Four ranks talking over localhost TCP sockets: a ring exchange, an
//! allreduce and a halo update.

use std::thread;
use std::time::Duration;

use igrid::transport::tcp;
use igrid::{update_halo, DistributedField, GlobalGrid, GridOptions, ReduceOp};

fn main() -> igrid::Result<()> {
    let comms = tcp::localhost_world(4, Duration::from_secs(10))?;
    let handles: Vec<_> = comms
        .into_iter()
        .map(|comm| {
            thread::spawn(move || -> igrid::Result<String> {
                let (me, np) = (comm.rank(), comm.nprocs());
                let h = comm.isend((me + 1) % np, 7, &[me as f64])?;
                let got = comm.recv_vec((me + np - 1) % np, 7)?;
                comm.wait_send(h)?;

                let mut grid = GlobalGrid::init(&comm, [6, 6, 6], &GridOptions::default())?;
                let sum = grid.allreduce(me as f64, ReduceOp::Sum)?;
                let mut f = DistributedField::new(&grid, "A", [6, 6, 6], me as f64)?;
                update_halo(&grid, &mut [&mut f])?;
                let upper_x = f.data()[[5, 2, 2]];
                grid.finalize()?;
                Ok(format!("rank {me}: got {got:?} from the left, rank sum {sum}, upper x layer {upper_x}"))
            })
        })
        .collect();
    for h in handles {
        println!("{}", h.join().expect("rank thread")?);
    }
    Ok(())
}

//! 3-D heat diffusion on eight in-process ranks; writes the gathered
//! temperature to `heat3d.bin` and compares it with a single-rank run.

use igrid::heat3d::{self, HeatParams, InitKind, Schedule};
use igrid::transport::inproc;
use igrid::{BoundaryWidths, GridOptions};

fn main() -> igrid::Result<()> {
    let local = HeatParams { n: [18; 3], nt: 50, init: InitKind::Gaussian, ..HeatParams::default() };
    let schedule = Schedule::Overlapped(BoundaryWidths([4, 2, 2]));
    let eight = inproc::run(8, |comm| heat3d::run(&comm, &local, &GridOptions::default(), schedule))?;
    let field = eight[0].field.as_ref().expect("rank 0 gathers");

    let single = HeatParams { n: [34; 3], ..local.clone() };
    let one = inproc::run(1, |comm| heat3d::run(&comm, &single, &GridOptions::default(), Schedule::Sequential))?;
    let reference = one[0].field.as_ref().expect("rank 0 gathers");

    println!("global size {:?}, dt {:e}", field.dims(), eight[0].dt);
    println!("T in [{:.6}, {:.6}]", field.min(), field.max());
    println!("max |8 ranks - 1 rank| = {:e}", field.max_abs_diff(reference));
    heat3d::write_field("heat3d.bin", field)?;
    println!("wrote heat3d.bin");
    Ok(())
}

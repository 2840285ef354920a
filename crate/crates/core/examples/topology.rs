//! Process grids chosen for a few rank counts, and the neighbours of each
//! rank on a periodic 2x2x2 grid.

use igrid::topology::{dims_create, ProcessTopology};

fn main() -> igrid::Result<()> {
    for n in [1, 2, 6, 8, 12, 64, 100] {
        let d = dims_create(n, 3, [None; 3])?;
        println!("{n:>4} ranks -> {}x{}x{}", d[0], d[1], d[2]);
    }
    let d = dims_create(12, 3, [None, None, Some(1)])?;
    println!("  12 ranks, z fixed to 1 -> {}x{}x{}", d[0], d[1], d[2]);

    for rank in 0..8 {
        let t = ProcessTopology::new([2, 2, 2], [true, false, false], rank)?;
        let nb = t.all_neighbors();
        println!(
            "rank {rank} at {:?}: x {:?}/{:?}, y {:?}/{:?}, z {:?}/{:?}",
            t.coords(),
            nb[0].lower,
            nb[0].upper,
            nb[1].lower,
            nb[1].upper,
            nb[2].lower,
            nb[2].upper
        );
    }
    Ok(())
}

//! Fill every local grid with its global x index, clobber the halos, and let
//! `update_halo` restore them from the neighbours.

use igrid::transport::inproc;
use igrid::{update_halo, Array3, DistributedField, GlobalGrid, GridOptions};

fn main() -> igrid::Result<()> {
    let n = [8, 6, 6];
    let reports = inproc::run(4, |comm| {
        let mut grid = GlobalGrid::init(&comm, n, &GridOptions::default().with_dims([4, 1, 1]))?;
        let gx: Vec<f64> = (1..=n[0])
            .map(|l| grid.local_to_global(0, l).map(|g| g as f64))
            .collect::<igrid::Result<_>>()?;
        let mut a = Array3::from_fn(n, |i, _, _| gx[i]);
        let expected = a.clone();
        let (first, last) = (grid.topology().is_first(0), grid.topology().is_last(0));
        for j in 0..n[1] {
            for k in 0..n[2] {
                if !first {
                    a[[0, j, k]] = -1.0;
                }
                if !last {
                    a[[n[0] - 1, j, k]] = -1.0;
                }
            }
        }
        let mut f = DistributedField::from_array(&grid, "A", a)?;
        update_halo(&grid, &mut [&mut f])?;
        let ok = f.data().bit_eq(&expected);
        let line = format!("rank {} owns global x {}..={}: halos restored = {ok}", grid.me(), gx[0], gx[n[0] - 1]);
        grid.finalize()?;
        Ok(line)
    })?;
    for r in reports {
        println!("{r}");
    }
    Ok(())
}

//! Small weak-scaling table: per-iteration time at fixed local size for
//! 1, 2 and 4 in-process ranks.

use std::time::Duration;

use igrid::bench::{self, BenchConfig};
use igrid::heat3d::{HeatParams, Schedule};
use igrid::GridOptions;

fn main() -> igrid::Result<()> {
    let cfg = BenchConfig {
        params: HeatParams { n: [32; 3], nt: 5, ..HeatParams::default() },
        grid: GridOptions::default(),
        schedule: Schedule::Sequential,
        ranks: vec![1, 2, 4],
        samples: 20,
        timeout: Duration::from_secs(30),
    };
    let rows = bench::run(&cfg)?;
    bench::write_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

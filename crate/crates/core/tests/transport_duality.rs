mod common;

use std::time::Duration;

use common::{check_halo_case, HaloCase};
use igrid::heat3d::{self, HeatParams, InitKind, Schedule};
use igrid::transport::{inproc, tcp, Comm};
use igrid::{Array3, BoundaryWidths, GridOptions};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn tcp_world(n: usize) -> Vec<Comm> {
    tcp::localhost_world(n, Duration::from_secs(20)).unwrap()
}

fn heat_field(comms: Vec<Comm>, params: &HeatParams, schedule: Schedule) -> Array3 {
    let out = inproc::launch_with(comms, |c| heat3d::run(&c, params, &GridOptions::default(), schedule)).unwrap();
    out.into_iter().next().unwrap().unwrap().field.unwrap()
}

#[test]
fn heat_runs_agree_across_transports() {
    let params = HeatParams { n: [12, 10, 9], nt: 20, init: InitKind::Gaussian, ..HeatParams::default() };
    for n in [2, 4] {
        for schedule in [Schedule::Sequential, Schedule::Overlapped(BoundaryWidths([3, 2, 2]))] {
            let a = heat_field(inproc::world(n).unwrap(), &params, schedule);
            let b = heat_field(tcp_world(n), &params, schedule);
            assert!(a.bit_eq(&b), "{n} ranks, {schedule:?}");
        }
    }
}

#[test]
fn halo_cases_over_tcp() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..12 {
        let case = HaloCase::random(&mut rng, 4);
        let results = inproc::launch_with(tcp_world(case.nprocs()), |c| Ok(check_halo_case(&c, &case))).unwrap();
        for r in results {
            assert_eq!(r.unwrap(), Ok(()), "{case:?}");
        }
    }
}

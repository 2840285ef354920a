mod common;

use std::time::Duration;

use common::{check_overlap_case, OverlapCase};
use igrid::heat3d::{self, HeatParams, InitKind, Schedule};
use igrid::transport::inproc;
use igrid::{BoundaryWidths, GridOptions};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn run_case(case: &OverlapCase) -> Result<(), String> {
    let results = inproc::launch(case.halo.nprocs(), |comm| Ok(check_overlap_case(&comm, case)))
        .map_err(|e| e.to_string())?;
    results.into_iter().map(|r| r.unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn overlapped_sweep_matches_sequential(seed in any::<u64>()) {
        let case = OverlapCase::random(&mut StdRng::seed_from_u64(seed), 8);
        prop_assert_eq!(run_case(&case), Ok(()), "{:?}", case);
    }

    #[test]
    fn wide_x_widths_match_sequential(seed in any::<u64>()) {
        let case = OverlapCase::wide_x(&mut StdRng::seed_from_u64(seed), 8);
        prop_assert_eq!(run_case(&case), Ok(()), "{:?}", case);
    }
}

#[test]
fn heat_schedules_agree() {
    let params = HeatParams { n: [14, 10, 12], nt: 15, init: InitKind::Gaussian, ..HeatParams::default() };
    let opts = GridOptions::default().with_dims([2, 2, 1]);
    let run = |schedule| {
        inproc::run(4, |c| heat3d::run(&c, &params, &opts, schedule)).unwrap().remove(0).field.unwrap()
    };
    let seq = run(Schedule::Sequential);
    for w in [[2, 2, 2], [16, 2, 2], [3, 4, 5], [7, 7, 7]] {
        assert!(seq.bit_eq(&run(Schedule::Overlapped(BoundaryWidths(w)))), "widths {w:?}");
    }
}

#[test]
fn slow_sends_overlap_with_inner_compute() {
    // Informative only: prints the times, asserts agreement.
    let params = HeatParams { n: [40; 3], nt: 3, init: InitKind::Gaussian, ..HeatParams::default() };
    let delay = Duration::from_millis(15);
    let time = |schedule| {
        let comms = inproc::world(2).unwrap().into_iter().map(|c| c.with_send_delay(delay)).collect();
        let out = inproc::launch_with(comms, |c| heat3d::run(&c, &params, &GridOptions::default(), schedule)).unwrap();
        let out = out.into_iter().next().unwrap().unwrap();
        (heat3d::mean_iteration_time(&out.timings, 0).unwrap(), out.field.unwrap())
    };
    let (t_seq, f_seq) = time(Schedule::Sequential);
    let (t_ovl, f_ovl) = time(Schedule::Overlapped(BoundaryWidths([4, 2, 2])));
    println!("per iteration: sequential {t_seq:?}, overlapped {t_ovl:?}");
    assert!(f_seq.bit_eq(&f_ovl));
}

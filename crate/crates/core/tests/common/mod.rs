//! Oracles and randomized case runners shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use igrid::overlap::{sweep, FieldWriter};
use igrid::transport::Comm;
use igrid::{
    hide_communication, update_halo, Array3, BoundaryWidths, DistributedField, GlobalGrid, GridOptions, Region,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn igrid_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_igrid"))
}

/// Number of distinct points when `p` grids of `n` points are glued, each
/// sharing its top `o` points with the bottom `o` points of the next (and
/// the last with the first when periodic). Counted with union-find.
pub fn tiling_oracle(n: usize, o: usize, p: usize, periodic: bool) -> usize {
    let mut parent: Vec<usize> = (0..n * p).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let glued = if periodic { p } else { p - 1 };
    for c in 0..glued {
        let next = (c + 1) % p;
        for t in 0..o {
            let a = root(&mut parent, c * n + n - o + t);
            let b = root(&mut parent, next * n + t);
            parent[a] = b;
        }
    }
    (0..n * p).filter(|&x| root(&mut parent, x) == x).count()
}

/// Exhaustive search for the process grid: smallest `max − min` over the
/// first `ndims` axes, ties broken toward the lexicographically largest
/// triple; axes beyond `ndims` are 1.
pub fn dims_oracle(nprocs: usize, ndims: usize, fixed: [Option<usize>; 3]) -> Option<[usize; 3]> {
    let mut best: Option<(usize, [usize; 3])> = None;
    for a in (1..=nprocs).filter(|a| nprocs % a == 0) {
        for b in (1..=nprocs / a).filter(|b| (nprocs / a) % b == 0) {
            let t = [a, b, nprocs / a / b];
            if (0..3).any(|d| fixed[d].is_some_and(|k| k != t[d])) || (ndims..3).any(|d| t[d] != 1) {
                continue;
            }
            let act = &t[..ndims];
            let spread = act.iter().max().unwrap() - act.iter().min().unwrap();
            if best.map_or(true, |(s, b)| spread < s || (spread == s && t > b)) {
                best = Some((spread, t));
            }
        }
    }
    best.map(|(_, t)| t)
}

/// Rank of grid coordinates, z fastest.
pub fn rank_at(c: [usize; 3], dims: [usize; 3]) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

/// One randomized halo-update scenario.
#[derive(Debug, Clone)]
pub struct HaloCase {
    pub dims: [usize; 3],
    pub n: [usize; 3],
    pub overlap: [usize; 3],
    pub periodic: [bool; 3],
    /// Sizes of the exchanged fields.
    pub sizes: Vec<[usize; 3]>,
}

impl HaloCase {
    pub fn nprocs(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn options(&self) -> GridOptions {
        GridOptions::default()
            .with_dims(self.dims)
            .with_overlap(self.overlap)
            .with_periodic(self.periodic)
    }

    pub fn random(rng: &mut StdRng, max_ranks: usize) -> Self {
        let grids: Vec<[usize; 3]> = (1..=max_ranks)
            .flat_map(|a| (1..=max_ranks).flat_map(move |b| (1..=max_ranks).map(move |c| [a, b, c])))
            .filter(|t| t.iter().product::<usize>() <= max_ranks)
            .collect();
        let dims = grids[rng.gen_range(0..grids.len())];
        let overlap = [0; 3].map(|_| if rng.gen_bool(0.5) { 2 } else { 4 });
        let n = [0, 1, 2].map(|d| overlap[d] + rng.gen_range(2..=6));
        let periodic = [0; 3].map(|_| rng.gen_bool(0.5));
        let nfields = rng.gen_range(1..=3);
        let sizes = (0..nfields)
            .map(|_| [0, 1, 2].map(|d| n[d] + rng.gen_range(0..=2) - 1))
            .collect();
        Self { dims, n, overlap, periodic, sizes }
    }
}

/// Layers received from below and above, 1-based and inclusive, for a
/// field of size `s`; empty when nothing is exchanged.
fn recv_layers(s: usize, n: usize, o: usize) -> (Vec<usize>, Vec<usize>) {
    let ol = s - (n - o);
    let h = ol / 2;
    ((1..=h).collect(), (s - h + 1..=s).collect())
}

fn encode(rank: usize, g: [usize; 3]) -> f64 {
    (((rank * 1000 + g[0]) * 1000 + g[1]) * 1000 + g[2]) as f64
}

/// Runs one halo case on `comm`'s rank: every cell starts as
/// `encode(rank, global index)`, receive cells are clobbered, and after the
/// update each cell must carry the rank it was received from (shifting the
/// coordinates once per axis whose receive layers contain it) and the same
/// global index.
pub fn check_halo_case(comm: &Comm, case: &HaloCase) -> Result<(), String> {
    let fail = |e: igrid::Error| format!("rank {}: {e}", comm.rank());
    let mut grid = GlobalGrid::init(comm, case.n, &case.options()).map_err(fail)?;
    let me = comm.rank();
    let coords = grid.topology().coords();
    let dims = case.dims;
    let period = [0, 1, 2].map(|d| dims[d] * (case.n[d] - case.overlap[d]));
    let has = |d: usize, upper: bool| {
        case.periodic[d] || if upper { coords[d] + 1 < dims[d] } else { coords[d] > 0 }
    };

    let mut fields = Vec::new();
    let mut expected = Vec::new();
    for (fi, &s) in case.sizes.iter().enumerate() {
        let recv = [0, 1, 2].map(|d| recv_layers(s[d], case.n[d], case.overlap[d]));
        let global = |d: usize, l: usize| {
            let g = l + coords[d] * (case.n[d] - case.overlap[d]);
            if case.periodic[d] {
                (g - 1) % period[d] + 1
            } else {
                g
            }
        };
        let mut init = Array3::zeros(s);
        let mut want = Array3::zeros(s);
        for c in init.region().cells() {
            let g = [0, 1, 2].map(|d| global(d, c[d] + 1));
            let mut owner = coords;
            let mut received = false;
            for d in 0..3 {
                let l = c[d] + 1;
                if recv[d].0.contains(&l) && has(d, false) {
                    owner[d] = (coords[d] + dims[d] - 1) % dims[d];
                    received = true;
                } else if recv[d].1.contains(&l) && has(d, true) {
                    owner[d] = (coords[d] + 1) % dims[d];
                    received = true;
                }
            }
            init[c] = if received { -1.0 - fi as f64 } else { encode(me, g) };
            want[c] = encode(rank_at(owner, dims), g);
        }
        fields.push(DistributedField::from_array(&grid, format!("f{fi}"), init).map_err(fail)?);
        expected.push(want);
    }
    let mut refs: Vec<&mut DistributedField> = fields.iter_mut().collect();
    update_halo(&grid, &mut refs).map_err(fail)?;
    for (f, want) in fields.iter().zip(&expected) {
        if let Some(c) = want.region().cells().find(|&c| f.data()[c].to_bits() != want[c].to_bits()) {
            return Err(format!(
                "rank {me} field {} size {:?}: cell {c:?} is {} but should be {}",
                f.name(),
                f.sizes(),
                f.data()[c],
                want[c]
            ));
        }
    }
    grid.finalize().map_err(fail)?;
    Ok(())
}

/// One randomized comparison of the overlapped and sequential schedules.
#[derive(Debug, Clone)]
pub struct OverlapCase {
    pub halo: HaloCase,
    pub widths: BoundaryWidths,
    pub seed: u64,
}

impl OverlapCase {
    pub fn random(rng: &mut StdRng, max_ranks: usize) -> Self {
        let mut halo = HaloCase::random(rng, max_ranks);
        halo.n = [0, 1, 2].map(|d| halo.overlap[d] + rng.gen_range(2..=10));
        halo.sizes = halo
            .sizes
            .iter()
            .map(|_| [0, 1, 2].map(|d| halo.n[d] + rng.gen_range(0..=2) - 1))
            .collect();
        let widths = [0, 1, 2].map(|d| {
            let ol = halo.sizes.iter().map(|s| s[d] - (halo.n[d] - halo.overlap[d])).max().unwrap();
            ol + rng.gen_range(0..=4)
        });
        Self { halo, widths: BoundaryWidths(widths), seed: rng.gen() }
    }

    /// Overlap 2, unstaggered fields and widths (16, 2, 2) capped to the
    /// interior.
    pub fn wide_x(rng: &mut StdRng, max_ranks: usize) -> Self {
        let mut halo = HaloCase::random(rng, max_ranks);
        halo.overlap = [2; 3];
        halo.n = [rng.gen_range(6..=24), rng.gen_range(6..=10), rng.gen_range(6..=10)];
        halo.sizes = vec![halo.n; halo.sizes.len()];
        let widths = BoundaryWidths([16, 2, 2]).capped_to(&Region::interior(halo.n));
        Self { halo, widths, seed: rng.gen() }
    }
}

/// A stencil reading `inputs[f]` around each cell and writing field `f`.
fn kernel(inputs: &[Array3]) -> impl Fn(Region, &mut [FieldWriter<'_>]) + Sync + '_ {
    move |r, writers| {
        for (w, a) in writers.iter_mut().zip(inputs) {
            for [i, j, k] in r.cells() {
                let v = 0.5 * a[[i, j, k]]
                    + 0.1 * (a[[i - 1, j, k]] + a[[i + 1, j, k]])
                    + 0.07 * (a[[i, j - 1, k]] + a[[i, j + 1, k]])
                    + 0.03 * (a[[i, j, k - 1]] * a[[i, j, k + 1]]);
                w.set([i, j, k], v);
            }
        }
    }
}

/// Runs the sweep sequentially and overlapped from the same start on this
/// rank and checks the results are bit-identical.
pub fn check_overlap_case(comm: &Comm, case: &OverlapCase) -> Result<(), String> {
    let me = comm.rank();
    let fail = |e: igrid::Error| format!("rank {me}: {e}");
    let mut grid = GlobalGrid::init(comm, case.halo.n, &case.halo.options()).map_err(fail)?;
    let mut rng = StdRng::seed_from_u64(case.seed ^ (me as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut random = |s: [usize; 3]| Array3::from_fn(s, |_, _, _| rng.gen_range(-1.0..1.0));
    let inputs: Vec<Array3> = case.halo.sizes.iter().map(|&s| random(s)).collect();
    let starts: Vec<Array3> = case.halo.sizes.iter().map(|&s| random(s)).collect();
    // The kernel touches neighbours, so sweep only cells with a full stencil.
    let region = case
        .halo
        .sizes
        .iter()
        .map(|&s| Region::interior(s))
        .reduce(|a, b| Region::new(a.lo, [0, 1, 2].map(|d| a.hi[d].min(b.hi[d]))))
        .unwrap();

    let fields = |name: &str| -> Result<Vec<DistributedField>, String> {
        starts
            .iter()
            .enumerate()
            .map(|(i, a)| DistributedField::from_array(&grid, format!("{name}{i}"), a.clone()).map_err(fail))
            .collect()
    };
    let mut seq = fields("seq")?;
    let mut ovl = fields("ovl")?;
    {
        let mut refs: Vec<&mut DistributedField> = seq.iter_mut().collect();
        sweep(region, &mut refs, kernel(&inputs)).map_err(fail)?;
        update_halo(&grid, &mut refs).map_err(fail)?;
    }
    {
        let mut refs: Vec<&mut DistributedField> = ovl.iter_mut().collect();
        hide_communication(&grid, case.widths, region, &mut refs, kernel(&inputs)).map_err(fail)?;
    }
    for (a, b) in seq.iter().zip(&ovl) {
        if !a.data().bit_eq(b.data()) {
            return Err(format!(
                "rank {me}: overlapped field {} differs from sequential by {:e}",
                b.name(),
                a.data().max_abs_diff(b.data())
            ));
        }
    }
    grid.finalize().map_err(fail)?;
    Ok(())
}

//! Explicit 3-D heat diffusion on an implicit global grid.
//!
//! The solver advances `T` with a 7-point stencil into `T2`, updates the
//! halos of `T2` and swaps the two. Global boundary layers are never written,
//! so they keep their initial values.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{Array3, Region};
use crate::error::{Error, Result};
use crate::grid::{GlobalGrid, GridOptions, ReduceOp};
use crate::halo::{update_halo, DistributedField};
use crate::overlap::{hide_communication, sweep, BoundaryWidths, FieldWriter};
use crate::topology::NDIMS;
use crate::transport::Comm;

/// Background temperature of every initial condition.
pub const BASE_TEMPERATURE: f64 = 1.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// `1.7` everywhere; a steady state.
    Constant,
    /// `1.7 + exp(-(r/w)^2)` with `r` the distance to the domain centre and
    /// `w = lx/8`.
    Gaussian,
    /// `1.7 + u` with `u` uniform in `[0, 1)`, drawn per global cell from a
    /// seeded stream so the field does not depend on the decomposition.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatParams {
    /// Thermal conductivity.
    pub lam: f64,
    /// Heat capacity; the solver uses `Ci = 1/c0`.
    pub c0: f64,
    pub lengths: [f64; NDIMS],
    /// Local grid points per axis.
    pub n: [usize; NDIMS],
    pub nt: usize,
    pub init: InitKind,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            lam: 1.0,
            c0: 2.0,
            lengths: [1.0; NDIMS],
            n: [32; NDIMS],
            nt: 100,
            init: InitKind::Constant,
        }
    }
}

impl HeatParams {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lam) || !positive(self.c0) || !self.lengths.iter().all(|&l| positive(l)) {
            return Err(Error::Parameter(format!(
                "lam, c0 and domain lengths must be positive, got lam={} c0={} lengths={:?}",
                self.lam, self.c0, self.lengths
            )));
        }
        Ok(())
    }
}

/// Grid spacing `l_d / (N_d − 1)` for global sizes `N`.
pub fn spacing(lengths: [f64; NDIMS], global_n: [usize; NDIMS]) -> Result<[f64; NDIMS]> {
    let mut h = [0.0; NDIMS];
    for d in 0..NDIMS {
        if global_n[d] < 2 {
            return Err(Error::Parameter(format!(
                "global size {} on axis {d} leaves no spacing",
                global_n[d]
            )));
        }
        h[d] = lengths[d] / (global_n[d] - 1) as f64;
    }
    Ok(h)
}

/// Per-step constants of the stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub lam: f64,
    pub dt: f64,
    /// Grid spacing per axis.
    pub h: [f64; NDIMS],
}

fn check_shapes(t: &Array3, ci: &Array3, out: [usize; 3]) -> Result<()> {
    if t.dims() != ci.dims() || t.dims() != out {
        return Err(Error::Shape(format!(
            "T {:?}, Ci {:?} and T2 {:?} must have the same shape",
            t.dims(),
            ci.dims(),
            out
        )));
    }
    if t.dims().iter().any(|&s| s < 3) {
        return Err(Error::Shape(format!("stencil needs at least 3 points per axis, got {:?}", t.dims())));
    }
    Ok(())
}

/// Writes the updated temperature of every cell of `w`'s region, which must
/// lie in the interior of `t`.
pub fn step_region(w: &mut FieldWriter<'_>, t: &Array3, ci: &Array3, st: &Stencil) {
    let [nx, ny, _] = t.dims();
    let (sy, sz) = (nx, nx * ny);
    let [dx2, dy2, dz2] = st.h.map(|h| h * h);
    let (tv, cv) = (t.as_slice(), ci.as_slice());
    let r = w.region();
    for k in r.range(2) {
        for j in r.range(1) {
            let row = w.row_mut(j, k);
            let base = t.offset(r.lo[0], j, k);
            for (x, out) in row.iter_mut().enumerate() {
                let c = base + x;
                let tc = tv[c];
                let lap_x = (tv[c + 1] - 2.0 * tc + tv[c - 1]) / dx2;
                let lap_y = (tv[c + sy] - 2.0 * tc + tv[c - sy]) / dy2;
                let lap_z = (tv[c + sz] - 2.0 * tc + tv[c - sz]) / dz2;
                *out = tc + st.dt * (st.lam * cv[c] * (lap_x + lap_y + lap_z));
            }
        }
    }
}

/// One explicit step on plain arrays: writes the interior of `t2`.
pub fn step(t2: &mut Array3, t: &Array3, ci: &Array3, st: &Stencil) -> Result<()> {
    check_shapes(t, ci, t2.dims())?;
    let interior = Region::interior(t.dims());
    let mut w = FieldWriter::new(t2.raw(), interior);
    step_region(&mut w, t, ci, st);
    Ok(())
}

/// Largest stable time step `min(h²)/lam/max(Ci)/6.1`, with the maximum
/// taken over all ranks.
pub fn stable_dt(params: &HeatParams, ci: &DistributedField, grid: &GlobalGrid) -> Result<f64> {
    let h = spacing(params.lengths, grid.global_sizes()?)?;
    let ci_max = grid.allreduce(ci.data().max(), ReduceOp::Max)?;
    stable_dt_for(h, params.lam, ci_max)
}

/// Local form of [`stable_dt`] for known spacing and maximum of `Ci`.
pub fn stable_dt_for(h: [f64; NDIMS], lam: f64, ci_max: f64) -> Result<f64> {
    let h2min = h.iter().map(|h| h * h).fold(f64::INFINITY, f64::min);
    let dt = h2min / lam / ci_max / 6.1;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Parameter(format!("time step {dt} is not positive")));
    }
    Ok(dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Sweep, then update halos.
    Sequential,
    /// Overlap the halo update with the inner part of the sweep.
    Overlapped(BoundaryWidths),
}

/// Wall times of one iteration, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterTiming {
    pub it: usize,
    pub step_secs: f64,
    pub halo_secs: f64,
    pub total_secs: f64,
}

pub struct HeatSolver {
    grid: GlobalGrid,
    t: DistributedField,
    t2: DistributedField,
    ci: DistributedField,
    stencil: Stencil,
    schedule: Schedule,
    it: usize,
}

impl HeatSolver {
    /// Creates the global grid and the initial fields. Collective.
    pub fn new(comm: &Comm, params: &HeatParams, opts: &GridOptions, schedule: Schedule) -> Result<Self> {
        params.validate()?;
        let grid = GlobalGrid::init(comm, params.n, opts)?;
        let h = spacing(params.lengths, grid.global_sizes()?)?;
        let init = initial_temperature(&grid, params, h)?;
        let t = DistributedField::from_array(&grid, "T", init)?;
        let t2 = DistributedField::from_array(&grid, "T2", t.data().clone())?;
        let ci = DistributedField::new(&grid, "Ci", params.n, 1.0 / params.c0)?;
        let dt = stable_dt(params, &ci, &grid)?;
        Ok(Self {
            grid,
            t,
            t2,
            ci,
            stencil: Stencil { lam: params.lam, dt, h },
            schedule,
            it: 0,
        })
    }

    pub fn grid(&self) -> &GlobalGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.stencil.dt
    }

    pub fn iterations(&self) -> usize {
        self.it
    }

    pub fn temperature(&self) -> &DistributedField {
        &self.t
    }

    /// Advances one time step. Collective.
    pub fn step(&mut self) -> Result<IterTiming> {
        let Self { grid, t, t2, ci, stencil, schedule, .. } = self;
        let (t, ci, st) = (t.data(), ci.data(), &*stencil);
        let interior = Region::interior(grid.n());
        let kernel = |_: Region, w: &mut [FieldWriter<'_>]| step_region(&mut w[0], t, ci, st);
        let start = Instant::now();
        let (step_time, halo_time) = match schedule {
            Schedule::Sequential => {
                sweep(interior, &mut [&mut *t2], kernel)?;
                let swept = start.elapsed();
                update_halo(grid, &mut [&mut *t2])?;
                (swept, start.elapsed() - swept)
            }
            Schedule::Overlapped(widths) => {
                let timing = hide_communication(grid, *widths, interior, &mut [&mut *t2], kernel)?;
                (timing.compute, timing.halo)
            }
        };
        let total = start.elapsed();
        std::mem::swap(&mut self.t, &mut self.t2);
        self.it += 1;
        Ok(IterTiming {
            it: self.it,
            step_secs: step_time.as_secs_f64(),
            halo_secs: halo_time.as_secs_f64(),
            total_secs: total.as_secs_f64(),
        })
    }

    /// Assembles the temperature on `root`. Collective.
    pub fn gather(&self, root: usize) -> Result<Option<Array3>> {
        self.grid.gather(&self.t, root)
    }

    pub fn finalize(mut self) -> Result<()> {
        self.grid.finalize()
    }
}

fn initial_temperature(grid: &GlobalGrid, params: &HeatParams, h: [f64; NDIMS]) -> Result<Array3> {
    let n = params.n;
    match params.init {
        InitKind::Constant => Ok(Array3::filled(n, BASE_TEMPERATURE)),
        InitKind::Gaussian => {
            let coords: Vec<Vec<f64>> = (0..NDIMS)
                .map(|d| (1..=n[d]).map(|l| grid.global_coord(d, l, h[d])).collect())
                .collect::<Result<_>>()?;
            let c = params.lengths.map(|l| l / 2.0);
            let w = params.lengths[0] / 8.0;
            Ok(Array3::from_fn(n, |i, j, k| {
                let r2 = (coords[0][i] - c[0]).powi(2) + (coords[1][j] - c[1]).powi(2) + (coords[2][k] - c[2]).powi(2);
                BASE_TEMPERATURE + (-r2 / (w * w)).exp()
            }))
        }
        InitKind::Random { seed } => {
            let gn = grid.global_sizes()?;
            let periodic = grid.topology().periodic();
            let index: Vec<Vec<u64>> = (0..NDIMS)
                .map(|d| {
                    (1..=n[d])
                        .map(|l| {
                            let g = grid.local_to_global(d, l)? - 1;
                            Ok((if periodic[d] { g % gn[d] } else { g }) as u64)
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (gx, gy) = (gn[0] as u64, gn[1] as u64);
            Ok(Array3::from_fn(n, |i, j, k| {
                let cell = index[0][i] + gx * (index[1][j] + gy * index[2][k]);
                // One f64 consumes two 32-bit words of the stream.
                rng.set_word_pos(2 * cell as u128);
                BASE_TEMPERATURE + rng.gen::<f64>()
            }))
        }
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Gathered final temperature; `Some` on rank 0 only.
    pub field: Option<Array3>,
    pub timings: Vec<IterTiming>,
    pub dt: f64,
}

/// Initializes, runs `params.nt` steps, gathers on rank 0 and finalizes.
/// Collective.
pub fn run(comm: &Comm, params: &HeatParams, opts: &GridOptions, schedule: Schedule) -> Result<RunOutput> {
    let mut solver = HeatSolver::new(comm, params, opts, schedule)?;
    let timings = (0..params.nt).map(|_| solver.step()).collect::<Result<Vec<_>>>()?;
    let field = solver.gather(0)?;
    let dt = solver.dt();
    solver.finalize()?;
    Ok(RunOutput { field, timings, dt })
}

const FIELD_MAGIC: &str = "IGRIDF1";

/// Writes `a` as a one-line text header `IGRIDF1 nx ny nz` followed by the
/// values as little-endian f64, x fastest.
pub fn write_field(path: impl AsRef<Path>, a: &Array3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny, nz] = a.dims();
    writeln!(w, "{FIELD_MAGIC} {nx} {ny} {nz}")?;
    for v in a.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Array3> {
    let bad = |msg: String| Error::Io(io::Error::new(io::ErrorKind::InvalidData, msg));
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(FIELD_MAGIC) {
        return Err(bad(format!("not a field file, header {header:?}")));
    }
    let dims: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| bad(format!("bad size {p:?} in header"))))
        .collect::<Result<_>>()?;
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| bad(format!("header {header:?} needs three sizes")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let len = dims.iter().product::<usize>();
    if bytes.len() != 8 * len {
        return Err(bad(format!("expected {} data bytes, found {}", 8 * len, bytes.len())));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array3::from_vec(dims, data).expect("length checked"))
}

pub fn write_timings(path: impl AsRef<Path>, timings: &[IterTiming]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "it,step_secs,halo_secs,total_secs")?;
    for t in timings {
        writeln!(w, "{},{:e},{:e},{:e}", t.it, t.step_secs, t.halo_secs, t.total_secs)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean wall time per iteration, ignoring the first `skip` iterations.
pub fn mean_iteration_time(timings: &[IterTiming], skip: usize) -> Option<Duration> {
    let rest = timings.get(skip..).filter(|r| !r.is_empty())?;
    let sum: f64 = rest.iter().map(|t| t.total_secs).sum();
    Some(Duration::from_secs_f64(sum / rest.len() as f64))
}

//! The `igrid` command line: `run`, `bench` and `dims`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::{Child, Command, ExitCode};
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchConfig};
use crate::error::Error;
use crate::grid::GridOptions;
use crate::heat3d::{self, HeatParams, InitKind, RunOutput, Schedule};
use crate::overlap::BoundaryWidths;
use crate::topology::dims_create;
use crate::transport::{inproc, tcp, timeout_from_env};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "igrid", version, about = "Distributed 3-D heat diffusion on implicit global grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the heat solver and write the gathered field.
    Run(RunArgs),
    /// Time the solver at fixed local size over several rank counts.
    Bench(BenchArgs),
    /// Print the process grid chosen for a rank count.
    Dims(DimsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Constant,
    Gaussian,
    /// Uniform noise from `--seed`.
    Random,
}

/// Three `usize` values written `AxBxC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple(pub [usize; 3]);

fn parse_triple(s: &str, sep: char) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(sep).collect();
    if parts.len() != 3 {
        return Err(format!("expected three values separated by '{sep}', got {s:?}"));
    }
    let mut v = [0; 3];
    for (d, p) in parts.iter().enumerate() {
        v[d] = p.trim().parse().map_err(|_| format!("{p:?} is not a non-negative integer"))?;
    }
    Ok(v)
}

fn parse_topology(s: &str) -> std::result::Result<Triple, String> {
    parse_triple(&s.to_ascii_lowercase(), 'x').map(Triple)
}

fn parse_widths(s: &str) -> std::result::Result<BoundaryWidths, String> {
    parse_triple(s, ',').map(BoundaryWidths)
}

fn axis_index(name: &str) -> std::result::Result<usize, String> {
    match name.trim() {
        "x" => Ok(0),
        "y" => Ok(1),
        "z" => Ok(2),
        other => Err(format!("unknown axis {other:?}, expected x, y or z")),
    }
}

/// Periodic axes, written as a comma list of axis names or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Periodic(pub [bool; 3]);

impl FromStr for Periodic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut p = [false; 3];
        if s.trim() != "none" {
            for a in s.split(',') {
                p[axis_index(a)?] = true;
            }
        }
        Ok(Self(p))
    }
}

/// Fixed process counts, written `x=2,z=1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fixed(pub [Option<usize>; 3]);

impl FromStr for Fixed {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut f = [None; 3];
        for item in s.split(',') {
            let (axis, count) = item
                .split_once('=')
                .ok_or_else(|| format!("expected axis=count, got {item:?}"))?;
            let count = count
                .trim()
                .parse()
                .map_err(|_| format!("{count:?} is not a non-negative integer"))?;
            f[axis_index(axis)?] = Some(count);
        }
        Ok(Self(f))
    }
}

/// Solver options shared by `run` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct AppArgs {
    /// Local grid points along x [default: 32 for run, 64 for bench]
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    /// Time steps [default: 100 for run; per sample, 5 for bench]
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long, value_enum, default_value_t = Init::Constant)]
    pub init: Init,
    /// Boundary widths `bx,by,bz` for overlapping halo updates with computation.
    #[arg(long, value_parser = parse_widths)]
    pub hide_comm: Option<BoundaryWidths>,
    /// Overlap of neighbouring local grids, on every axis.
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Periodic axes, e.g. `x,z`.
    #[arg(long, default_value = "none")]
    pub periodic: Periodic,
    /// Seed of `--init random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl AppArgs {
    fn params(&self, default_n: usize, default_nt: usize) -> HeatParams {
        let d = |v: Option<usize>| v.unwrap_or(default_n);
        HeatParams {
            n: [d(self.nx), d(self.ny), d(self.nz)],
            nt: self.nt.unwrap_or(default_nt),
            init: match self.init {
                Init::Constant => InitKind::Constant,
                Init::Gaussian => InitKind::Gaussian,
                Init::Random => InitKind::Random { seed: self.seed },
            },
            ..HeatParams::default()
        }
    }

    fn grid(&self) -> GridOptions {
        GridOptions::default()
            .with_overlap([self.overlap; 3])
            .with_periodic(self.periodic.0)
    }

    fn schedule(&self) -> Schedule {
        self.hide_comm.map_or(Schedule::Sequential, Schedule::Overlapped)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub app: AppArgs,
    #[arg(long, default_value_t = 1)]
    pub ranks: usize,
    /// Process grid `AxBxC`; chosen automatically if absent.
    #[arg(long, value_parser = parse_topology)]
    pub topology: Option<Triple>,
    #[arg(long, value_enum, default_value_t = Transport::Inproc)]
    pub transport: Transport,
    /// Field file of the gathered temperature.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration timing CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub app: AppArgs,
    /// Rank counts to measure.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Also write the CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DimsArgs {
    /// Number of ranks.
    #[arg(short = 'n', long = "nprocs")]
    pub nprocs: usize,
    /// Fixed counts per axis, e.g. `z=1`.
    #[arg(long)]
    pub fix: Option<Fixed>,
}

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Vec<String>),
}

impl Failure {
    fn runtime(e: Error, rank: Option<usize>) -> Self {
        Failure::Runtime(vec![describe(&e, rank)])
    }
}

fn describe(e: &Error, rank: Option<usize>) -> String {
    match rank {
        Some(r) => format!("{} error on rank {r}: {e}", e.module()),
        None => format!("{} error: {e}", e.module()),
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match &cli.command {
        Cmd::Run(a) => cmd_run(a, &args[1..]),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Dims(a) => cmd_dims(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("igrid: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msgs)) => {
            for m in msgs {
                eprintln!("igrid: {m}");
            }
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

pub fn main() -> ExitCode {
    main_with_args(std::env::args_os())
}

fn validate_run(a: &RunArgs) -> std::result::Result<GridOptions, Failure> {
    if a.ranks == 0 {
        return Err(Failure::Usage("--ranks must be at least 1".into()));
    }
    let mut grid = a.app.grid();
    if let Some(Triple(t)) = a.topology {
        if t.iter().product::<usize>() != a.ranks {
            return Err(Failure::Usage(format!(
                "topology {}x{}x{} does not have {} ranks",
                t[0], t[1], t[2], a.ranks
            )));
        }
        grid = grid.with_dims(t);
    }
    Ok(grid)
}

/// Runs the heat solver in-process, as one TCP rank, or by spawning one
/// process per rank.
pub fn cmd_run(a: &RunArgs, raw_args: &[OsString]) -> CmdResult {
    let grid = validate_run(a)?;
    let params = a.app.params(32, 100);
    let schedule = a.app.schedule();
    let timeout = timeout_from_env().map_err(|e| Failure::Usage(e.to_string()))?;
    match a.transport {
        Transport::Inproc => {
            let comms = inproc::world(a.ranks)
                .map_err(|e| Failure::runtime(e, None))?
                .into_iter()
                .map(|c| c.with_timeout(timeout))
                .collect();
            let results = inproc::launch_with(comms, |comm| heat3d::run(&comm, &params, &grid, schedule))
                .map_err(|e| Failure::runtime(e, None))?;
            let mut root = None;
            let mut errors = Vec::new();
            for (rank, r) in results.into_iter().enumerate() {
                match r {
                    Ok(out) if rank == 0 => root = Some(out),
                    Ok(_) => {}
                    Err(e) => errors.push(describe(&e, Some(rank))),
                }
            }
            if !errors.is_empty() {
                return Err(Failure::Runtime(errors));
            }
            report(a, &params, &root.expect("rank 0 result"))
        }
        Transport::Tcp => match tcp::TcpConfig::from_env().map_err(|e| Failure::Usage(e.to_string()))? {
            Some(cfg) => {
                if cfg.nprocs != a.ranks {
                    return Err(Failure::Usage(format!(
                        "IGRID_NPROCS={} disagrees with --ranks {}",
                        cfg.nprocs, a.ranks
                    )));
                }
                let comm = tcp::connect(&cfg).map_err(|e| Failure::runtime(e, cfg.rank))?;
                let rank = comm.rank();
                let out = heat3d::run(&comm, &params, &grid, schedule).map_err(|e| Failure::runtime(e, Some(rank)))?;
                if rank == 0 {
                    report(a, &params, &out)?;
                }
                Ok(())
            }
            None => spawn_tcp_ranks(a.ranks, raw_args, timeout),
        },
    }
}

fn report(a: &RunArgs, params: &HeatParams, out: &RunOutput) -> CmdResult {
    let field = out.field.as_ref().expect("root holds the gathered field");
    let io_err = |e: Error| Failure::runtime(e, Some(0));
    if let Some(path) = &a.out {
        heat3d::write_field(path, field).map_err(io_err)?;
    }
    if let Some(path) = &a.csv {
        heat3d::write_timings(path, &out.timings).map_err(io_err)?;
    }
    let [nx, ny, nz] = field.dims();
    let mean = heat3d::mean_iteration_time(&out.timings, 1).map_or(0.0, |d| d.as_secs_f64());
    println!(
        "global {nx}x{ny}x{nz}, {} steps, dt {:e}, T in [{}, {}], {:.3e} s/iteration",
        params.nt,
        out.dt,
        field.min(),
        field.max(),
        mean
    );
    Ok(())
}

/// Hosts a coordinator and runs one child process per rank with the same
/// arguments, then collects their exit status.
fn spawn_tcp_ranks(ranks: usize, raw_args: &[OsString], timeout: Duration) -> CmdResult {
    let spawn_err = |e: Error| Failure::runtime(e, None);
    let exe = std::env::current_exe().map_err(|e| spawn_err(e.into()))?;
    let coordinator = tcp::Coordinator::bind("127.0.0.1:0").map_err(spawn_err)?;
    let addr = coordinator.local_addr().map_err(spawn_err)?;
    let server = coordinator.spawn(ranks, timeout);
    let mut children: Vec<Option<Child>> = Vec::new();
    for rank in 0..ranks {
        let child = Command::new(&exe)
            .args(raw_args)
            .env("IGRID_COORDINATOR", addr.to_string())
            .env("IGRID_NPROCS", ranks.to_string())
            .env("IGRID_RANK", rank.to_string())
            .env("IGRID_COORDINATOR_EXTERNAL", "1")
            .env("IGRID_TIMEOUT_SECS", timeout.as_secs_f64().to_string())
            .spawn();
        match child {
            Ok(c) => children.push(Some(c)),
            Err(e) => {
                kill_all(&mut children);
                return Err(spawn_err(e.into()));
            }
        }
    }
    let mut errors = Vec::new();
    let mut running = ranks;
    while running > 0 {
        for (rank, slot) in children.iter_mut().enumerate() {
            let Some(child) = slot else { continue };
            match child.try_wait() {
                Ok(Some(status)) => {
                    *slot = None;
                    running -= 1;
                    if !status.success() {
                        errors.push(format!("rank {rank} process exited with {status}"));
                    }
                }
                Ok(None) => {}
                Err(e) => errors.push(format!("rank {rank} process: {e}")),
            }
        }
        if !errors.is_empty() {
            kill_all(&mut children);
            break;
        }
        thread::sleep(Duration::from_millis(10));
    }
    match server.join() {
        Ok(Ok(())) => {}
        Ok(Err(e)) if errors.is_empty() => errors.push(describe(&e, None)),
        Ok(Err(_)) => {}
        Err(_) => errors.push("coordinator thread panicked".into()),
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(errors))
    }
}

fn kill_all(children: &mut [Option<Child>]) {
    for child in children.iter_mut().flatten() {
        let _ = child.kill();
        let _ = child.wait();
    }
}

/// Weak-scaling table on the in-process transport.
pub fn cmd_bench(a: &BenchArgs) -> CmdResult {
    if a.ranks.contains(&0) || a.ranks.is_empty() {
        return Err(Failure::Usage("--ranks needs counts of at least 1".into()));
    }
    if a.samples == 0 {
        return Err(Failure::Usage("--samples must be at least 1".into()));
    }
    let params = a.app.params(64, 5);
    if params.nt == 0 {
        return Err(Failure::Usage("--nt must be at least 1 for bench".into()));
    }
    let cfg = BenchConfig {
        params,
        grid: a.app.grid(),
        schedule: a.app.schedule(),
        ranks: a.ranks.clone(),
        samples: a.samples,
        timeout: timeout_from_env().map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let rows = bench::run(&cfg).map_err(|e| Failure::runtime(e, None))?;
    let io_err = |e: io::Error| Failure::runtime(e.into(), None);
    if let Some(path) = &a.csv {
        let mut f = File::create(path).map_err(io_err)?;
        bench::write_csv(&mut f, &rows).map_err(io_err)?;
        f.flush().map_err(io_err)?;
    }
    bench::write_csv(io::stdout().lock(), &rows).map_err(io_err)?;
    Ok(())
}

pub fn cmd_dims(a: &DimsArgs) -> CmdResult {
    let fixed = a.fix.unwrap_or_default().0;
    let d = dims_create(a.nprocs, 3, fixed).map_err(|e| Failure::Usage(describe(&e, None)))?;
    println!("{}x{}x{}", d[0], d[1], d[2]);
    Ok(())
}

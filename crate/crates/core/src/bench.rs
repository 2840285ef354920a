//! Weak-scaling measurements of the heat solver on the in-process transport.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::grid::{GridOptions, ReduceOp};
use crate::heat3d::{HeatParams, HeatSolver, Schedule};
use crate::transport::inproc;

/// Sample median with a distribution-free confidence interval for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianCi {
    pub median: f64,
    pub low: f64,
    pub high: f64,
}

/// Median of `samples` and the order-statistic interval `[x(j), x(n+1-j)]`
/// covering it with probability at least `level`, where `j` is the largest
/// index with `P(Bin(n, 1/2) < j) <= (1 - level)/2`. Falls back to the full
/// sample range when `n` is too small for any such `j`.
pub fn median_ci(samples: &[f64], level: f64) -> Option<MedianCi> {
    if samples.is_empty() || samples.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let median = if n % 2 == 1 {
        x[n / 2]
    } else {
        (x[n / 2 - 1] + x[n / 2]) / 2.0
    };
    let alpha = (1.0 - level) / 2.0;
    let bin = Binomial::new(0.5, n as u64).expect("valid binomial");
    // j is 1-based; P(B <= j-1) is the chance that x(j) lies above the median.
    let j = (1..=n / 2).take_while(|&j| bin.cdf(j as u64 - 1) <= alpha).last();
    let (low, high) = match j {
        Some(j) => (x[j - 1], x[n - j]),
        None => (x[0], x[n - 1]),
    };
    Some(MedianCi { median, low, high })
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Heat parameters with the per-rank local size; `nt` is the number of
    /// iterations timed per sample.
    pub params: HeatParams,
    pub grid: GridOptions,
    pub schedule: Schedule,
    pub ranks: Vec<usize>,
    pub samples: usize,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub ranks: usize,
    /// Per-iteration wall time, slowest rank, one entry per sample.
    pub samples: Vec<f64>,
    pub stats: MedianCi,
    /// Median time at the smallest rank count over the median time here.
    pub efficiency: f64,
}

/// Per-iteration times of `samples` samples of `params.nt` iterations each
/// on `ranks` in-process ranks. One untimed warm-up iteration runs first.
pub fn sample_ranks(cfg: &BenchConfig, ranks: usize) -> Result<Vec<f64>> {
    let comms = inproc::world(ranks)?
        .into_iter()
        .map(|c| c.with_timeout(cfg.timeout))
        .collect();
    let results = inproc::launch_with(comms, |comm| {
        let mut solver = HeatSolver::new(&comm, &cfg.params, &cfg.grid, cfg.schedule)?;
        solver.step()?;
        let mut times = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            comm.barrier()?;
            let t0 = Instant::now();
            for _ in 0..cfg.params.nt {
                solver.step()?;
            }
            let per_it = t0.elapsed().as_secs_f64() / cfg.params.nt as f64;
            times.push(solver.grid().allreduce(per_it, ReduceOp::Max)?);
        }
        solver.finalize()?;
        Ok(times)
    })?;
    results.into_iter().next().expect("at least one rank")
}

/// Runs every rank count of `cfg` in increasing order.
pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.samples == 0 || cfg.params.nt == 0 {
        return Err(Error::Config("bench needs at least one sample of one iteration".into()));
    }
    let mut ranks = cfg.ranks.clone();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.first().is_none_or(|&r| r == 0) {
        return Err(Error::Config("bench needs rank counts of at least 1".into()));
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    for r in ranks {
        let samples = sample_ranks(cfg, r)?;
        let stats = median_ci(&samples, 0.95).ok_or_else(|| Error::Protocol("no valid samples".into()))?;
        let base = rows.first().map_or(stats.median, |b| b.stats.median);
        rows.push(BenchRow {
            ranks: r,
            samples,
            stats,
            efficiency: base / stats.median,
        });
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> io::Result<()> {
    writeln!(w, "ranks,median_secs,ci_low,ci_high,efficiency")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:.6}",
            r.ranks, r.stats.median, r.stats.low, r.stats.high, r.efficiency
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Coverage of [x(j), x(n+1-j)] by direct summation of binomial terms.
    fn coverage(n: u64, j: u64) -> f64 {
        let mut c = 1.0f64;
        let mut below = 0.0;
        for k in 0..j {
            if k > 0 {
                c = c * (n - k + 1) as f64 / k as f64;
            }
            below += c;
        }
        1.0 - 2.0 * below / 2f64.powi(n as i32)
    }

    #[test]
    fn twenty_samples_use_sixth_and_fifteenth() {
        let x: Vec<f64> = (1..=20).rev().map(f64::from).collect();
        let s = median_ci(&x, 0.95).unwrap();
        assert_eq!(s.median, 10.5);
        assert_eq!((s.low, s.high), (6.0, 15.0));
        assert!(coverage(20, 6) >= 0.95);
        assert!(coverage(20, 7) < 0.95);
    }

    #[test]
    fn interval_choice_matches_direct_coverage() {
        for n in 1..=60u64 {
            let x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
            let s = median_ci(&x, 0.95).unwrap();
            let j = s.low as u64;
            assert_eq!(s.high as u64, n + 1 - j);
            if j > 1 || coverage(n, 1) >= 0.95 {
                assert!(coverage(n, j) >= 0.95, "n={n} j={j}");
                assert!(j == n / 2 || coverage(n, j + 1) < 0.95, "n={n} j={j}");
            }
            assert!(s.low <= s.median && s.median <= s.high);
        }
    }

    #[test]
    fn small_and_bad_input() {
        assert_eq!(median_ci(&[3.0], 0.95).unwrap(), MedianCi { median: 3.0, low: 3.0, high: 3.0 });
        assert!(median_ci(&[], 0.95).is_none());
        assert!(median_ci(&[1.0, f64::NAN], 0.95).is_none());
    }

    #[test]
    fn single_rank_efficiency_is_one() {
        let cfg = BenchConfig {
            params: HeatParams { n: [8; 3], nt: 2, ..HeatParams::default() },
            grid: GridOptions::default(),
            schedule: Schedule::Sequential,
            ranks: vec![2, 1],
            samples: 3,
            timeout: Duration::from_secs(10),
        };
        let rows = run(&cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.ranks).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(rows[0].efficiency, 1.0);
        let mut out = Vec::new();
        write_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("1,") && text.lines().nth(1).unwrap().ends_with(",1.000000"));
    }
}

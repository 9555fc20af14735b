//! Wall-clock measurement helpers for the scaling benchmarks.

use std::time::Instant;

use serde::Serialize;

/// One benchmark measurement.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub n: usize,
    pub variant: String,
    pub median_seconds: f64,
    pub repeats: usize,
}

/// Median wall time over `repeats` runs after `warmup` unmeasured runs.
pub fn time_median<F: FnMut()>(mut f: F, repeats: usize, warmup: usize) -> f64 {
    assert!(repeats >= 1);
    for _ in 0..warmup {
        f();
    }
    let mut times: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut times)
}

/// Per-closure samples over `rounds` round-robin passes, after one warmup
/// pass. Interleaving spreads machine-noise windows across every measured
/// point instead of concentrating them on whichever point was running.
pub fn time_round_robin(fns: &mut [Box<dyn FnMut() + '_>], rounds: usize) -> Vec<Vec<f64>> {
    assert!(rounds >= 1);
    for f in fns.iter_mut() {
        f();
    }
    let mut samples = vec![Vec::with_capacity(rounds); fns.len()];
    for _ in 0..rounds {
        for (i, f) in fns.iter_mut().enumerate() {
            let start = Instant::now();
            f();
            samples[i].push(start.elapsed().as_secs_f64());
        }
    }
    samples
}

/// Smallest sample per point: the usual low-noise estimate of uncontended
/// cost on a shared machine.
pub fn min_times(samples: &[Vec<f64>]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect()
}

fn median(times: &mut [f64]) -> f64 {
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2);
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in logs {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

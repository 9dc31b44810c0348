//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use wsls::GoodSpec;

/// Stationary distribution of the M/M/c/k chain from the global balance
/// equations `πQ = 0, Σπ = 1`, solved densely with partial pivoting.
pub fn balance_solve(arrival_rate: f64, spec: &GoodSpec) -> Vec<f64> {
    let k = spec.buffer as usize;
    let c = spec.processors as usize;
    let rate = spec.mu / c as f64;
    let n = k + 1;
    let mut q = vec![vec![0.0; n]; n];
    for j in 0..n {
        if j < k {
            q[j][j + 1] = arrival_rate;
        }
        if j > 0 {
            q[j][j - 1] = j.min(c) as f64 * rate;
        }
        q[j][j] = -q[j].iter().sum::<f64>();
    }
    // Rows of A are the columns of Q; the last equation is replaced by Σπ = 1.
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| q[j][i]).collect()).collect();
    let mut b = vec![0.0; n];
    a[n - 1] = vec![1.0; n];
    b[n - 1] = 1.0;
    gauss_solve(a, b)
}

pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| a[row][j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Monte Carlo estimate with a batch-means confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.mean).abs() <= self.half_width
    }
}

/// Two-sided 99% quantile of Student's t with 99 degrees of freedom.
const T99_DF99: f64 = 2.6264;

/// Fraction of requests to one FCFS M/M/c/k queue that are lost or whose
/// `2·d + sojourn` exceeds `timeout`. Consecutive outcomes are correlated,
/// so the interval comes from 100 batch means rather than a binomial bound.
pub fn single_queue_failure(spec: &GoodSpec, arrival_rate: f64, timeout: f64, requests: usize, seed: u64) -> Estimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter = Exp::new(arrival_rate).unwrap();
    let service = Exp::new(spec.mu / spec.processors as f64).unwrap();
    let c = spec.processors as usize;
    let k = spec.buffer as usize;
    // Departure instants of requests still in the system.
    let mut in_system: BinaryHeap<Reverse<OrdF64>> = BinaryHeap::new();
    // Instant each processor frees up.
    let mut free: BinaryHeap<Reverse<OrdF64>> = (0..c).map(|_| Reverse(OrdF64(0.0))).collect();
    let mut now = 0.0;
    let warmup = requests / 20;
    let batches = 100;
    let per_batch = requests / batches;
    let mut batch_means = Vec::with_capacity(batches);
    let mut fails = 0usize;
    let mut count = 0usize;
    for idx in 0..warmup + per_batch * batches {
        now += inter.sample(&mut rng);
        while in_system.peek().is_some_and(|Reverse(OrdF64(d))| *d <= now) {
            in_system.pop();
        }
        let failed = if in_system.len() >= k {
            true
        } else {
            let Reverse(OrdF64(f)) = free.pop().unwrap();
            let start = f.max(now);
            let done = start + service.sample(&mut rng);
            free.push(Reverse(OrdF64(done)));
            in_system.push(Reverse(OrdF64(done)));
            2.0 * spec.delay + (done - now) > timeout
        };
        if idx < warmup {
            continue;
        }
        fails += failed as usize;
        count += 1;
        if count == per_batch {
            batch_means.push(fails as f64 / count as f64);
            fails = 0;
            count = 0;
        }
    }
    mean_ci(&batch_means)
}

pub fn mean_ci(samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate {
        mean,
        half_width: T99_DF99 * (var / n).sqrt(),
    }
}

/// Sample mean of `Erlang(m, rate) > t` indicators.
pub fn erlang_tail_mc(m: u32, rate: f64, t: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = Exp::new(rate).unwrap();
    let hits = (0..draws)
        .filter(|_| (0..m).map(|_| e.sample(&mut rng)).sum::<f64>() > t)
        .count();
    hits as f64 / draws as f64
}

/// `P(Erlang(m, rate) > t) = Σ_{j<m} e^{-rt} (rt)^j / j!`, summed directly.
pub fn erlang_tail_series(m: u32, rate: f64, t: f64) -> f64 {
    let x = rate * t;
    let mut term = (-x).exp();
    let mut sum = 0.0;
    for j in 0..m {
        if j > 0 {
            term *= x / j as f64;
        }
        sum += term;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn random_point<R: Rng>(rng: &mut R) -> (GoodSpec, f64) {
    let c = rng.gen_range(1..=4u32);
    let k = rng.gen_range(c..=30u32);
    let mu = rng.gen_range(10.0..500.0);
    let load = rng.gen_range(0.05..2.5);
    (GoodSpec::new(mu, c, k, 0.01), load * mu)
}

/// Mean over the trailing `fraction` of samples.
pub fn tail(series: &[f64], fraction: f64) -> f64 {
    wsls::metrics::tail_mean(series, fraction).unwrap()
}

//! Equalized-quality distributions and the tolerance allocations that make a
//! WSLS population settle on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queueing::ServerModel;

/// Population split where every used good fails with the same probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EqualizedDistribution {
    pub n_star: Vec<f64>,
    /// Common failure probability on the used goods.
    pub y: f64,
    pub used: Vec<bool>,
}

impl EqualizedDistribution {
    pub fn n_min(&self) -> f64 {
        self.n_star.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.n_star.iter().enumerate() {
            if v < self.n_star[best] {
                best = i;
            }
        }
        best
    }
}

const MONOTONE_SAMPLES: usize = 256;

fn assert_monotone(server: &ServerModel, idx: usize, n_users: f64, lambda_u: f64) -> Result<()> {
    let mut prev = server.p_fail(0.0);
    for s in 1..=MONOTONE_SAMPLES {
        let n = n_users * s as f64 / MONOTONE_SAMPLES as f64;
        let p = server.p_fail(n * lambda_u);
        if p < prev - 1e-12 {
            return Err(Error::Model(format!(
                "failure probability of good {idx} decreases near n = {n:.3} ({prev} -> {p})"
            )));
        }
        prev = p;
    }
    Ok(())
}

/// Largest load `n ∈ [0, cap]` with `P(n) <= y`; zero if even an idle good
/// exceeds `y`.
fn load_at_level(server: &ServerModel, lambda_u: f64, cap: f64, y: f64) -> f64 {
    let p = |n: f64| server.p_fail(n * lambda_u);
    if p(0.0) > y {
        return 0.0;
    }
    if p(cap) <= y {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return lo;
        }
        if p(mid) <= y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Water-filling on the common failure level `y`: each good takes the load
/// at which its failure probability reaches `y`, and `y` is bisected until
/// the loads add up to the population.
pub fn solve_equalized(servers: &[ServerModel], n_users: f64, lambda_u: f64) -> Result<EqualizedDistribution> {
    if servers.is_empty() {
        return Err(Error::param("no goods"));
    }
    if !(n_users > 0.0) {
        return Err(Error::param(format!("population must be positive, got {n_users}")));
    }
    if !(lambda_u > 0.0) {
        return Err(Error::param(format!("per-user rate must be positive, got {lambda_u}")));
    }
    for (i, s) in servers.iter().enumerate() {
        assert_monotone(s, i, n_users, lambda_u)?;
    }
    let loads = |y: f64| -> Vec<f64> {
        servers
            .iter()
            .map(|s| load_at_level(s, lambda_u, n_users, y))
            .collect()
    };
    let mut lo = servers.iter().map(|s| s.p_fail(0.0)).fold(f64::INFINITY, f64::min);
    let mut hi = servers
        .iter()
        .map(|s| s.p_fail(n_users * lambda_u))
        .fold(0.0, f64::max);
    if loads(hi).iter().sum::<f64>() < n_users * (1.0 - 1e-12) {
        return Err(Error::numerical("cannot bracket the equalized level", hi));
    }
    while hi > lo {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if loads(mid).iter().sum::<f64>() < n_users {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut n_star = loads(hi);
    let total: f64 = n_star.iter().sum();
    if (total - n_users).abs() > 1e-6 * n_users {
        return Err(Error::numerical("equalized loads do not sum to the population", total - n_users));
    }
    // Fold the rounding remainder into the largest good.
    let big = n_star
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > n_star[b] { i } else { b });
    n_star[big] += n_users - total;
    let used: Vec<bool> = n_star.iter().map(|&v| v > 0.0).collect();
    let levels: Vec<f64> = servers
        .iter()
        .zip(&n_star)
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|((s, &n), _)| s.p_fail(n * lambda_u))
        .collect();
    let y = levels.iter().sum::<f64>() / levels.len() as f64;
    Ok(EqualizedDistribution { n_star, y, used })
}

/// Largest spread of failure probabilities over the used goods.
pub fn equalization_gap(servers: &[ServerModel], dist: &EqualizedDistribution, lambda_u: f64) -> f64 {
    let ps: Vec<f64> = servers
        .iter()
        .zip(&dist.n_star)
        .zip(&dist.used)
        .filter(|(_, &u)| u)
        .map(|((s, &n), _)| s.p_fail(n * lambda_u))
        .collect();
    let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Tolerance shares `T_i / Σ_j T_j` for every type such that the types
/// together occupy `n_star`. Returns the solution where every type uses the
/// same shares `n*_i / N_u`.
pub fn tolerance_for_distribution(n_star: &[f64], type_sizes: &[f64]) -> Result<Vec<Vec<f64>>> {
    if let Some((i, v)) = n_star.iter().enumerate().find(|(_, &v)| !(v >= 0.0)) {
        return Err(Error::param(format!("requested occupancy of good {i} is {v}")));
    }
    if type_sizes.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::param("type sizes must be >= 0"));
    }
    let total: f64 = n_star.iter().sum();
    let pop: f64 = type_sizes.iter().sum();
    if !(total > 0.0) || (total - pop).abs() > 1e-9 * pop.max(1.0) {
        return Err(Error::param(format!(
            "distribution holds {total} users but the types hold {pop}"
        )));
    }
    let shares: Vec<f64> = n_star.iter().map(|v| v / total).collect();
    Ok(vec![shares; type_sizes.len()])
}

/// Largest `|Σ_k N_k·s_ik - n*_i|` relative to the population.
pub fn allocation_residual(n_star: &[f64], type_sizes: &[f64], shares: &[Vec<f64>]) -> Result<f64> {
    if shares.len() != type_sizes.len() || shares.iter().any(|s| s.len() != n_star.len()) {
        return Err(Error::param("share matrix does not match goods and types"));
    }
    let pop: f64 = type_sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for (i, &target) in n_star.iter().enumerate() {
        let got: f64 = type_sizes.iter().zip(shares).map(|(n, s)| n * s[i]).sum();
        worst = worst.max((got - target).abs());
    }
    Ok(worst / pop)
}

/// Integer tolerances reproducing `shares` to within `rel_tol` per component.
///
/// Tries scales `S = 1..=max_scale`, rounding `S·s_i` with a floor of 1 on
/// positive shares, and returns the first vector whose normalized shares are
/// all within `rel_tol` of the request. Exact-zero shares map to 0.
pub fn integerize_shares(shares: &[f64], max_scale: u32, rel_tol: f64) -> Result<Vec<u32>> {
    if shares.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::param("shares must be >= 0"));
    }
    let sum: f64 = shares.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::param("shares are all zero"));
    }
    let norm: Vec<f64> = shares.iter().map(|s| s / sum).collect();
    for scale in 1..=max_scale {
        let t: Vec<u32> = norm
            .iter()
            .map(|&s| if s == 0.0 { 0 } else { ((s * scale as f64).round() as u32).max(1) })
            .collect();
        let total: u32 = t.iter().sum();
        let ok = t
            .iter()
            .zip(&norm)
            .all(|(&ti, &s)| s == 0.0 || ((ti as f64 / total as f64) - s).abs() <= rel_tol * s);
        if ok {
            return Ok(t);
        }
    }
    Err(Error::numerical(
        format!("no scale up to {max_scale} reproduces the shares within {rel_tol}"),
        rel_tol,
    ))
}

/// Critical selective fraction `(N_u - N_g·n*_min) / N_u`, clamped to `[0, 1]`.
pub fn critical_selectivity(n_star: &[f64], n_users: f64, n_goods: usize) -> f64 {
    let n_min = n_star.iter().copied().fold(f64::INFINITY, f64::min);
    ((n_users - n_goods as f64 * n_min) / n_users).clamp(0.0, 1.0)
}

/// Shares of the selective type in a hybrid population where a fraction
/// `1 - gamma` spreads evenly over all goods.
pub fn hybrid_tolerances(n_star: &[f64], n_users: f64, n_goods: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!("selective fraction must be in (0, 1], got {gamma}")));
    }
    if n_star.len() != n_goods {
        return Err(Error::param(format!("{} occupancies for {n_goods} goods", n_star.len())));
    }
    let spread = (1.0 - gamma) * n_users / n_goods as f64;
    let scale = 1e-12 * n_users;
    let mut shares = Vec::with_capacity(n_goods);
    for &n in n_star {
        let excess = n - spread;
        if excess < -scale {
            let gamma_c = critical_selectivity(n_star, n_users, n_goods);
            return Err(Error::Infeasible {
                message: format!(
                    "selective fraction {gamma} is below the critical value {gamma_c}"
                ),
                gamma_critical: Some(gamma_c),
            });
        }
        shares.push(if excess.abs() <= scale { 0.0 } else { excess / (gamma * n_users) });
    }
    Ok(shares)
}

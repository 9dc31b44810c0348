//! Analytic failure model of one good: an M/M/c/k queue reached through a
//! deterministic network delay. A request fails when it is dropped at a full
//! buffer or when its round trip exceeds the user's timeout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayModel, GoodSpec};

/// Probabilities that a single request fails, split by cause.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub p_loss: f64,
    /// Excessive delay, conditional on the request being accepted.
    pub p_delay: f64,
    pub p_fail: f64,
}

impl FailureBreakdown {
    pub fn compose(p_loss: f64, p_delay: f64) -> Self {
        FailureBreakdown {
            p_loss,
            p_delay,
            p_fail: p_loss + (1.0 - p_loss) * p_delay,
        }
    }

    /// Success probability `1 - p_fail`.
    pub fn quality(&self) -> f64 {
        1.0 - self.p_fail
    }
}

fn check_rate(arrival_rate: f64) -> Result<()> {
    if arrival_rate >= 0.0 && arrival_rate.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("arrival rate must be >= 0, got {arrival_rate}")))
    }
}

/// Stationary distribution `π_0..π_k` of the M/M/c/k birth-death chain.
pub fn stationary_distribution(arrival_rate: f64, spec: &GoodSpec) -> Result<Vec<f64>> {
    spec.check()?;
    check_rate(arrival_rate)?;
    let k = spec.buffer as usize;
    let mut pi = vec![0.0; k + 1];
    if arrival_rate == 0.0 {
        pi[0] = 1.0;
        return Ok(pi);
    }
    // Log-space products keep large offered loads from overflowing.
    let rate = spec.per_processor_rate();
    let c = spec.processors as usize;
    let mut logs = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    logs.push(acc);
    for j in 1..=k {
        acc += (arrival_rate / (j.min(c) as f64 * rate)).ln();
        logs.push(acc);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, l) in pi.iter_mut().zip(&logs) {
        *p = (l - top).exp();
        total += *p;
    }
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Probability that an arriving request finds the buffer full.
pub fn loss_probability(arrival_rate: f64, spec: &GoodSpec) -> Result<f64> {
    spec.check()?;
    check_rate(arrival_rate)?;
    if arrival_rate == 0.0 {
        return Ok(0.0);
    }
    if spec.processors == 1 {
        let k = spec.buffer as i32;
        let a = arrival_rate / spec.mu;
        if (a - 1.0).abs() < 1e-9 {
            return Ok(1.0 / (k as f64 + 1.0));
        }
        // (1-a) a^k / (1-a^{k+1}), rewritten for a > 1 to avoid overflow.
        return Ok(if a < 1.0 {
            (1.0 - a) * a.powi(k) / (1.0 - a.powi(k + 1))
        } else {
            let b = 1.0 / a;
            (1.0 - b) / (1.0 - b.powi(k + 1))
        });
    }
    let pi = stationary_distribution(arrival_rate, spec)?;
    Ok(pi[spec.buffer as usize])
}

/// `ln(e^a + e^b)`.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Cumulative Erlang tails: entry `m-1` is `P(Erlang(m, rate) > t)` for
/// `m = 1..=stages`.
fn erlang_tails(stages: usize, rate: f64, t: f64) -> Vec<f64> {
    if t <= 0.0 {
        return vec![1.0; stages];
    }
    let x = rate * t;
    let lx = x.ln();
    let mut log_term = -x;
    let mut log_sum = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(stages);
    for j in 0..stages {
        if j > 0 {
            log_term += lx - (j as f64).ln();
        }
        log_sum = log_add(log_sum, log_term);
        out.push(log_sum.exp().min(1.0));
    }
    out
}

/// `P(Erlang(m, rate) > t)`, the probability that `m` exponential phases of
/// rate `rate` take longer than `t`.
pub fn erlang_tail(m: u32, rate: f64, t: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("Erlang stage count must be >= 1"));
    }
    if !(rate > 0.0) {
        return Err(Error::param(format!("Erlang rate must be positive, got {rate}")));
    }
    Ok(*erlang_tails(m as usize, rate, t).last().unwrap())
}

/// `P(W + S > t)` for `W ~ Erlang(m, fast)` and `S ~ Exp(slow)`, `fast > slow`.
fn wait_plus_service_tail(m: usize, fast: f64, slow: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let gap = fast - slow;
    let wait_tail = *erlang_tails(m, fast, t).last().unwrap();
    let gap_cdf = 1.0 - *erlang_tails(m, gap, t).last().unwrap();
    if gap_cdf <= 0.0 {
        return wait_tail.min(1.0);
    }
    let log_mix = -slow * t + m as f64 * (fast / gap).ln() + gap_cdf.ln();
    (wait_tail + log_mix.exp()).min(1.0)
}

/// Probability that an accepted request returns after `timeout`.
///
/// The round trip is `2·d` plus the server-side delay selected by `model`.
/// For one processor an arrival that finds `j` requests present waits for
/// `j + 1` exponential phases; with `c > 1` processors an arrival finding
/// `j >= c` waits `j - c + 1` phases at the pooled rate `mu` and is then
/// served at `mu / c`.
pub fn delay_exceedance(
    arrival_rate: f64,
    spec: &GoodSpec,
    timeout: f64,
    model: DelayModel,
) -> Result<f64> {
    if !(timeout > 0.0) {
        return Err(Error::param(format!("timeout must be positive, got {timeout}")));
    }
    let pi = stationary_distribution(arrival_rate, spec)?;
    let slack = timeout - 2.0 * spec.delay;
    if slack <= 0.0 {
        return Ok(1.0);
    }
    let k = spec.buffer as usize;
    let accepted = 1.0 - pi[k];
    if accepted <= 1e-15 {
        return Ok(1.0);
    }
    let rate = spec.per_processor_rate();
    let c = spec.processors as usize;
    if model == DelayModel::ServiceOnly {
        return Ok((-rate * slack).exp());
    }
    let p = if c == 1 {
        let tails = erlang_tails(k, rate, slack);
        pi[..k].iter().zip(&tails).map(|(p, t)| p * t).sum::<f64>()
    } else {
        let service = (-rate * slack).exp();
        (0..k)
            .map(|j| {
                let tail = if j < c {
                    service
                } else {
                    wait_plus_service_tail(j - c + 1, spec.mu, rate, slack)
                };
                pi[j] * tail
            })
            .sum::<f64>()
    };
    Ok((p / accepted).clamp(0.0, 1.0))
}

/// Failure breakdown of a good used by `n_users` users each issuing
/// `per_user_rate` requests per second. `n_users` may be fractional.
pub fn failure_probability(
    n_users: f64,
    per_user_rate: f64,
    spec: &GoodSpec,
    timeout: f64,
    model: DelayModel,
) -> Result<FailureBreakdown> {
    if !(n_users >= 0.0) {
        return Err(Error::param(format!("user count must be >= 0, got {n_users}")));
    }
    let rate = n_users * per_user_rate;
    let p_loss = loss_probability(rate, spec)?;
    let p_delay = delay_exceedance(rate, spec, timeout, model)?;
    Ok(FailureBreakdown::compose(p_loss, p_delay))
}

/// A good bound to its timeout and delay model, evaluated as a function of
/// the offered request rate. Parameters are validated once at construction.
#[derive(Debug, Clone)]
pub struct ServerModel {
    pub spec: GoodSpec,
    pub timeout: f64,
    pub model: DelayModel,
}

impl ServerModel {
    pub fn new(spec: GoodSpec, timeout: f64, model: DelayModel) -> Result<Self> {
        spec.check()?;
        if !(timeout > 0.0) {
            return Err(Error::param(format!("timeout must be positive, got {timeout}")));
        }
        Ok(ServerModel { spec, timeout, model })
    }

    pub fn breakdown(&self, arrival_rate: f64) -> FailureBreakdown {
        let rate = arrival_rate.max(0.0);
        let p_loss = loss_probability(rate, &self.spec).expect("validated good");
        let p_delay =
            delay_exceedance(rate, &self.spec, self.timeout, self.model).expect("validated good");
        FailureBreakdown::compose(p_loss, p_delay)
    }

    pub fn p_fail(&self, arrival_rate: f64) -> f64 {
        self.breakdown(arrival_rate).p_fail
    }
}

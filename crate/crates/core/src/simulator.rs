//! Agent-based discrete-event simulation of WSLS server selection.
//!
//! Users issue requests as independent Poisson processes. The superposition
//! is generated as a single stream of rate `N_u·λ_u` with the issuing user
//! drawn uniformly, which is equivalent and leaves one pending issue event.
//!
//! Servers are FCFS with `c` processors and room for `k` requests. Network
//! delays are deterministic and identical for every user of a server, so
//! requests reach a server in the order they were issued; the queue is
//! therefore advanced when a request is issued, with its service time drawn
//! on arrival (Lindley recursion), and only the outcome is scheduled.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayModel, LossNotification, ScenarioConfig, ShiftPolicy};

/// Per-user state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub type_id: usize,
    pub current_good: usize,
    /// Failures at the current good since arriving there.
    pub fail_count: u32,
    /// Requests resolved during the current stay.
    pub attempts: u32,
    /// Estimated failure probability per good.
    pub x: Vec<f64>,
    pub t: Vec<u32>,
    /// Bumped on every shift; outcomes of older requests are ignored.
    pub epoch: u32,
}

impl AgentState {
    pub fn new(type_id: usize, current_good: usize, t: Vec<u32>, x0: f64) -> Self {
        let n = t.len();
        AgentState {
            type_id,
            current_good,
            fail_count: 0,
            attempts: 0,
            x: vec![x0; n],
            t,
            epoch: 0,
        }
    }
}

/// Updates the failure estimate of `good` after a completed stay and moves
/// one unit of tolerance from `good` to the good with the lowest estimate
/// when that estimate is strictly lower and `good` keeps at least one unit.
pub fn adapt_step(agent: &mut AgentState, good: usize, beta: f64) -> Result<()> {
    let tol = agent.t[good];
    if tol == 0 || agent.attempts < tol {
        return Err(Error::Internal(format!(
            "adaptation with {} attempts for tolerance {tol}",
            agent.attempts
        )));
    }
    let sample = tol as f64 / agent.attempts as f64;
    agent.x[good] = (1.0 - beta) * agent.x[good] + beta * sample;
    let mut best = 0;
    for (j, &v) in agent.x.iter().enumerate() {
        if v < agent.x[best] {
            best = j;
        }
    }
    if agent.x[best] < agent.x[good] && agent.t[good] > 1 {
        agent.t[good] -= 1;
        agent.t[best] += 1;
    }
    Ok(())
}

/// Picks the next good for an agent leaving `agent.current_good`, or `None`
/// when no other good has positive tolerance.
///
/// Under the uniform policy a draw that lands on a zero-tolerance good is
/// bounced on immediately, uniformly among the goods other than that one.
pub fn shift_target<R: Rng + ?Sized>(agent: &AgentState, policy: ShiftPolicy, rng: &mut R) -> Option<usize> {
    let n = agent.t.len();
    let cur = agent.current_good;
    if !(0..n).any(|j| j != cur && agent.t[j] > 0) {
        return None;
    }
    match policy {
        ShiftPolicy::UniformRandomOther => {
            let mut from = cur;
            loop {
                let mut pick = rng.gen_range(0..n - 1);
                if pick >= from {
                    pick += 1;
                }
                if agent.t[pick] > 0 {
                    return Some(pick);
                }
                from = pick;
            }
        }
        ShiftPolicy::ProportionalToTolerance => {
            let total: u64 = (0..n).filter(|&j| j != cur).map(|j| agent.t[j] as u64).sum();
            let mut r = rng.gen_range(0..total);
            for j in (0..n).filter(|&j| j != cur) {
                let w = agent.t[j] as u64;
                if r < w {
                    return Some(j);
                }
                r -= w;
            }
            unreachable!("weights cover the draw")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Next request of the aggregate stream. Stale generations are dropped.
    RequestIssued { generation: u64 },
    /// Response back in time.
    ResponseReceived { agent: u32, epoch: u32, good: u32 },
    /// Round trip exceeded the timeout; the user gives up at issue + τ.
    TimeoutFired { agent: u32, epoch: u32, good: u32 },
    /// Request dropped at a full buffer.
    LossNotified { agent: u32, epoch: u32, good: u32 },
    WorkloadChange { rho_bits: u64 },
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event {
            time: Time(time),
            seq: self.seq,
            kind,
        });
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

struct Server {
    per_processor_rate: f64,
    buffer: usize,
    delay: f64,
    /// Departure times of requests in the system.
    departures: BinaryHeap<Reverse<Time>>,
    /// Instant each processor becomes free.
    free_at: BinaryHeap<Reverse<Time>>,
    service: Exp<f64>,
}

enum Admission {
    Lost,
    Accepted { sojourn: f64, service: f64 },
}

impl Server {
    fn admit<R: Rng>(&mut self, arrival: f64, rng: &mut R) -> Admission {
        while let Some(Reverse(Time(t))) = self.departures.peek() {
            if *t <= arrival {
                self.departures.pop();
            } else {
                break;
            }
        }
        if self.departures.len() >= self.buffer {
            return Admission::Lost;
        }
        let Reverse(Time(free)) = self.free_at.pop().expect("at least one processor");
        let service = self.service.sample(rng);
        let done = free.max(arrival) + service;
        self.free_at.push(Reverse(Time(done)));
        self.departures.push(Reverse(Time(done)));
        Admission::Accepted {
            sojourn: done - arrival,
            service,
        }
    }
}

/// Aggregate counters over a whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub requests: u64,
    pub failures: u64,
    pub losses: u64,
    pub timeouts: u64,
    pub shifts: u64,
    /// Completed stays per good.
    pub sojourns: Vec<u64>,
    /// Requests resolved during completed stays, per good.
    pub sojourn_requests: Vec<u64>,
    /// Resolved requests per good.
    pub resolved: Vec<u64>,
    /// Failed requests per good.
    pub failed: Vec<u64>,
}

/// Sampled output of one simulation run. Series are indexed `[good][sample]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub occupancy: Vec<Vec<u32>>,
    /// Failed over resolved requests in each sampling window; NaN when
    /// nothing resolved at that good.
    pub good_failure: Vec<Vec<f64>>,
    pub system_failure: Vec<f64>,
    /// Mean tolerance of adaptive users per good; empty without adaptive types.
    pub mean_tolerance: Vec<Vec<f64>>,
    /// Smallest and largest tolerance sum over adaptive users at each sample.
    pub tolerance_sum_min: Vec<u32>,
    pub tolerance_sum_max: Vec<u32>,
    pub totals: RunTotals,
}

impl RunRecord {
    pub fn n_goods(&self) -> usize {
        self.occupancy.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn occupancy_f64(&self, good: usize) -> Vec<f64> {
        self.occupancy[good].iter().map(|&v| v as f64).collect()
    }

    /// Sample indices with `from <= t < to`.
    pub fn window(&self, from: f64, to: f64) -> std::ops::Range<usize> {
        let a = self.times.partition_point(|&t| t < from);
        let b = self.times.partition_point(|&t| t < to);
        a..b
    }
}

struct Window {
    resolved: Vec<u64>,
    failed: Vec<u64>,
}

impl Window {
    fn new(n: usize) -> Self {
        Window {
            resolved: vec![0; n],
            failed: vec![0; n],
        }
    }

    fn clear(&mut self) {
        self.resolved.iter_mut().for_each(|v| *v = 0);
        self.failed.iter_mut().for_each(|v| *v = 0);
    }
}

/// Runs the scenario to its horizon. Deterministic in `(cfg, cfg.seed)`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunRecord> {
    let cfg = cfg.clone().validated()?;
    let n_goods = cfg.n_goods();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut servers: Vec<Server> = cfg
        .goods
        .iter()
        .map(|g| {
            let rate = g.per_processor_rate();
            Server {
                per_processor_rate: rate,
                buffer: g.buffer as usize,
                delay: g.delay,
                departures: BinaryHeap::new(),
                free_at: (0..g.processors).map(|_| Reverse(Time(0.0))).collect(),
                service: Exp::new(rate).expect("positive service rate"),
            }
        })
        .collect();
    debug_assert!(servers.iter().all(|s| s.per_processor_rate > 0.0));

    // Agents are numbered type by type and placed uniformly at random.
    let mut agents: Vec<AgentState> = Vec::with_capacity(cfg.n_users);
    let mut learning = Vec::with_capacity(cfg.n_users);
    let mut occupancy = vec![0u32; n_goods];
    for (k, ty) in cfg.types.iter().enumerate() {
        let t0 = ty.initial_tolerance(n_goods).0;
        let x0 = ty.adaptive.map_or(0.0, |a| a.x0);
        for _ in 0..ty.size {
            let start = rng.gen_range(0..n_goods);
            let mut agent = AgentState::new(k, start, t0.clone(), x0);
            if agent.t[start] == 0 {
                if let Some(g) = shift_target(&agent, ShiftPolicy::UniformRandomOther, &mut rng) {
                    agent.current_good = g;
                }
            }
            occupancy[agent.current_good] += 1;
            agents.push(agent);
            learning.push(ty.adaptive);
        }
    }
    let any_adaptive = learning.iter().any(Option::is_some);

    let mut queue = EventQueue::default();
    let mut rho = cfg.schedule.rho_at(0.0);
    let mut generation = 0u64;
    let mut issue_rate = cfg.n_users as f64 * cfg.lambda_u(rho);
    if issue_rate > 0.0 {
        let gap = Exp::new(issue_rate).unwrap().sample(&mut rng);
        queue.push(gap, EventKind::RequestIssued { generation });
    }
    for b in cfg.schedule.boundaries(cfg.horizon) {
        queue.push(
            b,
            EventKind::WorkloadChange {
                rho_bits: cfg.schedule.rho_at(b).to_bits(),
            },
        );
    }
    let n_samples = (cfg.horizon / cfg.sampling_interval + 1e-9).floor() as u64;
    for s in 1..=n_samples {
        queue.push(s as f64 * cfg.sampling_interval, EventKind::Sample);
    }

    let mut rec = RunRecord {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        times: Vec::new(),
        rho: Vec::new(),
        occupancy: vec![Vec::new(); n_goods],
        good_failure: vec![Vec::new(); n_goods],
        system_failure: Vec::new(),
        mean_tolerance: if any_adaptive { vec![Vec::new(); n_goods] } else { Vec::new() },
        tolerance_sum_min: Vec::new(),
        tolerance_sum_max: Vec::new(),
        totals: RunTotals {
            sojourns: vec![0; n_goods],
            sojourn_requests: vec![0; n_goods],
            resolved: vec![0; n_goods],
            failed: vec![0; n_goods],
            ..RunTotals::default()
        },
    };
    let mut window = Window::new(n_goods);
    let mut now = 0.0f64;
    let mut stuck_logged = false;

    while let Some(ev) = queue.pop() {
        let t = ev.time.0;
        if t > cfg.horizon {
            break;
        }
        if t < now {
            return Err(Error::Internal(format!("event at {t} popped after {now}")));
        }
        now = t;
        match ev.kind {
            EventKind::RequestIssued { generation: g } => {
                if g != generation {
                    continue;
                }
                let id = rng.gen_range(0..agents.len());
                let agent = &agents[id];
                let good = agent.current_good;
                let server = &mut servers[good];
                let d = server.delay;
                let tag = (id as u32, agent.epoch, good as u32);
                rec.totals.requests += 1;
                match server.admit(now + d, &mut rng) {
                    Admission::Lost => {
                        let notice = match cfg.loss_notification {
                            LossNotification::RoundTrip => 2.0 * d,
                            LossNotification::Immediate => d,
                        };
                        queue.push(
                            now + notice.min(cfg.timeout),
                            EventKind::LossNotified {
                                agent: tag.0,
                                epoch: tag.1,
                                good: tag.2,
                            },
                        );
                    }
                    Admission::Accepted { sojourn, service } => {
                        let counted = match cfg.delay_model {
                            DelayModel::Sojourn => sojourn,
                            DelayModel::ServiceOnly => service,
                        };
                        if 2.0 * d + counted > cfg.timeout {
                            queue.push(
                                now + cfg.timeout,
                                EventKind::TimeoutFired {
                                    agent: tag.0,
                                    epoch: tag.1,
                                    good: tag.2,
                                },
                            );
                        } else {
                            queue.push(
                                now + 2.0 * d + sojourn,
                                EventKind::ResponseReceived {
                                    agent: tag.0,
                                    epoch: tag.1,
                                    good: tag.2,
                                },
                            );
                        }
                    }
                }
                let gap = Exp::new(issue_rate).unwrap().sample(&mut rng);
                queue.push(now + gap, EventKind::RequestIssued { generation });
            }
            EventKind::ResponseReceived { agent, epoch, good }
            | EventKind::TimeoutFired { agent, epoch, good }
            | EventKind::LossNotified { agent, epoch, good } => {
                let failed = !matches!(ev.kind, EventKind::ResponseReceived { .. });
                let good = good as usize;
                window.resolved[good] += 1;
                rec.totals.resolved[good] += 1;
                if failed {
                    window.failed[good] += 1;
                    rec.totals.failed[good] += 1;
                    rec.totals.failures += 1;
                    match ev.kind {
                        EventKind::LossNotified { .. } => rec.totals.losses += 1,
                        _ => rec.totals.timeouts += 1,
                    }
                }
                let a = &mut agents[agent as usize];
                if a.epoch != epoch {
                    continue;
                }
                a.attempts += 1;
                if !failed {
                    continue;
                }
                a.fail_count += 1;
                if a.fail_count < a.t[good] {
                    continue;
                }
                if let Some(l) = learning[agent as usize] {
                    adapt_step(a, good, l.beta)?;
                }
                rec.totals.sojourns[good] += 1;
                rec.totals.sojourn_requests[good] += a.attempts as u64;
                a.fail_count = 0;
                a.attempts = 0;
                a.epoch = a.epoch.wrapping_add(1);
                match shift_target(a, cfg.shift_policy, &mut rng) {
                    Some(next) => {
                        occupancy[good] -= 1;
                        occupancy[next] += 1;
                        a.current_good = next;
                        rec.totals.shifts += 1;
                    }
                    None => {
                        if !stuck_logged {
                            log::debug!("agent {agent} has no other usable good; staying");
                            stuck_logged = true;
                        }
                    }
                }
            }
            EventKind::WorkloadChange { rho_bits } => {
                rho = f64::from_bits(rho_bits);
                issue_rate = cfg.n_users as f64 * cfg.lambda_u(rho);
                generation += 1;
                if issue_rate > 0.0 {
                    let gap = Exp::new(issue_rate).unwrap().sample(&mut rng);
                    queue.push(now + gap, EventKind::RequestIssued { generation });
                }
            }
            EventKind::Sample => {
                rec.times.push(now);
                rec.rho.push(rho);
                let mut resolved = 0u64;
                let mut failed = 0u64;
                for i in 0..n_goods {
                    rec.occupancy[i].push(occupancy[i]);
                    let r = window.resolved[i];
                    let f = window.failed[i];
                    rec.good_failure[i].push(if r > 0 { f as f64 / r as f64 } else { f64::NAN });
                    resolved += r;
                    failed += f;
                }
                rec.system_failure
                    .push(if resolved > 0 { failed as f64 / resolved as f64 } else { f64::NAN });
                window.clear();
                if any_adaptive {
                    let mut sums = vec![0u64; n_goods];
                    let mut count = 0u64;
                    let (mut lo, mut hi) = (u32::MAX, 0u32);
                    for (a, l) in agents.iter().zip(&learning) {
                        if l.is_none() {
                            continue;
                        }
                        count += 1;
                        let mut s = 0u32;
                        for (acc, &t) in sums.iter_mut().zip(&a.t) {
                            *acc += t as u64;
                            s += t;
                        }
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                    for i in 0..n_goods {
                        rec.mean_tolerance[i].push(sums[i] as f64 / count as f64);
                    }
                    rec.tolerance_sum_min.push(lo);
                    rec.tolerance_sum_max.push(hi);
                }
            }
        }
    }
    Ok(rec)
}

//! Domain types shared by every analysis and simulation path: goods (servers),
//! population types, tolerance profiles, workload schedules and the scenario
//! that ties them together.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Static description of one common good, here a server reachable through
/// the shared base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodSpec {
    /// Aggregate service capacity in requests per second.
    pub mu: f64,
    /// Number of processors. Each serves at `mu / processors`.
    #[serde(default = "one")]
    pub processors: u32,
    /// Maximum number of requests in the system (queued plus in service).
    pub buffer: u32,
    /// One-way network delay in seconds.
    pub delay: f64,
}

fn one() -> u32 {
    1
}

impl GoodSpec {
    pub fn new(mu: f64, processors: u32, buffer: u32, delay: f64) -> Self {
        GoodSpec {
            mu,
            processors,
            buffer,
            delay,
        }
    }

    pub fn per_processor_rate(&self) -> f64 {
        self.mu / self.processors as f64
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!("mu must be positive, got {}", self.mu)));
        }
        if self.processors == 0 {
            return Err(Error::param("processor count must be at least 1"));
        }
        if self.buffer < self.processors {
            return Err(Error::param(format!(
                "buffer {} smaller than processor count {}",
                self.buffer, self.processors
            )));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::param(format!("delay must be >= 0, got {}", self.delay)));
        }
        Ok(())
    }
}

/// Number of failures a type accepts at each good before shifting.
/// A zero entry means the type never submits requests to that good.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ToleranceProfile(pub Vec<u32>);

impl ToleranceProfile {
    pub fn uniform(n_goods: usize, t: u32) -> Self {
        ToleranceProfile(vec![t; n_goods])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&t| t as u64).sum()
    }

    pub fn as_weights(&self) -> Vec<f64> {
        self.0.iter().map(|&t| t as f64).collect()
    }
}

/// Parameters of the per-agent tolerance learning rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub t0: u32,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    0.10
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            t0: 5,
            x0: 0.0,
            beta: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub size: usize,
    /// Fixed tolerance profile. Adaptive types start from `t0` on every good
    /// and may leave this empty.
    #[serde(default)]
    pub tolerance: ToleranceProfile,
    /// Present iff the type learns its tolerances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveConfig>,
}

impl TypeSpec {
    pub fn fixed(size: usize, tolerance: ToleranceProfile) -> Self {
        TypeSpec {
            size,
            tolerance,
            adaptive: None,
        }
    }

    pub fn adaptive(size: usize, learning: AdaptiveConfig) -> Self {
        TypeSpec {
            size,
            tolerance: ToleranceProfile::default(),
            adaptive: Some(learning),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        self.adaptive.is_some()
    }

    /// Tolerance vector in force at time zero.
    pub fn initial_tolerance(&self, n_goods: usize) -> ToleranceProfile {
        match &self.adaptive {
            Some(a) => ToleranceProfile::uniform(n_goods, a.t0),
            None => self.tolerance.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    pub rho: f64,
}

/// Piecewise-constant system workload. The last segment extends beyond its
/// nominal duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSchedule {
    pub segments: Vec<Segment>,
}

impl WorkloadSchedule {
    pub fn constant(rho: f64, duration: f64) -> Self {
        WorkloadSchedule {
            segments: vec![Segment { duration, rho }],
        }
    }

    pub fn rho_at(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for seg in &self.segments {
            end += seg.duration;
            if t < end {
                return seg.rho;
            }
        }
        self.segments.last().map_or(0.0, |s| s.rho)
    }

    /// Segment switch instants strictly inside `(0, horizon)`.
    pub fn boundaries(&self, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut end = 0.0;
        for seg in self.segments.iter().take(self.segments.len().saturating_sub(1)) {
            end += seg.duration;
            if end > 0.0 && end < horizon {
                out.push(end);
            }
        }
        out
    }

    /// `(start, end, rho)` of every segment, the last one clipped to `horizon`.
    pub fn spans(&self, horizon: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let last = i + 1 == self.segments.len();
            let end = if last { horizon } else { (start + seg.duration).min(horizon) };
            if end > start {
                out.push((start, end, seg.rho));
            }
            start += seg.duration;
            if start >= horizon {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPolicy {
    /// Next good drawn uniformly among the other goods.
    #[default]
    UniformRandomOther,
    /// Next good drawn with probability proportional to the agent's tolerance.
    ProportionalToTolerance,
}

/// Which part of the server-side delay counts against the timeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    /// Waiting plus service time.
    #[default]
    Sojourn,
    /// Service time of the request alone.
    ServiceOnly,
}

/// When a user learns that a request was dropped at a full buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossNotification {
    /// The rejection travels back: detected `2·d` after issue.
    #[default]
    RoundTrip,
    /// Detected the moment the request is dropped, `d` after issue.
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub goods: Vec<GoodSpec>,
    pub types: Vec<TypeSpec>,
    pub n_users: usize,
    /// Seconds.
    pub timeout: f64,
    pub schedule: WorkloadSchedule,
    #[serde(default)]
    pub shift_policy: ShiftPolicy,
    /// Seconds of simulated time.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampling")]
    pub sampling_interval: f64,
    #[serde(default)]
    pub delay_model: DelayModel,
    #[serde(default)]
    pub loss_notification: LossNotification,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_sampling() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

impl ScenarioConfig {
    /// The three-server reference system: capacities 100/200/400 req/s,
    /// single processor, buffer 10, one-way delays 10/20/30 ms, 100 ms timeout
    /// and 1000 users of a single type with tolerance `t` on every server.
    pub fn reference(rho: f64, t: u32, horizon: f64) -> Self {
        let goods = vec![
            GoodSpec::new(100.0, 1, 10, 0.010),
            GoodSpec::new(200.0, 1, 10, 0.020),
            GoodSpec::new(400.0, 1, 10, 0.030),
        ];
        ScenarioConfig {
            name: "reference".into(),
            types: vec![TypeSpec::fixed(1000, ToleranceProfile::uniform(goods.len(), t))],
            goods,
            n_users: 1000,
            timeout: 0.100,
            schedule: WorkloadSchedule::constant(rho, horizon),
            shift_policy: ShiftPolicy::UniformRandomOther,
            horizon,
            seed: 1,
            sampling_interval: 1.0,
            delay_model: DelayModel::Sojourn,
            loss_notification: LossNotification::RoundTrip,
        }
    }

    pub fn n_goods(&self) -> usize {
        self.goods.len()
    }

    pub fn total_capacity(&self) -> f64 {
        self.goods.iter().map(|g| g.mu).sum()
    }

    /// Per-user request rate giving system workload `rho`.
    pub fn lambda_u(&self, rho: f64) -> f64 {
        rho * self.total_capacity() / self.n_users as f64
    }

    pub fn type_sizes(&self) -> Vec<usize> {
        self.types.iter().map(|t| t.size).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Validates and returns an error carrying every hard violation.
    pub fn validated(self) -> Result<Self> {
        let errors: Vec<Violation> = validate(&self)
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .collect();
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidScenario(errors))
        }
    }
}

/// Checks every scenario invariant. Warnings flag legal but degenerate setups.
pub fn validate(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut err = |field: String, message: String| {
        out.push(Violation {
            field,
            message,
            severity: Severity::Error,
        })
    };

    let n_goods = cfg.goods.len();
    if n_goods == 0 {
        err("goods".into(), "at least one good is required".into());
    }
    for (i, g) in cfg.goods.iter().enumerate() {
        if let Err(e) = g.check() {
            err(format!("goods[{i}]"), e.to_string());
        }
    }
    if cfg.n_users == 0 {
        err("n_users".into(), "population must be non-empty".into());
    }
    if cfg.types.is_empty() {
        err("types".into(), "at least one population type is required".into());
    }
    let total: usize = cfg.types.iter().map(|t| t.size).sum();
    if total != cfg.n_users {
        err(
            "types[].size".into(),
            format!("type sizes sum to {total}, expected n_users = {}", cfg.n_users),
        );
    }
    for (k, ty) in cfg.types.iter().enumerate() {
        match &ty.adaptive {
            Some(a) => {
                if a.t0 == 0 {
                    err(format!("types[{k}].adaptive.t0"), "initial tolerance must be >= 1".into());
                }
                if !(0.0..=1.0).contains(&a.x0) {
                    err(format!("types[{k}].adaptive.x0"), format!("{} is not a probability", a.x0));
                }
                if !(a.beta > 0.0 && a.beta <= 1.0) {
                    err(format!("types[{k}].adaptive.beta"), format!("{} outside (0, 1]", a.beta));
                }
                if !ty.tolerance.is_empty() && ty.tolerance != ToleranceProfile::uniform(n_goods, a.t0) {
                    err(
                        format!("types[{k}].tolerance"),
                        "adaptive types start from t0 on every good".into(),
                    );
                }
            }
            None => {
                if ty.tolerance.len() != n_goods {
                    err(
                        format!("types[{k}].tolerance"),
                        format!("{} entries for {n_goods} goods", ty.tolerance.len()),
                    );
                } else if ty.size > 0 && ty.tolerance.total() == 0 {
                    err(
                        format!("types[{k}].tolerance"),
                        "type has zero tolerance on every good".into(),
                    );
                }
            }
        }
    }
    if !(cfg.timeout > 0.0 && cfg.timeout.is_finite()) {
        err("timeout".into(), format!("must be positive, got {}", cfg.timeout));
    }
    if cfg.schedule.segments.is_empty() {
        err("schedule.segments".into(), "at least one segment is required".into());
    }
    for (s, seg) in cfg.schedule.segments.iter().enumerate() {
        if !(seg.duration > 0.0 && seg.duration.is_finite()) {
            err(format!("schedule.segments[{s}].duration"), "must be positive".into());
        }
        if !(seg.rho >= 0.0 && seg.rho.is_finite()) {
            err(format!("schedule.segments[{s}].rho"), "must be >= 0".into());
        }
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        err("horizon".into(), "must be positive".into());
    }
    if !(cfg.sampling_interval > 0.0 && cfg.sampling_interval.is_finite()) {
        err("sampling_interval".into(), "must be positive".into());
    }

    for (i, g) in cfg.goods.iter().enumerate() {
        if cfg.timeout > 0.0 && 2.0 * g.delay >= cfg.timeout {
            out.push(Violation {
                field: format!("goods[{i}].delay"),
                message: format!("good {} unusable: 2·d >= timeout", i + 1),
                severity: Severity::Warning,
            });
        }
    }
    out
}

/// Occupancy matrix `n[i][k]`: users of type `k` on good `i`, goods-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    n_goods: usize,
    n_types: usize,
    data: Vec<f64>,
}

impl PopulationState {
    pub fn zeros(n_goods: usize, n_types: usize) -> Self {
        PopulationState {
            n_goods,
            n_types,
            data: vec![0.0; n_goods * n_types],
        }
    }

    /// Every type spread evenly over all goods.
    pub fn uniform(n_goods: usize, type_sizes: &[f64]) -> Self {
        let mut s = Self::zeros(n_goods, type_sizes.len());
        for (k, &size) in type_sizes.iter().enumerate() {
            for i in 0..n_goods {
                s.set(i, k, size / n_goods as f64);
            }
        }
        s
    }

    /// Builds a state from per-good totals of a single type.
    pub fn from_totals(totals: &[f64]) -> Self {
        PopulationState {
            n_goods: totals.len(),
            n_types: 1,
            data: totals.to_vec(),
        }
    }

    /// Builds a state from `rows[i][k]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_types = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_types) {
            return Err(Error::param("ragged occupancy rows"));
        }
        Ok(PopulationState {
            n_goods: rows.len(),
            n_types,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n_goods(&self) -> usize {
        self.n_goods
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    #[inline]
    pub fn get(&self, good: usize, ty: usize) -> f64 {
        self.data[good * self.n_types + ty]
    }

    #[inline]
    pub fn set(&mut self, good: usize, ty: usize, v: f64) {
        self.data[good * self.n_types + ty] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `n_i = Σ_k n_ik`.
    pub fn good_totals(&self) -> Vec<f64> {
        self.data.chunks(self.n_types).map(|row| row.iter().sum()).collect()
    }

    pub fn type_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_types];
        for row in self.data.chunks(self.n_types) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n_types).map(|r| r.to_vec()).collect()
    }

    /// `self + h·other`.
    pub(crate) fn axpy(&self, h: f64, other: &PopulationState) -> PopulationState {
        PopulationState {
            n_goods: self.n_goods,
            n_types: self.n_types,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + h * b).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &PopulationState) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

//! Mean-field dynamics of a population of WSLS users.
//!
//! Users of type `k` on good `i` leave at rate `λ_u · P_i(n_i) / T_ik` and
//! land on another good according to the shift policy. Tolerances are held
//! fixed; only the occupancies `n_ik` evolve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PopulationState, ScenarioConfig, ShiftPolicy, WorkloadSchedule};
use crate::queueing::ServerModel;

/// Clamp threshold for negative occupancies, relative to the population.
const NEGATIVE_CLAMP: f64 = 1e-9;
/// Equal-flux residual accepted by [`solve_equilibrium`], relative to `λ_u·N_u`.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Mean-field system at a fixed per-user request rate.
#[derive(Debug, Clone)]
pub struct MeanField {
    servers: Vec<ServerModel>,
    sizes: Vec<f64>,
    /// `tolerance[k][i]`.
    tolerance: Vec<Vec<f64>>,
    /// `routing[k][j][l]`: probability a type-`k` user leaving `j` settles on `l`.
    routing: Vec<Vec<Vec<f64>>>,
    policy: ShiftPolicy,
    lambda_u: f64,
}

/// Landing distribution of a user leaving each good under the uniform policy
/// when zero-tolerance goods bounce the user on immediately.
fn uniform_routing(allowed: &[bool]) -> Vec<Vec<f64>> {
    let n = allowed.len();
    let a = allowed.iter().filter(|&&x| x).count();
    let f = n - a;
    let mut m = vec![vec![0.0; n]; n];
    if n < 2 || a == 0 {
        for (j, row) in m.iter_mut().enumerate() {
            row[j] = 1.0;
        }
        return m;
    }
    let nf = (n - 1) as f64;
    for j in 0..n {
        for l in 0..n {
            if !allowed[l] {
                continue;
            }
            // A bounce lands uniformly on the allowed goods, by symmetry.
            let via_bounce = if allowed[j] {
                f as f64 / (nf * a as f64)
            } else {
                (f as f64 - 1.0) / (nf * a as f64)
            };
            m[j][l] = if l == j { via_bounce } else { 1.0 / nf + via_bounce };
        }
    }
    m
}

fn proportional_routing(weights: &[f64]) -> Vec<Vec<f64>> {
    let n = weights.len();
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let others: f64 = (0..n).filter(|&l| l != j).map(|l| weights[l]).sum();
        if others <= 0.0 {
            m[j][j] = 1.0;
            continue;
        }
        for l in 0..n {
            if l != j {
                m[j][l] = weights[l] / others;
            }
        }
    }
    m
}

impl MeanField {
    /// `types` holds `(size, tolerance weights per good)`. Weights may be any
    /// non-negative reals; only the goods with positive weight are used.
    pub fn new(
        servers: Vec<ServerModel>,
        types: Vec<(f64, Vec<f64>)>,
        lambda_u: f64,
        policy: ShiftPolicy,
    ) -> Result<Self> {
        let n_goods = servers.len();
        if n_goods == 0 {
            return Err(Error::param("no goods"));
        }
        if !(lambda_u >= 0.0 && lambda_u.is_finite()) {
            return Err(Error::param(format!("per-user rate must be >= 0, got {lambda_u}")));
        }
        let mut sizes = Vec::new();
        let mut tolerance = Vec::new();
        let mut routing = Vec::new();
        for (k, (size, t)) in types.into_iter().enumerate() {
            if t.len() != n_goods {
                return Err(Error::param(format!("type {k}: {} tolerances for {n_goods} goods", t.len())));
            }
            if t.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::param(format!("type {k}: tolerances must be finite and >= 0")));
            }
            if size > 0.0 && t.iter().all(|&x| x == 0.0) {
                return Err(Error::param(format!("type {k}: zero tolerance everywhere")));
            }
            let allowed: Vec<bool> = t.iter().map(|&x| x > 0.0).collect();
            routing.push(match policy {
                ShiftPolicy::UniformRandomOther => uniform_routing(&allowed),
                ShiftPolicy::ProportionalToTolerance => proportional_routing(&t),
            });
            sizes.push(size);
            tolerance.push(t);
        }
        if sizes.is_empty() {
            return Err(Error::param("no population types"));
        }
        Ok(MeanField {
            servers,
            sizes,
            tolerance,
            routing,
            policy,
            lambda_u,
        })
    }

    /// The scenario's goods and types at workload `rho`. Adaptive types are
    /// frozen at their initial tolerance.
    pub fn from_scenario(cfg: &ScenarioConfig, rho: f64) -> Result<Self> {
        let servers = cfg
            .goods
            .iter()
            .map(|g| ServerModel::new(g.clone(), cfg.timeout, cfg.delay_model))
            .collect::<Result<Vec<_>>>()?;
        let n = cfg.n_goods();
        let types = cfg
            .types
            .iter()
            .map(|t| (t.size as f64, t.initial_tolerance(n).as_weights()))
            .collect();
        MeanField::new(servers, types, cfg.lambda_u(rho), cfg.shift_policy)
    }

    pub fn with_lambda(&self, lambda_u: f64) -> Self {
        MeanField {
            lambda_u,
            ..self.clone()
        }
    }

    pub fn n_goods(&self) -> usize {
        self.servers.len()
    }

    pub fn n_types(&self) -> usize {
        self.sizes.len()
    }

    pub fn lambda_u(&self) -> f64 {
        self.lambda_u
    }

    pub fn population(&self) -> f64 {
        self.sizes.iter().sum()
    }

    pub fn type_sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn tolerance(&self, ty: usize) -> &[f64] {
        &self.tolerance[ty]
    }

    pub fn servers(&self) -> &[ServerModel] {
        &self.servers
    }

    /// Failure probability of good `i` with `n` users on it.
    pub fn p_fail(&self, good: usize, n: f64) -> f64 {
        self.servers[good].p_fail(n * self.lambda_u)
    }

    pub fn uniform_state(&self) -> PopulationState {
        let n = self.n_goods();
        let mut s = PopulationState::zeros(n, self.n_types());
        for k in 0..self.n_types() {
            let used: Vec<usize> = (0..n).filter(|&i| self.tolerance[k][i] > 0.0).collect();
            for &i in &used {
                s.set(i, k, self.sizes[k] / used.len() as f64);
            }
        }
        s
    }

    fn check_state(&self, state: &PopulationState) -> Result<()> {
        if state.n_goods() != self.n_goods() || state.n_types() != self.n_types() {
            return Err(Error::param(format!(
                "state is {}x{}, model is {}x{}",
                state.n_goods(),
                state.n_types(),
                self.n_goods(),
                self.n_types()
            )));
        }
        Ok(())
    }

    /// Shift outflow `λ_u · n_ik · P_i(n_i) / T_ik` for every good and type.
    fn outflows(&self, state: &PopulationState) -> Result<PopulationState> {
        let totals = state.good_totals();
        let p: Vec<f64> = totals.iter().enumerate().map(|(i, &n)| self.p_fail(i, n)).collect();
        let mut out = PopulationState::zeros(self.n_goods(), self.n_types());
        for i in 0..self.n_goods() {
            for k in 0..self.n_types() {
                let n = state.get(i, k);
                let t = self.tolerance[k][i];
                if t == 0.0 {
                    if n > 0.0 {
                        return Err(Error::Model(format!(
                            "{n} users of type {k} parked on good {i} where their tolerance is zero"
                        )));
                    }
                    continue;
                }
                out.set(i, k, self.lambda_u * n * p[i] / t);
            }
        }
        Ok(out)
    }

    /// Time derivative of the occupancy matrix.
    pub fn rhs(&self, state: &PopulationState) -> Result<PopulationState> {
        self.check_state(state)?;
        let out = self.outflows(state)?;
        let n = self.n_goods();
        let mut d = PopulationState::zeros(n, self.n_types());
        for k in 0..self.n_types() {
            let route = &self.routing[k];
            for l in 0..n {
                let mut v = -out.get(l, k) * (1.0 - route[l][l]);
                for j in 0..n {
                    if j != l {
                        v += route[j][l] * out.get(j, k);
                    }
                }
                d.set(l, k, v);
            }
        }
        Ok(d)
    }

    /// Largest per-type spread of the shift fluxes `n_ik·P_i(n_i)/T_ik`
    /// across used goods, relative to `λ_u·N_u` (scaled by `λ_u` as well).
    /// Zero exactly at an equal-flux equilibrium.
    pub fn flux_residual(&self, state: &PopulationState) -> Result<f64> {
        self.check_state(state)?;
        let out = self.outflows(state)?;
        let scale = self.lambda_u * self.population();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let mut worst: f64 = 0.0;
        for k in 0..self.n_types() {
            let fluxes: Vec<f64> = (0..self.n_goods())
                .filter(|&i| self.tolerance[k][i] > 0.0)
                .map(|i| out.get(i, k))
                .collect();
            let hi = fluxes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = fluxes.iter().copied().fold(f64::INFINITY, f64::min);
            if !fluxes.is_empty() {
                worst = worst.max(hi - lo);
            }
        }
        Ok(worst / scale)
    }

    fn rk4_step(&self, s: &PopulationState, h: f64) -> Result<PopulationState> {
        let k1 = self.rhs(s)?;
        let k2 = self.rhs(&clamped(s.axpy(h / 2.0, &k1)))?;
        let k3 = self.rhs(&clamped(s.axpy(h / 2.0, &k2)))?;
        let k4 = self.rhs(&clamped(s.axpy(h, &k3)))?;
        let mut next = s.clone();
        for (idx, v) in next.as_mut_slice().iter_mut().enumerate() {
            let slope = k1.as_slice()[idx]
                + 2.0 * k2.as_slice()[idx]
                + 2.0 * k3.as_slice()[idx]
                + k4.as_slice()[idx];
            *v += h / 6.0 * slope;
        }
        Ok(next)
    }

    /// Integrates from `state0` over `[0, t_end]` with fixed RK4 steps of
    /// `dt`, recording every step.
    pub fn integrate(&self, state0: &PopulationState, t_end: f64, dt: f64) -> Result<Trajectory> {
        let schedule = WorkloadSchedule::constant(f64::NAN, t_end);
        integrate_with(state0, t_end, dt, &schedule, |_| Ok(self.clone()))
    }

    /// Equal-flux equilibrium.
    ///
    /// Parametrized by the per-type flux `F_k = n_ik·P_i(n_i)/T_ik`: given the
    /// fluxes, each good's load solves `n_i·P_i(n_i) = Σ_k F_k·T_ik`, which is
    /// strictly increasing in `n_i`. Each `F_k` is then bisected so the type
    /// sums to its size, sweeping over types until consistent. Falls back to
    /// long-horizon integration if the sweep does not settle.
    pub fn equilibrium(&self) -> Result<EquilibriumReport> {
        if self.policy != ShiftPolicy::UniformRandomOther {
            return self.equilibrium_by_integration(self.uniform_state());
        }
        match self.flux_sweep() {
            Ok((state, iterations)) => {
                let residual = self.flux_residual(&state)?;
                if residual < EQUILIBRIUM_TOL {
                    return Ok(EquilibriumReport {
                        state,
                        residual,
                        iterations,
                        method: EquilibriumMethod::FluxBisection,
                    });
                }
                log::debug!("flux sweep residual {residual:e}, falling back to integration");
                self.equilibrium_by_integration(state)
            }
            Err(e) => {
                log::debug!("flux sweep failed: {e}; falling back to integration");
                self.equilibrium_by_integration(self.uniform_state())
            }
        }
    }

    /// Smallest `n ∈ [0, N_u]` with `n·P_i(n) >= target`, or `N_u` if unreachable.
    fn invert_load(&self, good: usize, target: f64) -> f64 {
        let cap = self.population();
        if target <= 0.0 {
            return 0.0;
        }
        let g = |n: f64| n * self.p_fail(good, n);
        if g(cap) <= target {
            return cap;
        }
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn state_for_fluxes(&self, fluxes: &[f64]) -> PopulationState {
        let n = self.n_goods();
        let mut s = PopulationState::zeros(n, self.n_types());
        for i in 0..n {
            let g: f64 = (0..self.n_types()).map(|k| fluxes[k] * self.tolerance[k][i]).sum();
            if g <= 0.0 {
                continue;
            }
            let load = self.invert_load(i, g);
            for k in 0..self.n_types() {
                s.set(i, k, load * fluxes[k] * self.tolerance[k][i] / g);
            }
        }
        s
    }

    fn flux_sweep(&self) -> Result<(PopulationState, usize)> {
        let n_types = self.n_types();
        let pop = self.population();
        // Upper bracket: every good saturated with the whole population.
        let max_p = (0..self.n_goods()).map(|i| self.p_fail(i, pop)).fold(0.0, f64::max);
        let min_t = self
            .tolerance
            .iter()
            .flatten()
            .copied()
            .filter(|&t| t > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !(max_p > 0.0) {
            return Err(Error::numerical("failure probability vanishes on every good", f64::NAN));
        }
        let f_hi = 4.0 * pop * max_p / min_t;
        let mut fluxes: Vec<f64> = self.sizes.iter().map(|&s| if s > 0.0 { f_hi * 1e-3 } else { 0.0 }).collect();

        let type_total = |fl: &[f64], k: usize| -> f64 { self.state_for_fluxes(fl).type_totals()[k] };
        let max_sweeps = if n_types == 1 { 1 } else { 500 };
        let mut gap = f64::INFINITY;
        for sweep in 0..max_sweeps {
            for k in 0..n_types {
                if self.sizes[k] <= 0.0 {
                    continue;
                }
                let (mut lo, mut hi) = (0.0, f_hi);
                let mut scratch = fluxes.clone();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    scratch[k] = mid;
                    if type_total(&scratch, k) < self.sizes[k] {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                fluxes[k] = 0.5 * (lo + hi);
            }
            let totals = self.state_for_fluxes(&fluxes).type_totals();
            gap = totals
                .iter()
                .zip(&self.sizes)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / pop;
            if gap < 1e-13 {
                return Ok((self.state_for_fluxes(&fluxes), sweep + 1));
            }
        }
        if n_types == 1 && gap < 1e-9 {
            return Ok((self.state_for_fluxes(&fluxes), 1));
        }
        Err(Error::numerical("flux sweep did not converge", gap))
    }

    fn equilibrium_by_integration(&self, start: PopulationState) -> Result<EquilibriumReport> {
        if self.lambda_u <= 0.0 {
            return Err(Error::numerical("no dynamics at zero workload", f64::NAN));
        }
        let dt = 0.1 / self.lambda_u;
        let mut state = start;
        let mut last_delta = f64::INFINITY;
        // Chunks of 1000 steps until the drift per chunk stops mattering.
        for chunk in 0..2000 {
            let mut next = state.clone();
            for _ in 0..1000 {
                next = self.rk4_step(&next, dt).and_then(|s| checked(s, self.population()))?;
            }
            last_delta = next.max_abs_diff(&state) / self.population();
            state = next;
            let residual = match self.policy {
                ShiftPolicy::UniformRandomOther => self.flux_residual(&state)?,
                ShiftPolicy::ProportionalToTolerance => self.rhs_residual(&state)?,
            };
            if residual < EQUILIBRIUM_TOL {
                return Ok(EquilibriumReport {
                    state,
                    residual,
                    iterations: chunk + 1,
                    method: EquilibriumMethod::Integration,
                });
            }
        }
        Err(Error::numerical("integration did not settle", last_delta))
    }

    /// Max-norm of the derivative relative to `λ_u·N_u`.
    pub fn rhs_residual(&self, state: &PopulationState) -> Result<f64> {
        let d = self.rhs(state)?;
        let scale = self.lambda_u * self.population();
        Ok(d.as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max) / scale)
    }
}

fn clamped(mut s: PopulationState) -> PopulationState {
    for v in s.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    s
}

fn checked(mut s: PopulationState, population: f64) -> Result<PopulationState> {
    let floor = -NEGATIVE_CLAMP * population;
    for v in s.as_mut_slice() {
        if v.is_nan() || *v < floor {
            return Err(Error::numerical(
                "occupancy went negative or NaN; reduce the step size",
                *v,
            ));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMethod {
    FluxBisection,
    Integration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub state: PopulationState,
    /// Equal-flux residual relative to `λ_u·N_u`.
    pub residual: f64,
    pub iterations: usize,
    pub method: EquilibriumMethod,
}

/// Sampled ODE solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PopulationState>,
    pub rhos: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &PopulationState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Per-good totals at every sample: `out[i][t]`.
    pub fn good_series(&self) -> Vec<Vec<f64>> {
        let n = self.states.first().map_or(0, |s| s.n_goods());
        let mut out = vec![Vec::with_capacity(self.len()); n];
        for s in &self.states {
            for (i, v) in s.good_totals().into_iter().enumerate() {
                out[i].push(v);
            }
        }
        out
    }

    /// Per-good totals at time `t`, linearly interpolated.
    pub fn totals_at(&self, t: f64) -> Vec<f64> {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            return self.states[0].good_totals();
        }
        if idx >= self.len() {
            return self.last().good_totals();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        let a = self.states[idx - 1].good_totals();
        let b = self.states[idx].good_totals();
        a.iter().zip(&b).map(|(x, y)| x + w * (y - x)).collect()
    }

    /// Linear interpolation onto `0, interval, 2·interval, …` up to the last
    /// time. The workload at each sample is the one in force there.
    pub fn resample(&self, interval: f64) -> Result<Trajectory> {
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(Error::param(format!("sampling interval must be positive, got {interval}")));
        }
        let end = *self.times.last().expect("trajectory holds the initial state");
        let count = (end / interval + 1e-9).floor() as usize;
        let mut out = Trajectory {
            times: Vec::with_capacity(count + 1),
            states: Vec::with_capacity(count + 1),
            rhos: Vec::with_capacity(count + 1),
        };
        for s in 0..=count {
            let t = s as f64 * interval;
            let idx = self.times.partition_point(|&x| x < t).min(self.len() - 1);
            let state = if idx == 0 || (self.times[idx] - t).abs() <= 1e-9 * interval {
                self.states[idx].clone()
            } else {
                let (t0, t1) = (self.times[idx - 1], self.times[idx]);
                let w = (t - t0) / (t1 - t0);
                let mut st = self.states[idx - 1].clone();
                for (a, b) in st.as_mut_slice().iter_mut().zip(self.states[idx].as_slice()) {
                    *a += w * (b - *a);
                }
                st
            };
            // A sample at a switch instant belongs to the new segment.
            let next = self.times.partition_point(|&x| x <= t).min(self.len() - 1);
            out.times.push(t);
            out.states.push(state);
            out.rhos.push(self.rhos[next]);
        }
        Ok(out)
    }
}

fn integrate_with<F>(
    state0: &PopulationState,
    t_end: f64,
    dt: f64,
    schedule: &WorkloadSchedule,
    model_at: F,
) -> Result<Trajectory>
where
    F: Fn(f64) -> Result<MeanField>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::param(format!("end time must be >= 0, got {t_end}")));
    }
    if state0.as_slice().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::param("initial state has negative or NaN occupancy"));
    }
    let spans = schedule.spans(t_end);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![state0.clone()],
        rhos: vec![spans.first().map_or(f64::NAN, |s| s.2)],
    };
    let mut state = state0.clone();
    for (start, end, rho) in spans {
        let model = model_at(rho)?;
        let population = model.population();
        let mut t = start;
        while t < end {
            let h = dt.min(end - t);
            state = checked(model.rk4_step(&state, h)?, population)?;
            // Avoid a sliver step from accumulated rounding.
            t = if end - (t + h) < 1e-9 * dt { end } else { t + h };
            traj.times.push(t);
            traj.states.push(state.clone());
            traj.rhos.push(rho);
        }
    }
    Ok(traj)
}

/// `ṅ_ik` for the scenario at workload `rho`.
pub fn ode_rhs(state: &PopulationState, cfg: &ScenarioConfig, rho: f64) -> Result<PopulationState> {
    MeanField::from_scenario(cfg, rho)?.rhs(state)
}

/// Default step: a tenth of the mean time between a user's requests.
pub fn default_step(cfg: &ScenarioConfig) -> f64 {
    let rho_max = cfg.schedule.segments.iter().map(|s| s.rho).fold(0.0, f64::max);
    let lambda = cfg.lambda_u(rho_max);
    if lambda > 0.0 {
        0.1 / lambda
    } else {
        1.0
    }
}

/// RK4 trajectory following the scenario's workload schedule.
pub fn integrate(state0: &PopulationState, cfg: &ScenarioConfig, t_end: f64, dt: f64) -> Result<Trajectory> {
    let base = MeanField::from_scenario(cfg, 0.0)?;
    integrate_with(state0, t_end, dt, &cfg.schedule, |rho| Ok(base.with_lambda(cfg.lambda_u(rho))))
}

/// Equal-flux equilibrium of the scenario at workload `rho`.
pub fn solve_equilibrium(cfg: &ScenarioConfig, rho: f64) -> Result<PopulationState> {
    Ok(MeanField::from_scenario(cfg, rho)?.equilibrium()?.state)
}

/// A point `s = [n, T]` of the joint occupancy/tolerance state together
/// with the equilibrium it is measured against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityProbe {
    pub equilibrium_n: Vec<f64>,
    pub equilibrium_t: Vec<f64>,
    pub n: Vec<f64>,
    pub t: Vec<f64>,
}

impl StabilityProbe {
    pub fn new(equilibrium_n: Vec<f64>, equilibrium_t: Vec<f64>, n: Vec<f64>, t: Vec<f64>) -> Self {
        StabilityProbe {
            equilibrium_n,
            equilibrium_t,
            n,
            t,
        }
    }

    /// Deviation `z = s - s*`.
    pub fn deviation(&self) -> Result<Vec<f64>> {
        if self.n.len() != self.equilibrium_n.len() || self.t.len() != self.equilibrium_t.len() {
            return Err(Error::param("probe dimensions do not match the equilibrium"));
        }
        Ok(self
            .n
            .iter()
            .zip(&self.equilibrium_n)
            .chain(self.t.iter().zip(&self.equilibrium_t))
            .map(|(a, b)| a - b)
            .collect())
    }
}

/// `V(z) = Σ z_i²`.
pub fn lyapunov_value(probe: &StabilityProbe) -> Result<f64> {
    Ok(probe.deviation()?.iter().map(|z| z * z).sum())
}

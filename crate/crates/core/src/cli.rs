//! Command-line driver: loads a scenario, applies overrides, runs one
//! pipeline and writes its artifacts.
//!
//! Every subcommand prints a JSON document on stdout. On failure that
//! document is an error report and the process exits with a nonzero status:
//! 2 for an invalid scenario, 3 for numerical failure or infeasibility, 1 for
//! anything else.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dynamics::{self, MeanField};
use crate::error::{Error, Result};
use crate::ifd;
use crate::metrics::{self, Provenance, SeriesBundle};
use crate::model::{validate, ScenarioConfig, Severity, ShiftPolicy, ToleranceProfile, TypeSpec, WorkloadSchedule};
use crate::simulator::{self, RunRecord};
use crate::AdaptiveConfig;

/// Fraction of samples averaged for tail occupancies.
const OCCUPANCY_TAIL: f64 = 0.2;
/// Fraction of samples averaged for smoothed failure probabilities.
const FAILURE_TAIL: f64 = 0.1;
/// Largest integer scale tried when converting shares to tolerances.
const MAX_TOLERANCE_SCALE: u32 = 1000;
const SHARE_REL_TOL: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "wsls", version, about = "Win-stay lose-shift server selection: simulation, mean-field dynamics and planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the agent-based simulator.
    Simulate(Common),
    /// Integrate the mean-field ODE from an even split.
    Ode(Common),
    /// Solve the mean-field equilibrium for each workload in the schedule.
    Equilibrium(Common),
    /// Equalized-quality distribution and the tolerances that realize it.
    Ifd(Common),
    /// Selective shares of a hybrid population.
    Hybrid {
        #[command(flatten)]
        common: Common,
        /// Fraction of selective users; defaults to the critical value.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Simulate and integrate side by side.
    Compare(Common),
    /// One simulation per (rho, seed) grid point, run in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated workloads.
        #[arg(long, value_delimiter = ',', required = true)]
        rhos: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the schedule with a constant workload.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Override the horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Override the shift policy.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Make every type adaptive (on) or freeze every type at its initial tolerance (off).
    #[arg(long, value_enum)]
    pub adaptive: Option<Switch>,
    /// Smoothing factor for reported failure probabilities.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Uniform,
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Failure of a CLI run, with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub report: Value,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidScenario(_) | Error::Parameter(_) | Error::Json(_) => (2, "invalid_scenario"),
            Error::Numerical { .. } => (3, "numerical"),
            Error::Infeasible { .. } => (3, "infeasible"),
            Error::Model(_) => (3, "model"),
            Error::Io(_) | Error::Csv(_) => (1, "io"),
            Error::Internal(_) => (1, "internal"),
        };
        let mut report = json!({ "error": kind, "message": e.to_string() });
        match &e {
            Error::InvalidScenario(v) => report["violations"] = json!(v),
            Error::Numerical { residual, .. } => report["residual"] = json!(residual),
            Error::Infeasible { gamma_critical, .. } => report["gamma_critical"] = json!(gamma_critical),
            _ => {}
        }
        Failure { code, report }
    }
}

/// Applies the command-line overrides to a loaded scenario. The file on disk
/// is never touched.
pub fn apply_overrides(mut cfg: ScenarioConfig, common: &Common) -> ScenarioConfig {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(rho) = common.rho {
        cfg.schedule = WorkloadSchedule::constant(rho, cfg.horizon);
    }
    if let Some(p) = common.policy {
        cfg.shift_policy = match p {
            PolicyArg::Uniform => ShiftPolicy::UniformRandomOther,
            PolicyArg::Proportional => ShiftPolicy::ProportionalToTolerance,
        };
    }
    match common.adaptive {
        Some(Switch::On) => {
            for t in &mut cfg.types {
                if t.adaptive.is_none() {
                    // A uniform fixed profile becomes the starting tolerance.
                    let t0 = match t.tolerance.0.split_first() {
                        Some((&first, rest)) if first > 0 && rest.iter().all(|&v| v == first) => first,
                        _ => AdaptiveConfig::default().t0,
                    };
                    t.adaptive = Some(AdaptiveConfig { t0, ..AdaptiveConfig::default() });
                    t.tolerance = ToleranceProfile::default();
                }
            }
        }
        Some(Switch::Off) => {
            let n = cfg.n_goods();
            for t in &mut cfg.types {
                *t = TypeSpec::fixed(t.size, t.initial_tolerance(n));
            }
        }
        None => {}
    }
    cfg
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let cfg = apply_overrides(ScenarioConfig::load(&common.scenario)?, common);
    for v in validate(&cfg).iter().filter(|v| v.severity == Severity::Warning) {
        log::warn!("{v}");
    }
    cfg.validated()
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn provenance(cfg: &ScenarioConfig, origin: &str) -> Provenance {
    Provenance {
        config_digest: cfg.digest(),
        seed: cfg.seed,
        origin: origin.into(),
    }
}

/// Distinct workloads of the schedule within the horizon, in order.
fn schedule_rhos(cfg: &ScenarioConfig) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (_, _, rho) in cfg.schedule.spans(cfg.horizon) {
        if !out.contains(&rho) {
            out.push(rho);
        }
    }
    out
}

/// Runs the parsed command. Returns the stdout document on success.
pub fn dispatch(cli: Cli) -> std::result::Result<Value, Failure> {
    let value = match cli.command {
        Command::Simulate(c) => simulate(&c)?,
        Command::Ode(c) => ode(&c)?,
        Command::Equilibrium(c) => equilibrium(&c)?,
        Command::Ifd(c) => ifd_cmd(&c)?,
        Command::Hybrid { common, gamma } => hybrid(&common, gamma)?,
        Command::Compare(c) => compare(&c)?,
        Command::Sweep { common, rhos, seeds } => sweep(&common, &rhos, &seeds)?,
    };
    Ok(value)
}

/// Entry point used by the binary. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(v) => {
            emit(&v);
            0
        }
        Err(f) => {
            emit(&f.report);
            f.code
        }
    }
}

fn emit(v: &Value) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    // A closed pipe is not worth a panic.
    let _ = serde_json::to_writer_pretty(&mut out, v).map(|_| writeln!(out));
}

/// Tail means and spreads of one simulation.
fn run_summary(rec: &RunRecord, alpha: f64) -> Result<Value> {
    let n_goods = rec.n_goods();
    let mut occupancy = Vec::with_capacity(n_goods);
    let mut pfail = Vec::with_capacity(n_goods);
    for i in 0..n_goods {
        occupancy.push(metrics::tail_mean(&rec.occupancy_f64(i), OCCUPANCY_TAIL)?);
        pfail.push(metrics::tail_mean(&metrics::smooth(&rec.good_failure[i], alpha)?, FAILURE_TAIL)?);
    }
    let system = metrics::tail_mean(&metrics::smooth(&rec.system_failure, alpha)?, FAILURE_TAIL)?;
    let spread = metrics::equalization_spread(&pfail)?;
    let mut v = json!({
        "scenario": rec.scenario,
        "seed": rec.seed,
        "config_digest": rec.config_digest,
        "tail_occupancy": occupancy,
        "tail_pfail_smoothed": pfail.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "tail_pfail_system_smoothed": finite(system),
        "equalization_spread": finite(spread),
        "totals": rec.totals,
    });
    if !rec.mean_tolerance.is_empty() {
        let tol: Vec<f64> = rec.mean_tolerance.iter().map(|s| *s.last().unwrap_or(&f64::NAN)).collect();
        v["final_mean_tolerance"] = json!(tol.iter().map(|&x| finite(x)).collect::<Vec<_>>());
        v["tolerance_sum_range"] = json!([
            rec.tolerance_sum_min.iter().min(),
            rec.tolerance_sum_max.iter().max()
        ]);
    }
    Ok(v)
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn sim_bundle(rec: &RunRecord, alpha: f64) -> Result<SeriesBundle> {
    let mut b = metrics::run_bundle(rec)?;
    for i in 0..rec.n_goods() {
        b.push(format!("pfail_{}_smoothed", i + 1), metrics::smooth(&rec.good_failure[i], alpha)?)?;
    }
    b.push("pfail_system_smoothed", metrics::smooth(&rec.system_failure, alpha)?)?;
    Ok(b)
}

fn write_run(cfg: &ScenarioConfig, rec: &RunRecord, out: &Path, kind: &str, alpha: f64) -> Result<(PathBuf, PathBuf, Value)> {
    let csv = out.join(metrics::artifact_name(&cfg.name, cfg.seed, kind, "csv"));
    let js = out.join(metrics::artifact_name(&cfg.name, cfg.seed, kind, "json"));
    if rec.is_empty() {
        return Err(Error::param("horizon shorter than one sampling interval; nothing to write"));
    }
    metrics::write_csv_file(&sim_bundle(rec, alpha)?, &csv)?;
    let summary = run_summary(rec, alpha)?;
    metrics::write_json_file(&summary, &js)?;
    Ok((csv, js, summary))
}

fn simulate(c: &Common) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let rec = simulator::run(&cfg)?;
    let (csv, js, summary) = write_run(&cfg, &rec, &c.out, "sim", c.alpha)?;
    Ok(json!({ "artifacts": [csv, js], "summary": summary }))
}

fn ode_trajectory(cfg: &ScenarioConfig) -> Result<dynamics::Trajectory> {
    let start = MeanField::from_scenario(cfg, cfg.schedule.rho_at(0.0))?.uniform_state();
    let coarse = cfg.sampling_interval;
    // A step that divides the sampling interval puts RK4 nodes on the grid.
    let steps = (coarse / dynamics::default_step(cfg)).ceil().max(1.0);
    let traj = dynamics::integrate(&start, cfg, cfg.horizon, coarse / steps)?;
    traj.resample(coarse)
}

fn ode(c: &Common) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let traj = ode_trajectory(&cfg)?;
    let bundle = metrics::trajectory_bundle(&traj, provenance(&cfg, "ode"))?;
    let csv = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "ode", "csv"));
    metrics::write_csv_file(&bundle, &csv)?;
    Ok(json!({ "artifacts": [csv], "final_occupancy": traj.last().good_totals() }))
}

fn equilibrium_entry(cfg: &ScenarioConfig, rho: f64) -> Result<Value> {
    let model = MeanField::from_scenario(cfg, rho)?;
    let rep = model.equilibrium()?;
    let totals = rep.state.good_totals();
    let p: Vec<f64> = totals.iter().enumerate().map(|(i, &n)| model.p_fail(i, n)).collect();
    let sys = if totals.iter().sum::<f64>() > 0.0 {
        totals.iter().zip(&p).map(|(n, p)| n * p).sum::<f64>() / totals.iter().sum::<f64>()
    } else {
        0.0
    };
    Ok(json!({
        "rho": rho,
        "occupancy": totals,
        "occupancy_by_type": rep.state.rows(),
        "total": rep.state.total(),
        "p_fail": p,
        "p_fail_system": sys,
        "residual": rep.residual,
        "rhs_residual": model.rhs_residual(&rep.state)?,
        "iterations": rep.iterations,
        "method": rep.method,
    }))
}

fn equilibrium(c: &Common) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let entries = schedule_rhos(&cfg)
        .into_iter()
        .map(|rho| equilibrium_entry(&cfg, rho))
        .collect::<Result<Vec<_>>>()?;
    let doc = json!({ "provenance": provenance(&cfg, "equilibrium"), "equilibria": entries });
    let path = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "equilibrium", "json"));
    metrics::write_json_file(&doc, &path)?;
    Ok(json!({ "artifacts": [path], "result": doc }))
}

fn ifd_entry(cfg: &ScenarioConfig, rho: f64) -> Result<Value> {
    let model = MeanField::from_scenario(cfg, rho)?;
    let n_users = cfg.n_users as f64;
    let dist = ifd::solve_equalized(model.servers(), n_users, model.lambda_u())?;
    let sizes: Vec<f64> = cfg.types.iter().map(|t| t.size as f64).collect();
    let shares = ifd::tolerance_for_distribution(&dist.n_star, &sizes)?;
    let residual = ifd::allocation_residual(&dist.n_star, &sizes, &shares)?;
    let tolerances = ifd::integerize_shares(&shares[0], MAX_TOLERANCE_SCALE, SHARE_REL_TOL)?;
    Ok(json!({
        "rho": rho,
        "n_star": dist.n_star,
        "y": dist.y,
        "used": dist.used,
        "equalization_gap": ifd::equalization_gap(model.servers(), &dist, model.lambda_u()),
        "shares": shares,
        "allocation_residual": residual,
        "integer_tolerance": tolerances,
        "gamma_critical": ifd::critical_selectivity(&dist.n_star, n_users, cfg.n_goods()),
    }))
}

fn ifd_cmd(c: &Common) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let entries = schedule_rhos(&cfg)
        .into_iter()
        .map(|rho| ifd_entry(&cfg, rho))
        .collect::<Result<Vec<_>>>()?;
    let doc = json!({ "provenance": provenance(&cfg, "ifd"), "distributions": entries });
    let path = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "ifd", "json"));
    metrics::write_json_file(&doc, &path)?;
    Ok(json!({ "artifacts": [path], "result": doc }))
}

fn hybrid(c: &Common, gamma: Option<f64>) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let rho = cfg.schedule.rho_at(0.0);
    let model = MeanField::from_scenario(&cfg, rho)?;
    let n_users = cfg.n_users as f64;
    let n_goods = cfg.n_goods();
    let dist = ifd::solve_equalized(model.servers(), n_users, model.lambda_u())?;
    let gamma_c = ifd::critical_selectivity(&dist.n_star, n_users, n_goods);
    let gamma = gamma.unwrap_or(gamma_c);
    let shares = ifd::hybrid_tolerances(&dist.n_star, n_users, n_goods, gamma)?;
    let mixed = MeanField::new(
        model.servers().to_vec(),
        vec![
            (gamma * n_users, shares.clone()),
            ((1.0 - gamma) * n_users, vec![1.0; n_goods]),
        ],
        model.lambda_u(),
        ShiftPolicy::UniformRandomOther,
    )?;
    let eq = mixed.equilibrium()?;
    let totals = eq.state.good_totals();
    let p: Vec<f64> = totals.iter().enumerate().map(|(i, &n)| mixed.p_fail(i, n)).collect();
    let doc = json!({
        "provenance": provenance(&cfg, "hybrid"),
        "rho": rho,
        "gamma": gamma,
        "gamma_critical": gamma_c,
        "n_star": dist.n_star,
        "selective_shares": shares,
        "equilibrium_occupancy": totals,
        "equilibrium_p_fail": p,
        "equilibrium_residual": eq.residual,
    });
    let path = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "hybrid", "json"));
    metrics::write_json_file(&doc, &path)?;
    Ok(json!({ "artifacts": [path], "result": doc }))
}

fn compare(c: &Common) -> Result<Value> {
    let cfg = load(c)?;
    prepare_out(&c.out)?;
    let rec = simulator::run(&cfg)?;
    if rec.is_empty() {
        return Err(Error::param("horizon shorter than one sampling interval; nothing to compare"));
    }
    let traj = ode_trajectory(&cfg)?;
    let base = MeanField::from_scenario(&cfg, 0.0)?;
    let n_goods = cfg.n_goods();

    let mut joined = SeriesBundle::new(rec.times.clone(), provenance(&cfg, "compare"))?;
    joined.push("rho", rec.rho.clone())?;
    let mut ode_n = vec![Vec::with_capacity(rec.len()); n_goods];
    let mut ode_p = vec![Vec::with_capacity(rec.len()); n_goods];
    for (s, &t) in rec.times.iter().enumerate() {
        let totals = traj.totals_at(t);
        let model = base.with_lambda(cfg.lambda_u(rec.rho[s]));
        for i in 0..n_goods {
            ode_n[i].push(totals[i]);
            ode_p[i].push(model.p_fail(i, totals[i]));
        }
    }
    let mut gaps = Vec::new();
    let mut p_gaps = Vec::new();
    let mut sim_p = Vec::new();
    for i in 0..n_goods {
        let sim_n = rec.occupancy_f64(i);
        let smoothed = metrics::smooth(&rec.good_failure[i], c.alpha)?;
        gaps.push((metrics::tail_mean(&sim_n, OCCUPANCY_TAIL)? - metrics::tail_mean(&ode_n[i], OCCUPANCY_TAIL)?).abs());
        let sp = metrics::tail_mean(&smoothed, FAILURE_TAIL)?;
        p_gaps.push(finite((sp - metrics::tail_mean(&ode_p[i], FAILURE_TAIL)?).abs()));
        sim_p.push(sp);
        joined.push(format!("sim_n_{}", i + 1), sim_n)?;
        joined.push(format!("ode_n_{}", i + 1), ode_n[i].clone())?;
        joined.push(format!("sim_pfail_{}_smoothed", i + 1), smoothed)?;
        joined.push(format!("ode_pfail_{}", i + 1), ode_p[i].clone())?;
    }
    let n_users = cfg.n_users as f64;
    let summary = json!({
        "provenance": provenance(&cfg, "compare"),
        "tail_occupancy_gap": gaps,
        "tail_occupancy_gap_relative": gaps.iter().map(|g| g / n_users).collect::<Vec<_>>(),
        "max_tail_occupancy_gap_relative": gaps.iter().copied().fold(0.0, f64::max) / n_users,
        "tail_pfail_gap": p_gaps,
        "equalization_spread": finite(metrics::equalization_spread(&sim_p)?),
    });
    let csv = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "compare", "csv"));
    let js = c.out.join(metrics::artifact_name(&cfg.name, cfg.seed, "compare", "json"));
    metrics::write_csv_file(&joined, &csv)?;
    metrics::write_json_file(&summary, &js)?;
    Ok(json!({ "artifacts": [csv, js], "summary": summary }))
}

fn sweep(c: &Common, rhos: &[f64], seeds: &[u64]) -> Result<Value> {
    let base = load(c)?;
    prepare_out(&c.out)?;
    let grid: Vec<(f64, u64)> = rhos.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    let results = grid
        .par_iter()
        .map(|&(rho, seed)| -> Result<Value> {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.schedule = WorkloadSchedule::constant(rho, cfg.horizon);
            let rec = simulator::run(&cfg)?;
            let (csv, js, summary) = write_run(&cfg, &rec, &c.out, &format!("sim-rho{rho}"), c.alpha)?;
            Ok(json!({ "rho": rho, "seed": seed, "artifacts": [csv, js], "summary": summary }))
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = json!({ "provenance": provenance(&base, "sweep"), "points": results });
    let path = c.out.join(format!("{}_sweep.json", base.name));
    metrics::write_json_file(&doc, &path)?;
    Ok(json!({ "artifacts": [path], "points": grid.len() }))
}

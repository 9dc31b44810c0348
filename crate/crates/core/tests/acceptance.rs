//! Acceptance criteria on the three-server reference system. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::*;
use wsls::dynamics::{self, lyapunov_value, MeanField, StabilityProbe};
use wsls::ifd::{
    allocation_residual, critical_selectivity, hybrid_tolerances, integerize_shares, solve_equalized,
    tolerance_for_distribution,
};
use wsls::metrics::{equalization_spread, smooth};
use wsls::queueing::{loss_probability, ServerModel};
use wsls::simulator::{self, RunRecord};
use wsls::{
    AdaptiveConfig, DelayModel, Error, GoodSpec, PopulationState, ScenarioConfig, ShiftPolicy, ToleranceProfile,
    TypeSpec, WorkloadSchedule,
};

const N_USERS: f64 = 1000.0;
const ALPHA: f64 = 0.05;

// Tolerances as stated by the criteria.
const LOSS_ORACLE_TOL: f64 = 1e-10;
const OCCUPANCY_TOL: f64 = 0.05 * N_USERS;
const OVERLOAD_FLOOR: f64 = 0.20;
const OVERLOAD_CEILING: f64 = 0.30;
const THEOREM1_TOL: f64 = 1e-3 * N_USERS;
const SHARE_RESIDUAL_TOL: f64 = 1e-12;
const HYBRID_EQUALIZATION_TOL: f64 = 1e-6;
const ADAPTIVE_SPREAD_MAX: f64 = 0.2;
const NON_ADAPTIVE_SPREAD_RATIO: f64 = 2.0;
const MULTI_SEED_TOL: f64 = 0.10 * N_USERS;
const LYAPUNOV_REL_TOL: f64 = 1e-10;
const FIG3_RUNTIME: Duration = Duration::from_secs(300);

type Outcome = std::result::Result<String, String>;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenario_path(name)).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn smoothed_tail(series: &[f64], fraction: f64) -> f64 {
    tail(&smooth(series, ALPHA).unwrap(), fraction)
}

fn failure_spread(rec: &RunRecord) -> f64 {
    let p: Vec<f64> = rec.good_failure.iter().map(|s| smoothed_tail(s, 0.1)).collect();
    equalization_spread(&p).unwrap()
}

fn queueing_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (spec, rate) = random_point(&mut rng);
        let pi = balance_solve(rate, &spec);
        worst = worst.max((loss_probability(rate, &spec).unwrap() - pi[spec.buffer as usize]).abs());
    }
    let points = [
        (GoodSpec::new(100.0, 1, 10, 0.010), 60.0),
        (GoodSpec::new(100.0, 1, 10, 0.010), 140.0),
        (GoodSpec::new(200.0, 1, 10, 0.020), 200.0),
        (GoodSpec::new(400.0, 1, 10, 0.030), 350.0),
        (GoodSpec::new(200.0, 2, 10, 0.020), 300.0),
    ];
    let misses: Vec<String> = points
        .par_iter()
        .enumerate()
        .filter_map(|(i, (spec, rate))| {
            let analytic = ServerModel::new(spec.clone(), 0.1, DelayModel::Sojourn).unwrap().p_fail(*rate);
            let est = single_queue_failure(spec, *rate, 0.1, 1_000_000, 700 + i as u64);
            (!est.contains(analytic)).then(|| format!("point {i}: {analytic:.5} vs {:.5}±{:.5}", est.mean, est.half_width))
        })
        .collect();
    check(
        worst < LOSS_ORACLE_TOL && misses.is_empty(),
        format!("max loss error {worst:.1e}; MC misses {misses:?}"),
    )
}

fn fig3_equilibria() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["fig3_rho0.5", "fig3_rho1", "fig3_rho1.25"] {
        let cfg = scenario(name);
        let rho = cfg.schedule.rho_at(0.0);
        let start = Instant::now();
        let rec = simulator::run(&cfg).unwrap();
        let took = start.elapsed();
        let eq = dynamics::solve_equilibrium(&cfg, rho).unwrap().good_totals();
        let n: Vec<f64> = (0..3).map(|i| tail(&rec.occupancy_f64(i), 0.2)).collect();
        let p: Vec<f64> = rec.good_failure.iter().map(|s| tail(s, 0.2)).collect();
        let gap = n.iter().zip(&eq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ordered = n[0] < n[1] && n[1] < n[2] && p[2] < p[0] && p[2] < p[1];
        ok &= gap < OCCUPANCY_TOL && ordered && took < FIG3_RUNTIME;
        lines.push(format!("rho {rho}: gap {gap:.1} ordered {ordered} {:.1}s", took.as_secs_f64()));
    }
    check(ok, lines.join("; "))
}

fn overload_floor() -> Outcome {
    let cfg = scenario("fig3_rho1.25");
    let rec = simulator::run(&cfg).unwrap();
    let p = tail(&rec.system_failure, 0.2);
    let mut alt = cfg.clone();
    alt.delay_model = DelayModel::ServiceOnly;
    let p_alt = tail(&simulator::run(&alt).unwrap().system_failure, 0.2);
    check(
        (OVERLOAD_FLOOR..=OVERLOAD_CEILING).contains(&p),
        format!("system failure {p:.4} (band [{OVERLOAD_FLOOR}, {OVERLOAD_CEILING}]); service-only reading gives {p_alt:.4}"),
    )
}

fn theorem1_loop() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for rho in [0.5, 0.75, 1.0, 1.25] {
        let cfg = ScenarioConfig::reference(rho, 1, 100.0);
        let model = MeanField::from_scenario(&cfg, rho).unwrap();
        let dist = solve_equalized(model.servers(), N_USERS, model.lambda_u()).unwrap();
        let shares = tolerance_for_distribution(&dist.n_star, &[N_USERS]).unwrap();
        let residual = allocation_residual(&dist.n_star, &[N_USERS], &shares).unwrap();
        let t = integerize_shares(&shares[0], 1000, 0.01).unwrap();
        let mut planned = cfg.clone();
        planned.types = vec![TypeSpec::fixed(1000, ToleranceProfile(t.clone()))];
        let n = dynamics::solve_equilibrium(&planned, rho).unwrap().good_totals();
        let gap = n.iter().zip(&dist.n_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ok &= gap < THEOREM1_TOL && residual < SHARE_RESIDUAL_TOL;
        lines.push(format!("rho {rho}: T={t:?} gap {gap:.3} residual {residual:.1e}"));
    }
    check(ok, lines.join("; "))
}

fn hybrid_criticality() -> Outcome {
    let rho = 0.75;
    let model = MeanField::from_scenario(&ScenarioConfig::reference(rho, 1, 100.0), rho).unwrap();
    let dist = solve_equalized(model.servers(), N_USERS, model.lambda_u()).unwrap();
    if dist.used.iter().any(|u| !u) {
        return Err("not every good is used at rho 0.75".into());
    }
    let gamma_c = critical_selectivity(&dist.n_star, N_USERS, 3);
    let shares = hybrid_tolerances(&dist.n_star, N_USERS, 3, gamma_c).unwrap();
    let zero_on_min = shares[dist.argmin()] == 0.0;
    let mixed = MeanField::new(
        model.servers().to_vec(),
        vec![(gamma_c * N_USERS, shares.clone()), ((1.0 - gamma_c) * N_USERS, vec![1.0; 3])],
        model.lambda_u(),
        ShiftPolicy::UniformRandomOther,
    )
    .unwrap();
    let eq = mixed.equilibrium().unwrap().state.good_totals();
    let p: Vec<f64> = (0..3).map(|i| mixed.p_fail(i, eq[i])).collect();
    let p_gap = p.iter().copied().fold(f64::MIN, f64::max) - p.iter().copied().fold(f64::MAX, f64::min);
    let below = hybrid_tolerances(&dist.n_star, N_USERS, 3, 0.9 * gamma_c);
    let infeasible = matches!(below, Err(Error::Infeasible { gamma_critical: Some(g), .. }) if g == gamma_c);
    check(
        zero_on_min && p_gap < HYBRID_EQUALIZATION_TOL && infeasible,
        format!("gamma_c {gamma_c:.4}, shares {shares:.4?}, failure gap {p_gap:.1e}, infeasible below: {infeasible}"),
    )
}

fn adaptive_equalization() -> Outcome {
    let fig4 = scenario("fig4_adaptive");
    let mut at_overload = scenario("fig5_multi");
    at_overload.schedule = WorkloadSchedule::constant(1.25, 14400.0);
    at_overload.horizon = 14400.0;
    let mut adaptive_overload = at_overload.clone();
    adaptive_overload.types = vec![TypeSpec::adaptive(1000, AdaptiveConfig::default())];
    let recs: Vec<RunRecord> = [fig4, at_overload, adaptive_overload]
        .par_iter()
        .map(|c| simulator::run(c).unwrap())
        .collect();
    let spread = failure_spread(&recs[0]);
    let fixed_hi = failure_spread(&recs[1]);
    let adaptive_hi = failure_spread(&recs[2]);
    let sums_ok = [&recs[0], &recs[2]]
        .iter()
        .all(|r| r.tolerance_sum_min.iter().chain(&r.tolerance_sum_max).all(|&s| s == 15));
    check(
        spread < ADAPTIVE_SPREAD_MAX && fixed_hi >= NON_ADAPTIVE_SPREAD_RATIO * adaptive_hi && sums_ok,
        format!(
            "adaptive spread {spread:.3} at rho 0.75; rho 1.25 fixed {fixed_hi:.3} vs adaptive {adaptive_hi:.3}; sum=15 always: {sums_ok}"
        ),
    )
}

fn multi_seed_stability() -> Outcome {
    let base = scenario("fig5_multi");
    let mut jobs = Vec::new();
    for rho in [0.5, 0.75, 1.25] {
        for adaptive in [false, true] {
            for seed in 1..=15u64 {
                let mut c = base.clone();
                c.schedule = WorkloadSchedule::constant(rho, c.horizon);
                c.seed = seed;
                if adaptive {
                    c.types = vec![TypeSpec::adaptive(1000, AdaptiveConfig::default())];
                }
                jobs.push((rho, adaptive, c));
            }
        }
    }
    let runs: Vec<(f64, bool, Vec<Vec<f64>>)> = jobs
        .par_iter()
        .map(|(rho, adaptive, c)| {
            let rec = simulator::run(c).unwrap();
            let sm = (0..3).map(|i| smooth(&rec.occupancy_f64(i), ALPHA).unwrap()).collect();
            (*rho, *adaptive, sm)
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for chunk in runs.chunks(15) {
        let len = chunk[0].2[0].len();
        let mut dev: f64 = 0.0;
        for a in 0..chunk.len() {
            for b in a + 1..chunk.len() {
                for i in 0..3 {
                    for t in len / 2..len {
                        dev = dev.max((chunk[a].2[i][t] - chunk[b].2[i][t]).abs());
                    }
                }
            }
        }
        worst = worst.max(dev);
        lines.push(format!("rho {}{}: {dev:.1}", chunk[0].0, if chunk[0].1 { " adaptive" } else { "" }));
    }
    check(worst < MULTI_SEED_TOL, lines.join("; "))
}

fn schedule_tracking() -> Outcome {
    let cfg = scenario("fig6_schedule");
    let rec = simulator::run(&cfg).unwrap();
    let ode = dynamics::integrate(
        &MeanField::from_scenario(&cfg, cfg.schedule.rho_at(0.0)).unwrap().uniform_state(),
        &cfg,
        cfg.horizon,
        dynamics::default_step(&cfg),
    )
    .unwrap();
    let tail_of = |a: f64, b: f64| -> Vec<f64> {
        let r = rec.window(b - 0.2 * (b - a), b);
        (0..3)
            .map(|i| rec.occupancy[i][r.clone()].iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64)
            .collect()
    };
    let mut ok = true;
    let mut lines = Vec::new();
    let mut prev_tail: Option<Vec<f64>> = None;
    for (s, (a, b, rho)) in cfg.schedule.spans(cfg.horizon).into_iter().enumerate() {
        let n = tail_of(a, b);
        if rho == 0.25 {
            let start = prev_tail.clone().unwrap_or_else(|| tail_of(0.0, 1.0));
            let (o0, o1) = (ode.totals_at(a), ode.totals_at(b));
            let mut agree = true;
            for i in 0..3 {
                let predicted = o1[i] - o0[i];
                if predicted.abs() > 0.01 * N_USERS {
                    agree &= (n[i] - start[i]).signum() == predicted.signum();
                }
            }
            ok &= agree;
            lines.push(format!("seg {s} rho {rho}: direction agrees {agree}"));
        } else {
            let eq = dynamics::solve_equilibrium(&cfg, rho).unwrap().good_totals();
            let gap = n.iter().zip(&eq).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ok &= gap < OCCUPANCY_TOL;
            lines.push(format!("seg {s} rho {rho}: {gap:.1}"));
        }
        prev_tail = Some(n);
    }
    check(ok, lines.join("; "))
}

fn lyapunov_property() -> Outcome {
    let rho = 0.75;
    let cfg = ScenarioConfig::reference(rho, 1, 100.0);
    let base = MeanField::from_scenario(&cfg, rho).unwrap();
    let dist = solve_equalized(base.servers(), N_USERS, base.lambda_u()).unwrap();
    let t_star = tolerance_for_distribution(&dist.n_star, &[N_USERS]).unwrap().remove(0);
    let model = MeanField::new(
        base.servers().to_vec(),
        vec![(N_USERS, t_star.clone())],
        base.lambda_u(),
        ShiftPolicy::UniformRandomOther,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_rise: f64 = 0.0;
    let mut decayed = true;
    for _ in 0..10 {
        use rand::Rng;
        let mut n: Vec<f64> = dist.n_star.iter().map(|v| v * (1.0 + rng.gen_range(-0.05..0.05))).collect();
        let excess = n.iter().sum::<f64>() - N_USERS;
        let largest = (0..3).max_by(|&a, &b| n[a].total_cmp(&n[b])).unwrap();
        n[largest] -= excess;
        let traj = model.integrate(&PopulationState::from_totals(&n), 1800.0, dynamics::default_step(&cfg)).unwrap();
        let mut prev = f64::INFINITY;
        let mut scale: Option<f64> = None;
        for s in &traj.states {
            let probe = StabilityProbe::new(dist.n_star.clone(), t_star.clone(), s.good_totals(), t_star.clone());
            let v = lyapunov_value(&probe).unwrap();
            // Rises are measured against the starting value: once V sits at
            // round-off level its own scale is meaningless.
            let v0 = *scale.get_or_insert(v);
            if prev.is_finite() && v > prev {
                worst_rise = worst_rise.max((v - prev) / v0);
            }
            prev = v;
        }
        decayed &= prev < 1e-6;
    }
    check(
        worst_rise <= LYAPUNOV_REL_TOL && decayed,
        format!("largest rise {worst_rise:.1e} of V(0); all trajectories settled: {decayed}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_wsls"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let sc = scenario_path("fig3_rho0.5");
    let adaptive = scenario_path("fig4_adaptive");
    for d in &dirs {
        let out = d.path().to_str().unwrap();
        let ok = run_cli(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out, "--seed", "7"])
            && run_cli(&["simulate", "--scenario", adaptive.to_str().unwrap(), "--out", out, "--horizon", "1800"])
            && run_cli(&["compare", "--scenario", sc.to_str().unwrap(), "--out", out, "--horizon", "600"]);
        if !ok {
            return Err("CLI run failed".into());
        }
    }
    let (a, b) = (dir_bytes(dirs[0].path()), dir_bytes(dirs[1].path()));
    check(
        a == b && a.len() == 6,
        format!("{} files, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("queueing oracle equivalence", queueing_oracle),
        ("Fig.-3 equilibrium reproduction", fig3_equilibria),
        ("overload floor", overload_floor),
        ("Theorem-1 loop", theorem1_loop),
        ("hybrid criticality", hybrid_criticality),
        ("adaptive equalization", adaptive_equalization),
        ("multi-seed stability", multi_seed_stability),
        ("schedule tracking", schedule_tracking),
        ("Lyapunov property", lyapunov_property),
        ("determinism", determinism),
    ];
    let results: Vec<(Outcome, f64)> = criteria
        .par_iter()
        .map(|(_, f)| {
            let start = Instant::now();
            let out = f();
            (out, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut failed = 0;
    for (i, ((name, _), (out, secs))) in criteria.iter().zip(&results).enumerate() {
        let (tag, detail) = match out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name} ({secs:.1}s): {detail}", i + 1);
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use quadmpc::invariant_sets::sample_interior;
use quadmpc::model::{idx, STATE_NAMES};
use quadmpc::sim::{
    affine_fit, certify_stability, compare_mpc_lqr, run_closed_loop, sweep_horizon, sweep_weights, ScenarioConfig, Setup,
    TrajectoryLog, WeightKind, WEIGHT_SCALES,
};
use quadmpc::{Error, Parallelism, Vector};
use serde_json::json;

use output::{config_hash, num, opt_num, strings, unix_now, write_trajectory, OutDir, RunManifest, CSV_SCHEMA_VERSION};
use svg::{Chart, Series};

/// Constrained MPC experiments for a quadrotor.
#[derive(Parser)]
#[command(name = "quadmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "QUADMPC_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Rerun a scenario for several horizons and time the solver.
    SweepN {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10, 50, 100])]
        horizons: Vec<usize>,
    },
    /// Rerun a scenario with Q scaled by each factor.
    SweepQ {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = WEIGHT_SCALES)]
        scales: Vec<f64>,
    },
    /// Rerun a scenario with R scaled by each factor.
    SweepR {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = WEIGHT_SCALES)]
        scales: Vec<f64>,
    },
    /// Constrained MPC against the saturated finite-horizon LQR.
    CompareLqr {
        #[command(flatten)]
        common: Common,
    },
    /// Numerical stability certificates on samples of the terminal set.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Export the terminal set as rows of (H | h).
    Xf {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Schema(String),
    Target(String),
    Certificate,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Scenario(_) => Failure::Schema(e.to_string()),
            Error::InfeasibleTarget(_) => Failure::Target(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(format!("i/o error: {e}"))
    }
}

type CmdResult = Result<serde_json::Value, Failure>;

struct Loaded {
    scenario: ScenarioConfig,
    path: Option<String>,
    hash: String,
}

fn load(common: &Common, required: bool) -> Result<Loaded, Failure> {
    let overrides = common.seed.map(|s| format!("seed={s}")).unwrap_or_default();
    let (mut scenario, path, bytes) = match &common.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Schema(format!("cannot read {}: {e}", p.display())))?;
            let s = ScenarioConfig::from_toml_str(&text).map_err(|e| Failure::Schema(format!("{}: {e}", p.display())))?;
            (s, Some(p.display().to_string()), text.into_bytes())
        }
        None if required => return Err(Failure::Schema("--scenario is required for this command".into())),
        None => {
            let s = ScenarioConfig::regulation(vec![0.0; 12], 1);
            let bytes = s.to_toml_string().into_bytes();
            (s, None, bytes)
        }
    };
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    Ok(Loaded { hash: config_hash(&bytes, &overrides), scenario, path })
}

fn state_chart(title: &str, log: &TrajectoryLog, states: &[usize]) -> Chart {
    let series = states
        .iter()
        .map(|&i| Series::new(STATE_NAMES[i], log.records.iter().map(|r| (r.t, r.x[i])).collect()))
        .collect();
    Chart { title: title.into(), x_label: "t [s]".into(), y_label: "state".into(), series }
}

fn input_chart(log: &TrajectoryLog) -> Chart {
    let series = quadmpc::model::INPUT_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| Series::new(*name, log.records.iter().map(|r| (r.t, r.u[i])).collect()))
        .collect();
    Chart { title: "Applied inputs".into(), x_label: "t [s]".into(), y_label: "input".into(), series }
}

fn log_summary(log: &TrajectoryLog) -> serde_json::Value {
    json!({
        "steps": log.records.len() - 1,
        "settled": log.settled(),
        "settling_time_s": log.settling_time(),
        "diverged": log.diverged,
        "fallback_steps": log.fallback_count(),
        "target_holds": log.target_holds,
        "final_state_inf_norm": log.final_state().amax(),
        "peak_input": log.peak_input(),
    })
}

fn cmd_run(common: &Common, loaded: &Loaded, out: &mut OutDir) -> CmdResult {
    let log = run_closed_loop(&loaded.scenario)?;
    write_trajectory(out, "trajectory.csv", &log)?;
    if !common.no_plots {
        let states = [idx::X, idx::Y, idx::Z, idx::PHI, idx::THETA, idx::PSI];
        out.write("states.svg", &state_chart("Pose", &log, &states).render())?;
        out.write("inputs.svg", &input_chart(&log).render())?;
    }
    let mut summary = log_summary(&log);
    if let Some(xhat) = log.records.last().and_then(|r| r.xhat.as_ref()) {
        summary["final_disturbance_estimate"] = json!(xhat[xhat.len() - 1]);
    }
    Ok(summary)
}

fn cmd_sweep_n(common: &Common, loaded: &Loaded, horizons: &[usize], out: &mut OutDir) -> CmdResult {
    // Sequential so that the timings are not distorted by sibling runs.
    let runs = sweep_horizon(&loaded.scenario, horizons, Parallelism::Sequential)?;
    let mut summary_rows = Vec::new();
    let mut timing_rows = Vec::new();
    for r in &runs {
        let log = &r.log;
        summary_rows.push(vec![
            r.horizon.to_string(),
            log.settled().to_string(),
            opt_num(log.settling_time()),
            log.diverged.to_string(),
            log.fallback_count().to_string(),
            num(log.final_state().amax()),
        ]);
        timing_rows.push(vec![r.horizon.to_string(), num(r.mean_solve_time * 1e3), num(r.median_solve_time * 1e3)]);
        write_trajectory(out, &format!("trajectory_N{}.csv", r.horizon), log)?;
    }
    out.write_table(
        "summary.csv",
        &strings(["N", "settled", "settling_time_s", "diverged", "fallback_steps", "final_state_inf_norm"]),
        &summary_rows,
    )?;
    out.write_table("timing.csv", &strings(["N", "mean_solve_ms", "median_solve_ms"]), &timing_rows)?;
    let xs: Vec<f64> = runs.iter().map(|r| r.horizon as f64).collect();
    let ys: Vec<f64> = runs.iter().map(|r| r.mean_solve_time).collect();
    let (a, b, r2) = affine_fit(&xs, &ys);
    if !common.no_plots {
        let series = runs
            .iter()
            .map(|r| Series::new(format!("N = {}", r.horizon), r.log.records.iter().map(|x| (x.t, x.x.amax())).collect()))
            .collect();
        let chart = Chart { title: "State magnitude per horizon".into(), x_label: "t [s]".into(), y_label: "|x|∞".into(), series };
        out.write("states.svg", &chart.render())?;
        let timing = Chart {
            title: "Mean solve time".into(),
            x_label: "N".into(),
            y_label: "ms".into(),
            series: vec![
                Series::new("measured", xs.iter().zip(&ys).map(|(x, y)| (*x, y * 1e3)).collect()),
                Series::new("affine fit", xs.iter().map(|x| (*x, (a + b * x) * 1e3)).collect()),
            ],
        };
        out.write("timing.svg", &timing.render())?;
    }
    Ok(json!({ "horizons": horizons, "fit_intercept_s": a, "fit_slope_s": b, "fit_r2": r2 }))
}

fn cmd_sweep_weights(common: &Common, loaded: &Loaded, kind: WeightKind, scales: &[f64], out: &mut OutDir) -> CmdResult {
    let runs = sweep_weights(&loaded.scenario, kind, scales, Parallelism::Rayon)?;
    let tag = match kind {
        WeightKind::Q => "Q",
        WeightKind::R => "R",
    };
    let mut rows = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        rows.push(vec![
            num(r.scale),
            r.log.settled().to_string(),
            opt_num(r.settling_time),
            num(r.peak_input),
            r.log.fallback_count().to_string(),
        ]);
        write_trajectory(out, &format!("trajectory_{i}.csv"), &r.log)?;
    }
    out.write_table(
        "summary.csv",
        &strings(["scale", "settled", "settling_time_s", "peak_input", "fallback_steps"]),
        &rows,
    )?;
    if !common.no_plots {
        let series = runs
            .iter()
            .map(|r| Series::new(format!("{tag} x {}", r.scale), r.log.records.iter().map(|x| (x.t, x.x.amax())).collect()))
            .collect();
        let chart = Chart { title: format!("State magnitude, {tag} sweep"), x_label: "t [s]".into(), y_label: "|x|∞".into(), series };
        out.write("states.svg", &chart.render())?;
        let series = runs
            .iter()
            .map(|r| Series::new(format!("{tag} x {}", r.scale), r.log.records.iter().map(|x| (x.t, x.u.amax())).collect()))
            .collect();
        let chart = Chart { title: format!("Input magnitude, {tag} sweep"), x_label: "t [s]".into(), y_label: "|u|∞".into(), series };
        out.write("inputs.svg", &chart.render())?;
    }
    Ok(json!({ "weight": tag, "scales": scales }))
}

fn cmd_compare_lqr(common: &Common, loaded: &Loaded, out: &mut OutDir) -> CmdResult {
    let c = compare_mpc_lqr(&loaded.scenario, Parallelism::Rayon)?;
    write_trajectory(out, "mpc.csv", &c.mpc)?;
    write_trajectory(out, "lqr.csv", &c.lqr)?;
    let peak_demand = |log: &TrajectoryLog| log.records.iter().map(|r| r.u_demand.amax()).fold(0.0, f64::max);
    let rows: Vec<Vec<String>> = [("mpc", &c.mpc), ("lqr", &c.lqr)]
        .iter()
        .map(|(name, log)| {
            vec![
                name.to_string(),
                log.settled().to_string(),
                opt_num(log.settling_time()),
                log.diverged.to_string(),
                log.fallback_count().to_string(),
                num(log.peak_input()),
                num(peak_demand(log)),
            ]
        })
        .collect();
    out.write_table(
        "summary.csv",
        &strings(["controller", "settled", "settling_time_s", "diverged", "fallback_steps", "peak_input", "peak_demand"]),
        &rows,
    )?;
    if !common.no_plots {
        let series = [("MPC", &c.mpc), ("saturated LQR", &c.lqr)]
            .iter()
            .flat_map(|(name, log)| {
                [idx::X, idx::THETA].map(|i| {
                    Series::new(format!("{name} {}", STATE_NAMES[i]), log.records.iter().map(|r| (r.t, r.x[i])).collect())
                })
            })
            .collect();
        let chart = Chart { title: "MPC and saturated LQR".into(), x_label: "t [s]".into(), y_label: "state".into(), series };
        out.write("comparison.svg", &chart.render())?;
    }
    Ok(json!({ "mpc": log_summary(&c.mpc), "lqr": log_summary(&c.lqr), "max_state_gap": c.max_state_gap() }))
}

fn cmd_certify(common: &Common, loaded: &Loaded, samples: usize, out: &mut OutDir) -> CmdResult {
    let s = &loaded.scenario;
    let setup = Setup::new(s, Parallelism::Rayon)?;
    let report = certify_stability(&setup, s.disturbance, &setup.cfg.k, samples, s.seed, Parallelism::Rayon)?;
    let rows = vec![
        vec!["controllability_rank".into(), report.controllability_rank.to_string(), (report.controllability_rank == report.state_dim).to_string()],
        vec!["detectability_rank".into(), report.detectability_rank.to_string(), (report.detectability_rank == report.augmented_dim).to_string()],
        vec!["samples".into(), report.samples.to_string(), "true".into()],
        vec!["invariance_failures".into(), report.invariance_failures.to_string(), (report.invariance_failures == 0).to_string()],
        vec!["admissibility_failures".into(), report.admissibility_failures.to_string(), (report.admissibility_failures == 0).to_string()],
        vec!["max_decrease_residual".into(), num(report.max_decrease_residual), (report.max_decrease_residual <= quadmpc::sim::DECREASE_TOL).to_string()],
        vec!["stage_bound_failures".into(), report.stage_bound_failures.to_string(), (report.stage_bound_failures == 0).to_string()],
        vec!["terminal_bound_failures".into(), report.terminal_bound_failures.to_string(), (report.terminal_bound_failures == 0).to_string()],
        vec!["origin_in_state_set".into(), report.origin_in_state_set.to_string(), report.origin_in_state_set.to_string()],
        vec!["origin_in_input_set".into(), report.origin_in_input_set.to_string(), report.origin_in_input_set.to_string()],
        vec!["origin_in_terminal_set".into(), report.origin_in_terminal_set.to_string(), report.origin_in_terminal_set.to_string()],
        vec!["terminal_rows".into(), report.terminal_rows.to_string(), "true".into()],
    ];
    out.write_table("certificate.csv", &strings(["check", "value", "pass"]), &rows)?;
    if !common.no_plots {
        // Decrease along u = −Kx on the same samples, ordered by V_f(x).
        let model = &setup.model;
        let cfg = &setup.cfg;
        let mut pts: Vec<(f64, f64, f64)> = sample_interior(&setup.xf.set, samples, s.seed)?
            .iter()
            .map(|x| {
                let u = -(&cfg.k * x);
                let next: Vector = &model.phi * x + &model.gamma * &u;
                let vf = cfg.terminal_cost(x);
                (vf, cfg.terminal_cost(&next) - vf, -cfg.stage_cost(x, &u))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let chart = Chart {
            title: "Terminal cost decrease on terminal-set samples".into(),
            x_label: "V_f(x)".into(),
            y_label: "value".into(),
            series: vec![
                Series::new("V_f(x+) - V_f(x)", pts.iter().map(|p| (p.0, p.1)).collect()),
                Series::new("-l(x, u)", pts.iter().map(|p| (p.0, p.2)).collect()),
            ],
        };
        out.write("decrease.svg", &chart.render())?;
    }
    let summary = json!({ "passed": report.passed(), "report": report });
    if report.passed() {
        Ok(summary)
    } else {
        eprintln!("certificate failed: {}", serde_json::to_string_pretty(&summary).unwrap_or_default());
        Err(Failure::Certificate)
    }
}

fn cmd_xf(common: &Common, loaded: &Loaded, out: &mut OutDir) -> CmdResult {
    let setup = Setup::new(&loaded.scenario, Parallelism::Rayon)?;
    let xf = &setup.xf;
    let n = xf.set.dim();
    let mut header: Vec<String> = STATE_NAMES.iter().map(|s| format!("H_{s}")).collect();
    header.truncate(n);
    header.push("h".into());
    let rows: Vec<Vec<String>> = (0..xf.set.num_rows())
        .map(|i| {
            let mut row: Vec<String> = xf.set.h_mat().row(i).iter().map(|v| num(*v)).collect();
            row.push(num(xf.set.h_vec()[i]));
            row
        })
        .collect();
    out.write_table("xf.csv", &header, &rows)?;
    let (lo, hi) = xf.set.bounding_box(Parallelism::Rayon)?;
    let box_rows: Vec<Vec<String>> = (0..n).map(|i| vec![STATE_NAMES[i].to_string(), num(lo[i]), num(hi[i])]).collect();
    out.write_table("summary.csv", &strings(["state", "lower", "upper"]), &box_rows)?;
    if !common.no_plots {
        // Slice through the (X, dX) plane with every other state at zero.
        let slice: Vec<(f64, f64)> = (0..=360)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                let mut d = Vector::zeros(n);
                d[idx::X] = a.cos() * (hi[idx::X] - lo[idx::X]) / 2.0;
                d[idx::DX] = a.sin() * (hi[idx::DX] - lo[idx::DX]) / 2.0;
                let r = xf.set.ray_extent(&d);
                (r * d[idx::X], r * d[idx::DX])
            })
            .collect();
        let chart = Chart { title: "Terminal set slice".into(), x_label: "X".into(), y_label: "dX".into(), series: vec![Series::new("X_f", slice)] };
        out.write("xf_slice.svg", &chart.render())?;
    }
    Ok(json!({ "t_star": xf.t_star, "rows_per_step": xf.rows_per_step, "rows": xf.set.num_rows(), "lp_count": xf.lp_count }))
}

fn execute(name: &str, common: &Common, required: bool, f: impl FnOnce(&Loaded, &mut OutDir) -> CmdResult) -> Result<(), Failure> {
    let loaded = load(common, required)?;
    let started = unix_now();
    let clock = Instant::now();
    let mut out = OutDir::create(&common.out)?;
    let result = f(&loaded, &mut out);
    let summary = match &result {
        Ok(v) => v.clone(),
        Err(Failure::Certificate) => json!({ "passed": false }),
        Err(_) => return result.map(|_| ()),
    };
    let manifest = RunManifest {
        command: name.into(),
        scenario: loaded.path.clone(),
        output_dir: out.root().display().to_string(),
        files: out.files().to_vec(),
        config_hash: loaded.hash.clone(),
        csv_schema: CSV_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Other(e.to_string()))?;
    out.write("manifest.json", &(text + "\n"))?;
    println!("{}: wrote {} files to {}", name, out.files().len(), out.root().display());
    result.map(|_| ())
}

fn dispatch(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { common } => execute("run", common, true, |l, o| cmd_run(common, l, o)),
        Command::SweepN { common, horizons } => execute("sweep-n", common, true, |l, o| cmd_sweep_n(common, l, horizons, o)),
        Command::SweepQ { common, scales } => {
            execute("sweep-q", common, true, |l, o| cmd_sweep_weights(common, l, WeightKind::Q, scales, o))
        }
        Command::SweepR { common, scales } => {
            execute("sweep-r", common, true, |l, o| cmd_sweep_weights(common, l, WeightKind::R, scales, o))
        }
        Command::CompareLqr { common } => execute("compare-lqr", common, true, |l, o| cmd_compare_lqr(common, l, o)),
        Command::Certify { common, samples } => execute("certify", common, false, |l, o| cmd_certify(common, l, *samples, o)),
        Command::Xf { common } => execute("xf", common, false, |l, o| cmd_xf(common, l, o)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Target(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Certificate) => ExitCode::from(1),
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

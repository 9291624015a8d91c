//! `gaspower` — transient gas/power co-simulation runs from scenario files.
//!
//! Exit codes: 0 success, 2 scenario validation, 3 solver failure, 4 i/o.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gaspower::scenario::Scenario;
use gaspower::sim;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gaspower",
    about = "Transient co-simulation of gas pipeline networks and electric power systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// scenario file (TOML)
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    /// override the simulated span (s)
    #[arg(long, value_name = "S")]
    t_end: Option<f64>,
    /// override the gas grid cell width (m)
    #[arg(long, value_name = "M")]
    dx: Option<f64>,
    /// override the absolute tolerance
    #[arg(long, value_name = "X")]
    atol: Option<f64>,
    /// override the relative tolerance
    #[arg(long, value_name = "X")]
    rtol: Option<f64>,
    /// override the spatial scheme
    #[arg(long, value_name = "SCHEME", value_parser = ["weno3", "kt"])]
    scheme: Option<String>,
    /// output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one transient simulation and write the trajectory, event log
    /// and run summary
    Simulate(CommonArgs),
    /// Run the solver against the characteristics benchmark and write the
    /// per-channel RMSE table
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// benchmark grid cell width (m)
        #[arg(long, value_name = "M")]
        oracle_dx: f64,
    },
    /// Independent runs over one swept parameter, recording the critical
    /// time of the scenario's first event watch per point
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// swept parameter
        #[arg(long, value_name = "PARAM", value_parser = ["fault-position", "friction", "diameter", "hole-ratio"])]
        param: String,
        /// comma-separated grid values
        #[arg(long, value_name = "V1,V2,...", value_delimiter = ',')]
        values: Vec<f64>,
        /// worker threads (defaults to the number of cores)
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// Solve and print the steady state
    Steady(CommonArgs),
}

fn load_scenario(common: &CommonArgs) -> anyhow::Result<Scenario> {
    let mut sc = Scenario::from_path(&common.scenario)
        .with_context(|| format!("loading {}", common.scenario.display()))?;
    if let Some(t_end) = common.t_end {
        sc.t_end = t_end;
    }
    if let Some(dx) = common.dx {
        sc.gas.dx = dx;
        for p in &mut sc.gas.pipes {
            p.dx = None;
        }
    }
    if let Some(atol) = common.atol {
        sc.solver.control.atol = atol;
    }
    if let Some(rtol) = common.rtol {
        sc.solver.control.rtol = rtol;
    }
    if let Some(scheme) = &common.scheme {
        sc.solver.scheme = match scheme.as_str() {
            "kt" => gaspower::gasnet::SpatialScheme::Kt,
            _ => gaspower::gasnet::SpatialScheme::Weno3,
        };
    }
    sc.validate()?;
    Ok(sc)
}

fn ensure_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_simulate(common: &CommonArgs) -> anyhow::Result<()> {
    let sc = load_scenario(common)?;
    ensure_out(&common.out)?;
    let artifacts = sim::simulate(&sc, &sim::SimOptions::default())?;
    artifacts
        .trajectory
        .write_csv(common.out.join("trajectory.csv"))?;
    std::fs::write(common.out.join("events.log"), artifacts.event_log())?;
    let summary = format!(
        "t_end            {:.6} s\naccepted steps   {}\nrejected steps   {}\nlu factorizations {}\njacobian refreshes {}\nresidual evals   {}\nevent restarts   {}\nwall time        {:.3} s\n",
        artifacts.final_time,
        artifacts.stats.accepted,
        artifacts.stats.rejected,
        artifacts.stats.lu_factorizations,
        artifacts.stats.jacobian_refreshes,
        artifacts.stats.residual_evals,
        artifacts.stats.restarts,
        artifacts.wall_seconds,
    );
    std::fs::write(common.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    for line in artifacts.event_log().lines() {
        println!("{line}");
    }
    println!("wrote {}", common.out.join("trajectory.csv").display());
    Ok(())
}

fn run_compare(common: &CommonArgs, oracle_dx: f64) -> anyhow::Result<()> {
    let sc = load_scenario(common)?;
    ensure_out(&common.out)?;
    let report = sim::compare(&sc, oracle_dx)?;
    let mut csv = String::from("channel,rmse,normalized,unit\n");
    println!("{:<12} {:>12} {:>12}  unit", "channel", "rmse", "normalized");
    for row in &report.rows {
        println!(
            "{:<12} {:>12.6e} {:>12.6e}  {}",
            row.name, row.rmse, row.normalized, row.unit
        );
        csv.push_str(&format!(
            "{},{:.9e},{:.9e},{}\n",
            row.name, row.rmse, row.normalized, row.unit
        ));
    }
    std::fs::write(common.out.join("rmse.csv"), csv)?;
    report
        .solver
        .write_csv(common.out.join("solver_resampled.csv"))?;
    println!("wrote {}", common.out.join("rmse.csv").display());
    Ok(())
}

fn run_sweep(
    common: &CommonArgs,
    param: &str,
    values: &[f64],
    jobs: Option<usize>,
) -> anyhow::Result<()> {
    let sc = load_scenario(common)?;
    ensure_out(&common.out)?;
    let param = sim::SweepParam::parse(param).context("unknown sweep parameter")?;
    let run = || sim::sweep(&sc, param, values);
    #[cfg(feature = "parallel")]
    let report = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(run),
        None => run(),
    };
    #[cfg(not(feature = "parallel"))]
    let report = {
        let _ = jobs;
        run()
    };
    let mut csv = String::from("requested,applied,t_cr,status\n");
    for p in &report.points {
        let (t_cr, status) = match (&p.t_cr, &p.error) {
            (Some(t), _) => (format!("{t:.6}"), "ok".to_string()),
            (None, Some(e)) => (String::new(), e.replace('\n', "; ")),
            (None, None) => (String::new(), "no_event".into()),
        };
        println!("{:>12.3} -> t_cr = {}  [{}]", p.applied, if t_cr.is_empty() { "-" } else { &t_cr }, status);
        csv.push_str(&format!("{},{},{},{}\n", p.requested, p.applied, t_cr, status));
    }
    std::fs::write(common.out.join("sweep.csv"), csv)?;
    println!("wrote {}", common.out.join("sweep.csv").display());
    Ok(())
}

fn run_steady(common: &CommonArgs) -> anyhow::Result<()> {
    let sc = load_scenario(common)?;
    ensure_out(&common.out)?;
    let rows = sim::steady(&sc)?;
    let mut csv = String::from("channel,value\n");
    for (name, value) in &rows {
        println!("{name:<16} {value:.9}");
        csv.push_str(&format!("{name},{value:.9}\n"));
    }
    std::fs::write(common.out.join("steady.csv"), csv)?;
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gaspower::Error>() {
            return match e {
                gaspower::Error::Scenario(_) => 2,
                gaspower::Error::Io(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<gaspower::scenario::ScenarioError>() {
            return match e {
                gaspower::scenario::ScenarioError::Io(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<gaspower::rosenbrock::SolveError>().is_some()
            || cause.downcast_ref::<gaspower::daesys::DaeError>().is_some()
            || cause.downcast_ref::<gaspower::moc::MocError>().is_some()
        {
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GASGRID_LOG")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => run_simulate(common),
        Command::Compare { common, oracle_dx } => run_compare(common, *oracle_dx),
        Command::Sweep {
            common,
            param,
            values,
            jobs,
        } => run_sweep(common, param, values, *jobs),
        Command::Steady(common) => run_steady(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

//! `sysid` command line: simulate driving data, identify tire parameters
//! (iterative or NLS), sweep noise levels, and run the tire adaptation
//! scenario.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sysid::config::ExperimentConfig;
use sysid::error::{Result, SysidError};
use sysid::run::{
    prepare_data, run_adaptation, run_identify_from, run_nls, run_sweep, write_sweep_csv,
    write_sweep_svg, IdentifyOutput,
};

#[derive(Parser)]
#[command(name = "sysid", about = "Pacejka tire parameter identification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; falls back to SYSID_SEED, then to the config's sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise multiplier; overrides the config's sim.eta.
    #[arg(long)]
    eta: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a driving run; write noisy train and clean test CSVs.
    Simulate(Common),
    /// Iterative identification; writes report.json.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Number of identification iterations; overrides solver.n_iter.
        #[arg(long)]
        iters: Option<usize>,
        /// Start from the parameters identified in a previous report.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Direct NLS baseline identification; writes report.json.
    Nls(Common),
    /// Both methods over the configured eta grid and seeds; writes sweep.csv.
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write a static line chart (sweep.svg).
        #[arg(long)]
        svg: bool,
    },
    /// Tire adaptation scenario; writes report.json.
    Adaptation {
        #[command(flatten)]
        common: Common,
        /// Number of adaptation iterations; overrides solver.n_iter.
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn resolve_seed(flag: Option<u64>, cfg: &ExperimentConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(env) = std::env::var("SYSID_SEED") {
        return env.parse().map_err(|_| {
            SysidError::Config(format!("SYSID_SEED is not a valid seed: {env:?}"))
        });
    }
    Ok(cfg.sim.seed)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| SysidError::Data(format!("serialize report: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn load_common(common: &Common) -> Result<(ExperimentConfig, u64, f64)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = resolve_seed(common.seed, &cfg)?;
    let eta = common.eta.unwrap_or(cfg.sim.eta);
    std::fs::create_dir_all(&common.out)?;
    Ok((cfg, seed, eta))
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let (cfg, seed, eta) = load_common(common)?;
    let data = prepare_data(&cfg, seed, eta)?;
    // The unsplit noisy training log plus the validation slice is the full
    // collected run; write the training portion and the clean test run.
    let train_path = common.out.join("train.csv");
    let test_path = common.out.join("test.csv");
    data.train_noisy.to_csv(&train_path)?;
    data.test_clean.to_csv(&test_path)?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        train_path.display(),
        data.train_noisy.records.len(),
        test_path.display(),
        data.test_clean.records.len()
    );
    Ok(())
}

fn cmd_identify(common: &Common, iters: Option<usize>, resume: Option<&Path>) -> Result<()> {
    let (cfg, seed, eta) = load_common(common)?;
    let n_iter = iters.unwrap_or(cfg.solver.n_iter);
    let init = match resume {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let prev: IdentifyOutput = serde_json::from_str(&text)
                .map_err(|e| SysidError::Data(format!("parse resume report {path:?}: {e}")))?;
            prev.identified.into()
        }
        None => cfg.tires_init(),
    };
    let data = prepare_data(&cfg, seed, eta)?;
    let out = run_identify_from(&cfg, &data, &init, seed, eta, n_iter)?;
    let path = common.out.join("report.json");
    write_json(&out, &path)?;
    println!(
        "identified in {} iterations ({} skipped): test RMSE v_y {:.6}, omega {:.6} -> {}",
        out.report.as_ref().map(|r| r.iterations.len()).unwrap_or(0),
        out.report.as_ref().map(|r| r.skipped.len()).unwrap_or(0),
        out.test_rmse_vy,
        out.test_rmse_omega,
        path.display()
    );
    Ok(())
}

fn cmd_nls(common: &Common) -> Result<()> {
    let (cfg, seed, eta) = load_common(common)?;
    let out = run_nls(&cfg, seed, eta)?;
    let path = common.out.join("report.json");
    write_json(&out, &path)?;
    println!(
        "NLS fit: test RMSE v_y {:.6}, omega {:.6} -> {}",
        out.test_rmse_vy,
        out.test_rmse_omega,
        path.display()
    );
    Ok(())
}

fn cmd_noise_sweep(common: &Common, jobs: usize, svg: bool) -> Result<()> {
    let (cfg, _, _) = load_common(common)?;
    let outcome = run_sweep(&cfg, jobs)?;
    for f in &outcome.failures {
        eprintln!("sweep cell failed: {f}");
    }
    let csv_path = common.out.join("sweep.csv");
    write_sweep_csv(&outcome.rows, &csv_path)?;
    println!(
        "swept {} cells ({} failed) -> {}",
        outcome.cells,
        outcome.failures.len(),
        csv_path.display()
    );
    if svg {
        let svg_path = common.out.join("sweep.svg");
        write_sweep_svg(&outcome.rows, &svg_path)?;
        println!("chart -> {}", svg_path.display());
    }
    Ok(())
}

fn cmd_adaptation(common: &Common, iters: Option<usize>) -> Result<()> {
    let (cfg, seed, _) = load_common(common)?;
    let n_iter = iters.unwrap_or(cfg.solver.n_iter);
    let out = run_adaptation(&cfg, seed, n_iter)?;
    let path = common.out.join("report.json");
    write_json(&out, &path)?;
    println!(
        "adaptation: RMSE v_y {:.6} -> {:.6}, omega {:.6} -> {:.6} ({} iterations) -> {}",
        out.pre_rmse_vy,
        out.post_rmse_vy,
        out.pre_rmse_omega,
        out.post_rmse_omega,
        out.report.iterations.len(),
        path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(c) => cmd_simulate(c),
        Cmd::Identify { common, iters, resume } => {
            cmd_identify(common, *iters, resume.as_deref())
        }
        Cmd::Nls(c) => cmd_nls(c),
        Cmd::NoiseSweep { common, jobs, svg } => cmd_noise_sweep(common, *jobs, *svg),
        Cmd::Adaptation { common, iters } => cmd_adaptation(common, *iters),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

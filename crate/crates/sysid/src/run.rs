//! Experiment drivers behind the CLI commands: data preparation, the
//! iterative and NLS identification runs, the noise sweep, and the tire
//! adaptation scenario.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TireSection};
use crate::error::{Result, SysidError};
use crate::ident::{iterate, nls_identify, one_step_rmse, IdentOptions, IdentificationReport};
use crate::model::PacejkaParams;
use crate::pipeline::{filter_dataset, mirror_augment, split};
use crate::sim::{inject_noise, simulate_run, RawDataset, SimConfig};
use crate::track::Track;

/// Seed offset for the independent clean test run.
pub const TEST_SEED_OFFSET: u64 = 0x7465_7374;
/// Leading fraction of the noisy log used for training; the tail is the
/// validation slice that gates the iterative fits.
pub const TRAIN_FRACTION: f64 = 0.85;

/// Everything an identification method consumes for one (seed, eta) cell.
pub struct PreparedData {
    /// Noisy training portion of the log, unfiltered.
    pub train_noisy: RawDataset,
    /// Filtered + mirror-augmented training data.
    pub processed: RawDataset,
    /// Filtered noisy validation slice (gates the iterative fits).
    pub validation: RawDataset,
    /// Clean log from an independent seed, for final evaluation.
    pub test_clean: RawDataset,
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64, eta: f64) -> Result<PreparedData> {
    let track = Track::from_csv(&cfg.sim.track)?;
    let gt = cfg.tires_gt();
    let mut sim_cfg = cfg.sim_config();
    sim_cfg.seed = seed;
    sim_cfg.eta = eta;
    let clean = simulate_run(&track, &cfg.vehicle, &gt, &sim_cfg)?;
    let noisy = inject_noise(&clean, eta, seed)?;
    let test_cfg = SimConfig {
        seed: seed.wrapping_add(TEST_SEED_OFFSET),
        eta: 0.0,
        ..sim_cfg
    };
    let test_clean = simulate_run(&track, &cfg.vehicle, &gt, &test_cfg)?;
    let (train_raw, val_raw) = split(&noisy, TRAIN_FRACTION)?;
    let processed = mirror_augment(&filter_dataset(&train_raw, cfg.sim.cutoff_hz)?);
    let validation = filter_dataset(&val_raw, cfg.sim.cutoff_hz)?;
    Ok(PreparedData {
        train_noisy: train_raw,
        processed,
        validation,
        test_clean,
    })
}

/// Report written by `identify` and `nls`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyOutput {
    pub command: String,
    pub seed: u64,
    pub eta: f64,
    pub initial: TireSection,
    pub identified: TireSection,
    /// One-step RMSE of the identified parameters on the clean test run.
    pub test_rmse_vy: f64,
    pub test_rmse_omega: f64,
    /// Full iteration history (iterative method only).
    pub report: Option<IdentificationReport>,
    /// Embedded configuration for provenance.
    pub config: ExperimentConfig,
    /// Total wall time (excluded from determinism comparisons).
    pub elapsed_s: f64,
}

pub fn ident_options(cfg: &ExperimentConfig, n_iter: usize) -> IdentOptions {
    IdentOptions {
        n_iter,
        train: cfg.train,
        solver: cfg.solver_config(),
        early_stop: cfg.solver.early_stop,
    }
}

/// The iterative method on one prepared cell, starting from `init`.
pub fn run_identify_from(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    init: &PacejkaParams,
    seed: u64,
    eta: f64,
    n_iter: usize,
) -> Result<IdentifyOutput> {
    let started = Instant::now();
    let opts = ident_options(cfg, n_iter);
    let report = iterate(
        &data.processed,
        &cfg.vehicle,
        init,
        &opts,
        Some(&data.validation),
    )?;
    let final_params = report.final_params();
    let (rv, ro) = one_step_rmse(&final_params, &cfg.vehicle, &data.test_clean)?;
    Ok(IdentifyOutput {
        command: "identify".into(),
        seed,
        eta,
        initial: (*init).into(),
        identified: final_params.into(),
        test_rmse_vy: rv,
        test_rmse_omega: ro,
        report: Some(report),
        config: cfg.clone(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

pub fn run_identify(cfg: &ExperimentConfig, seed: u64, eta: f64) -> Result<IdentifyOutput> {
    let data = prepare_data(cfg, seed, eta)?;
    run_identify_from(cfg, &data, &cfg.tires_init(), seed, eta, cfg.solver.n_iter)
}

/// The NLS baseline on one prepared cell.
pub fn run_nls(cfg: &ExperimentConfig, seed: u64, eta: f64) -> Result<IdentifyOutput> {
    let started = Instant::now();
    let data = prepare_data(cfg, seed, eta)?;
    let init = cfg.tires_init();
    let params = nls_identify(&data.processed, &cfg.vehicle, &init, &cfg.solver_config())?;
    let (rv, ro) = one_step_rmse(&params, &cfg.vehicle, &data.test_clean)?;
    Ok(IdentifyOutput {
        command: "nls".into(),
        seed,
        eta,
        initial: init.into(),
        identified: params.into(),
        test_rmse_vy: rv,
        test_rmse_omega: ro,
        report: None,
        config: cfg.clone(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// One aggregated sweep row per (eta, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub method: String,
    pub rmse_vy_mean: f64,
    pub rmse_vy_std: f64,
    pub rmse_omega_mean: f64,
    pub rmse_omega_std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<String>,
    pub cells: usize,
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run both methods over the config's eta grid and seed list.
///
/// Cells run on up to `jobs` worker threads, each fully isolated; failures
/// are recorded and the sweep continues. More than 30% failed cells is a
/// numerical error.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutcome> {
    let jobs = jobs.max(1);
    let mut cells = Vec::new();
    for &eta in &cfg.sim.eta_grid {
        for &seed in &cfg.sim.seeds {
            cells.push((eta, seed));
        }
    }
    let n_cells = cells.len();
    // (eta, seed) -> per-method (rmse_vy, rmse_omega), or a failure note.
    type CellResult = (f64, u64, std::result::Result<[(f64, f64); 2], String>);
    let queue = Mutex::new(cells);
    let results: Mutex<Vec<CellResult>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n_cells.max(1)) {
            scope.spawn(|| loop {
                let cell = queue.lock().unwrap().pop();
                let Some((eta, seed)) = cell else { break };
                let outcome = run_cell(cfg, seed, eta);
                results.lock().unwrap().push((eta, seed, outcome));
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &eta in &cfg.sim.eta_grid {
        let mut per_method: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for (e, seed, res) in &results {
            if e != &eta {
                continue;
            }
            match res {
                Ok(pair) => {
                    per_method[0].push(pair[0]);
                    per_method[1].push(pair[1]);
                }
                Err(msg) => failures.push(format!("eta {eta} seed {seed}: {msg}")),
            }
        }
        for (m, name) in ["iterative", "nls"].iter().enumerate() {
            if per_method[m].is_empty() {
                continue;
            }
            let vy: Vec<f64> = per_method[m].iter().map(|p| p.0).collect();
            let om: Vec<f64> = per_method[m].iter().map(|p| p.1).collect();
            let (vm, vs) = mean_std(&vy);
            let (om_m, om_s) = mean_std(&om);
            rows.push(SweepRow {
                eta,
                method: name.to_string(),
                rmse_vy_mean: vm,
                rmse_vy_std: vs,
                rmse_omega_mean: om_m,
                rmse_omega_std: om_s,
            });
        }
    }
    if failures.len() * 10 > n_cells * 3 {
        return Err(SysidError::Numerical(format!(
            "{} of {} sweep cells failed: {}",
            failures.len(),
            n_cells,
            failures.join("; ")
        )));
    }
    Ok(SweepOutcome { rows, failures, cells: n_cells })
}

fn run_cell(cfg: &ExperimentConfig, seed: u64, eta: f64) -> std::result::Result<[(f64, f64); 2], String> {
    let go = || -> Result<[(f64, f64); 2]> {
        let data = prepare_data(cfg, seed, eta)?;
        let init = cfg.tires_init();
        let ours = run_identify_from(cfg, &data, &init, seed, eta, cfg.solver.n_iter)?;
        let nls = nls_identify(&data.processed, &cfg.vehicle, &init, &cfg.solver_config())?;
        let (nv, no) = one_step_rmse(&nls, &cfg.vehicle, &data.test_clean)?;
        Ok([(ours.test_rmse_vy, ours.test_rmse_omega), (nv, no)])
    };
    go().map_err(|e| e.to_string())
}

/// `eta,method,...` CSV with the documented schema.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "eta",
        "method",
        "rmse_vy_mean",
        "rmse_vy_std",
        "rmse_omega_mean",
        "rmse_omega_std",
    ])
    .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
    for r in rows {
        w.write_record([
            format!("{:.17}", r.eta),
            r.method.clone(),
            format!("{:.17}", r.rmse_vy_mean),
            format!("{:.17}", r.rmse_vy_std),
            format!("{:.17}", r.rmse_omega_mean),
            format!("{:.17}", r.rmse_omega_std),
        ])
        .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Static SVG line chart: channel-averaged mean RMSE vs eta, one polyline
/// per method.
pub fn write_sweep_svg(rows: &[SweepRow], path: &Path) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let series: Vec<(&str, &str, Vec<(f64, f64)>)> = ["iterative", "nls"]
        .iter()
        .zip(["#1f77b4", "#d62728"])
        .map(|(method, color)| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == *method)
                .map(|r| (r.eta, (r.rmse_vy_mean + r.rmse_omega_mean) / 2.0))
                .collect();
            (*method, color, pts)
        })
        .collect();
    let x_max = rows.iter().map(|r| r.eta).fold(0.0f64, f64::max).max(1e-9);
    let y_max = series
        .iter()
        .flat_map(|(_, _, pts)| pts.iter().map(|p| p.1))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let sx = |x: f64| M + x / x_max * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y_max * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - M,
        W - M
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">noise multiplier eta</text>\n\
         <text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">mean one-step RMSE</text>\n",
        W / 2.0,
        H - 15.0,
        H / 2.0,
        H / 2.0
    ));
    for (method, color, pts) in &series {
        if pts.is_empty() {
            continue;
        }
        let path_d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path_d.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{method}</text>\n",
            W - M + 5.0,
            sy(pts.last().unwrap().1)
        ));
    }
    // Axis tick labels at the extremes.
    svg.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" text-anchor=\"middle\">0</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_max:.1}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_max:.3}</text>\n",
        H - M + 20.0,
        W - M,
        H - M + 20.0,
        M - 5.0,
        M + 5.0
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Report written by `adaptation`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationOutput {
    pub command: String,
    pub seed: u64,
    /// Starting (previously identified) parameters.
    pub initial: TireSection,
    pub adapted: TireSection,
    /// One-step RMSE of the initial parameters on the clean test run.
    pub pre_rmse_vy: f64,
    pub pre_rmse_omega: f64,
    /// Same, after the adaptation iterations.
    pub post_rmse_vy: f64,
    pub post_rmse_omega: f64,
    pub report: IdentificationReport,
    pub config: ExperimentConfig,
    pub elapsed_s: f64,
}

/// Tire adaptation: data comes from `tires_gt` (the tires the car actually
/// runs on), identification starts from `tires_init` (the model the
/// controller had) and runs the configured, typically small, number of
/// iterations.
pub fn run_adaptation(cfg: &ExperimentConfig, seed: u64, n_iter: usize) -> Result<AdaptationOutput> {
    let started = Instant::now();
    let data = prepare_data(cfg, seed, cfg.sim.eta)?;
    let init = cfg.tires_init();
    let (pre_v, pre_o) = one_step_rmse(&init, &cfg.vehicle, &data.test_clean)?;
    let out = run_identify_from(cfg, &data, &init, seed, cfg.sim.eta, n_iter)?;
    Ok(AdaptationOutput {
        command: "adaptation".into(),
        seed,
        initial: init.into(),
        adapted: out.identified,
        pre_rmse_vy: pre_v,
        pre_rmse_omega: pre_o,
        post_rmse_vy: out.test_rmse_vy,
        post_rmse_omega: out.test_rmse_omega,
        report: out.report.expect("iterative run always carries a report"),
        config: cfg.clone(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_default_config(dir: &Path) -> std::path::PathBuf {
        let track = crate::track::circle_track(2.5, 100, 2.5);
        track.to_csv(&dir.join("t.csv")).unwrap();
        let text = r#"
[vehicle]
m = 3.5
I_z = 0.047
l_f = 0.16
l_r = 0.17
[tires_gt]
B_f = 4.0
C_f = 1.45
D_f = 17.0
E_f = 0.6
B_r = 4.5
C_r = 1.35
D_r = 18.5
E_r = 0.4
[tires_init]
B_f = 5.0
C_f = 1.5
D_f = 14.15
E_f = 0.0
B_r = 5.0
C_r = 1.5
D_r = 13.31
E_r = 0.0
[sim]
track = "t.csv"
duration = 10.0
eta_grid = [0.0, 0.4]
seeds = [0, 1]
"#;
        let p = dir.join("exp.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn identify_produces_a_self_contained_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&write_default_config(dir.path())).unwrap();
        let out = run_identify(&cfg, 0, 0.0).unwrap();
        assert_eq!(out.command, "identify");
        assert!(out.report.is_some());
        assert!(out.test_rmse_vy.is_finite() && out.test_rmse_omega.is_finite());
        // Roundtrips through JSON.
        let json = serde_json::to_string(&out).unwrap();
        let back: IdentifyOutput = serde_json::from_str(&json).unwrap();
        assert_eq!(back.identified.d_f, out.identified.d_f);
    }

    #[test]
    fn identify_is_deterministic_modulo_timing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&write_default_config(dir.path())).unwrap();
        let a = run_identify(&cfg, 3, 0.2).unwrap();
        let b = run_identify(&cfg, 3, 0.2).unwrap();
        let strip = |o: &IdentifyOutput| {
            let mut v = serde_json::to_value(o).unwrap();
            v.as_object_mut().unwrap().remove("elapsed_s");
            v["report"].as_object_mut().unwrap().remove("timings_s");
            v
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn sweep_emits_rows_for_both_methods_and_a_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&write_default_config(dir.path())).unwrap();
        let outcome = run_sweep(&cfg, 2).unwrap();
        assert_eq!(outcome.cells, 4);
        // 2 etas x 2 methods.
        assert_eq!(outcome.rows.len(), 4);
        let csv_path = dir.path().join("sweep.csv");
        write_sweep_csv(&outcome.rows, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("eta,method,rmse_vy_mean,rmse_vy_std,rmse_omega_mean,rmse_omega_std"));
        let svg_path = dir.path().join("sweep.svg");
        write_sweep_svg(&outcome.rows, &svg_path).unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("<polyline") && svg.contains("</svg>"));
    }
}

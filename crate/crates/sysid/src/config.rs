//! TOML experiment configuration: sections `vehicle`, `tires_gt`,
//! `tires_init`, `sim`, `train`, `solver`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};
use crate::model::{AxleTire, PacejkaParams, VehicleParams};
use crate::net::TrainConfig;
use crate::sim::SimConfig;
use crate::solver::SolverConfig;

/// Flat per-axle tire keys as they appear in config files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TireSection {
    #[serde(rename = "B_f")]
    pub b_f: f64,
    #[serde(rename = "C_f")]
    pub c_f: f64,
    #[serde(rename = "D_f")]
    pub d_f: f64,
    #[serde(rename = "E_f")]
    pub e_f: f64,
    #[serde(rename = "B_r")]
    pub b_r: f64,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    #[serde(rename = "D_r")]
    pub d_r: f64,
    #[serde(rename = "E_r")]
    pub e_r: f64,
}

impl From<TireSection> for PacejkaParams {
    fn from(t: TireSection) -> PacejkaParams {
        PacejkaParams {
            front: AxleTire { b: t.b_f, c: t.c_f, d: t.d_f, e: t.e_f },
            rear: AxleTire { b: t.b_r, c: t.c_r, d: t.d_r, e: t.e_r },
        }
    }
}

impl From<PacejkaParams> for TireSection {
    fn from(p: PacejkaParams) -> TireSection {
        TireSection {
            b_f: p.front.b,
            c_f: p.front.c,
            d_f: p.front.d,
            e_f: p.front.e,
            b_r: p.rear.b,
            c_r: p.rear.c,
            d_r: p.rear.d,
            e_r: p.rear.e,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSection {
    #[serde(rename = "T_s", default = "default_t_s")]
    pub t_s: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bound")]
    pub bound: f64,
    /// Waypoint CSV path, relative to the config file's directory.
    pub track: PathBuf,
    #[serde(default = "default_cutoff")]
    pub cutoff_hz: f64,
    /// Noise multipliers for the sweep command.
    #[serde(default = "default_eta_grid")]
    pub eta_grid: Vec<f64>,
    /// Seeds for the sweep command.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_t_s() -> f64 {
    0.02
}
fn default_duration() -> f64 {
    30.0
}
fn default_lookahead() -> f64 {
    1.0
}
fn default_bound() -> f64 {
    50.0
}
fn default_cutoff() -> f64 {
    5.0
}
fn default_eta_grid() -> Vec<f64> {
    (0..8).map(|i| 0.2 * i as f64).collect()
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSection {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default)]
    pub early_stop: bool,
}

fn default_max_iters() -> usize {
    200
}
fn default_n_iter() -> usize {
    6
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            max_iters: default_max_iters(),
            n_iter: default_n_iter(),
            early_stop: false,
        }
    }
}

fn default_train() -> TrainConfig {
    TrainConfig::default()
}

/// Whole experiment configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub vehicle: VehicleParams,
    pub tires_gt: TireSection,
    pub tires_init: TireSection,
    pub sim: SimSection,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub solver: SolverSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SysidError::Config(format!("cannot read config {path:?}: {e}"))
        })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| SysidError::Config(format!("config {path:?}: {e}")))?;
        // Resolve the track path against the config location.
        if cfg.sim.track.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.sim.track = dir.join(&cfg.sim.track);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if !self.sim.track.exists() {
            return Err(SysidError::Config(format!(
                "track file {:?} does not exist",
                self.sim.track
            )));
        }
        if self.sim.seeds.is_empty() {
            return Err(SysidError::Config("sim.seeds must be non-empty".into()));
        }
        self.sim_config().validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t_s: self.sim.t_s,
            duration: self.sim.duration,
            lookahead: self.sim.lookahead,
            eta: self.sim.eta,
            seed: self.sim.seed,
            bound: self.sim.bound,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.solver.max_iters,
            ..SolverConfig::default()
        }
    }

    pub fn tires_gt(&self) -> PacejkaParams {
        self.tires_gt.into()
    }

    pub fn tires_init(&self) -> PacejkaParams {
        self.tires_init.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let dir = tempfile::tempdir().unwrap();
        let track_path = dir.path().join("t.csv");
        crate::track::circle_track(2.5, 32, 2.5)
            .to_csv(&track_path)
            .unwrap();
        let toml_text = r#"
[vehicle]
m = 3.5
I_z = 0.047
l_f = 0.16
l_r = 0.17

[tires_gt]
B_f = 9.5
C_f = 1.45
D_f = 17.0
E_f = 0.6
B_r = 10.5
C_r = 1.35
D_r = 18.5
E_r = 0.4

[tires_init]
B_f = 5.0
C_f = 1.5
D_f = 14.2
E_f = 0.0
B_r = 5.0
C_r = 1.5
D_r = 13.3
E_r = 0.0

[sim]
track = "t.csv"
duration = 10.0
"#;
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(&cfg_path, toml_text).unwrap();
        let cfg = ExperimentConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.sim.t_s, 0.02);
        assert_eq!(cfg.solver.n_iter, 6);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.tires_gt().front.d, 17.0);
        assert!(cfg.sim.track.exists());
    }

    #[test]
    fn missing_track_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let toml_text = r#"
[vehicle]
m = 3.5
I_z = 0.047
l_f = 0.16
l_r = 0.17
[tires_gt]
B_f = 9.5
C_f = 1.45
D_f = 17.0
E_f = 0.6
B_r = 10.5
C_r = 1.35
D_r = 18.5
E_r = 0.4
[tires_init]
B_f = 5.0
C_f = 1.5
D_f = 14.2
E_f = 0.0
B_r = 5.0
C_r = 1.5
D_r = 13.3
E_r = 0.0
[sim]
track = "nope.csv"
"#;
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(&cfg_path, toml_text).unwrap();
        assert!(ExperimentConfig::load(&cfg_path).is_err());
    }
}

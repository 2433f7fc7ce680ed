//! Closed-loop data generation: a ground-truth single-track vehicle driven
//! around a waypoint track by Pure Pursuit, plus measurement noise injection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};
use crate::model::{
    euler_step, wrap_angle, ControlInput, LateralState, PacejkaParams, Pose, VehicleParams,
};
use crate::track::{pure_pursuit_steer, Track};

/// One logged sample. States and inputs at step k, before stepping to k+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
    pub delta: f64,
}

/// Uniformly sampled driving log. `block_starts` marks the first index of
/// each contiguous block; state pairing (k, k+1) never crosses a block
/// boundary (mirror augmentation appends a second block).
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub records: Vec<Record>,
    pub t_s: f64,
    pub block_starts: Vec<usize>,
}

impl RawDataset {
    pub fn new(records: Vec<Record>, t_s: f64) -> RawDataset {
        RawDataset { records, t_s, block_starts: vec![0] }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Contiguous blocks as index ranges.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.block_starts.len());
        for (i, &s) in self.block_starts.iter().enumerate() {
            let end = self
                .block_starts
                .get(i + 1)
                .copied()
                .unwrap_or(self.records.len());
            out.push(s..end);
        }
        out
    }

    pub fn mean_v_x(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.v_x).sum::<f64>() / self.records.len() as f64
    }

    /// Write as CSV with header `t_s,v_x_mps,v_y_mps,omega_radps,delta_rad`.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_s", "v_x_mps", "v_y_mps", "omega_radps", "delta_rad"])
            .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
        for r in &self.records {
            w.write_record([
                format!("{:.17}", r.t),
                format!("{:.17}", r.v_x),
                format!("{:.17}", r.v_y),
                format!("{:.17}", r.omega),
                format!("{:.17}", r.delta),
            ])
            .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<RawDataset> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| SysidError::Data(format!("cannot open dataset {path:?}: {e}")))?;
        let hdr = rdr
            .headers()
            .map_err(|e| SysidError::Data(format!("dataset {path:?}: {e}")))?
            .clone();
        let expected = ["t_s", "v_x_mps", "v_y_mps", "omega_radps", "delta_rad"];
        if hdr.iter().collect::<Vec<_>>() != expected {
            return Err(SysidError::Data(format!(
                "dataset {path:?}: expected header {expected:?}, got {hdr:?}"
            )));
        }
        let mut records = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec
                .map_err(|e| SysidError::Data(format!("dataset {path:?} line {}: {e}", line + 2)))?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or(())
                    .and_then(|s| s.trim().parse::<f64>().map_err(|_| ()))
                    .map_err(|_| {
                        SysidError::Data(format!("dataset {path:?} line {}: bad field {i}", line + 2))
                    })
            };
            records.push(Record {
                t: f(0)?,
                v_x: f(1)?,
                v_y: f(2)?,
                omega: f(3)?,
                delta: f(4)?,
            });
        }
        if records.len() < 2 {
            return Err(SysidError::Data(format!(
                "dataset {path:?}: needs at least 2 records"
            )));
        }
        let t_s = records[1].t - records[0].t;
        Ok(RawDataset::new(records, t_s))
    }
}

/// Simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Sampling time (s).
    pub t_s: f64,
    /// Total duration (s).
    pub duration: f64,
    /// Pure Pursuit lookahead distance (m).
    pub lookahead: f64,
    /// Noise multiplier eta.
    pub eta: f64,
    pub seed: u64,
    /// Half-extent of the allowed square around the origin (m).
    pub bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_s: 0.02,
            duration: 30.0,
            lookahead: 1.0,
            eta: 0.0,
            seed: 0,
            bound: 50.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0) {
            return Err(SysidError::Config(format!("T_s must be > 0, got {}", self.t_s)));
        }
        if self.duration < self.t_s {
            return Err(SysidError::Config(format!(
                "duration {} shorter than T_s {}",
                self.duration, self.t_s
            )));
        }
        if self.eta < 0.0 {
            return Err(SysidError::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Closed-loop rollout of the ground-truth model under Pure Pursuit.
///
/// The pose is propagated kinematically, the lateral state through
/// `euler_step` with the ground-truth tires, and `v_x` tracks the nearest
/// waypoint's target speed exactly. Each step logs `(t, v_x, v_y, omega,
/// delta)` before stepping, so an open-loop replay of the logged inputs
/// reproduces the logged states.
pub fn simulate_run(
    track: &Track,
    veh: &VehicleParams,
    tires_gt: &PacejkaParams,
    cfg: &SimConfig,
) -> Result<RawDataset> {
    cfg.validate()?;
    track.validate()?;
    veh.validate()?;
    tires_gt.validate()?;

    let steps = (cfg.duration / cfg.t_s).round() as usize;
    let w0 = track.waypoints[0];
    let w1 = track.waypoints[1];
    let mut pose = Pose {
        x: w0.x,
        y: w0.y,
        psi: (w1.y - w0.y).atan2(w1.x - w0.x),
    };
    let mut lat = LateralState::ZERO;
    let mut records = Vec::with_capacity(steps);

    for k in 0..steps {
        if pose.x.abs() > cfg.bound || pose.y.abs() > cfg.bound {
            return Err(SysidError::Divergence {
                step: k,
                reason: format!("pose ({:.2}, {:.2}) left the +-{} m box", pose.x, pose.y, cfg.bound),
            });
        }
        let v_x = track.target_speed(pose.x, pose.y);
        let delta = pure_pursuit_steer(pose, track, cfg.lookahead, veh.wheelbase())?;
        records.push(Record {
            t: k as f64 * cfg.t_s,
            v_x,
            v_y: lat.v_y,
            omega: lat.omega,
            delta,
        });

        let input = ControlInput { v_x, delta };
        let next = euler_step(lat, input, veh, tires_gt, cfg.t_s)?;
        pose = Pose {
            x: pose.x + (v_x * pose.psi.cos() - lat.v_y * pose.psi.sin()) * cfg.t_s,
            y: pose.y + (v_x * pose.psi.sin() + lat.v_y * pose.psi.cos()) * cfg.t_s,
            psi: wrap_angle(pose.psi + lat.omega * cfg.t_s),
        };
        lat = next;
    }
    Ok(RawDataset::new(records, cfg.t_s))
}

/// Add zero-mean Gaussian noise per channel with standard deviation
/// `mean(|channel|) * eta`, independent draws per sample per channel.
pub fn inject_noise(ds: &RawDataset, eta: f64, seed: u64) -> Result<RawDataset> {
    if eta < 0.0 {
        return Err(SysidError::Config(format!("eta must be >= 0, got {eta}")));
    }
    if eta == 0.0 {
        return Ok(ds.clone());
    }
    let n = ds.len() as f64;
    let mean_abs = |f: fn(&Record) -> f64| ds.records.iter().map(|r| f(r).abs()).sum::<f64>() / n;
    let sigma = [
        mean_abs(|r| r.v_x) * eta,
        mean_abs(|r| r.v_y) * eta,
        mean_abs(|r| r.omega) * eta,
        mean_abs(|r| r.delta) * eta,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller; keeps the draw sequence stable across rand versions.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let records = ds
        .records
        .iter()
        .map(|r| Record {
            t: r.t,
            v_x: r.v_x + sigma[0] * gauss(&mut rng),
            v_y: r.v_y + sigma[1] * gauss(&mut rng),
            omega: r.omega + sigma[2] * gauss(&mut rng),
            delta: r.delta + sigma[3] * gauss(&mut rng),
        })
        .collect();
    Ok(RawDataset {
        records,
        t_s: ds.t_s,
        block_starts: ds.block_starts.clone(),
    })
}

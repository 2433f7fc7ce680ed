//! Raw driving logs to training pairs: low-pass filtering, mirror
//! augmentation, nominal-model error targets, and train/test splitting.

use std::path::Path;

use crate::error::{Result, SysidError};
use crate::filter::zero_phase_lowpass;
use crate::model::{euler_step, ControlInput, LateralState, PacejkaParams, VehicleParams};
use crate::sim::{RawDataset, Record};

/// Input rows `[v_x, v_y, omega, delta]` paired with one-step error targets
/// `[e_vy, e_omega]` of the nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<[f64; 4]>,
    pub targets: Vec<[f64; 2]>,
    pub t_s: f64,
    /// Samples dropped for violating `v_x > 0`.
    pub dropped: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// CSV with header `v_x,v_y,omega,delta,e_vy,e_omega`.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["v_x", "v_y", "omega", "delta", "e_vy", "e_omega"])
            .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
        for (x, e) in self.inputs.iter().zip(&self.targets) {
            w.write_record([
                format!("{:.17}", x[0]),
                format!("{:.17}", x[1]),
                format!("{:.17}", x[2]),
                format!("{:.17}", x[3]),
                format!("{:.17}", e[0]),
                format!("{:.17}", e[1]),
            ])
            .map_err(|e| SysidError::Data(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Filter all four channels with the zero-phase low-pass, per contiguous
/// block. Timestamps are untouched.
///
/// One settling length (the filter's reflective pad) is trimmed from each
/// end of every block: there the output leans on the padding's symmetry
/// assumption, which real transients (e.g. the start-up step) violate.
pub fn filter_dataset(ds: &RawDataset, cutoff_hz: f64) -> Result<RawDataset> {
    let pad = (1.0 / (cutoff_hz * ds.t_s)).ceil() as usize;
    let mut records = Vec::new();
    let mut block_starts = Vec::new();
    for range in ds.blocks() {
        if range.len() < 2 * pad + 2 {
            return Err(SysidError::Data(format!(
                "block of {} samples too short to filter at {cutoff_hz} Hz \
                 (needs > {} for edge trimming)",
                range.len(),
                2 * pad + 1
            )));
        }
        let block = &ds.records[range.clone()];
        let grab = |f: fn(&Record) -> f64| block.iter().map(f).collect::<Vec<_>>();
        let v_x = zero_phase_lowpass(&grab(|r| r.v_x), cutoff_hz, ds.t_s)?;
        let v_y = zero_phase_lowpass(&grab(|r| r.v_y), cutoff_hz, ds.t_s)?;
        let omega = zero_phase_lowpass(&grab(|r| r.omega), cutoff_hz, ds.t_s)?;
        let delta = zero_phase_lowpass(&grab(|r| r.delta), cutoff_hz, ds.t_s)?;
        block_starts.push(records.len());
        for (j, i) in range.enumerate().skip(pad).take(block.len() - 2 * pad) {
            records.push(Record {
                t: ds.records[i].t,
                v_x: v_x[j],
                v_y: v_y[j],
                omega: omega[j],
                delta: delta[j],
            });
        }
    }
    Ok(RawDataset { records, t_s: ds.t_s, block_starts })
}

/// Append a mirrored copy: `(v_y, omega, delta)` negated, `v_x` kept. The
/// mirrored samples form their own block so one-step pairing never crosses
/// the original/mirror boundary.
pub fn mirror_augment(ds: &RawDataset) -> RawDataset {
    let n = ds.records.len();
    let mut records = ds.records.clone();
    records.extend(ds.records.iter().map(|r| Record {
        t: r.t,
        v_x: r.v_x,
        v_y: -r.v_y,
        omega: -r.omega,
        delta: -r.delta,
    }));
    let mut block_starts = ds.block_starts.clone();
    block_starts.extend(ds.block_starts.iter().map(|s| s + n));
    RawDataset { records, t_s: ds.t_s, block_starts }
}

/// One-step prediction errors of the nominal model: for each in-block pair
/// `(k, k+1)`, `e_k = x_{k+1} - euler_step(x_k, u_k)`.
///
/// Samples with `v_x <= 0` are dropped (and counted); more than 10% dropped
/// is a data error.
pub fn build_error_targets(
    ds: &RawDataset,
    veh: &VehicleParams,
    tires_nominal: &PacejkaParams,
) -> Result<TrainingSet> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0usize;
    let mut total_pairs = 0usize;

    for range in ds.blocks() {
        let block = &ds.records[range];
        for pair in block.windows(2) {
            let (k, k1) = (pair[0], pair[1]);
            total_pairs += 1;
            if k.v_x <= 0.0 || k1.v_x <= 0.0 {
                dropped += 1;
                continue;
            }
            let pred = euler_step(
                LateralState { v_y: k.v_y, omega: k.omega },
                ControlInput { v_x: k.v_x, delta: k.delta },
                veh,
                tires_nominal,
                ds.t_s,
            )?;
            inputs.push([k.v_x, k.v_y, k.omega, k.delta]);
            targets.push([k1.v_y - pred.v_y, k1.omega - pred.omega]);
        }
    }

    if total_pairs == 0 {
        return Err(SysidError::Data("dataset has no consecutive pairs".into()));
    }
    if dropped * 10 > total_pairs {
        return Err(SysidError::Data(format!(
            "{dropped} of {total_pairs} pairs dropped for v_x <= 0 (more than 10%)"
        )));
    }
    Ok(TrainingSet { inputs, targets, t_s: ds.t_s, dropped })
}

/// Contiguous split at `fraction`; no shuffling across time.
pub fn split(ds: &RawDataset, fraction: f64) -> Result<(RawDataset, RawDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SysidError::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let cut = (ds.records.len() as f64 * fraction).round() as usize;
    if cut < 50 || ds.records.len() - cut < 50 {
        return Err(SysidError::Data(format!(
            "split at {cut}/{} leaves a block shorter than 50 samples",
            ds.records.len()
        )));
    }
    let train = RawDataset::new(ds.records[..cut].to_vec(), ds.t_s);
    let test = RawDataset::new(ds.records[cut..].to_vec(), ds.t_s);
    Ok((train, test))
}

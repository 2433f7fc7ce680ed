//! Tire parameter identification: corrected-model prediction, virtual
//! steady-state data generation, Pacejka curve fitting, the iterative
//! refinement loop, and the direct NLS baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};
use crate::model::{
    euler_step, slip_angles, steady_state_forces, AxleTire, ControlInput, LateralState,
    PacejkaParams, VehicleParams,
};
use crate::net::{train, TrainConfig, TrainedNet};
use crate::pipeline::build_error_targets;
use crate::sim::RawDataset;
use crate::solver::{least_squares, SolverConfig};

/// Steering ramp of the virtual steady-state maneuver (rad).
pub const RAMP_MAX_DELTA: f64 = 0.4;
/// Virtual rollout: 10 s at 0.02 s.
pub const VIRTUAL_T_S: f64 = 0.02;
pub const VIRTUAL_STEPS: usize = 500;

/// Region of interest for curve comparison (rad): front / rear slip angle
/// bounds within which the identified models are meaningful.
pub const ROI_ALPHA_FRONT: f64 = 0.15;
pub const ROI_ALPHA_REAR: f64 = 0.13;

/// Nominal single-track model plus a trained residual network.
#[derive(Debug, Clone)]
pub struct CorrectedModel {
    pub nominal: PacejkaParams,
    pub veh: VehicleParams,
    pub net: TrainedNet,
    pub t_s: f64,
}

impl CorrectedModel {
    /// One-step prediction: nominal Euler step plus the network's error
    /// prediction for the current state and input.
    pub fn corrected_step(&self, state: LateralState, input: ControlInput) -> Result<LateralState> {
        let nominal = euler_step(state, input, &self.veh, &self.nominal, self.t_s)?;
        let e = self.net.predict(&[input.v_x, state.v_y, state.omega, input.delta]);
        Ok(LateralState {
            v_y: nominal.v_y + e[0],
            omega: nominal.omega + e[1],
        })
    }
}

/// Constant-speed rollout with a linear 0 to 0.4 rad steering ramp.
#[derive(Debug, Clone)]
pub struct VirtualSteadyStateData {
    pub v_x: f64,
    /// `(v_y, omega, delta)` per sample, `VIRTUAL_STEPS` of them.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Divergence guard for the virtual rollout: states beyond ten times the
/// training-data maxima abort the simulation.
#[derive(Debug, Clone, Copy)]
pub struct StateBounds {
    pub max_v_y: f64,
    pub max_omega: f64,
}

impl StateBounds {
    pub fn from_dataset(ds: &RawDataset) -> StateBounds {
        let mut b = StateBounds { max_v_y: 0.0, max_omega: 0.0 };
        for r in &ds.records {
            b.max_v_y = b.max_v_y.max(r.v_y.abs());
            b.max_omega = b.max_omega.max(r.omega.abs());
        }
        // Floors keep the guard meaningful on degenerate (straight) data.
        b.max_v_y = b.max_v_y.max(0.1);
        b.max_omega = b.max_omega.max(0.1);
        b
    }
}

/// Roll the corrected model from `x_0 = [0, 0]` for 10 s at `v_x_ref` while
/// ramping the steering linearly from 0 to 0.4 rad.
pub fn generate_virtual_data(
    cm: &CorrectedModel,
    v_x_ref: f64,
    bounds: StateBounds,
) -> Result<VirtualSteadyStateData> {
    if !(v_x_ref > 0.0 && v_x_ref.is_finite()) {
        return Err(SysidError::Domain {
            field: "v_x_ref",
            value: v_x_ref,
            constraint: "> 0 and finite",
        });
    }
    let mut state = LateralState::ZERO;
    let mut samples = Vec::with_capacity(VIRTUAL_STEPS);
    for k in 0..VIRTUAL_STEPS {
        let delta = RAMP_MAX_DELTA * k as f64 / (VIRTUAL_STEPS - 1) as f64;
        if state.v_y.abs() > 10.0 * bounds.max_v_y || state.omega.abs() > 10.0 * bounds.max_omega {
            return Err(SysidError::Divergence {
                step: k,
                reason: format!(
                    "virtual rollout state ({:.3}, {:.3}) exceeds 10x training maxima",
                    state.v_y, state.omega
                ),
            });
        }
        samples.push((state.v_y, state.omega, delta));
        state = cm.corrected_step(state, ControlInput { v_x: v_x_ref, delta })?;
    }
    Ok(VirtualSteadyStateData { v_x: v_x_ref, samples })
}

/// Slip-angle / force point sets for both axles under the quasi-steady-state
/// assumption.
pub fn extract_force_points(
    vd: &VirtualSteadyStateData,
    veh: &VehicleParams,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let mut front = Vec::with_capacity(vd.samples.len());
    let mut rear = Vec::with_capacity(vd.samples.len());
    for &(v_y, omega, delta) in &vd.samples {
        let state = LateralState { v_y, omega };
        let input = ControlInput { v_x: vd.v_x, delta };
        let (alpha_f, alpha_r) = slip_angles(state, input, veh)?;
        let (f_yr, f_yf) = steady_state_forces(input, omega, veh)?;
        front.push((alpha_f, f_yf));
        rear.push((alpha_r, f_yr));
    }
    Ok((front, rear))
}

fn pacejka_residuals(points: &[(f64, f64)], p: &[f64]) -> Vec<f64> {
    let tire = AxleTire { b: p[0], c: p[1], d: p[2], e: p[3] };
    points.iter().map(|&(a, f)| f - tire.force(a)).collect()
}

/// Fit one axle's magic-formula coefficients to `(alpha, F)` points.
///
/// Damped Gauss-Newton with box bounds and five jittered multi-starts; the
/// lowest residual wins, ties broken by the smaller parameter norm.
pub fn fit_pacejka(
    points: &[(f64, f64)],
    init: &AxleTire,
    solver: &SolverConfig,
) -> Result<AxleTire> {
    if points.len() < 20 {
        return Err(SysidError::Data(format!(
            "need at least 20 force points, got {}",
            points.len()
        )));
    }
    let (a_min, a_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, _)| {
            (lo.min(a), hi.max(a))
        });
    if a_max - a_min < 1e-3 {
        return Err(SysidError::Data(format!(
            "slip angle range [{a_min:.4}, {a_max:.4}] is degenerate"
        )));
    }
    let f_max = points
        .iter()
        .map(|&(_, f)| f.abs())
        .fold(0.0f64, f64::max)
        .max(1e-6);

    let lo = [0.1, 0.5, 0.1 * f_max, -10.0];
    let hi = [50.0, 3.0, 10.0 * f_max, 1.0];

    // Deterministic jitter around the caller's initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5041_4345);
    let mut starts = vec![[init.b, init.c, init.d, init.e]];
    for _ in 0..4 {
        starts.push([
            init.b * rng.gen_range(0.5..2.0),
            init.c * rng.gen_range(0.8..1.25),
            init.d * rng.gen_range(0.5..2.0),
            init.e + rng.gen_range(-1.0..0.5),
        ]);
    }

    let mut best: Option<Solution4> = None;
    for start in &starts {
        let sol = match least_squares(
            |p| pacejka_residuals(points, p),
            start,
            &lo,
            &hi,
            solver,
        ) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if !sol.cost.is_finite() {
            continue;
        }
        let norm = sol.params.iter().map(|v| v * v).sum::<f64>().sqrt();
        let better = match &best {
            None => true,
            Some(b) => {
                sol.cost < b.cost * (1.0 - 1e-12)
                    || ((sol.cost - b.cost).abs() <= b.cost * 1e-12 && norm < b.norm)
            }
        };
        if better {
            best = Some(Solution4 { params: sol.params.clone(), cost: sol.cost, norm });
        }
    }

    let best = best.ok_or_else(|| {
        SysidError::Numerical("all Pacejka fit starts failed to converge".into())
    })?;
    Ok(AxleTire {
        b: best.params[0],
        c: best.params[1],
        d: best.params[2],
        e: best.params[3],
    })
}

struct Solution4 {
    params: Vec<f64>,
    cost: f64,
    norm: f64,
}

/// Sum of squared fit residuals of a tire against a point set.
pub fn fit_residual(points: &[(f64, f64)], tire: &AxleTire) -> f64 {
    points
        .iter()
        .map(|&(a, f)| (f - tire.force(a)).powi(2))
        .sum()
}

/// RMS difference between two force curves over `|alpha| <= alpha_max`.
pub fn curve_rms_diff(a: &AxleTire, b: &AxleTire, alpha_max: f64) -> f64 {
    const GRID: usize = 201;
    let mut s = 0.0;
    for i in 0..GRID {
        let alpha = -alpha_max + 2.0 * alpha_max * i as f64 / (GRID - 1) as f64;
        s += (a.force(alpha) - b.force(alpha)).powi(2);
    }
    (s / GRID as f64).sqrt()
}

/// Per-channel RMSE of one-step predictions against observed next states.
pub fn one_step_rmse(
    tires: &PacejkaParams,
    veh: &VehicleParams,
    test: &RawDataset,
) -> Result<(f64, f64)> {
    let mut s_vy = 0.0;
    let mut s_om = 0.0;
    let mut n = 0usize;
    for range in test.blocks() {
        for pair in test.records[range].windows(2) {
            let (k, k1) = (pair[0], pair[1]);
            if k.v_x <= 0.0 {
                continue;
            }
            let pred = euler_step(
                LateralState { v_y: k.v_y, omega: k.omega },
                ControlInput { v_x: k.v_x, delta: k.delta },
                veh,
                tires,
                test.t_s,
            )?;
            s_vy += (k1.v_y - pred.v_y).powi(2);
            s_om += (k1.omega - pred.omega).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(SysidError::Data("test set has no usable pairs".into()));
    }
    Ok(((s_vy / n as f64).sqrt(), (s_om / n as f64).sqrt()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Zero-based loop index this fit was accepted at (skipped iterations
    /// leave no record here; see `IdentificationReport::skipped`).
    pub iter: usize,
    pub params: PacejkaParams,
    pub train_final_loss: f64,
    pub fit_residual_front: f64,
    pub fit_residual_rear: f64,
    /// One-step RMSE on the held-out set, if one was provided.
    pub rmse_vy: Option<f64>,
    pub rmse_omega: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub initial: PacejkaParams,
    pub iterations: Vec<IterationRecord>,
    pub best: PacejkaParams,
    /// Iterations whose virtual rollout diverged. Those iterations leave
    /// the parameters untouched; the loop continues with the next
    /// freshly-seeded network.
    pub skipped: Vec<(usize, String)>,
    /// Set when no iteration produced a fit at all; `best` then still
    /// holds the initial parameters.
    pub aborted: Option<String>,
    pub early_stopped: bool,
    /// Wall time per iteration (s). Excluded from determinism comparisons.
    pub timings_s: Vec<f64>,
}

impl IdentificationReport {
    pub fn final_params(&self) -> PacejkaParams {
        self.best
    }

    /// Parameters in effect after loop iteration `k` (zero-based): the last
    /// accepted fit at or before `k`, or the initial guess. Skipped
    /// iterations leave the parameters unchanged.
    pub fn params_after(&self, k: usize) -> PacejkaParams {
        self.iterations
            .iter()
            .take_while(|r| r.iter <= k)
            .last()
            .map(|r| r.params)
            .unwrap_or(self.initial)
    }
}

#[derive(Debug, Clone)]
pub struct IdentOptions {
    pub n_iter: usize,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    /// Stop once successive force curves differ by less than 1% RMS of the
    /// peak force.
    pub early_stop: bool,
}

impl Default for IdentOptions {
    fn default() -> Self {
        IdentOptions {
            n_iter: 6,
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            early_stop: false,
        }
    }
}

/// The iterative identification loop.
///
/// Each iteration: build error targets for the current nominal parameters,
/// train a freshly initialized residual network, roll out virtual
/// steady-state data with the corrected model, extract axle forces, and
/// refit the Pacejka coefficients per axle (front and rear independently).
/// The fit becomes the next nominal model.
///
/// When a held-out set is given, each fit is gated on it: a fit whose
/// channel-averaged one-step RMSE regresses more than 10% over the current
/// parameters is rejected (the iteration is skipped), and `best` tracks the
/// lowest-RMSE parameters seen. This enforces the monotone-improvement
/// property on held-out data up to the hysteresis band.
pub fn iterate(
    data: &RawDataset,
    veh: &VehicleParams,
    init: &PacejkaParams,
    opts: &IdentOptions,
    heldout: Option<&RawDataset>,
) -> Result<IdentificationReport> {
    if opts.n_iter == 0 {
        return Err(SysidError::Config("n_iter must be >= 1".into()));
    }
    let bounds = StateBounds::from_dataset(data);
    let v_x_ref = data.mean_v_x();
    let mut current = *init;
    let mut current_val = match heldout {
        Some(h) => {
            let (a, b) = one_step_rmse(init, veh, h)?;
            Some((a + b) / 2.0)
        }
        None => None,
    };
    let mut best_val = current_val;
    let mut report = IdentificationReport {
        initial: *init,
        iterations: Vec::new(),
        best: *init,
        skipped: Vec::new(),
        aborted: None,
        early_stopped: false,
        timings_s: Vec::new(),
    };

    for iter in 0..opts.n_iter {
        let started = std::time::Instant::now();

        let targets = build_error_targets(data, veh, &current)?;
        // Fresh network each iteration; the seed shifts so re-runs of the
        // same iteration count stay reproducible.
        let train_cfg = TrainConfig {
            seed: opts.train.seed.wrapping_add(iter as u64),
            ..opts.train
        };
        let (net, trace) = train(&targets, &train_cfg)?;

        let cm = CorrectedModel {
            nominal: current,
            veh: *veh,
            net,
            t_s: data.t_s,
        };
        let vd = match generate_virtual_data(&cm, v_x_ref, bounds) {
            Ok(vd) => vd,
            Err(e) => {
                // An unstable corrected model must not update the
                // parameters; try again with the next network seed.
                report.skipped.push((iter, e.to_string()));
                report.timings_s.push(started.elapsed().as_secs_f64());
                continue;
            }
        };
        let (front_pts, rear_pts) = extract_force_points(&vd, veh)?;

        let front = fit_pacejka(&front_pts, &current.front, &opts.solver)?;
        let rear = fit_pacejka(&rear_pts, &current.rear, &opts.solver)?;
        let fitted = PacejkaParams { front, rear };

        let (rmse_vy, rmse_omega) = match heldout {
            Some(h) => {
                let (a, b) = one_step_rmse(&fitted, veh, h)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };

        if let (Some(cv), Some(a), Some(b)) = (current_val, rmse_vy, rmse_omega) {
            // Gate 1: a genuine refinement stays near the current curve
            // inside the region of interest; a corrupted fit jumps.
            let step_f = curve_rms_diff(&current.front, &fitted.front, ROI_ALPHA_FRONT);
            let step_r = curve_rms_diff(&current.rear, &fitted.rear, ROI_ALPHA_REAR);
            if step_f > 0.25 * current.front.d.abs() || step_r > 0.25 * current.rear.d.abs() {
                report.skipped.push((
                    iter,
                    format!(
                        "fit rejected: curve step ({step_f:.3}, {step_r:.3}) outside trust region"
                    ),
                ));
                report.timings_s.push(started.elapsed().as_secs_f64());
                continue;
            }
            // Gate 2: held-out one-step RMSE must not regress.
            let fv = (a + b) / 2.0;
            if fv > cv * 1.02 {
                report.skipped.push((
                    iter,
                    format!("fit rejected: held-out RMSE {fv:.6} regresses over {cv:.6}"),
                ));
                report.timings_s.push(started.elapsed().as_secs_f64());
                continue;
            }
            current_val = Some(fv);
            if best_val.map(|bv| fv < bv).unwrap_or(true) {
                best_val = Some(fv);
                report.best = fitted;
            }
        }

        report.iterations.push(IterationRecord {
            iter,
            params: fitted,
            train_final_loss: trace.last().copied().unwrap_or(f64::NAN),
            fit_residual_front: fit_residual(&front_pts, &front),
            fit_residual_rear: fit_residual(&rear_pts, &rear),
            rmse_vy,
            rmse_omega,
        });
        report.timings_s.push(started.elapsed().as_secs_f64());

        let prev = current;
        current = fitted;
        if current_val.is_none() {
            report.best = fitted;
        }

        if opts.early_stop && iter > 0 {
            let df = curve_rms_diff(&prev.front, &fitted.front, ROI_ALPHA_FRONT);
            let dr = curve_rms_diff(&prev.rear, &fitted.rear, ROI_ALPHA_REAR);
            if df < 0.01 * fitted.front.d.abs() && dr < 0.01 * fitted.rear.d.abs() {
                report.early_stopped = true;
                break;
            }
        }
    }
    if report.iterations.is_empty() {
        report.aborted = Some(format!(
            "all {} iterations diverged; parameters left at the initial guess",
            opts.n_iter
        ));
    }
    Ok(report)
}

/// Direct NLS baseline: fit all eight Pacejka coefficients by minimizing
/// one-step prediction residuals over the whole (filtered) dataset, with
/// unit channel weights.
pub fn nls_identify(
    data: &RawDataset,
    veh: &VehicleParams,
    init: &PacejkaParams,
    solver: &SolverConfig,
) -> Result<PacejkaParams> {
    // Usable in-block pairs.
    let mut pairs = Vec::new();
    for range in data.blocks() {
        for w in data.records[range].windows(2) {
            if w[0].v_x > 0.0 {
                pairs.push((w[0], w[1]));
            }
        }
    }
    if pairs.len() < 50 {
        return Err(SysidError::Data(format!(
            "NLS needs at least 50 usable pairs, got {}",
            pairs.len()
        )));
    }

    // Force scale per axle via the steady-state relations, for the D bounds.
    let (mut f_max_f, mut f_max_r) = (0.0f64, 0.0f64);
    for (k, _) in &pairs {
        let input = ControlInput { v_x: k.v_x, delta: k.delta };
        if let Ok((f_yr, f_yf)) = steady_state_forces(input, k.omega, veh) {
            f_max_f = f_max_f.max(f_yf.abs());
            f_max_r = f_max_r.max(f_yr.abs());
        }
    }
    f_max_f = f_max_f.max(1.0);
    f_max_r = f_max_r.max(1.0);

    let t_s = data.t_s;
    let veh_c = *veh;
    let residuals = move |p: &[f64]| -> Vec<f64> {
        let tires = PacejkaParams {
            front: AxleTire { b: p[0], c: p[1], d: p[2], e: p[3] },
            rear: AxleTire { b: p[4], c: p[5], d: p[6], e: p[7] },
        };
        let mut out = Vec::with_capacity(pairs.len() * 2);
        for (k, k1) in &pairs {
            match euler_step(
                LateralState { v_y: k.v_y, omega: k.omega },
                ControlInput { v_x: k.v_x, delta: k.delta },
                &veh_c,
                &tires,
                t_s,
            ) {
                Ok(pred) => {
                    out.push(k1.v_y - pred.v_y);
                    out.push(k1.omega - pred.omega);
                }
                Err(_) => {
                    out.push(f64::NAN);
                    out.push(f64::NAN);
                }
            }
        }
        out
    };

    let lo = [0.1, 0.5, 0.1 * f_max_f, -10.0, 0.1, 0.5, 0.1 * f_max_r, -10.0];
    let hi = [50.0, 3.0, 10.0 * f_max_f, 1.0, 50.0, 3.0, 10.0 * f_max_r, 1.0];

    let mut rng = ChaCha8Rng::seed_from_u64(0x4e4c_5349);
    let base = [
        init.front.b, init.front.c, init.front.d, init.front.e,
        init.rear.b, init.rear.c, init.rear.d, init.rear.e,
    ];
    let mut starts = vec![base];
    for _ in 0..4 {
        let mut s = base;
        for (i, v) in s.iter_mut().enumerate() {
            if i % 4 == 3 {
                *v += rng.gen_range(-1.0..0.5);
            } else {
                *v *= rng.gen_range(0.5..2.0);
            }
        }
        starts.push(s);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        if let Ok(sol) = least_squares(&residuals, s, &lo, &hi, solver) {
            if sol.cost.is_finite()
                && best.as_ref().map(|(_, c)| sol.cost < *c).unwrap_or(true)
            {
                best = Some((sol.params, sol.cost));
            }
        }
    }
    let (p, _) = best.ok_or_else(|| {
        SysidError::Numerical("NLS identification failed from all starts".into())
    })?;
    Ok(PacejkaParams {
        front: AxleTire { b: p[0], c: p[1], d: p[2], e: p[3] },
        rear: AxleTire { b: p[4], c: p[5], d: p[6], e: p[7] },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AxleTire;
    use crate::sim::{simulate_run, SimConfig};
    use crate::track::circle_track;
    use approx::assert_relative_eq;

    fn veh() -> VehicleParams {
        VehicleParams { m: 3.5, i_z: 0.047, l_f: 0.16, l_r: 0.17 }
    }

    fn gt_tires() -> PacejkaParams {
        PacejkaParams {
            front: AxleTire { b: 4.0, c: 1.45, d: 17.0, e: 0.6 },
            rear: AxleTire { b: 4.5, c: 1.35, d: 18.5, e: 0.4 },
        }
    }

    fn zero_net_model(tires: PacejkaParams) -> CorrectedModel {
        CorrectedModel {
            nominal: tires,
            veh: veh(),
            net: TrainedNet::zero(),
            t_s: VIRTUAL_T_S,
        }
    }

    fn wide_bounds() -> StateBounds {
        StateBounds { max_v_y: 10.0, max_omega: 10.0 }
    }

    #[test]
    fn zero_net_corrected_step_equals_euler() {
        let cm = zero_net_model(gt_tires());
        let state = LateralState { v_y: 0.1, omega: 0.5 };
        let input = ControlInput { v_x: 2.5, delta: 0.2 };
        let a = cm.corrected_step(state, input).unwrap();
        let b = euler_step(state, input, &veh(), &gt_tires(), VIRTUAL_T_S).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrected_step_is_euler_plus_net_output() {
        let mut net = TrainedNet::zero();
        net.weights.b2 = [0.03, -0.02];
        let cm = CorrectedModel { net, ..zero_net_model(gt_tires()) };
        let state = LateralState { v_y: 0.1, omega: 0.5 };
        let input = ControlInput { v_x: 2.5, delta: 0.2 };
        let a = cm.corrected_step(state, input).unwrap();
        let b = euler_step(state, input, &veh(), &gt_tires(), VIRTUAL_T_S).unwrap();
        assert_relative_eq!(a.v_y, b.v_y + 0.03, epsilon = 1e-15);
        assert_relative_eq!(a.omega, b.omega - 0.02, epsilon = 1e-15);
    }

    #[test]
    fn virtual_data_has_500_samples_with_linear_ramp() {
        let cm = zero_net_model(gt_tires());
        let vd = generate_virtual_data(&cm, 2.5, wide_bounds()).unwrap();
        assert_eq!(vd.samples.len(), 500);
        for (k, &(_, _, delta)) in vd.samples.iter().enumerate() {
            assert_relative_eq!(delta, 0.4 * k as f64 / 499.0, epsilon = 1e-15);
        }
        assert_eq!(vd.samples[0].2, 0.0);
        assert_eq!(vd.samples[499].2, 0.4);
    }

    #[test]
    fn virtual_rollout_slip_angles_land_in_region_of_interest() {
        let cm = zero_net_model(gt_tires());
        let vd = generate_virtual_data(&cm, 2.5, wide_bounds()).unwrap();
        let (front, rear) = extract_force_points(&vd, &veh()).unwrap();
        let af_final = front.last().unwrap().0;
        let ar_final = rear.last().unwrap().0;
        assert!(af_final > 0.03 && af_final < 2.0 * ROI_ALPHA_FRONT, "alpha_f {af_final}");
        assert!(ar_final > 0.03 && ar_final < 2.0 * ROI_ALPHA_REAR, "alpha_r {ar_final}");
    }

    #[test]
    fn divergence_guard_names_the_step() {
        // An aggressively wrong correction destabilizes the rollout.
        let mut net = TrainedNet::zero();
        net.weights.b2 = [5.0, 5.0];
        let cm = CorrectedModel { net, ..zero_net_model(gt_tires()) };
        let tight = StateBounds { max_v_y: 0.1, max_omega: 0.1 };
        let err = generate_virtual_data(&cm, 2.5, tight).unwrap_err();
        assert!(matches!(err, SysidError::Divergence { .. }));
    }

    #[test]
    fn extract_forces_zero_for_zero_yaw_rate() {
        let vd = VirtualSteadyStateData {
            v_x: 2.5,
            samples: (0..30).map(|k| (0.0, 0.0, 0.01 * k as f64)).collect(),
        };
        let (front, rear) = extract_force_points(&vd, &veh()).unwrap();
        for (_, f) in front.iter().chain(rear.iter()) {
            assert_eq!(*f, 0.0);
        }
    }

    #[test]
    fn fit_recovers_exact_points_from_truth_init() {
        let truth = AxleTire { b: 4.0, c: 1.45, d: 17.0, e: 0.6 };
        let points: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let a = -0.2 + 0.4 * i as f64 / 99.0;
                (a, truth.force(a))
            })
            .collect();
        let fit = fit_pacejka(&points, &truth, &SolverConfig::default()).unwrap();
        assert!(fit_residual(&points, &fit) < 1e-10);
    }

    #[test]
    fn fit_from_generic_init_matches_generating_curve() {
        let truth = AxleTire { b: 4.5, c: 1.35, d: 18.5, e: 0.4 };
        let points: Vec<(f64, f64)> = (0..120)
            .map(|i| {
                let a = -0.18 + 0.36 * i as f64 / 119.0;
                (a, truth.force(a))
            })
            .collect();
        let generic = AxleTire { b: 5.0, c: 1.5, d: 14.0, e: 0.0 };
        let fit = fit_pacejka(&points, &generic, &SolverConfig::default()).unwrap();
        // Curve-level identifiability: compare forces, not coefficients.
        let rms = curve_rms_diff(&fit, &truth, 0.18);
        assert!(rms < 0.01 * truth.d, "curve rms {rms}");
    }

    #[test]
    fn fit_on_pure_noise_never_returns_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let a = -0.2 + 0.4 * i as f64 / 99.0;
                (a, rng.gen_range(-1.0..1.0))
            })
            .collect();
        let generic = AxleTire { b: 5.0, c: 1.5, d: 14.0, e: 0.0 };
        match fit_pacejka(&points, &generic, &SolverConfig::default()) {
            Ok(fit) => {
                assert!(fit.b.is_finite() && fit.c.is_finite());
                assert!(fit.d.is_finite() && fit.e.is_finite());
            }
            Err(SysidError::Numerical(_)) => {}
            Err(e) => panic!("unexpected error kind: {e}"),
        }
    }

    #[test]
    fn fit_rejects_too_few_or_degenerate_points() {
        let generic = AxleTire { b: 5.0, c: 1.5, d: 14.0, e: 0.0 };
        let few: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.01, 1.0)).collect();
        assert!(fit_pacejka(&few, &generic, &SolverConfig::default()).is_err());
        let flat: Vec<(f64, f64)> = (0..30).map(|_| (0.05, 1.0)).collect();
        assert!(fit_pacejka(&flat, &generic, &SolverConfig::default()).is_err());
    }

    #[test]
    fn one_step_rmse_zero_for_self_consistent_data() {
        let track = circle_track(2.5, 100, 2.5);
        let cfg = SimConfig { duration: 5.0, ..Default::default() };
        let ds = simulate_run(&track, &veh(), &gt_tires(), &cfg).unwrap();
        let (rv, ro) = one_step_rmse(&gt_tires(), &veh(), &ds).unwrap();
        assert!(rv < 1e-12 && ro < 1e-12, "rmse ({rv}, {ro})");
    }

    #[test]
    fn nls_recovers_truth_on_clean_data() {
        let track = circle_track(2.5, 100, 2.5);
        let cfg = SimConfig { duration: 20.0, ..Default::default() };
        let ds = simulate_run(&track, &veh(), &gt_tires(), &cfg).unwrap();
        let near = PacejkaParams {
            front: AxleTire { b: 3.5, c: 1.5, d: 15.0, e: 0.2 },
            rear: AxleTire { b: 4.0, c: 1.4, d: 16.0, e: 0.2 },
        };
        let fit = nls_identify(&ds, &veh(), &near, &SolverConfig::default()).unwrap();
        let gt = gt_tires();
        let rms_f = curve_rms_diff(&fit.front, &gt.front, ROI_ALPHA_FRONT);
        let rms_r = curve_rms_diff(&fit.rear, &gt.rear, ROI_ALPHA_REAR);
        assert!(rms_f < 0.02 * gt.front.d, "front curve rms {rms_f}");
        assert!(rms_r < 0.02 * gt.rear.d, "rear curve rms {rms_r}");
    }

    #[test]
    fn gated_iterations_never_regress_on_heldout_data() {
        let track = circle_track(2.5, 100, 2.5);
        let cfg = SimConfig { duration: 10.0, ..Default::default() };
        let ds = simulate_run(&track, &veh(), &gt_tires(), &cfg).unwrap();
        let noisy = crate::sim::inject_noise(&ds, 0.6, 1).unwrap();
        let (train_raw, val_raw) = crate::pipeline::split(&noisy, 0.8).unwrap();
        let processed = crate::pipeline::mirror_augment(
            &crate::pipeline::filter_dataset(&train_raw, 5.0).unwrap(),
        );
        let val = crate::pipeline::filter_dataset(&val_raw, 5.0).unwrap();
        let opts = IdentOptions { n_iter: 4, ..Default::default() };
        let report = iterate(&processed, &veh(), &gt_tires(), &opts, Some(&val)).unwrap();
        // Accepted iterations carry heldout RMSE; the gate keeps the
        // sequence non-increasing up to the 2% acceptance band.
        let vals: Vec<f64> = report
            .iterations
            .iter()
            .map(|r| (r.rmse_vy.unwrap() + r.rmse_omega.unwrap()) / 2.0)
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] * 1.02, "regressed: {vals:?}");
        }
    }

    #[test]
    fn iterate_is_stable_at_the_ground_truth_fixed_point() {
        let track = circle_track(2.5, 100, 2.5);
        let cfg = SimConfig { duration: 10.0, ..Default::default() };
        let ds = simulate_run(&track, &veh(), &gt_tires(), &cfg).unwrap();
        let processed =
            crate::pipeline::mirror_augment(&crate::pipeline::filter_dataset(&ds, 5.0).unwrap());
        let opts = IdentOptions { n_iter: 2, ..Default::default() };
        let report = iterate(&processed, &veh(), &gt_tires(), &opts, None).unwrap();
        assert!(report.aborted.is_none());
        let gt = gt_tires();
        for rec in &report.iterations {
            let rms_f = curve_rms_diff(&rec.params.front, &gt.front, ROI_ALPHA_FRONT);
            let rms_r = curve_rms_diff(&rec.params.rear, &gt.rear, ROI_ALPHA_REAR);
            assert!(rms_f < 0.01 * gt.front.d, "front drifted: {rms_f}");
            assert!(rms_r < 0.01 * gt.rear.d, "rear drifted: {rms_r}");
        }
    }
}

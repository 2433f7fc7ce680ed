//! From-scratch 4-8-2 feed-forward network: LeakyReLU hidden layer, linear
//! output, full-batch Adam on MSE. 58 parameters total.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};
use crate::pipeline::TrainingSet;

pub const N_IN: usize = 4;
pub const N_HID: usize = 8;
pub const N_OUT: usize = 2;
/// 8*4 + 8 + 2*8 + 2.
pub const N_PARAMS: usize = N_HID * N_IN + N_HID + N_OUT * N_HID + N_OUT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub w1: [[f64; N_IN]; N_HID],
    pub b1: [f64; N_HID],
    pub w2: [[f64; N_HID]; N_OUT],
    pub b2: [f64; N_OUT],
}

impl MlpWeights {
    pub const ZERO: MlpWeights = MlpWeights {
        w1: [[0.0; N_IN]; N_HID],
        b1: [0.0; N_HID],
        w2: [[0.0; N_HID]; N_OUT],
        b2: [0.0; N_OUT],
    };

    /// Hidden layer: fan-in scaled uniform, biases zero. Output layer: zero,
    /// so a fresh network predicts (0, 0) everywhere and the corrected model
    /// starts out identical to the nominal one — weights only grow as far as
    /// the targets demand, which keeps the correction benign outside the
    /// training distribution (where the virtual rollout must evaluate it).
    pub fn init(seed: u64) -> MlpWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = MlpWeights::ZERO;
        let lim1 = 1.0 / (N_IN as f64).sqrt();
        for row in w.w1.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-lim1..lim1);
            }
        }
        w
    }

    /// Flatten row-major: W1, b1, W2, b2.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_PARAMS);
        for row in &self.w1 {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.b1);
        for row in &self.w2 {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn from_vec(v: &[f64]) -> Result<MlpWeights> {
        if v.len() != N_PARAMS {
            return Err(SysidError::Data(format!(
                "weight vector has {} entries, expected {N_PARAMS}",
                v.len()
            )));
        }
        let mut w = MlpWeights::ZERO;
        let mut it = v.iter().copied();
        for row in w.w1.iter_mut() {
            for x in row.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        for x in w.b1.iter_mut() {
            *x = it.next().unwrap();
        }
        for row in w.w2.iter_mut() {
            for x in row.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        for x in w.b2.iter_mut() {
            *x = it.next().unwrap();
        }
        Ok(w)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Per-channel z-scoring statistics, computed from the training inputs and
/// stored with the weights so virtual data generation reuses them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; N_IN],
    pub scale: [f64; N_IN],
}

impl Normalizer {
    pub fn identity() -> Normalizer {
        Normalizer { mean: [0.0; N_IN], scale: [1.0; N_IN] }
    }

    pub fn fit(inputs: &[[f64; N_IN]]) -> Result<Normalizer> {
        if inputs.is_empty() {
            return Err(SysidError::Data("cannot fit normalizer on empty set".into()));
        }
        let n = inputs.len() as f64;
        let mut mean = [0.0; N_IN];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut scale = [0.0; N_IN];
        for x in inputs {
            for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n).sqrt().max(1e-9);
        }
        Ok(Normalizer { mean, scale })
    }

    pub fn apply(&self, x: &[f64; N_IN]) -> [f64; N_IN] {
        let mut out = [0.0; N_IN];
        for i in 0..N_IN {
            out[i] = (x[i] - self.mean[i]) / self.scale[i];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Full-batch Adam steps.
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            leaky_slope: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(SysidError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(SysidError::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

/// Forward pass on an already-normalized input.
pub fn forward(w: &MlpWeights, x: &[f64; N_IN], leaky_slope: f64) -> [f64; N_OUT] {
    let mut h = [0.0; N_HID];
    for i in 0..N_HID {
        let mut z = w.b1[i];
        for j in 0..N_IN {
            z += w.w1[i][j] * x[j];
        }
        h[i] = leaky(z, leaky_slope);
    }
    let mut y = [0.0; N_OUT];
    for i in 0..N_OUT {
        let mut z = w.b2[i];
        for j in 0..N_HID {
            z += w.w2[i][j] * h[j];
        }
        y[i] = z;
    }
    y
}

/// MSE over samples and both output components, on normalized inputs.
pub fn mse(w: &MlpWeights, inputs: &[[f64; N_IN]], targets: &[[f64; 2]], slope: f64) -> f64 {
    let mut s = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let y = forward(w, x, slope);
        s += (y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2);
    }
    s / (inputs.len() as f64 * N_OUT as f64)
}

/// Exact gradient of `mse` with respect to all 58 parameters.
pub fn gradient(
    w: &MlpWeights,
    inputs: &[[f64; N_IN]],
    targets: &[[f64; 2]],
    slope: f64,
) -> MlpWeights {
    let mut g = MlpWeights::ZERO;
    let inv = 1.0 / (inputs.len() as f64 * N_OUT as f64);
    for (x, t) in inputs.iter().zip(targets) {
        let mut z1 = [0.0; N_HID];
        let mut h = [0.0; N_HID];
        for i in 0..N_HID {
            let mut z = w.b1[i];
            for j in 0..N_IN {
                z += w.w1[i][j] * x[j];
            }
            z1[i] = z;
            h[i] = leaky(z, slope);
        }
        let mut dy = [0.0; N_OUT];
        for i in 0..N_OUT {
            let mut y = w.b2[i];
            for j in 0..N_HID {
                y += w.w2[i][j] * h[j];
            }
            dy[i] = 2.0 * (y - t[i]) * inv;
        }
        for i in 0..N_OUT {
            g.b2[i] += dy[i];
            for j in 0..N_HID {
                g.w2[i][j] += dy[i] * h[j];
            }
        }
        for j in 0..N_HID {
            let mut dh = 0.0;
            for i in 0..N_OUT {
                dh += w.w2[i][j] * dy[i];
            }
            let dz = if z1[j] >= 0.0 { dh } else { slope * dh };
            g.b1[j] += dz;
            for k in 0..N_IN {
                g.w1[j][k] += dz * x[k];
            }
        }
    }
    g
}

/// Weights plus the normalizer they were trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub weights: MlpWeights,
    pub normalizer: Normalizer,
    pub leaky_slope: f64,
    /// Per-channel input range seen during training. `predict` clamps into
    /// this box: outside it the network would extrapolate linearly without
    /// any data support, which destabilizes the virtual rollout.
    pub input_lo: [f64; N_IN],
    pub input_hi: [f64; N_IN],
    /// Per-channel target range seen during training. Predictions are
    /// clamped into it: a correction should never exceed the largest
    /// mismatch actually observed, which keeps the corrected model's
    /// rollout bounded even when the learned function has destabilizing
    /// state feedback.
    pub output_lo: [f64; N_OUT],
    pub output_hi: [f64; N_OUT],
}

impl TrainedNet {
    /// Zero network: predicts (0, 0) everywhere.
    pub fn zero() -> TrainedNet {
        TrainedNet {
            weights: MlpWeights::ZERO,
            normalizer: Normalizer::identity(),
            leaky_slope: 0.01,
            input_lo: [-f64::MAX; N_IN],
            input_hi: [f64::MAX; N_IN],
            output_lo: [-f64::MAX; N_OUT],
            output_hi: [f64::MAX; N_OUT],
        }
    }

    pub fn predict(&self, raw_input: &[f64; N_IN]) -> [f64; N_OUT] {
        let mut x = *raw_input;
        for i in 0..N_IN {
            x[i] = x[i].clamp(self.input_lo[i], self.input_hi[i]);
        }
        let mut y = forward(&self.weights, &self.normalizer.apply(&x), self.leaky_slope);
        for i in 0..N_OUT {
            y[i] = y[i].clamp(self.output_lo[i], self.output_hi[i]);
        }
        y
    }
}

/// Full-batch Adam on MSE. Inputs are z-scored with training-set statistics;
/// targets stay in physical units. Returns the trained bundle and the
/// per-epoch loss trace.
pub fn train(data: &TrainingSet, cfg: &TrainConfig) -> Result<(TrainedNet, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SysidError::Data("training set is empty".into()));
    }
    let normalizer = Normalizer::fit(&data.inputs)?;
    let inputs: Vec<[f64; N_IN]> = data.inputs.iter().map(|x| normalizer.apply(x)).collect();
    let mut input_lo = [f64::MAX; N_IN];
    let mut input_hi = [-f64::MAX; N_IN];
    for x in &data.inputs {
        for i in 0..N_IN {
            input_lo[i] = input_lo[i].min(x[i]);
            input_hi[i] = input_hi[i].max(x[i]);
        }
    }
    let mut output_lo = [f64::MAX; N_OUT];
    let mut output_hi = [-f64::MAX; N_OUT];
    for t in &data.targets {
        for i in 0..N_OUT {
            output_lo[i] = output_lo[i].min(t[i]);
            output_hi[i] = output_hi[i].max(t[i]);
        }
    }

    let mut w = MlpWeights::init(cfg.seed).to_vec();
    let mut m = vec![0.0; N_PARAMS];
    let mut v = vec![0.0; N_PARAMS];
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let wm = MlpWeights::from_vec(&w)?;
        let loss = mse(&wm, &inputs, &data.targets, cfg.leaky_slope);
        if !loss.is_finite() {
            return Err(SysidError::Numerical(format!(
                "training diverged at epoch {epoch}: loss = {loss}"
            )));
        }
        trace.push(loss);
        let g = gradient(&wm, &inputs, &data.targets, cfg.leaky_slope).to_vec();

        let bc1 = 1.0 - cfg.beta1.powi(epoch as i32);
        let bc2 = 1.0 - cfg.beta2.powi(epoch as i32);
        for i in 0..N_PARAMS {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }

    let weights = MlpWeights::from_vec(&w)?;
    Ok((
        TrainedNet {
            weights,
            normalizer,
            leaky_slope: cfg.leaky_slope,
            input_lo,
            input_hi,
            output_lo,
            output_hi,
        },
        trace,
    ))
}

/// Serialized weight bundle: normalizer stats, layer shapes, row-major
/// weight data, the training config, and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightBundle {
    pub shapes: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    pub normalizer_mean: Vec<f64>,
    pub normalizer_scale: Vec<f64>,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    pub output_lo: Vec<f64>,
    pub output_hi: Vec<f64>,
    pub train_config: TrainConfig,
    pub seed: u64,
}

impl WeightBundle {
    pub fn from_net(net: &TrainedNet, cfg: &TrainConfig) -> WeightBundle {
        WeightBundle {
            shapes: vec![[N_HID, N_IN], [N_HID, 1], [N_OUT, N_HID], [N_OUT, 1]],
            weights: net.weights.to_vec(),
            normalizer_mean: net.normalizer.mean.to_vec(),
            normalizer_scale: net.normalizer.scale.to_vec(),
            input_lo: net.input_lo.to_vec(),
            input_hi: net.input_hi.to_vec(),
            output_lo: net.output_lo.to_vec(),
            output_hi: net.output_hi.to_vec(),
            train_config: *cfg,
            seed: cfg.seed,
        }
    }

    pub fn to_net(&self) -> Result<TrainedNet> {
        let weights = MlpWeights::from_vec(&self.weights)?;
        if self.normalizer_mean.len() != N_IN
            || self.normalizer_scale.len() != N_IN
            || self.input_lo.len() != N_IN
            || self.input_hi.len() != N_IN
            || self.output_lo.len() != N_OUT
            || self.output_hi.len() != N_OUT
        {
            return Err(SysidError::Data("normalizer stats have wrong length".into()));
        }
        let mut normalizer = Normalizer::identity();
        normalizer.mean.copy_from_slice(&self.normalizer_mean);
        normalizer.scale.copy_from_slice(&self.normalizer_scale);
        let mut input_lo = [0.0; N_IN];
        let mut input_hi = [0.0; N_IN];
        input_lo.copy_from_slice(&self.input_lo);
        input_hi.copy_from_slice(&self.input_hi);
        let mut output_lo = [0.0; N_OUT];
        let mut output_hi = [0.0; N_OUT];
        output_lo.copy_from_slice(&self.output_lo);
        output_hi.copy_from_slice(&self.output_hi);
        Ok(TrainedNet {
            weights,
            normalizer,
            leaky_slope: self.train_config.leaky_slope,
            input_lo,
            input_hi,
            output_lo,
            output_hi,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SysidError::Data(format!("serialize weights: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightBundle> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SysidError::Data(format!("parse weights: {e}")))
    }
}

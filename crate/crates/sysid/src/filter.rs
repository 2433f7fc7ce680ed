//! Zero-phase low-pass filtering: a second-order Butterworth section run
//! forward then backward over the series, with reflective edge padding.

use crate::error::{Result, SysidError};

const ORDER: usize = 2;

/// Biquad coefficients for a second-order Butterworth low-pass.
fn butter2(cutoff_hz: f64, t_s: f64) -> (f64, f64, f64, f64, f64) {
    let c = 1.0 / (std::f64::consts::PI * cutoff_hz * t_s).tan();
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + sqrt2 * c + c * c);
    let b0 = norm;
    let b1 = 2.0 * norm;
    let b2 = norm;
    let a1 = 2.0 * (1.0 - c * c) * norm;
    let a2 = (1.0 - sqrt2 * c + c * c) * norm;
    (b0, b1, b2, a1, a2)
}

fn run_forward(x: &[f64], coef: (f64, f64, f64, f64, f64)) -> Vec<f64> {
    let (b0, b1, b2, a1, a2) = coef;
    // Steady-state start: treat everything before the series as x[0].
    let (mut x1, mut x2) = (x[0], x[0]);
    let (mut y1, mut y2) = (x[0], x[0]);
    let mut out = Vec::with_capacity(x.len());
    for &xi in x {
        let y = b0 * xi + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = xi;
        y2 = y1;
        y1 = y;
        out.push(y);
    }
    out
}

/// Forward-backward second-order low-pass. Zero phase by construction.
///
/// Preconditions: `cutoff_hz` below Nyquist, series at least three filter
/// orders long. Edges are handled by reflecting one settling length of
/// samples at each end before filtering.
pub fn zero_phase_lowpass(series: &[f64], cutoff_hz: f64, t_s: f64) -> Result<Vec<f64>> {
    let nyquist = 0.5 / t_s;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(SysidError::Config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if series.len() < 3 * ORDER {
        return Err(SysidError::Data(format!(
            "series of {} samples is too short to filter (need >= {})",
            series.len(),
            3 * ORDER
        )));
    }

    let n = series.len();
    // One settling length: samples spanning a full cutoff period.
    let pad = ((1.0 / (cutoff_hz * t_s)).ceil() as usize).min(n - 1);
    let mut padded = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        padded.push(series[i]);
    }
    padded.extend_from_slice(series);
    for i in (n - pad - 1..n - 1).rev() {
        padded.push(series[i]);
    }

    let coef = butter2(cutoff_hz, t_s);
    let fwd = run_forward(&padded, coef);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = run_forward(&rev, coef);
    rev.reverse();
    Ok(rev[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const T_S: f64 = 0.02;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 * T_S).sin())
            .collect()
    }

    #[test]
    fn constant_preserved() {
        let series = vec![3.25; 400];
        let out = zero_phase_lowpass(&series, 5.0, T_S).unwrap();
        for y in out {
            assert_relative_eq!(y, 3.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn sine_below_cutoff_has_zero_lag() {
        // Cross-correlation of output and input peaks at lag 0.
        let x = sine(1.0, 1000);
        let y = zero_phase_lowpass(&x, 5.0, T_S).unwrap();
        let corr = |lag: i64| -> f64 {
            let mut s = 0.0;
            for i in 0..x.len() as i64 {
                let j = i + lag;
                if j >= 0 && (j as usize) < x.len() {
                    s += x[i as usize] * y[j as usize];
                }
            }
            s
        };
        let at_zero = corr(0);
        for lag in -10i64..=10 {
            assert!(corr(lag) <= at_zero + 1e-12, "lag {lag} beats lag 0");
        }
        // Passband amplitude stays close to unity.
        let amp = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp > 0.95, "passband amplitude {amp}");
    }

    #[test]
    fn sine_far_above_cutoff_attenuated() {
        // 20 Hz sine through a 4 Hz cutoff: 5x above the corner.
        let x = sine(20.0, 1000);
        let y = zero_phase_lowpass(&x, 4.0, T_S).unwrap();
        let amp = y[100..900].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp < 0.1, "stopband amplitude {amp}");
    }

    #[test]
    fn rejects_cutoff_at_nyquist() {
        assert!(zero_phase_lowpass(&vec![0.0; 100], 25.0, T_S).is_err());
    }

    #[test]
    fn rejects_short_series() {
        assert!(zero_phase_lowpass(&[1.0, 2.0, 3.0], 5.0, T_S).is_err());
    }
}

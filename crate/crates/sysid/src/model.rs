//! Dynamic single-track vehicle model with Pacejka lateral tire forces.
//!
//! States are `[v_y, omega]`, inputs `[v_x, delta]`. Longitudinal dynamics
//! and load transfer are out of scope; `v_x` is treated as an exogenous
//! input. All functions here are pure and deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};

/// Rigid-body parameters of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass (kg).
    pub m: f64,
    /// Yaw inertia about the CG (kg m^2).
    #[serde(rename = "I_z")]
    pub i_z: f64,
    /// CG to front axle distance (m).
    pub l_f: f64,
    /// CG to rear axle distance (m).
    pub l_r: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("m", self.m),
            ("I_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SysidError::Domain {
                    field,
                    value: v,
                    constraint: "> 0 and finite",
                });
            }
        }
        Ok(())
    }

    /// Wheelbase length. The only vehicle parameter Pure Pursuit may read.
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }
}

/// Magic-formula coefficients for one axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxleTire {
    /// Stiffness factor (1/rad).
    pub b: f64,
    /// Shape factor.
    pub c: f64,
    /// Peak force (N).
    pub d: f64,
    /// Curvature factor.
    pub e: f64,
}

impl AxleTire {
    /// Lateral force for slip angle `alpha`:
    /// `F = D sin(C atan(B a - E (B a - atan(B a))))`.
    pub fn force(&self, alpha: f64) -> f64 {
        let ba = self.b * alpha;
        self.d * (self.c * (ba - self.e * (ba - ba.atan())).atan()).sin()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.c.is_finite() && self.d.is_finite() && self.e.is_finite()
    }
}

/// Full tire parameter vector `[B_f, C_f, D_f, E_f, B_r, C_r, D_r, E_r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacejkaParams {
    pub front: AxleTire,
    pub rear: AxleTire,
}

impl PacejkaParams {
    pub fn validate(&self) -> Result<()> {
        for (axle, t) in [("front", &self.front), ("rear", &self.rear)] {
            if !t.is_finite() {
                return Err(SysidError::Data(format!(
                    "{axle} tire parameters are not finite"
                )));
            }
            let _ = axle;
        }
        Ok(())
    }
}

/// Lateral state `x = [v_y, omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralState {
    /// Lateral velocity (m/s).
    pub v_y: f64,
    /// Yaw rate (rad/s).
    pub omega: f64,
}

impl LateralState {
    pub const ZERO: LateralState = LateralState { v_y: 0.0, omega: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("v_y", self.v_y), ("omega", self.omega)] {
            if !v.is_finite() {
                return Err(SysidError::Domain {
                    field,
                    value: v,
                    constraint: "finite",
                });
            }
        }
        Ok(())
    }
}

/// Input `u = [v_x, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal velocity (m/s), strictly positive.
    pub v_x: f64,
    /// Steering angle (rad), |delta| < pi/2.
    pub delta: f64,
}

impl ControlInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_x.is_finite() && self.v_x > 0.0) {
            return Err(SysidError::Domain {
                field: "v_x",
                value: self.v_x,
                constraint: "> 0 and finite",
            });
        }
        if !(self.delta.is_finite() && self.delta.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(SysidError::Domain {
                field: "delta",
                value: self.delta,
                constraint: "|delta| < pi/2",
            });
        }
        Ok(())
    }
}

/// World-frame pose, heading measured from the positive X axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading (rad), normalized to (-pi, pi].
    pub psi: f64,
}

impl Pose {
    pub fn normalized(mut self) -> Pose {
        self.psi = wrap_angle(self.psi);
        self
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Front and rear slip angles:
/// `a_f = delta - atan((v_y + l_f w)/v_x)`, `a_r = -atan((v_y - l_r w)/v_x)`.
pub fn slip_angles(
    state: LateralState,
    input: ControlInput,
    veh: &VehicleParams,
) -> Result<(f64, f64)> {
    state.validate()?;
    input.validate()?;
    let alpha_f = input.delta - ((state.v_y + veh.l_f * state.omega) / input.v_x).atan();
    let alpha_r = -((state.v_y - veh.l_r * state.omega) / input.v_x).atan();
    Ok((alpha_f, alpha_r))
}

/// Continuous-time lateral dynamics `(dv_y, domega)`.
pub fn lateral_derivatives(
    state: LateralState,
    input: ControlInput,
    veh: &VehicleParams,
    tires: &PacejkaParams,
) -> Result<(f64, f64)> {
    let (alpha_f, alpha_r) = slip_angles(state, input, veh)?;
    let f_yf = tires.front.force(alpha_f);
    let f_yr = tires.rear.force(alpha_r);
    let cos_d = input.delta.cos();
    let dv_y = (f_yr + f_yf * cos_d - veh.m * input.v_x * state.omega) / veh.m;
    let domega = (f_yf * veh.l_f * cos_d - f_yr * veh.l_r) / veh.i_z;
    Ok((dv_y, domega))
}

/// One forward-Euler step of the lateral dynamics. No sub-stepping.
pub fn euler_step(
    state: LateralState,
    input: ControlInput,
    veh: &VehicleParams,
    tires: &PacejkaParams,
    t_s: f64,
) -> Result<LateralState> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(SysidError::Domain {
            field: "T_s",
            value: t_s,
            constraint: "> 0 and finite",
        });
    }
    let (dv_y, domega) = lateral_derivatives(state, input, veh, tires)?;
    Ok(LateralState {
        v_y: state.v_y + dv_y * t_s,
        omega: state.omega + domega * t_s,
    })
}

/// Axle forces under the steady-state assumption (`dv_y = domega = 0`):
/// `F_yr = m l_f/(l_f+l_r) v_x w`, `F_yf = m l_r/(l_f+l_r) v_x w / cos(delta)`.
pub fn steady_state_forces(
    input: ControlInput,
    omega: f64,
    veh: &VehicleParams,
) -> Result<(f64, f64)> {
    input.validate()?;
    if !omega.is_finite() {
        return Err(SysidError::Domain {
            field: "omega",
            value: omega,
            constraint: "finite",
        });
    }
    let wheelbase = veh.wheelbase();
    let f_yr = veh.m * veh.l_f / wheelbase * input.v_x * omega;
    let f_yf = veh.m * veh.l_r / wheelbase * input.v_x * omega / input.delta.cos();
    Ok((f_yr, f_yf))
}

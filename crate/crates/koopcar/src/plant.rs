//! Ground-truth four-wheel planar vehicle simulator: Magic-Formula tire
//! forces, Newton-Euler body dynamics, global pose kinematics, fixed-step
//! forward-Euler integration.
//!
//! Wheel order is FL, FR, RL, RR. Front wheels sit at +l_f and steer by
//! delta_f, rear wheels at -l_r. Left wheels are at +w_B/2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;
/// atan2 slip angles degenerate at standstill; reject below this speed.
pub const LOW_SPEED_GUARD: f64 = 0.5;
/// Admissible front wheel steering angle [rad].
pub const STEER_LIMIT: f64 = 0.3;
/// Simulation sanity bounds; exceeding them signals divergence.
pub const VX_BOUND: f64 = 80.0;
pub const WR_BOUND: f64 = 3.0;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Yaw moment of inertia [kg m^2].
    pub yaw_inertia: f64,
    /// Front axle to c.g. distance [m].
    pub lf: f64,
    /// Rear axle to c.g. distance [m].
    pub lr: f64,
    /// Track width [m].
    pub track_width: f64,
    /// Effective wheel radius [m].
    pub wheel_radius: f64,
    /// Magic-Formula shape coefficients.
    pub tire_b: f64,
    pub tire_c: f64,
    pub tire_d: f64,
    pub tire_e: f64,
    /// Maximum total drive torque [N m].
    pub t_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 1848.0,
            yaw_inertia: 3000.0,
            lf: 1.2,
            lr: 1.55,
            track_width: 1.6,
            wheel_radius: 0.31,
            tire_b: 10.0,
            tire_c: 1.9,
            tire_d: 1.0,
            tire_e: 0.97,
            t_max: 3000.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("track_width", self.track_width),
            ("wheel_radius", self.wheel_radius),
            ("tire_b", self.tire_b),
            ("tire_c", self.tire_c),
            ("tire_d", self.tire_d),
            ("tire_e", self.tire_e),
            ("t_max", self.t_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tire_d > 1.2 {
            return Err(Error::InvalidParam(format!(
                "tire_d must lie in (0, 1.2], got {}",
                self.tire_d
            )));
        }
        Ok(())
    }

    /// Static vertical load per front wheel [N].
    pub fn fz_front(&self) -> f64 {
        self.mass * GRAVITY * self.lr / (2.0 * (self.lf + self.lr))
    }

    /// Static vertical load per rear wheel [N].
    pub fn fz_rear(&self) -> f64 {
        self.mass * GRAVITY * self.lf / (2.0 * (self.lf + self.lr))
    }
}

/// Body-frame velocities: longitudinal, lateral, yaw rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vx: f64,
    pub vy: f64,
    pub wr: f64,
}

impl VehicleState {
    pub fn new(vx: f64, vy: f64, wr: f64) -> Self {
        VehicleState { vx, vy, wr }
    }

    pub fn check_bounds(&self) -> Result<()> {
        if !(self.vx.is_finite() && self.vy.is_finite() && self.wr.is_finite()) {
            return Err(Error::StateBounds(format!("non-finite state {self:?}")));
        }
        if self.vx.abs() > VX_BOUND {
            return Err(Error::StateBounds(format!("|vx| = {} > {VX_BOUND}", self.vx.abs())));
        }
        if self.wr.abs() > WR_BOUND {
            return Err(Error::StateBounds(format!("|wr| = {} > {WR_BOUND}", self.wr.abs())));
        }
        Ok(())
    }
}

/// Global-frame pose; theta is kept unwrapped over a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }
}

/// Total drive torque [N m] and front wheel steering angle [rad].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub torque: f64,
    pub delta_f: f64,
}

impl ControlInput {
    pub fn new(torque: f64, delta_f: f64) -> Self {
        ControlInput { torque, delta_f }
    }
}

/// Per-wheel forces and sideslip angles, FL/FR/RL/RR.
#[derive(Clone, Copy, Debug)]
pub struct WheelForces {
    pub fx: [f64; 4],
    pub fy: [f64; 4],
    pub fz: [f64; 4],
    pub alpha: [f64; 4],
}

/// Kinematic sideslip angles of the four wheels.
///
/// Front: alpha = delta_f - atan2(Vy + lf*wr, Vx -/+ wB*wr/2),
/// rear: alpha = -atan2(Vy - lr*wr, Vx -/+ wB*wr/2), left wheels taking
/// the minus track-width term.
pub fn sideslip_angles(
    state: &VehicleState,
    delta_f: f64,
    params: &VehicleParams,
) -> Result<[f64; 4]> {
    if state.vx <= LOW_SPEED_GUARD {
        return Err(Error::LowSpeed {
            vx: state.vx,
            limit: LOW_SPEED_GUARD,
        });
    }
    let half_track = 0.5 * params.track_width * state.wr;
    let front_num = state.vy + params.lf * state.wr;
    let rear_num = state.vy - params.lr * state.wr;
    Ok([
        delta_f - front_num.atan2(state.vx - half_track),
        delta_f - front_num.atan2(state.vx + half_track),
        -rear_num.atan2(state.vx - half_track),
        -rear_num.atan2(state.vx + half_track),
    ])
}

/// Lateral Magic Formula: F_y = mu*D*F_z*sin(C*atan(B*a - E*(B*a - atan(B*a)))).
pub fn magic_formula(alpha: f64, fz: f64, mu: f64, params: &VehicleParams) -> f64 {
    let ba = params.tire_b * alpha;
    let arg = ba - params.tire_e * (ba - ba.atan());
    mu * params.tire_d * fz * (params.tire_c * arg.atan()).sin()
}

/// Slope of the lateral Magic Formula at zero slip: mu*B*C*D*F_z.
pub fn cornering_stiffness(fz: f64, mu: f64, params: &VehicleParams) -> f64 {
    mu * params.tire_b * params.tire_c * params.tire_d * fz
}

/// Per-wheel tire forces. Longitudinal force is the quasi-static T_i/r_w
/// with equal torque split; each wheel's force vector is capped by the
/// friction circle sqrt(Fx^2 + Fy^2) <= mu*Fz.
pub fn tire_forces(
    state: &VehicleState,
    input: &ControlInput,
    mu: f64,
    params: &VehicleParams,
) -> Result<WheelForces> {
    let alpha = sideslip_angles(state, input.delta_f, params)?;
    let fz = [
        params.fz_front(),
        params.fz_front(),
        params.fz_rear(),
        params.fz_rear(),
    ];
    let fx_raw = input.torque / (4.0 * params.wheel_radius);
    let mut fx = [fx_raw; 4];
    let mut fy = [0.0; 4];
    for i in 0..4 {
        fy[i] = magic_formula(alpha[i], fz[i], mu, params);
        let norm = (fx[i] * fx[i] + fy[i] * fy[i]).sqrt();
        let cap = mu * fz[i];
        if norm > cap {
            let scale = cap / norm;
            fx[i] *= scale;
            fy[i] *= scale;
        }
    }
    Ok(WheelForces { fx, fy, fz, alpha })
}

/// One forward-Euler step of the Newton-Euler planar equations.
pub fn step_dynamics(
    state: &VehicleState,
    input: &ControlInput,
    mu: f64,
    params: &VehicleParams,
    ts: f64,
) -> Result<VehicleState> {
    debug_assert!(ts > 0.0 && ts <= 0.05, "ts out of (0, 0.05]");
    debug_assert!(input.delta_f.abs() <= STEER_LIMIT + 1e-9);
    debug_assert!(input.torque.abs() <= params.t_max + 1e-9);
    let w = tire_forces(state, input, mu, params)?;
    let (sd, cd) = input.delta_f.sin_cos();

    // Front tire forces resolved into the body frame.
    let fx_front = (w.fx[0] + w.fx[1]) * cd - (w.fy[0] + w.fy[1]) * sd;
    let fy_front = (w.fx[0] + w.fx[1]) * sd + (w.fy[0] + w.fy[1]) * cd;
    let fx_rear = w.fx[2] + w.fx[3];
    let fy_rear = w.fy[2] + w.fy[3];

    let m = params.mass;
    let iz = params.yaw_inertia;
    let half_track = 0.5 * params.track_width;

    // Yaw moment: front forces act at +lf, rear at -lr; left-side (FL, RL)
    // body-frame longitudinal forces act at +wB/2 and contribute negatively.
    let body_fx_fl = w.fx[0] * cd - w.fy[0] * sd;
    let body_fx_fr = w.fx[1] * cd - w.fy[1] * sd;
    let body_fy_fl = w.fx[0] * sd + w.fy[0] * cd;
    let body_fy_fr = w.fx[1] * sd + w.fy[1] * cd;
    let moment = params.lf * (body_fy_fl + body_fy_fr) - params.lr * fy_rear
        + half_track * ((body_fx_fr + w.fx[3]) - (body_fx_fl + w.fx[2]));

    let next = VehicleState {
        vx: state.vx + ts * (state.vy * state.wr + (fx_rear + fx_front) / m),
        vy: state.vy + ts * (-state.vx * state.wr + (fy_rear + fy_front) / m),
        wr: state.wr + ts * moment / iz,
    };
    next.check_bounds()?;
    Ok(next)
}

/// Global-frame kinematic pose update.
pub fn step_pose(pose: &Pose, state: &VehicleState, ts: f64) -> Pose {
    let (st, ct) = pose.theta.sin_cos();
    Pose {
        x: pose.x + ts * (state.vx * ct - state.vy * st),
        y: pose.y + ts * (state.vx * st + state.vy * ct),
        theta: pose.theta + ts * state.wr,
    }
}

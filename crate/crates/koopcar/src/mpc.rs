//! Control stack: longitudinal P controller and the lifted-space /
//! linear-bicycle receding-horizon steering controllers sharing one
//! SQP-over-dense-QP core.
//!
//! The torque channel is pinned to the value supplied by the
//! longitudinal controller (the input-equality rows are condensed away by
//! substitution, so they hold exactly), leaving the N_c steering moves as
//! the only decision variables. Steering is held at its last move from
//! N_c to N_p. The lifted/bicycle velocity predictions are linear in the
//! steering moves; only the pose output is nonlinear, so each SQP pass
//! linearizes the pose rollout around the previous predicted trajectory
//! and solves a small box- and state-constrained QP.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eso::EsoState;
use crate::koopman::{input_to_vec, KoopmanModel};
use crate::plant::{cornering_stiffness, ControlInput, Pose, VehicleParams, VehicleState};
use crate::qp::{qp_solve, KktResiduals, QpProblem};

#[derive(Clone, Copy, Debug)]
pub struct MpcConfig {
    /// Prediction steps N_p.
    pub np: usize,
    /// Control steps N_c <= N_p.
    pub nc: usize,
    /// Diagonal stage weights on (X, Y, theta) tracking errors.
    pub q_weights: [f64; 3],
    /// Weight on steering effort.
    pub r_weight: f64,
    /// Weight on steering increments.
    pub p_weight: f64,
    /// Bounds on predicted (Vx, Vy, wr).
    pub x_min: [f64; 3],
    pub x_max: [f64; 3],
    /// Steering box; delta_min = -delta_max.
    pub delta_max: f64,
    pub sqp_iters: usize,
    pub sqp_tol: f64,
    pub ts: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            np: 20,
            nc: 5,
            q_weights: [10.0, 10.0, 50.0],
            r_weight: 1.0,
            p_weight: 100.0,
            x_min: [-80.0, -5.0, -1.5],
            x_max: [80.0, 5.0, 1.5],
            delta_max: 0.3,
            sqp_iters: 5,
            sqp_tol: 1e-4,
            ts: 0.025,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nc < 1 || self.nc > self.np {
            return Err(Error::InvalidParam(format!(
                "need 1 <= nc <= np, got nc={} np={}",
                self.nc, self.np
            )));
        }
        if !(self.r_weight > 0.0) {
            return Err(Error::InvalidParam("r_weight must be positive".into()));
        }
        if self.q_weights.iter().any(|&w| w < 0.0) || self.p_weight < 0.0 {
            return Err(Error::InvalidParam("Q and P weights must be nonnegative".into()));
        }
        if !(self.delta_max > 0.0 && self.ts > 0.0 && self.sqp_iters >= 1) {
            return Err(Error::InvalidParam("delta_max, ts, sqp_iters must be positive".into()));
        }
        for i in 0..3 {
            if self.x_min[i] >= self.x_max[i] {
                return Err(Error::InvalidParam("state bounds must satisfy min < max".into()));
            }
        }
        Ok(())
    }
}

/// Reference poses for prediction steps 1..=N_p plus the speed target.
#[derive(Clone, Debug)]
pub struct ReferenceWindow {
    pub poses: Vec<Pose>,
    pub vx_ref: f64,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    /// First steering command, applied to the plant.
    pub delta: f64,
    /// All N_c steering moves.
    pub delta_seq: Vec<f64>,
    /// Pinned torque, identical at every predicted step.
    pub torque: f64,
    /// Predicted velocities at steps 1..=N_p.
    pub predicted_states: Vec<VehicleState>,
    /// Predicted poses at steps 1..=N_p.
    pub predicted_poses: Vec<Pose>,
    /// Quadratic-model objective at each SQP iterate (constants included).
    pub qp_objectives: Vec<f64>,
    pub sqp_iterations: usize,
    pub kkt: KktResiduals,
    /// Set when the solver had to fall back to the last feasible iterate.
    pub degraded: bool,
    pub solve_time_ms: f64,
}

/// Proportional longitudinal controller with saturation.
pub fn p_longitudinal(vx_ref: f64, vx: f64, kp: f64, t_max: f64) -> f64 {
    assert!(kp > 0.0, "kp must be positive");
    (kp * (vx_ref - vx)).clamp(-t_max, t_max)
}

/// Linear part of the velocity prediction: at step i (1-based),
/// vel_i = base[i-1] + gain[i-1] * d where d stacks the N_c steering moves.
struct VelocityPrediction {
    base: Vec<DVector<f64>>,
    gain: Vec<DMatrix<f64>>,
}

fn koopman_velocity_prediction(
    model: &KoopmanModel,
    x: &VehicleState,
    w: &DVector<f64>,
    t_fixed: f64,
    cfg: &MpcConfig,
) -> VelocityPrediction {
    let q = model.dims.q();
    let z0 = model.lift(x);
    // B u splits into a constant torque part and a steering column; the
    // input normalizer is per-dimension affine, so this is exact.
    let u_torque_scaled = model.scaler_u.apply(&input_to_vec(&ControlInput::new(t_fixed, 0.0)));
    let const_step = &model.b * u_torque_scaled + w;
    let b_delta = model.b.column(1).into_owned() * model.scaler_u.gain(1);

    let mut base = Vec::with_capacity(cfg.np);
    let mut gain = Vec::with_capacity(cfg.np);
    let mut z_base = z0;
    let mut z_gain = DMatrix::<f64>::zeros(q, cfg.nc);
    for i in 0..cfg.np {
        z_base = &model.a * &z_base + &const_step;
        z_gain = &model.a * &z_gain;
        let var = i.min(cfg.nc - 1);
        for r in 0..q {
            z_gain[(r, var)] += b_delta[r];
        }
        base.push(z_base.rows(0, 3).into_owned());
        gain.push(z_gain.rows(0, 3).into_owned());
    }
    VelocityPrediction { base, gain }
}

/// Discrete single-track (bicycle) lateral model with cornering
/// stiffnesses from the tire curve's slope at zero slip and the
/// longitudinal speed frozen at its measured value.
#[derive(Clone, Copy, Debug)]
pub struct BicycleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    /// Front/rear axle cornering stiffness [N/rad].
    pub cf: f64,
    pub cr: f64,
}

impl BicycleParams {
    pub fn from_vehicle(params: &VehicleParams, mu: f64) -> BicycleParams {
        BicycleParams {
            mass: params.mass,
            yaw_inertia: params.yaw_inertia,
            lf: params.lf,
            lr: params.lr,
            cf: 2.0 * cornering_stiffness(params.fz_front(), mu, params),
            cr: 2.0 * cornering_stiffness(params.fz_rear(), mu, params),
        }
    }
}

fn bicycle_velocity_prediction(
    bike: &BicycleParams,
    x: &VehicleState,
    cfg: &MpcConfig,
) -> VelocityPrediction {
    let vx = x.vx.max(1.0);
    let ts = cfg.ts;
    let (m, iz, lf, lr, cf, cr) = (bike.mass, bike.yaw_inertia, bike.lf, bike.lr, bike.cf, bike.cr);
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0 - ts * (cf + cr) / (m * vx),
            ts * ((cr * lr - cf * lf) / (m * vx) - vx),
            ts * (cr * lr - cf * lf) / (iz * vx),
            1.0 - ts * (cf * lf * lf + cr * lr * lr) / (iz * vx),
        ],
    );
    let b = DVector::from_vec(vec![ts * cf / m, ts * cf * lf / iz]);

    let mut base = Vec::with_capacity(cfg.np);
    let mut gain = Vec::with_capacity(cfg.np);
    let mut s_base = DVector::from_vec(vec![x.vy, x.wr]);
    let mut s_gain = DMatrix::<f64>::zeros(2, cfg.nc);
    for i in 0..cfg.np {
        s_base = &a * &s_base;
        s_gain = &a * &s_gain;
        let var = i.min(cfg.nc - 1);
        for r in 0..2 {
            s_gain[(r, var)] += b[r];
        }
        let mut vb = DVector::zeros(3);
        vb[0] = x.vx;
        vb[1] = s_base[0];
        vb[2] = s_base[1];
        let mut vg = DMatrix::zeros(3, cfg.nc);
        vg.view_mut((1, 0), (2, cfg.nc)).copy_from(&s_gain);
        base.push(vb);
        gain.push(vg);
    }
    VelocityPrediction { base, gain }
}

/// Nonlinear pose rollout over a velocity trajectory: pose_{i+1} uses the
/// velocities at step i, with step 0 being the measured state.
fn rollout_poses(
    pose0: &Pose,
    vel0: &VehicleState,
    velocities: &[DVector<f64>],
    np: usize,
    ts: f64,
) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(np + 1);
    poses.push(*pose0);
    for i in 0..np {
        let prev = poses[i];
        let (vx, vy, wr) = if i == 0 {
            (vel0.vx, vel0.vy, vel0.wr)
        } else {
            let v = &velocities[i - 1];
            (v[0], v[1], v[2])
        };
        let (st, ct) = prev.theta.sin_cos();
        poses.push(Pose {
            x: prev.x + ts * (vx * ct - vy * st),
            y: prev.y + ts * (vx * st + vy * ct),
            theta: prev.theta + ts * wr,
        });
    }
    poses
}

struct SqpOutcome {
    d: DVector<f64>,
    qp_objectives: Vec<f64>,
    iterations: usize,
    kkt: KktResiduals,
    degraded: bool,
}

fn solve_sqp(
    pred: &VelocityPrediction,
    pose0: &Pose,
    x0: &VehicleState,
    reference: &ReferenceWindow,
    delta_prev: f64,
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> Result<SqpOutcome> {
    let np = cfg.np;
    let nc = cfg.nc;
    let seed = delta_prev.clamp(-cfg.delta_max, cfg.delta_max);
    let mut d = match warm {
        Some(w) if w.len() == nc => {
            DVector::from_fn(nc, |i, _| w[i].clamp(-cfg.delta_max, cfg.delta_max))
        }
        _ => DVector::from_element(nc, seed),
    };

    // Constraint rows shared across SQP iterations: steering box plus the
    // (exactly linear) velocity bounds at every prediction step.
    let n_rows = 2 * nc + 6 * np;
    let mut g = DMatrix::zeros(n_rows, nc);
    let mut h = DVector::zeros(n_rows);
    for j in 0..nc {
        g[(2 * j, j)] = 1.0;
        h[2 * j] = cfg.delta_max;
        g[(2 * j + 1, j)] = -1.0;
        h[2 * j + 1] = cfg.delta_max;
    }
    for i in 0..np {
        for r in 0..3 {
            let row_hi = 2 * nc + 6 * i + 2 * r;
            for j in 0..nc {
                g[(row_hi, j)] = pred.gain[i][(r, j)];
                g[(row_hi + 1, j)] = -pred.gain[i][(r, j)];
            }
            h[row_hi] = cfg.x_max[r] - pred.base[i][r];
            h[row_hi + 1] = pred.base[i][r] - cfg.x_min[r];
        }
    }

    let mut qp_objectives = Vec::new();
    let mut kkt = KktResiduals::default();
    let mut iterations = 0;
    let mut degraded = false;

    for _iter in 0..cfg.sqp_iters {
        iterations += 1;
        // Nominal velocity and pose trajectories at the current iterate.
        let velocities: Vec<DVector<f64>> = (0..np)
            .map(|i| &pred.base[i] + &pred.gain[i] * &d)
            .collect();
        let poses = rollout_poses(pose0, x0, &velocities, np, cfg.ts);

        // Jacobians of the pose recursion w.r.t. the steering moves.
        let mut jx = nalgebra::RowDVector::<f64>::zeros(nc);
        let mut jy = nalgebra::RowDVector::<f64>::zeros(nc);
        let mut jt = nalgebra::RowDVector::<f64>::zeros(nc);
        let zero_row = nalgebra::RowDVector::<f64>::zeros(nc);
        let mut pose_jacobians: Vec<DMatrix<f64>> = Vec::with_capacity(np);
        for i in 0..np {
            let (vx, vy) = if i == 0 {
                (x0.vx, x0.vy)
            } else {
                (velocities[i - 1][0], velocities[i - 1][1])
            };
            let (st, ct) = poses[i].theta.sin_cos();
            let (jvx, jvy, jwr) = if i == 0 {
                (zero_row.clone(), zero_row.clone(), zero_row.clone())
            } else {
                (
                    pred.gain[i - 1].row(0).into_owned(),
                    pred.gain[i - 1].row(1).into_owned(),
                    pred.gain[i - 1].row(2).into_owned(),
                )
            };
            let jx_next = &jx + cfg.ts * (ct * &jvx - st * &jvy - (vx * st + vy * ct) * &jt);
            let jy_next = &jy + cfg.ts * (st * &jvx + ct * &jvy + (vx * ct - vy * st) * &jt);
            let jt_next = &jt + cfg.ts * jwr;
            jx = jx_next;
            jy = jy_next;
            jt = jt_next;
            let mut ji = DMatrix::zeros(3, nc);
            ji.row_mut(0).copy_from(&jx);
            ji.row_mut(1).copy_from(&jy);
            ji.row_mut(2).copy_from(&jt);
            pose_jacobians.push(ji);
        }

        // Quadratic model in absolute moves: residual_i(dd) = J_i dd + e_i
        // with e_i the nominal error minus J_i * d_bar.
        let mut hess = DMatrix::<f64>::zeros(nc, nc);
        let mut lin = DVector::<f64>::zeros(nc);
        let mut const_term = 0.0;
        for i in 0..np {
            let err_nom = DVector::from_vec(vec![
                poses[i + 1].x - reference.poses[i].x,
                poses[i + 1].y - reference.poses[i].y,
                poses[i + 1].theta - reference.poses[i].theta,
            ]);
            let e_i = &err_nom - &pose_jacobians[i] * &d;
            for r in 0..3 {
                let w = cfg.q_weights[r];
                if w == 0.0 {
                    continue;
                }
                let jr = pose_jacobians[i].row(r);
                hess += w * 2.0 * jr.transpose() * jr;
                lin += w * 2.0 * e_i[r] * jr.transpose();
                const_term += w * e_i[r] * e_i[r];
            }
        }
        for j in 0..nc {
            hess[(j, j)] += 2.0 * cfg.r_weight;
        }
        // Increment penalty: delta_0 - delta_prev and successive moves.
        let mut l_mat = DMatrix::<f64>::zeros(nc, nc);
        for j in 0..nc {
            l_mat[(j, j)] = 1.0;
            if j > 0 {
                l_mat[(j, j - 1)] = -1.0;
            }
        }
        let mut l0 = DVector::<f64>::zeros(nc);
        l0[0] = delta_prev;
        hess += 2.0 * cfg.p_weight * l_mat.transpose() * &l_mat;
        lin -= 2.0 * cfg.p_weight * l_mat.transpose() * &l0;
        const_term += cfg.p_weight * l0.norm_squared();

        let problem = QpProblem {
            hessian: hess,
            linear: lin,
            ineq_mat: g.clone(),
            ineq_rhs: h.clone(),
            eq_mat: None,
            eq_rhs: None,
        };
        let sol = match qp_solve(&problem) {
            Ok(s) => s,
            Err(e) => {
                if qp_objectives.is_empty() {
                    return Err(e);
                }
                degraded = true;
                break;
            }
        };
        // Full quadratic-model value at the optimizer (constants restored).
        qp_objectives.push(sol.objective + const_term);
        kkt = sol.kkt;
        let step = (&sol.x - &d).amax();
        d = sol.x;
        if step < cfg.sqp_tol {
            break;
        }
    }

    Ok(SqpOutcome {
        d,
        qp_objectives,
        iterations,
        kkt,
        degraded,
    })
}

fn finish_solution(
    pred: &VelocityPrediction,
    pose0: &Pose,
    x0: &VehicleState,
    t_fixed: f64,
    cfg: &MpcConfig,
    outcome: SqpOutcome,
    started: Instant,
) -> MpcSolution {
    let velocities: Vec<DVector<f64>> = (0..cfg.np)
        .map(|i| &pred.base[i] + &pred.gain[i] * &outcome.d)
        .collect();
    let poses = rollout_poses(pose0, x0, &velocities, cfg.np, cfg.ts);
    MpcSolution {
        delta: outcome.d[0],
        delta_seq: outcome.d.iter().cloned().collect(),
        torque: t_fixed,
        predicted_states: velocities
            .iter()
            .map(|v| VehicleState::new(v[0], v[1], v[2]))
            .collect(),
        predicted_poses: poses[1..].to_vec(),
        qp_objectives: outcome.qp_objectives,
        sqp_iterations: outcome.iterations,
        kkt: outcome.kkt,
        degraded: outcome.degraded,
        solve_time_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

fn check_reference(reference: &ReferenceWindow, cfg: &MpcConfig) -> Result<()> {
    cfg.validate()?;
    if reference.poses.len() != cfg.np {
        return Err(Error::ShapeMismatch {
            expected: format!("reference window of {} poses", cfg.np),
            got: format!("{}", reference.poses.len()),
        });
    }
    Ok(())
}

/// Lifted-space MPC with online disturbance compensation: the estimated
/// total disturbance is held constant across the horizon.
#[allow(clippy::too_many_arguments)]
pub fn solve_eso_dkmpc(
    model: &KoopmanModel,
    est: &EsoState,
    pose: &Pose,
    x: &VehicleState,
    reference: &ReferenceWindow,
    t_fixed: f64,
    u_prev: &ControlInput,
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> Result<MpcSolution> {
    check_reference(reference, cfg)?;
    if est.w_hat.len() != model.dims.q() {
        return Err(Error::ShapeMismatch {
            expected: format!("disturbance of length {}", model.dims.q()),
            got: format!("{}", est.w_hat.len()),
        });
    }
    let started = Instant::now();
    let pred = koopman_velocity_prediction(model, x, &est.w_hat, t_fixed, cfg);
    let outcome = solve_sqp(&pred, pose, x, reference, u_prev.delta_f, cfg, warm)?;
    Ok(finish_solution(&pred, pose, x, t_fixed, cfg, outcome, started))
}

/// Lifted-space MPC without disturbance compensation (w = 0).
#[allow(clippy::too_many_arguments)]
pub fn solve_dkmpc(
    model: &KoopmanModel,
    pose: &Pose,
    x: &VehicleState,
    reference: &ReferenceWindow,
    t_fixed: f64,
    u_prev: &ControlInput,
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> Result<MpcSolution> {
    check_reference(reference, cfg)?;
    let started = Instant::now();
    let zero_w = DVector::zeros(model.dims.q());
    let pred = koopman_velocity_prediction(model, x, &zero_w, t_fixed, cfg);
    let outcome = solve_sqp(&pred, pose, x, reference, u_prev.delta_f, cfg, warm)?;
    Ok(finish_solution(&pred, pose, x, t_fixed, cfg, outcome, started))
}

/// Linear-bicycle MPC baseline: same pose output, costs, and constraints.
#[allow(clippy::too_many_arguments)]
pub fn solve_lmpc(
    bike: &BicycleParams,
    pose: &Pose,
    x: &VehicleState,
    reference: &ReferenceWindow,
    t_fixed: f64,
    u_prev: &ControlInput,
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> Result<MpcSolution> {
    check_reference(reference, cfg)?;
    let started = Instant::now();
    let pred = bicycle_velocity_prediction(bike, x, cfg);
    let outcome = solve_sqp(&pred, pose, x, reference, u_prev.delta_f, cfg, warm)?;
    Ok(finish_solution(&pred, pose, x, t_fixed, cfg, outcome, started))
}

//! Closed-loop scenario execution, tracking metrics, controller
//! comparison, and CSV export.
//!
//! Per control period: measure the plant state, project it onto the
//! reference, run the longitudinal P controller for torque, update the
//! disturbance observer (when enabled) from the previous period's
//! measurement and input, solve the steering MPC, apply the command, and
//! advance the plant and pose.
//!
//! CSV timing columns are zeroed by default so repeated runs with a fixed
//! seed are byte-identical; pass `TimingMode::Real` (CLI `--profile`) to
//! export wall-clock solve times instead. In-memory traces always carry
//! real timings.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eso::{eso_step, EsoGains, EsoState};
use crate::koopman::KoopmanModel;
use crate::mpc::{
    p_longitudinal, solve_dkmpc, solve_eso_dkmpc, solve_lmpc, BicycleParams, MpcConfig,
};
use crate::plant::{step_dynamics, step_pose, ControlInput, Pose, VehicleParams, VehicleState};
use crate::reference::{gen_dlc_reference, DlcGeometry};

#[derive(Clone, Debug)]
pub enum SpeedProfile {
    /// Constant target [m/s].
    Constant(f64),
    /// Piecewise-linear (t [s], v [m/s]) knots; clamped outside the range.
    Piecewise(Vec<(f64, f64)>),
}

impl SpeedProfile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            SpeedProfile::Constant(v) => *v,
            SpeedProfile::Piecewise(knots) => {
                if knots.is_empty() {
                    return 0.0;
                }
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                for w in knots.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return v0 + a * (v1 - v0);
                    }
                }
                knots.last().unwrap().1
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub mu: f64,
    /// Plant-side mass override [kg]; controllers keep the nominal value.
    pub mass_override: Option<f64>,
    pub speed: SpeedProfile,
    pub dlc: DlcGeometry,
    pub duration: f64,
    pub ts: f64,
    /// Std-dev of additive Gaussian noise on measured states; off when None.
    pub noise_std: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.2) {
            return Err(Error::InvalidParam(format!("mu must lie in (0, 1.2], got {}", self.mu)));
        }
        if !(self.duration > 0.0 && self.ts > 0.0) {
            return Err(Error::InvalidParam("duration and ts must be positive".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.ts).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerKind {
    Lmpc,
    Dkmpc,
    EsoDkmpc,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Lmpc => "lmpc",
            ControllerKind::Dkmpc => "dkmpc",
            ControllerKind::EsoDkmpc => "eso-dkmpc",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lmpc" => Ok(ControllerKind::Lmpc),
            "dkmpc" => Ok(ControllerKind::Dkmpc),
            "eso-dkmpc" => Ok(ControllerKind::EsoDkmpc),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected lmpc | dkmpc | eso-dkmpc)"
            ))),
        }
    }
}

#[derive(Clone)]
pub struct ControllerSetup<'a> {
    pub kind: ControllerKind,
    pub model: Option<&'a KoopmanModel>,
    pub gains: Option<&'a EsoGains>,
    pub mpc: MpcConfig,
    pub kp_long: f64,
    /// Nominal road friction assumed by the linear bicycle baseline.
    pub lmpc_mu: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub wr: f64,
    pub torque: f64,
    pub delta_f: f64,
    pub x_r: f64,
    pub y_r: f64,
    pub theta_r: f64,
    pub e_y: f64,
    pub d_phi: f64,
    pub w_norm: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub controller: String,
    pub rows: Vec<TraceRow>,
    pub diverged: bool,
    pub ts: f64,
}

pub fn run_closed_loop(
    scenario: &Scenario,
    setup: &ControllerSetup,
    vehicle: &VehicleParams,
    seed: u64,
) -> Result<RunTrace> {
    scenario.validate()?;
    vehicle.validate()?;
    setup.mpc.validate()?;
    let model = match setup.kind {
        ControllerKind::Lmpc => None,
        _ => Some(setup.model.ok_or_else(|| {
            Error::Config(format!("{} requires a trained model", setup.kind.name()))
        })?),
    };
    let gains = match setup.kind {
        ControllerKind::EsoDkmpc => Some(setup.gains.ok_or_else(|| {
            Error::Config("eso-dkmpc requires observer gains".into())
        })?),
        _ => None,
    };

    let mut plant_params = *vehicle;
    if let Some(m) = scenario.mass_override {
        plant_params.mass = m;
    }
    let bike = BicycleParams::from_vehicle(vehicle, setup.lmpc_mu);
    let path = gen_dlc_reference(&scenario.dlc);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);

    let mut state = VehicleState::new(scenario.speed.at(0.0), 0.0, 0.0);
    let mut pose = Pose::new(0.0, 0.0, 0.0);
    let mut u_prev = ControlInput::new(0.0, 0.0);
    let mut warm: Option<Vec<f64>> = None;
    let mut est: Option<EsoState> = None;
    let mut prev_meas_z = None;
    let mut hint = None;
    let mut rows = Vec::with_capacity(scenario.steps());
    let mut diverged = false;

    for k in 0..scenario.steps() {
        let t = k as f64 * scenario.ts;
        let meas = match scenario.noise_std {
            None => state,
            Some(std) => VehicleState::new(
                state.vx + std * gauss(&mut noise_rng),
                state.vy + std * gauss(&mut noise_rng),
                state.wr + std * gauss(&mut noise_rng),
            ),
        };
        let near = path.nearest(pose.x, pose.y, hint);
        hint = Some(near.index);
        let vx_ref = scenario.speed.at(t);
        let torque = p_longitudinal(vx_ref, meas.vx, setup.kp_long, vehicle.t_max);
        let window = path.window(near.s, vx_ref, scenario.ts, setup.mpc.np);

        let mut w_norm = 0.0;
        let solution = match setup.kind {
            ControllerKind::Lmpc => solve_lmpc(
                &bike, &pose, &meas, &window, torque, &u_prev, &setup.mpc,
                warm.as_deref(),
            ),
            ControllerKind::Dkmpc => solve_dkmpc(
                model.unwrap(), &pose, &meas, &window, torque, &u_prev, &setup.mpc,
                warm.as_deref(),
            ),
            ControllerKind::EsoDkmpc => {
                let model = model.unwrap();
                let z_meas = model.lift(&meas);
                let updated = match (est.take(), prev_meas_z.take()) {
                    (Some(prev_est), Some(prev_z)) => {
                        eso_step(model, gains.unwrap(), &prev_est, &prev_z, &u_prev)
                    }
                    _ => EsoState::from_measurement(&z_meas),
                };
                w_norm = updated.w_hat.norm();
                let sol = solve_eso_dkmpc(
                    model, &updated, &pose, &meas, &window, torque, &u_prev, &setup.mpc,
                    warm.as_deref(),
                );
                est = Some(updated);
                prev_meas_z = Some(z_meas);
                sol
            }
        };

        let (delta, solve_ms) = match &solution {
            Ok(sol) => {
                let mut shifted: Vec<f64> =
                    sol.delta_seq.iter().skip(1).cloned().collect();
                if let Some(last) = sol.delta_seq.last() {
                    shifted.push(*last);
                }
                warm = Some(shifted);
                (sol.delta, sol.solve_time_ms)
            }
            // Keep the previous command when a solve fails; the run is
            // only marked diverged if the plant itself leaves its envelope.
            Err(_) => {
                warm = None;
                (u_prev.delta_f, 0.0)
            }
        };
        let input = ControlInput::new(torque, delta);

        rows.push(TraceRow {
            t,
            x: pose.x,
            y: pose.y,
            theta: pose.theta,
            vx: state.vx,
            vy: state.vy,
            wr: state.wr,
            torque,
            delta_f: delta,
            x_r: near.x_r,
            y_r: near.y_r,
            theta_r: near.theta_r,
            e_y: near.e_y,
            d_phi: pose.theta - near.theta_r,
            w_norm,
            solve_ms,
        });

        match step_dynamics(&state, &input, scenario.mu, &plant_params, scenario.ts) {
            Ok(next) => {
                state = next;
                pose = step_pose(&pose, &state, scenario.ts);
                u_prev = input;
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }

    Ok(RunTrace {
        controller: setup.kind.name().to_string(),
        rows,
        diverged,
        ts: scenario.ts,
    })
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple and seeded.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Clone, Debug)]
pub struct ControllerMetrics {
    pub controller: String,
    pub ey_max: f64,
    pub ey_avg: f64,
    pub ey_rmse: f64,
    pub dphi_max: f64,
    pub dphi_avg: f64,
    pub dphi_rmse: f64,
    pub solve_ms_avg: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<ControllerMetrics>,
}

/// Max/Avg/RMSE of |e_Y| and |Δφ| plus mean solve time over a trace.
pub fn compute_metrics(trace: &RunTrace) -> Result<ControllerMetrics> {
    if trace.rows.is_empty() {
        return Err(Error::EmptyData("trace has no rows".into()));
    }
    let stats = |vals: &mut dyn Iterator<Item = f64>| -> (f64, f64, f64, usize) {
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for v in vals {
            let a = v.abs();
            max = max.max(a);
            sum += a;
            sum_sq += a * a;
            n += 1;
        }
        (max, sum, sum_sq, n)
    };
    let (ey_max, ey_sum, ey_sq, n) = stats(&mut trace.rows.iter().map(|r| r.e_y));
    let (dphi_max, dphi_sum, dphi_sq, _) = stats(&mut trace.rows.iter().map(|r| r.d_phi));
    let solve_avg = trace.rows.iter().map(|r| r.solve_ms).sum::<f64>() / n as f64;
    Ok(ControllerMetrics {
        controller: trace.controller.clone(),
        ey_max,
        ey_avg: ey_sum / n as f64,
        ey_rmse: (ey_sq / n as f64).sqrt(),
        dphi_max,
        dphi_avg: dphi_sum / n as f64,
        dphi_rmse: (dphi_sq / n as f64).sqrt(),
        solve_ms_avg: solve_avg,
        diverged: trace.diverged,
    })
}

/// Run every requested controller on the scenario, in order; divergence is
/// recorded in the controller's row rather than aborting the comparison.
pub fn compare(
    scenario: &Scenario,
    setups: &[ControllerSetup],
    vehicle: &VehicleParams,
    seed: u64,
) -> Result<(MetricsReport, Vec<RunTrace>)> {
    if setups.is_empty() {
        return Err(Error::EmptyData("no controllers requested".into()));
    }
    let mut report = MetricsReport::default();
    let mut traces = Vec::with_capacity(setups.len());
    for setup in setups {
        let trace = run_closed_loop(scenario, setup, vehicle, seed)?;
        report.rows.push(compute_metrics(&trace)?);
        traces.push(trace);
    }
    Ok((report, traces))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimingMode {
    /// Timing columns written as zero: byte-identical artifacts.
    Zeroed,
    /// Wall-clock solve times exported.
    Real,
}

pub const TRACE_CSV_HEADER: &str =
    "t,X,Y,theta,Vx,Vy,wr,T,delta_f,Xr,Yr,theta_r,eY,dphi,w_norm,solve_ms";
pub const METRICS_CSV_HEADER: &str =
    "controller,eY_max,eY_avg,eY_rmse,dphi_max,dphi_avg,dphi_rmse,solve_ms_avg,diverged";

pub fn trace_csv(trace: &RunTrace, timing: TimingMode) -> String {
    let mut out = String::with_capacity(trace.rows.len() * 160);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let solve = match timing {
            TimingMode::Zeroed => 0.0,
            TimingMode::Real => r.solve_ms,
        };
        let _ = writeln!(
            out,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.t, r.x, r.y, r.theta, r.vx, r.vy, r.wr, r.torque, r.delta_f,
            r.x_r, r.y_r, r.theta_r, r.e_y, r.d_phi, r.w_norm, solve
        );
    }
    out
}

pub fn metrics_csv(report: &MetricsReport, timing: TimingMode) -> String {
    let mut out = String::new();
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let solve = match timing {
            TimingMode::Zeroed => 0.0,
            TimingMode::Real => r.solve_ms_avg,
        };
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.controller, r.ey_max, r.ey_avg, r.ey_rmse, r.dphi_max, r.dphi_avg, r.dphi_rmse,
            solve, r.diverged
        );
    }
    out
}

pub fn write_trace_csv(trace: &RunTrace, path: &std::path::Path, timing: TimingMode) -> Result<()> {
    std::fs::write(path, trace_csv(trace, timing))?;
    Ok(())
}

pub fn write_metrics_csv(
    report: &MetricsReport,
    path: &std::path::Path,
    timing: TimingMode,
) -> Result<()> {
    std::fs::write(path, metrics_csv(report, timing))?;
    Ok(())
}

/// Built-in scenarios mirroring the two benchmark conditions. The course
/// layouts differ per test speed, like staged cone courses do: the
/// constant-speed run uses short blends that push the tires toward their
/// grip limit, the faster low-friction run uses longer blends that keep
/// the demanded lateral acceleration near (not hopelessly past) the
/// available friction.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let kmh = 1.0 / 3.6;
    match name {
        "dlc_highmu" => Some(Scenario {
            name: name.into(),
            mu: 0.85,
            mass_override: None,
            speed: SpeedProfile::Constant(35.0 * kmh),
            dlc: DlcGeometry {
                sections: [15.0, 15.0, 20.0, 16.0, 15.0],
                ..Default::default()
            },
            duration: 15.0,
            ts: 0.025,
            noise_std: None,
        }),
        "dlc_lowmu" => Some(Scenario {
            name: name.into(),
            mu: 0.5,
            mass_override: None,
            speed: SpeedProfile::Piecewise(vec![
                (0.0, 50.0 * kmh),
                (1.5, 45.0 * kmh),
                (6.5, 45.0 * kmh),
                (11.0, 55.0 * kmh),
                (13.0, 55.0 * kmh),
            ]),
            dlc: DlcGeometry {
                sections: [15.0, 22.0, 25.0, 24.0, 15.0],
                ..Default::default()
            },
            duration: 13.0,
            ts: 0.025,
            noise_std: None,
        }),
        _ => None,
    }
}
